//! Balancing nonnegative tensors against prescribed margin totals with the
//! multidimensional RAS method, plus the input-output analysis around it.
//!
//! The modules build on each other:
//!
//! * [`tensor`]: dense D-dimensional arrays and their margins.
//! * [`balance`]: the iterative proportional adjustment engine.
//! * [`io_analysis`]: input-output tables, technical coefficients, Leontief inverse.
//! * [`metrics`]: Frobenius distances and relative-deviation reports.
//! * [`ingest`]: CSV and JSON file formats.
//! * [`cli`]: the `mdras` command line.

pub mod balance;
pub mod cli;
pub mod ingest;
pub mod io_analysis;
pub mod metrics;
pub mod tensor;

pub use balance::{
    balance, classical_ras, BalanceConfig, BalanceError, BalanceResult, OrderPolicy,
    TerminationMode, TerminationReason,
};
pub use tensor::{Dim, MarginSet, Tensor, TensorError};
