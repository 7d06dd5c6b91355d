//! Command-line front end.
//!
//! Exit codes: 0 success, 1 input or validation error, 2 not converged
//! (solution still written), 3 infeasible problem.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::balance::{
    balance, check_margin_compatibility, BalanceConfig, BalanceError, OrderPolicy,
    TerminationMode, TerminationReason,
};
use crate::ingest::{self, IngestError};
use crate::io_analysis::{
    leontief_inverse, predict_resources, technical_coefficients, AnalysisError,
    CoefficientMatrix, CoefficientMode, IOTable, SpectralWarning,
};
use crate::metrics::{distance_matrix, relative_deviation, DeviationOptions, ZeroPolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mdras", version, about = "Multidimensional RAS balancing and input-output analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Balance a tensor against its margin totals.
    Balance(BalanceArgs),
    /// Check that a margin set is mutually consistent.
    CheckMargins(CheckArgs),
    /// Pairwise Frobenius distances between tables.
    Compare(CompareArgs),
    /// Cellwise relative deviations of an estimate from a reference.
    Deviations(DeviationArgs),
    /// Leontief inverse of a coefficient matrix or an input-output table.
    Leontief(LeontiefArgs),
    /// Total resources predicted from final demand, p = L v1.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Any,
    Iterations,
    Delta,
    Margin,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    /// Initial tensor, long-format CSV.
    #[arg(long)]
    pub tensor: PathBuf,
    /// Margin manifest (JSON).
    #[arg(long)]
    pub margins: PathBuf,
    /// Where to write the balanced tensor.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the diagnostics JSON here.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Frobenius change threshold between sweeps; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Quadratic margin residual threshold; 0 disables.
    #[arg(long, default_value_t = 1e-8)]
    pub margin_tol: f64,
    /// `ascending`, `random`, or a comma-separated permutation such as `2,0,1`.
    #[arg(long, default_value = "ascending")]
    pub order: String,
    /// Seed for `--order random`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Any)]
    pub mode: ModeArg,
    /// Margin compatibility tolerance relative to the largest margin total.
    #[arg(long, default_value_t = 1e-6)]
    pub compat_tol: f64,
    /// Leave wall time out of the diagnostics so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub margins: PathBuf,
    /// Tensor whose labels the margins are aligned to.
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    /// Tolerance relative to the largest margin total.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Tables to compare, long-format CSV.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Display names, one per file; defaults to file stems.
    #[arg(long = "name")]
    pub names: Vec<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ZeroPolicyArg {
    FlagAll,
    BothZero,
}

#[derive(Debug, Args)]
pub struct DeviationArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub estimate: PathBuf,
    /// Write the deviation grid here as long-format CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ZeroPolicyArg::FlagAll)]
    pub zero_policy: ZeroPolicyArg,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.1, 1.0])]
    pub thresholds: Vec<f64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DenominatorArg {
    TotalOutput,
    RowTotal,
}

impl From<DenominatorArg> for CoefficientMode {
    fn from(d: DenominatorArg) -> Self {
        match d {
            DenominatorArg::TotalOutput => CoefficientMode::TotalOutput,
            DenominatorArg::RowTotal => CoefficientMode::RowTotal,
        }
    }
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Intermediate flows, long-format CSV.
    #[arg(long, requires = "vectors")]
    pub flows: Option<PathBuf>,
    /// Border vectors: industry, p, v1, v2 and optional u1, u2.
    #[arg(long, requires = "flows")]
    pub vectors: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DenominatorArg::TotalOutput)]
    pub denominator: DenominatorArg,
}

#[derive(Debug, Args)]
pub struct LeontiefArgs {
    /// Technical coefficient matrix, long-format CSV.
    #[arg(long, conflicts_with = "flows", required_unless_present = "flows")]
    pub coefficients: Option<PathBuf>,
    #[command(flatten)]
    pub table: TableArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Leontief inverse, long-format CSV.
    #[arg(long, requires = "final_demand", conflicts_with = "flows", required_unless_present = "flows")]
    pub inverse: Option<PathBuf>,
    /// Final demand vector, long-format CSV.
    #[arg(long, requires = "inverse")]
    pub final_demand: Option<PathBuf>,
    #[command(flatten)]
    pub table: TableArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::input(e.to_string())
    }
}

impl From<BalanceError> for Failure {
    fn from(e: BalanceError) -> Self {
        let code = match e {
            BalanceError::ZeroFiberPositiveMargin { .. } => EXIT_INFEASIBLE,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        let code = match e {
            AnalysisError::SingularMatrix { .. } => EXIT_INFEASIBLE,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<crate::tensor::TensorError> for Failure {
    fn from(e: crate::tensor::TensorError) -> Self {
        Failure::input(e.to_string())
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::input(format!("writing output: {e}")))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            if is_help {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let _ = write!(stderr, "{e}");
            return EXIT_INPUT;
        }
    };
    let outcome = match cli.command {
        Command::Balance(args) => cmd_balance(&args, stdout),
        Command::CheckMargins(args) => cmd_check_margins(&args, stdout),
        Command::Compare(args) => cmd_compare(&args, stdout),
        Command::Deviations(args) => cmd_deviations(&args, stdout),
        Command::Leontief(args) => cmd_leontief(&args, stdout),
        Command::Predict(args) => cmd_predict(&args, stdout),
    };
    match outcome {
        Ok(code) => code,
        Err(failure) => {
            let _ = writeln!(stderr, "error: {}", failure.message);
            failure.code
        }
    }
}

pub fn parse_order(order: &str, seed: u64) -> Result<OrderPolicy, Failure> {
    match order {
        "ascending" => Ok(OrderPolicy::FixedAscending),
        "random" => Ok(OrderPolicy::RandomPerIteration(seed)),
        custom => custom
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map(OrderPolicy::FixedCustom)
            .map_err(|_| Failure::input(format!("unrecognized --order `{custom}`"))),
    }
}

/// Diagnostics written by `balance`.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub termination_reason: TerminationReason,
    pub iterations: usize,
    pub final_delta: f64,
    pub final_margin_residual: f64,
    pub max_iterations: usize,
    pub delta_threshold: f64,
    pub margin_threshold: f64,
    pub order: OrderPolicy,
    pub termination_mode: TerminationMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}

pub fn cmd_balance(args: &BalanceArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let start = Instant::now();
    let tensor = ingest::read_tensor(&args.tensor)?;
    let margins = ingest::read_margins_for(&args.margins, tensor.dims())?;
    let config = BalanceConfig {
        max_iterations: args.max_iter,
        delta_threshold: args.delta,
        margin_threshold: args.margin_tol,
        order_policy: parse_order(&args.order, args.seed)?,
        termination_mode: match args.mode {
            ModeArg::Any => TerminationMode::Any,
            ModeArg::Iterations => TerminationMode::Iterations,
            ModeArg::Delta => TerminationMode::Delta,
            ModeArg::Margin => TerminationMode::MarginResidual,
        },
        compatibility_tolerance: args.compat_tol,
    };
    let result = balance(&tensor, &margins, &config)?;
    ingest::write_tensor(&result.solution, &args.out)?;
    let diagnostics = Diagnostics {
        converged: result.converged,
        termination_reason: result.termination_reason,
        iterations: result.iterations_run,
        final_delta: result.final_delta,
        final_margin_residual: result.final_margin_residual,
        max_iterations: config.max_iterations,
        delta_threshold: config.delta_threshold,
        margin_threshold: config.margin_threshold,
        order: config.order_policy.clone(),
        termination_mode: config.termination_mode,
        wall_time_seconds: (!args.no_timing).then(|| start.elapsed().as_secs_f64()),
    };
    let json = to_json(&diagnostics);
    if let Some(path) = &args.diagnostics {
        std::fs::write(path, &json)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    }
    if args.json {
        write_out(stdout, &json)?;
    } else {
        write_out(
            stdout,
            &format!(
                "{} after {} sweep(s) ({})\nmargin residual  {:.6e}\nlast change      {:.6e}\nsolution written to {}\n",
                if result.converged { "converged" } else { "NOT converged" },
                result.iterations_run,
                result.termination_reason,
                result.final_margin_residual,
                result.final_delta,
                args.out.display()
            ),
        )?;
    }
    Ok(if result.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

#[derive(Serialize)]
struct CheckReport<'a> {
    compatible: bool,
    tolerance: f64,
    violations: &'a [crate::balance::MarginViolation],
}

pub fn cmd_check_margins(args: &CheckArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let margins = match &args.tensor {
        Some(path) => ingest::read_margins_for(&args.margins, ingest::read_tensor(path)?.dims())?,
        None => ingest::read_margins(&args.margins)?,
    };
    let tolerance = args.tol * margins.max_total();
    let violations = check_margin_compatibility(&margins, tolerance);
    if args.json {
        write_out(
            stdout,
            &to_json(&CheckReport {
                compatible: violations.is_empty(),
                tolerance,
                violations: &violations,
            }),
        )?;
    } else if violations.is_empty() {
        write_out(stdout, "margins are compatible\n")?;
    } else {
        let mut text = format!("{} violation(s):\n", violations.len());
        for v in &violations {
            text.push_str(&format!(
                "  margins {} and {} at {:?}: {:.6} vs {:.6}\n",
                v.d, v.e, v.index, v.lhs, v.rhs
            ));
        }
        write_out(stdout, &text)?;
    }
    Ok(if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_INPUT
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn cmd_compare(args: &CompareArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    if !args.names.is_empty() && args.names.len() != args.files.len() {
        return Err(Failure::input(format!(
            "{} names given for {} files",
            args.names.len(),
            args.files.len()
        )));
    }
    let mut tables = Vec::with_capacity(args.files.len());
    for (i, path) in args.files.iter().enumerate() {
        let name = args.names.get(i).cloned().unwrap_or_else(|| stem(path));
        tables.push((name, ingest::read_tensor(path)?));
    }
    let matrix = distance_matrix(&tables)?;
    if args.json {
        write_out(stdout, &to_json(&matrix))?;
    } else {
        write_out(stdout, &matrix.render(6))?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct DeviationJson<'a> {
    reference: &'a str,
    estimate: &'a str,
    zero_policy: ZeroPolicy,
    summary: &'a crate::metrics::DeviationSummary,
}

pub fn cmd_deviations(args: &DeviationArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let reference = ingest::read_tensor(&args.reference)?;
    let estimate = ingest::read_tensor(&args.estimate)?.align_labels(reference.dims())
        .map_err(|e| Failure::input(format!("{}: {e}", args.estimate.display())))?;
    let options = DeviationOptions {
        zero_policy: match args.zero_policy {
            ZeroPolicyArg::FlagAll => ZeroPolicy::FlagAll,
            ZeroPolicyArg::BothZero => ZeroPolicy::ZeroIfBothZero,
        },
        thresholds: args.thresholds.clone(),
    };
    let report = relative_deviation(&reference, &estimate, &options)?
        .named(stem(&args.reference), stem(&args.estimate));
    if let Some(path) = &args.out {
        let file = std::fs::File::create(path)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        ingest::write_grid(&report.dims, &report.values, "relative_deviation", file)?;
    }
    if args.json {
        write_out(
            stdout,
            &to_json(&DeviationJson {
                reference: &report.reference_name,
                estimate: &report.estimate_name,
                zero_policy: report.zero_policy,
                summary: &report.summary,
            }),
        )?;
    } else {
        let s = &report.summary;
        let mut text = format!(
            "{} vs {}\nmax |relative deviation|   {:.6}\nmean |relative deviation|  {:.6}\nfrobenius of difference    {:.6}\nflagged cells              {}\n",
            report.estimate_name,
            report.reference_name,
            s.max_abs_relative,
            s.mean_abs_relative,
            s.frobenius_of_difference,
            s.flagged_cells
        );
        for t in &s.exceeding {
            text.push_str(&format!("cells above {:<14.6} {}\n", t.threshold, t.count));
        }
        write_out(stdout, &text)?;
    }
    Ok(EXIT_OK)
}

fn load_table(table: &TableArgs) -> Result<Option<IOTable>, Failure> {
    match (&table.flows, &table.vectors) {
        (Some(flows), Some(vectors)) => Ok(Some(ingest::read_io_table(flows, vectors)?)),
        _ => Ok(None),
    }
}

fn coefficients(coefficients: &Option<PathBuf>, table: &TableArgs) -> Result<(CoefficientMatrix, Option<IOTable>), Failure> {
    if let Some(path) = coefficients {
        return Ok((CoefficientMatrix::new(ingest::read_tensor(path)?)?, None));
    }
    let table_data = load_table(table)?.ok_or_else(|| Failure::input("need --flows and --vectors"))?;
    let a = technical_coefficients(&table_data, table.denominator.into())?;
    Ok((a, Some(table_data)))
}

fn render_matrix(n: usize, row_major: &[f64]) -> String {
    let mut text = String::new();
    for row in row_major.chunks(n) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>14.6}")).collect();
        text.push_str(&cells.join(" "));
        text.push('\n');
    }
    text
}

#[derive(Serialize)]
struct LeontiefJson<'a> {
    rcond: f64,
    warnings: &'a [SpectralWarning],
    matrix: Vec<Vec<f64>>,
}

pub fn cmd_leontief(args: &LeontiefArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let (a, _) = coefficients(&args.coefficients, &args.table)?;
    let l = leontief_inverse(&a)?;
    let n = l.size();
    let values = l.row_major();
    if let Some(path) = &args.out {
        let file = std::fs::File::create(path)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        ingest::write_grid(a.tensor().dims(), &values, ingest::VALUE_COLUMN, file)?;
    }
    if args.json {
        write_out(
            stdout,
            &to_json(&LeontiefJson {
                rcond: l.rcond,
                warnings: &l.warnings,
                matrix: values.chunks(n).map(<[f64]>::to_vec).collect(),
            }),
        )?;
    } else {
        let mut text = render_matrix(n, &values);
        for w in &l.warnings {
            text.push_str(&format!("warning: {w:?}\n"));
        }
        write_out(stdout, &text)?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PredictJson<'a> {
    labels: Vec<String>,
    p: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    max_relative_gap_to_table: Option<f64>,
}

pub fn cmd_predict(args: &PredictArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let (p, dim, table) = match (&args.inverse, &args.final_demand) {
        (Some(inverse), Some(demand)) => {
            let l = ingest::read_tensor(inverse)?;
            let v1 = ingest::read_tensor(demand)?;
            if v1.ndim() != 1 {
                return Err(Failure::input("final demand must be one-dimensional"));
            }
            let p = predict_resources(&l, v1.values())?;
            (p, v1.dims()[0].clone(), None)
        }
        _ => {
            let (a, table) = coefficients(&None, &args.table)?;
            let table = table.expect("loaded from flows");
            let p = leontief_inverse(&a)?.predict(table.v1())?;
            (p, table.flows().dims()[0].clone(), Some(table))
        }
    };
    let gap = table.as_ref().map(|t| {
        p.iter()
            .zip(t.p())
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max)
    });
    if let Some(path) = &args.out {
        let file = std::fs::File::create(path)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        ingest::write_grid(std::slice::from_ref(&dim), &p, ingest::VALUE_COLUMN, file)?;
    }
    if args.json {
        write_out(
            stdout,
            &to_json(&PredictJson {
                labels: (0..dim.size).map(|i| dim.label(i)).collect(),
                p: &p,
                max_relative_gap_to_table: gap,
            }),
        )?;
    } else {
        let mut text = String::new();
        for (i, v) in p.iter().enumerate() {
            text.push_str(&format!("{:<16} {v:.6}\n", dim.label(i)));
        }
        if let Some(gap) = gap {
            text.push_str(&format!("max relative gap to table p: {gap:.6e}\n"));
        }
        write_out(stdout, &text)?;
    }
    Ok(EXIT_OK)
}
