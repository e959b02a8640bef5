//! The `factorial-ri` command line.
//!
//! Every subcommand is a pure function of its flags and input files: the same
//! invocation produces the same bytes. Exit codes are 0 on success, 2 for
//! validation errors, 3 when a verification check fails and 4 for I/O errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::assignment::{
    draw_assignment, draw_assignment_with, observe, GroupSizes, ObservedData, RNG_ALGORITHM,
};
use crate::design::{build_model_matrix, effect_labels, treatment_combinations, MAX_FACTORS};
use crate::error::Error;
use crate::estimators::{
    confidence_intervals, estimate_ols, estimate_ri, CovarianceKind, EffectEstimate, Interval,
};
use crate::io;
use crate::population::{population_effects, PotentialOutcomeTable};
use crate::stats::{matrix_rows, CompensatedMatrix, CompensatedSum, NORMAL_QUANTILE_ALGORITHM};
use crate::verify::{
    self, check_cov_equivalence, check_point_equivalence, run_oracle, CheckResult, FuzzConfig,
    GroupSizeSampler, OutcomeDistribution,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;
pub const EXIT_IO: i32 = 4;

const TOOL: &str = concat!("factorial-ri ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(
    name = "factorial-ri",
    version,
    about = "Randomization and regression inference for 2^K factorial designs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the model matrix H with effect and treatment labels
    Design {
        #[arg(long)]
        k: u32,
        #[arg(long, value_enum, default_value_t = DesignFormat::Table)]
        format: DesignFormat,
    },
    /// Draw a completely randomized assignment
    Assign {
        #[arg(long)]
        k: u32,
        /// Group sizes n1,...,n{2^K}
        #[arg(long)]
        n: String,
        #[arg(long)]
        seed: u64,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Estimate factorial effects and their covariances from observed data
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = CovSelection::All)]
        cov: CovSelection,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Monte Carlo randomization distribution for a potential-outcome table
    Simulate {
        #[arg(long)]
        pop: PathBuf,
        #[arg(long)]
        n: String,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Exact enumeration oracle for a potential-outcome table
    Oracle {
        #[arg(long)]
        pop: PathBuf,
        #[arg(long)]
        n: String,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check the estimator identities on fuzzed instances or a data file
    Verify {
        #[arg(long, conflicts_with = "input")]
        fuzz: bool,
        /// Observed-data CSV to check instead of fuzzing
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k_max: u32,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Draw outcomes from a continuous uniform instead of integers in [-9, 9]
        #[arg(long)]
        continuous: bool,
        /// Fuzz balanced designs with replicate counts drawn from this list, e.g. 2,3
        #[arg(long)]
        balanced: Option<String>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignFormat {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovSelection {
    Ney,
    Hw,
    He,
    All,
}

impl CovSelection {
    pub fn kinds(self) -> Vec<CovarianceKind> {
        match self {
            CovSelection::Ney => vec![CovarianceKind::Neymanian],
            CovSelection::Hw => vec![CovarianceKind::HuberWhite],
            CovSelection::He => vec![CovarianceKind::Homoscedastic],
            CovSelection::All => vec![
                CovarianceKind::Neymanian,
                CovarianceKind::HuberWhite,
                CovarianceKind::Homoscedastic,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VerifyMode {
    Fuzz(FuzzConfig),
    Input(PathBuf),
}

/// A validated command line.
#[derive(Debug, Clone, PartialEq)]
pub enum RunConfig {
    Design {
        k: u32,
        format: DesignFormat,
    },
    Assign {
        k: u32,
        sizes: GroupSizes,
        seed: u64,
        output: Option<PathBuf>,
    },
    Estimate {
        input: PathBuf,
        cov: CovSelection,
        alpha: f64,
        json: Option<PathBuf>,
    },
    Simulate {
        pop: PathBuf,
        sizes: GroupSizes,
        reps: usize,
        seed: u64,
        json: Option<PathBuf>,
    },
    Oracle {
        pop: PathBuf,
        sizes: GroupSizes,
        json: Option<PathBuf>,
    },
    Verify {
        mode: VerifyMode,
        json: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// `--help` or `--version`; not a failure.
    #[error("{0}")]
    Display(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Display(_) => EXIT_OK,
            CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Core(Error::Io { .. }) | CliError::Write { .. } => EXIT_IO,
            CliError::Core(_) => EXIT_VALIDATION,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn check_k(k: u32) -> Result<(), CliError> {
    if (1..=MAX_FACTORS).contains(&k) {
        Ok(())
    } else {
        Err(usage(format!("--k {k}: must be between 1 and {MAX_FACTORS}")))
    }
}

fn parse_sizes(raw: &str) -> Result<GroupSizes, CliError> {
    raw.parse::<GroupSizes>()
        .map_err(|e| usage(format!("--n {raw}: {e}")))
}

fn parse_size_list(raw: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("--n {raw}: '{}' is not a non-negative integer", p.trim())))
        })
        .collect()
}

/// Parses and validates `argv` (including the program name).
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::Display(e.to_string())
        }
        _ => CliError::Usage(e.to_string()),
    })?;
    Ok(match cli.command {
        Command::Design { k, format } => {
            check_k(k)?;
            RunConfig::Design { k, format }
        }
        Command::Assign { k, n, seed, output } => {
            check_k(k)?;
            let sizes = parse_size_list(&n)?;
            if sizes.len() != 1 << k {
                return Err(usage(format!(
                    "--n: n-vector length {} != 2^K = {}",
                    sizes.len(),
                    1usize << k
                )));
            }
            let sizes = GroupSizes::new(sizes).map_err(|e| usage(format!("--n {n}: {e}")))?;
            RunConfig::Assign {
                k,
                sizes,
                seed,
                output,
            }
        }
        Command::Estimate {
            input,
            cov,
            alpha,
            json,
        } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(usage(format!("--alpha {alpha}: must lie strictly between 0 and 1")));
            }
            RunConfig::Estimate {
                input,
                cov,
                alpha,
                json,
            }
        }
        Command::Simulate {
            pop,
            n,
            reps,
            seed,
            json,
        } => {
            if reps == 0 {
                return Err(usage("--reps: must be at least 1"));
            }
            RunConfig::Simulate {
                pop,
                sizes: parse_sizes(&n)?,
                reps,
                seed,
                json,
            }
        }
        Command::Oracle { pop, n, json } => RunConfig::Oracle {
            pop,
            sizes: parse_sizes(&n)?,
            json,
        },
        Command::Verify {
            fuzz,
            input,
            k_max,
            instances,
            seed,
            continuous,
            balanced,
            json,
        } => {
            let mode = match (fuzz, input) {
                (true, None) => {
                    if !(1..=FuzzConfig::K_MAX_LIMIT).contains(&k_max) {
                        return Err(usage(format!(
                            "--k-max {k_max}: must be between 1 and {}",
                            FuzzConfig::K_MAX_LIMIT
                        )));
                    }
                    let group_sizes = match balanced {
                        None => GroupSizeSampler::Unbalanced { min: 2, max: 6 },
                        Some(raw) => {
                            let replicates = raw
                                .split(',')
                                .map(|p| p.trim().parse::<usize>().ok().filter(|&r| r >= 2))
                                .collect::<Option<Vec<_>>>()
                                .ok_or_else(|| {
                                    usage(format!("--balanced {raw}: expected integers >= 2"))
                                })?;
                            GroupSizeSampler::Balanced { replicates }
                        }
                    };
                    VerifyMode::Fuzz(FuzzConfig {
                        k_max,
                        instances,
                        seed,
                        outcomes: if continuous {
                            OutcomeDistribution::Continuous
                        } else {
                            OutcomeDistribution::Integer
                        },
                        group_sizes,
                    })
                }
                (false, Some(path)) => VerifyMode::Input(path),
                _ => return Err(usage("verify: pass exactly one of --fuzz or --input")),
            };
            RunConfig::Verify { mode, json }
        }
    })
}

/// Result of a successful run: what to print and how to exit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub exit_code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self {
            stdout,
            stderr: String::new(),
            exit_code: EXIT_OK,
        }
    }
}

pub fn run(config: &RunConfig) -> Result<Outcome, CliError> {
    match config {
        RunConfig::Design { k, format } => run_design(*k, *format),
        RunConfig::Assign {
            k,
            sizes,
            seed,
            output,
        } => run_assign(*k, sizes, *seed, output.as_deref()),
        RunConfig::Estimate {
            input,
            cov,
            alpha,
            json,
        } => run_estimate(input, *cov, *alpha, json.as_deref()),
        RunConfig::Simulate {
            pop,
            sizes,
            reps,
            seed,
            json,
        } => run_simulate(pop, sizes, *reps, *seed, json.as_deref()),
        RunConfig::Oracle { pop, sizes, json } => run_oracle_cmd(pop, sizes, json.as_deref()),
        RunConfig::Verify { mode, json } => run_verify(mode, json.as_deref()),
    }
}

/// Parses, runs and maps every outcome to an exit code. Used by `main`.
pub fn main_with_args<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match parse_args(argv).and_then(|c| run(&c)) {
        Ok(outcome) => outcome,
        Err(CliError::Display(text)) => Outcome::ok(text),
        Err(e) => Outcome {
            stdout: String::new(),
            stderr: format!("error: {e}\n"),
            exit_code: e.exit_code(),
        },
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn run_design(k: u32, format: DesignFormat) -> Result<Outcome, CliError> {
    let h = build_model_matrix(k)?;
    let labels: Vec<String> = h.labels().iter().map(ToString::to_string).collect();
    let mut out = String::new();
    match format {
        DesignFormat::Csv => {
            out.push_str(&labels.join(","));
            out.push('\n');
            for j in 0..h.dim() {
                let row: Vec<String> = h.row(j).iter().map(ToString::to_string).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        DesignFormat::Table => {
            let width = labels.iter().map(String::len).max().unwrap_or(2).max(2);
            let row_width = format!("z{}", h.dim()).len();
            let _ = write!(out, "{:row_width$}", "");
            for l in &labels {
                let _ = write!(out, " {l:>width$}");
            }
            out.push('\n');
            for j in 0..h.dim() {
                let _ = write!(out, "{:row_width$}", format!("z{}", j + 1));
                for e in h.row(j) {
                    let _ = write!(out, " {e:>width$}");
                }
                out.push('\n');
            }
        }
        DesignFormat::Json => {
            let rows: Vec<&[i8]> = (0..h.dim()).map(|j| h.row(j)).collect();
            out = to_json(&json!({
                "k": k,
                "labels": labels,
                "treatment_combinations": treatment_combinations(k)?,
                "matrix": rows,
            }));
        }
    }
    Ok(Outcome::ok(out))
}

fn run_assign(
    k: u32,
    sizes: &GroupSizes,
    seed: u64,
    output: Option<&Path>,
) -> Result<Outcome, CliError> {
    let sizes = GroupSizes::for_design(k, sizes.as_slice().to_vec())?;
    let csv = io::write_assignment(&draw_assignment(&sizes, seed));
    match output {
        Some(path) => {
            write_file(path, &csv)?;
            Ok(Outcome::ok(String::new()))
        }
        None => Ok(Outcome::ok(csv)),
    }
}

fn size_warning(k: u32, n_units: usize, n_treatments: usize) -> String {
    if n_units < 2 * n_treatments {
        format!(
            "warning: N = {n_units} is below the recommended minimum 2^(K+1) = {} for K = {k}\n",
            2 * n_treatments
        )
    } else {
        String::new()
    }
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    tool: &'static str,
    k: u32,
    n_units: usize,
    group_sizes: GroupSizes,
    labels: Vec<String>,
    alpha: f64,
    effects: Vec<f64>,
    ols_effects: Vec<f64>,
    covariances: serde_json::Map<String, Value>,
    intervals: serde_json::Map<String, Value>,
    equivalence: Vec<CheckResult>,
    provenance: Provenance,
}

#[derive(Debug, Serialize)]
struct Provenance {
    normal_quantile: &'static str,
    xtx_inverse: &'static str,
    rng: Option<&'static str>,
}

fn render_intervals(out: &mut String, kind: CovarianceKind, intervals: &[Interval], alpha: f64) {
    let level = 100.0 * (1.0 - alpha);
    let note = if kind.is_conservative() {
        " (conservative)"
    } else {
        ""
    };
    let _ = writeln!(out, "\n[{}]{note} {level}% normal intervals", kind.name());
    let _ = writeln!(
        out,
        "{:>8} {:>14} {:>14} {:>14} {:>14}",
        "effect", "estimate", "std.error", "lower", "upper"
    );
    for i in intervals {
        let _ = writeln!(
            out,
            "{:>8} {:>14.6} {:>14.6} {:>14.6} {:>14.6}",
            i.label.to_string(),
            i.point,
            i.std_error,
            i.lower,
            i.upper
        );
    }
}

fn run_estimate(
    input: &Path,
    cov: CovSelection,
    alpha: f64,
    json_path: Option<&Path>,
) -> Result<Outcome, CliError> {
    let obs = io::read_observed(input)?;
    let ri = estimate_ri(&obs)?;
    let labels: Vec<String> = effect_labels(obs.k())?.iter().map(ToString::to_string).collect();

    let mut estimates: Vec<EffectEstimate> = Vec::new();
    for kind in cov.kinds() {
        estimates.push(match kind {
            CovarianceKind::Neymanian => ri.clone(),
            other => estimate_ols(&obs, other)?,
        });
    }
    let ols_effects = estimate_ols(&obs, CovarianceKind::HuberWhite)?.effects;
    let equivalence = vec![
        check_point_equivalence(&obs, verify::POINT_TOLERANCE)?,
        check_cov_equivalence(&obs, verify::COVARIANCE_TOLERANCE)?,
    ];

    let mut covariances = serde_json::Map::new();
    let mut intervals = serde_json::Map::new();
    let mut text = format!(
        "2^{} factorial design: N = {}, group sizes {}\n",
        obs.k(),
        obs.n_units(),
        ri.group_sizes
    );
    for est in &estimates {
        let ci = confidence_intervals(est, alpha)?;
        render_intervals(&mut text, est.covariance_kind, &ci, alpha);
        covariances.insert(
            est.covariance_kind.name().to_owned(),
            json!(matrix_rows(&est.covariance)),
        );
        intervals.insert(est.covariance_kind.name().to_owned(), json!(ci));
    }
    text.push('\n');
    for c in &equivalence {
        let _ = writeln!(
            text,
            "{}: max abs discrepancy {:.3e} (tolerance {:.0e}) {}",
            c.name,
            c.discrepancy,
            c.tolerance,
            if c.pass { "ok" } else { "FAILED" }
        );
    }

    let report = EstimateReport {
        tool: TOOL,
        k: obs.k(),
        n_units: obs.n_units(),
        group_sizes: ri.group_sizes.clone(),
        labels,
        alpha,
        effects: ri.effects.clone(),
        ols_effects,
        covariances,
        intervals,
        equivalence,
        provenance: Provenance {
            normal_quantile: NORMAL_QUANTILE_ALGORITHM,
            xtx_inverse: "closed form from the model-matrix eigenstructure",
            rng: None,
        },
    };
    if let Some(path) = json_path {
        write_file(path, &to_json(&report))?;
    }
    Ok(Outcome {
        stdout: text,
        stderr: size_warning(obs.k(), obs.n_units(), obs.n_treatments()),
        exit_code: EXIT_OK,
    })
}

#[derive(Debug, Serialize)]
pub struct SimulationReport {
    pub tool: &'static str,
    pub rng: &'static str,
    pub seed: u64,
    pub reps: usize,
    pub k: u32,
    pub n_units: usize,
    pub group_sizes: GroupSizes,
    pub labels: Vec<String>,
    pub population_effects: Vec<f64>,
    pub mean_effects: Vec<f64>,
    /// Standard deviation of the draws over `sqrt(reps)`; absent when `reps = 1`.
    pub monte_carlo_standard_errors: Option<Vec<f64>>,
    /// Covariance of the draws with divisor `reps - 1`; absent when `reps = 1`.
    pub empirical_covariance: Option<Vec<Vec<f64>>>,
    pub mean_neymanian_covariance: Vec<Vec<f64>>,
}

/// Monte Carlo companion to the exact oracle.
pub fn simulate(
    table: &PotentialOutcomeTable,
    sizes: &GroupSizes,
    reps: usize,
    seed: u64,
) -> Result<SimulationReport, Error> {
    if sizes.len() != table.n_treatments() || sizes.total() != table.n_units() {
        return Err(Error::GroupSizes(format!(
            "group sizes {sizes} do not match a table with 2^K = {} treatments and N = {} units",
            table.n_treatments(),
            table.n_units()
        )));
    }
    let d = table.n_treatments();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(reps);
    let mut ney = CompensatedMatrix::zeros(d, d);
    for _ in 0..reps {
        let obs: ObservedData = observe(table, &draw_assignment_with(sizes, &mut rng))?;
        let est = estimate_ri(&obs)?;
        ney.add(&est.covariance);
        draws.push(est.effects);
    }
    let n = reps as f64;
    let mean: Vec<f64> = (0..d)
        .map(|c| draws.iter().map(|t| t[c]).collect::<CompensatedSum>().value() / n)
        .collect();
    let (se, cov) = if reps > 1 {
        let mut spread = CompensatedMatrix::zeros(d, d);
        for t in &draws {
            let centred: Vec<f64> = t.iter().zip(&mean).map(|(x, m)| x - m).collect();
            spread.add_outer(&centred);
        }
        let cov: DMatrix<f64> = spread.scaled(1.0 / (n - 1.0));
        let se = cov.diagonal().iter().map(|v| (v / n).sqrt()).collect();
        (Some(se), Some(matrix_rows(&cov)))
    } else {
        (None, None)
    };
    Ok(SimulationReport {
        tool: TOOL,
        rng: RNG_ALGORITHM,
        seed,
        reps,
        k: table.k(),
        n_units: table.n_units(),
        group_sizes: sizes.clone(),
        labels: effect_labels(table.k())?.iter().map(ToString::to_string).collect(),
        population_effects: population_effects(table).values,
        mean_effects: mean,
        monte_carlo_standard_errors: se,
        empirical_covariance: cov,
        mean_neymanian_covariance: matrix_rows(&ney.scaled(1.0 / n)),
    })
}

fn run_simulate(
    pop: &Path,
    sizes: &GroupSizes,
    reps: usize,
    seed: u64,
    json_path: Option<&Path>,
) -> Result<Outcome, CliError> {
    let table = io::read_potential_outcomes(pop)?;
    let report = simulate(&table, sizes, reps, seed)?;
    let mut text = format!(
        "{} draws (seed {seed}), N = {}, group sizes {}\n{:>8} {:>14} {:>14} {:>14}\n",
        reps, report.n_units, report.group_sizes, "effect", "population", "mean", "mc.se"
    );
    for (c, label) in report.labels.iter().enumerate() {
        let se = report
            .monte_carlo_standard_errors
            .as_ref()
            .map_or_else(|| "-".to_owned(), |s| format!("{:.6}", s[c]));
        let _ = writeln!(
            text,
            "{label:>8} {:>14.6} {:>14.6} {se:>14}",
            report.population_effects[c], report.mean_effects[c]
        );
    }
    if let Some(path) = json_path {
        write_file(path, &to_json(&report))?;
    }
    Ok(Outcome {
        stdout: text,
        stderr: size_warning(table.k(), table.n_units(), table.n_treatments()),
        exit_code: EXIT_OK,
    })
}

fn render_checks(out: &mut String, checks: &[CheckResult]) {
    for c in checks {
        let _ = writeln!(
            out,
            "{:<34} {:>12.3e}  tol {:>8.0e}  {}",
            c.name,
            c.discrepancy,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
}

fn failure_outcome(text: String, failures: Value) -> Outcome {
    Outcome {
        stdout: text,
        stderr: to_json(&json!({ "failures": failures })),
        exit_code: EXIT_CHECK_FAILED,
    }
}

fn run_oracle_cmd(
    pop: &Path,
    sizes: &GroupSizes,
    json_path: Option<&Path>,
) -> Result<Outcome, CliError> {
    let table = io::read_potential_outcomes(pop)?;
    let report = run_oracle(&table, sizes)?;
    let mut text = format!(
        "exact oracle over {} assignments (N = {}, group sizes {})\n",
        report.assignment_count, report.n_units, report.group_sizes
    );
    render_checks(&mut text, &report.discrepancies);
    if let Some(path) = json_path {
        write_file(path, &to_json(&report))?;
    }
    if report.passed() {
        Ok(Outcome::ok(text))
    } else {
        let failed: Vec<&CheckResult> = report.discrepancies.iter().filter(|c| !c.pass).collect();
        Ok(failure_outcome(text, json!(failed)))
    }
}

fn run_verify(mode: &VerifyMode, json_path: Option<&Path>) -> Result<Outcome, CliError> {
    let (text, json_text, passed, failures) = match mode {
        VerifyMode::Fuzz(config) => {
            let report = verify::fuzz_suite(config)?;
            let mut text = format!(
                "{} fuzzed instances (k_max {}, seed {})\n",
                config.instances, config.k_max, config.seed
            );
            render_checks(&mut text, &report.report.checks);
            (
                text,
                to_json(&report),
                report.passed,
                json!(report.report.failures),
            )
        }
        VerifyMode::Input(path) => {
            let obs = io::read_observed(path)?;
            let report = verify::verify_observed(&obs)?;
            let mut text = format!("{}: N = {}\n", path.display(), obs.n_units());
            render_checks(&mut text, &report.checks);
            (
                text,
                to_json(&report),
                report.passed(),
                json!(report.failures),
            )
        }
    };
    if let Some(path) = json_path {
        write_file(path, &json_text)?;
    }
    if passed {
        Ok(Outcome::ok(text))
    } else {
        Ok(failure_outcome(text, failures))
    }
}
