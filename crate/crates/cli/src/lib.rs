//! Command-line front end: argument parsing, configuration overrides, run
//! directories with manifests, and export of plot-ready tables.
//!
//! Every subcommand writes into a fresh run directory holding the resolved
//! `config.toml`, its result tables, a `summary.txt` and a `manifest.json`
//! with SHA-256 digests. `replay` re-runs a directory from its manifest and
//! compares digests.

mod commands;
mod export;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use repmarket::Config;

pub use export::ExportWhat;

/// Exit status for usage, configuration and missing-input errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for numeric failures and an exceeded abort ceiling.
pub const EXIT_NUMERIC: i32 = 3;
/// Exit status when a replay does not reproduce the stored files.
pub const EXIT_MISMATCH: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] repmarket::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("replay mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use repmarket::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Mismatch(_) => EXIT_MISMATCH,
            CliError::Core(E::Config(_) | E::Parse { .. } | E::MissingArtifact(_)) => EXIT_USAGE,
            CliError::Core(E::Numeric { .. } | E::AbortCeiling { .. }) => EXIT_NUMERIC,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "repmarket", version, about = "Representation-homogeneity market simulator and experiment harness")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override `experiment.reps`.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Output directory; defaults to `<out-root>/<command>-<seed>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, global = true, env = "REPMARKET_OUT", default_value = "runs")]
    pub out_root: PathBuf,
    /// Replace an existing run directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads for replications; 0 uses every core.
    #[arg(long, short = 'j', global = true, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate one replication and write its full time series.
    Simulate(RepArgs),
    /// Fit the pricing block by simulated method of moments.
    Calibrate(CalibrateArgs),
    /// Run the 2x2x2 heterogeneity factorial.
    Factorial,
    /// Scan the representation spread from wide to tight.
    Scan(ScanArgs),
    /// Estimate the critical homogeneity level from a scan.
    Threshold(ThresholdArgs),
    /// Forecast-matched comparison of representation distance.
    Matched(MatchedArgs),
    /// Representation convergence under drift toward a benchmark.
    Converge(ConvergeArgs),
    /// Negative controls.
    Controls,
    /// Extreme cells under heavy tails, asynchronous updates and a moving benchmark.
    Stress,
    /// Pairwise homogeneity metrics of one simulated population.
    Metrics(MetricsArgs),
    /// Long-format plot-ready tables from an existing run directory.
    Export(ExportArgs),
    /// Re-run a directory from its manifest and compare digests.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Calibrate(_) => "calibrate",
            Command::Factorial => "factorial",
            Command::Scan(_) => "scan",
            Command::Threshold(_) => "threshold",
            Command::Matched(_) => "matched",
            Command::Converge(_) => "converge",
            Command::Controls => "controls",
            Command::Stress => "stress",
            Command::Metrics(_) => "metrics",
            Command::Export(_) => "export",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RepArgs {
    /// Replication index.
    #[arg(long, default_value_t = 0)]
    pub rep: u32,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// Target moment table; synthetic targets from `calibration.target_theta` when omitted.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Write the synthetic targets and stop.
    #[arg(long, conflicts_with = "targets")]
    pub targets_only: bool,
    /// Sobol points in the global stage.
    #[arg(long)]
    pub sobol: Option<usize>,
    /// Best Sobol points refined by Nelder-Mead.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Bootstrap re-estimations for the intervals; 0 skips them.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Objective evaluations per local search.
    #[arg(long)]
    pub local_evals: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Heterogeneous,
    Uniform,
}

#[derive(Debug, Clone, Args)]
pub struct ScanArgs {
    /// Grid points; `experiment.scan_points` when omitted.
    #[arg(long)]
    pub points: Option<usize>,
    /// Risk-aversion and learning-rate spreads along the scan.
    #[arg(long, value_enum, default_value_t = ModeArg::Heterogeneous)]
    pub mode: ModeArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Segmented,
    Spline,
    Event,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    /// Scan run directory or per-replication scan table.
    #[arg(long)]
    pub input: PathBuf,
    /// Estimator, or all three.
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    pub method: MethodArg,
    /// Outcome column to analyse.
    #[arg(long, default_value = "crash_freq")]
    pub outcome: String,
    /// Event level as a multiple of the widest-spread mean; `experiment.event_multiple` when omitted.
    #[arg(long)]
    pub event_multiple: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Random,
    Compensating,
}

#[derive(Debug, Clone, Args)]
pub struct MatchedArgs {
    /// How candidate spreads are drawn.
    #[arg(long, value_enum, default_value_t = PoolArg::Compensating)]
    pub pool: PoolArg,
    /// Candidate populations; `experiment.n_candidates` when omitted.
    #[arg(long)]
    pub candidates: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergeArgs {
    /// Total steps; `experiment.convergence_steps` when omitted.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Comma-separated drift speeds; `experiment.convergence_nu` when omitted.
    #[arg(long, value_delimiter = ',')]
    pub nu: Vec<f64>,
    /// Record the first time the mean distance falls below this level.
    #[arg(long)]
    pub d_crit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Empirical,
    Grid,
    Stress,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    /// Replication index.
    #[arg(long, default_value_t = 0)]
    pub rep: u32,
    /// Reference measure over market states.
    #[arg(long, value_enum, default_value_t = MeasureArg::Empirical)]
    pub measure: MeasureArg,
    /// Also compute permutation-aligned representation distances.
    #[arg(long)]
    pub aligned: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// Run directory to export from.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum)]
    pub what: ExportWhat,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub run: PathBuf,
}

/// Flags that select where or how a run executes rather than what it computes.
const PLACEMENT_FLAGS: [&str; 6] = ["--config", "--out", "--out-root", "--jobs", "-j", "--force"];
/// Flags whose values are paths to inputs.
const PATH_FLAGS: [&str; 3] = ["--input", "--targets", "--run"];

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let raw: Vec<String> = argv.iter().skip(1).map(|s| s.to_string_lossy().into_owned()).collect();
    match run(&cli, &raw) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command. `raw` is the argument list without the program
/// name, used to record the reproducing arguments in the manifest.
pub fn run(cli: &Cli, raw: &[String]) -> Result<String, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cli.global.jobs > 0 {
        builder = builder.num_threads(cli.global.jobs);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Replay(a) => commands::replay(&a.run),
        _ => {
            let cfg = load_config(&cli.global)?;
            let args = replay_args(cli.command.name(), raw)?;
            commands::execute(cli, &cfg, args)
        }
    })
}

/// Loads the configuration and applies command-line overrides.
pub fn load_config(g: &GlobalArgs) -> Result<Config, CliError> {
    let mut cfg = match &g.config {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Usage(format!("configuration file {} not found", p.display())));
            }
            Config::load(p)?
        }
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg.run.seed = s;
    }
    if let Some(r) = g.reps {
        cfg.experiment.reps = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Default run directory for a command.
pub fn default_out(g: &GlobalArgs, command: &str, seed: u64) -> PathBuf {
    g.out.clone().unwrap_or_else(|| g.out_root.join(format!("{command}-{seed}")))
}

/// Arguments that reproduce a run from its stored configuration: placement
/// flags dropped, the subcommand name removed, input paths made absolute.
fn replay_args(command: &str, raw: &[String]) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    let mut seen_command = false;
    let mut i = 0;
    while i < raw.len() {
        let tok = &raw[i];
        let (flag, inline) = match tok.split_once('=') {
            Some((f, v)) if f.starts_with("--") => (f, Some(v.to_string())),
            _ => (tok.as_str(), None),
        };
        if flag == "--force" {
            i += 1;
            continue;
        }
        if PLACEMENT_FLAGS.contains(&flag) {
            i += if inline.is_some() { 1 } else { 2 };
            continue;
        }
        if PATH_FLAGS.contains(&flag) {
            let v = match inline {
                Some(v) => v,
                None => raw.get(i + 1).cloned().unwrap_or_default(),
            };
            out.push(flag.to_string());
            out.push(absolute(Path::new(&v))?.display().to_string());
            i += if tok.contains('=') { 1 } else { 2 };
            continue;
        }
        if !seen_command && tok == command {
            seen_command = true;
            i += 1;
            continue;
        }
        out.push(tok.clone());
        i += 1;
    }
    Ok(out)
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    if p.exists() {
        Ok(p.canonicalize()?)
    } else if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn replay_args_drop_placement_flags() {
        let raw = strs(&["--config", "a.toml", "scan", "--points", "9", "--out=x", "--force", "-j", "2", "--seed", "3"]);
        assert_eq!(replay_args("scan", &raw).unwrap(), strs(&["--points", "9", "--seed", "3"]));
    }

    #[test]
    fn replay_args_absolutize_inputs() {
        let raw = strs(&["threshold", "--input=rel/scan.tsv"]);
        let a = replay_args("threshold", &raw).unwrap();
        assert_eq!(a[0], "--input");
        assert!(Path::new(&a[1]).is_absolute());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        let e = CliError::Core(repmarket::Error::AbortCeiling { aborted: 3, total: 4, ceiling: 0.1 });
        assert_eq!(e.exit_code(), EXIT_NUMERIC);
    }
}
