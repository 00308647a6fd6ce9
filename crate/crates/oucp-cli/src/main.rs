//! `oucp` — command-line front end for the periodic Ornstein-Uhlenbeck
//! toolkit: simulation, drift estimation, changepoint testing, critical-value
//! tabulation, and Monte Carlo studies.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/domain error, 3 numerical
//! failure (singular statistics or a dependent basis). Every JSON output
//! embeds the tool version, the fully resolved configuration, and the seed,
//! so a result file alone suffices to rerun the computation. Outputs are
//! deterministic for a fixed binary: reruns and different `--threads` values
//! produce byte-identical files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use oucp::asymptotics::{
    critical_value_full, gumbel_norming, simulate_bridge_sup, BridgeQuantileTable, GumbelNorm,
    DEFAULT_LEVELS, DESK_GRID, DESK_REPS,
};
use oucp::config::{BasisConfig, ModelConfig};
use oucp::experiments::{
    run_null_study, run_oracle_study, run_power_study, ExperimentConfig, ExperimentResult,
};
use oucp::inference::{
    mle, run_test, CriticalValueSpec, MleFit, ScanMode, SigmaSpec, TestReport,
};
use oucp::simulate::{simulate_exact, simulate_with_change, ChangeSpec, SamplePath};
use oucp::suffstats::{accumulate, estimate_sigma_sq};
use oucp::{Error, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");

// ---------------------------------------------------------------------------
// Argument grammar
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "oucp",
    version,
    about = "Periodic mean-reversion diffusions: simulate, estimate, and test for drift changes"
)]
struct Cli {
    /// Worker threads for Monte Carlo sections (0 = all available cores).
    /// Results do not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one trajectory and write it as CSV plus a metadata sidecar.
    Simulate(SimulateArgs),
    /// Fit drift coefficients and mean reversion on a path (or a segment).
    Estimate(EstimateArgs),
    /// Run the changepoint test end to end and emit the decision report.
    Test(TestArgs),
    /// Tabulate critical values (bridge Monte Carlo or closed form).
    Critvals(CritvalsArgs),
    /// Run a Monte Carlo study (null size / power / estimator diagnostics).
    Mc(McArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model configuration JSON (basis, mu, alpha, sigma, init).
    #[arg(long)]
    config: PathBuf,
    /// Time horizon.
    #[arg(long = "T")]
    horizon: f64,
    /// Grid step; must divide the horizon.
    #[arg(long)]
    dt: f64,
    /// Generator seed.
    #[arg(long)]
    seed: u64,
    /// Drift change "s,mu_1,...,mu_p,alpha": location as a fraction of the
    /// horizon, then the post-change parameters.
    #[arg(long, value_parser = parse_change, allow_hyphen_values = true)]
    change: Option<ChangeList>,
    /// Output CSV; the sidecar replaces its extension with ".meta.json".
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Path CSV with header "t,x".
    #[arg(long)]
    path: PathBuf,
    /// Basis configuration JSON (period, family, ...).
    #[arg(long)]
    basis: PathBuf,
    /// Restrict estimation to the time segment "a,b".
    #[arg(long, value_parser = parse_float_pair)]
    segment: Option<(f64, f64)>,
    /// Output JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    /// Path CSV with header "t,x".
    #[arg(long)]
    path: PathBuf,
    /// Basis configuration JSON.
    #[arg(long)]
    basis: PathBuf,
    /// Diffusion coefficient: a positive number, or "estimate" to use the
    /// realized-quadratic-variation estimate.
    #[arg(long, value_parser = parse_sigma)]
    sigma: SigmaArg,
    /// Scan mode: "window" (interior window, Monte Carlo critical value) or
    /// "full" (whole horizon, closed-form critical value).
    #[arg(long)]
    mode: ModeArg,
    /// Window lower endpoint (window mode).
    #[arg(long, default_value_t = 0.1)]
    s1: f64,
    /// Window upper endpoint (window mode).
    #[arg(long, default_value_t = 0.9)]
    s2: f64,
    /// Test level in (0, 1].
    #[arg(long)]
    level: f64,
    /// Precomputed bridge quantile table JSON (window mode); when omitted the
    /// table is simulated in place with --grid/--reps/--seed.
    #[arg(long)]
    critvals: Option<PathBuf>,
    /// Bridge grid size for the in-place table.
    #[arg(long, default_value_t = DESK_GRID)]
    grid: usize,
    /// Bridge replicates for the in-place table.
    #[arg(long, default_value_t = DESK_REPS)]
    reps: usize,
    /// Seed for the in-place table.
    #[arg(long, default_value_t = 1729)]
    seed: u64,
    /// Output JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CritvalsArgs {
    /// "bridge" for the windowed Monte Carlo table, "gumbel" for the
    /// full-range closed form.
    #[arg(long)]
    mode: CvModeArg,
    /// Number of basis functions.
    #[arg(long)]
    p: usize,
    /// Window lower endpoint (bridge mode).
    #[arg(long, default_value_t = 0.1)]
    s1: f64,
    /// Window upper endpoint (bridge mode).
    #[arg(long, default_value_t = 0.9)]
    s2: f64,
    /// Bridge grid size.
    #[arg(long, default_value_t = DESK_GRID)]
    grid: usize,
    /// Bridge replicates.
    #[arg(long, default_value_t = DESK_REPS)]
    reps: usize,
    /// Time horizon (gumbel mode).
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Period (gumbel mode).
    #[arg(long)]
    nu: Option<f64>,
    /// Confidence levels to tabulate, e.g. "0.90,0.95,0.99".
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LEVELS.to_vec())]
    levels: Vec<f64>,
    /// Seed for the bridge Monte Carlo.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct McArgs {
    /// Which study to run.
    study: StudyArg,
    /// Experiment configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write the power grid (level x scenario rejection rates) as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Window,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum CvModeArg {
    Bridge,
    Gumbel,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyArg {
    Null,
    Power,
    Oracle,
}

#[derive(Clone, Copy, Debug)]
enum SigmaArg {
    Known(f64),
    Estimate,
}

/// Comma-separated float list. A plain `Vec<f64>` would make clap treat the
/// flag as multi-valued; the newtype keeps it a single comma-joined token.
#[derive(Clone, Debug)]
struct ChangeList(Vec<f64>);

fn parse_change(s: &str) -> std::result::Result<ChangeList, String> {
    let v = parse_float_list(s)?;
    if v.len() < 3 {
        return Err(format!(
            "expected \"s,mu_1,...,mu_p,alpha\" (at least three numbers), got {s:?}"
        ));
    }
    Ok(ChangeList(v))
}

fn parse_sigma(s: &str) -> std::result::Result<SigmaArg, String> {
    if s.eq_ignore_ascii_case("estimate") {
        return Ok(SigmaArg::Estimate);
    }
    s.parse::<f64>()
        .map(SigmaArg::Known)
        .map_err(|_| format!("expected a number or \"estimate\", got {s:?}"))
}

fn parse_float_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let v = parse_float_list(s)?;
    if v.len() != 2 {
        return Err(format!("expected \"a,b\", got {s:?}"));
    }
    Ok((v[0], v[1]))
}

fn parse_float_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| format!("not a number: {part:?}"))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Report envelopes
// ---------------------------------------------------------------------------
//
// Every output is {tool_version, seed, resolved_config, <payload>}. The
// resolved config repeats all parameters after defaulting, but no filesystem
// paths, so moving files around does not change report bytes.

#[derive(Serialize)]
struct SimulateSidecar {
    tool_version: &'static str,
    seed: u64,
    resolved_config: SimulateResolved,
    meta: oucp::simulate::PathMeta,
}

#[derive(Serialize)]
struct SimulateResolved {
    model: ModelConfig,
    horizon: f64,
    dt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    change: Option<ChangeResolved>,
}

#[derive(Serialize)]
struct ChangeResolved {
    s: f64,
    mu_post: Vec<f64>,
    alpha_post: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    tool_version: &'static str,
    seed: Option<u64>,
    resolved_config: EstimateResolved,
    fit: MleFit,
    /// Realized-quadratic-variation estimate of sigma^2 over the whole path.
    sigma_sq_hat: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct EstimateResolved {
    basis: BasisConfig,
    segment: (f64, f64),
}

#[derive(Serialize)]
struct TestEnvelope {
    tool_version: &'static str,
    seed: Option<u64>,
    resolved_config: TestResolved,
    report: TestReport,
}

#[derive(Serialize)]
struct TestResolved {
    basis: BasisConfig,
    sigma: String,
    mode: ScanMode,
    level: f64,
}

#[derive(Serialize)]
struct BridgeTableEnvelope {
    tool_version: &'static str,
    seed: u64,
    resolved_config: BridgeResolved,
    table: BridgeQuantileTable,
}

#[derive(Serialize)]
struct BridgeResolved {
    p: usize,
    s1: f64,
    s2: f64,
    grid: usize,
    reps: usize,
    levels: Vec<f64>,
}

#[derive(Serialize)]
struct GumbelEnvelope {
    tool_version: &'static str,
    seed: Option<u64>,
    resolved_config: GumbelResolved,
    norming: GumbelNorm,
    critical_values: Vec<LevelValue>,
}

#[derive(Serialize)]
struct GumbelResolved {
    p: usize,
    horizon: f64,
    nu: f64,
    levels: Vec<f64>,
}

#[derive(Serialize)]
struct LevelValue {
    level: f64,
    value: f64,
}

#[derive(Serialize)]
struct McEnvelope {
    tool_version: &'static str,
    seed: u64,
    resolved_config: ExperimentConfig,
    result: ExperimentResult,
}

// ---------------------------------------------------------------------------
// Entry point and dispatch
// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and --version are successes; everything else is usage.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if cli.threads > 0 {
        // Cap the ambient pool; ignore "already initialized" on reentry.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }

    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Test(args) => cmd_test(args),
        Command::Critvals(args) => cmd_critvals(args),
        Command::Mc(args) => cmd_mc(args, cli.threads),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let config: ModelConfig = read_json(&args.config)?;
    let model = config.build()?;

    let (path, change) = match args.change.as_ref().map(|c| &c.0) {
        None => (
            simulate_exact(&model, args.horizon, args.dt, args.seed)?,
            None,
        ),
        Some(raw) => {
            let p = model.basis.count();
            if raw.len() != p + 2 {
                return Err(Error::InvalidConfig(format!(
                    "--change wants s plus {} post-change parameters, got {} values",
                    p + 1,
                    raw.len()
                )));
            }
            let s = raw[0];
            let mu_post = raw[1..=p].to_vec();
            let alpha_post = raw[p + 1];
            let post = oucp::model::DriftParams::new(mu_post.clone(), alpha_post);
            let change = ChangeSpec::new(model.theta.clone(), post, s)?;
            let path = simulate_with_change(&model, &change, args.horizon, args.dt, args.seed)?;
            (
                path,
                Some(ChangeResolved {
                    s,
                    mu_post,
                    alpha_post,
                }),
            )
        }
    };

    let csv = fs::File::create(&args.out).map_err(Error::Io)?;
    oucp::io::write_path_csv(&path, std::io::BufWriter::new(csv))?;

    let sidecar = SimulateSidecar {
        tool_version: VERSION,
        seed: args.seed,
        resolved_config: SimulateResolved {
            model: config,
            horizon: args.horizon,
            dt: args.dt,
            change,
        },
        meta: path.meta().clone(),
    };
    write_json(&sidecar_path(&args.out), &sidecar)
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let basis_cfg: BasisConfig = read_json(&args.basis)?;
    let basis = basis_cfg.build()?;
    let path = load_path(&args.path, basis.period())?;

    let segment = args.segment.unwrap_or((0.0, path.horizon()));
    let stats = accumulate(&path, &basis, segment)?;
    let fit = mle(&stats)?;
    let sigma_sq_hat = estimate_sigma_sq(&path)?;

    let mut warnings = Vec::new();
    if fit.alpha_nonpositive {
        warnings.push(
            "alpha_nonpositive: the fitted mean reversion is not positive; \
             the model is not ergodic at this estimate"
                .to_string(),
        );
    }

    let report = EstimateReport {
        tool_version: VERSION,
        seed: None,
        resolved_config: EstimateResolved {
            basis: basis_cfg,
            segment,
        },
        fit,
        sigma_sq_hat,
        warnings,
    };
    emit(args.out.as_deref(), &report)
}

fn cmd_test(args: TestArgs) -> Result<()> {
    let basis_cfg: BasisConfig = read_json(&args.basis)?;
    let basis = basis_cfg.build()?;
    let path = load_path(&args.path, basis.period())?;

    let sigma = match args.sigma {
        SigmaArg::Known(v) => SigmaSpec::Known(v),
        SigmaArg::Estimate => SigmaSpec::Estimate,
    };
    let mode = match args.mode {
        ModeArg::Window => ScanMode::Window {
            s1: args.s1,
            s2: args.s2,
        },
        ModeArg::Full => ScanMode::Full,
    };

    // Window mode takes a bridge critical value (from a file, or simulated in
    // place); full mode takes the closed form. A table supplied alongside
    // full mode is passed through so the mixing is rejected, not ignored.
    let table = match &args.critvals {
        Some(file) => Some(load_bridge_table(file)?),
        None => None,
    };
    let cv = match (&mode, &table) {
        (_, Some(t)) => CriticalValueSpec::FromTable(t),
        (ScanMode::Window { .. }, None) => CriticalValueSpec::BridgeMc {
            m: args.grid,
            reps: args.reps,
            seed: args.seed,
        },
        (ScanMode::Full, None) => CriticalValueSpec::Gumbel,
    };

    let report = run_test(&path, &basis, sigma, mode, args.level, cv)?;

    let envelope = TestEnvelope {
        tool_version: VERSION,
        seed: match args.mode {
            ModeArg::Window if args.critvals.is_none() => Some(args.seed),
            _ => None,
        },
        resolved_config: TestResolved {
            basis: basis_cfg,
            sigma: match args.sigma {
                SigmaArg::Known(v) => format!("{v}"),
                SigmaArg::Estimate => "estimate".to_string(),
            },
            mode,
            level: args.level,
        },
        report,
    };
    emit(args.out.as_deref(), &envelope)
}

fn cmd_critvals(args: CritvalsArgs) -> Result<()> {
    match args.mode {
        CvModeArg::Bridge => {
            let table = simulate_bridge_sup(
                args.p,
                (args.s1, args.s2),
                args.grid,
                args.reps,
                args.seed,
                &args.levels,
            )?;
            let envelope = BridgeTableEnvelope {
                tool_version: VERSION,
                seed: args.seed,
                resolved_config: BridgeResolved {
                    p: args.p,
                    s1: args.s1,
                    s2: args.s2,
                    grid: args.grid,
                    reps: args.reps,
                    levels: args.levels,
                },
                table,
            };
            write_json(&args.out, &envelope)
        }
        CvModeArg::Gumbel => {
            let horizon = args.horizon.ok_or_else(|| {
                Error::InvalidConfig("gumbel mode needs --T (time horizon)".into())
            })?;
            let nu = args
                .nu
                .ok_or_else(|| Error::InvalidConfig("gumbel mode needs --nu (period)".into()))?;
            let norming = gumbel_norming(horizon, nu, args.p)?;
            let mut critical_values = Vec::with_capacity(args.levels.len());
            for &level in &args.levels {
                critical_values.push(LevelValue {
                    level,
                    value: critical_value_full(horizon, nu, args.p, 1.0 - level)?,
                });
            }
            let envelope = GumbelEnvelope {
                tool_version: VERSION,
                seed: None,
                resolved_config: GumbelResolved {
                    p: args.p,
                    horizon,
                    nu,
                    levels: args.levels,
                },
                norming,
                critical_values,
            };
            write_json(&args.out, &envelope)
        }
    }
}

fn cmd_mc(args: McArgs, threads: usize) -> Result<()> {
    let mut config: ExperimentConfig = read_json(&args.config)?;
    if threads > 0 {
        config.threads = threads;
    }
    let result = match args.study {
        StudyArg::Null => run_null_study(&config)?,
        StudyArg::Power => run_power_study(&config)?,
        StudyArg::Oracle => run_oracle_study(&config)?,
    };
    if let Some(csv) = &args.csv {
        fs::write(csv, result.power_grid_csv()).map_err(Error::Io)?;
    }
    let envelope = McEnvelope {
        tool_version: VERSION,
        seed: config.master_seed,
        resolved_config: config,
        result,
    };
    write_json(&args.out, &envelope)
}

// ---------------------------------------------------------------------------
// File plumbing
// ---------------------------------------------------------------------------

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::Io)?;
    serde_json::from_str(&text).map_err(Error::Json)
}

fn load_path(file: &Path, nu: f64) -> Result<SamplePath> {
    let reader = fs::File::open(file).map_err(Error::Io)?;
    oucp::io::load_path_csv(std::io::BufReader::new(reader), nu)
}

/// Accept either the `critvals --mode bridge` envelope or a bare table.
fn load_bridge_table(file: &Path) -> Result<BridgeQuantileTable> {
    let text = fs::read_to_string(file).map_err(Error::Io)?;
    #[derive(serde::Deserialize)]
    struct Envelope {
        table: BridgeQuantileTable,
    }
    if let Ok(env) = serde_json::from_str::<Envelope>(&text) {
        return Ok(env.table);
    }
    serde_json::from_str(&text).map_err(Error::Json)
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn render_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::Json)?;
    text.push('\n');
    Ok(text)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, render_json(value)?).map_err(Error::Io)
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let text = render_json(value)?;
    match out {
        Some(path) => fs::write(path, text).map_err(Error::Io),
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(Error::Io)?;
            Ok(())
        }
    }
}
