//! `effmarket` command line: simulation, analysis, optimization, Markov
//! checks, bot games and the live service.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

mod manifest;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use effmarket_core::efficiency::{compare_profiles_with, Regularization};
use effmarket_core::game::{metrics, run_bot_game, write_round_log, BotKind, GameConfig, PayoffMode};
use effmarket_core::market::{simulate, BoundaryMode, InitialDemand, ModelParams, Trajectory};
use effmarket_core::markov::{chain, stationary_distribution, ChainBoundary};
use effmarket_core::stats;
use effmarket_service::settings::ServiceSettings;

pub use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Default output directory when `--out` is not given.
pub const OUT_ENV: &str = "EFFMARKET_OUT";

#[derive(Debug, Parser)]
#[command(name = "effmarket", version, about = "Efficient-market simulator and experiment toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the market and write trajectory.csv and params.toml.
    Simulate(SimulateArgs),
    /// Compute return statistics of a saved trajectory.
    Analyze(AnalyzeArgs),
    /// Solve the price-efficient buy probability for every demand.
    Optimize(OptimizeArgs),
    /// Stationary distribution of the speculator-only Markov chain.
    Markov(MarkovArgs),
    /// Play the minority game with bots.
    Botgame(BotgameArgs),
    /// Run the live game service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory [env: EFFMARKET_OUT, default: current directory]
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
}

impl OutArgs {
    fn dir(&self) -> anyhow::Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of speculators N_s.
    #[arg(long)]
    pub ns: u32,
    /// Number of random traders N_r.
    #[arg(long, default_value_t = 0)]
    pub nr: u32,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Redraw all agents with probability 1/2 after hitting 0 or N.
    #[arg(long)]
    pub reset: bool,
    /// Initial demand; defaults to floor(N/2).
    #[arg(long)]
    pub initial: Option<u32>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trajectory CSV written by `simulate`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Model parameters; defaults to params.toml next to the trajectory.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = stats::DEFAULT_TAIL_FRACTION)]
    pub tail_fraction: f64,
    #[arg(long, default_value_t = stats::DEFAULT_EDGE_EXCLUSION)]
    pub edge_exclusion: f64,
    #[arg(long, default_value_t = 100)]
    pub max_lag: usize,
    /// Bins of the uniformity and drift histograms.
    #[arg(long, default_value_t = stats::DEFAULT_UNIFORMITY_BINS)]
    pub bins: usize,
    /// Logarithmic bins of the conditional return variance.
    #[arg(long, default_value_t = 40)]
    pub fluctuation_bins: usize,
    /// Output directory; defaults to the trajectory's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegularizationArg {
    /// Condition the expected price on d' < N.
    Condition,
    /// Replace prices above `--cap` by the cap.
    Cap,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub ns: u32,
    #[arg(long, default_value_t = 0)]
    pub nr: u32,
    #[arg(long, default_value_t = effmarket_core::efficiency::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = RegularizationArg::Condition)]
    pub regularization: RegularizationArg,
    #[arg(long, default_value_t = 1e6)]
    pub cap: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct MarkovArgs {
    /// Number of agents N.
    #[arg(long)]
    pub n: usize,
    /// Use the reset rule at 0 and N instead of absorbing boundaries.
    #[arg(long)]
    pub reset: bool,
    #[arg(long, default_value_t = effmarket_core::markov::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = effmarket_core::markov::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Also write the transition matrix (N <= 500).
    #[arg(long)]
    pub matrix: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BotArg {
    Coin,
    Efficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PayoffArg {
    Minority,
    Return,
}

#[derive(Debug, Args)]
pub struct BotgameArgs {
    #[arg(long, default_value_t = 11)]
    pub players: usize,
    #[arg(long, default_value_t = 10_000)]
    pub rounds: u64,
    #[arg(long, default_value_t = 0.0)]
    pub skip_prob: f64,
    #[arg(long, value_enum, default_value_t = BotArg::Efficient)]
    pub bot: BotArg,
    #[arg(long, value_enum, default_value_t = PayoffArg::Minority)]
    pub payoff: PayoffArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the bind address from the file and environment.
    #[arg(long)]
    pub bind: Option<std::net::SocketAddr>,
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Markov(a) => cmd_markov(a),
        Command::Botgame(a) => cmd_botgame(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let mut params = ModelParams::new(a.ns, a.nr)?.with_seed(a.seed);
    if a.reset {
        params = params.with_boundary(BoundaryMode::ResetRule)?;
    }
    let initial = a.initial.map_or(InitialDemand::Center, InitialDemand::Value);
    let dir = a.out.dir()?;
    let mut manifest = RunManifest::start("simulate", Some(a.seed));
    manifest
        .param("ns", a.ns)
        .param("nr", a.nr)
        .param("steps", a.steps)
        .param("reset", a.reset)
        .param("initial", initial.resolve(params.n_total())?);

    let trajectory = simulate(&params, a.steps, initial)?;
    let csv_path = dir.join("trajectory.csv");
    let mut w = create(&csv_path)?;
    trajectory.write_csv(&mut w)?;
    w.flush()?;
    let params_path = dir.join("params.toml");
    std::fs::write(&params_path, params.to_config_string())?;

    manifest.output_paths = vec![csv_path, params_path];
    manifest.finish(&dir)?;
    Ok(())
}

fn load_trajectory(input: &Path, params_path: Option<&Path>) -> anyhow::Result<Trajectory> {
    let params_path = match params_path {
        Some(p) => p.to_path_buf(),
        None => input.with_file_name("params.toml"),
    };
    let text = std::fs::read_to_string(&params_path)
        .with_context(|| format!("reading {}", params_path.display()))?;
    let params = ModelParams::from_config_str(&text)?;
    let file = File::open(input).with_context(|| format!("reading {}", input.display()))?;
    Ok(Trajectory::read_csv(BufReader::new(file), params)?)
}

#[derive(serde::Serialize)]
struct TailFitOutput {
    #[serde(flatten)]
    fit: stats::TailFit,
    n_returns: usize,
    skipped_steps: usize,
}

fn cmd_analyze(a: AnalyzeArgs) -> anyhow::Result<()> {
    let trajectory = load_trajectory(&a.input, a.params.as_deref())?;
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a
            .input
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::start("analyze", Some(trajectory.params.seed));
    manifest
        .param("in", a.input.display())
        .param("tail_fraction", a.tail_fraction)
        .param("edge_exclusion", a.edge_exclusion)
        .param("max_lag", a.max_lag)
        .param("bins", a.bins)
        .param("fluctuation_bins", a.fluctuation_bins);
    let mut outputs = Vec::new();
    let mut notes = Vec::new();

    let returns = stats::log_returns(&trajectory)?;
    let magnitudes = returns.magnitudes();

    let path = dir.join("ccdf.csv");
    stats::write_ccdf_csv(&stats::ccdf(&magnitudes), create(&path)?)?;
    outputs.push(path);

    match stats::hill_tail_exponent(&magnitudes, a.tail_fraction) {
        Ok(fit) => {
            let path = dir.join("tail_fit.json");
            write_json(
                &path,
                &TailFitOutput {
                    fit,
                    n_returns: returns.values.len(),
                    skipped_steps: returns.skipped,
                },
            )?;
            outputs.push(path);
        }
        Err(e) => notes.push(format!("tail_fit: {e}")),
    }

    for (name, series) in [("acf_returns.csv", &returns.values), ("acf_magnitudes.csv", &magnitudes)] {
        match stats::autocorrelation(series, a.max_lag) {
            Ok(acf) => {
                let path = dir.join(name);
                stats::write_acf_csv(&acf, create(&path)?)?;
                outputs.push(path);
            }
            Err(e) => notes.push(format!("{name}: {e}")),
        }
    }

    match stats::conditional_return_variance(&trajectory, a.fluctuation_bins) {
        Ok(bins) => {
            let path = dir.join("conditional_variance.csv");
            stats::write_fluctuation_csv(&bins, create(&path)?)?;
            outputs.push(path);
        }
        Err(e) => notes.push(format!("conditional_variance: {e}")),
    }

    match stats::uniformity_test(&trajectory.demands, trajectory.n_total(), a.edge_exclusion, a.bins) {
        Ok(report) => {
            let path = dir.join("uniformity.json");
            write_json(&path, &report)?;
            outputs.push(path);
        }
        Err(e) => notes.push(format!("uniformity: {e}")),
    }

    match stats::demand_drift(&trajectory, a.edge_exclusion, a.bins) {
        Ok(bins) => {
            let path = dir.join("drift.json");
            write_json(&path, &bins)?;
            outputs.push(path);
        }
        Err(e) => notes.push(format!("drift: {e}")),
    }

    for note in &notes {
        eprintln!("warning: skipped {note}");
    }
    manifest.output_paths = outputs;
    manifest.notes = notes;
    manifest.finish(&dir)?;
    Ok(())
}

fn cmd_optimize(a: OptimizeArgs) -> anyhow::Result<()> {
    let params = ModelParams::new(a.ns, a.nr)?;
    let reg = match a.regularization {
        RegularizationArg::Condition => Regularization::ConditionOnFinite,
        RegularizationArg::Cap => Regularization::CapPrice { cap: a.cap },
    };
    let dir = a.out.dir()?;
    let mut manifest = RunManifest::start("optimize", None);
    manifest
        .param("ns", a.ns)
        .param("nr", a.nr)
        .param("tol", a.tol)
        .param("regularization", format!("{reg:?}"));

    let profile = compare_profiles_with(&params, a.tol, reg)?;
    let csv_path = dir.join("profile.csv");
    let mut w = create(&csv_path)?;
    profile.write_csv(&mut w)?;
    w.flush()?;

    let (at, diff) = profile.max_abs_difference();
    let summary_path = dir.join("profile_summary.json");
    let drift: Vec<f64> = (0..=profile.n_total()).map(|d| profile.price_rule_drift(d)).collect();
    write_json(
        &summary_path,
        &serde_json::json!({
            "n_total": profile.n_total(),
            "max_abs_difference": diff,
            "max_abs_difference_at": at,
            "regularization": reg,
            "price_rule_drift": drift,
        }),
    )?;
    manifest.output_paths = vec![csv_path, summary_path];
    manifest.finish(&dir)?;
    Ok(())
}

fn cmd_markov(a: MarkovArgs) -> anyhow::Result<()> {
    let boundary = if a.reset {
        ChainBoundary::ResetRule
    } else {
        ChainBoundary::Absorbing
    };
    if a.matrix && a.n > 500 {
        bail!("--matrix is limited to N <= 500");
    }
    let dir = a.out.dir()?;
    let mut manifest = RunManifest::start("markov", None);
    manifest
        .param("n", a.n)
        .param("reset", a.reset)
        .param("tol", a.tol)
        .param("max_iter", a.max_iter);

    let op = chain(a.n, boundary)?;
    let result = stationary_distribution(op.as_ref(), a.tol, a.max_iter)?;
    if !result.unique {
        eprintln!("warning: absorbing chain; the distribution is the limit from a uniform start");
    }
    let mut outputs = Vec::new();
    let path = dir.join("stationary.csv");
    let mut w = create(&path)?;
    result.write_csv(&mut w)?;
    w.flush()?;
    outputs.push(path);

    let path = dir.join("stationary_summary.json");
    write_json(
        &path,
        &serde_json::json!({
            "n": a.n,
            "boundary": boundary,
            "residual": result.residual,
            "iterations": result.iterations,
            "unique": result.unique,
        }),
    )?;
    outputs.push(path);

    if a.matrix {
        let m = effmarket_core::markov::transition_matrix(a.n, boundary)?;
        let path = dir.join("transition_matrix.csv");
        let mut w = create(&path)?;
        m.write_csv(&mut w)?;
        w.flush()?;
        outputs.push(path);
    }
    manifest.output_paths = outputs;
    manifest.finish(&dir)?;
    Ok(())
}

fn cmd_botgame(a: BotgameArgs) -> anyhow::Result<()> {
    let config = GameConfig {
        n_players: a.players,
        payoff_mode: match a.payoff {
            PayoffArg::Minority => PayoffMode::MinorityPoint,
            PayoffArg::Return => PayoffMode::ReturnProportional,
        },
        skip_prob: a.skip_prob,
        rounds: a.rounds,
        seed: a.seed,
    };
    let kind = match a.bot {
        BotArg::Coin => BotKind::CoinFlip,
        BotArg::Efficient => BotKind::DemandEfficient,
    };
    let dir = a.out.dir()?;
    let mut manifest = RunManifest::start("botgame", Some(a.seed));
    manifest
        .param("players", a.players)
        .param("rounds", a.rounds)
        .param("skip_prob", a.skip_prob)
        .param("bot", format!("{kind:?}"))
        .param("payoff", format!("{:?}", config.payoff_mode));

    let records = run_bot_game(&config, kind)?;
    let log_path = dir.join("rounds.jsonl");
    write_round_log(&records, create(&log_path)?)?;
    let mut outputs = vec![log_path];
    match metrics(&records) {
        Ok(report) => {
            let path = dir.join("metrics.json");
            write_json(&path, &report)?;
            outputs.push(path);
        }
        Err(e) => {
            eprintln!("warning: no metrics: {e}");
            manifest.notes.push(format!("metrics: {e}"));
        }
    }
    manifest.output_paths = outputs;
    manifest.finish(&dir)?;
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> anyhow::Result<()> {
    let mut settings = ServiceSettings::load(a.config.as_deref())?;
    if let Some(bind) = a.bind {
        settings.bind = bind;
    }
    if let Some(dir) = a.log_dir {
        settings.log_dir = dir;
    }
    let _ = tracing_subscriber::fmt().try_init();
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(effmarket_service::server::serve(settings))?;
    Ok(())
}
