//! `tabsight` subcommands. Each command writes its report to the given writer so the
//! binary and the tests share one code path.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tabsight_core::agent::baselines::mean_baseline_return;
use tabsight_core::agent::train::write_curves;
use tabsight_core::agent::{evaluate, run_baseline, train, BaselinePolicy, Checkpoint};
use tabsight_core::experiments::{kind_counts, robustness, sweep, RobustnessConfig, SweepConfig};
use tabsight_core::{parse_table, EngineConfig, TableState};
use tabsight_service::config::{DATA_DIR_VAR, PORT_VAR};
use tabsight_service::{replay, Recommender, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "tabsight", version, about = "Insight extraction for hierarchical tables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a table.
    Eval(EvalArgs),
    /// Run a random, greedy or beam-search baseline.
    Baseline(BaselineArgs),
    /// Serve the session API over HTTP.
    Serve(ServeArgs),
    /// Count detected insights per kind.
    Extract(ExtractArgs),
    /// Replay a session event log.
    Replay(ReplayArgs),
    /// Train and evaluate over a stage-ratio by GCN-depth grid.
    Sweep(SweepArgs),
    /// Greedy metrics over randomly initialized headings.
    Robustness(RobustnessArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Engine configuration (TOML, or JSON for a `.json` file).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    pub fn load(&self) -> Result<EngineConfig> {
        match &self.config {
            Some(path) => EngineConfig::load(path).with_context(|| format!("loading {}", path.display())),
            None => Ok(EngineConfig::default()),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training table; repeat for several.
    #[arg(long = "table", required = true)]
    pub tables: Vec<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Override `train.total_steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, default_value = "tabsight.ckpt")]
    pub out: PathBuf,
    /// Per-iteration metric curves as CSV.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    /// Take the most probable action instead of sampling.
    #[arg(long)]
    pub argmax: bool,
    /// First evaluation seed; defaults to the checkpoint's episode seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// `random`, `greedy`, `beam:k` or `beam:k:depth`.
    #[arg(long, value_parser = parse_policy)]
    pub policy: BaselinePolicy,
    #[arg(long)]
    pub table: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    /// Print the ledger of the first episode as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = PORT_VAR, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = DATA_DIR_VAR, default_value = "tabsight-data")]
    pub data_dir: PathBuf,
    /// Agent used for recommendations; greedy when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A session's `events.jsonl`.
    #[arg(long)]
    pub session_log: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Re-execute runs recorded by this checkpoint's agent.
    #[arg(long, conflicts_with = "greedy")]
    pub checkpoint: Option<PathBuf>,
    /// Re-execute runs recorded by the greedy recommender.
    #[arg(long)]
    pub greedy: bool,
    /// Write the final annotated document here.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long = "table", required = true)]
    pub tables: Vec<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Training steps per grid cell.
    #[arg(long, default_value_t = 4096)]
    pub steps: u64,
    #[arg(long, default_value_t = 5)]
    pub eval_episodes: usize,
    #[arg(long, value_delimiter = ',')]
    pub stage_ratios: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[arg(long = "table", required = true)]
    pub tables: Vec<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, default_value_t = 10)]
    pub inits: usize,
    #[arg(long, value_parser = parse_policy, default_value = "greedy")]
    pub policy: BaselinePolicy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_policy(s: &str) -> Result<BaselinePolicy, String> {
    s.parse()
}

pub fn load_table(path: &Path) -> Result<TableState> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_table(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn table_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => run_train(a, out),
        Command::Eval(a) => run_eval(a, out),
        Command::Baseline(a) => run_baseline_cmd(a, out),
        Command::Serve(a) => run_serve(a),
        Command::Extract(a) => run_extract(a, out),
        Command::Replay(a) => run_replay(a, out),
        Command::Sweep(a) => run_sweep(a, out),
        Command::Robustness(a) => run_robustness(a, out),
    }
}

fn run_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(steps) = a.steps {
        cfg.train.total_steps = steps;
    }
    let tables = a.tables.iter().map(|p| load_table(p)).collect::<Result<Vec<_>>>()?;
    let trainer = train(&tables, cfg.train, cfg.episode, cfg.detectors)?;
    Checkpoint::from_trainer(&trainer).save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.curves {
        write_curves(path, &trainer.curves).with_context(|| format!("writing {}", path.display()))?;
    }
    let last = trainer.curves.last();
    writeln!(
        out,
        "trained {} steps over {} iterations; final r_ext {:.4}; checkpoint {} ({:016x})",
        trainer.steps,
        trainer.iteration,
        last.map_or(0.0, |m| m.extrinsic_mean),
        a.out.display(),
        trainer.agent.params.fingerprint()
    )?;
    Ok(())
}

fn run_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let agent = ckpt.agent()?;
    let table = load_table(&a.table)?;
    let mut episode = ckpt.meta.episode.clone();
    if let Some(seed) = a.seed {
        episode.seed = seed;
    }
    let report = evaluate(&agent, &table, &episode, &ckpt.meta.detectors, a.episodes, a.argmax)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        writeln!(
            out,
            "{} episodes: r_ext {:.4}  AR {:.3}  IR {:.3}  ER {:.3}",
            report.episodes, report.mean_extrinsic, report.mean_ar, report.mean_ir, report.mean_er
        )?;
    }
    Ok(())
}

fn run_baseline_cmd(a: BaselineArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.config.load()?;
    let table = load_table(&a.table)?;
    let mean = mean_baseline_return(a.policy, &table, &cfg.episode, &cfg.detectors, a.episodes)?;
    let first = run_baseline(a.policy, &table, &cfg.episode, &cfg.detectors)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&first.ledger)?)?;
        return Ok(());
    }
    writeln!(out, "{} over {} episodes: mean r_ext {:.4}", a.policy, a.episodes, mean)?;
    let m = &first.metrics;
    writeln!(
        out,
        "seed {}: AR {:.3}  IR {:.3}  ER {:.3}  insights {}",
        cfg.episode.seed,
        m.ar,
        m.ir,
        m.er,
        first.ledger.len()
    )?;
    for r in &first.ledger {
        writeln!(
            out,
            "  #{} {} {}x{} cells, score {:.3}",
            r.id.0,
            r.kind.name(),
            r.block.rows.len(),
            r.block.cols.len(),
            r.score
        )?;
    }
    Ok(())
}

fn run_serve(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        host: a.host,
        port: a.port,
        data_dir: a.data_dir,
        checkpoint: a.checkpoint,
        engine: a.config.load()?,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(tabsight_service::serve(config))
}

fn run_extract(a: ExtractArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.config.load()?;
    let table = load_table(&a.table)?;
    let counts = kind_counts(&table_name(&a.table), &table, &cfg.episode, &cfg.detectors)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&counts)?)?;
    } else {
        write!(out, "{}", counts.render())?;
    }
    Ok(())
}

fn run_replay(a: ReplayArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.config.load()?;
    let recommender = match (&a.checkpoint, a.greedy) {
        (Some(path), _) => Some(
            ServiceConfig { checkpoint: Some(path.clone()), ..Default::default() }
                .recommender()
                .map_err(anyhow::Error::msg)?,
        ),
        (None, true) => Some(Recommender::Greedy),
        (None, false) => None,
    };
    let report = replay(&a.session_log, &cfg, recommender.as_ref())?;
    writeln!(
        out,
        "{} events to revision {}: {} runs re-executed, {} installed from the log",
        report.events, report.revision, report.reexecuted_runs, report.recorded_runs
    )?;
    let m = &report.metrics;
    writeln!(out, "insights {}  AR {:.3}  IR {:.3}  ER {:.3}", report.final_state.insights.len(), m.ar, m.ir, m.er)?;
    if let Some(path) = &a.export {
        std::fs::write(path, serde_json::to_vec_pretty(&report.final_state)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run_sweep(a: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.config.load()?;
    let tables = a.tables.iter().map(|p| load_table(p)).collect::<Result<Vec<_>>>()?;
    let mut sc = SweepConfig {
        train: cfg.train,
        episode: cfg.episode,
        eval_episodes: a.eval_episodes,
        ..SweepConfig::default()
    };
    sc.train.total_steps = a.steps;
    if let Some(sr) = a.stage_ratios {
        sc.stage_ratios = sr;
    }
    if let Some(l) = a.layers {
        sc.layers = l;
    }
    if sc.stage_ratios.is_empty() || sc.layers.is_empty() {
        bail!("empty sweep grid");
    }
    let report = sweep(&tables, &sc, &cfg.detectors, |c| {
        log::info!("SR {} L {}: AR {:.3} IR {:.3} ER {:.3}", c.stage_ratio, c.layers, c.ar, c.ir, c.er)
    })?;
    write!(out, "{}", report.render())?;
    if let Some(path) = &a.csv {
        std::fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run_robustness(a: RobustnessArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.config.load()?;
    let rc = RobustnessConfig {
        initializations: a.inits,
        policy: a.policy,
        episode: cfg.episode,
        seed: a.seed,
        ..RobustnessConfig::default()
    };
    for path in &a.tables {
        let table = load_table(path)?;
        let report = robustness(&table_name(path), &table, &rc, &cfg.detectors)?;
        writeln!(out, "{}", report.render())?;
    }
    Ok(())
}
