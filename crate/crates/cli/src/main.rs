use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ogcb_core::agent::{eval_seed, load_agent, save_agent, train_with, Algo, RelabelStrategy};
use ogcb_core::bench::{behavior_for, bench_dataset, run_bench, write_summary, BenchOptions, Variant};
use ogcb_core::config::RunConfig;
use ogcb_core::data::{self, collect, dataset_return, Collector, OfflineDataset};
use ogcb_core::env::{EnvId, EnvSpec};
use ogcb_core::eval::{emit_metrics, evaluate, write_metrics, METRICS_HEADER};
use ogcb_core::theory::{run_check, CheckKind};
use ogcb_core::{Error, Result};

const OUTPUT_DIR_VAR: &str = "OGCB_OUTPUT_DIR";
const DEFAULT_DATASET_SEED: u64 = 1;

#[derive(Parser)]
#[command(
    name = "ogcb",
    version,
    about = "Offline goal-conditioned RL: datasets, training, evaluation and exact theory checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect an offline dataset with a random or scripted expert policy.
    Collect(CollectArgs),
    /// Train an agent on an offline dataset.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint.
    Eval(EvalArgs),
    /// Verify the weighting theory on random finite MDPs.
    Theory(TheoryArgs),
    /// Run the benchmark matrix and write a summary table.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Pointreach,
    Pointrooms,
}

impl From<EnvArg> for EnvId {
    fn from(e: EnvArg) -> Self {
        match e {
            EnvArg::Pointreach => EnvId::PointReach,
            EnvArg::Pointrooms => EnvId::PointRooms,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CollectorArg {
    Random,
    Expert,
}

impl From<CollectorArg> for Collector {
    fn from(c: CollectorArg) -> Self {
        match c {
            CollectorArg::Random => Collector::Random,
            CollectorArg::Expert => Collector::Expert,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Wgcsl,
    Gcsl,
    #[value(name = "goal_bc", alias = "goal-bc")]
    GoalBc,
    #[value(name = "goal_marwil", alias = "goal-marwil")]
    GoalMarwil,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Wgcsl => Algo::Wgcsl,
            AlgoArg::Gcsl => Algo::Gcsl,
            AlgoArg::GoalBc => Algo::GoalBc,
            AlgoArg::GoalMarwil => Algo::GoalMarwil,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RelabelArg {
    Future,
    Prop2,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckArg {
    Theorem1,
    Corollary1,
    Prop1,
    Prop2,
    #[value(alias = "grad_match")]
    Gradmatch,
}

impl From<CheckArg> for CheckKind {
    fn from(c: CheckArg) -> Self {
        match c {
            CheckArg::Theorem1 => CheckKind::Theorem1,
            CheckArg::Corollary1 => CheckKind::Corollary1,
            CheckArg::Prop1 => CheckKind::Prop1,
            CheckArg::Prop2 => CheckKind::Prop2,
            CheckArg::Gradmatch => CheckKind::GradMatch,
        }
    }
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long, value_enum, default_value = "pointreach")]
    env: EnvArg,
    #[arg(long, value_enum, default_value = "random")]
    collector: CollectorArg,
    #[arg(long, default_value_t = 2000)]
    n_traj: usize,
    #[arg(long, default_value_t = DEFAULT_DATASET_SEED)]
    seed: u64,
    /// Expert action noise; ignored by the random collector.
    #[arg(long, default_value_t = 0.2)]
    noise_sigma: f64,
    /// Dataset file; defaults to `<output-dir>/<env>_<collector>.ogcb`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat JSON run config; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    #[arg(long, value_enum)]
    env: Option<EnvArg>,
    /// Dataset file, or a built-in name such as `pointreach_random`.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Hindsight relabel probability; defaults to 0.8 with a critic and 1 without
    #[arg(long)]
    p_relabel: Option<f64>,
    #[arg(long, value_enum)]
    relabel: Option<RelabelArg>,
    #[arg(long)]
    no_drw: bool,
    #[arg(long)]
    no_geaw: bool,
    #[arg(long)]
    no_baw: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "pointreach")]
    env: EnvArg,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Defaults to the evaluation seed of the training run.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, value_enum)]
    check: CheckArg,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample this many trajectories for prop2 instead of enumerating.
    #[arg(long)]
    n_traj: Option<usize>,
    /// Also write the JSON lines to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 50_000)]
    steps: u64,
    #[arg(long, default_value_t = 2_500)]
    eval_every: u64,
    #[arg(long, default_value_t = 100)]
    eval_episodes: usize,
    #[arg(long, value_enum, value_delimiter = ',')]
    envs: Vec<EnvArg>,
    #[arg(long, value_enum, value_delimiter = ',')]
    datasets: Vec<CollectorArg>,
    /// Comma-separated columns, e.g. `wgcsl,gcsl,drw_only`.
    #[arg(long, value_delimiter = ',')]
    algos: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_DATASET_SEED)]
    dataset_seed: u64,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn output_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_collect(args: CollectArgs) -> Result<()> {
    let env: EnvId = args.env.into();
    let collector: Collector = args.collector.into();
    let behavior = match collector {
        Collector::Random => behavior_for(Collector::Random),
        Collector::Expert => data::BehaviorPolicy::Expert {
            noise_sigma: args.noise_sigma,
        },
    };
    if args.n_traj == 0 {
        return Err(Error::InvalidInput("--n-traj must be at least 1".into()));
    }
    let dataset = collect(&EnvSpec::new(env), behavior, args.n_traj, args.seed)?;
    let path = match args.out {
        Some(p) => p,
        None => output_dir(args.output_dir.as_deref(), None).join(format!("{env}_{collector}.ogcb")),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    data::save(&dataset, &path)?;
    println!("wrote {}", path.display());
    println!("{}", serde_json::to_string(&dataset.manifest)?);
    println!("transitions {}", dataset.n_transitions());
    println!("average return {}", dataset_return(&dataset, None)?);
    Ok(())
}

/// Accepts a file path, a dataset name inside the output directory, or a
/// built-in `<env>_<collector>` name collected on the fly.
fn resolve_dataset(name: &str, out_dir: &Path) -> Result<OfflineDataset> {
    let direct = Path::new(name);
    if direct.is_file() {
        return data::load(direct);
    }
    let named = out_dir.join(format!("{name}.ogcb"));
    if named.is_file() {
        return data::load(named);
    }
    let builtin = name
        .split_once('_')
        .and_then(|(e, c)| Some((e.parse::<EnvId>().ok()?, c.parse::<Collector>().ok()?)));
    match builtin {
        Some((env, collector)) => {
            eprintln!("collecting built-in dataset {name} (seed {DEFAULT_DATASET_SEED})");
            bench_dataset(env, collector, DEFAULT_DATASET_SEED)
        }
        None => Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset {name:?} is neither a file nor a built-in name"),
        ))),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(a) = args.algo {
        cfg.algo = a.into();
    }
    if let Some(e) = args.env {
        cfg.env_id = e.into();
    }
    if let Some(d) = &args.dataset {
        cfg.dataset_path = Some(PathBuf::from(d));
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = args.$flag { cfg.$field = v; })*};
    }
    set!(steps => total_steps, batch => batch_size, seed => seed, eval_every => eval_every,
         eval_episodes => eval_episodes, lr => learning_rate);
    if args.p_relabel.is_some() {
        cfg.p_relabel = args.p_relabel;
    }
    if let Some(r) = args.relabel {
        cfg.relabel = match r {
            RelabelArg::Future => RelabelStrategy::Future,
            RelabelArg::Prop2 => RelabelStrategy::Prop2,
        };
    }
    cfg.use_drw &= !args.no_drw;
    cfg.use_geaw &= !args.no_geaw;
    cfg.use_baw &= !args.no_baw;
    let out_dir = output_dir(args.output_dir.as_deref(), cfg.output_dir.as_deref());
    cfg.output_dir = Some(out_dir.clone());
    cfg.validate()?;
    // Echo the rate actually used rather than "unset".
    if cfg.algo.relabels() {
        cfg.p_relabel = Some(cfg.train_config().relabel_probability());
    }

    let dataset_name = cfg
        .dataset_path
        .clone()
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("{}_random", cfg.env_id));
    let dataset = resolve_dataset(&dataset_name, &out_dir)?;
    if dataset.manifest.env_id != cfg.env_id {
        return Err(Error::Config(format!(
            "dataset was collected on {} but the run targets {}",
            dataset.manifest.env_id, cfg.env_id
        )));
    }

    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.json"), cfg.to_json())?;
    println!("{METRICS_HEADER}");
    let output = train_with(&cfg.train_config(), &dataset, |row| {
        let mut line = Vec::new();
        write_metrics(std::slice::from_ref(row), &mut line).expect("in-memory write");
        let text = String::from_utf8_lossy(&line);
        print!("{}", text.lines().nth(1).map(|l| format!("{l}\n")).unwrap_or_default());
        let _ = std::io::stdout().flush();
    })?;
    emit_metrics(&output.metrics, out_dir.join("metrics.csv"))?;
    save_agent(&output.agent, out_dir.join("checkpoint"))?;
    eprintln!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let agent = load_agent(&args.checkpoint)?;
    let seed = args.seed.unwrap_or_else(|| eval_seed(agent.config.seed));
    let report = evaluate(&agent, &EnvSpec::new(args.env.into()), args.episodes, seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    let out_dir = output_dir(args.output_dir.as_deref(), None);
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("eval.json"), json + "\n")?;
    Ok(())
}

/// Returns whether every applicable instance held.
fn cmd_theory(args: TheoryArgs) -> Result<bool> {
    let reports = run_check(args.check.into(), args.trials, args.seed, args.n_traj)?;
    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    print!("{lines}");
    if let Some(path) = &args.out {
        fs::write(path, &lines)?;
    }
    let failed = reports.iter().filter(|r| r.failed()).count();
    let inapplicable = reports.iter().filter(|r| r.holds.is_none()).count();
    eprintln!(
        "{} instances, {failed} failed, {inapplicable} inapplicable",
        reports.len()
    );
    Ok(failed == 0)
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut opts = BenchOptions {
        seeds: (0..args.seeds).collect(),
        total_steps: args.steps,
        eval_every: args.eval_every,
        eval_episodes: args.eval_episodes,
        dataset_seed: args.dataset_seed,
        ..BenchOptions::default()
    };
    if !args.envs.is_empty() {
        opts.envs = args.envs.into_iter().map(Into::into).collect();
    }
    if !args.datasets.is_empty() {
        opts.collectors = args.datasets.into_iter().map(Into::into).collect();
    }
    if !args.algos.is_empty() {
        opts.variants = args.algos.iter().map(|a| a.parse::<Variant>()).collect::<Result<_>>()?;
    }
    let out_dir = output_dir(args.output_dir.as_deref(), None);
    fs::create_dir_all(&out_dir)?;
    let rows = run_bench(&opts, |c| {
        eprintln!(
            "{}-{} {} seed {}: return {} success {}",
            c.env, c.collector, c.variant, c.seed, c.final_row.avg_return, c.final_row.success_rate
        );
    })?;
    let mut buf = Vec::new();
    write_summary(&rows, &mut buf)?;
    fs::write(out_dir.join("bench_summary.csv"), &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Collect(a) => cmd_collect(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Theory(a) => cmd_theory(a),
        Command::Bench(a) => cmd_bench(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
