//! The benchmark matrix: environments × datasets × algorithm variants ×
//! seeds, summarized as mean ± std of the final evaluation return.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::agent::{train, Algo, TrainConfig, WeightConfig};
use crate::data::{collect, BehaviorPolicy, Collector, OfflineDataset};
use crate::env::{EnvId, EnvSpec};
use crate::error::{invalid, Error, Result};
use crate::eval::MetricRow;

/// Trajectories per benchmark dataset (10⁵ transitions at horizon 50).
pub const BENCH_TRAJECTORIES: usize = 2000;
pub const EXPERT_NOISE_SIGMA: f64 = 0.2;

/// Algorithm column of the benchmark table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Wgcsl,
    Gcsl,
    GoalBc,
    GoalMarwil,
    DrwOnly,
    GeawOnly,
    BawOnly,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Wgcsl,
        Variant::Gcsl,
        Variant::GoalBc,
        Variant::GoalMarwil,
        Variant::DrwOnly,
        Variant::GeawOnly,
        Variant::BawOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Wgcsl => "wgcsl",
            Variant::Gcsl => "gcsl",
            Variant::GoalBc => "goal_bc",
            Variant::GoalMarwil => "goal_marwil",
            Variant::DrwOnly => "drw_only",
            Variant::GeawOnly => "geaw_only",
            Variant::BawOnly => "baw_only",
        }
    }

    /// Training configuration for this column; ablations are WGCSL with a
    /// single weight component enabled.
    pub fn train_config(self, seed: u64) -> TrainConfig {
        let only = |drw, geaw, baw| {
            let mut c = TrainConfig::new(Algo::Wgcsl);
            c.weights = WeightConfig {
                use_drw: drw,
                use_geaw: geaw,
                use_baw: baw,
                ..WeightConfig::default()
            };
            c
        };
        let mut c = match self {
            Variant::Wgcsl => TrainConfig::new(Algo::Wgcsl),
            Variant::Gcsl => TrainConfig::new(Algo::Gcsl),
            Variant::GoalBc => TrainConfig::new(Algo::GoalBc),
            Variant::GoalMarwil => TrainConfig::new(Algo::GoalMarwil),
            Variant::DrwOnly => only(true, false, false),
            Variant::GeawOnly => only(false, true, false),
            Variant::BawOnly => only(false, false, true),
        };
        c.seed = seed;
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| invalid(format!("unknown variant {s:?}")))
    }
}

pub fn behavior_for(collector: Collector) -> BehaviorPolicy {
    match collector {
        Collector::Random => BehaviorPolicy::Random,
        Collector::Expert => BehaviorPolicy::Expert {
            noise_sigma: EXPERT_NOISE_SIGMA,
        },
    }
}

/// The fixed benchmark dataset of one task; every seed of every variant
/// trains on the same data.
pub fn bench_dataset(env: EnvId, collector: Collector, dataset_seed: u64) -> Result<OfflineDataset> {
    collect(
        &EnvSpec::new(env),
        behavior_for(collector),
        BENCH_TRAJECTORIES,
        dataset_seed,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub envs: Vec<EnvId>,
    pub collectors: Vec<Collector>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub dataset_seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            envs: EnvId::ALL.to_vec(),
            collectors: vec![Collector::Random, Collector::Expert],
            variants: Variant::ALL.to_vec(),
            seeds: (0..5).collect(),
            total_steps: 50_000,
            eval_every: 2_500,
            eval_episodes: 100,
            dataset_seed: 1,
        }
    }
}

/// Final evaluation of one (task, variant, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub env: EnvId,
    pub collector: Collector,
    pub variant: Variant,
    pub seed: u64,
    pub final_row: MetricRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub env: EnvId,
    pub collector: Collector,
    pub variant: Variant,
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_success_rate: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_cell(dataset: &OfflineDataset, variant: Variant, seed: u64, opts: &BenchOptions) -> Result<MetricRow> {
    let mut cfg = variant.train_config(seed);
    cfg.total_steps = opts.total_steps;
    cfg.eval_every = opts.eval_every;
    cfg.eval_episodes = opts.eval_episodes;
    let out = train(&cfg, dataset)?;
    out.metrics
        .last()
        .copied()
        .ok_or_else(|| invalid("training produced no metrics"))
}

/// Runs the whole matrix in a fixed order, reporting each finished run.
pub fn run_bench(opts: &BenchOptions, mut on_cell: impl FnMut(&CellResult)) -> Result<Vec<SummaryRow>> {
    if opts.seeds.is_empty() || opts.total_steps == 0 {
        return Err(invalid("bench needs at least one seed and one step"));
    }
    let mut rows = Vec::new();
    for &env in &opts.envs {
        for &collector in &opts.collectors {
            let dataset = bench_dataset(env, collector, opts.dataset_seed)?;
            let mut finals: HashMap<Variant, Vec<MetricRow>> = HashMap::new();
            for &variant in &opts.variants {
                for &seed in &opts.seeds {
                    let final_row = run_cell(&dataset, variant, seed, opts)?;
                    on_cell(&CellResult {
                        env,
                        collector,
                        variant,
                        seed,
                        final_row,
                    });
                    finals.entry(variant).or_default().push(final_row);
                }
            }
            for &variant in &opts.variants {
                let runs = &finals[&variant];
                let returns: Vec<f64> = runs.iter().map(|r| r.avg_return).collect();
                let (mean_return, std_return) = mean_std(&returns);
                let successes: Vec<f64> = runs.iter().map(|r| r.success_rate).collect();
                rows.push(SummaryRow {
                    env,
                    collector,
                    variant,
                    mean_return,
                    std_return,
                    mean_success_rate: mean_std(&successes).0,
                    returns,
                });
            }
        }
    }
    Ok(rows)
}

pub const SUMMARY_HEADER: &str = "env,dataset,algo,n_seeds,mean_return,std_return,mean_success_rate,returns";

/// Summary CSV; per-seed returns are `;`-separated in seed order.
pub fn write_summary(rows: &[SummaryRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        let returns: Vec<String> = r.returns.iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.env,
            r.collector,
            r.variant,
            r.returns.len(),
            r.mean_return,
            r.std_return,
            r.mean_success_rate,
            returns.join(";")
        )?;
    }
    Ok(())
}
