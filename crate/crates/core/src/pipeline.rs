//! Two-stage run orchestration and the single-stage ablations.

use serde::{Deserialize, Serialize};

use crate::bandit::{run_stage1, BanditConfig, TaskSelection};
use crate::env::{EnvSpec, TaskEnvironment};
use crate::error::{Error, Result};
use crate::log::{to_jsonl, RunLog};
use crate::mixing::{env_objective, evaluate_ratios, run_stage2, MixingRatio, Stage2Config, Stage2Outcome};
use crate::seed::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Bandit selection, then GP mixing-ratio search.
    Full,
    /// GP search over every task.
    NoStage1,
    /// Bandit selection, then an evenly spaced ratio grid of the same budget.
    NoStage2,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "no_stage1" => Ok(Mode::NoStage1),
            "no_stage2" => Ok(Mode::NoStage2),
            other => Err(Error::config(
                "mode",
                format!("unknown mode `{other}` (expected full, no_stage1 or no_stage2)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub bandit: BanditConfig,
    pub stage2: Stage2Config,
    pub environment: EnvSpec,
    /// Seed for the environment's synthetic data.
    pub env_data_seed: u64,
}

impl PipelineConfig {
    /// Defaults for `environment`, with every stage seeded from `seed`.
    pub fn new(environment: EnvSpec, seed: u64) -> Self {
        let mut config = PipelineConfig {
            mode: Mode::Full,
            bandit: BanditConfig::new(environment.n_tasks()),
            stage2: Stage2Config::default(),
            environment,
            env_data_seed: 0,
        };
        config.reseed(seed);
        config
    }

    pub fn reseed(&mut self, seed: u64) {
        self.bandit.rng_seed = derive_seed(seed, stream::BANDIT);
        self.stage2.rng_seed = derive_seed(seed, stream::STAGE2);
        self.env_data_seed = derive_seed(seed, stream::ENV_DATA);
    }

    pub fn validate(&self) -> Result<()> {
        self.environment.validate()?;
        self.bandit.validate().map_err(|e| prefix(e, "bandit"))?;
        self.stage2.validate()?;
        if self.bandit.n_tasks != self.environment.n_tasks() {
            return Err(Error::config(
                "bandit.n_tasks",
                format!(
                    "{} does not match the environment's {} tasks",
                    self.bandit.n_tasks,
                    self.environment.n_tasks()
                ),
            ));
        }
        Ok(())
    }
}

fn prefix(err: Error, section: &str) -> Error {
    match err {
        Error::Config { key, message } => Error::Config {
            key: format!("{section}.{key}"),
            message,
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub mode: Mode,
    pub selection: TaskSelection,
    /// Counts over the selected tasks, in selection order.
    pub best_ratio: MixingRatio,
    /// Counts over every environment task.
    pub best_ratio_full: Vec<u32>,
    pub best_score: f64,
    pub baseline_score: f64,
    pub n_evaluations: usize,
}

/// Evenly spaced ratios used in place of the GP search.
///
/// One auxiliary sweeps `primary:aux` across the budget; two or more take a
/// strided subset of the lattice over `{0, 5, 10, 20}` (primary never 0),
/// scaled to `ratio_max`.
pub fn grid_ratios(n_tasks: usize, budget: usize, ratio_max: u32) -> Vec<MixingRatio> {
    let max = f64::from(ratio_max);
    match n_tasks {
        0 => Vec::new(),
        1 => (0..budget)
            .map(|i| MixingRatio::new(vec![(i as u32 % ratio_max) + 1], ratio_max).expect("valid"))
            .collect(),
        2 => (0..budget)
            .map(|i| {
                let aux = if budget > 1 {
                    (i as f64 * max / (budget - 1) as f64).round() as u32
                } else {
                    0
                };
                let primary = ratio_max.saturating_sub(aux).max(1);
                MixingRatio::new(vec![primary, aux], ratio_max).expect("valid")
            })
            .collect(),
        _ => {
            let levels: Vec<u32> = [0.0, 0.25, 0.5, 1.0]
                .iter()
                .map(|f| (f * max).round() as u32)
                .collect();
            let primary_levels: Vec<u32> = levels.iter().copied().filter(|&l| l > 0).collect();
            let mut lattice = Vec::new();
            let aux_count = levels.len().pow((n_tasks - 1) as u32);
            for &p in &primary_levels {
                for code in 0..aux_count {
                    let mut counts = vec![p];
                    let mut c = code;
                    for _ in 1..n_tasks {
                        counts.push(levels[c % levels.len()]);
                        c /= levels.len();
                    }
                    lattice.push(counts);
                }
            }
            let m = lattice.len();
            (0..budget)
                .map(|i| {
                    let idx = if m >= budget { i * m / budget } else { i % m };
                    MixingRatio::new(lattice[idx].clone(), ratio_max).expect("valid")
                })
                .collect()
        }
    }
}

/// Runs the configured pipeline on a freshly built environment.
pub fn run_pipeline(config: &PipelineConfig, logs: &mut RunLog) -> Result<PipelineReport> {
    config.validate()?;
    let mut env = config.environment.build(config.env_data_seed)?;
    run_pipeline_with_env(config, env.as_mut(), logs)
}

/// Runs the pipeline against a caller-supplied environment.
///
/// The environment's `train_full` is called `stage2.n_samples + 1` times:
/// once per Stage-2 evaluation plus one single-task baseline run.
pub fn run_pipeline_with_env(
    config: &PipelineConfig,
    env: &mut dyn TaskEnvironment,
    logs: &mut RunLog,
) -> Result<PipelineReport> {
    config.bandit.validate().map_err(|e| prefix(e, "bandit"))?;
    config.stage2.validate()?;

    let selection = match config.mode {
        Mode::NoStage1 => TaskSelection::all(&config.bandit.initial_arms(), config.bandit.primary_task_id),
        Mode::Full | Mode::NoStage2 => run_stage1(env, &config.bandit, &mut logs.stage1)?,
    };

    let outcome: Stage2Outcome = match config.mode {
        Mode::Full | Mode::NoStage1 => run_stage2(&*env, &selection, &config.stage2, &mut logs.stage2)?,
        Mode::NoStage2 => {
            let grid = grid_ratios(
                selection.selected_task_ids.len(),
                config.stage2.n_samples,
                config.stage2.ratio_max,
            );
            evaluate_ratios(&grid, &config.stage2, env_objective(&*env, &selection), &mut logs.stage2)?
        }
    };

    let n_tasks = env.n_tasks();
    let mut baseline = vec![0; n_tasks];
    baseline[config.bandit.primary_task_id] = 1;
    let baseline_score = env.train_full(&baseline, config.stage2.evaluation_seed(0))?;

    Ok(PipelineReport {
        mode: config.mode,
        best_ratio_full: outcome.best.ratio.expand(&selection.selected_task_ids, n_tasks)?,
        best_ratio: outcome.best.ratio,
        best_score: outcome.best.score,
        baseline_score,
        n_evaluations: outcome.records.len(),
        selection,
    })
}

/// Where a recorded log first differs from its re-execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    /// 1 or 2.
    pub stage: u8,
    /// 1-based round (line) of the first mismatch.
    pub round: usize,
}

/// 1-based index of the first line that differs, comparing raw bytes.
pub fn first_mismatch(recorded: &[u8], replayed: &[u8]) -> Option<usize> {
    let mut a = recorded.split_inclusive(|&b| b == b'\n');
    let mut b = replayed.split_inclusive(|&b| b == b'\n');
    let mut line = 1;
    loop {
        match (a.next(), b.next()) {
            (None, None) => return None,
            (x, y) if x != y => return Some(line),
            _ => line += 1,
        }
    }
}

/// Re-executes `config` and compares the regenerated JSON-lines logs with
/// the recorded ones byte for byte.
pub fn verify_replay(
    config: &PipelineConfig,
    recorded_stage1: &[u8],
    recorded_stage2: &[u8],
) -> Result<Option<Divergence>> {
    let mut logs = RunLog::default();
    run_pipeline(config, &mut logs)?;
    if let Some(round) = first_mismatch(recorded_stage1, to_jsonl(&logs.stage1).as_bytes()) {
        return Ok(Some(Divergence { stage: 1, round }));
    }
    if let Some(round) = first_mismatch(recorded_stage2, to_jsonl(&logs.stage2).as_bytes()) {
        return Ok(Some(Divergence { stage: 2, round }));
    }
    Ok(None)
}
