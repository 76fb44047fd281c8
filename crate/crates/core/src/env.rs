//! Task environments driven by both stages.
//!
//! Two synthetic families with known ground truth:
//!
//! - [`PlantedBanditEnv`]: each task's round reward is a literal
//!   `Bernoulli(θ*_k)` draw, and full-training scores come from a smooth
//!   closed-form surrogate of the mixing ratio.
//! - [`SharedParamMtlEnv`]: a shared linear model trained by SGD on a primary
//!   regression task plus auxiliaries that either share the primary's weights
//!   (useful) or use unrelated ones (harmful).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, SimRng};

/// What the controller needs from a multi-task training setup.
///
/// `validation_metric` must be a deterministic function of the reset seed and
/// the sequence of `step` calls; `train_full` must be a pure function of
/// `(ratio, seed)`.
pub trait TaskEnvironment {
    fn n_tasks(&self) -> usize;

    /// Restarts stage-1 training from scratch.
    fn reset(&mut self, seed: u64);

    /// Trains `batches` mini-batches of one task on the running model.
    fn step(&mut self, task_id: usize, batches: usize) -> Result<()>;

    /// Primary-task validation metric of the running model, in `[0, 1]`.
    fn validation_metric(&self) -> Result<f64>;

    /// Trains a fresh model under `ratio` (one count per task) and returns the
    /// end-of-training primary score.
    fn train_full(&self, ratio: &[u32], seed: u64) -> Result<f64>;
}

fn check_ratio(ratio: &[u32], n_tasks: usize) -> Result<()> {
    if ratio.len() != n_tasks {
        return Err(Error::Usage(format!(
            "ratio has {} entries for {} tasks",
            ratio.len(),
            n_tasks
        )));
    }
    if ratio[0] == 0 {
        return Err(Error::Usage("primary mixing count must be at least 1".into()));
    }
    Ok(())
}

fn check_task(task_id: usize, n_tasks: usize) -> Result<()> {
    if task_id >= n_tasks {
        return Err(Error::Usage(format!("task {task_id} out of range for {n_tasks} tasks")));
    }
    Ok(())
}

/// Cyclic alternate-batch schedule: `ratio[0]` batches of task 0, then
/// `ratio[1]` of task 1, and so on, repeating forever.
pub fn schedule(ratio: &[u32]) -> impl Iterator<Item = usize> + '_ {
    ratio
        .iter()
        .enumerate()
        .flat_map(|(task, &count)| std::iter::repeat_n(task, count as usize))
        .collect::<Vec<_>>()
        .into_iter()
        .cycle()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedConfig {
    /// True utility per task, primary first.
    pub theta_star: Vec<f64>,
    /// Standard deviation of seeded Gaussian noise on full-training scores.
    pub score_noise: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            theta_star: vec![0.5, 0.9, 0.9, 0.1, 0.1],
            score_noise: 0.002,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta_star.len() < 2 {
            return Err(Error::config("environment.theta_star", "need at least 2 tasks"));
        }
        if self.theta_star.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::config("environment.theta_star", "entries must lie in [0, 1]"));
        }
        if !(self.score_noise >= 0.0 && self.score_noise.is_finite()) {
            return Err(Error::config("environment.score_noise", "must be non-negative"));
        }
        Ok(())
    }
}

/// Steps from the origin needed to move the metric by ~0.001 at the start.
const PLANTED_METRIC_SCALE: f64 = 500.0;

/// Environment whose round rewards are exactly `Bernoulli(θ*_k)`.
///
/// The metric is a strictly increasing squash of an integer random walk, so
/// a success always keeps `metric_now >= metric_prev` and a failure always
/// lowers it, without ever saturating at the `[0, 1]` bounds.
#[derive(Debug, Clone)]
pub struct PlantedBanditEnv {
    config: PlantedConfig,
    level: i64,
    rng: SimRng,
}

impl PlantedBanditEnv {
    pub fn new(config: PlantedConfig) -> Result<Self> {
        config.validate()?;
        Ok(PlantedBanditEnv {
            config,
            level: 0,
            rng: rng_from_seed(0),
        })
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.config.theta_star
    }

    fn metric(&self) -> f64 {
        let l = self.level as f64;
        0.5 + 0.5 * l / (l.abs() + PLANTED_METRIC_SCALE)
    }

    /// One Bernoulli trial of `task_id`; returns the updated metric.
    pub fn planted_step(&mut self, task_id: usize) -> Result<f64> {
        check_task(task_id, self.n_tasks())?;
        let u: f64 = self.rng.random();
        if u < self.config.theta_star[task_id] {
            self.level += 1;
        } else {
            self.level -= 1;
        }
        Ok(self.metric())
    }

    /// Closed-form score surrogate: the primary share contributes
    /// `0.3·sqrt(f_0)` and each auxiliary `0.1·(2θ*_k − 1)·sqrt(f_k)`, where `f`
    /// are the normalized mixing shares. Auxiliaries with `θ* < 0.5` hurt at
    /// any non-zero share.
    pub fn expected_score(&self, ratio: &[u32]) -> f64 {
        let total: f64 = ratio.iter().map(|&c| f64::from(c)).sum();
        let mut score = 0.5;
        for (k, &count) in ratio.iter().enumerate() {
            let share = (f64::from(count) / total).sqrt();
            if k == 0 {
                score += 0.3 * share;
            } else {
                score += 0.1 * (2.0 * self.config.theta_star[k] - 1.0) * share;
            }
        }
        score
    }
}

impl TaskEnvironment for PlantedBanditEnv {
    fn n_tasks(&self) -> usize {
        self.config.theta_star.len()
    }

    fn reset(&mut self, seed: u64) {
        self.level = 0;
        self.rng = rng_from_seed(seed);
    }

    fn step(&mut self, task_id: usize, _batches: usize) -> Result<()> {
        self.planted_step(task_id).map(|_| ())
    }

    fn validation_metric(&self) -> Result<f64> {
        Ok(self.metric())
    }

    fn train_full(&self, ratio: &[u32], seed: u64) -> Result<f64> {
        check_ratio(ratio, self.n_tasks())?;
        let mut score = self.expected_score(ratio);
        if self.config.score_noise > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng_from_seed(seed));
            score += self.config.score_noise * z;
        }
        Ok(score.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxKind {
    /// Shares the primary weights up to a small task-specific perturbation.
    Useful,
    /// Independent random weights.
    Harmful,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharedLinearConfig {
    pub dim: usize,
    pub n_primary_train: usize,
    pub n_primary_heldout: usize,
    pub n_aux_examples: usize,
    pub auxiliaries: Vec<AuxKind>,
    /// Per-coordinate std of a useful auxiliary's weight perturbation.
    pub aux_weight_noise: f64,
    /// Gaussian label noise on every training example.
    pub label_noise: f64,
    pub total_batches: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for SharedLinearConfig {
    fn default() -> Self {
        SharedLinearConfig {
            dim: 16,
            n_primary_train: 32,
            n_primary_heldout: 256,
            n_aux_examples: 128,
            auxiliaries: vec![AuxKind::Useful, AuxKind::Useful, AuxKind::Harmful, AuxKind::Harmful],
            aux_weight_noise: 0.3,
            label_noise: 0.0,
            total_batches: 2000,
            batch_size: 8,
            learning_rate: 0.05,
        }
    }
}

impl SharedLinearConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("environment.dim", self.dim),
            ("environment.n_primary_train", self.n_primary_train),
            ("environment.n_primary_heldout", self.n_primary_heldout),
            ("environment.n_aux_examples", self.n_aux_examples),
            ("environment.total_batches", self.total_batches),
            ("environment.batch_size", self.batch_size),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.auxiliaries.is_empty() {
            return Err(Error::config("environment.auxiliaries", "need at least one auxiliary"));
        }
        for (key, value) in [
            ("environment.aux_weight_noise", self.aux_weight_noise),
            ("environment.label_noise", self.label_noise),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::config(key, "must be non-negative"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("environment.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Dataset {
    /// Inputs are `N(0, I/d)`, so targets have variance `|w|²/d`.
    fn generate(n: usize, weights: &[f64], label_noise: f64, rng: &mut SimRng) -> Self {
        let scale = (weights.len() as f64).sqrt().recip();
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..weights.len()).map(|_| scale * normal(rng)).collect();
            let noise: f64 = if label_noise > 0.0 {
                label_noise * normal(rng)
            } else {
                0.0
            };
            targets.push(dot(&x, weights) + noise);
            inputs.push(x);
        }
        Dataset { inputs, targets }
    }
}

fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Shared linear model trained by alternating-batch SGD.
#[derive(Debug, Clone)]
pub struct SharedParamMtlEnv {
    config: SharedLinearConfig,
    true_weights: Vec<f64>,
    /// Index 0 is the primary training set.
    tasks: Vec<Dataset>,
    heldout: Dataset,
    heldout_variance: f64,
    weights: Vec<f64>,
    rng: SimRng,
}

impl SharedParamMtlEnv {
    pub fn new(config: SharedLinearConfig, data_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(data_seed);
        let d = config.dim;
        let gaussian = |rng: &mut SimRng, scale: f64| -> Vec<f64> {
            (0..d)
                .map(|_| scale * normal(rng))
                .collect()
        };
        let true_weights = gaussian(&mut rng, 1.0);
        let mut tasks = vec![Dataset::generate(
            config.n_primary_train,
            &true_weights,
            config.label_noise,
            &mut rng,
        )];
        for kind in &config.auxiliaries {
            let weights = match kind {
                AuxKind::Useful => {
                    let eps = gaussian(&mut rng, config.aux_weight_noise);
                    true_weights.iter().zip(&eps).map(|(w, e)| w + e).collect()
                }
                AuxKind::Harmful => gaussian(&mut rng, 1.0),
            };
            tasks.push(Dataset::generate(
                config.n_aux_examples,
                &weights,
                config.label_noise,
                &mut rng,
            ));
        }
        let heldout = Dataset::generate(config.n_primary_heldout, &true_weights, 0.0, &mut rng);
        let mean = heldout.targets.iter().sum::<f64>() / heldout.targets.len() as f64;
        let heldout_variance = heldout
            .targets
            .iter()
            .map(|y| (y - mean).powi(2))
            .sum::<f64>()
            / heldout.targets.len() as f64;
        Ok(SharedParamMtlEnv {
            weights: vec![0.0; d],
            config,
            true_weights,
            tasks,
            heldout,
            heldout_variance: heldout_variance.max(f64::MIN_POSITIVE),
            rng: rng_from_seed(0),
        })
    }

    pub fn config(&self) -> &SharedLinearConfig {
        &self.config
    }

    pub fn true_weights(&self) -> &[f64] {
        &self.true_weights
    }

    /// `1 − MSE / Var(y)` on the held-out primary set, clamped to `[0, 1]`.
    pub fn score_weights(&self, weights: &[f64]) -> f64 {
        let mse = self
            .heldout
            .inputs
            .iter()
            .zip(&self.heldout.targets)
            .map(|(x, y)| (dot(x, weights) - y).powi(2))
            .sum::<f64>()
            / self.heldout.targets.len() as f64;
        (1.0 - mse / self.heldout_variance).clamp(0.0, 1.0)
    }

    fn sgd_step(&self, weights: &mut [f64], task: usize, rng: &mut SimRng) {
        let data = &self.tasks[task];
        let n = data.targets.len();
        let mut grad = vec![0.0; weights.len()];
        for _ in 0..self.config.batch_size {
            let i = rng.random_range(0..n);
            let x = &data.inputs[i];
            let residual = dot(x, weights) - data.targets[i];
            for (g, xj) in grad.iter_mut().zip(x) {
                *g += residual * xj;
            }
        }
        let scale = self.config.learning_rate / self.config.batch_size as f64;
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= scale * g;
        }
    }

    /// Full training run under `ratio`; also returns the final weights.
    pub fn train_weights(&self, ratio: &[u32], seed: u64) -> Result<Vec<f64>> {
        check_ratio(ratio, self.n_tasks())?;
        let mut rng = rng_from_seed(derive_seed(seed, 0));
        let mut weights = vec![0.0; self.config.dim];
        for task in schedule(ratio).take(self.config.total_batches) {
            self.sgd_step(&mut weights, task, &mut rng);
        }
        Ok(weights)
    }
}

impl TaskEnvironment for SharedParamMtlEnv {
    fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn reset(&mut self, seed: u64) {
        self.weights = vec![0.0; self.config.dim];
        self.rng = rng_from_seed(seed);
    }

    fn step(&mut self, task_id: usize, batches: usize) -> Result<()> {
        check_task(task_id, self.n_tasks())?;
        let mut weights = std::mem::take(&mut self.weights);
        let mut rng = self.rng.clone();
        for _ in 0..batches {
            self.sgd_step(&mut weights, task_id, &mut rng);
        }
        self.weights = weights;
        self.rng = rng;
        Ok(())
    }

    fn validation_metric(&self) -> Result<f64> {
        Ok(self.score_weights(&self.weights))
    }

    fn train_full(&self, ratio: &[u32], seed: u64) -> Result<f64> {
        let weights = self.train_weights(ratio, seed)?;
        Ok(self.score_weights(&weights))
    }
}

/// Environment family and parameters, as declared in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum EnvSpec {
    Planted(PlantedConfig),
    SharedLinear(SharedLinearConfig),
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Planted(PlantedConfig::default())
    }
}

impl EnvSpec {
    pub fn n_tasks(&self) -> usize {
        match self {
            EnvSpec::Planted(c) => c.theta_star.len(),
            EnvSpec::SharedLinear(c) => c.auxiliaries.len() + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::Planted(c) => c.validate(),
            EnvSpec::SharedLinear(c) => c.validate(),
        }
    }

    pub fn build(&self, data_seed: u64) -> Result<Box<dyn TaskEnvironment + Send>> {
        Ok(match self {
            EnvSpec::Planted(c) => Box::new(PlantedBanditEnv::new(c.clone())?),
            EnvSpec::SharedLinear(c) => Box::new(SharedParamMtlEnv::new(c.clone(), data_seed)?),
        })
    }
}
