//! Stage 1: non-stationary Beta-Bernoulli bandit with Thompson sampling.
//!
//! Each task is an arm whose utility `θ_k` is the probability that training a
//! round of its mini-batches improves (or maintains) the primary task's
//! validation metric. Beliefs are `Beta(α_k, β_k)`; every round all arms are
//! decayed toward the prior `(α0, β0)` by `γ` and the pulled arm then receives
//! the conjugate `(r, 1 - r)` increment.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::env::TaskEnvironment;
use crate::error::{Error, Result};
use crate::log::Stage1Record;
use crate::seed::{derive_seed, rng_from_seed, stream};

/// Beta belief over one task's utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaArm {
    pub task_id: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl BetaArm {
    pub fn new(task_id: usize, alpha: f64, beta: f64) -> Result<Self> {
        let arm = BetaArm {
            task_id,
            alpha,
            beta,
        };
        arm.validate()?;
        Ok(arm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.beta > 0.0 && self.beta.is_finite())
        {
            return Err(Error::Domain(format!(
                "arm {} has invalid shape ({}, {})",
                self.task_id, self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn expected_utility(&self) -> f64 {
        expected_utility(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub n_tasks: usize,
    pub alpha0: f64,
    pub beta0: f64,
    /// Non-stationarity decay toward the prior, in `[0, 1]`.
    pub gamma: f64,
    /// Added to the primary arm's initial alpha.
    pub primary_prior_boost: f64,
    pub primary_task_id: usize,
    pub n_rounds: usize,
    pub batches_per_round: usize,
    pub rng_seed: u64,
}

impl BanditConfig {
    pub fn new(n_tasks: usize) -> Self {
        BanditConfig {
            n_tasks,
            alpha0: 1.0,
            beta0: 1.0,
            gamma: 0.01,
            primary_prior_boost: 2.0,
            primary_task_id: 0,
            n_rounds: 200,
            batches_per_round: 10,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks < 2 {
            return Err(Error::config("n_tasks", "need at least 2 tasks"));
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::config("alpha0", "must be positive"));
        }
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::config("beta0", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", format!("{} is outside [0, 1]", self.gamma)));
        }
        if !(self.primary_prior_boost >= 0.0 && self.primary_prior_boost.is_finite()) {
            return Err(Error::config("primary_prior_boost", "must be non-negative"));
        }
        if self.primary_task_id >= self.n_tasks {
            return Err(Error::config("primary_task_id", "must index one of the tasks"));
        }
        if self.batches_per_round == 0 {
            return Err(Error::config("batches_per_round", "must be at least 1"));
        }
        Ok(())
    }

    /// Arms at round zero: `(α0, β0)` everywhere, with the primary boosted.
    pub fn initial_arms(&self) -> Vec<BetaArm> {
        (0..self.n_tasks)
            .map(|k| {
                let boost = if k == self.primary_task_id {
                    self.primary_prior_boost
                } else {
                    0.0
                };
                BetaArm {
                    task_id: k,
                    alpha: self.alpha0 + boost,
                    beta: self.beta0,
                }
            })
            .collect()
    }
}

/// One reward event of the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardObservation {
    pub round: usize,
    pub selected_arm: usize,
    pub reward: u8,
    pub metric_now: f64,
    pub metric_prev: f64,
}

/// Tasks carried into Stage 2, primary first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSelection {
    pub selected_task_ids: Vec<usize>,
    /// Indexed by task id, covering every task.
    pub expected_utilities: Vec<f64>,
}

impl TaskSelection {
    /// Every task selected; used when Stage 1 is skipped.
    pub fn all(arms: &[BetaArm], primary_task_id: usize) -> Self {
        let mut ids = vec![primary_task_id];
        ids.extend((0..arms.len()).filter(|&k| k != primary_task_id));
        TaskSelection {
            selected_task_ids: ids,
            expected_utilities: arms.iter().map(expected_utility).collect(),
        }
    }

    pub fn auxiliaries(&self) -> &[usize] {
        &self.selected_task_ids[1..]
    }
}

/// Beta density at `theta`.
pub fn beta_pdf(theta: f64, arm: &BetaArm) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Domain(format!("theta {theta} is outside (0, 1)")));
    }
    arm.validate()?;
    let (a, b) = (arm.alpha, arm.beta);
    let log_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let log_kernel = (a - 1.0) * theta.ln() + (b - 1.0) * (-theta).ln_1p();
    Ok((log_norm + log_kernel).exp())
}

pub fn expected_utility(arm: &BetaArm) -> f64 {
    arm.alpha / (arm.alpha + arm.beta)
}

/// Marsaglia-Tsang Gamma(shape, 1) sampler.
fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        // Gamma(a) = Gamma(a + 1) * U^(1/a)
        let u: f64 = rng.random();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// One Beta draw, kept strictly inside `(0, 1)`.
pub fn sample_beta<R: Rng + ?Sized>(arm: &BetaArm, rng: &mut R) -> f64 {
    let x = sample_gamma(arm.alpha, rng);
    let y = sample_gamma(arm.beta, rng);
    let draw = x / (x + y);
    if draw.is_nan() {
        // Both gammas underflowed to zero; only possible for tiny shapes.
        return expected_utility(arm);
    }
    draw.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// One independent posterior draw per arm, in arm order.
pub fn sample_utilities<R: Rng + ?Sized>(arms: &[BetaArm], rng: &mut R) -> Result<Vec<f64>> {
    arms.iter()
        .map(|arm| {
            arm.validate()?;
            Ok(sample_beta(arm, rng))
        })
        .collect()
}

/// Argmax of the sampled utilities; ties go to the lowest index.
pub fn select_arm(sampled_utilities: &[f64]) -> Result<usize> {
    if sampled_utilities.is_empty() {
        return Err(Error::Usage("select_arm needs at least one utility".into()));
    }
    let mut best = 0;
    for (k, &u) in sampled_utilities.iter().enumerate().skip(1) {
        if u > sampled_utilities[best] {
            best = k;
        }
    }
    Ok(best)
}

/// 1 when the metric improved or held, else 0. No epsilon.
pub fn compute_reward(metric_now: f64, metric_prev: f64) -> Result<u8> {
    if !metric_now.is_finite() || !metric_prev.is_finite() {
        return Err(Error::Data(format!(
            "non-finite metric (now={metric_now}, prev={metric_prev})"
        )));
    }
    Ok(u8::from(metric_now >= metric_prev))
}

/// Decays every arm toward the prior, then credits the selected arm.
pub fn update_posterior(
    arms: &mut [BetaArm],
    selected_arm: usize,
    reward: u8,
    config: &BanditConfig,
) -> Result<()> {
    if selected_arm >= arms.len() {
        return Err(Error::Usage(format!(
            "selected arm {selected_arm} out of range for {} arms",
            arms.len()
        )));
    }
    if reward > 1 {
        return Err(Error::Usage(format!("reward must be 0 or 1, got {reward}")));
    }
    let keep = 1.0 - config.gamma;
    for (k, arm) in arms.iter_mut().enumerate() {
        let mut alpha = keep * arm.alpha + config.gamma * config.alpha0;
        let mut beta = keep * arm.beta + config.gamma * config.beta0;
        if k == selected_arm {
            alpha += f64::from(reward);
            beta += f64::from(1 - reward);
        }
        arm.alpha = alpha;
        arm.beta = beta;
    }
    Ok(())
}

/// Top two auxiliaries by expected utility, plus any auxiliary above 0.5.
/// The primary task always leads the list; auxiliaries follow in id order.
pub fn select_tasks(arms: &[BetaArm], primary_task_id: usize) -> TaskSelection {
    let utilities: Vec<f64> = arms.iter().map(expected_utility).collect();
    let mut ranked: Vec<usize> = (0..arms.len()).filter(|&k| k != primary_task_id).collect();
    // Stable sort keeps lower ids first among equal utilities.
    ranked.sort_by(|&a, &b| utilities[b].total_cmp(&utilities[a]));
    let mut chosen: Vec<usize> = ranked
        .iter()
        .enumerate()
        .filter(|&(rank, &k)| rank < 2 || utilities[k] > 0.5)
        .map(|(_, &k)| k)
        .collect();
    chosen.sort_unstable();
    let mut selected_task_ids = vec![primary_task_id];
    selected_task_ids.extend(chosen);
    TaskSelection {
        selected_task_ids,
        expected_utilities: utilities,
    }
}

/// Row of the utility density table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub task_id: usize,
    pub theta: f64,
    pub density: f64,
}

/// Beta densities of each arm on the interior grid `θ_i = (i + 1) / (grid_size + 1)`.
pub fn utility_density_table(arms: &[BetaArm], grid_size: usize) -> Result<Vec<DensityRow>> {
    if grid_size < 2 {
        return Err(Error::Usage("grid_size must be at least 2".into()));
    }
    let step = 1.0 / (grid_size as f64 + 1.0);
    let mut rows = Vec::with_capacity(arms.len() * grid_size);
    for arm in arms {
        for i in 0..grid_size {
            let theta = (i as f64 + 1.0) * step;
            rows.push(DensityRow {
                task_id: arm.task_id,
                theta,
                density: beta_pdf(theta, arm)?,
            });
        }
    }
    Ok(rows)
}

/// Stage-1 bandit loop.
///
/// Records are appended to `log` as rounds complete, so on an environment
/// failure the caller still holds every finished round.
pub fn run_stage1<E: TaskEnvironment + ?Sized>(
    env: &mut E,
    config: &BanditConfig,
    log: &mut Vec<Stage1Record>,
) -> Result<TaskSelection> {
    config.validate()?;
    if env.n_tasks() != config.n_tasks {
        return Err(Error::Usage(format!(
            "environment has {} tasks but the bandit expects {}",
            env.n_tasks(),
            config.n_tasks
        )));
    }
    let mut rng = rng_from_seed(derive_seed(config.rng_seed, stream::BANDIT));
    env.reset(derive_seed(config.rng_seed, stream::STAGE1_ENV));

    let mut arms = config.initial_arms();
    let mut metric_prev = env.validation_metric()?;
    for round in 1..=config.n_rounds {
        let sampled = sample_utilities(&arms, &mut rng)?;
        let selected = select_arm(&sampled)?;
        env.step(selected, config.batches_per_round)?;
        let metric_now = env.validation_metric()?;
        let reward = compute_reward(metric_now, metric_prev)?;
        update_posterior(&mut arms, selected, reward, config)?;
        log.push(Stage1Record {
            round,
            sampled_thetas: sampled,
            selected_arm: selected,
            reward,
            metric: metric_now,
            arms_after: arms.iter().map(|a| (a.alpha, a.beta)).collect(),
        });
        metric_prev = metric_now;
    }
    Ok(select_tasks(&arms, config.primary_task_id))
}

/// Rebuilds arm states from the last record of a stage-1 log.
pub fn arms_from_record(record: &Stage1Record) -> Result<Vec<BetaArm>> {
    record
        .arms_after
        .iter()
        .enumerate()
        .map(|(k, &(alpha, beta))| BetaArm::new(k, alpha, beta))
        .collect()
}
