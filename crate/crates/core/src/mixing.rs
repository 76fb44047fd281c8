//! Stage 2: Bayesian optimization of the task mixing ratio.
//!
//! Ratios live on the integer grid `{0..=ratio_max}^K` (primary at least 1)
//! and are encoded into the unit box for the GP. Each round fits a GP to all
//! scores so far, lets PI, EI and UCB each nominate the best point of a
//! random candidate pool, and picks one nominee through GP-Hedge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{hedge_select, hedge_update, Acquisition, HedgeState};
use crate::bandit::TaskSelection;
use crate::env::TaskEnvironment;
use crate::error::{Error, Result};
use crate::gp::{fit, FitOptions, GpModel, Posterior, Smoothness};
use crate::log::Stage2Record;
use crate::seed::{derive_seed, rng_from_seed, stream};

/// Mini-batch counts per Stage-2 task, primary first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixingRatio {
    counts: Vec<u32>,
}

impl MixingRatio {
    pub fn new(counts: Vec<u32>, ratio_max: u32) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Usage("mixing ratio needs at least one task".into()));
        }
        if counts[0] == 0 {
            return Err(Error::Usage("primary mixing count must be at least 1".into()));
        }
        if let Some(c) = counts.iter().find(|&&c| c > ratio_max) {
            return Err(Error::Usage(format!("mixing count {c} exceeds ratio_max {ratio_max}")));
        }
        Ok(MixingRatio { counts })
    }

    /// Primary-only ratio over `n` tasks.
    pub fn single_task(n: usize) -> Self {
        let mut counts = vec![0; n];
        counts[0] = 1;
        MixingRatio { counts }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Spreads the counts onto the environment's task ids; unselected tasks get 0.
    pub fn expand(&self, task_ids: &[usize], n_tasks: usize) -> Result<Vec<u32>> {
        if task_ids.len() != self.counts.len() {
            return Err(Error::Usage(format!(
                "{} counts for {} selected tasks",
                self.counts.len(),
                task_ids.len()
            )));
        }
        let mut full = vec![0; n_tasks];
        for (&task, &count) in task_ids.iter().zip(&self.counts) {
            let slot = full
                .get_mut(task)
                .ok_or_else(|| Error::Usage(format!("task {task} out of range")))?;
            *slot = count;
        }
        Ok(full)
    }
}

impl std::fmt::Display for MixingRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.counts.iter().map(u32::to_string).collect();
        f.write_str(&parts.join(":"))
    }
}

pub fn encode(ratio: &MixingRatio, ratio_max: u32) -> Vec<f64> {
    let max = f64::from(ratio_max);
    ratio.counts.iter().map(|&c| f64::from(c) / max).collect()
}

/// Rounds each coordinate to the grid; the primary is clamped to at least 1.
pub fn decode(x: &[f64], ratio_max: u32) -> MixingRatio {
    let max = f64::from(ratio_max);
    let mut counts: Vec<u32> = x
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * max).round() as u32)
        .collect();
    if let Some(primary) = counts.first_mut() {
        *primary = (*primary).max(1);
    }
    MixingRatio { counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    /// Random ratios evaluated before the GP takes over.
    pub n_initial: usize,
    /// Total evaluation budget, including the initial ones.
    pub n_samples: usize,
    pub ratio_max: u32,
    pub rng_seed: u64,
    pub nu: Smoothness,
    /// UCB exploration weight.
    pub lambda: f64,
    /// Hedge temperature.
    pub eta: f64,
    /// Random candidates scored per proposal.
    pub pool_size: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            n_initial: 5,
            n_samples: 20,
            ratio_max: 20,
            rng_seed: 0,
            nu: Smoothness::FiveHalves,
            lambda: 2.0,
            eta: 1.0,
            pool_size: 2000,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_initial < 1 {
            return Err(Error::config("stage2.n_initial", "must be at least 1"));
        }
        if self.n_samples <= self.n_initial {
            return Err(Error::config(
                "stage2.n_samples",
                format!("must exceed n_initial ({})", self.n_initial),
            ));
        }
        if self.ratio_max < 1 {
            return Err(Error::config("stage2.ratio_max", "must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("stage2.lambda", "must be non-negative"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config("stage2.eta", "must be non-negative"));
        }
        if self.pool_size < 1 {
            return Err(Error::config("stage2.pool_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Seed handed to the environment for evaluation `round` (1-based).
    pub fn evaluation_seed(&self, round: usize) -> u64 {
        derive_seed(self.rng_seed, round as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub ratio: MixingRatio,
    pub score: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Outcome {
    pub best: EvaluationRecord,
    pub records: Vec<EvaluationRecord>,
}

/// Uniform valid ratio: primary in `1..=max`, auxiliaries in `0..=max`.
pub fn random_ratio<R: Rng + ?Sized>(n_tasks: usize, ratio_max: u32, rng: &mut R) -> MixingRatio {
    let counts = (0..n_tasks)
        .map(|k| {
            let lo = u32::from(k == 0);
            rng.random_range(lo..=ratio_max)
        })
        .collect();
    MixingRatio { counts }
}

/// Index of the first pool point maximizing `acquisition`.
pub fn nominate(
    posteriors: &[Posterior],
    acquisition: Acquisition,
    tau: f64,
    lambda: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, post) in posteriors.iter().enumerate() {
        let value = acquisition.score(post, tau, lambda);
        if best.is_none_or(|(_, b)| value > b) {
            best = Some((i, value));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub ratio: MixingRatio,
    pub acquisition: Acquisition,
    /// Posterior at the chosen point, in the model's units.
    pub posterior: Posterior,
    /// Each acquisition's nominee, PI, EI, UCB order.
    pub nominees: [Vec<f64>; 3],
}

/// Scores a candidate pool and picks one acquisition's nominee.
///
/// The pool is `pool_size` uniform points, the ±1-step grid neighbours of
/// `incumbent`, and copies of `incumbent` with one or all auxiliaries set to
/// zero, all snapped to the ratio grid. `tau` is the best observation
/// in the model's units.
pub fn propose_next<R: Rng + ?Sized>(
    model: &GpModel,
    hedge: &mut HedgeState,
    incumbent: &[f64],
    tau: f64,
    config: &Stage2Config,
    rng: &mut R,
) -> Result<Proposal> {
    if !model.is_fitted() {
        return Err(Error::Usage("propose_next needs a fitted GP".into()));
    }
    let dim = model.dim();
    let step = 1.0 / f64::from(config.ratio_max);
    let mut pool: Vec<Vec<f64>> = (0..config.pool_size)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    for axis in 0..dim {
        for delta in [-step, step] {
            let mut x = incumbent.to_vec();
            x[axis] = (x[axis] + delta).clamp(0.0, 1.0);
            pool.push(x);
        }
    }
    for axis in 1..dim {
        let mut x = incumbent.to_vec();
        x[axis] = 0.0;
        pool.push(x);
    }
    if dim > 2 {
        let mut x = vec![0.0; dim];
        x[0] = incumbent[0];
        pool.push(x);
    }
    for x in &mut pool {
        *x = encode(&decode(x, config.ratio_max), config.ratio_max);
    }

    let posteriors = pool
        .iter()
        .map(|x| model.posterior_at(x))
        .collect::<Result<Vec<_>>>()?;
    let pick = |acq| nominate(&posteriors, acq, tau, config.lambda).expect("pool is non-empty");
    let picks = Acquisition::ALL.map(pick);
    let nominees = picks.map(|i| pool[i].clone());

    let chosen = hedge_select(hedge, rng);
    hedge_update(hedge, &nominees, model)?;
    let index = picks[chosen.index()];
    Ok(Proposal {
        ratio: decode(&pool[index], config.ratio_max),
        acquisition: chosen,
        posterior: posteriors[index],
        nominees,
    })
}

/// Standardizes scores so the GP hyperparameter bounds fit any score scale.
fn standardize(scores: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (scores.iter().map(|s| (s - mean) / scale).collect(), mean, scale)
}

struct Tracker<'a> {
    records: Vec<EvaluationRecord>,
    best: Option<usize>,
    log: &'a mut Vec<Stage2Record>,
}

impl Tracker<'_> {
    fn push(
        &mut self,
        ratio: MixingRatio,
        score: f64,
        seed: u64,
        acquisition: Option<Acquisition>,
        posterior: Option<Posterior>,
        gains: Option<[f64; 3]>,
    ) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Data(format!("non-finite score for ratio {ratio}")));
        }
        // Strict comparison: the earliest of equal scores stays incumbent.
        if self.best.is_none_or(|b| score > self.records[b].score) {
            self.best = Some(self.records.len());
        }
        let round = self.records.len() + 1;
        let incumbent = match self.best {
            Some(b) if b < self.records.len() => self.records[b].score,
            _ => score,
        };
        self.log.push(Stage2Record {
            round,
            proposed_ratio: ratio.counts.clone(),
            acquisition_used: acquisition,
            posterior_mean: posterior.map(|p| p.mean),
            posterior_std: posterior.map(|p| p.std),
            score,
            incumbent,
            gains,
            seed,
        });
        self.records.push(EvaluationRecord { ratio, score, seed });
        Ok(())
    }

    fn finish(self) -> Result<Stage2Outcome> {
        let best = self
            .best
            .map(|b| self.records[b].clone())
            .ok_or_else(|| Error::Usage("no evaluations were made".into()))?;
        Ok(Stage2Outcome {
            best,
            records: self.records,
        })
    }
}

/// Bayesian optimization over `n_tasks`-entry ratios of an arbitrary objective.
///
/// `objective(ratio, seed)` is called exactly `config.n_samples` times.
/// Log records are appended as evaluations complete.
pub fn optimize<F>(
    n_tasks: usize,
    config: &Stage2Config,
    mut objective: F,
    log: &mut Vec<Stage2Record>,
) -> Result<Stage2Outcome>
where
    F: FnMut(&MixingRatio, u64) -> Result<f64>,
{
    config.validate()?;
    if n_tasks == 0 {
        return Err(Error::Usage("stage 2 needs at least the primary task".into()));
    }
    let mut rng = rng_from_seed(derive_seed(config.rng_seed, stream::STAGE2));
    let mut hedge = HedgeState::new(config.eta);
    let mut tracker = Tracker {
        records: Vec::with_capacity(config.n_samples),
        best: None,
        log,
    };

    for round in 1..=config.n_samples {
        let seed = config.evaluation_seed(round);
        if round <= config.n_initial {
            let ratio = random_ratio(n_tasks, config.ratio_max, &mut rng);
            let score = objective(&ratio, seed)?;
            tracker.push(ratio, score, seed, None, None, None)?;
            continue;
        }

        let points: Vec<Vec<f64>> = tracker
            .records
            .iter()
            .map(|r| encode(&r.ratio, config.ratio_max))
            .collect();
        let raw: Vec<f64> = tracker.records.iter().map(|r| r.score).collect();
        let (ys, mean, scale) = standardize(&raw);
        let options = FitOptions {
            nu: config.nu,
            seed: derive_seed(config.rng_seed ^ stream::GP_FIT, round as u64),
            ..FitOptions::default()
        };
        let model = fit(points, ys, &options)?;
        let best = tracker.best.expect("initial rounds ran");
        let incumbent = encode(&tracker.records[best].ratio, config.ratio_max);
        let tau = (tracker.records[best].score - mean) / scale;
        let proposal = propose_next(&model, &mut hedge, &incumbent, tau, config, &mut rng)?;

        let score = objective(&proposal.ratio, seed)?;
        let posterior = Posterior {
            mean: proposal.posterior.mean * scale + mean,
            std: proposal.posterior.std * scale,
        };
        tracker.push(
            proposal.ratio,
            score,
            seed,
            Some(proposal.acquisition),
            Some(posterior),
            Some(hedge.gains),
        )?;
    }
    tracker.finish()
}

/// Evaluates a fixed list of ratios under the per-round seed protocol.
pub fn evaluate_ratios<F>(
    ratios: &[MixingRatio],
    config: &Stage2Config,
    mut objective: F,
    log: &mut Vec<Stage2Record>,
) -> Result<Stage2Outcome>
where
    F: FnMut(&MixingRatio, u64) -> Result<f64>,
{
    let mut tracker = Tracker {
        records: Vec::with_capacity(ratios.len()),
        best: None,
        log,
    };
    for (i, ratio) in ratios.iter().enumerate() {
        let seed = config.evaluation_seed(i + 1);
        let score = objective(ratio, seed)?;
        tracker.push(ratio.clone(), score, seed, None, None, None)?;
    }
    tracker.finish()
}

/// Pure random search with the same budget, RNG stream and seeds as
/// [`optimize`]; its first `n_initial` ratios coincide with the optimizer's.
pub fn random_search<F>(
    n_tasks: usize,
    config: &Stage2Config,
    objective: F,
    log: &mut Vec<Stage2Record>,
) -> Result<Stage2Outcome>
where
    F: FnMut(&MixingRatio, u64) -> Result<f64>,
{
    config.validate()?;
    let mut rng = rng_from_seed(derive_seed(config.rng_seed, stream::STAGE2));
    let ratios: Vec<MixingRatio> = (0..config.n_samples)
        .map(|_| random_ratio(n_tasks, config.ratio_max, &mut rng))
        .collect();
    evaluate_ratios(&ratios, config, objective, log)
}

/// Wraps an environment as a Stage-2 objective over the selected tasks.
pub fn env_objective<'a, E: TaskEnvironment + ?Sized>(
    env: &'a E,
    tasks: &'a TaskSelection,
) -> impl FnMut(&MixingRatio, u64) -> Result<f64> + 'a {
    move |ratio, seed| {
        let full = ratio.expand(&tasks.selected_task_ids, env.n_tasks())?;
        env.train_full(&full, seed)
    }
}

/// Stage-2 loop against an environment.
pub fn run_stage2<E: TaskEnvironment + ?Sized>(
    env: &E,
    tasks: &TaskSelection,
    config: &Stage2Config,
    log: &mut Vec<Stage2Record>,
) -> Result<Stage2Outcome> {
    optimize(tasks.selected_task_ids.len(), config, env_objective(env, tasks), log)
}
