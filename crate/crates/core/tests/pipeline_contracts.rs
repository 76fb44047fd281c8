use std::cell::Cell;

use autosem_core::env::{AuxKind, PlantedConfig, SharedLinearConfig};
use autosem_core::log::to_jsonl;
use autosem_core::mixing::{optimize, random_search, run_stage2};
use autosem_core::pipeline::{run_pipeline, run_pipeline_with_env};
use autosem_core::seed::derive_seed;
use autosem_core::{
    BanditConfig, EnvSpec, Error, Mode, PipelineConfig, PlantedBanditEnv, Result, RunLog, Stage2Config,
    TaskEnvironment, TaskSelection,
};

/// Delegates to an inner environment, counting full trainings and failing
/// on the `fail_at`-th one.
struct Instrumented<E> {
    inner: E,
    trainings: Cell<usize>,
    fail_at: Option<usize>,
}

impl<E> Instrumented<E> {
    fn new(inner: E) -> Self {
        Instrumented { inner, trainings: Cell::new(0), fail_at: None }
    }
}

impl<E: TaskEnvironment> TaskEnvironment for Instrumented<E> {
    fn n_tasks(&self) -> usize {
        self.inner.n_tasks()
    }

    fn reset(&mut self, seed: u64) {
        self.inner.reset(seed)
    }

    fn step(&mut self, task_id: usize, batches: usize) -> Result<()> {
        self.inner.step(task_id, batches)
    }

    fn validation_metric(&self) -> Result<f64> {
        self.inner.validation_metric()
    }

    fn train_full(&self, ratio: &[u32], seed: u64) -> Result<f64> {
        let n = self.trainings.get() + 1;
        self.trainings.set(n);
        if self.fail_at == Some(n) {
            return Err(Error::Environment("worker lost".into()));
        }
        self.inner.train_full(ratio, seed)
    }
}

fn planted_env() -> PlantedBanditEnv {
    PlantedBanditEnv::new(PlantedConfig::default()).unwrap()
}

fn planted_config(seed: u64) -> PipelineConfig {
    PipelineConfig::new(EnvSpec::Planted(PlantedConfig::default()), seed)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn budget_is_n_samples_plus_baseline() {
    for mode in [Mode::Full, Mode::NoStage1, Mode::NoStage2] {
        let mut config = planted_config(3);
        config.mode = mode;
        config.stage2.n_samples = 12;
        let mut env = Instrumented::new(planted_env());
        let report = run_pipeline_with_env(&config, &mut env, &mut RunLog::default()).unwrap();
        assert_eq!(env.trainings.get(), 13, "{mode:?}");
        assert_eq!(report.n_evaluations, 12);
    }
}

#[test]
fn one_gp_proposal_after_three_initial() {
    let env = planted_env();
    let selection = TaskSelection::all(&BanditConfig::new(5).initial_arms(), 0);
    let config = Stage2Config { n_initial: 3, n_samples: 4, ..Stage2Config::default() };
    let mut log = Vec::new();
    let outcome = run_stage2(&env, &selection, &config, &mut log).unwrap();
    assert_eq!(outcome.records.len(), 4);
    assert_eq!(log.iter().filter(|r| r.acquisition_used.is_some()).count(), 1);
    assert!(log[3].acquisition_used.is_some());
}

#[test]
fn incumbent_never_decreases_and_seeds_are_fresh() {
    let env = planted_env();
    let selection = TaskSelection::all(&BanditConfig::new(5).initial_arms(), 0);
    for seed in 0..5 {
        let config = Stage2Config { rng_seed: seed, ..Stage2Config::default() };
        let mut log = Vec::new();
        let outcome = run_stage2(&env, &selection, &config, &mut log).unwrap();
        for pair in log.windows(2) {
            assert!(pair[1].incumbent >= pair[0].incumbent);
        }
        let best = log.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(outcome.best.score, best);
        assert_eq!(log.last().unwrap().incumbent, best);
        let mut seeds: Vec<u64> = log.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), log.len());
        for r in &log {
            assert!(r.proposed_ratio[0] >= 1 && r.proposed_ratio.iter().all(|&c| c <= 20));
        }
    }
}

#[test]
fn failures_keep_partial_logs() {
    let mut config = planted_config(4);
    config.stage2.n_samples = 10;
    let mut env = Instrumented::new(planted_env());
    env.fail_at = Some(7);
    let mut logs = RunLog::default();
    let err = run_pipeline_with_env(&config, &mut env, &mut logs).unwrap_err();
    assert!(matches!(err, Error::Environment(_)));
    assert_eq!(logs.stage1.len(), config.bandit.n_rounds);
    assert_eq!(logs.stage2.len(), 6);
}

#[test]
fn pipeline_is_deterministic() {
    let specs = [
        EnvSpec::Planted(PlantedConfig::default()),
        EnvSpec::SharedLinear(SharedLinearConfig::default()),
    ];
    for spec in specs {
        for mode in [Mode::Full, Mode::NoStage1, Mode::NoStage2] {
            let mut config = PipelineConfig::new(spec.clone(), 9);
            config.mode = mode;
            let run = || {
                let mut logs = RunLog::default();
                let report = run_pipeline(&config, &mut logs).unwrap();
                (
                    serde_json::to_string(&report).unwrap(),
                    to_jsonl(&logs.stage1),
                    to_jsonl(&logs.stage2),
                )
            };
            assert_eq!(run(), run());
        }
    }
}

#[test]
fn planted_full_mode_recovers_useful_tasks() {
    let mut hits = 0;
    for seed in 0..20 {
        let report = run_pipeline(&planted_config(seed), &mut RunLog::default()).unwrap();
        let ids = &report.selection.selected_task_ids;
        assert_eq!(ids[0], 0);
        if ids.contains(&1) && ids.contains(&2) && report.best_score >= report.baseline_score {
            hits += 1;
        }
    }
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn stage2_beats_random_on_planted_surrogate() {
    let env = planted_env();
    let selection = TaskSelection::all(&BanditConfig::new(5).initial_arms(), 0);
    let mut wins = 0;
    for seed in 0..50 {
        let config = Stage2Config { rng_seed: derive_seed(seed, 7), ..Stage2Config::default() };
        let objective = |r: &autosem_core::MixingRatio, s: u64| env.train_full(r.counts(), s);
        let gp = optimize(5, &config, objective, &mut Vec::new()).unwrap();
        let random = random_search(5, &config, objective, &mut Vec::new()).unwrap();
        if gp.best.score >= random.best.score {
            wins += 1;
        }
    }
    assert!(wins >= 35, "{wins}/50");
}

fn six_aux() -> SharedLinearConfig {
    use AuxKind::*;
    SharedLinearConfig {
        auxiliaries: vec![Useful, Useful, Useful, Harmful, Harmful, Harmful],
        ..SharedLinearConfig::default()
    }
}

#[test]
fn full_matches_or_beats_no_stage1() {
    let mut full = Vec::new();
    let mut no_stage1 = Vec::new();
    for seed in 0..20 {
        let mut config = PipelineConfig::new(EnvSpec::SharedLinear(six_aux()), seed);
        full.push(run_pipeline(&config, &mut RunLog::default()).unwrap().best_score);
        config.mode = Mode::NoStage1;
        no_stage1.push(run_pipeline(&config, &mut RunLog::default()).unwrap().best_score);
    }
    assert!(median(full) >= median(no_stage1));
}

#[test]
fn all_harmful_auxiliaries_are_mostly_dropped() {
    let config = SharedLinearConfig {
        auxiliaries: vec![AuxKind::Harmful; 2],
        ..SharedLinearConfig::default()
    };
    let mut dropped = 0;
    for seed in 0..20 {
        let env = autosem_core::SharedParamMtlEnv::new(config.clone(), derive_seed(seed, 100)).unwrap();
        let selection = TaskSelection::all(&BanditConfig::new(3).initial_arms(), 0);
        let stage2 = Stage2Config { rng_seed: derive_seed(seed, 400), ..Stage2Config::default() };
        let outcome = run_stage2(&env, &selection, &stage2, &mut Vec::new()).unwrap();
        if outcome.best.ratio.counts()[1..].iter().sum::<u32>() <= 2 {
            dropped += 1;
        }
    }
    assert!(dropped >= 16, "{dropped}/20");
}
