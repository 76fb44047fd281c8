use autosem_core::bandit::{run_stage1, sample_beta, sample_utilities, utility_density_table, BanditConfig, BetaArm};
use autosem_core::env::{PlantedBanditEnv, PlantedConfig, TaskEnvironment};
use autosem_core::seed::{derive_seed, rng_from_seed};
use rand_distr::{Beta, Distribution};

fn moments(draws: &[f64]) -> (f64, f64) {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn beta_draws_match_reference_sampler() {
    let shapes = [(1.0, 1.0), (3.0, 1.0), (0.3, 0.7), (12.5, 40.0), (0.05, 0.05), (200.0, 3.0)];
    let n = 100_000;
    for (i, &(a, b)) in shapes.iter().enumerate() {
        let arm = BetaArm::new(0, a, b).unwrap();
        let mut rng = rng_from_seed(i as u64);
        let ours: Vec<f64> = (0..n).map(|_| sample_beta(&arm, &mut rng)).collect();
        let reference = Beta::new(a, b).unwrap();
        let theirs: Vec<f64> = (0..n).map(|_| reference.sample(&mut rng)).collect();

        let (m1, v1) = moments(&ours);
        let (m2, v2) = moments(&theirs);
        let exact = a / (a + b);
        let se = (v1 / n as f64).sqrt();
        assert!((m1 - exact).abs() < 3.0 * se, "({a},{b}) mean {m1} vs {exact}");
        let diff_se = (v1 / n as f64 + v2 / n as f64).sqrt();
        assert!((m1 - m2).abs() < 4.0 * diff_se, "({a},{b}) ours {m1} reference {m2}");
        let exact_var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        assert!((v1 - exact_var).abs() < 0.05 * exact_var, "({a},{b}) var {v1} vs {exact_var}");
        assert!(ours.iter().all(|&x| x > 0.0 && x < 1.0));
    }
}

#[test]
fn sampled_utilities_follow_each_arm() {
    let arms = vec![
        BetaArm::new(0, 3.0, 1.0).unwrap(),
        BetaArm::new(1, 1.0, 3.0).unwrap(),
        BetaArm::new(2, 8.0, 8.0).unwrap(),
    ];
    let mut rng = rng_from_seed(5);
    let n = 100_000;
    let mut sums = [0.0; 3];
    for _ in 0..n {
        for (s, u) in sums.iter_mut().zip(sample_utilities(&arms, &mut rng).unwrap()) {
            *s += u;
        }
    }
    for (arm, s) in arms.iter().zip(sums) {
        let mean = s / n as f64;
        let (a, b) = (arm.alpha, arm.beta);
        let se = (a * b / ((a + b).powi(2) * (a + b + 1.0)) / n as f64).sqrt();
        assert!((mean - arm.expected_utility()).abs() < 3.0 * se);
    }
}

#[test]
fn planted_rewards_match_theta() {
    let theta = vec![0.5, 0.9, 0.7, 0.1];
    let mut env = PlantedBanditEnv::new(PlantedConfig { theta_star: theta.clone(), score_noise: 0.0 }).unwrap();
    env.reset(21);
    let n = 10_000;
    for (k, &t) in theta.iter().enumerate() {
        let mut successes = 0;
        for _ in 0..n {
            let before = env.validation_metric().unwrap();
            env.step(k, 1).unwrap();
            if env.validation_metric().unwrap() >= before {
                successes += 1;
            }
        }
        let mean = successes as f64 / n as f64;
        let se = (t * (1.0 - t) / n as f64).sqrt();
        assert!((mean - t).abs() < 3.0 * se, "task {k}: {mean} vs {t}");
    }
}

#[test]
fn useless_auxiliary_only_enters_through_top_two() {
    for seed in 0..20 {
        let mut env = PlantedBanditEnv::new(PlantedConfig { theta_star: vec![0.5, 0.0], score_noise: 0.0 }).unwrap();
        let config = BanditConfig {
            n_rounds: 200,
            rng_seed: derive_seed(seed, 1),
            ..BanditConfig::new(2)
        };
        let selection = run_stage1(&mut env, &config, &mut Vec::new()).unwrap();
        assert_eq!(selection.selected_task_ids, vec![0, 1]);
        assert!(selection.expected_utilities[1] < 0.5);
    }
}

#[test]
fn density_integrates_to_one() {
    let arms = vec![
        BetaArm::new(0, 3.0, 1.0).unwrap(),
        BetaArm::new(1, 1.0, 1.0).unwrap(),
        BetaArm::new(2, 20.0, 5.0).unwrap(),
        BetaArm::new(3, 1.3, 4.7).unwrap(),
    ];
    let grid = 1000;
    let rows = utility_density_table(&arms, grid).unwrap();
    assert_eq!(rows.len(), arms.len() * grid);
    for chunk in rows.chunks(grid) {
        let mut area = 0.0;
        for pair in chunk.windows(2) {
            area += 0.5 * (pair[0].density + pair[1].density) * (pair[1].theta - pair[0].theta);
        }
        assert!((area - 1.0).abs() < 0.01, "task {} area {area}", chunk[0].task_id);
    }
}

fn planted_recoveries(gamma: f64, seeds: u64) -> usize {
    (0..seeds)
        .filter(|&seed| {
            let mut env = PlantedBanditEnv::new(PlantedConfig::default()).unwrap();
            let config = BanditConfig {
                gamma,
                rng_seed: derive_seed(seed, 2),
                ..BanditConfig::new(5)
            };
            run_stage1(&mut env, &config, &mut Vec::new()).unwrap().selected_task_ids == [0, 1, 2]
        })
        .count()
}

#[test]
fn heavier_decay_recovers_less_often() {
    let light = planted_recoveries(BanditConfig::new(5).gamma, 400);
    let heavy = planted_recoveries(0.3, 400);
    assert!(light >= 360, "default gamma: {light}/400");
    assert!(heavy < light, "gamma 0.3: {heavy}/400");
}
