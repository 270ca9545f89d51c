use metaloss::adalfl::{
    lr_hypergradient, meta_lr_train, offline_init, online_train, AdaConfig, MetaSource,
};
use metaloss::evomal::{
    evaluate_fitness, evolve, evolve_from, evolve_tasks, EvoError, MetaConfig, MetaProblem,
    Verdict, WORST_FITNESS,
};
use metaloss::harness::{
    make_synthetic_regression, make_two_moons, split_metric, split_rows, MlpModel, OptimizerConfig,
    Split, Targets, TrainConfig,
};
use metaloss::lossnet::{transition, WeightInit};
use metaloss::rng::{derive_rng, rng_from};
use metaloss::symbolic::{ExprTree, GpConfig};
use metaloss::{Task, TaskKind, Tensor};

fn quick(seed: u64) -> MetaConfig {
    MetaConfig {
        meta_steps: 10,
        rejection_steps: 30,
        workers: 2,
        base: TrainConfig {
            steps: 40,
            eval_every: 0,
            optimizer: OptimizerConfig::sgd(0.05),
            seed,
            ..TrainConfig::default()
        },
        ..MetaConfig::default()
    }
}

/// Two uniform clusters with a margin around the line `x0 + x1 = 0`.
fn separable(seed: u64) -> Task {
    let n = 200;
    let mut rng = rng_from(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        use rand::Rng;
        let label = i % 2;
        let side = if label == 1 { 1.0 } else { -1.0 };
        let a: f64 = rng.random_range(-2.0..2.0);
        let margin: f64 = rng.random_range(0.3..2.0);
        xs.push(a + side * margin);
        xs.push(-a + side * margin);
        ys.push(label as f64);
    }
    let (train, valid, test) = split_rows(n, &mut rng);
    Task {
        name: "separable".into(),
        kind: TaskKind::Classification,
        x: Tensor::from_rows(n, 2, xs),
        y: ys,
        classes: 2,
        train,
        valid,
        test,
        norm: None,
    }
}

fn net(expr: &str, nonneg: bool) -> metaloss::lossnet::LossNetwork {
    let t: ExprTree = expr.parse().unwrap();
    transition(&t, WeightInit::Unit, nonneg, &mut rng_from(0))
}

#[test]
fn squared_error_hypergradient_matches_differences() {
    let model = MlpModel::new(1, &[], 1);
    let problem = MetaProblem {
        model: &model,
        kind: TaskKind::Regression,
        theta0: vec![
            Tensor::from_rows(1, 1, vec![0.5]),
            Tensor::from_rows(1, 1, vec![0.1]),
        ],
        alpha: 0.2,
        inner: vec![(
            Tensor::column(vec![1.0, 2.0, -1.0]),
            Targets::Values(vec![2.0, 4.1, -1.9]),
        )],
        outer: (
            Tensor::column(vec![0.5, -2.0]),
            Targets::Values(vec![1.0, -4.0]),
        ),
    };
    let n = net("square(sub(y, f))", false);
    let w = n.weights().to_vec();
    let (_, g) = problem.gradient(&n, &w).unwrap();
    let h = 1e-6;
    for i in 0..w.len() {
        let mut up = w.clone();
        up[i] += h;
        let mut down = w.clone();
        down[i] -= h;
        let num = (problem.objective(&n, &up).unwrap() - problem.objective(&n, &down).unwrap())
            / (2.0 * h);
        assert!(
            (num - g[i]).abs() <= 1e-4 * g[i].abs().max(1.0),
            "{num} vs {}",
            g[i]
        );
    }
}

#[test]
fn cross_entropy_surrogate_separates_linear_data() {
    let task = separable(1);
    let cfg = MetaConfig {
        base: TrainConfig {
            steps: 500,
            hidden: vec![],
            eval_every: 0,
            optimizer: OptimizerConfig::sgd(0.1),
            seed: 1,
            ..TrainConfig::default()
        },
        ..MetaConfig::default()
    };
    let ce = net("mul(-1, mul(y, log(f)))", false);
    assert!(evaluate_fitness(&ce, &task, &cfg).unwrap() < 0.05);
}

#[test]
fn constant_loss_leaves_the_model_untrained() {
    let task = make_synthetic_regression(2, 120, 0.1).unwrap();
    let cfg = quick(2);
    let fit = evaluate_fitness(&net("add(1, -1)", false), &task, &cfg).unwrap();
    let model = cfg.base.model(&task);
    let theta = model.init(&mut derive_rng(2, &[metaloss::harness::INIT_STREAM]));
    assert_eq!(fit, split_metric(&model, &theta, &task, Split::Valid));
}

#[test]
fn cached_fitness_matches_fresh_evaluation() {
    let task = make_synthetic_regression(3, 120, 0.1).unwrap();
    let cfg = quick(3);
    let gp = GpConfig {
        population_size: 10,
        generations: 2,
        seed: 3,
        ..GpConfig::default()
    };
    let r = evolve(&gp, &cfg, &task).unwrap();
    let evaluated: Vec<_> = r
        .ranked
        .iter()
        .filter(|rec| rec.verdict == Verdict::Evaluated)
        .collect();
    assert!(!evaluated.is_empty());
    for rec in evaluated {
        assert_eq!(
            rec.fitness,
            evaluate_fitness(&rec.network, &task, &cfg).unwrap()
        );
    }
    for rec in r
        .ranked
        .iter()
        .filter(|rec| rec.verdict == Verdict::Rejected)
    {
        assert_eq!(rec.fitness, WORST_FITNESS);
        assert!(rec.rejection_score <= 0.0 || rec.rejection_score.is_nan());
    }
    // with any finite candidate around, the best of every generation is finite
    for g in &r.generations {
        assert!(g.best_fitness < WORST_FITNESS);
    }
}

#[test]
fn task_lists_share_one_search() {
    let tasks = vec![
        make_synthetic_regression(4, 100, 0.1).unwrap(),
        make_synthetic_regression(5, 100, 0.3).unwrap(),
    ];
    let gp = GpConfig {
        population_size: 6,
        generations: 1,
        seed: 4,
        ..GpConfig::default()
    };
    let pop = vec![
        "square(sub(y, f))".parse().unwrap(),
        "abs(sub(f, y))".parse().unwrap(),
    ];
    let cfg = quick(4);
    let r = evolve_from(&gp, &cfg, &tasks, pop, |_| {}).unwrap();
    let best = r.best().unwrap();
    assert!(best.fitness < WORST_FITNESS);
    let per_task: f64 = tasks
        .iter()
        .map(|t| evaluate_fitness(&best.network, t, &cfg).unwrap())
        .sum::<f64>()
        / 2.0;
    assert_eq!(best.fitness, per_task);
    let mixed = vec![tasks[0].clone(), make_two_moons(4, 100, 0.1).unwrap()];
    assert!(matches!(
        evolve_tasks(&gp, &quick(4), &mixed, |_| {}),
        Err(EvoError::Config(_))
    ));
}

#[test]
fn learning_rate_hypergradient_points_at_the_optimum() {
    // single weight, same batch before and after the step: the meta loss
    // is quadratic in alpha with its minimum at 1 / mean(x^2)
    let model = MlpModel::new(1, &[], 1);
    let theta = vec![
        Tensor::from_rows(1, 1, vec![0.0]),
        Tensor::from_rows(1, 1, vec![0.0]),
    ];
    let batch = (
        Tensor::column(vec![1.0, -1.0, 2.0, -2.0]),
        Targets::Values(vec![2.0, -2.0, 4.0, -4.0]),
    );
    let kind = TaskKind::Regression;
    let (_, small) = lr_hypergradient(&model, &theta, 0.01, kind, &batch, &batch).unwrap();
    let (_, large) = lr_hypergradient(&model, &theta, 0.5, kind, &batch, &batch).unwrap();
    assert!(small < 0.0, "{small}");
    assert!(large > 0.0, "{large}");
}

#[test]
fn meta_lr_grows_a_too_small_rate() {
    let task = make_synthetic_regression(6, 200, 0.1).unwrap();
    let cfg = AdaConfig {
        online_lr: 1e-3,
        train: TrainConfig {
            steps: 100,
            eval_every: 50,
            seed: 6,
            ..TrainConfig::default()
        },
        ..AdaConfig::default()
    };
    let (_, report) = meta_lr_train(1e-3, &task, &cfg).unwrap();
    let last = *report.alpha_trace.last().unwrap();
    assert!(last > 1e-3, "{last}");
    assert_eq!(report.alpha_trace.len(), 101);
}

#[test]
fn meta_source_changes_the_run() {
    let task = make_synthetic_regression(7, 200, 0.3).unwrap();
    let base = AdaConfig {
        init_steps: 10,
        train: TrainConfig {
            steps: 50,
            eval_every: 25,
            seed: 7,
            ..TrainConfig::default()
        },
        snapshot_every: 25,
        ..AdaConfig::default()
    };
    let valid = AdaConfig {
        meta_source: MetaSource::Valid,
        ..base.clone()
    };
    let run = |cfg: &AdaConfig| {
        let net = offline_init(&cfg.initial_net(), &task, cfg).unwrap();
        online_train(&net, &task, cfg).unwrap().2
    };
    let (a, b) = (run(&base), run(&valid));
    assert_ne!(a.meta_loss, b.meta_loss);
    assert_eq!(a.snapshots.len(), b.snapshots.len());
    assert_eq!(a.snapshots.len(), 3);
}
