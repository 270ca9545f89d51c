use std::fmt::Write as _;
use std::fs;
use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use metaloss::adalfl::{
    meta_lr_train, offline_init, online_train, snapshot_grid, AdaConfig, AdaReport, MetaArch,
    MetaSource,
};
use metaloss::autodiff::scalar::log_sum_exp;
use metaloss::evomal::{evolve_with, FitnessRecord, MetaConfig, Verdict, WORST_FITNESS};
use metaloss::harness::{
    load_csv_task, load_idx_images, make_synthetic_regression, make_two_moons,
    train as train_model, HarnessError, OptimizerConfig, TrainConfig,
};
use metaloss::losses::{
    delta_behavior, lsr, lsr_from_lse, sparse_lsr, sparse_lsr_from_lse, DeltaLoss, NoCount, Regime,
};
use metaloss::lossnet::WeightInit;
use metaloss::presets;
use metaloss::rng::derive_rng;
use metaloss::symbolic::GpConfig;
use metaloss::{LossArtifact, LossFn, LossSpec, Tape, Task, TaskKind, Tensor};

use crate::output::{line_plot, write_atomic, Series};
use crate::{
    AdaptArgs, AnalyzeArgs, Arch, BaseArgs, CliError, EvolveArgs, Init, KindArg, LrSweepArgs, Mode,
    Optimizer, RegimeArg, Source, SparseLsrArgs, TaskArgs, TrainArgs,
};

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn kind_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Regression => "regression",
        TaskKind::Classification => "classification",
    }
}

fn load_task(args: &TaskArgs, default: &str, seed: u64) -> Result<Task, CliError> {
    let spec = args.task.as_deref().unwrap_or(default);
    let generated =
        |rows: usize, noise: f64| (args.rows.unwrap_or(rows), args.noise.unwrap_or(noise));
    let file_only = || {
        if args.rows.is_some() || args.noise.is_some() {
            Err(config("--rows and --noise apply to generated tasks only"))
        } else {
            Ok(())
        }
    };
    let task = match spec {
        "synth-reg" => {
            let (n, noise) = generated(presets::SYNTH_REG_ROWS, presets::SYNTH_REG_NOISE);
            make_synthetic_regression(seed, n, noise)?
        }
        "two-moons" => {
            let (n, noise) = generated(presets::TWO_MOONS_ROWS, presets::TWO_MOONS_NOISE);
            make_two_moons(seed, n, noise)?
        }
        s if s.starts_with("csv:") => {
            file_only()?;
            let rest = &s[4..];
            let (path, kind) = rest
                .rsplit_once(':')
                .ok_or_else(|| config("csv task needs csv:PATH:regression|classification"))?;
            let kind = match kind {
                "regression" => TaskKind::Regression,
                "classification" => TaskKind::Classification,
                other => return Err(config(format!("unknown task kind `{other}`"))),
            };
            load_csv_task(Path::new(path), kind, seed)?
        }
        s if s.starts_with("idx:") => {
            file_only()?;
            let (images, labels) = s[4..]
                .split_once(':')
                .ok_or_else(|| config("idx task needs idx:IMAGES:LABELS"))?;
            load_idx_images(Path::new(images), Path::new(labels), None, seed)?
        }
        other => return Err(config(format!("unknown task `{other}`"))),
    };
    Ok(task)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| config(format!("bad {what} entry `{p}`")))
        })
        .collect()
}

fn optimizer(kind: Optimizer, lr: f64) -> OptimizerConfig {
    match kind {
        Optimizer::Sgd => OptimizerConfig::sgd(lr),
        Optimizer::Momentum => OptimizerConfig::momentum(lr),
        Optimizer::Adam => OptimizerConfig::adam(lr),
    }
}

/// Apply base-training flags on top of a preset.
fn base_config(
    base: &BaseArgs,
    mut cfg: TrainConfig,
    opt: Optimizer,
) -> Result<TrainConfig, CliError> {
    if let Some(s) = base.steps {
        cfg.steps = s;
    }
    if let Some(b) = base.batch {
        if b == 0 {
            return Err(config("--batch must be positive"));
        }
        cfg.batch_size = b;
    }
    let lr = base.lr.unwrap_or(cfg.optimizer.lr());
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(config("--lr must be positive"));
    }
    cfg.optimizer = optimizer(opt, lr);
    if let Some(h) = &base.hidden {
        cfg.hidden = parse_list(h, "hidden width")?;
        if cfg.hidden.contains(&0) {
            return Err(config("hidden widths must be positive"));
        }
    }
    Ok(cfg)
}

fn default_train(task: &Task, seed: u64) -> TrainConfig {
    match (task.name.as_str(), task.kind) {
        ("two-moons", _) => presets::two_moons_train(seed),
        (_, TaskKind::Regression) => TrainConfig {
            eval_every: 100,
            ..presets::synth_regression_train(seed)
        },
        _ => TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialise");
    s.push('\n');
    s
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Evaluated => "evaluated",
        Verdict::EquivHit => "equiv-hit",
        Verdict::Rejected => "rejected",
        Verdict::GradDup => "grad-dup",
        Verdict::Failed => "failed",
    }
}

fn show_fitness(f: f64) -> String {
    if f == WORST_FITNESS {
        "worst".into()
    } else if f.is_nan() {
        "n/a".into()
    } else {
        format!("{f:.6}")
    }
}

fn ranked_entry(rank: usize, rec: &FitnessRecord) -> serde_json::Value {
    serde_json::json!({
        "rank": rank,
        "expression": rec.network.expression_string(),
        "fitness": rec.fitness,
        "verdict": verdict_name(rec.verdict),
        "generation": rec.generation,
        "rejection_score": rec.rejection_score,
        "artifact": LossArtifact::Network(rec.network.clone()),
    })
}

pub fn evolve(a: EvolveArgs) -> Result<(), CliError> {
    let seed = a.common.seed;
    let task = load_task(&a.task, "synth-reg", seed)?;
    let (mut cfg, mut gp) = match task.kind {
        TaskKind::Regression => (
            presets::synth_regression_meta(seed, a.workers),
            presets::synth_regression_gp(seed),
        ),
        TaskKind::Classification => (
            MetaConfig {
                base: TrainConfig {
                    steps: 500,
                    eval_every: 0,
                    seed,
                    ..TrainConfig::default()
                },
                workers: a.workers,
                ..MetaConfig::default()
            },
            GpConfig {
                population_size: 25,
                generations: 10,
                seed,
                ..GpConfig::default()
            },
        ),
    };
    cfg.base = base_config(&a.base, cfg.base, Optimizer::Sgd)?;
    cfg.base.eval_every = 0;
    cfg.local_search = !a.no_local_search;
    cfg.weight_init = match a.init {
        Init::Gaussian => WeightInit::Gaussian,
        Init::Unit => WeightInit::Unit,
    };
    if let Some(m) = a.meta_steps {
        cfg.meta_steps = m;
    }
    if let Some(m) = a.meta_lr {
        cfg.meta_lr = m;
    }
    if let Some(g) = a.gens {
        gp.generations = g;
    }
    if let Some(p) = a.pop {
        gp.population_size = p;
    }

    let report = evolve_with(&gp, &cfg, &task, |g| {
        eprintln!(
            "generation {:>3}: best {} mean {} ({} evaluated, {} cached, {} rejected, {} duplicate gradients)",
            g.generation,
            show_fitness(g.best_fitness),
            show_fitness(g.mean_fitness),
            g.evaluated,
            g.cache_hits,
            g.rejected,
            g.grad_dups
        );
    })?;
    let best = report
        .best()
        .ok_or_else(|| CliError::Numeric("search produced no candidates".into()))?;

    let mode = if cfg.local_search { "evomal" } else { "gp-lfl" };
    let ranked: Vec<_> = report
        .ranked
        .iter()
        .enumerate()
        .map(|(i, r)| ranked_entry(i + 1, r))
        .collect();
    let doc = serde_json::json!({
        "task": task.name,
        "kind": kind_name(task.kind),
        "mode": mode,
        "seed": seed,
        "population": gp.population_size,
        "generations": gp.generations,
        "losses": ranked,
    });
    let out = &a.common.out;
    write_atomic(&out.join("losses.json"), json(&doc).as_bytes())?;
    write_atomic(
        &out.join("best_loss.json"),
        (LossArtifact::Network(best.network.clone()).to_json() + "\n").as_bytes(),
    )?;
    write_atomic(
        &out.join("generations.csv"),
        report.generations_csv().as_bytes(),
    )?;

    let count = |v: Verdict| report.ranked.iter().filter(|r| r.verdict == v).count();
    let mut summary = String::new();
    let _ = writeln!(summary, "task: {} ({})", task.name, kind_name(task.kind));
    let _ = writeln!(summary, "mode: {mode}, seed {seed}");
    let _ = writeln!(
        summary,
        "population {} over {} generations",
        gp.population_size, gp.generations
    );
    let _ = writeln!(
        summary,
        "distinct candidates: {} ({} evaluated, {} rejected, {} duplicate gradients, {} failed)",
        report.ranked.len(),
        count(Verdict::Evaluated),
        count(Verdict::Rejected),
        count(Verdict::GradDup),
        count(Verdict::Failed)
    );
    let _ = writeln!(
        summary,
        "best expression: {}",
        best.network.expression_string()
    );
    let _ = writeln!(summary, "best fitness: {}", show_fitness(best.fitness));
    let _ = writeln!(summary, "edge weights: {:?}", best.network.weights());
    write_atomic(&out.join("summary.txt"), summary.as_bytes())?;

    println!("best: {}", best.network.expression_string());
    println!("fitness: {}", show_fitness(best.fitness));
    Ok(())
}

/// Surface plot series: one line per label value for classification,
/// error on the x axis for regression.
fn surface_series(kind: TaskKind, grid: &[(f64, f64)], values: &[f64], tag: &str) -> Vec<Series> {
    match kind {
        TaskKind::Regression => vec![Series {
            label: tag.to_string(),
            points: grid
                .iter()
                .zip(values)
                .map(|(&(y, f), &v)| (y - f, v))
                .collect(),
        }],
        TaskKind::Classification => [0.0, 1.0]
            .iter()
            .map(|&yv| Series {
                label: format!("{tag} y={yv}"),
                points: grid
                    .iter()
                    .zip(values)
                    .filter(|((y, _), _)| *y == yv)
                    .map(|(&(_, f), &v)| (f, v))
                    .collect(),
            })
            .collect(),
    }
}

fn surface_labels(kind: TaskKind) -> (&'static str, &'static str) {
    match kind {
        TaskKind::Regression => ("error y - f", "loss"),
        TaskKind::Classification => ("prediction f", "loss"),
    }
}

fn write_snapshots(out: &Path, kind: TaskKind, report: &AdaReport) -> Result<(), CliError> {
    write_atomic(
        &out.join("snapshots.csv"),
        report.snapshots_csv().as_bytes(),
    )?;
    let n = report.snapshots.len();
    // at most five evenly spaced snapshots keep the plot readable
    let mut picks: Vec<usize> = (0..5.min(n))
        .map(|i| {
            if n < 2 {
                0
            } else {
                i * (n - 1) / 4.min(n - 1).max(1)
            }
        })
        .collect();
    picks.dedup();
    let series: Vec<Series> = picks
        .iter()
        .flat_map(|&i| {
            let snap = &report.snapshots[i];
            surface_series(
                kind,
                &report.grid,
                &snap.values,
                &format!("step {}", snap.step),
            )
        })
        .collect();
    let (xl, yl) = surface_labels(kind);
    write_atomic(
        &out.join("snapshots.svg"),
        line_plot("learned loss over training", xl, yl, &series).as_bytes(),
    )
}

pub fn adapt(a: AdaptArgs) -> Result<(), CliError> {
    let seed = a.common.seed;
    let task = load_task(&a.task, "two-moons", seed)?;
    let mut cfg = if task.name == "two-moons" {
        presets::two_moons_adapt(seed)
    } else {
        AdaConfig {
            train: default_train(&task, seed),
            ..AdaConfig::default()
        }
    };
    cfg.train = base_config(&a.base, cfg.train, Optimizer::Sgd)?;
    if let Some(e) = a.eval_every {
        cfg.train.eval_every = e;
    }
    if let Some(v) = a.init_steps {
        cfg.init_steps = v;
    }
    if let Some(v) = a.offline_lr {
        cfg.offline_lr = v;
    }
    if let Some(v) = a.online_lr {
        cfg.online_lr = v;
    }
    if let Some(v) = a.snapshot_every {
        cfg.snapshot_every = v;
    }
    if let Some(v) = a.meta_hidden {
        cfg.meta_hidden = v;
    }
    cfg.meta_source = match a.meta_source {
        Source::Train => MetaSource::Train,
        Source::Valid => MetaSource::Valid,
    };
    cfg.arch = match a.arch {
        Arch::SmoothLeaky => MetaArch::SmoothLeaky,
        Arch::ReluSoftplus => MetaArch::ReluSoftplus,
    };
    let out = &a.common.out;

    let report = match a.mode {
        Mode::MetaLr => {
            let (_, report) = meta_lr_train(cfg.train.optimizer.lr(), &task, &cfg)?;
            let mut csv = String::from("step,alpha\n");
            for (i, v) in report.alpha_trace.iter().enumerate() {
                let _ = writeln!(csv, "{i},{v:e}");
            }
            write_atomic(&out.join("alpha.csv"), csv.as_bytes())?;
            println!(
                "final rate: {}",
                report.alpha_trace.last().copied().unwrap_or(f64::NAN)
            );
            report
        }
        Mode::Online | Mode::Offline => {
            if a.mode == Mode::Offline {
                // a zero online rate freezes the loss after initialisation
                cfg.online_lr = 0.0;
            }
            let net = offline_init(&cfg.initial_net(), &task, &cfg)?;
            let (_, net, report) = online_train(&net, &task, &cfg)?;
            write_atomic(
                &out.join("meta_loss.json"),
                (LossArtifact::MetaMlp(net).to_json() + "\n").as_bytes(),
            )?;
            write_snapshots(out, task.kind, &report)?;
            println!("shape change: {:.6}", report.shape_change());
            report
        }
    };
    write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    write_atomic(&out.join("report.json"), json(&report).as_bytes())?;
    println!(
        "train {:.6} valid {:.6} test {:.6}",
        report.final_train_metric, report.final_valid_metric, report.final_test_metric
    );
    Ok(())
}

fn read_artifact(path: &Path) -> Result<LossArtifact, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    LossArtifact::from_json(&text)
        .map_err(|e| config(format!("{}: not a loss artifact: {e}", path.display())))
}

fn named_loss(name: &str, kind: TaskKind) -> Result<LossSpec, CliError> {
    let spec: LossSpec = name
        .parse()
        .map_err(|e: metaloss::losses::LossError| config(e.to_string()))?;
    if spec.kind() != kind {
        return Err(config(format!(
            "loss `{spec}` does not apply to {} tasks",
            kind_name(kind)
        )));
    }
    Ok(spec)
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let seed = a.common.seed;
    let task = load_task(&a.task, "two-moons", seed)?;
    let mut cfg = base_config(&a.base, default_train(&task, seed), a.optimizer)?;
    if let Some(e) = a.eval_every {
        cfg.eval_every = e;
    }
    let loss = match (&a.loss, &a.artifact) {
        (_, Some(path)) => LossFn::from(read_artifact(path)?),
        (Some(name), None) => LossFn::Named(named_loss(name, task.kind)?),
        (None, None) => LossFn::Named(match task.kind {
            TaskKind::Classification => LossSpec::CrossEntropy,
            TaskKind::Regression => "squared".parse().expect("built-in loss name"),
        }),
    };
    let report = train_model(&task, &loss, &cfg)?;
    let out = &a.common.out;
    write_atomic(&out.join("report.json"), json(&report).as_bytes())?;
    write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    println!("loss: {}", report.loss);
    println!(
        "train {:.6} valid {:.6} test {:.6}",
        report.final_train_metric, report.final_valid_metric, report.final_test_metric
    );
    Ok(())
}

type Surface = (TaskKind, Vec<(f64, f64)>, Vec<f64>);

/// Loss values on the snapshot grid for a name or an artifact path.
fn surface(spec: &str, kind_arg: KindArg) -> Result<Surface, CliError> {
    let path = PathBuf::from(spec);
    if path.extension().is_some_and(|e| e == "json") {
        let kind = match kind_arg {
            KindArg::Regression => TaskKind::Regression,
            KindArg::Classification => TaskKind::Classification,
        };
        let grid = snapshot_grid(kind);
        let values = match read_artifact(&path)? {
            LossArtifact::Network(n) => grid.iter().map(|&(y, f)| n.eval_one(y, f)).collect(),
            LossArtifact::MetaMlp(m) => m.shape_on(&grid),
        };
        return Ok((kind, grid, values));
    }
    let loss: LossSpec = spec
        .parse()
        .map_err(|e: metaloss::losses::LossError| config(e.to_string()))?;
    let kind = loss.kind();
    let grid = snapshot_grid(kind);
    let mut values = Vec::with_capacity(grid.len());
    for &(y, f) in &grid {
        let tape = Tape::new();
        let v = match kind {
            // binary view: the output holds probability f and is the target when y = 1
            TaskKind::Classification => {
                let p = if y == 1.0 { f } else { 1.0 - f };
                let logits = tape.constant(Tensor::from_rows(1, 2, vec![p.ln(), (1.0 - p).ln()]));
                loss.classification(logits, &[0])
            }
            TaskKind::Regression => loss.regression(
                tape.constant(Tensor::column(vec![f])),
                tape.constant(Tensor::column(vec![y])),
            ),
        }
        .map_err(|e| config(e.to_string()))?;
        values.push(v.item());
    }
    Ok((kind, grid, values))
}

pub fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    if a.classes < 2 {
        return Err(config("--classes must be at least 2"));
    }
    if !(a.eps > 0.0 && a.eps * (a.classes as f64 - 1.0) < 1.0) {
        return Err(config("--eps must be positive and below 1/(classes-1)"));
    }
    if !(0.0..=1.0).contains(&a.xi) {
        return Err(config("--xi must lie in [0, 1]"));
    }
    let (regime, regime_name) = match a.regime {
        RegimeArg::Null => (Regime::NullEpoch, "null"),
        RegimeArg::Zero => (Regime::ZeroError, "zero"),
    };
    let rows = [
        DeltaLoss::CrossEntropy,
        DeltaLoss::Ace {
            phi0: 1.0,
            phi1: 1.0,
        },
        DeltaLoss::Ace {
            phi0: 1.0,
            phi1: 1.5,
        },
        DeltaLoss::Lsr { xi: a.xi },
    ];
    let mut csv = String::from("loss,regime,classes,target,nontarget\n");
    println!("{:<12} {:>14} {:>14}", "loss", "target", "nontarget");
    for loss in rows {
        let r = delta_behavior(loss, regime, a.classes, a.eps);
        let _ = writeln!(
            csv,
            "{},{regime_name},{},{},{}",
            loss.name(),
            a.classes,
            r.target,
            r.nontarget
        );
        println!(
            "{:<12} {:>14.6} {:>14.6}",
            loss.name(),
            r.target,
            r.nontarget
        );
    }
    let out = &a.common.out;
    write_atomic(&out.join("delta.csv"), csv.as_bytes())?;

    if let Some(spec) = &a.surface {
        let (kind, grid, values) = surface(spec, a.kind)?;
        let mut csv = String::from("y,f,value\n");
        for (&(y, f), v) in grid.iter().zip(&values) {
            let _ = writeln!(csv, "{y},{f},{v:e}");
        }
        write_atomic(&out.join("surface.csv"), csv.as_bytes())?;
        let (xl, yl) = surface_labels(kind);
        let svg = line_plot(spec, xl, yl, &surface_series(kind, &grid, &values, "loss"));
        write_atomic(&out.join("surface.svg"), svg.as_bytes())?;
    }
    Ok(())
}

/// Median over `repeats` of the mean time of `passes` calls, in ns.
fn median_ns(repeats: usize, passes: usize, mut f: impl FnMut() -> f64) -> f64 {
    let mut samples: Vec<f64> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..passes {
                black_box(f());
            }
            t.elapsed().as_nanos() as f64 / passes as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let m = samples.len() / 2;
    if samples.len().is_multiple_of(2) {
        (samples[m - 1] + samples[m]) / 2.0
    } else {
        samples[m]
    }
}

pub fn bench_sparse_lsr(a: SparseLsrArgs) -> Result<(), CliError> {
    let classes: Vec<usize> = parse_list(&a.classes, "class count")?;
    if classes.is_empty() || classes.iter().any(|&c| c < 2) {
        return Err(config("--classes needs counts of at least 2"));
    }
    if a.batch == 0 || a.repeats == 0 || a.passes == 0 {
        return Err(config("--batch, --repeats and --passes must be positive"));
    }
    let mut csv = String::from("classes,time_ns_sparse,time_ns_nonsparse\n");
    for &c in &classes {
        let mut rng = derive_rng(a.common.seed, &[c as u64]);
        let logits: Vec<Vec<f64>> = (0..a.batch)
            .map(|_| (0..c).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let targets: Vec<usize> = (0..a.batch).map(|_| rng.random_range(0..c)).collect();
        let lse: Vec<f64> = logits.iter().map(|z| log_sum_exp(z)).collect();
        let xi = a.xi;
        let batch_sum = |one: &dyn Fn(usize, &[f64], f64) -> f64| {
            let mut s = 0.0;
            for ((z, &t), &l) in logits.iter().zip(&targets).zip(&lse) {
                s += one(t, black_box(z), l);
            }
            s
        };
        let (sparse, dense) = if a.include_lse {
            (
                median_ns(a.repeats, a.passes, || {
                    batch_sum(&|t, z, _| sparse_lsr(t, z, xi))
                }),
                median_ns(a.repeats, a.passes, || batch_sum(&|t, z, _| lsr(t, z, xi))),
            )
        } else {
            (
                median_ns(a.repeats, a.passes, || {
                    batch_sum(&|t, z, l| sparse_lsr_from_lse(t, z, l, xi, &mut NoCount))
                }),
                median_ns(a.repeats, a.passes, || {
                    batch_sum(&|t, z, l| lsr_from_lse(t, z, l, xi, &mut NoCount))
                }),
            )
        };
        let _ = writeln!(csv, "{c},{sparse:.1},{dense:.1}");
    }
    print!("{csv}");
    write_atomic(&a.common.out.join("sparse_lsr.csv"), csv.as_bytes())
}

pub fn bench_lr_sweep(a: LrSweepArgs) -> Result<(), CliError> {
    let seed = a.common.seed;
    let task = load_task(&a.task, "two-moons", seed)?;
    let lrs: Vec<f64> = parse_list(&a.lrs, "learning rate")?;
    if lrs.is_empty() || lrs.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(config("--lrs needs positive rates"));
    }
    if a.seeds == 0 {
        return Err(config("--seeds must be positive"));
    }
    let names = a.losses.clone().unwrap_or_else(|| {
        match task.kind {
            TaskKind::Classification => "ce,lsr:0.1,sparse-lsr:0.1,focal:2",
            TaskKind::Regression => "squared,pseudo-huber:1,cauchy:1",
        }
        .to_string()
    });
    let losses: Vec<LossSpec> = names
        .split(',')
        .map(|n| named_loss(n.trim(), task.kind))
        .collect::<Result<_, _>>()?;
    let base = base_config(&a.base, default_train(&task, seed), a.optimizer)?;

    let jobs: Vec<(usize, usize, u64)> = (0..losses.len())
        .flat_map(|li| (0..lrs.len()).flat_map(move |ri| (0..a.seeds).map(move |s| (li, ri, s))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers)
        .build()
        .map_err(|e| config(e.to_string()))?;
    let results: Vec<Result<f64, HarnessError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(li, ri, s)| {
                let cfg = TrainConfig {
                    optimizer: optimizer(a.optimizer, lrs[ri]),
                    seed: seed.wrapping_add(s),
                    eval_every: 0,
                    ..base.clone()
                };
                train_model(&task, &LossFn::Named(losses[li]), &cfg).map(|r| r.final_test_metric)
            })
            .collect()
    });

    let mut csv = String::from("loss,lr,mean_metric,diverged\n");
    let mut series = Vec::new();
    for (li, loss) in losses.iter().enumerate() {
        let mut points = Vec::new();
        for (ri, &lr) in lrs.iter().enumerate() {
            let mut vals = Vec::new();
            let mut diverged = 0;
            for (job, res) in jobs.iter().zip(&results) {
                if job.0 != li || job.1 != ri {
                    continue;
                }
                match res {
                    Ok(v) if v.is_finite() => vals.push(*v),
                    Ok(_) | Err(HarnessError::Diverged { .. }) => diverged += 1,
                    Err(e) => return Err(config(e.to_string())),
                }
            }
            let mean = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            let _ = writeln!(csv, "{loss},{lr},{mean},{diverged}");
            points.push((lr.log10(), mean));
        }
        series.push(Series {
            label: loss.to_string(),
            points,
        });
    }
    print!("{csv}");
    let out = &a.common.out;
    write_atomic(&out.join("lr_sweep.csv"), csv.as_bytes())?;
    let metric = match task.kind {
        TaskKind::Classification => "test error rate",
        TaskKind::Regression => "test MSE",
    };
    write_atomic(
        &out.join("lr_sweep.svg"),
        line_plot(
            "learning-rate sweep",
            "log10 learning rate",
            metric,
            &series,
        )
        .as_bytes(),
    )
}
