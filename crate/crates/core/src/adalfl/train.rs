use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::net::{MetaArch, MetaLossNet};
use crate::autodiff::{backward, Tape, Tensor, Var};
use crate::harness::{
    learned_inputs, sample_batch, split_metric, HarnessError, LossFn, MlpModel, OptimizerConfig,
    OptimizerState, Split, Targets, Task, TaskKind, TrainConfig, BATCH_STREAM, INIT_STREAM,
};
use crate::losses::{LossSpec, RobustKind};
use crate::rng::derive_rng;

pub const META_STREAM: u64 = 3;
pub const PHI_STREAM: u64 = 4;
pub const OFFLINE_STREAM: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaSource {
    Train,
    Valid,
}

impl MetaSource {
    pub fn split(self) -> Split {
        match self {
            MetaSource::Train => Split::Train,
            MetaSource::Valid => Split::Valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaConfig {
    /// Offline meta steps before online training.
    pub init_steps: usize,
    pub offline_lr: f64,
    pub online_lr: f64,
    pub meta_source: MetaSource,
    /// Base training; the optimizer must be plain SGD (its rate is the unrolled step size).
    pub train: TrainConfig,
    /// Loss-shape snapshot cadence (0 keeps only the first and last).
    pub snapshot_every: usize,
    pub meta_hidden: usize,
    pub arch: MetaArch,
}

impl Default for AdaConfig {
    fn default() -> Self {
        AdaConfig {
            init_steps: 2500,
            offline_lr: 1e-3,
            online_lr: 1e-5,
            meta_source: MetaSource::Train,
            train: TrainConfig::default(),
            snapshot_every: 100,
            meta_hidden: 40,
            arch: MetaArch::SmoothLeaky,
        }
    }
}

impl AdaConfig {
    pub fn alpha(&self) -> Result<f64, HarnessError> {
        match self.train.optimizer {
            OptimizerConfig::Sgd { lr } if lr > 0.0 && lr.is_finite() => Ok(lr),
            OptimizerConfig::Sgd { .. } => Err(HarnessError::Config(
                "base learning rate must be positive".into(),
            )),
            _ => Err(HarnessError::Config(
                "unrolled training needs a plain SGD base optimizer".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<f64, HarnessError> {
        for (name, v) in [
            ("offline rate", self.offline_lr),
            ("online rate", self.online_lr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(HarnessError::Config(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        if self.train.batch_size == 0 || self.meta_hidden == 0 {
            return Err(HarnessError::Config(
                "batch size and meta width must be positive".into(),
            ));
        }
        self.alpha()
    }

    /// Freshly initialised meta-loss for this config's seed.
    pub fn initial_net(&self) -> MetaLossNet {
        MetaLossNet::new(
            self.meta_hidden,
            self.arch,
            &mut derive_rng(self.train.seed, &[PHI_STREAM]),
        )
    }
}

/// Task loss used as the meta objective.
pub fn task_loss(kind: TaskKind) -> LossFn {
    LossFn::Named(match kind {
        TaskKind::Classification => LossSpec::CrossEntropy,
        TaskKind::Regression => LossSpec::Robust {
            kind: RobustKind::Squared,
            delta: 1.0,
        },
    })
}

/// `(y, f)` pairs on which loss shapes are recorded.
pub fn snapshot_grid(kind: TaskKind) -> Vec<(f64, f64)> {
    match kind {
        TaskKind::Classification => {
            let f: Vec<f64> = (0..99).map(|i| 0.01 + 0.01 * i as f64).collect();
            [0.0, 1.0]
                .iter()
                .flat_map(|&y| f.iter().map(move |&f| (y, f)))
                .collect()
        }
        TaskKind::Regression => (0..61).map(|i| (0.0, 3.0 - 0.1 * i as f64)).collect(),
    }
}

/// One unrolled step: base loss at `theta`, the stepped parameters and the
/// meta objective evaluated at them.
pub struct Unrolled<'t> {
    pub base_loss: Var<'t>,
    pub stepped: Vec<Var<'t>>,
    pub meta_loss: Var<'t>,
}

#[allow(clippy::too_many_arguments)]
pub fn unroll<'t>(
    model: &MlpModel,
    theta: &[Var<'t>],
    base: &dyn Fn(Var<'t>, &Targets) -> Result<Var<'t>, HarnessError>,
    alpha: Var<'t>,
    kind: TaskKind,
    base_batch: &(Tensor, Targets),
    meta_batch: &(Tensor, Targets),
) -> Result<Unrolled<'t>, HarnessError> {
    let tape = alpha.tape();
    let out = model.forward(theta, tape.constant(base_batch.0.clone()));
    let base_loss = base(out, &base_batch.1)?;
    let grads = backward(base_loss, theta, true)?;
    let stepped: Vec<Var<'t>> = if alpha.requires_grad() {
        theta
            .iter()
            .zip(&grads)
            .map(|(&w, &g)| w.sub(g.mul(alpha)))
            .collect()
    } else {
        let a = alpha.item();
        theta
            .iter()
            .zip(&grads)
            .map(|(&w, &g)| w.sub(g.scale(a)))
            .collect()
    };
    let meta_out = model.forward(&stepped, tape.constant(meta_batch.0.clone()));
    let meta_loss = task_loss(kind).evaluate(meta_out, &meta_batch.1)?;
    Ok(Unrolled {
        base_loss,
        stepped,
        meta_loss,
    })
}

fn meta_base<'t, 'p>(
    net: &'p MetaLossNet,
    phi: &'p [Var<'t>],
) -> impl Fn(Var<'t>, &Targets) -> Result<Var<'t>, HarnessError> + 'p {
    move |out, t| {
        let (y, f) = learned_inputs(out, t);
        Ok(net.forward(phi, y, f)?)
    }
}

/// Meta objective after one SGD step under `net`, and its gradient in the
/// meta-loss parameters.
pub fn hypergradient(
    net: &MetaLossNet,
    model: &MlpModel,
    theta: &[Tensor],
    alpha: f64,
    kind: TaskKind,
    base_batch: &(Tensor, Targets),
    meta_batch: &(Tensor, Targets),
) -> Result<(f64, Vec<Tensor>), HarnessError> {
    let tape = Tape::new();
    let phi = net.vars(&tape);
    let th: Vec<Var> = theta.iter().map(|p| tape.var(p.clone())).collect();
    let base = meta_base(net, &phi);
    let u = unroll(
        model,
        &th,
        &base,
        tape.scalar(alpha),
        kind,
        base_batch,
        meta_batch,
    )?;
    let g = backward(u.meta_loss, &phi, false)?;
    Ok((u.meta_loss.item(), g.iter().map(|v| v.value()).collect()))
}

/// Meta objective only (for finite-difference checks).
pub fn unrolled_meta_loss(
    net: &MetaLossNet,
    model: &MlpModel,
    theta: &[Tensor],
    alpha: f64,
    kind: TaskKind,
    base_batch: &(Tensor, Targets),
    meta_batch: &(Tensor, Targets),
) -> Result<f64, HarnessError> {
    let tape = Tape::new();
    let phi: Vec<Var> = net
        .params()
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let th: Vec<Var> = theta.iter().map(|p| tape.var(p.clone())).collect();
    let base = meta_base(net, &phi);
    Ok(unroll(
        model,
        &th,
        &base,
        tape.scalar(alpha),
        kind,
        base_batch,
        meta_batch,
    )?
    .meta_loss
    .item())
}

/// Offline fine-tuning of the meta-loss with the base learner reset every step.
pub fn offline_init(
    net: &MetaLossNet,
    task: &Task,
    cfg: &AdaConfig,
) -> Result<MetaLossNet, HarnessError> {
    let alpha = cfg.validate()?;
    let model = cfg.train.model(task);
    let mut rng = derive_rng(cfg.train.seed, &[OFFLINE_STREAM]);
    let mut opt = OptimizerState::new(OptimizerConfig::adam(cfg.offline_lr));
    let mut net = net.clone();
    let mut phi = net.params().to_vec();
    for step in 0..cfg.init_steps {
        let theta = model.init(&mut rng);
        let base = sample_batch(task, Split::Train, cfg.train.batch_size, &mut rng);
        let meta = sample_batch(
            task,
            cfg.meta_source.split(),
            cfg.train.batch_size,
            &mut rng,
        );
        let (l, g) = hypergradient(&net, &model, &theta, alpha, task.kind, &base, &meta)?;
        if !l.is_finite() || g.iter().any(|t| !t.is_finite()) {
            return Err(HarnessError::Diverged { step });
        }
        opt.step(&mut phi, &g)?;
        net.set_params(phi.clone());
    }
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaReport {
    pub task: String,
    pub base_loss: Vec<f64>,
    pub meta_loss: Vec<f64>,
    pub valid_trace: Vec<(usize, f64)>,
    pub grid: Vec<(f64, f64)>,
    pub snapshots: Vec<Snapshot>,
    /// Learning-rate trace (Meta-LR only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha_trace: Vec<f64>,
    pub final_train_metric: f64,
    pub final_valid_metric: f64,
    pub final_test_metric: f64,
}

impl AdaReport {
    /// `step,base_loss,meta_loss,metric`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,base_loss,meta_loss,metric\n");
        let mut trace = self.valid_trace.iter().peekable();
        let rows = self
            .base_loss
            .len()
            .max(self.valid_trace.last().map_or(0, |v| v.0 + 1));
        for step in 0..rows {
            let cell = |v: Option<&f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
            let m = match trace.peek() {
                Some(&&(st, m)) if st == step => {
                    trace.next();
                    format!("{m:e}")
                }
                _ => String::new(),
            };
            let _ = writeln!(
                s,
                "{step},{},{},{m}",
                cell(self.base_loss.get(step)),
                cell(self.meta_loss.get(step))
            );
        }
        s
    }

    /// Long-format `step,y,f,value` rows for every snapshot.
    pub fn snapshots_csv(&self) -> String {
        let mut s = String::from("step,y,f,value\n");
        for snap in &self.snapshots {
            for (&(y, f), v) in self.grid.iter().zip(&snap.values) {
                let _ = writeln!(s, "{},{y},{f},{v:e}", snap.step);
            }
        }
        s
    }

    /// Largest pointwise change between the first and last snapshot.
    pub fn shape_change(&self) -> f64 {
        match (self.snapshots.first(), self.snapshots.last()) {
            (Some(a), Some(b)) => a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
            _ => 0.0,
        }
    }
}

fn finish(model: &MlpModel, theta: &[Tensor], task: &Task, mut report: AdaReport) -> AdaReport {
    report.final_train_metric = split_metric(model, theta, task, Split::Train);
    report.final_valid_metric = split_metric(model, theta, task, Split::Valid);
    report.final_test_metric = split_metric(model, theta, task, Split::Test);
    report
}

fn empty_report(task: &Task, grid: Vec<(f64, f64)>) -> AdaReport {
    AdaReport {
        task: task.name.clone(),
        base_loss: Vec::new(),
        meta_loss: Vec::new(),
        valid_trace: Vec::new(),
        grid,
        snapshots: Vec::new(),
        alpha_trace: Vec::new(),
        final_train_metric: f64::NAN,
        final_valid_metric: f64::NAN,
        final_test_metric: f64::NAN,
    }
}

/// Lockstep base/meta training. Returns the trained base parameters, the
/// adapted meta-loss and the report.
pub fn online_train(
    net: &MetaLossNet,
    task: &Task,
    cfg: &AdaConfig,
) -> Result<(Vec<Tensor>, MetaLossNet, AdaReport), HarnessError> {
    let alpha = cfg.validate()?;
    let tc = &cfg.train;
    let model = tc.model(task);
    let mut theta = model.init(&mut derive_rng(tc.seed, &[INIT_STREAM]));
    let mut base_rng = derive_rng(tc.seed, &[BATCH_STREAM]);
    let mut meta_rng = derive_rng(tc.seed, &[META_STREAM]);
    let mut opt = OptimizerState::new(OptimizerConfig::adam(cfg.online_lr));
    let mut net = net.clone();
    let mut phi = net.params().to_vec();
    let mut report = empty_report(task, snapshot_grid(task.kind));
    report
        .valid_trace
        .push((0, split_metric(&model, &theta, task, Split::Valid)));
    report.snapshots.push(Snapshot {
        step: 0,
        values: net.shape_on(&report.grid),
    });

    for step in 0..tc.steps {
        let base = sample_batch(task, Split::Train, tc.batch_size, &mut base_rng);
        let meta = sample_batch(task, cfg.meta_source.split(), tc.batch_size, &mut meta_rng);
        let tape = Tape::new();
        let phi_vars = net.vars(&tape);
        let th: Vec<Var> = theta.iter().map(|p| tape.var(p.clone())).collect();
        let current = net.clone();
        let lossf = meta_base(&current, &phi_vars);
        let u = unroll(
            &model,
            &th,
            &lossf,
            tape.scalar(alpha),
            task.kind,
            &base,
            &meta,
        )?;
        let bl = u.base_loss.item();
        let ml = u.meta_loss.item();
        if !bl.is_finite() || !ml.is_finite() {
            return Err(HarnessError::Diverged { step });
        }
        theta = u.stepped.iter().map(|v| v.value()).collect();
        if theta.iter().any(|p| !p.is_finite()) {
            return Err(HarnessError::Diverged { step });
        }
        let g: Vec<Tensor> = backward(u.meta_loss, &phi_vars, false)?
            .iter()
            .map(|v| v.value())
            .collect();
        opt.step(&mut phi, &g)?;
        if phi.iter().any(|p| !p.is_finite()) {
            return Err(HarnessError::Diverged { step });
        }
        net.set_params(phi.clone());
        report.base_loss.push(bl);
        report.meta_loss.push(ml);
        let s = step + 1;
        if tc.eval_every > 0 && s % tc.eval_every == 0 {
            report
                .valid_trace
                .push((s, split_metric(&model, &theta, task, Split::Valid)));
        }
        if (cfg.snapshot_every > 0 && s % cfg.snapshot_every == 0) || s == tc.steps {
            report.snapshots.push(Snapshot {
                step: s,
                values: net.shape_on(&report.grid),
            });
        }
    }
    let report = finish(&model, &theta, task, report);
    Ok((theta, net, report))
}

/// Offline warm-up of a scalar learning rate, resetting the base learner
/// every step.
pub fn meta_lr_offline(alpha0: f64, task: &Task, cfg: &AdaConfig) -> Result<f64, HarnessError> {
    check_alpha(alpha0)?;
    let model = cfg.train.model(task);
    let mut rng = derive_rng(cfg.train.seed, &[OFFLINE_STREAM]);
    let mut alpha = alpha0;
    for step in 0..cfg.init_steps {
        let theta = model.init(&mut rng);
        let base = sample_batch(task, Split::Train, cfg.train.batch_size, &mut rng);
        let meta = sample_batch(
            task,
            cfg.meta_source.split(),
            cfg.train.batch_size,
            &mut rng,
        );
        let (_, g) = lr_hypergradient(&model, &theta, alpha, task.kind, &base, &meta)?;
        alpha -= cfg.offline_lr * g;
        if !alpha.is_finite() {
            return Err(HarnessError::Diverged { step });
        }
    }
    Ok(alpha)
}

fn check_alpha(alpha: f64) -> Result<(), HarnessError> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Config(
            "initial learning rate must be positive".into(),
        ))
    }
}

/// Meta objective after one task-loss SGD step with rate `alpha`, and its
/// derivative in `alpha`.
pub fn lr_hypergradient(
    model: &MlpModel,
    theta: &[Tensor],
    alpha: f64,
    kind: TaskKind,
    base_batch: &(Tensor, Targets),
    meta_batch: &(Tensor, Targets),
) -> Result<(f64, f64), HarnessError> {
    let tape = Tape::new();
    let a = tape.var(Tensor::scalar(alpha));
    let th: Vec<Var> = theta.iter().map(|p| tape.var(p.clone())).collect();
    let tl = task_loss(kind);
    let u = unroll(
        model,
        &th,
        &|out, t| tl.evaluate(out, t),
        a,
        kind,
        base_batch,
        meta_batch,
    )?;
    let g = backward(u.meta_loss, &[a], false)?;
    Ok((u.meta_loss.item(), g[0].item()))
}

/// Meta-LR: online adaptation of the base learning rate alone.
pub fn meta_lr_train(
    alpha0: f64,
    task: &Task,
    cfg: &AdaConfig,
) -> Result<(Vec<Tensor>, AdaReport), HarnessError> {
    check_alpha(alpha0)?;
    let tc = &cfg.train;
    let model = tc.model(task);
    let mut theta = model.init(&mut derive_rng(tc.seed, &[INIT_STREAM]));
    let mut base_rng = derive_rng(tc.seed, &[BATCH_STREAM]);
    let mut meta_rng = derive_rng(tc.seed, &[META_STREAM]);
    let mut alpha = alpha0;
    let mut report = empty_report(task, Vec::new());
    report.alpha_trace.push(alpha);
    report
        .valid_trace
        .push((0, split_metric(&model, &theta, task, Split::Valid)));
    let tl = task_loss(task.kind);
    for step in 0..tc.steps {
        let base = sample_batch(task, Split::Train, tc.batch_size, &mut base_rng);
        let meta = sample_batch(task, cfg.meta_source.split(), tc.batch_size, &mut meta_rng);
        let tape = Tape::new();
        let a = tape.var(Tensor::scalar(alpha));
        let th: Vec<Var> = theta.iter().map(|p| tape.var(p.clone())).collect();
        let u = unroll(
            &model,
            &th,
            &|out, t| tl.evaluate(out, t),
            a,
            task.kind,
            &base,
            &meta,
        )?;
        let (bl, ml) = (u.base_loss.item(), u.meta_loss.item());
        theta = u.stepped.iter().map(|v| v.value()).collect();
        let g = backward(u.meta_loss, &[a], false)?[0].item();
        alpha -= cfg.online_lr * g;
        if !bl.is_finite()
            || !ml.is_finite()
            || !alpha.is_finite()
            || theta.iter().any(|p| !p.is_finite())
        {
            return Err(HarnessError::Diverged { step });
        }
        report.base_loss.push(bl);
        report.meta_loss.push(ml);
        report.alpha_trace.push(alpha);
        let s = step + 1;
        if tc.eval_every > 0 && s % tc.eval_every == 0 {
            report
                .valid_trace
                .push((s, split_metric(&model, &theta, task, Split::Valid)));
        }
    }
    let report = finish(&model, &theta, task, report);
    Ok((theta, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{make_synthetic_regression, make_two_moons, train};

    fn small(steps: usize) -> AdaConfig {
        AdaConfig {
            init_steps: 5,
            train: TrainConfig {
                steps,
                batch_size: 16,
                hidden: vec![8],
                eval_every: 5,
                ..TrainConfig::default()
            },
            snapshot_every: 5,
            meta_hidden: 8,
            ..AdaConfig::default()
        }
    }

    #[test]
    fn zero_init_steps_is_identity() {
        let task = make_two_moons(0, 80, 0.1).unwrap();
        let cfg = AdaConfig {
            init_steps: 0,
            ..small(1)
        };
        let net = cfg.initial_net();
        assert_eq!(offline_init(&net, &task, &cfg).unwrap(), net);
    }

    #[test]
    fn offline_is_deterministic() {
        let task = make_two_moons(0, 80, 0.1).unwrap();
        let cfg = small(1);
        let net = cfg.initial_net();
        let a = offline_init(&net, &task, &cfg).unwrap();
        assert_eq!(a, offline_init(&net, &task, &cfg).unwrap());
        assert_ne!(a, net);
    }

    #[test]
    fn frozen_meta_rate_matches_fixed_loss_training() {
        let task = make_two_moons(1, 80, 0.1).unwrap();
        let cfg = AdaConfig {
            online_lr: 0.0,
            ..small(20)
        };
        let net = cfg.initial_net();
        let (_, after, rep) = online_train(&net, &task, &cfg).unwrap();
        assert_eq!(after, net);
        let fixed = train(&task, &LossFn::MetaMlp(net), &cfg.train).unwrap();
        assert_eq!(fixed.train_loss, rep.base_loss);
        assert_eq!(fixed.valid_trace, rep.valid_trace);
        assert_eq!(
            fixed.final_test_metric.to_bits(),
            rep.final_test_metric.to_bits()
        );
    }

    #[test]
    fn snapshots_change_when_adapting() {
        let task = make_synthetic_regression(0, 80, 0.1).unwrap();
        let cfg = AdaConfig {
            online_lr: 1e-3,
            ..small(10)
        };
        let (_, _, rep) = online_train(&cfg.initial_net(), &task, &cfg).unwrap();
        assert_eq!(rep.snapshots.len(), 3);
        assert!(rep.shape_change() > 0.0);
        assert_eq!(rep.to_csv().lines().count(), 12);
        assert_eq!(rep.snapshots_csv().lines().count(), 1 + 3 * 61);
    }

    #[test]
    fn meta_lr_frozen_trace_is_constant() {
        let task = make_synthetic_regression(0, 80, 0.1).unwrap();
        let cfg = AdaConfig {
            online_lr: 0.0,
            ..small(10)
        };
        let (_, rep) = meta_lr_train(0.05, &task, &cfg).unwrap();
        assert!(rep.alpha_trace.iter().all(|&a| a == 0.05));
        assert!(meta_lr_train(0.0, &task, &cfg).is_err());
    }

    #[test]
    fn non_sgd_base_rejected() {
        let task = make_two_moons(0, 40, 0.1).unwrap();
        let mut cfg = small(1);
        cfg.train.optimizer = OptimizerConfig::adam(0.01);
        assert!(matches!(
            online_train(&cfg.initial_net(), &task, &cfg),
            Err(HarnessError::Config(_))
        ));
    }
}
