use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::MlpModel;
use super::optim::{OptimizerConfig, OptimizerState};
use super::task::{Split, Targets, Task, TaskKind};
use super::HarnessError;
use crate::adalfl::MetaLossNet;
use crate::autodiff::{backward, Shape, Tape, Tensor, Var};
use crate::losses::LossSpec;
use crate::lossnet::LossNetwork;
use crate::rng::derive_rng;

/// Stream ids under a run seed.
pub const INIT_STREAM: u64 = 1;
pub const BATCH_STREAM: u64 = 2;

/// Any loss the training loop can drive.
#[derive(Debug, Clone, PartialEq)]
pub enum LossFn {
    Named(LossSpec),
    Network(LossNetwork),
    MetaMlp(MetaLossNet),
}

impl LossFn {
    pub fn describe(&self) -> String {
        match self {
            LossFn::Named(s) => s.to_string(),
            LossFn::Network(n) => n.expression_string(),
            LossFn::MetaMlp(_) => "meta-mlp".into(),
        }
    }

    /// Mean loss of model outputs against batch targets.
    pub fn evaluate<'t>(&self, out: Var<'t>, targets: &Targets) -> Result<Var<'t>, HarnessError> {
        match self {
            LossFn::Named(spec) => match targets {
                Targets::Classes(labels) => Ok(spec.classification(out, labels)?),
                Targets::Values(v) => {
                    let y = out.tape().constant(Tensor::column(v.clone()));
                    Ok(spec.regression(out, y)?)
                }
            },
            LossFn::Network(net) => {
                let (y, f) = learned_inputs(out, targets);
                Ok(net.forward_fixed(y, f)?)
            }
            LossFn::MetaMlp(m) => {
                let (y, f) = learned_inputs(out, targets);
                Ok(m.forward_fixed(y, f)?)
            }
        }
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(Shape::new(labels.len(), classes));
    for (r, &l) in labels.iter().enumerate() {
        t.data_mut()[r * classes + l] = 1.0;
    }
    t
}

/// `(y, f)` fed to learned losses: one-hot labels and softmax
/// probabilities for classification, raw targets and outputs for regression.
pub fn learned_inputs<'t>(out: Var<'t>, targets: &Targets) -> (Var<'t>, Var<'t>) {
    let tape = out.tape();
    match targets {
        Targets::Classes(labels) => (
            tape.constant(one_hot(labels, out.shape().cols)),
            out.log_softmax().exp(),
        ),
        Targets::Values(v) => (tape.constant(Tensor::column(v.clone())), out),
    }
}

/// MSE for regression, error rate for classification.
pub fn metric(kind: TaskKind, out: &Tensor, targets: &Targets) -> f64 {
    let n = targets.len().max(1) as f64;
    match (kind, targets) {
        (TaskKind::Regression, Targets::Values(v)) => {
            out.data()
                .iter()
                .zip(v)
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                / n
        }
        (TaskKind::Classification, Targets::Classes(c)) => {
            let cols = out.cols();
            let wrong = out
                .data()
                .chunks(cols)
                .zip(c)
                .filter(|(row, &label)| {
                    let best = row
                        .iter()
                        .enumerate()
                        .fold(
                            (0, f64::NEG_INFINITY),
                            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                        )
                        .0;
                    best != label
                })
                .count();
            wrong as f64 / n
        }
        _ => f64::NAN,
    }
}

pub fn split_metric(model: &MlpModel, params: &[Tensor], task: &Task, split: Split) -> f64 {
    let (x, t) = task.split_batch(split);
    let m = metric(task.kind, &model.predict(params, &x), &t);
    if m.is_finite() {
        m
    } else {
        f64::MAX
    }
}

/// Sample a training batch (without replacement inside the batch).
pub fn sample_batch<R: Rng + ?Sized>(
    task: &Task,
    split: Split,
    size: usize,
    rng: &mut R,
) -> (Tensor, Targets) {
    let rows = task.rows(split);
    let k = size.min(rows.len());
    let picks: Vec<usize> = sample(rng, rows.len(), k)
        .into_iter()
        .map(|i| rows[i])
        .collect();
    task.batch(&picks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Validation metric cadence in steps (0 disables the trace).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 32,
            optimizer: OptimizerConfig::sgd(0.1),
            hidden: vec![32, 32],
            seed: 0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn model(&self, task: &Task) -> MlpModel {
        MlpModel::new(task.features(), &self.hidden, task.outputs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub task: String,
    pub loss: String,
    pub config: TrainConfig,
    pub train_loss: Vec<f64>,
    /// `(step, validation metric)` pairs.
    pub valid_trace: Vec<(usize, f64)>,
    pub final_train_metric: f64,
    pub final_valid_metric: f64,
    pub final_test_metric: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrainReport {
    /// `step,base_loss,meta_loss,metric` rows; empty cells where a value
    /// was not recorded.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,base_loss,meta_loss,metric\n");
        let mut trace = self.valid_trace.iter().peekable();
        let rows = self
            .train_loss
            .len()
            .max(self.valid_trace.last().map_or(0, |v| v.0 + 1));
        for step in 0..rows {
            let loss = self
                .train_loss
                .get(step)
                .map(|v| format!("{v:e}"))
                .unwrap_or_default();
            let m = match trace.peek() {
                Some(&&(st, m)) if st == step => {
                    trace.next();
                    format!("{m:e}")
                }
                _ => String::new(),
            };
            let _ = writeln!(s, "{step},{loss},,{m}");
        }
        s
    }
}

/// Gradients of the batch loss with respect to the parameters.
pub fn loss_and_grads(
    model: &MlpModel,
    params: &[Tensor],
    loss: &LossFn,
    x: &Tensor,
    targets: &Targets,
) -> Result<(f64, Vec<Tensor>), HarnessError> {
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.var(p.clone())).collect();
    let out = model.forward(&vars, tape.constant(x.clone()));
    let l = loss.evaluate(out, targets)?;
    let grads = backward(l, &vars, false)?;
    Ok((l.item(), grads.iter().map(|g| g.value()).collect()))
}

/// Run `steps` optimizer steps from `params`, returning the final
/// parameters and the per-step training losses.
#[allow(clippy::too_many_arguments)]
pub fn train_params<R: Rng + ?Sized>(
    model: &MlpModel,
    mut params: Vec<Tensor>,
    loss: &LossFn,
    task: &Task,
    steps: usize,
    batch_size: usize,
    optimizer: OptimizerConfig,
    rng: &mut R,
    mut on_step: impl FnMut(usize, &[Tensor]),
) -> Result<(Vec<Tensor>, Vec<f64>), HarnessError> {
    let mut opt = OptimizerState::new(optimizer);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (x, t) = sample_batch(task, Split::Train, batch_size, rng);
        let (l, grads) = loss_and_grads(model, &params, loss, &x, &t)?;
        if !l.is_finite() {
            return Err(HarnessError::Diverged { step });
        }
        opt.step(&mut params, &grads)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(HarnessError::Diverged { step });
        }
        losses.push(l);
        on_step(step + 1, &params);
    }
    Ok((params, losses))
}

/// Train a fresh model on `task` and report.
pub fn train(task: &Task, loss: &LossFn, cfg: &TrainConfig) -> Result<TrainReport, HarnessError> {
    let start = Instant::now();
    let model = cfg.model(task);
    let params = model.init(&mut derive_rng(cfg.seed, &[INIT_STREAM]));
    let mut rng = derive_rng(cfg.seed, &[BATCH_STREAM]);
    let mut trace = vec![(0, split_metric(&model, &params, task, Split::Valid))];
    let every = cfg.eval_every;
    let (params, losses) = train_params(
        &model,
        params,
        loss,
        task,
        cfg.steps,
        cfg.batch_size,
        cfg.optimizer,
        &mut rng,
        |s, p| {
            if every > 0 && s % every == 0 {
                trace.push((s, split_metric(&model, p, task, Split::Valid)));
            }
        },
    )?;
    Ok(TrainReport {
        task: task.name.clone(),
        loss: loss.describe(),
        config: cfg.clone(),
        train_loss: losses,
        valid_trace: trace,
        final_train_metric: split_metric(&model, &params, task, Split::Train),
        final_valid_metric: split_metric(&model, &params, task, Split::Valid),
        final_test_metric: split_metric(&model, &params, task, Split::Test),
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::task::make_synthetic_regression;

    #[test]
    fn zero_steps_reports_untrained_metric() {
        let task = make_synthetic_regression(0, 60, 0.1).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let r = train(&task, &LossFn::Named("squared".parse().unwrap()), &cfg).unwrap();
        assert!(r.train_loss.is_empty());
        assert_eq!(r.valid_trace.len(), 1);
        assert_eq!(r.valid_trace[0].1, r.final_valid_metric);
    }

    #[test]
    fn reports_are_reproducible() {
        let task = make_synthetic_regression(0, 90, 0.1).unwrap();
        let cfg = TrainConfig {
            steps: 50,
            eval_every: 10,
            ..TrainConfig::default()
        };
        let loss = LossFn::Named("cauchy:1".parse().unwrap());
        let a = serde_json::to_string(&train(&task, &loss, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&train(&task, &loss, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_loss_kind_is_an_error() {
        let task = make_synthetic_regression(0, 60, 0.1).unwrap();
        let cfg = TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&task, &LossFn::Named(LossSpec::CrossEntropy), &cfg),
            Err(HarnessError::Loss(_))
        ));
    }

    #[test]
    fn error_rate_metric() {
        let out = Tensor::from_rows(3, 2, vec![0.1, 0.9, 2.0, -1.0, 0.0, 0.5]);
        let m = metric(
            TaskKind::Classification,
            &out,
            &Targets::Classes(vec![1, 1, 1]),
        );
        assert!((m - 1.0 / 3.0).abs() < 1e-15);
    }
}
