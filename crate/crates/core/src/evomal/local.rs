use super::{EvoError, MetaConfig, OPT_STREAM};
use crate::adalfl::task_loss;
use crate::autodiff::{backward, Tape, Tensor, Var};
use crate::harness::{
    learned_inputs, sample_batch, MlpModel, OptimizerConfig, OptimizerState, Split, Targets, Task,
    TaskKind,
};
use crate::lossnet::LossNetwork;
use crate::rng::derive_rng;

/// Inner trajectory and meta-objective batches for one meta step.
#[derive(Debug, Clone)]
pub struct MetaProblem<'a> {
    pub model: &'a MlpModel,
    pub kind: TaskKind,
    pub theta0: Vec<Tensor>,
    pub alpha: f64,
    pub inner: Vec<(Tensor, Targets)>,
    pub outer: (Tensor, Targets),
}

impl MetaProblem<'_> {
    fn record<'t>(
        &self,
        net: &LossNetwork,
        w: &[Var<'t>],
        tape: &'t Tape,
    ) -> Result<Var<'t>, EvoError> {
        let mut theta: Vec<Var<'t>> = self.theta0.iter().map(|p| tape.var(p.clone())).collect();
        for (x, t) in &self.inner {
            let out = self.model.forward(&theta, tape.constant(x.clone()));
            let (y, f) = learned_inputs(out, t);
            let l = net.forward(w, y, f)?;
            let g = backward(l, &theta, true)?;
            theta = theta
                .iter()
                .zip(&g)
                .map(|(&p, &gp)| p.sub(gp.scale(self.alpha)))
                .collect();
        }
        let out = self
            .model
            .forward(&theta, tape.constant(self.outer.0.clone()));
        Ok(task_loss(self.kind).evaluate(out, &self.outer.1)?)
    }

    /// Task loss after the unrolled inner steps, with edge weights `w`.
    pub fn objective(&self, net: &LossNetwork, w: &[f64]) -> Result<f64, EvoError> {
        let tape = Tape::new();
        let wv: Vec<Var> = w.iter().map(|&v| tape.scalar(v)).collect();
        Ok(self.record(net, &wv, &tape)?.item())
    }

    /// Objective and its gradient in the edge weights.
    pub fn gradient(&self, net: &LossNetwork, w: &[f64]) -> Result<(f64, Vec<f64>), EvoError> {
        let tape = Tape::new();
        let wv: Vec<Var> = w.iter().map(|&v| tape.var(Tensor::scalar(v))).collect();
        let l = self.record(net, &wv, &tape)?;
        let g = backward(l, &wv, false)?;
        Ok((l.item(), g.iter().map(|v| v.item()).collect()))
    }
}

/// Gradient-based local search of the edge weights: every meta step resets
/// the base model, unrolls `base_steps` SGD steps under the network and
/// moves the weights along the task-loss hypergradient.
pub fn optimize_loss(
    net: &LossNetwork,
    task: &Task,
    cfg: &MetaConfig,
) -> Result<LossNetwork, EvoError> {
    optimize_loss_tasks(net, std::slice::from_ref(task), cfg)
}

/// [`optimize_loss`] over several tasks: each meta step sums the
/// hypergradients of one unrolled trajectory per task.
pub fn optimize_loss_tasks(
    net: &LossNetwork,
    tasks: &[Task],
    cfg: &MetaConfig,
) -> Result<LossNetwork, EvoError> {
    let alpha = cfg.base.optimizer.lr();
    let models: Vec<MlpModel> = tasks.iter().map(|t| cfg.base.model(t)).collect();
    let mut rng = derive_rng(cfg.base.seed, &[OPT_STREAM]);
    let mut opt = OptimizerState::new(OptimizerConfig::adam(cfg.meta_lr));
    let mut w = net.weights().to_vec();
    for step in 0..cfg.meta_steps {
        let mut total = vec![0.0; w.len()];
        for (task, model) in tasks.iter().zip(&models) {
            let theta0 = model.init(&mut rng);
            let inner = (0..cfg.base_steps)
                .map(|_| sample_batch(task, Split::Train, cfg.base.batch_size, &mut rng))
                .collect();
            let outer = sample_batch(task, Split::Train, cfg.base.batch_size, &mut rng);
            let problem = MetaProblem {
                model,
                kind: task.kind,
                theta0,
                alpha,
                inner,
                outer,
            };
            let (l, g) = problem.gradient(net, &w)?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(EvoError::Diverged { step });
            }
            for (t, v) in total.iter_mut().zip(g) {
                *t += v;
            }
        }
        opt.step_flat(&mut w, &total)?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(EvoError::Diverged { step });
        }
    }
    Ok(net.clone().with_weights(w)?)
}
