use super::{EvoError, MetaConfig, PROBE_STREAM, REJECT_STREAM};
use crate::autodiff::{backward, Tape, Tensor};
use crate::harness::{
    learned_inputs, sample_batch, OptimizerConfig, OptimizerState, Split, Targets, Task,
    INIT_STREAM,
};
use crate::lossnet::LossNetwork;
use crate::rng::derive_rng;

/// Fixed batch with the untrained model's predictions on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub predictions: Tensor,
    pub targets: Targets,
}

impl Probe {
    /// `size` train rows under stream `stream`, predicted by the shared
    /// initial model.
    pub fn sample(task: &Task, cfg: &MetaConfig, size: usize, stream: u64) -> Probe {
        let model = cfg.base.model(task);
        let theta = model.init(&mut derive_rng(cfg.base.seed, &[INIT_STREAM]));
        let (x, targets) = sample_batch(
            task,
            Split::Train,
            size,
            &mut derive_rng(cfg.base.seed, &[stream]),
        );
        Probe {
            predictions: model.predict(&theta, &x),
            targets,
        }
    }

    pub fn rejection(task: &Task, cfg: &MetaConfig) -> Probe {
        Probe::sample(task, cfg, cfg.rejection_batch, REJECT_STREAM)
    }

    pub fn signature(task: &Task, cfg: &MetaConfig) -> Probe {
        Probe::sample(task, cfg, cfg.probe_size, PROBE_STREAM)
    }
}

/// Per-instance performance: squared error, or 0/1 misclassification.
fn instance_metric(pred: &Tensor, targets: &Targets) -> Vec<f64> {
    match targets {
        Targets::Values(v) => pred
            .data()
            .iter()
            .zip(v)
            .map(|(p, y)| (p - y) * (p - y))
            .collect(),
        Targets::Classes(c) => pred
            .data()
            .chunks(pred.cols())
            .zip(c)
            .map(|(row, &label)| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
                if best == label {
                    0.0
                } else {
                    1.0
                }
            })
            .collect(),
    }
}

/// Optimise the predictions directly under `net` and score the change in
/// performance: `g = sum_b [P(initial_b) - P(optimised_b)]`. Positive means
/// the loss drives predictions the right way.
pub fn rejection_protocol(
    net: &LossNetwork,
    probe: &Probe,
    steps: usize,
    lr: f64,
) -> Result<(f64, bool), EvoError> {
    let mut pred = [probe.predictions.clone()];
    let mut opt = OptimizerState::new(OptimizerConfig::adam(lr));
    for _ in 0..steps {
        let tape = Tape::new();
        let p = tape.var(pred[0].clone());
        let (y, f) = learned_inputs(p, &probe.targets);
        let l = net.forward_fixed(y, f)?;
        let g = backward(l, &[p], false)?[0].value();
        if !l.item().is_finite() || !g.is_finite() {
            return Ok((f64::NEG_INFINITY, false));
        }
        opt.step(&mut pred, &[g])?;
    }
    if !pred[0].is_finite() {
        return Ok((f64::NEG_INFINITY, false));
    }
    let before = instance_metric(&probe.predictions, &probe.targets);
    let after = instance_metric(&pred[0], &probe.targets);
    let g: f64 = before.iter().zip(&after).map(|(a, b)| a - b).sum();
    Ok((g, g > 0.0))
}

/// Round to two significant digits.
pub fn two_digits(v: f64) -> f64 {
    format!("{v:.1e}").parse().unwrap_or(f64::NAN)
}

/// Per-instance gradient norms of the loss in the predictions, rounded to
/// two significant digits and rendered as a hashable key.
pub fn gradient_signature(net: &LossNetwork, probe: &Probe) -> Result<String, EvoError> {
    let tape = Tape::new();
    let p = tape.var(probe.predictions.clone());
    let (y, f) = learned_inputs(p, &probe.targets);
    let l = net.forward_fixed(y, f)?;
    let g = backward(l, &[p], false)?[0].value();
    // undo the mean so norms are per-instance loss gradients
    let n = g.data().len() as f64;
    let parts: Vec<String> = g
        .data()
        .chunks(g.cols())
        .map(|row| format!("{:.1e}", n * row.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    Ok(parts.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(two_digits(0.123456), 0.12);
        assert_eq!(two_digits(98765.0), 99000.0);
        assert_eq!(two_digits(0.0), 0.0);
    }
}
