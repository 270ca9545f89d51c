//! Classification losses on logits.
//!
//! Each loss has a plain `f64` form over one instance and a batched tape form
//! used for training. The plain forms split off the log-sum-exp so the work
//! that remains can be counted and timed separately.

use crate::autodiff::{scalar, Tape, Tensor, Var};

/// Offset inside the redistributed non-target log.
pub const SPARSE_EPS: f64 = 1e-7;

/// Counts output elements touched by a loss kernel.
pub trait Counter {
    fn touch(&mut self, n: usize);
}

/// Counter that compiles away.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCount;

impl Counter for NoCount {
    #[inline(always)]
    fn touch(&mut self, _: usize) {}
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCount(pub usize);

impl Counter for OpCount {
    fn touch(&mut self, n: usize) {
        self.0 += n;
    }
}

pub fn log_sum_exp<K: Counter>(logits: &[f64], k: &mut K) -> f64 {
    k.touch(logits.len());
    scalar::log_sum_exp(logits)
}

pub fn cross_entropy(target: usize, logits: &[f64]) -> f64 {
    scalar::log_sum_exp(logits) - logits[target]
}

/// Label smoothing over all outputs given the shared log-sum-exp.
pub fn lsr_from_lse<K: Counter>(
    target: usize,
    logits: &[f64],
    lse: f64,
    xi: f64,
    k: &mut K,
) -> f64 {
    let c = logits.len() as f64;
    k.touch(logits.len());
    let off = xi / c;
    let mut total = 0.0;
    for (i, &z) in logits.iter().enumerate() {
        let q = if i == target { 1.0 - xi + off } else { off };
        total -= q * (z - lse);
    }
    total
}

pub fn lsr(target: usize, logits: &[f64], xi: f64) -> f64 {
    lsr_from_lse(
        target,
        logits,
        scalar::log_sum_exp(logits),
        xi,
        &mut NoCount,
    )
}

/// Target-only label smoothing from the target log-probability.
pub fn sparse_lsr_from_logp<K: Counter>(
    logp: f64,
    xi: f64,
    classes: usize,
    eps: f64,
    k: &mut K,
) -> f64 {
    k.touch(1);
    let c = classes as f64;
    let rest = (xi * (c - 1.0) / c) * ((1.0 - logp.exp() + eps) / (c - 1.0)).ln();
    let rest = if xi == 0.0 { 0.0 } else { rest };
    -((1.0 - xi + xi / c) * logp + rest)
}

/// Target-only label smoothing given the shared log-sum-exp.
pub fn sparse_lsr_from_lse<K: Counter>(
    target: usize,
    logits: &[f64],
    lse: f64,
    xi: f64,
    k: &mut K,
) -> f64 {
    k.touch(1);
    sparse_lsr_from_logp(logits[target] - lse, xi, logits.len(), SPARSE_EPS, k)
}

pub fn sparse_lsr(target: usize, logits: &[f64], xi: f64) -> f64 {
    sparse_lsr_from_lse(
        target,
        logits,
        scalar::log_sum_exp(logits),
        xi,
        &mut NoCount,
    )
}

/// `phi0 * |log(phi1 * p_target)|` on probabilities.
pub fn ace(target: usize, probs: &[f64], phi0: f64, phi1: f64) -> f64 {
    phi0 * (phi1 * probs[target]).ln().abs()
}

/// Gradient of [`ace`] with respect to the target probability; zero at the kink.
pub fn ace_grad_target(p: f64, phi0: f64, phi1: f64) -> f64 {
    let l = (phi1 * p).ln();
    if l == 0.0 {
        0.0
    } else {
        phi0 * l.signum() / p
    }
}

pub fn focal(target: usize, logits: &[f64], gamma: f64) -> f64 {
    let logp = logits[target] - scalar::log_sum_exp(logits);
    let p = logp.exp();
    -(1.0 - p).powf(gamma) * logp
}

pub fn focal_sparse_lsr(target: usize, logits: &[f64], gamma: f64, xi: f64) -> f64 {
    let c = logits.len() as f64;
    let logp = logits[target] - scalar::log_sum_exp(logits);
    let p = logp.exp();
    let rest = if xi == 0.0 {
        0.0
    } else {
        p.powf(gamma) * (xi * (c - 1.0) / c) * ((1.0 - p + SPARSE_EPS) / (c - 1.0)).ln()
    };
    -((1.0 - p).powf(gamma) * (1.0 - xi + xi / c) * logp + rest)
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(crate::autodiff::Shape::new(labels.len(), classes));
    for (r, &l) in labels.iter().enumerate() {
        t.data_mut()[r * classes + l] = 1.0;
    }
    t
}

/// `x^gamma` for `x` in (0, 1]; small integer powers avoid the log.
fn pow_const<'t>(x: Var<'t>, gamma: f64) -> Var<'t> {
    if gamma == 0.0 {
        return x.tape().constant(Tensor::ones(x.shape()));
    }
    if gamma.fract() == 0.0 && gamma <= 8.0 {
        let mut out = x;
        for _ in 1..gamma as usize {
            out = out.mul(x);
        }
        return out;
    }
    x.ln().scale(gamma).exp()
}

/// Per-instance target log-probabilities, `B x 1`.
pub fn target_logp<'t>(logits: Var<'t>, labels: &[usize]) -> Var<'t> {
    let tape: &'t Tape = logits.tape();
    let mask = tape.constant(one_hot(labels, logits.shape().cols));
    logits.log_softmax().mul(mask).sum_rows()
}

pub fn cross_entropy_batch<'t>(logits: Var<'t>, labels: &[usize]) -> Var<'t> {
    target_logp(logits, labels).mean().neg()
}

pub fn lsr_batch<'t>(logits: Var<'t>, labels: &[usize], xi: f64) -> Var<'t> {
    let c = logits.shape().cols;
    let q = one_hot(labels, c).map(|v| v * (1.0 - xi) + xi / c as f64);
    let q = logits.tape().constant(q);
    logits.log_softmax().mul(q).sum_rows().mean().neg()
}

fn redistributed<'t>(logp: Var<'t>, xi: f64, c: f64) -> Var<'t> {
    logp.exp()
        .neg()
        .add_scalar(1.0 + SPARSE_EPS)
        .scale(1.0 / (c - 1.0))
        .ln()
        .scale(xi * (c - 1.0) / c)
}

pub fn sparse_lsr_batch<'t>(logits: Var<'t>, labels: &[usize], xi: f64) -> Var<'t> {
    let c = logits.shape().cols as f64;
    let logp = target_logp(logits, labels);
    let head = logp.scale(1.0 - xi + xi / c);
    let total = if xi == 0.0 {
        head
    } else {
        head.add(redistributed(logp, xi, c))
    };
    total.mean().neg()
}

/// Absolute cross-entropy on the softmax of `logits`.
pub fn ace_batch<'t>(logits: Var<'t>, labels: &[usize], phi0: f64, phi1: f64) -> Var<'t> {
    target_logp(logits, labels)
        .add_scalar(phi1.ln())
        .abs()
        .scale(phi0)
        .mean()
}

pub fn focal_batch<'t>(logits: Var<'t>, labels: &[usize], gamma: f64) -> Var<'t> {
    let logp = target_logp(logits, labels);
    let w = pow_const(logp.exp().neg().add_scalar(1.0), gamma);
    w.mul(logp).mean().neg()
}

pub fn focal_sparse_lsr_batch<'t>(
    logits: Var<'t>,
    labels: &[usize],
    gamma: f64,
    xi: f64,
) -> Var<'t> {
    let c = logits.shape().cols as f64;
    let logp = target_logp(logits, labels);
    let p = logp.exp();
    let head = pow_const(p.neg().add_scalar(1.0), gamma).mul(logp.scale(1.0 - xi + xi / c));
    let total = if xi == 0.0 {
        head
    } else {
        head.add(pow_const(p, gamma).mul(redistributed(logp, xi, c)))
    };
    total.mean().neg()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{backward, Shape};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    /// Logits whose softmax puts `p` on `target` and spreads the rest evenly.
    fn logits_for(p: f64, target: usize, c: usize) -> Vec<f64> {
        let other = (1.0 - p) / (c as f64 - 1.0);
        (0..c)
            .map(|i| if i == target { p.ln() } else { other.ln() })
            .collect()
    }

    #[test]
    fn uniform_ce_is_log_c() {
        close(cross_entropy(2, &[0.0; 4]), 4f64.ln(), 1e-15);
        let mut z = vec![0.0; 3];
        z[0] = 30.0;
        assert!(cross_entropy(0, &z) < 1e-12);
    }

    #[test]
    fn lsr_examples() {
        let z = [0.3, -1.0, 2.0, 0.1];
        assert_eq!(lsr(1, &z, 0.0), cross_entropy(1, &z));
        let oracle = 0.91 * 2f64.ln() + 0.09 * 18f64.ln();
        close(lsr(0, &logits_for(0.5, 0, 10), 0.1), oracle, 1e-12);
        assert!(lsr(0, &logits_for(0.999, 0, 10), 0.1) > lsr(0, &logits_for(0.91, 0, 10), 0.1));
    }

    #[test]
    fn sparse_lsr_examples() {
        let z = [0.3, -1.0, 2.0];
        close(sparse_lsr(2, &z, 0.0), cross_entropy(2, &z), 1e-12);
        let oracle = 0.91 * 2f64.ln() + 0.09 * 18f64.ln();
        close(sparse_lsr(0, &logits_for(0.5, 0, 10), 0.1), oracle, 1e-6);
        close(sparse_lsr(1, &[0.0, 0.0], 0.2), 2f64.ln(), 1e-6);
    }

    #[test]
    fn ace_examples() {
        close(ace(0, &[0.5, 0.5], 1.0, 1.0), 2f64.ln(), 1e-15);
        close(ace(0, &[1.0 / 1.1], 1.0, 1.1), 0.0, 1e-15);
        close(ace(0, &[0.99], 1.0, 1.1), 1.089f64.ln(), 1e-15);
        close(1.089f64.ln(), 0.08526, 1e-5);
        assert_eq!(ace_grad_target(1.0, 1.0, 1.0), 0.0);
        assert!(ace_grad_target(0.95, 1.0, 1.1) > 0.0);
        assert!(ace_grad_target(0.85, 1.0, 1.1) < 0.0);
    }

    #[test]
    fn focal_examples() {
        let z = logits_for(0.9, 0, 2);
        close(focal(0, &z, 2.0), 0.01 * -(0.9f64.ln()), 1e-15);
        close(focal(0, &z, 2.0), 0.0010536, 1e-7);
        let z = [0.4, -0.3, 1.0];
        close(focal(1, &z, 0.0), cross_entropy(1, &z), 1e-15);
        close(
            focal_sparse_lsr(1, &z, 0.0, 0.2),
            sparse_lsr(1, &z, 0.2),
            1e-15,
        );
        close(
            focal_sparse_lsr(0, &[0.0, 0.0], 2.0, 0.2),
            0.25 * 2f64.ln(),
            1e-7,
        );
    }

    #[test]
    fn counters_separate_the_work() {
        let z = vec![0.1; 1000];
        let mut k = OpCount::default();
        let lse = log_sum_exp(&z, &mut NoCount);
        sparse_lsr_from_lse(3, &z, lse, 0.1, &mut k);
        assert_eq!(k.0, 2);
        let mut k = OpCount::default();
        lsr_from_lse(3, &z, lse, 0.1, &mut k);
        assert_eq!(k.0, 1000);
    }

    #[test]
    fn batch_forms_match_plain() {
        let rows = [[0.3, -1.0, 2.0, 0.5], [1.5, 0.2, -0.7, 0.0]];
        let labels = [2usize, 0];
        let tape = Tape::new();
        let x = tape.var(Tensor::new(Shape::new(2, 4), rows.concat()));
        let mean = |f: &dyn Fn(usize, &[f64]) -> f64| (f(2, &rows[0]) + f(0, &rows[1])) / 2.0;
        close(
            cross_entropy_batch(x, &labels).item(),
            mean(&|t, z| cross_entropy(t, z)),
            1e-14,
        );
        close(
            lsr_batch(x, &labels, 0.1).item(),
            mean(&|t, z| lsr(t, z, 0.1)),
            1e-14,
        );
        close(
            sparse_lsr_batch(x, &labels, 0.1).item(),
            mean(&|t, z| sparse_lsr(t, z, 0.1)),
            1e-14,
        );
        close(
            focal_batch(x, &labels, 2.0).item(),
            mean(&|t, z| focal(t, z, 2.0)),
            1e-14,
        );
        close(
            focal_batch(x, &labels, 1.5).item(),
            mean(&|t, z| focal(t, z, 1.5)),
            1e-14,
        );
        close(
            focal_sparse_lsr_batch(x, &labels, 2.0, 0.2).item(),
            mean(&|t, z| focal_sparse_lsr(t, z, 2.0, 0.2)),
            1e-14,
        );
        let ace_plain = |t: usize, z: &[f64]| {
            let l = scalar::log_sum_exp(z);
            let p: Vec<f64> = z.iter().map(|v| (v - l).exp()).collect();
            ace(t, &p, 1.0, 1.1)
        };
        close(
            ace_batch(x, &labels, 1.0, 1.1).item(),
            mean(&ace_plain),
            1e-14,
        );
        let g = backward(cross_entropy_batch(x, &labels), &[x], false).unwrap()[0].value();
        // softmax - onehot, halved by the batch mean
        let l = scalar::log_sum_exp(&rows[0]);
        close(g.get(0, 2), ((rows[0][2] - l).exp() - 1.0) / 2.0, 1e-15);
    }
}
