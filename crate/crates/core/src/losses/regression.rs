//! Squared error and four robust alternatives, in the error `e = y - f`.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RobustKind {
    Squared,
    PseudoHuber,
    Cauchy,
    GemanMcClure,
    Welsh,
}

impl RobustKind {
    pub const ALL: [RobustKind; 5] = [
        RobustKind::Squared,
        RobustKind::PseudoHuber,
        RobustKind::Cauchy,
        RobustKind::GemanMcClure,
        RobustKind::Welsh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RobustKind::Squared => "squared",
            RobustKind::PseudoHuber => "pseudo-huber",
            RobustKind::Cauchy => "cauchy",
            RobustKind::GemanMcClure => "geman-mcclure",
            RobustKind::Welsh => "welsh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        RobustKind::ALL.iter().copied().find(|k| k.name() == s)
    }

    pub fn value(self, e: f64, d: f64) -> f64 {
        match self {
            RobustKind::Squared => e * e,
            RobustKind::PseudoHuber => d * d * ((1.0 + (e / d) * (e / d)).sqrt() - 1.0),
            RobustKind::Cauchy => (1.0 + 0.5 * (e / d) * (e / d)).ln(),
            RobustKind::GemanMcClure => e * e / (d + e * e),
            RobustKind::Welsh => d * d / 2.0 * (1.0 - (-(e * e) / (2.0 * d * d)).exp()),
        }
    }

    /// `d/de` of [`RobustKind::value`].
    pub fn derivative(self, e: f64, d: f64) -> f64 {
        match self {
            RobustKind::Squared => 2.0 * e,
            RobustKind::PseudoHuber => e / (1.0 + e * e / (d * d)).sqrt(),
            RobustKind::Cauchy => 2.0 * e / (2.0 * d * d + e * e),
            RobustKind::GemanMcClure => 2.0 * d * e / ((d + e * e) * (d + e * e)),
            RobustKind::Welsh => 0.5 * e * (-(e * e) / (2.0 * d * d)).exp(),
        }
    }

    /// Mean loss over a batch, recorded on the tape.
    pub fn batch<'t>(self, pred: Var<'t>, y: Var<'t>, d: f64) -> Var<'t> {
        let e = y.sub(pred);
        let e2 = e.square();
        let per = match self {
            RobustKind::Squared => e2,
            RobustKind::PseudoHuber => e2
                .scale(1.0 / (d * d))
                .add_scalar(1.0)
                .sqrt()
                .add_scalar(-1.0)
                .scale(d * d),
            RobustKind::Cauchy => e2.scale(0.5 / (d * d)).add_scalar(1.0).ln(),
            RobustKind::GemanMcClure => e2.div(e2.add_scalar(d)),
            RobustKind::Welsh => e2
                .scale(-1.0 / (2.0 * d * d))
                .exp()
                .neg()
                .add_scalar(1.0)
                .scale(d * d / 2.0),
        };
        per.mean()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    #[test]
    fn table_examples() {
        assert_eq!(RobustKind::Squared.value(3.0, 1.0), 9.0);
        assert_eq!(RobustKind::Squared.derivative(3.0, 1.0), 6.0);
        assert_eq!(RobustKind::PseudoHuber.value(0.0, 1.0), 0.0);
        assert!((RobustKind::PseudoHuber.value(1.0, 1.0) - (2f64.sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_differences() {
        let h = 1e-6;
        for k in RobustKind::ALL {
            for &d in &[0.5, 1.0, 2.0] {
                for &e in &[-3.0, -0.7, 0.2, 1.0, 4.5] {
                    let num = (k.value(e + h, d) - k.value(e - h, d)) / (2.0 * h);
                    let a = k.derivative(e, d);
                    assert!(
                        (a - num).abs() / a.abs().max(1.0) < 1e-7,
                        "{k:?} e={e} d={d}: {a} vs {num}"
                    );
                }
            }
        }
    }

    #[test]
    fn batch_matches_plain() {
        let tape = Tape::new();
        let y = tape.constant(Tensor::column(vec![1.0, -2.0, 0.5]));
        let f = tape.constant(Tensor::column(vec![0.2, 1.0, 0.5]));
        for k in RobustKind::ALL {
            let plain = [0.8, -3.0, 0.0]
                .iter()
                .map(|&e| k.value(e, 1.3))
                .sum::<f64>()
                / 3.0;
            assert!((k.batch(f, y, 1.3).item() - plain).abs() < 1e-14, "{k:?}");
        }
    }
}
