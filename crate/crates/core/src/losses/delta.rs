//! Learning-rule decomposition: `delta = -dL/df` evaluated at the start of
//! training (uniform predictions) and near zero training error.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaLoss {
    CrossEntropy,
    Ace { phi0: f64, phi1: f64 },
    Lsr { xi: f64 },
}

impl DeltaLoss {
    pub fn name(&self) -> String {
        match self {
            DeltaLoss::CrossEntropy => "ce".into(),
            DeltaLoss::Ace { phi0, phi1 } => format!("ace:{phi0}:{phi1}"),
            DeltaLoss::Lsr { xi } => format!("lsr:{xi}"),
        }
    }

    /// `delta` for one output with label `y` and prediction `f` over `c` classes.
    pub fn delta(&self, y: f64, f: f64, c: usize) -> f64 {
        let d = match *self {
            DeltaLoss::CrossEntropy => y / f,
            DeltaLoss::Ace { phi0, phi1 } => {
                let l = (phi1 * f).ln();
                if y == 0.0 || l == 0.0 {
                    0.0
                } else {
                    -phi0 * y * l / (f * l.abs())
                }
            }
            DeltaLoss::Lsr { xi } => (y * (1.0 - xi) + xi / c as f64) / f,
        };
        // no negative zero in reports
        d + 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    NullEpoch,
    ZeroError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaReport {
    pub target: f64,
    pub nontarget: f64,
    /// Values at `eps_limit` before extrapolation.
    pub raw_target: f64,
    pub raw_nontarget: f64,
}

/// Predictions for the target and a non-target output.
pub fn regime_predictions(regime: Regime, c: usize, eps: f64) -> (f64, f64) {
    match regime {
        Regime::NullEpoch => (1.0 / c as f64, 1.0 / c as f64),
        Regime::ZeroError => (1.0 - eps * (c as f64 - 1.0), eps),
    }
}

/// Limit of `v(eps)` as `eps -> 0` from samples at `eps` and `eps / 10`.
///
/// Growth by roughly the step factor marks a `1/eps` divergence and maps to
/// an infinity of matching sign; otherwise a Richardson step removes the
/// linear term.
fn limit(v1: f64, v2: f64) -> f64 {
    if v1 == v2 {
        return v2;
    }
    if v1 != 0.0 && (v2 / v1).abs() > 5.0 {
        return f64::INFINITY.copysign(v2);
    }
    v2 + (v2 - v1) / 9.0
}

/// Target and non-target `delta` in the given regime.
pub fn delta_behavior(loss: DeltaLoss, regime: Regime, c: usize, eps_limit: f64) -> DeltaReport {
    let at = |eps: f64| {
        let (ft, fn_) = regime_predictions(regime, c, eps);
        (loss.delta(1.0, ft, c), loss.delta(0.0, fn_, c))
    };
    let (t1, n1) = at(eps_limit);
    match regime {
        Regime::NullEpoch => DeltaReport {
            target: t1,
            nontarget: n1,
            raw_target: t1,
            raw_nontarget: n1,
        },
        Regime::ZeroError => {
            let (t2, n2) = at(eps_limit / 10.0);
            DeltaReport {
                target: limit(t1, t2),
                nontarget: limit(n1, n2),
                raw_target: t1,
                raw_nontarget: n1,
            }
        }
    }
}
