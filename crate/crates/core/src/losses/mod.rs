//! Handcrafted losses, the sparse label-smoothing family, and the
//! learning-rule (`delta`) analysis.
//!
//! Losses are addressable by short spec strings:
//!
//! ```
//! use metaloss::losses::LossSpec;
//!
//! let spec: LossSpec = "focal-sparse-lsr:2:0.2".parse().unwrap();
//! assert_eq!(spec.to_string(), "focal-sparse-lsr:2:0.2");
//! assert!("huber".parse::<LossSpec>().is_err());
//! ```

pub mod classification;
mod delta;
pub mod regression;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::Var;
use crate::harness::TaskKind;

pub use classification::{
    ace, cross_entropy, focal, focal_sparse_lsr, lsr, lsr_from_lse, sparse_lsr,
    sparse_lsr_from_logp, sparse_lsr_from_lse, Counter, NoCount, OpCount, SPARSE_EPS,
};
pub use delta::{delta_behavior, regime_predictions, DeltaLoss, DeltaReport, Regime};
pub use regression::RobustKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("unknown loss `{0}`")]
    Unknown(String),
    #[error("loss `{spec}`: {msg}")]
    BadParam { spec: String, msg: String },
    #[error("loss `{spec}` does not apply to {kind:?} tasks")]
    WrongKind { spec: String, kind: TaskKind },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    CrossEntropy,
    Lsr { xi: f64 },
    SparseLsr { xi: f64 },
    Ace { phi0: f64, phi1: f64 },
    Focal { gamma: f64 },
    FocalSparseLsr { gamma: f64, xi: f64 },
    Robust { kind: RobustKind, delta: f64 },
}

impl LossSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            LossSpec::Robust { .. } => TaskKind::Regression,
            _ => TaskKind::Classification,
        }
    }

    /// Mean classification loss over a batch of logits.
    pub fn classification<'t>(
        &self,
        logits: Var<'t>,
        labels: &[usize],
    ) -> Result<Var<'t>, LossError> {
        use classification as c;
        Ok(match *self {
            LossSpec::CrossEntropy => c::cross_entropy_batch(logits, labels),
            LossSpec::Lsr { xi } => c::lsr_batch(logits, labels, xi),
            LossSpec::SparseLsr { xi } => c::sparse_lsr_batch(logits, labels, xi),
            LossSpec::Ace { phi0, phi1 } => c::ace_batch(logits, labels, phi0, phi1),
            LossSpec::Focal { gamma } => c::focal_batch(logits, labels, gamma),
            LossSpec::FocalSparseLsr { gamma, xi } => {
                c::focal_sparse_lsr_batch(logits, labels, gamma, xi)
            }
            LossSpec::Robust { .. } => {
                return Err(LossError::WrongKind {
                    spec: self.to_string(),
                    kind: TaskKind::Classification,
                })
            }
        })
    }

    /// Mean regression loss over a batch of predictions.
    pub fn regression<'t>(&self, pred: Var<'t>, y: Var<'t>) -> Result<Var<'t>, LossError> {
        match *self {
            LossSpec::Robust { kind, delta } => Ok(kind.batch(pred, y, delta)),
            _ => Err(LossError::WrongKind {
                spec: self.to_string(),
                kind: TaskKind::Regression,
            }),
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::CrossEntropy => write!(f, "ce"),
            LossSpec::Lsr { xi } => write!(f, "lsr:{xi}"),
            LossSpec::SparseLsr { xi } => write!(f, "sparse-lsr:{xi}"),
            LossSpec::Ace { phi0, phi1 } => write!(f, "ace:{phi0}:{phi1}"),
            LossSpec::Focal { gamma } => write!(f, "focal:{gamma}"),
            LossSpec::FocalSparseLsr { gamma, xi } => write!(f, "focal-sparse-lsr:{gamma}:{xi}"),
            LossSpec::Robust {
                kind: RobustKind::Squared,
                ..
            } => write!(f, "squared"),
            LossSpec::Robust { kind, delta } => write!(f, "{}:{delta}", kind.name()),
        }
    }
}

impl FromStr for LossSpec {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or("");
        let args: Vec<&str> = parts.collect();
        let bad = |msg: &str| LossError::BadParam {
            spec: s.to_string(),
            msg: msg.to_string(),
        };
        let nums = |n: usize| -> Result<Vec<f64>, LossError> {
            if args.len() != n {
                return Err(bad(&format!(
                    "expected {n} parameter(s), got {}",
                    args.len()
                )));
            }
            args.iter()
                .map(|a| {
                    a.parse::<f64>()
                        .map_err(|_| bad(&format!("`{a}` is not a number")))
                })
                .collect()
        };
        let smoothing = |xi: f64| {
            if (0.0..1.0).contains(&xi) {
                Ok(xi)
            } else {
                Err(bad("smoothing must lie in [0, 1)"))
            }
        };
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(bad(&format!("{what} must be positive")))
            }
        };
        let nonneg = |v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(bad("gamma must be non-negative"))
            }
        };
        match name {
            "ce" => nums(0).map(|_| LossSpec::CrossEntropy),
            "lsr" => Ok(LossSpec::Lsr {
                xi: smoothing(nums(1)?[0])?,
            }),
            "sparse-lsr" => Ok(LossSpec::SparseLsr {
                xi: smoothing(nums(1)?[0])?,
            }),
            "ace" => {
                let v = nums(2)?;
                Ok(LossSpec::Ace {
                    phi0: positive(v[0], "phi0")?,
                    phi1: positive(v[1], "phi1")?,
                })
            }
            "focal" => Ok(LossSpec::Focal {
                gamma: nonneg(nums(1)?[0])?,
            }),
            "focal-sparse-lsr" => {
                let v = nums(2)?;
                Ok(LossSpec::FocalSparseLsr {
                    gamma: nonneg(v[0])?,
                    xi: smoothing(v[1])?,
                })
            }
            "squared" => nums(0).map(|_| LossSpec::Robust {
                kind: RobustKind::Squared,
                delta: 1.0,
            }),
            other => match RobustKind::from_name(other) {
                Some(kind) => Ok(LossSpec::Robust {
                    kind,
                    delta: positive(nums(1)?[0], "delta")?,
                }),
                None => Err(LossError::Unknown(s.to_string())),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip() {
        for s in [
            "ce",
            "lsr:0.1",
            "sparse-lsr:0.1",
            "ace:1:1.1",
            "focal:2",
            "focal-sparse-lsr:2:0.2",
            "squared",
            "pseudo-huber:1",
            "cauchy:0.5",
            "geman-mcclure:2",
            "welsh:1.5",
        ] {
            let spec: LossSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
    }

    #[test]
    fn spec_errors() {
        assert!(matches!(
            "nope".parse::<LossSpec>(),
            Err(LossError::Unknown(_))
        ));
        assert!(matches!(
            "lsr".parse::<LossSpec>(),
            Err(LossError::BadParam { .. })
        ));
        assert!(matches!(
            "lsr:1.5".parse::<LossSpec>(),
            Err(LossError::BadParam { .. })
        ));
        assert!(matches!(
            "cauchy:-1".parse::<LossSpec>(),
            Err(LossError::BadParam { .. })
        ));
        assert_eq!(
            "squared".parse::<LossSpec>().unwrap().kind(),
            TaskKind::Regression
        );
    }
}
