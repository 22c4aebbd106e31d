//! Terminal payoffs `h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Payoff: Send + Sync {
    fn eval(&self, x: &[f64]) -> f64;

    /// Declared `(min, max)` over the whole space, when bounded.
    fn bound(&self) -> Option<(f64, f64)> {
        None
    }

    /// True when `eval(x)` was cut by a declared clamp.
    fn clamped(&self, _x: &[f64]) -> bool {
        false
    }
}

/// Named payoffs available from configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StandardPayoff {
    Constant {
        value: f64,
    },
    /// `offset + slope . x`, clamped to `[-clamp, clamp]`.
    Linear {
        slope: Vec<f64>,
        #[serde(default)]
        offset: f64,
        clamp: f64,
    },
    /// `amplitude * tanh((x_1 - center) / scale)`.
    Tanh {
        amplitude: f64,
        scale: f64,
        #[serde(default)]
        center: f64,
    },
    /// `top - curvature |x|^2`.
    Parabola {
        top: f64,
        curvature: f64,
    },
    /// `-kappa |x - center|^2`.
    Well {
        kappa: f64,
        center: Vec<f64>,
    },
}

impl StandardPayoff {
    /// Linear payoff with the conventional clamp `50 eps`.
    pub fn linear_for_eps(slope: Vec<f64>, eps: f64) -> Self {
        StandardPayoff::Linear {
            slope,
            offset: 0.0,
            clamp: 50.0 * eps,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("payoff: {msg}")));
        match self {
            StandardPayoff::Constant { value } if !value.is_finite() => bad("value must be finite"),
            StandardPayoff::Linear { slope, clamp, .. } if slope.len() != n || !(*clamp > 0.0) => {
                bad("linear payoff needs n slopes and clamp > 0")
            }
            StandardPayoff::Tanh { scale, .. } if !(*scale > 0.0) => bad("tanh scale must be > 0"),
            StandardPayoff::Parabola { curvature, .. } if !(*curvature >= 0.0) => bad("curvature must be >= 0"),
            StandardPayoff::Well { kappa, center } if center.len() != n || !(*kappa >= 0.0) => {
                bad("well needs kappa >= 0 and an n-dimensional center")
            }
            _ => Ok(()),
        }
    }

    fn linear_raw(slope: &[f64], offset: f64, x: &[f64]) -> f64 {
        offset + slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl Payoff for StandardPayoff {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            StandardPayoff::Constant { value } => *value,
            StandardPayoff::Linear { slope, offset, clamp } => {
                Self::linear_raw(slope, *offset, x).clamp(-clamp, *clamp)
            }
            StandardPayoff::Tanh {
                amplitude,
                scale,
                center,
            } => amplitude * ((x[0] - center) / scale).tanh(),
            StandardPayoff::Parabola { top, curvature } => top - curvature * x.iter().map(|v| v * v).sum::<f64>(),
            StandardPayoff::Well { kappa, center } => {
                -kappa * x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
        }
    }

    fn bound(&self) -> Option<(f64, f64)> {
        match self {
            StandardPayoff::Constant { value } => Some((*value, *value)),
            StandardPayoff::Linear { clamp, .. } => Some((-clamp, *clamp)),
            StandardPayoff::Tanh { amplitude, .. } => Some((-amplitude.abs(), amplitude.abs())),
            StandardPayoff::Parabola { .. } | StandardPayoff::Well { .. } => None,
        }
    }

    fn clamped(&self, x: &[f64]) -> bool {
        match self {
            StandardPayoff::Linear { slope, offset, clamp } => Self::linear_raw(slope, *offset, x).abs() > *clamp,
            _ => false,
        }
    }
}

/// Payoff from a closure, optionally with a declared bound.
pub struct FnPayoff<F> {
    f: F,
    bound: Option<(f64, f64)>,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> FnPayoff<F> {
    pub fn new(f: F) -> Self {
        Self { f, bound: None }
    }

    pub fn bounded(f: F, lo: f64, hi: f64) -> Self {
        Self { f, bound: Some((lo, hi)) }
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Payoff for FnPayoff<F> {
    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn bound(&self) -> Option<(f64, f64)> {
        self.bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_clamp() {
        let h = StandardPayoff::linear_for_eps(vec![1.0], 0.1);
        assert_eq!(h.eval(&[2.0]), 2.0);
        assert_eq!(h.eval(&[7.0]), 5.0);
        assert!(h.clamped(&[7.0]) && !h.clamped(&[2.0]));
        assert_eq!(h.bound(), Some((-5.0, 5.0)));
    }

    #[test]
    fn parse_tagged() {
        let h: StandardPayoff = serde_json::from_str(r#"{"kind":"tanh","amplitude":1.0,"scale":2.0}"#).unwrap();
        assert_eq!(
            h,
            StandardPayoff::Tanh {
                amplitude: 1.0,
                scale: 2.0,
                center: 0.0
            }
        );
        assert!(serde_json::from_str::<StandardPayoff>(r#"{"kind":"tanh","amplitude":1.0,"scale":2.0,"oops":1}"#).is_err());
    }

    #[test]
    fn shapes() {
        let p = StandardPayoff::Parabola { top: 1.0, curvature: 1.0 };
        assert_eq!(p.eval(&[0.5]), 0.75);
        let w = StandardPayoff::Well {
            kappa: 2.0,
            center: vec![1.0],
        };
        assert_eq!(w.eval(&[0.0]), -2.0);
        assert!(w.validate(2).is_err());
    }
}
