//! Bregman functions and divergences.
//!
//! Three Bregman functions are provided: mean-square `Σ x_i²`, a smoothed
//! Kullback-Leibler `Σ x_i ln̲(x_i)` and a smoothed Itakura-Saito
//! `-Σ ln̲(x_i)`, where `ln̲` replaces the logarithm below a threshold ε by
//! its second-order expansion so all three are finite and differentiable on
//! the whole line. The induced divergence is
//! `D_f(x, y) = f(x) - f(y) - ∇f(y)ᵀ(x - y)`.

use crate::{Error, Result};

/// Default smoothing threshold for the modified logarithm.
pub const DEFAULT_EPS_LOG: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BregmanKind {
    Ms,
    Kl,
    Is,
}

impl BregmanKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BregmanKind::Ms => "ms",
            BregmanKind::Kl => "kl",
            BregmanKind::Is => "is",
        }
    }
}

impl std::str::FromStr for BregmanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ms" => Ok(BregmanKind::Ms),
            "kl" => Ok(BregmanKind::Kl),
            "is" => Ok(BregmanKind::Is),
            other => Err(Error::config(format!(
                "unknown bregman kind {other:?}, expected ms, kl or is"
            ))),
        }
    }
}

impl std::fmt::Display for BregmanKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A Bregman function choice together with its log-smoothing threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BregmanSpec {
    pub kind: BregmanKind,
    pub eps_log: f64,
}

/// Smoothed logarithm and its derivative, sharing one branch test so value
/// and gradient can never disagree about which side of ε they are on.
fn smoothed_log_pair(x: f64, eps: f64) -> (f64, f64) {
    if x >= eps {
        (x.ln(), 1.0 / x)
    } else {
        let u = x - eps;
        (
            eps.ln() + u / eps - u * u / (2.0 * eps * eps),
            1.0 / eps - u / (eps * eps),
        )
    }
}

/// `ln(x)` for `x ≥ ε`; the second-order expansion around ε below. C² at ε
/// and defined for every real `x`.
pub fn smoothed_log(x: f64, eps_log: f64) -> f64 {
    smoothed_log_pair(x, eps_log).0
}

/// Derivative of [`smoothed_log`].
pub fn smoothed_log_deriv(x: f64, eps_log: f64) -> f64 {
    smoothed_log_pair(x, eps_log).1
}

impl BregmanSpec {
    pub fn new(kind: BregmanKind, eps_log: f64) -> Result<Self> {
        if !(eps_log > 0.0 && eps_log.is_finite()) {
            return Err(Error::invalid("eps_log must be positive"));
        }
        Ok(BregmanSpec { kind, eps_log })
    }

    pub fn with_default_smoothing(kind: BregmanKind) -> Self {
        BregmanSpec {
            kind,
            eps_log: DEFAULT_EPS_LOG,
        }
    }

    /// `f(x)` for the selected Bregman function.
    pub fn value(&self, x: &[f64]) -> f64 {
        let eps = self.eps_log;
        match self.kind {
            BregmanKind::Ms => x.iter().map(|&v| v * v).sum(),
            BregmanKind::Kl => x.iter().map(|&v| v * smoothed_log(v, eps)).sum(),
            BregmanKind::Is => -x.iter().map(|&v| smoothed_log(v, eps)).sum::<f64>(),
        }
    }

    /// Componentwise `∇f(x)`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let eps = self.eps_log;
        match self.kind {
            BregmanKind::Ms => x.iter().map(|&v| 2.0 * v).collect(),
            BregmanKind::Kl => x
                .iter()
                .map(|&v| {
                    let (ln_v, dln_v) = smoothed_log_pair(v, eps);
                    ln_v + v * dln_v
                })
                .collect(),
            BregmanKind::Is => x.iter().map(|&v| -smoothed_log_deriv(v, eps)).collect(),
        }
    }

    /// `D_f(x, y) = f(x) - f(y) - ∇f(y)ᵀ(x - y)`.
    pub fn divergence(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let grad_y = self.gradient(y);
        let inner: f64 = grad_y
            .iter()
            .zip(x.iter().zip(y))
            .map(|(&g, (&a, &b))| g * (a - b))
            .sum();
        self.value(x) - self.value(y) - inner
    }
}
