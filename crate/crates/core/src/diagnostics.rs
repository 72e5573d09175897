//! Numeric forms of the bias, variance and minimax bounds for the triply
//! robust estimator. The theorems are asymptotic, so every value here holds
//! only up to the constant `c` (default 1).

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Upper bound of `π(a|x) / p(a|x)` over the data.
    pub w: f64,
    /// Upper bound of `ρ_r`.
    pub b: f64,
    pub sigma0_sq: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Lower bound of the feature magnitude.
    pub l: f64,
    pub n: f64,
    pub delta: f64,
    pub epsilon: f64,
    /// Empirical mean of `w·r` on the logged data.
    pub e_p_wr: f64,
    pub c: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            w: 1.0,
            b: 1e3,
            sigma0_sq: 1.0,
            eta1: 0.0,
            eta2: 0.0,
            l: 1.0,
            n: 1.0,
            delta: 0.05,
            epsilon: 0.0,
            e_p_wr: 0.0,
            c: 1.0,
        }
    }
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        let all = [
            self.w,
            self.b,
            self.sigma0_sq,
            self.eta1,
            self.eta2,
            self.l,
            self.n,
            self.delta,
            self.epsilon,
            self.e_p_wr,
            self.c,
        ];
        if all.iter().any(|v| v.is_nan()) {
            return Err(OpeError::invalid("bound inputs must not be NaN"));
        }
        if !(self.l > 0.0) {
            return Err(OpeError::invalid("feature lower bound l must be positive"));
        }
        if !(self.n >= 1.0) {
            return Err(OpeError::invalid("sample count must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(OpeError::invalid("delta must lie in (0, 1)"));
        }
        if self.eta1 < 0.0 || self.eta2 < 0.0 {
            return Err(OpeError::invalid(
                "slacks eta1 and eta2 must be nonnegative",
            ));
        }
        if self.w < 0.0
            || self.b < 0.0
            || !(self.sigma0_sq > 0.0)
            || self.epsilon < 0.0
            || self.c < 0.0
        {
            return Err(OpeError::invalid(
                "W, B, epsilon and c must be nonnegative and sigma0_sq positive",
            ));
        }
        Ok(())
    }
}

/// `W·η₁/l + ε + c·sqrt(W·ln(1/δ)/n)`.
pub fn bias_bound(x: &BoundInputs) -> Result<f64> {
    x.validate()?;
    Ok(x.w * x.eta1 / x.l + x.epsilon + x.c * (x.w * (1.0 / x.delta).ln() / x.n).sqrt())
}

/// `2W²η₂ + 2W²/(2WB + 1/σ₀²) + c·W²·sqrt(ln(1/δ)/n) + 2ε²`.
pub fn variance_bound(x: &BoundInputs) -> Result<f64> {
    x.validate()?;
    let w2 = x.w * x.w;
    Ok(2.0 * w2 * x.eta2
        + 2.0 * w2 / (2.0 * x.w * x.b + 1.0 / x.sigma0_sq)
        + x.c * w2 * ((1.0 / x.delta).ln() / x.n).sqrt()
        + 2.0 * x.epsilon * x.epsilon)
}

/// Minimum of the two lower-bound terms, with `w` taken as the scalar `W`.
pub fn minimax_lower_bound(x: &BoundInputs) -> Result<f64> {
    x.validate()?;
    let w2 = x.w * x.w;
    let first = w2 * x.eta2 * x.eta2 / (64.0 * E * x.l * x.l);
    let m = x.n + 2.0;
    let root = (16.0 * x.e_p_wr * x.e_p_wr + 8.0 * w2 * m * x.eta1).sqrt();
    let second = (-4.0 * x.e_p_wr + root).powi(2) / (128.0 * E * m * m);
    Ok(first.min(second))
}

/// All three bounds for one set of inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bias: f64,
    pub variance: f64,
    pub minimax: f64,
}

pub fn bound_report(x: &BoundInputs) -> Result<BoundReport> {
    Ok(BoundReport {
        bias: bias_bound(x)?,
        variance: variance_bound(x)?,
        minimax: minimax_lower_bound(x)?,
    })
}
