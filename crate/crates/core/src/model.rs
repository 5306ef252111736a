//! The three production-model families behind one interface: parameter
//! layout, conditional mean of log output, and per-firm derived quantities.
//!
//! Parameter layouts (the error scale `s` is always last):
//! - dynamic Cobb-Douglas: (alpha0, beta, gamma, alpha1, alpha2, s) with
//!   mean alpha0 + alpha1*t + alpha2*t^2 + beta*k + gamma*l;
//! - generalized CES: (alpha0, omega, nu, sigma, alpha1, alpha2, s) with
//!   mean alpha0 + alpha1*t + alpha2*t^2
//!   + nu*(sigma/(sigma-1)) * ln(omega*K^((sigma-1)/sigma) + (1-omega)*L^((sigma-1)/sigma));
//! - intensive Cobb-Douglas: (a, b, s) with mean a + b*k, where k is log
//!   capital per worker.

use crate::error::{Error, Result};
use crate::stats::log_add_exp;
use serde::{Deserialize, Serialize};

/// Half-width of the excluded band around sigma = 1, where the CES
/// exponent sigma/(sigma-1) blows up.
pub const EPS_SIGMA: f64 = 1e-3;

/// Smallest admissible error standard deviation. A zero-variance type makes
/// the likelihood degenerate.
pub const S_MIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "cd")]
    DynamicCd,
    #[serde(rename = "ces")]
    GeneralizedCes,
    #[serde(rename = "intensive")]
    IntensiveCd,
}

impl Family {
    /// Parse the CLI/config spelling: "cd" | "ces" | "intensive".
    pub fn parse(s: &str) -> Result<Family> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cd" => Ok(Family::DynamicCd),
            "ces" => Ok(Family::GeneralizedCes),
            "intensive" => Ok(Family::IntensiveCd),
            other => Err(Error::invalid(format!(
                "unknown model family {other:?}; expected one of: cd, ces, intensive"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::DynamicCd => "cd",
            Family::GeneralizedCes => "ces",
            Family::IntensiveCd => "intensive",
        }
    }

    /// Ordered parameter names; this order is the lexicographic order used
    /// by the type table (last name varies fastest).
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Family::DynamicCd => &["alpha0", "beta", "gamma", "alpha1", "alpha2", "s"],
            Family::GeneralizedCes => {
                &["alpha0", "omega", "nu", "sigma", "alpha1", "alpha2", "s"]
            }
            Family::IntensiveCd => &["a", "b", "s"],
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_names().len()
    }

    /// Grid point counts used when the configuration does not override them.
    pub fn default_points(&self) -> Vec<usize> {
        match self {
            Family::DynamicCd => vec![15, 15, 15, 6, 6, 6],
            Family::GeneralizedCes => vec![9, 9, 9, 9, 6, 6, 6],
            Family::IntensiveCd => vec![15, 15, 6],
        }
    }

    /// True for parameters measured in log-output units (intercept-like),
    /// where level ratios are exp of quantile differences.
    pub fn is_log_level_param(name: &str) -> bool {
        matches!(name, "alpha0" | "alpha_bar" | "a")
    }
}

/// A model family plus the panel length needed for time-averaging the
/// intercept dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Number of periods T; periods are indexed t = 1..=T.
    pub t_periods: usize,
}

impl ModelSpec {
    pub fn new(family: Family, t_periods: usize) -> ModelSpec {
        ModelSpec { family, t_periods }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        self.family.param_names()
    }

    pub fn n_params(&self) -> usize {
        self.family.n_params()
    }

    /// Check admissibility: nonnegative elasticities, omega in [0,1],
    /// sigma positive and outside the band around 1, s >= S_MIN.
    pub fn validate_params(&self, p: &ParamVector) -> Result<()> {
        if p.0.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, model {:?} expects {}",
                p.0.len(),
                self.family,
                self.n_params()
            )));
        }
        if p.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter value"));
        }
        let s = *p.0.last().unwrap();
        if s < S_MIN {
            return Err(Error::invalid(format!("s = {s} below minimum {S_MIN}")));
        }
        match self.family {
            Family::DynamicCd => {
                if p.0[1] < 0.0 || p.0[2] < 0.0 {
                    return Err(Error::invalid("beta and gamma must be nonnegative"));
                }
            }
            Family::GeneralizedCes => {
                let (omega, nu, sigma) = (p.0[1], p.0[2], p.0[3]);
                if !(0.0..=1.0).contains(&omega) {
                    return Err(Error::invalid("omega must lie in [0,1]"));
                }
                if nu < 0.0 {
                    return Err(Error::invalid("nu must be nonnegative"));
                }
                if sigma <= 0.0 || (sigma - 1.0).abs() < EPS_SIGMA {
                    return Err(Error::invalid(format!(
                        "sigma = {sigma} must be positive and outside 1 +/- {EPS_SIGMA}"
                    )));
                }
            }
            Family::IntensiveCd => {}
        }
        Ok(())
    }

    /// Conditional mean of log output h(X; psi) at log inputs (k, l) and
    /// period t (1-based). For the intensive family, k is log capital per
    /// worker and l is ignored.
    pub fn mean_output(&self, p: &ParamVector, k: f64, l: f64, t: i64) -> f64 {
        let t = t as f64;
        match self.family {
            Family::DynamicCd => {
                let v = &p.0;
                v[0] + v[3] * t + v[4] * t * t + v[1] * k + v[2] * l
            }
            Family::GeneralizedCes => {
                let v = &p.0;
                let (alpha0, omega, nu, sigma, a1, a2) = (v[0], v[1], v[2], v[3], v[4], v[5]);
                alpha0 + a1 * t + a2 * t * t + nu * ces_aggregate_log(k, l, omega, sigma)
            }
            Family::IntensiveCd => p.0[0] + p.0[1] * k,
        }
    }

    /// Time-averaged factor-neutral productivity:
    /// (1/T) sum_{t=1..T} (alpha0 + alpha1*t + alpha2*t^2).
    ///
    /// Errors for the intensive family, which has no intercept dynamics.
    pub fn time_avg_intercept(&self, p: &ParamVector) -> Result<f64> {
        let (a0, a1, a2) = match self.family {
            Family::DynamicCd => (p.0[0], p.0[3], p.0[4]),
            Family::GeneralizedCes => (p.0[0], p.0[5], p.0[6]),
            Family::IntensiveCd => {
                return Err(Error::invalid(
                    "time_avg_intercept is undefined for the intensive family",
                ))
            }
        };
        let t = self.t_periods as f64;
        // Closed forms of sum t and sum t^2 over 1..=T.
        let mean_t = (t + 1.0) / 2.0;
        let mean_t2 = (t + 1.0) * (2.0 * t + 1.0) / 6.0;
        Ok(a0 + a1 * mean_t + a2 * mean_t2)
    }

    /// Scale elasticity: beta + gamma (CD), nu (CES), or b (intensive).
    pub fn returns_to_scale(&self, p: &ParamVector) -> f64 {
        match self.family {
            Family::DynamicCd => p.0[1] + p.0[2],
            Family::GeneralizedCes => p.0[2],
            Family::IntensiveCd => p.0[1],
        }
    }

    /// Error standard deviation s (always the last parameter).
    pub fn error_sd(&self, p: &ParamVector) -> f64 {
        *p.0.last().unwrap()
    }
}

/// One parameter configuration in the model's fixed layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// ln(omega*K^a + (1-omega)*L^a) / a with a = (sigma-1)/sigma and K, L the
/// input levels exp(k), exp(l). Computed entirely in log space via a
/// max-shift so large |k|, |l| cannot overflow.
#[inline]
pub fn ces_aggregate_log(k: f64, l: f64, omega: f64, sigma: f64) -> f64 {
    debug_assert!((sigma - 1.0).abs() >= EPS_SIGMA && sigma > 0.0);
    let a = (sigma - 1.0) / sigma;
    // ln(omega*e^{a k} + (1-omega)*e^{a l}) = logaddexp(ln omega + a k, ln(1-omega) + a l)
    let x = omega.ln() + a * k;
    let y = (1.0 - omega).ln() + a * l;
    log_add_exp(x, y) / a
}
