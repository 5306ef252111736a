//! Per-firm posterior parameter estimates and population-level moments of
//! the fitted parameter distribution.
//!
//! Two bases are emitted side by side and must be read differently:
//! - "mixture" moments are taken directly under the fitted mixing
//!   distribution pi* over grid types;
//! - "posterior means" moments are taken across firms' posterior-mean
//!   parameters, which shrink toward the center, so their dispersion
//!   understates mixture dispersion (law of total variance).
//!
//! All standard deviations here are population-style (divide by n), which
//! makes the total-variance identity exact at the fixed point.

use crate::error::{Error, Result};
use crate::likelihood::LogDensitySource;
use crate::model::{Family, ModelSpec};
use crate::solver::MixingDistribution;
use crate::stats::{correlation, sample_quantile, sd_pop, weighted_quantile_lower};
use crate::grid::TypeTable;
use rayon::prelude::*;
use serde::Serialize;

/// Posterior summary for one firm.
#[derive(Debug, Clone)]
pub struct FirmPosterior {
    pub firm_id: String,
    /// Posterior mean of each model parameter.
    pub expected: Vec<f64>,
    /// Posterior standard deviation of each parameter.
    pub sd: Vec<f64>,
    /// Most probable type index (lowest index on ties).
    pub top_type: usize,
}

impl FirmPosterior {
    /// Time-averaged factor-neutral productivity at the posterior means.
    /// Exact posterior mean of alpha_bar by linearity.
    pub fn intercept(&self, model: &ModelSpec) -> f64 {
        match model.family {
            Family::IntensiveCd => self.expected[0],
            _ => model
                .time_avg_intercept(&crate::model::ParamVector(self.expected.clone()))
                .expect("intercept defined"),
        }
    }

    /// Scale elasticity at the posterior means (beta+gamma, nu, or b);
    /// exact posterior mean by linearity.
    pub fn scale(&self, model: &ModelSpec) -> f64 {
        model.returns_to_scale(&crate::model::ParamVector(self.expected.clone()))
    }
}

/// Posterior over the support for every firm, reduced to means and SDs.
pub fn firm_posteriors<S: LogDensitySource + ?Sized>(
    src: &S,
    pi: &MixingDistribution,
    table: &TypeTable,
    firm_ids: &[String],
) -> Result<Vec<FirmPosterior>> {
    if firm_ids.len() != src.n_firms() {
        return Err(Error::invalid("firm id count does not match source"));
    }
    if pi.q() != src.n_types() {
        return Err(Error::invalid("prior length does not match type count"));
    }
    let support = pi.support_indices();
    if support.is_empty() {
        return Err(Error::invalid("prior has empty support"));
    }
    let p = table.model.n_params();
    // Parameter values over the support, row per supported type.
    let mut values = vec![0.0; support.len() * p];
    for (j, &q) in support.iter().enumerate() {
        table.write_params(q, &mut values[j * p..(j + 1) * p]);
    }
    let ln_pi: Vec<f64> = support.iter().map(|&q| pi.weights[q].ln()).collect();

    let results: Vec<Result<FirmPosterior>> = (0..src.n_firms())
        .into_par_iter()
        .map(|firm| {
            let mut row = vec![0.0; support.len()];
            src.fill(firm..firm + 1, &support, &mut row);
            let mut m = f64::NEG_INFINITY;
            for (v, lp) in row.iter_mut().zip(ln_pi.iter()) {
                *v += lp;
                if *v > m {
                    m = *v;
                }
            }
            if m == f64::NEG_INFINITY {
                return Err(Error::numerical(format!(
                    "firm {firm} has zero likelihood under every supported type"
                )));
            }
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            let mut top = 0usize;
            let mut top_w = f64::NEG_INFINITY;
            let mut mean = vec![0.0; p];
            let mut second = vec![0.0; p];
            for (j, &e) in row.iter().enumerate() {
                let h = e / z;
                if h > top_w {
                    top_w = h;
                    top = support[j];
                }
                let vals = &values[j * p..(j + 1) * p];
                for a in 0..p {
                    mean[a] += h * vals[a];
                    second[a] += h * vals[a] * vals[a];
                }
            }
            let sd: Vec<f64> = mean
                .iter()
                .zip(second.iter())
                .map(|(m, s2)| (s2 - m * m).max(0.0).sqrt())
                .collect();
            Ok(FirmPosterior {
                firm_id: firm_ids[firm].clone(),
                expected: mean,
                sd,
                top_type: top,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// Which distribution a moment table was computed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentBasis {
    Mixture,
    PosteriorMeans,
}

/// Means, SDs, correlations, and marginal quantiles of the parameter
/// distribution, including the derived columns alpha_bar and scale.
#[derive(Debug, Clone, Serialize)]
pub struct PopulationMoments {
    pub basis: MomentBasis,
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub p10: Vec<f64>,
    pub p50: Vec<f64>,
    pub p90: Vec<f64>,
    /// Row-major correlation matrix aligned with `names`.
    pub corr: Vec<Vec<f64>>,
}

/// Parameter values of one type extended with (alpha_bar, scale).
fn extended_values(model: &ModelSpec, table: &TypeTable, q: usize, out: &mut Vec<f64>) {
    let p = model.n_params();
    out.resize(p + 2, 0.0);
    table.write_params(q, &mut out[..p]);
    let pv = crate::model::ParamVector(out[..p].to_vec());
    out[p] = match model.family {
        Family::IntensiveCd => pv.0[0],
        _ => model.time_avg_intercept(&pv).expect("intercept defined"),
    };
    out[p + 1] = model.returns_to_scale(&pv);
}

pub fn extended_names(model: &ModelSpec) -> Vec<String> {
    let mut names: Vec<String> = model.param_names().iter().map(|s| s.to_string()).collect();
    names.push("alpha_bar".into());
    names.push("scale".into());
    names
}

fn moments_from_weighted(
    basis: MomentBasis,
    names: Vec<String>,
    rows: &[Vec<f64>],
    weights: &[f64],
) -> PopulationMoments {
    let d = names.len();
    let n = rows.len();
    assert_eq!(n, weights.len());
    let mut mean = vec![0.0; d];
    let mut cross = vec![0.0; d * d];
    for (row, &w) in rows.iter().zip(weights.iter()) {
        for a in 0..d {
            mean[a] += w * row[a];
            for b in a..d {
                cross[a * d + b] += w * row[a] * row[b];
            }
        }
    }
    let mut sd = vec![0.0; d];
    for a in 0..d {
        sd[a] = (cross[a * d + a] - mean[a] * mean[a]).max(0.0).sqrt();
    }
    let mut corr = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in 0..d {
            if a == b {
                corr[a][b] = 1.0;
            } else {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let cov = cross[lo * d + hi] - mean[lo] * mean[hi];
                corr[a][b] = if sd[a] > 0.0 && sd[b] > 0.0 {
                    (cov / (sd[a] * sd[b])).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
            }
        }
    }
    let mut p10 = vec![0.0; d];
    let mut p50 = vec![0.0; d];
    let mut p90 = vec![0.0; d];
    for a in 0..d {
        let pairs: Vec<(f64, f64)> = rows.iter().zip(weights.iter()).map(|(r, &w)| (r[a], w)).collect();
        p10[a] = weighted_quantile_lower(&pairs, 0.10);
        p50[a] = weighted_quantile_lower(&pairs, 0.50);
        p90[a] = weighted_quantile_lower(&pairs, 0.90);
    }
    PopulationMoments { basis, names, mean, sd, p10, p50, p90, corr }
}

/// Moments of the discrete mixture pi* over grid values.
pub fn population_moments(
    pi: &MixingDistribution,
    table: &TypeTable,
    model: &ModelSpec,
) -> PopulationMoments {
    let support = pi.support_indices();
    let mut rows = Vec::with_capacity(support.len());
    let mut weights = Vec::with_capacity(support.len());
    let mut buf = Vec::new();
    for &q in &support {
        extended_values(model, table, q, &mut buf);
        rows.push(buf.clone());
        weights.push(pi.weights[q]);
    }
    moments_from_weighted(MomentBasis::Mixture, extended_names(model), &rows, &weights)
}

/// Moments across firms' posterior-mean parameters (equal firm weights).
pub fn posterior_mean_moments(
    posteriors: &[FirmPosterior],
    model: &ModelSpec,
) -> PopulationMoments {
    let p = model.n_params();
    let w = 1.0 / posteriors.len() as f64;
    let rows: Vec<Vec<f64>> = posteriors
        .iter()
        .map(|fp| {
            let mut row = fp.expected.clone();
            row.reserve(2);
            row.push(fp.intercept(model));
            row.push(fp.scale(model));
            debug_assert_eq!(row.len(), p + 2);
            row
        })
        .collect();
    // Equal weights -> lower weighted quantiles degrade to type-1 sample
    // quantiles; replace with the midpoint convention used for samples.
    let mut m = moments_from_weighted(
        MomentBasis::PosteriorMeans,
        extended_names(model),
        &rows,
        &vec![w; posteriors.len()],
    );
    for a in 0..m.names.len() {
        let mut col: Vec<f64> = rows.iter().map(|r| r[a]).collect();
        col.sort_by(|x, y| x.partial_cmp(y).unwrap());
        m.p10[a] = sample_quantile(&col, 0.10);
        m.p50[a] = sample_quantile(&col, 0.50);
        m.p90[a] = sample_quantile(&col, 0.90);
    }
    m
}

/// One row of the dispersion table: median, SD, and the P90/P10 level
/// ratio. For intercept-like parameters the ratio is exp(q90 - q10)
/// (ratio of levels exp(param)); for elasticities it is the raw quantile
/// ratio.
#[derive(Debug, Clone, Serialize)]
pub struct DispersionRow {
    pub param: String,
    pub median: f64,
    pub sd: f64,
    pub p90_p10: f64,
    /// Set when P10 is zero and the raw ratio is reported as infinite.
    pub infinite_ratio: bool,
}

fn dispersion_rows(m: &PopulationMoments) -> Vec<DispersionRow> {
    m.names
        .iter()
        .enumerate()
        .map(|(a, name)| {
            let (ratio, infinite) = if Family::is_log_level_param(name) {
                ((m.p90[a] - m.p10[a]).exp(), false)
            } else if m.p10[a] == 0.0 {
                (f64::INFINITY, true)
            } else {
                (m.p90[a] / m.p10[a], false)
            };
            DispersionRow {
                param: name.clone(),
                median: m.p50[a],
                sd: m.sd[a],
                p90_p10: ratio,
                infinite_ratio: infinite,
            }
        })
        .collect()
}

/// Dispersion metrics across firm posterior means.
pub fn dispersion_from_posteriors(
    posteriors: &[FirmPosterior],
    model: &ModelSpec,
) -> Result<Vec<DispersionRow>> {
    if posteriors.is_empty() {
        return Err(Error::invalid("no posteriors"));
    }
    Ok(dispersion_rows(&posterior_mean_moments(posteriors, model)))
}

/// Dispersion metrics of the mixture itself.
pub fn dispersion_from_moments(m: &PopulationMoments) -> Vec<DispersionRow> {
    dispersion_rows(m)
}

/// Population SD of firm posterior-mean values of one extended column.
pub fn posterior_mean_sd(posteriors: &[FirmPosterior], model: &ModelSpec, column: &str) -> f64 {
    let names = extended_names(model);
    let idx = names.iter().position(|n| n == column).expect("known column");
    let p = model.n_params();
    let vals: Vec<f64> = posteriors
        .iter()
        .map(|fp| {
            if idx < p {
                fp.expected[idx]
            } else if idx == p {
                fp.intercept(model)
            } else {
                fp.scale(model)
            }
        })
        .collect();
    sd_pop(&vals)
}

/// Correlation between two extended columns across firm posterior means.
pub fn posterior_mean_corr(
    posteriors: &[FirmPosterior],
    model: &ModelSpec,
    col_a: &str,
    col_b: &str,
) -> f64 {
    let names = extended_names(model);
    let p = model.n_params();
    let col = |name: &str| -> Vec<f64> {
        let idx = names.iter().position(|n| n == name).expect("known column");
        posteriors
            .iter()
            .map(|fp| {
                if idx < p {
                    fp.expected[idx]
                } else if idx == p {
                    fp.intercept(model)
                } else {
                    fp.scale(model)
                }
            })
            .collect()
    };
    correlation(&col(col_a), &col(col_b))
}
