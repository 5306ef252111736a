//! Per-firm OLS estimation of the heterogeneous model — the inefficient
//! baseline that motivates borrowing strength across firms. Also provides
//! pooled OLS as the single-"firm" special case.

use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec};
use crate::panel::PanelDataset;
use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff below which a firm's design matrix is
/// flagged rank deficient.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct FirmOlsEstimate {
    pub firm_id: String,
    /// Regression coefficients in design order; present only when `rank_ok`.
    /// CD order: (alpha0, alpha1, alpha2, beta, gamma); intensive: (a, b).
    pub coefficients: Option<Vec<f64>>,
    pub residual_sd: Option<f64>,
    pub rank_ok: bool,
}

/// Regressor count for the family's linear design.
pub fn design_width(family: Family) -> Result<usize> {
    match family {
        Family::DynamicCd => Ok(5),
        Family::IntensiveCd => Ok(2),
        Family::GeneralizedCes => Err(Error::invalid(
            "the CES family has no per-firm linear OLS baseline",
        )),
    }
}

fn design_row(family: Family, t: f64, k: f64, l: f64) -> Vec<f64> {
    match family {
        Family::DynamicCd => vec![1.0, t, t * t, k, l],
        Family::IntensiveCd => vec![1.0, k],
        Family::GeneralizedCes => unreachable!(),
    }
}

fn fit_ls(id: &str, x: DMatrix<f64>, y: DVector<f64>) -> FirmOlsEstimate {
    let n = x.nrows();
    let p = x.ncols();
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let min_sv = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max_sv > 0.0) || min_sv < RANK_TOL * max_sv {
        return FirmOlsEstimate {
            firm_id: id.to_string(),
            coefficients: None,
            residual_sd: None,
            rank_ok: false,
        };
    }
    let beta = svd.solve(&y, 0.0).expect("svd solve");
    let resid = &y - &x * &beta;
    let dof = (n - p) as f64;
    let sd = if dof > 0.0 {
        (resid.iter().map(|r| r * r).sum::<f64>() / dof).sqrt()
    } else {
        0.0
    };
    FirmOlsEstimate {
        firm_id: id.to_string(),
        coefficients: Some(beta.iter().copied().collect()),
        residual_sd: Some(sd),
        rank_ok: true,
    }
}

/// Least-squares fit of y on the family design, one regression per firm.
/// Rank-deficient firms are flagged rather than dropped.
pub fn per_firm_ols(data: &PanelDataset, model: &ModelSpec) -> Result<Vec<FirmOlsEstimate>> {
    let p = design_width(model.family)?;
    let t_len = data.n_periods();
    if t_len < p + 1 {
        return Err(Error::data(format!(
            "per-firm OLS needs T >= {} periods for this model, panel has {t_len}",
            p + 1
        )));
    }
    let mut out = Vec::with_capacity(data.n_firms());
    for i in 0..data.n_firms() {
        let (y, k, l) = data.firm_rows(i);
        let mut rows = Vec::with_capacity(t_len * p);
        for t in 0..t_len {
            rows.extend(design_row(model.family, (t + 1) as f64, k[t], l[t]));
        }
        let x = DMatrix::from_row_slice(t_len, p, &rows);
        let yv = DVector::from_column_slice(y);
        out.push(fit_ls(&data.firm_ids[i], x, yv));
    }
    Ok(out)
}

/// Pooled OLS: all observations stacked as a single "firm".
pub fn pooled_ols(data: &PanelDataset, model: &ModelSpec) -> Result<FirmOlsEstimate> {
    let p = design_width(model.family)?;
    let t_len = data.n_periods();
    let n = data.n_firms() * t_len;
    if n < p + 1 {
        return Err(Error::data("too few observations for pooled OLS"));
    }
    let mut rows = Vec::with_capacity(n * p);
    for i in 0..data.n_firms() {
        let (_, k, l) = data.firm_rows(i);
        for t in 0..t_len {
            rows.extend(design_row(model.family, (t + 1) as f64, k[t], l[t]));
        }
    }
    let x = DMatrix::from_row_slice(n, p, &rows);
    let y = DVector::from_column_slice(&data.y);
    Ok(fit_ls("pooled", x, y))
}

/// Per-firm intercept proxies from pooled OLS: the firm mean of y minus the
/// pooled fit's non-intercept part. Used for data-adaptive grid ranges.
pub fn pooled_residual_intercepts(data: &PanelDataset, model: &ModelSpec) -> Result<Vec<f64>> {
    let pooled = pooled_ols(data, model)?;
    let coef = pooled
        .coefficients
        .ok_or_else(|| Error::data("pooled OLS design is rank deficient"))?;
    let t_len = data.n_periods();
    let mut out = Vec::with_capacity(data.n_firms());
    for i in 0..data.n_firms() {
        let (y, k, l) = data.firm_rows(i);
        let mut acc = 0.0;
        for t in 0..t_len {
            let row = design_row(model.family, (t + 1) as f64, k[t], l[t]);
            // Skip the intercept column: the residual intercept absorbs it.
            let fitted_slope: f64 =
                row.iter().zip(coef.iter()).skip(1).map(|(x, b)| x * b).sum();
            acc += y[t] - fitted_slope;
        }
        out.push(acc / t_len as f64);
    }
    Ok(out)
}
