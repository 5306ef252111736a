//! Economics analytics on posterior estimates: total technology
//! productivity at common reference inputs, labor markups, variance
//! decomposition by observables, and the technology-dominance diagnostic.

use crate::error::{Error, Result};
use crate::model::{ces_aggregate_log, Family, ModelSpec};
use crate::panel::PanelDataset;
use crate::posterior::FirmPosterior;
use crate::stats::{correlation, decile_groups, mean, sample_quantile_unsorted, sd_pop};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::BTreeMap;

// ---------------------------------------------------------------------------
// Total Technology Productivity

/// Reference input levels for TTP: per-sector medians or explicit levels.
#[derive(Debug, Clone)]
pub enum TtpReference {
    MedianBySector,
    /// Explicit capital and labor levels (not logs).
    Explicit { k0: f64, l0: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct TtpRecord {
    pub firm_id: String,
    pub sector: String,
    /// ln TTP: output the firm would produce at the reference inputs.
    pub ln_ttp: f64,
    /// ln TFP: the time-averaged factor-neutral intercept.
    pub ln_tfp: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TtpSectorRow {
    pub sector: String,
    pub firms: usize,
    pub ttp_p90_p10: f64,
    pub tfp_p90_p10: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TtpSummary {
    /// Level ratios exp(q90 - q10) over all firms pooled.
    pub pooled_ttp_p90_p10: f64,
    pub pooled_tfp_p90_p10: f64,
    /// Unweighted mean of the within-sector ratios.
    pub sector_avg_ttp_p90_p10: f64,
    pub sector_avg_tfp_p90_p10: f64,
    pub per_sector: Vec<TtpSectorRow>,
    pub sd_ln_ttp: f64,
    pub sd_ln_tfp: f64,
}

/// ln TTP per firm at common reference inputs.
///
/// CD uses alpha_bar + beta ln K0 + gamma ln L0; CES uses the analogous
/// aggregate with its own (omega, sigma, nu) at the posterior means. The
/// sector medians of log capital/labor define the per-sector reference.
pub fn compute_ttp(
    posteriors: &[FirmPosterior],
    model: &ModelSpec,
    data: &PanelDataset,
    reference: &TtpReference,
) -> Result<(Vec<TtpRecord>, TtpSummary)> {
    if model.family == Family::IntensiveCd {
        return Err(Error::invalid("TTP is defined for the cd and ces families"));
    }
    if posteriors.len() != data.n_firms() {
        return Err(Error::invalid("posterior count does not match panel"));
    }
    let sectors: Vec<String> = match &data.sector {
        Some(s) => s.clone(),
        None => vec!["all".to_string(); data.n_firms()],
    };
    if matches!(reference, TtpReference::MedianBySector) && data.sector.is_none() {
        return Err(Error::data("median-by-sector reference needs a sector column"));
    }

    // Reference log inputs per sector.
    let mut ref_logs: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    match reference {
        TtpReference::Explicit { k0, l0 } => {
            if *k0 <= 0.0 || *l0 <= 0.0 {
                return Err(Error::invalid("reference levels must be positive"));
            }
            for s in &sectors {
                ref_logs.entry(s.clone()).or_insert((k0.ln(), l0.ln()));
            }
        }
        TtpReference::MedianBySector => {
            let mut pooled: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for i in 0..data.n_firms() {
                let (_, k, l) = data.firm_rows(i);
                let entry = pooled.entry(sectors[i].clone()).or_default();
                entry.0.extend_from_slice(k);
                entry.1.extend_from_slice(l);
            }
            for (s, (ks, ls)) in pooled {
                if ks.is_empty() {
                    return Err(Error::data(format!("sector {s:?} has no observations")));
                }
                ref_logs.insert(
                    s,
                    (sample_quantile_unsorted(&ks, 0.5), sample_quantile_unsorted(&ls, 0.5)),
                );
            }
        }
    }

    let mut records = Vec::with_capacity(posteriors.len());
    for (i, fp) in posteriors.iter().enumerate() {
        let (ln_k0, ln_l0) = ref_logs[&sectors[i]];
        let ln_tfp = fp.intercept(model);
        let ln_ttp = match model.family {
            Family::DynamicCd => ln_tfp + fp.expected[1] * ln_k0 + fp.expected[2] * ln_l0,
            Family::GeneralizedCes => {
                let (omega, nu, sigma) = (fp.expected[1], fp.expected[2], fp.expected[3]);
                ln_tfp + nu * ces_aggregate_log(ln_k0, ln_l0, omega, sigma)
            }
            Family::IntensiveCd => unreachable!(),
        };
        records.push(TtpRecord {
            firm_id: fp.firm_id.clone(),
            sector: sectors[i].clone(),
            ln_ttp,
            ln_tfp,
            scale: fp.scale(model),
        });
    }

    let level_ratio = |vals: &[f64]| -> f64 {
        (sample_quantile_unsorted(vals, 0.9) - sample_quantile_unsorted(vals, 0.1)).exp()
    };
    let all_ttp: Vec<f64> = records.iter().map(|r| r.ln_ttp).collect();
    let all_tfp: Vec<f64> = records.iter().map(|r| r.ln_tfp).collect();
    let mut per_sector = Vec::new();
    let mut by_sector: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &records {
        let e = by_sector.entry(r.sector.clone()).or_default();
        e.0.push(r.ln_ttp);
        e.1.push(r.ln_tfp);
    }
    for (sector, (ttp, tfp)) in by_sector {
        per_sector.push(TtpSectorRow {
            sector,
            firms: ttp.len(),
            ttp_p90_p10: level_ratio(&ttp),
            tfp_p90_p10: level_ratio(&tfp),
        });
    }
    let summary = TtpSummary {
        pooled_ttp_p90_p10: level_ratio(&all_ttp),
        pooled_tfp_p90_p10: level_ratio(&all_tfp),
        sector_avg_ttp_p90_p10: mean(&per_sector.iter().map(|r| r.ttp_p90_p10).collect::<Vec<_>>()),
        sector_avg_tfp_p90_p10: mean(&per_sector.iter().map(|r| r.tfp_p90_p10).collect::<Vec<_>>()),
        per_sector,
        sd_ln_ttp: sd_pop(&all_ttp),
        sd_ln_tfp: sd_pop(&all_tfp),
    };
    Ok((records, summary))
}

// ---------------------------------------------------------------------------
// Labor markups

#[derive(Debug, Clone, Serialize)]
pub struct MarkupRecord {
    pub firm_id: String,
    pub period: i64,
    pub markup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarkupSummary {
    pub mean: f64,
    pub sd: f64,
    pub p90_p50: f64,
    pub p90_p10: f64,
    pub n_firms: usize,
    pub n_obs: usize,
}

/// Labor markup per firm-period: the firm's labor output elasticity over
/// labor's share of revenue in that period. For CD the elasticity is the
/// posterior-mean gamma; for CES it varies with the period's inputs.
pub fn compute_markups(
    posteriors: &[FirmPosterior],
    model: &ModelSpec,
    data: &PanelDataset,
) -> Result<(Vec<MarkupRecord>, MarkupSummary)> {
    let shares = data
        .wage_share
        .as_ref()
        .ok_or_else(|| Error::data("markups need a wage_share column"))?;
    if posteriors.len() != data.n_firms() {
        return Err(Error::invalid("posterior count does not match panel"));
    }
    if model.family == Family::IntensiveCd {
        return Err(Error::invalid("markups are defined for the cd and ces families"));
    }
    let t_len = data.n_periods();
    let mut records = Vec::with_capacity(posteriors.len() * t_len);
    for (i, fp) in posteriors.iter().enumerate() {
        let (_, k, l) = data.firm_rows(i);
        for t in 0..t_len {
            let share = shares[data.idx(i, t)];
            let elasticity = match model.family {
                Family::DynamicCd => fp.expected[2],
                Family::GeneralizedCes => {
                    let (omega, nu, sigma) = (fp.expected[1], fp.expected[2], fp.expected[3]);
                    let a = (sigma - 1.0) / sigma;
                    let num = (1.0 - omega).ln() + a * l[t];
                    let den = crate::stats::log_add_exp(omega.ln() + a * k[t], num);
                    nu * (num - den).exp()
                }
                Family::IntensiveCd => unreachable!(),
            };
            records.push(MarkupRecord {
                firm_id: fp.firm_id.clone(),
                period: t as i64 + 1,
                markup: elasticity / share,
            });
        }
    }
    let vals: Vec<f64> = records.iter().map(|r| r.markup).collect();
    let p90 = sample_quantile_unsorted(&vals, 0.9);
    let summary = MarkupSummary {
        mean: mean(&vals),
        sd: sd_pop(&vals),
        p90_p50: p90 / sample_quantile_unsorted(&vals, 0.5),
        p90_p10: p90 / sample_quantile_unsorted(&vals, 0.1),
        n_firms: posteriors.len(),
        n_obs: records.len(),
    };
    Ok((records, summary))
}

// ---------------------------------------------------------------------------
// Variance decomposition

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Sector,
    Size,
    SectorAndSize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnovaRow {
    pub param: String,
    pub explained_share: f64,
    pub df_used: usize,
    pub groups_dropped: usize,
}

/// Parameters decomposed per family: the intercept plus each elasticity.
fn anova_params(model: &ModelSpec) -> Vec<(&'static str, usize)> {
    // (name, extended column index): usize::MAX marks the derived intercept.
    match model.family {
        Family::DynamicCd => vec![("alpha_bar", usize::MAX), ("beta", 1), ("gamma", 2)],
        Family::GeneralizedCes => {
            vec![("alpha_bar", usize::MAX), ("omega", 1), ("nu", 2), ("sigma", 3)]
        }
        Family::IntensiveCd => vec![("a", 0), ("b", 1)],
    }
}

/// Fraction of cross-firm variance in posterior parameters explained by a
/// fixed-effects mean model on the grouping dummies. Size enters as three
/// additive decile factors built from per-firm mean y, k, and l.
pub fn anova_decomposition(
    posteriors: &[FirmPosterior],
    model: &ModelSpec,
    data: &PanelDataset,
    grouping: Grouping,
) -> Result<Vec<AnovaRow>> {
    if posteriors.len() != data.n_firms() {
        return Err(Error::invalid("posterior count does not match panel"));
    }
    let n = posteriors.len();
    if n < 3 {
        return Err(Error::invalid("too few firms for a variance decomposition"));
    }
    let mut factors: Vec<Vec<usize>> = Vec::new();
    let mut level_counts: Vec<usize> = Vec::new();
    let mut dropped = 0usize;

    if matches!(grouping, Grouping::Sector | Grouping::SectorAndSize) {
        let sectors = data
            .sector
            .as_ref()
            .ok_or_else(|| Error::data("sector grouping needs a sector column"))?;
        let mut levels: Vec<&String> = sectors.iter().collect();
        levels.sort();
        levels.dedup();
        let index: BTreeMap<&String, usize> =
            levels.iter().enumerate().map(|(j, s)| (*s, j)).collect();
        factors.push(sectors.iter().map(|s| index[s]).collect());
        level_counts.push(levels.len());
    }
    if matches!(grouping, Grouping::Size | Grouping::SectorAndSize) {
        let t_len = data.n_periods();
        for var in 0..3 {
            let means: Vec<f64> = (0..n)
                .map(|i| {
                    let (y, k, l) = data.firm_rows(i);
                    let col = match var {
                        0 => y,
                        1 => k,
                        _ => l,
                    };
                    col.iter().sum::<f64>() / t_len as f64
                })
                .collect();
            factors.push(decile_groups(&means));
            level_counts.push(10);
        }
    }

    // Dummy design: intercept plus each factor's non-reference, non-empty
    // levels.
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for (f, levels) in factors.iter().zip(level_counts.iter()) {
        for level in 1..*levels {
            let col: Vec<f64> =
                f.iter().map(|&g| if g == level { 1.0 } else { 0.0 }).collect();
            if col.iter().any(|v| *v != 0.0) {
                columns.push(col);
            } else {
                dropped += 1;
            }
        }
    }
    let p = columns.len();
    let mut xdata = Vec::with_capacity(n * p);
    for r in 0..n {
        for c in &columns {
            xdata.push(c[r]);
        }
    }
    let x = DMatrix::from_row_slice(n, p, &xdata);
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > 1e-10 * max_sv)
        .count();

    let mut rows = Vec::new();
    for (name, idx) in anova_params(model) {
        let vals: Vec<f64> = posteriors
            .iter()
            .map(|fp| {
                if idx == usize::MAX {
                    fp.intercept(model)
                } else {
                    fp.expected[idx]
                }
            })
            .collect();
        let m = mean(&vals);
        let tss: f64 = vals.iter().map(|v| (v - m) * (v - m)).sum();
        let share = if tss > 0.0 {
            let y = DVector::from_column_slice(&vals);
            let beta = svd.solve(&y, 1e-10 * max_sv).expect("svd solve");
            let resid = &y - &x * beta;
            let rss: f64 = resid.iter().map(|r| r * r).sum();
            (1.0 - rss / tss).clamp(0.0, 1.0)
        } else {
            0.0
        };
        rows.push(AnovaRow {
            param: name.to_string(),
            explained_share: share,
            df_used: rank.saturating_sub(1),
            groups_dropped: dropped,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Dominance diagnostic

#[derive(Debug, Clone, Serialize)]
pub struct DominanceDiagnostic {
    /// Share of firm pairs where one firm has both the higher intercept and
    /// the higher scale (ties count as non-violating).
    pub violating_share: f64,
    pub corr_intercept_scale: f64,
    pub pairs: u64,
}

/// Pairs violating non-dominance: (intercept_i - intercept_j) *
/// (scale_i - scale_j) > 0. Uses rank statistics (O(I log I)) above 2000
/// firms and exact pair enumeration below.
pub fn dominance_diagnostic(
    posteriors: &[FirmPosterior],
    model: &ModelSpec,
) -> Result<DominanceDiagnostic> {
    let n = posteriors.len();
    if n < 2 {
        return Err(Error::invalid("dominance diagnostic needs at least two firms"));
    }
    let a: Vec<f64> = posteriors.iter().map(|fp| fp.intercept(model)).collect();
    let b: Vec<f64> = posteriors.iter().map(|fp| fp.scale(model)).collect();
    let concordant = if n <= 2000 {
        concordant_pairs_exact(&a, &b)
    } else {
        concordant_pairs_fast(&a, &b)
    };
    let pairs = (n as u64) * (n as u64 - 1) / 2;
    Ok(DominanceDiagnostic {
        violating_share: concordant as f64 / pairs as f64,
        corr_intercept_scale: correlation(&a, &b),
        pairs,
    })
}

/// Exact O(n^2) count of strictly concordant pairs.
pub fn concordant_pairs_exact(a: &[f64], b: &[f64]) -> u64 {
    let n = a.len();
    let mut count = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            if (a[i] - a[j]) * (b[i] - b[j]) > 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// O(n log n) concordant-pair count via sorting and merge-based inversion
/// counting with tie corrections.
pub fn concordant_pairs_fast(a: &[f64], b: &[f64]) -> u64 {
    let n = a.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[i].partial_cmp(&a[j])
            .expect("NaN")
            .then(b[i].partial_cmp(&b[j]).expect("NaN"))
    });
    let sorted_b: Vec<f64> = order.iter().map(|&i| b[i]).collect();

    // Tie counts.
    let tie_pairs = |mut keys: Vec<(u64, u64)>| -> u64 {
        keys.sort_unstable();
        let mut total = 0u64;
        let mut run = 1u64;
        for w in keys.windows(2) {
            if w[0] == w[1] {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    let key = |v: f64| v.to_bits();
    let t_a = tie_pairs(a.iter().map(|&v| (key(v), 0)).collect());
    let t_b = tie_pairs(b.iter().map(|&v| (key(v), 0)).collect());
    let t_ab = tie_pairs(a.iter().zip(b.iter()).map(|(&x, &y)| (key(x), key(y))).collect());

    // Strict inversions in sorted_b = discordant pairs: within a-tie groups
    // b is ascending, so those contribute none.
    let mut buf = sorted_b.clone();
    let mut tmp = vec![0.0; n];
    let discordant = count_inversions(&mut buf, &mut tmp);

    let total = (n as u64) * (n as u64 - 1) / 2;
    // Pairs strictly different in both coordinates split into concordant
    // and discordant. Signed arithmetic: the tie terms can transiently
    // exceed the running total.
    (total as i128 - t_a as i128 - t_b as i128 + t_ab as i128 - discordant as i128) as u64
}

fn count_inversions(v: &mut [f64], tmp: &mut [f64]) -> u64 {
    let n = v.len();
    if n <= 1 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = v.split_at_mut(mid);
    let mut inv = count_inversions(left, tmp) + count_inversions(right, tmp);
    // Merge, counting strict inversions (left element > right element).
    let (mut i, mut j, mut k) = (0usize, 0usize, 0usize);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            tmp[k] = left[i];
            i += 1;
        } else {
            inv += (left.len() - i) as u64;
            tmp[k] = right[j];
            j += 1;
        }
        k += 1;
    }
    while i < left.len() {
        tmp[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        tmp[k] = right[j];
        j += 1;
        k += 1;
    }
    v.copy_from_slice(&tmp[..n]);
    inv
}
