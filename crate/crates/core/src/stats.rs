//! Small numeric helpers shared across the crate: stable log-sum-exp,
//! quantile conventions, and moment utilities.
//!
//! Two quantile conventions are used deliberately:
//! - [`sample_quantile`] for firm-level samples (midpoint at even splits,
//!   so the median of {0.1, 0.9} is 0.5 and P90 of a two-point sample is
//!   the upper point);
//! - [`weighted_quantile_lower`] for discrete mixing distributions (the
//!   smallest grid value whose cumulative weight reaches p).

/// ln(2*pi), used by every Gaussian log-density in the crate.
pub const LN_2PI: f64 = 1.8378770664093453;

/// Stable log(exp(a) + exp(b)).
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Stable log of the sum of exponentials of a slice.
///
/// Returns -inf for an empty slice or a slice of all -inf. Summation order
/// is the slice order, so results are deterministic.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // All -inf (or empty); +inf/NaN inputs are a caller bug surfaced as-is.
        return m;
    }
    let mut sum = 0.0;
    for &v in values {
        sum += (v - m).exp();
    }
    m + sum.ln()
}

/// Sample quantile with midpoint interpolation at exact split points
/// (Hyndman-Fan type 2). `sorted` must be ascending and non-empty.
pub fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    assert!((0.0..=1.0).contains(&p), "p out of [0,1]");
    let n = sorted.len();
    if p <= 0.0 {
        return sorted[0];
    }
    if p >= 1.0 {
        return sorted[n - 1];
    }
    let h = n as f64 * p;
    let j = h.round();
    // np integer (to fp tolerance): average the adjacent order statistics.
    if (h - j).abs() < 1e-9 {
        let j = j as usize;
        if (1..n).contains(&j) {
            return 0.5 * (sorted[j - 1] + sorted[j]);
        }
    }
    sorted[(h.ceil() as usize).clamp(1, n) - 1]
}

/// Quantile of a sample given in arbitrary order.
pub fn sample_quantile_unsorted(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    sample_quantile(&v, p)
}

/// Lower weighted quantile of a discrete distribution: the smallest value
/// whose cumulative weight reaches `p`. Pairs need not be sorted; weights
/// must be nonnegative with positive total.
pub fn weighted_quantile_lower(pairs: &[(f64, f64)], p: f64) -> f64 {
    assert!(!pairs.is_empty(), "quantile of empty distribution");
    let mut v: Vec<(f64, f64)> = pairs.to_vec();
    v.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("NaN in quantile input"));
    let total: f64 = v.iter().map(|(_, w)| *w).sum();
    assert!(total > 0.0, "zero total weight");
    let target = p * total;
    let mut cum = 0.0;
    for (x, w) in &v {
        cum += w;
        if cum >= target - 1e-15 * total {
            return *x;
        }
    }
    v.last().unwrap().0
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divide by n).
pub fn sd_pop(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Sample standard deviation (divide by n-1); 0 for n < 2.
pub fn sd_sample(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Pearson correlation; returns 0 when either marginal is degenerate.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Assign each value to a decile 0..=9 by rank, with near-equal bucket
/// counts. Ties are broken by input position, which keeps assignment
/// deterministic.
pub fn decile_groups(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        values[i]
            .partial_cmp(&values[j])
            .expect("NaN in decile input")
            .then(i.cmp(&j))
    });
    let mut group = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        group[i] = (rank * 10 / n).min(9);
    }
    group
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_sum_exp_matches_direct_small() {
        let v: [f64; 3] = [0.1, -0.3, 0.7];
        let direct: f64 = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&v), direct, max_relative = 1e-15);
    }

    #[test]
    fn log_sum_exp_survives_large_magnitudes() {
        let v = [-1000.0, -1001.0];
        let expected = -1000.0 + (1.0f64 + (-1.0f64).exp()).ln();
        assert_relative_eq!(log_sum_exp(&v), expected, max_relative = 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_add_exp_agrees_with_slice_version() {
        for (a, b) in [(0.5, 2.0), (12.0, 5.0), (-800.0, -801.0)] {
            assert_relative_eq!(log_add_exp(a, b), log_sum_exp(&[a, b]), max_relative = 1e-15);
        }
    }

    #[test]
    fn two_point_sample_quantiles() {
        // Median midpoint, P90/P10 at the points themselves.
        let v = [0.1, 0.9];
        assert_relative_eq!(sample_quantile(&v, 0.5), 0.5);
        assert_relative_eq!(sample_quantile(&v, 0.9), 0.9);
        assert_relative_eq!(sample_quantile(&v, 0.1), 0.1);
    }

    #[test]
    fn quantiles_are_monotone_in_p() {
        let v: Vec<f64> = (0..37).map(|i| ((i * 7919) % 100) as f64).collect();
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut last = f64::NEG_INFINITY;
        for i in 0..=20 {
            let q = sample_quantile(&sorted, i as f64 / 20.0);
            assert!(q >= last);
            last = q;
        }
    }

    #[test]
    fn weighted_quantile_lower_convention() {
        // 50/50 two-point: lower median is the smaller value.
        let pairs = [(0.1, 0.5), (0.9, 0.5)];
        assert_eq!(weighted_quantile_lower(&pairs, 0.5), 0.1);
        assert_eq!(weighted_quantile_lower(&pairs, 0.9), 0.9);
        assert_eq!(weighted_quantile_lower(&pairs, 0.1), 0.1);
    }

    #[test]
    fn decile_groups_balanced() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let g = decile_groups(&v);
        for d in 0..10 {
            assert_eq!(g.iter().filter(|&&x| x == d).count(), 10);
        }
        assert_eq!(g[0], 0);
        assert_eq!(g[99], 9);
    }

    #[test]
    fn correlation_signs() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        assert_relative_eq!(correlation(&a, &b), 1.0, max_relative = 1e-12);
        let c = [8.0, 6.0, 4.0, 2.0];
        assert_relative_eq!(correlation(&a, &c), -1.0, max_relative = 1e-12);
        assert_eq!(correlation(&a, &[5.0; 4]), 0.0);
    }
}
