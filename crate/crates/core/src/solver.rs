//! Fixed-point estimation of the mixing distribution over types.
//!
//! The estimand is the probability vector pi* over the Q grid types that is
//! coherent with its own posterior: starting from a prior pi, the posterior
//! probability of firm i being type q is
//!
//!   h_iq = f_iq * pi_q / sum_v f_iv * pi_v,
//!
//! and the update maps pi to the column means of H. Iterating this map from
//! a full-support start is exactly the E-step of EM for a finite mixture
//! with fixed components, so the log-likelihood sum_i ln(sum_q pi_q f_iq)
//! never decreases, and the iteration converges to the unique maximizer,
//! which carries at most I strictly positive weights.
//!
//! Implementation notes:
//! - all exponentiation is max-shifted, rows are processed in fixed order,
//!   and parallel reductions use fixed chunk boundaries, so results are
//!   bitwise independent of thread count;
//! - zero weights are absorbing; the iteration tracks the active (nonzero)
//!   support and skips dead types, which changes nothing numerically;
//! - stripes of the density matrix are sized from a memory budget so the
//!   full I x Q matrix is never materialized.

use crate::error::{Error, Result};
use crate::likelihood::LogDensitySource;
use rayon::prelude::*;
use serde::Serialize;

/// Probability vector over the Q types plus the log-likelihood it attains.
#[derive(Debug, Clone)]
pub struct MixingDistribution {
    pub weights: Vec<f64>,
    /// sum_i ln(sum_q pi_q f_iq); NaN until evaluated against data.
    pub loglik: f64,
}

impl MixingDistribution {
    pub fn uniform(q: usize) -> MixingDistribution {
        assert!(q > 0);
        MixingDistribution { weights: vec![1.0 / q as f64; q], loglik: f64::NAN }
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<MixingDistribution> {
        let pi = MixingDistribution { weights, loglik: f64::NAN };
        pi.check_simplex()?;
        Ok(pi)
    }

    pub fn q(&self) -> usize {
        self.weights.len()
    }

    /// Indices with strictly positive weight, ascending.
    pub fn support_indices(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    pub fn check_simplex(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::invalid("empty weight vector"));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }

    fn renormalize(&mut self) {
        let sum: f64 = self.weights.iter().sum();
        if sum > 0.0 && sum != 1.0 {
            for w in self.weights.iter_mut() {
                *w /= sum;
            }
        }
    }
}

/// Solver configuration. Convergence requires BOTH the max-norm weight
/// change and the per-step log-likelihood gain to fall below their
/// tolerances (EM can crawl near the optimum, and either signal alone can
/// stop prematurely).
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub loglik_tol: f64,
    pub max_iter: usize,
    /// Budget for the striped slab of log densities, in bytes.
    pub memory_budget_bytes: usize,
    /// When positive, weights below `prune_factor / Q` are zeroed after
    /// each iteration (then renormalized). Types that far down contribute
    /// below machine noise to every posterior, and zero weights are
    /// absorbing anyway, so this only shortens the decay of dead types.
    /// 0 disables pruning.
    pub prune_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            loglik_tol: 1e-10,
            max_iter: 20_000,
            memory_budget_bytes: 256 << 20,
            prune_factor: 0.0,
        }
    }
}

impl SolverOptions {
    /// Options tuned for batch estimation runs: same tolerances, with dead
    /// types pruned once they are numerically irrelevant.
    pub fn pruned() -> SolverOptions {
        SolverOptions { prune_factor: 1e-16, ..Default::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub loglik_trace: Vec<f64>,
    pub final_delta: f64,
    /// max |columnMean(H(F, pi*)) - pi*|, measured after the final iterate.
    pub coherence_residual: f64,
    pub support_size: usize,
    pub converged: bool,
}

/// Posterior over types for one firm given its log-density row and a prior.
/// Entries with zero prior weight are exactly zero.
pub fn posterior_row(log_f_row: &[f64], pi: &MixingDistribution) -> Result<Vec<f64>> {
    if log_f_row.len() != pi.q() {
        return Err(Error::invalid(format!(
            "row has {} entries, prior has {}",
            log_f_row.len(),
            pi.q()
        )));
    }
    let mut out = vec![0.0; pi.q()];
    let mut m = f64::NEG_INFINITY;
    for (q, &w) in pi.weights.iter().enumerate() {
        if w > 0.0 {
            let v = log_f_row[q] + w.ln();
            if v > m {
                m = v;
            }
        }
    }
    if m == f64::NEG_INFINITY {
        return Err(Error::numerical(
            "firm has zero likelihood under every supported type; the grid \
             does not cover this firm",
        ));
    }
    let mut z = 0.0;
    for (q, &w) in pi.weights.iter().enumerate() {
        if w > 0.0 {
            let e = (log_f_row[q] + w.ln() - m).exp();
            out[q] = e;
            z += e;
        }
    }
    for v in out.iter_mut() {
        *v /= z;
    }
    Ok(out)
}

/// One E-step: returns (column means of H, log-likelihood of `pi`).
///
/// This is the map whose fixed point is the estimate; it is exposed so
/// callers can verify coherence directly.
pub fn em_step<S: LogDensitySource + ?Sized>(
    src: &S,
    pi: &MixingDistribution,
    budget_bytes: usize,
) -> Result<(Vec<f64>, f64)> {
    let i_firms = src.n_firms();
    let q = src.n_types();
    if pi.q() != q {
        return Err(Error::invalid("prior length does not match type count"));
    }
    let active: Vec<usize> = pi.support_indices();
    if active.is_empty() {
        return Err(Error::invalid("prior has empty support"));
    }
    let w = active.len();
    let ln_pi: Vec<f64> = active.iter().map(|&qi| pi.weights[qi].ln()).collect();

    let stripe_rows = (budget_bytes / (w * 8)).clamp(1, i_firms.max(1));
    let mut slab = vec![0.0f64; stripe_rows * w];
    let mut col_acc = vec![0.0f64; w];
    let mut loglik = 0.0f64;

    let mut start = 0usize;
    while start < i_firms {
        let end = (start + stripe_rows).min(i_firms);
        let rows = end - start;
        let slab = &mut slab[..rows * w];
        src.fill(start..end, &active, slab);

        // Per-row max-shift and exponentiation; rows are disjoint so the
        // parallel pass cannot change results.
        let mut row_norm = vec![(0.0f64, 0.0f64); rows]; // (max, sum of exps)
        slab.par_chunks_mut(w)
            .zip(row_norm.par_iter_mut())
            .for_each(|(row, norm)| {
                let mut m = f64::NEG_INFINITY;
                for (v, lp) in row.iter_mut().zip(ln_pi.iter()) {
                    *v += *lp;
                    if *v > m {
                        m = *v;
                    }
                }
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                *norm = (m, z);
            });

        for (r, &(m, z)) in row_norm.iter().enumerate() {
            if !(z > 0.0) || !m.is_finite() {
                return Err(Error::numerical(format!(
                    "firm {} has zero likelihood under every supported type",
                    start + r
                )));
            }
            loglik += m + z.ln();
        }

        // Column accumulation with fixed chunk boundaries: deterministic
        // regardless of how chunks are scheduled across threads.
        let inv_z: Vec<f64> = row_norm.iter().map(|&(_, z)| 1.0 / z).collect();
        const COL_CHUNK: usize = 2048;
        col_acc
            .par_chunks_mut(COL_CHUNK)
            .enumerate()
            .for_each(|(chunk_idx, acc)| {
                let c0 = chunk_idx * COL_CHUNK;
                for (r, &iz) in inv_z.iter().enumerate() {
                    let row = &slab[r * w + c0..r * w + c0 + acc.len()];
                    for (a, &e) in acc.iter_mut().zip(row.iter()) {
                        *a += e * iz;
                    }
                }
            });

        start = end;
    }
    if !loglik.is_finite() {
        return Err(Error::numerical("non-finite log-likelihood"));
    }

    let mut next = vec![0.0f64; q];
    let inv_i = 1.0 / i_firms as f64;
    for (j, &qi) in active.iter().enumerate() {
        next[qi] = col_acc[j] * inv_i;
    }
    Ok((next, loglik))
}

/// Iterate the posterior-mean map from `pi0` until coherence.
pub fn fixed_point_iterate<S: LogDensitySource + ?Sized>(
    src: &S,
    pi0: MixingDistribution,
    opts: &SolverOptions,
) -> Result<(MixingDistribution, SolverReport)> {
    fixed_point_iterate_with(src, pi0, opts, |_, _, _| {})
}

/// Like [`fixed_point_iterate`], invoking `progress(iteration, loglik,
/// delta)` after every step.
pub fn fixed_point_iterate_with<S: LogDensitySource + ?Sized>(
    src: &S,
    pi0: MixingDistribution,
    opts: &SolverOptions,
    mut progress: impl FnMut(usize, f64, f64),
) -> Result<(MixingDistribution, SolverReport)> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be >= 1"));
    }
    pi0.check_simplex()?;
    if pi0.q() != src.n_types() {
        return Err(Error::invalid("pi0 length does not match type count"));
    }

    let mut pi = pi0;
    let mut trace: Vec<f64> = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut final_delta = f64::INFINITY;
    let mut iterations = 0usize;

    for iter in 1..=opts.max_iter {
        let (next, ll) = em_step(src, &pi, opts.memory_budget_bytes)?;
        let mut delta = 0.0f64;
        for (n, o) in next.iter().zip(pi.weights.iter()) {
            let d = (n - o).abs();
            if d > delta {
                delta = d;
            }
        }
        trace.push(ll);
        let improvement = ll - prev_ll;
        prev_ll = ll;

        pi.weights = next;
        if opts.prune_factor > 0.0 {
            let cut = opts.prune_factor / pi.q() as f64;
            for w in pi.weights.iter_mut() {
                if *w < cut {
                    *w = 0.0;
                }
            }
        }
        pi.renormalize();
        iterations = iter;
        final_delta = delta;
        progress(iter, ll, delta);

        if delta == 0.0 || (iter >= 2 && delta <= opts.tol && improvement <= opts.loglik_tol) {
            converged = true;
            break;
        }
    }

    // One verification pass at the final iterate: its exact log-likelihood
    // and the coherence residual columnMean(H) - pi.
    let (verify, final_ll) = em_step(src, &pi, opts.memory_budget_bytes)?;
    let coherence_residual = verify
        .iter()
        .zip(pi.weights.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    trace.push(final_ll);
    pi.loglik = final_ll;

    let report = SolverReport {
        iterations,
        loglik_trace: trace,
        final_delta,
        coherence_residual,
        support_size: pi.support_size(),
        converged,
    };
    Ok((pi, report))
}

/// Diagnostic multi-start: solve from the uniform start (the reported
/// result) and additionally from `restarts` random Dirichlet(1) starts,
/// returning those runs' final log-likelihoods for comparison. Agreement
/// across starts is evidence the unique maximizer was reached.
pub fn solve_with_restarts<S: LogDensitySource + ?Sized>(
    src: &S,
    opts: &SolverOptions,
    restarts: usize,
    seed: u64,
) -> Result<(MixingDistribution, SolverReport, Vec<f64>)> {
    let q = src.n_types();
    let (pi, report) = fixed_point_iterate(src, MixingDistribution::uniform(q), opts)?;
    let mut restart_logliks = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let mut rng = crate::rng::stream(seed, &[0x5e7a, r as u64]);
        // Dirichlet(1,...,1): normalized unit exponentials.
        let mut w: Vec<f64> = (0..q)
            .map(|_| {
                let u: f64 = rand::Rng::random(&mut rng);
                -(1.0 - u).ln()
            })
            .collect();
        let sum: f64 = w.iter().sum();
        for v in w.iter_mut() {
            *v /= sum;
        }
        let pi0 = MixingDistribution { weights: w, loglik: f64::NAN };
        let (alt, _) = fixed_point_iterate(src, pi0, opts)?;
        restart_logliks.push(alt.loglik);
    }
    Ok((pi, report, restart_logliks))
}

/// Zero out weights below `threshold` and renormalize, separating actual
/// zeros from iteration artifacts.
pub fn extract_support(pi: &MixingDistribution, threshold: f64) -> Result<MixingDistribution> {
    let q = pi.q();
    if !(threshold > 0.0) || threshold > 1.0 / q as f64 {
        return Err(Error::invalid(format!(
            "support threshold must lie in (0, 1/Q], got {threshold}"
        )));
    }
    let mut weights: Vec<f64> = pi
        .weights
        .iter()
        .map(|&w| if w < threshold { 0.0 } else { w })
        .collect();
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::numerical("all weights fall below the support threshold"));
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    Ok(MixingDistribution { weights, loglik: pi.loglik })
}

/// Default pruning threshold after convergence: machine-noise scale
/// relative to the uniform weight.
pub fn default_support_threshold(q: usize) -> f64 {
    1e-10 / q as f64
}
