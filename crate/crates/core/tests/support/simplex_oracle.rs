//! Independent maximizer of the mixture log-likelihood over the simplex,
//! used as an oracle against the fixed-point solver. Projected gradient
//! ascent with backtracking line search — deliberately a different
//! algorithm family from the EM iteration it checks.

/// Maximize L(pi) = sum_i ln(sum_q exp(log_f[i][q]) * pi_q) over the
/// probability simplex. Returns (pi, loglik).
pub fn maximize_simplex(log_f: &[Vec<f64>], iters: usize) -> (Vec<f64>, f64) {
    let i_n = log_f.len();
    let q = log_f[0].len();
    // Row-wise max shift for stability; the shift adds a constant to L.
    let shifts: Vec<f64> = log_f
        .iter()
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let p: Vec<Vec<f64>> = log_f
        .iter()
        .zip(shifts.iter())
        .map(|(row, m)| row.iter().map(|v| (v - m).exp()).collect())
        .collect();

    let loglik = |pi: &[f64]| -> f64 {
        let mut ll = 0.0;
        for (row, m) in p.iter().zip(shifts.iter()) {
            let z: f64 = row.iter().zip(pi.iter()).map(|(a, b)| a * b).sum();
            ll += m + z.ln();
        }
        ll
    };

    let mut pi = vec![1.0 / q as f64; q];
    let mut ll = loglik(&pi);
    let mut step = 1.0;
    for _ in 0..iters {
        // Gradient of L at pi.
        let mut grad = vec![0.0; q];
        for row in &p {
            let z: f64 = row.iter().zip(pi.iter()).map(|(a, b)| a * b).sum();
            for (g, a) in grad.iter_mut().zip(row.iter()) {
                *g += a / z;
            }
        }
        // Backtracking projected ascent.
        let mut improved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = pi.iter().zip(grad.iter()).map(|(x, g)| x + step * g).collect();
            let cand = project_simplex(&cand);
            let cand_ll = loglik(&cand);
            if cand_ll > ll + 1e-15 {
                pi = cand;
                ll = cand_ll;
                step *= 1.8;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved && step < 1e-18 {
            break;
        }
        let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm * step < 1e-16 * (1.0 + ll.abs()) {
            break;
        }
        let _ = i_n;
    }
    (pi, ll)
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut rho = 0usize;
    let mut theta = 0.0;
    for (j, &val) in u.iter().enumerate() {
        css += val;
        let t = (css - 1.0) / (j + 1) as f64;
        if val - t > 0.0 {
            rho = j + 1;
            theta = t;
        }
    }
    let _ = rho;
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}
