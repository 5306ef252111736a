//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured values. Heavy criteria share a mutex so timing and
//! memory measurements do not interleave.
//!
//! Run with:
//!   cargo test -p hetprod-cli --release --test acceptance -- --nocapture

#![allow(clippy::needless_range_loop)]

#[path = "../../core/tests/support/simplex_oracle.rs"]
mod simplex_oracle;

use hetprod_core::analytics::*;
use hetprod_core::grid::{default_grid, DimSpec, GridSpec, TypeTable};
use hetprod_core::likelihood::{BlockShape, LikelihoodEvaluator};
use hetprod_core::model::{Family, ModelSpec};
use hetprod_core::panel::PanelDataset;
use hetprod_core::posterior::*;
use hetprod_core::rng::stream;
use hetprod_core::sim::*;
use hetprod_core::solver::*;
use hetprod_core::stats::{mean, sd_pop};
use rand::Rng;
use std::alloc::{GlobalAlloc, Layout, System};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

// ---------------------------------------------------------------------------
// Heap accounting for the memory-budget criterion.

struct CountingAlloc;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let cur = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(cur, Ordering::Relaxed);
        }
        p
    }
    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

fn reset_peak() -> usize {
    let cur = CURRENT.load(Ordering::Relaxed);
    PEAK.store(cur, Ordering::Relaxed);
    cur
}

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

// ---------------------------------------------------------------------------
// Criterion 1: oracle equivalence on 50 random small instances, and the
// support bound |support| <= I.

#[test]
fn a1_oracle_equivalence_npmle() {
    let _g = gate();
    let mut rng = stream(101, &[1]);
    let opts = SolverOptions { tol: 1e-12, loglik_tol: 1e-14, ..Default::default() };
    let mut max_gap = 0.0f64;
    for case in 0..50u64 {
        let i_n = 2 + (rng.random::<u64>() % 5) as usize; // 2..=6
        let t_len = 3 + (rng.random::<u64>() % 3) as usize; // 3..=5
        // Q <= 12 via point counts on a CD grid.
        let shapes: [[usize; 6]; 4] = [
            [3, 2, 2, 1, 1, 1],
            [2, 3, 2, 1, 1, 1],
            [2, 2, 3, 1, 1, 1],
            [2, 2, 2, 1, 1, 1],
        ];
        let pts = shapes[(rng.random::<u64>() % 4) as usize];

        // Small synthetic panel.
        let mut y = Vec::new();
        let mut k = Vec::new();
        let mut l = Vec::new();
        for _ in 0..i_n {
            let a = 1.0 + rng.random::<f64>();
            let b = rng.random::<f64>();
            let g = rng.random::<f64>();
            for _ in 0..t_len {
                let ki = 2.0 * rng.random::<f64>();
                let li = 2.0 * rng.random::<f64>();
                let e: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.3;
                k.push(ki);
                l.push(li);
                y.push(a + b * ki + g * li + e);
            }
        }
        let panel = PanelDataset {
            firm_ids: (0..i_n).map(|j| format!("f{j}")).collect(),
            periods: (1..=t_len as i64).collect(),
            y,
            k,
            l,
            sector: None,
            wage_share: None,
        };
        let model = ModelSpec::new(Family::DynamicCd, t_len);
        let grid = GridSpec {
            dims: vec![
                DimSpec::new("alpha0", 0.5, if pts[0] > 1 { 2.5 } else { 0.5 }, pts[0]),
                DimSpec::new("beta", 0.0, if pts[1] > 1 { 1.0 } else { 0.0 }, pts[1]),
                DimSpec::new("gamma", 0.0, if pts[2] > 1 { 1.0 } else { 0.0 }, pts[2]),
                DimSpec::new("alpha1", 0.0, 0.0, 1),
                DimSpec::new("alpha2", 0.0, 0.0, 1),
                DimSpec::new("s", 0.3, 0.3, 1),
            ],
        };
        let table = TypeTable::from_grid(&model, &grid).unwrap();
        let q = table.q();
        assert!(q <= 12);
        let ev = LikelihoodEvaluator::new(&model, &panel, &table).unwrap();
        let block = ev.compute_block(0..i_n, 0..q);
        let rows: Vec<Vec<f64>> =
            (0..i_n).map(|r| block.values[r * q..(r + 1) * q].to_vec()).collect();

        let (pi, report) =
            fixed_point_iterate(&ev, MixingDistribution::uniform(q), &opts).unwrap();
        assert!(report.converged, "case {case} did not converge");
        let (_, oracle_ll) = simplex_oracle::maximize_simplex(&rows, 200_000);
        let gap = (pi.loglik - oracle_ll).abs();
        max_gap = max_gap.max(gap);
        assert!(
            gap <= 1e-6,
            "case {case}: loglik gap {gap} (em {} vs oracle {oracle_ll})",
            pi.loglik
        );
        let pruned = extract_support(&pi, default_support_threshold(q)).unwrap();
        assert!(
            pruned.support_size() <= i_n,
            "case {case}: support {} > firms {i_n}",
            pruned.support_size()
        );
    }
    println!("ACCEPTANCE 1 (oracle equivalence, support bound): PASS (max loglik gap {max_gap:.2e} <= 1e-6, support <= I in 50/50)");
}

// ---------------------------------------------------------------------------
// Criterion 2: per-iteration log-likelihood never decreases by more than
// 1e-10, across a spread of random instances.

#[test]
fn a2_em_monotonicity() {
    let _g = gate();
    let mut rng = stream(202, &[2]);
    let mut checked = 0usize;
    for case in 0..60u64 {
        let i_n = 2 + (rng.random::<u64>() % 12) as usize;
        let q = 2 + (rng.random::<u64>() % 20) as usize;
        let spread = 1.0 + 30.0 * rng.random::<f64>();
        let vals: Vec<f64> = (0..i_n * q).map(|_| -spread * rng.random::<f64>()).collect();
        let src = hetprod_core::likelihood::DenseLogDensity::new(i_n, q, vals);
        let opts = SolverOptions {
            max_iter: 300,
            // Exercise the pruned variant on half the cases.
            prune_factor: if case % 2 == 0 { 0.0 } else { 1e-16 },
            ..Default::default()
        };
        let (_, report) =
            fixed_point_iterate(&src, MixingDistribution::uniform(q), &opts).unwrap();
        for w in report.loglik_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-10,
                "case {case}: loglik decreased {} -> {}",
                w[0],
                w[1]
            );
            checked += 1;
        }
    }
    println!("ACCEPTANCE 2 (EM monotonicity): PASS ({checked} consecutive iterate pairs, tolerance 1e-10)");
}

// ---------------------------------------------------------------------------
// Criterion 3: noiseless recovery. Truth on grid nodes, s at the grid
// minimum, I=100: posterior means within one grid half-spacing for >= 99%
// of firms.

#[test]
fn a3_noiseless_recovery() {
    let _g = gate();
    let t_len = 7;
    let i_n = 100;
    let model = ModelSpec::new(Family::DynamicCd, t_len);
    let grid = GridSpec {
        dims: vec![
            DimSpec::new("alpha0", 1.0, 3.0, 5),
            DimSpec::new("beta", 0.0, 1.0, 5),
            DimSpec::new("gamma", 0.0, 1.5, 5),
            DimSpec::new("alpha1", 0.0, 0.0, 1),
            DimSpec::new("alpha2", 0.0, 0.0, 1),
            DimSpec::new("s", 0.05, 0.45, 3),
        ],
    };
    let table = TypeTable::from_grid(&model, &grid).unwrap();
    // Truth: a handful of node tuples, s at the grid minimum.
    let node_tuples = [
        (1.5, 0.25, 0.375),
        (2.0, 0.5, 0.75),
        (2.5, 0.75, 1.125),
        (1.5, 0.75, 0.375),
        (2.5, 0.25, 1.125),
    ];
    let s_true = 0.05;
    let mut y = Vec::new();
    let mut k = Vec::new();
    let mut l = Vec::new();
    let mut truth = Vec::new();
    let mut rng = stream(303, &[3]);
    for i in 0..i_n {
        let (a, b, g) = node_tuples[i % node_tuples.len()];
        truth.push((a, b, g));
        for _ in 0..t_len {
            let ki = 1.0 + 2.0 * rng.random::<f64>();
            let li = 0.5 + 2.0 * rng.random::<f64>();
            let e: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * s_true;
            k.push(ki);
            l.push(li);
            y.push(a + b * ki + g * li + e);
        }
    }
    let panel = PanelDataset {
        firm_ids: (0..i_n).map(|j| format!("f{j}")).collect(),
        periods: (1..=t_len as i64).collect(),
        y,
        k,
        l,
        sector: None,
        wage_share: None,
    };
    let ev = LikelihoodEvaluator::new(&model, &panel, &table).unwrap();
    let opts = SolverOptions {
        tol: 1e-9,
        loglik_tol: 1e-9,
        max_iter: 5000,
        prune_factor: 1e-16,
        ..Default::default()
    };
    let (pi, report) = fixed_point_iterate(&ev, MixingDistribution::uniform(table.q()), &opts).unwrap();
    assert!(report.converged);
    let pruned = extract_support(&pi, default_support_threshold(table.q())).unwrap();
    let posteriors = firm_posteriors(&ev, &pruned, &table, &panel.firm_ids).unwrap();

    // Half-spacings per recovered dimension.
    let half = [
        0.5 * (3.0 - 1.0) / 4.0,
        0.5 * 1.0 / 4.0,
        0.5 * 1.5 / 4.0,
    ];
    let mut hits = 0usize;
    for (fp, &(a, b, g)) in posteriors.iter().zip(truth.iter()) {
        let ok = (fp.expected[0] - a).abs() <= half[0]
            && (fp.expected[1] - b).abs() <= half[1]
            && (fp.expected[2] - g).abs() <= half[2];
        if ok {
            hits += 1;
        }
    }
    let share = hits as f64 / i_n as f64;
    assert!(share >= 0.99, "only {share:.2} of firms recovered within half-spacing");
    println!("ACCEPTANCE 3 (noiseless recovery): PASS ({hits}/{i_n} firms within one grid half-spacing)");
}

// ---------------------------------------------------------------------------
// Criterion 4: desk-scale bias/MSE with the calibrated DGP at I=500, T=7,
// B=20, Q ~ 50,000.

#[test]
fn a4_simulation_bias_mse() {
    let _g = gate();
    let t0 = Instant::now();
    let spec = DgpSpec::calibrated_default(500, 7, 20, 2024);
    let model = ModelSpec::new(Family::DynamicCd, 7);
    let pilot = generate_replication(&spec, 0).unwrap();
    let grid = default_grid(&model, &pilot.panel, &[15, 15, 15, 1, 1, 15]).unwrap();
    assert!((45_000..=56_000).contains(&grid.q()), "Q = {}", grid.q());
    let opts = SolverOptions {
        tol: 1e-7,
        loglik_tol: 1e-8,
        max_iter: 8000,
        prune_factor: 1e-16,
        ..Default::default()
    };
    let result = run_bias_mse(&spec, &grid, &opts).unwrap();
    assert_eq!(result.failed, 0, "replications failed to converge");
    assert_eq!(result.replications.len(), 20);

    // Parameter order: alpha, beta, gamma, s.
    let ba = result.bias_mean[0];
    let bb = result.bias_mean[1];
    let bg = result.bias_mean[2];
    assert!(ba.abs() <= 0.10, "bias(mean alpha) = {ba}");
    assert!(bb.abs() <= 0.02, "bias(mean beta) = {bb}");
    assert!(bg.abs() <= 0.02, "bias(mean gamma) = {bg}");
    // Dispersion underestimated: bias_sd (truth - estimate) positive.
    for p in 0..3 {
        assert!(
            result.bias_sd[p] > 0.0,
            "bias(SD {}) = {} not positive",
            result.params[p],
            result.bias_sd[p]
        );
    }
    println!(
        "ACCEPTANCE 4 (simulation bias/MSE, B=20, I=500, Q={}): PASS \
         (bias mean a/b/g = {ba:+.4}/{bb:+.4}/{bg:+.4} within 0.1/0.02/0.02; \
         sd bias = {:+.4}/{:+.4}/{:+.4} all positive; mse mean = {:.1e}/{:.1e}/{:.1e}; {:.0?})",
        grid.q(),
        result.bias_sd[0],
        result.bias_sd[1],
        result.bias_sd[2],
        result.mse_mean[0],
        result.mse_mean[1],
        result.mse_mean[2],
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: negative correlation recovered within 0.15 and TTP
// dispersion compressed by at least 15% relative to factor-neutral
// productivity.

#[test]
fn a5_negative_correlation_and_ttp_compression() {
    let _g = gate();
    let t0 = Instant::now();
    // corr(alpha, beta+gamma) = -0.8 by construction:
    // sd_b = sd_g = 0.2, corr(b,g) = 0, corr(a,b) = corr(a,g) = -0.8/sqrt(2).
    let r = -0.8 / (2.0f64).sqrt();
    let mean = [3.0, 0.40, 0.50, 0.12, 3.0, 1.5];
    let sd = [1.0, 0.20, 0.20, 0.025, 1.2, 0.9];
    let mut corr = [[0.0; 6]; 6];
    for d in 0..6 {
        corr[d][d] = 1.0;
    }
    corr[0][1] = r;
    corr[1][0] = r;
    corr[0][2] = r;
    corr[2][0] = r;
    corr[4][5] = 0.6;
    corr[5][4] = 0.6;
    let spec = DgpSpec {
        inputs: InputSource::Synthetic {
            firms: 1000,
            periods: 7,
            within_sd_k: 0.6,
            within_sd_l: 0.5,
        },
        law: ParamLaw::from_sd_corr(mean, sd, corr),
        replications: 1,
        seed: 505,
        clamp: ClampRanges::default(),
    };
    let rep = generate_replication(&spec, 0).unwrap();
    // DGP correlation check (sanity of construction, not an assertion on
    // the estimator).
    let true_scale: Vec<f64> =
        rep.truth.beta.iter().zip(rep.truth.gamma.iter()).map(|(b, g)| b + g).collect();
    let dgp_corr = hetprod_core::stats::correlation(&rep.truth.alpha, &true_scale);
    assert!((dgp_corr - (-0.8)).abs() < 0.06, "DGP corr {dgp_corr}");

    let model = ModelSpec::new(Family::DynamicCd, 7);
    let grid = default_grid(&model, &rep.panel, &[13, 13, 13, 1, 1, 7]).unwrap();
    let table = TypeTable::from_grid(&model, &grid).unwrap();
    let opts = SolverOptions {
        tol: 1e-7,
        loglik_tol: 1e-8,
        max_iter: 8000,
        prune_factor: 1e-16,
        ..Default::default()
    };
    let (posteriors, _, _, converged) = estimate_replication(&rep, &table, &opts).unwrap();
    assert!(converged);

    let est_corr = posterior_mean_corr(&posteriors, &model, "alpha_bar", "scale");
    assert!(est_corr < 0.0, "estimated corr {est_corr} not negative");
    assert!(
        (est_corr - (-0.8)).abs() <= 0.15,
        "estimated corr {est_corr} not within 0.15 of -0.8"
    );

    // TTP at common reference inputs (population input means).
    let (_, summary) = compute_ttp(
        &posteriors,
        &model,
        &rep.panel,
        &TtpReference::Explicit { k0: (3.0f64).exp(), l0: (1.5f64).exp() },
    )
    .unwrap();
    assert!(
        summary.sd_ln_ttp <= 0.85 * summary.sd_ln_tfp,
        "sd(ln TTP) {} vs sd(ln TFP) {}: less than 15% reduction",
        summary.sd_ln_ttp,
        summary.sd_ln_tfp
    );
    println!(
        "ACCEPTANCE 5 (negative corr + TTP compression): PASS \
         (corr {est_corr:+.3} within 0.15 of -0.8; sd lnTTP/lnTFP = {:.3}/{:.3} = {:.0}% reduction; {:.0?})",
        summary.sd_ln_ttp,
        summary.sd_ln_tfp,
        100.0 * (1.0 - summary.sd_ln_ttp / summary.sd_ln_tfp),
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: blocked likelihood equals the unblocked reference on small
// instances; at I=1000, Q=100,000 the sweep stays within the memory budget
// and the time limit.

#[test]
fn a6_blocked_likelihood_exactness_and_scale() {
    let _g = gate();

    // Exactness on a small instance, against the direct O(T) reference.
    let spec = DgpSpec::calibrated_default(8, 7, 1, 66);
    let rep = generate_replication(&spec, 0).unwrap();
    let model = ModelSpec::new(Family::DynamicCd, 7);
    let small = GridSpec {
        dims: vec![
            DimSpec::new("alpha0", 0.0, 6.0, 4),
            DimSpec::new("beta", 0.0, 1.2, 4),
            DimSpec::new("gamma", 0.0, 1.2, 4),
            DimSpec::new("alpha1", -0.05, 0.05, 2),
            DimSpec::new("alpha2", 0.0, 0.0, 1),
            DimSpec::new("s", 0.08, 0.8, 3),
        ],
    };
    let table = TypeTable::from_grid(&model, &small).unwrap();
    let ev = LikelihoodEvaluator::new(&model, &rep.panel, &table).unwrap();
    let q = table.q();
    let mut worst = 0.0f64;
    for block in ev
        .compute_blocks(BlockShape { firms: 3, types: 17 }, usize::MAX)
        .unwrap()
    {
        for (r, firm) in block.firms.clone().enumerate() {
            for (c, t) in block.types.clone().enumerate() {
                let want = hetprod_core::likelihood::log_density_firm_type(
                    &model,
                    &rep.panel,
                    firm,
                    &table.param_vector(t),
                );
                let got = block.values[r * block.types.len() + c];
                let tol = 1e-12 * want.abs().max(1.0);
                assert!((got - want).abs() <= tol, "firm {firm} type {t}: {got} vs {want}");
                worst = worst.max((got - want).abs() / want.abs().max(1.0));
            }
        }
    }
    let _ = q;

    // Scale: I=1000, Q=99,000, T=7 under a 256 MB budget.
    let budget: usize = 256 << 20;
    let spec = DgpSpec::calibrated_default(1000, 7, 1, 67);
    let rep = generate_replication(&spec, 0).unwrap();
    let big = default_grid(&model, &rep.panel, &[22, 15, 15, 1, 1, 20]).unwrap();
    assert!((95_000..=105_000).contains(&big.q()), "Q = {}", big.q());
    let table = TypeTable::from_grid(&model, &big).unwrap();
    let ev = LikelihoodEvaluator::new(&model, &rep.panel, &table).unwrap();

    let baseline = reset_peak();
    let t0 = Instant::now();
    let shape = BlockShape { firms: 64, types: 16_384 };
    let mut cells = 0u64;
    let mut checksum = 0.0f64;
    for block in ev.compute_blocks(shape, budget).unwrap() {
        cells += block.values.len() as u64;
        // Fixed-order consumption keeps the pass honest and deterministic.
        let mut m = f64::NEG_INFINITY;
        for &v in &block.values {
            if v > m {
                m = v;
            }
        }
        checksum += m;
    }
    let elapsed = t0.elapsed();
    let peak_delta = PEAK.load(Ordering::Relaxed).saturating_sub(baseline);
    assert_eq!(cells, 1000 * big.q() as u64);
    assert!(checksum.is_finite());
    assert!(
        peak_delta <= budget,
        "peak heap {} MB exceeds budget {} MB",
        peak_delta >> 20,
        budget >> 20
    );
    assert!(elapsed.as_secs() <= 300, "sweep took {elapsed:?} (> 5 min)");
    println!(
        "ACCEPTANCE 6 (blocked likelihood): PASS (entrywise within 1e-12, worst rel {worst:.1e}; \
         scale sweep I=1000 Q={} in {:.1?}, peak heap {} MB <= 256 MB)",
        big.q(),
        elapsed,
        peak_delta >> 20
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: identical config+seed across 1, 4, and 8 threads yields
// byte-identical artifacts.

#[test]
fn a7_thread_count_determinism() {
    let _g = gate();
    let dir = tempfile::tempdir().unwrap();
    let panel = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/demo_panel.csv");
    let cfg_path = dir.path().join("run.toml");
    let out_base = dir.path().join("out");
    std::fs::write(
        &cfg_path,
        format!(
            r#"
[model]
family = "cd"

[input]
path = {panel:?}

[input.columns]
firm = "firm_id"
year = "t"
output = "y"
capital = "k"
labor = "l"
sector = "sector"
wage_share = "wage_share"

[grid]
points = [9, 7, 7, 3, 3, 5]

[solver]
tol = 1e-8
loglik_tol = 1e-9
max_iter = 6000

[analytics]
ttp = true
markups = true
anova = true
dominance = true

[run]
output_dir = {out:?}
threads = 1
seed = 7777
log_every = 5000
"#,
            panel = panel.canonicalize().unwrap(),
            out = out_base,
        ),
    )
    .unwrap();

    let mut dirs: Vec<PathBuf> = Vec::new();
    for threads in [1usize, 4, 8] {
        let out = dir.path().join(format!("out_t{threads}"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_hetprod"))
            .args(["estimate", "--config"])
            .arg(&cfg_path)
            .args(["--threads", &threads.to_string(), "--output-dir"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "estimate failed at {threads} threads");
        dirs.push(out);
    }
    let mut names: Vec<String> = std::fs::read_dir(&dirs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(names.len() >= 15);
    for name in &names {
        let a = std::fs::read(dirs[0].join(name)).unwrap();
        for other in &dirs[1..] {
            let b = std::fs::read(other.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs across thread counts");
        }
    }
    println!(
        "ACCEPTANCE 7 (thread-count determinism): PASS ({} artifacts byte-identical across 1/4/8 threads)",
        names.len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: analytics match brute-force enumeration oracles at I <= 500
// to 1e-8; ANOVA shares in [0,1] and monotone under added factors.

#[test]
fn a8_analytics_oracles() {
    let _g = gate();
    let i_n = 500;
    let t_len = 4;
    let model = ModelSpec::new(Family::DynamicCd, t_len);
    let mut rng = stream(808, &[8]);

    // Synthetic posteriors and panel with sectors and wage shares.
    let posteriors: Vec<FirmPosterior> = (0..i_n)
        .map(|i| {
            let a = 1.0 + 2.0 * rng.random::<f64>();
            let b = 0.1 + 0.6 * rng.random::<f64>();
            let g = 0.2 + 0.6 * rng.random::<f64>();
            FirmPosterior {
                firm_id: format!("f{i}"),
                expected: vec![a, b, g, 0.0, 0.0, 0.2],
                sd: vec![0.0; 6],
                top_type: 0,
            }
        })
        .collect();
    let mut wage_share = Vec::with_capacity(i_n * t_len);
    let mut k = Vec::with_capacity(i_n * t_len);
    let mut l = Vec::with_capacity(i_n * t_len);
    for _ in 0..i_n * t_len {
        wage_share.push(0.15 + 0.6 * rng.random::<f64>());
        k.push(1.0 + rng.random::<f64>());
        l.push(0.5 + rng.random::<f64>());
    }
    let sectors: Vec<String> = (0..i_n).map(|i| format!("s{}", i % 12)).collect();
    let panel = PanelDataset {
        firm_ids: (0..i_n).map(|i| format!("f{i}")).collect(),
        periods: (1..=t_len as i64).collect(),
        y: vec![1.0; i_n * t_len],
        k,
        l,
        sector: Some(sectors.clone()),
        wage_share: Some(wage_share.clone()),
    };

    // Markups vs brute force.
    let (records, summary) = compute_markups(&posteriors, &model, &panel).unwrap();
    let mut brute: Vec<f64> = Vec::new();
    for i in 0..i_n {
        for t in 0..t_len {
            brute.push(posteriors[i].expected[2] / wage_share[i * t_len + t]);
        }
    }
    assert_eq!(records.len(), brute.len());
    let bmean = mean(&brute);
    let bsd = sd_pop(&brute);
    let q = |p: f64| hetprod_core::stats::sample_quantile_unsorted(&brute, p);
    assert!((summary.mean - bmean).abs() <= 1e-8);
    assert!((summary.sd - bsd).abs() <= 1e-8);
    assert!((summary.p90_p10 - q(0.9) / q(0.1)).abs() <= 1e-8);
    assert!((summary.p90_p50 - q(0.9) / q(0.5)).abs() <= 1e-8);

    // ANOVA single factor vs between-group/total SS oracle, plus bounds and
    // monotonicity when size deciles are added.
    let rows_sector = anova_decomposition(&posteriors, &model, &panel, Grouping::Sector).unwrap();
    for row in &rows_sector {
        let vals: Vec<f64> = match row.param.as_str() {
            "alpha_bar" => posteriors.iter().map(|fp| fp.intercept(&model)).collect(),
            "beta" => posteriors.iter().map(|fp| fp.expected[1]).collect(),
            _ => posteriors.iter().map(|fp| fp.expected[2]).collect(),
        };
        let grand = mean(&vals);
        let mut by_group: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
        for (s, v) in sectors.iter().zip(vals.iter()) {
            by_group.entry(s).or_default().push(*v);
        }
        let between: f64 = by_group
            .values()
            .map(|g| g.len() as f64 * (mean(g) - grand).powi(2))
            .sum();
        let total: f64 = vals.iter().map(|v| (v - grand).powi(2)).sum();
        let oracle = between / total;
        assert!(
            (row.explained_share - oracle).abs() <= 1e-8,
            "{}: {} vs oracle {}",
            row.param,
            row.explained_share,
            oracle
        );
        assert!((0.0..=1.0).contains(&row.explained_share));
    }
    let rows_both =
        anova_decomposition(&posteriors, &model, &panel, Grouping::SectorAndSize).unwrap();
    for (a, b) in rows_sector.iter().zip(rows_both.iter()) {
        assert!(b.explained_share >= a.explained_share - 1e-10);
        assert!((0.0..=1.0).contains(&b.explained_share));
    }

    // Dominance: diagnostic (exact path at this size) vs a direct pair loop
    // and vs the rank-based count.
    let d = dominance_diagnostic(&posteriors, &model).unwrap();
    let a_vals: Vec<f64> = posteriors.iter().map(|fp| fp.intercept(&model)).collect();
    let b_vals: Vec<f64> = posteriors.iter().map(|fp| fp.scale(&model)).collect();
    let mut violating = 0u64;
    let mut pairs = 0u64;
    for i in 0..i_n {
        for j in i + 1..i_n {
            pairs += 1;
            if (a_vals[i] - a_vals[j]) * (b_vals[i] - b_vals[j]) > 0.0 {
                violating += 1;
            }
        }
    }
    assert_eq!(d.pairs, pairs);
    assert!((d.violating_share - violating as f64 / pairs as f64).abs() <= 1e-12);
    assert_eq!(
        concordant_pairs_fast(&a_vals, &b_vals),
        concordant_pairs_exact(&a_vals, &b_vals)
    );
    println!(
        "ACCEPTANCE 8 (analytics oracles): PASS (markup summary, ANOVA shares, dominance pairs \
         all match enumeration at I=500 within 1e-8; ANOVA monotone and in [0,1])"
    );
}
