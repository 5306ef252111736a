//! Property tests for the invariants that must hold on arbitrary inputs.

#![allow(clippy::needless_range_loop)]

use hetprod_core::grid::{DimSpec, GridSpec, TypeTable};
use hetprod_core::likelihood::DenseLogDensity;
use hetprod_core::model::{Family, ModelSpec};
use hetprod_core::solver::{fixed_point_iterate, MixingDistribution, SolverOptions};
use hetprod_core::stats::sample_quantile;
use proptest::prelude::*;

fn small_matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (2usize..6, 2usize..9).prop_flat_map(|(i, q)| {
        proptest::collection::vec(-30.0..0.0f64, i * q).prop_map(move |v| (i, q, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solver_preserves_simplex_and_monotonicity((i, q, vals) in small_matrix()) {
        let src = DenseLogDensity::new(i, q, vals);
        let opts = SolverOptions { max_iter: 400, ..Default::default() };
        let (pi, report) =
            fixed_point_iterate(&src, MixingDistribution::uniform(q), &opts).unwrap();
        let sum: f64 = pi.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(pi.weights.iter().all(|w| *w >= 0.0));
        for w in report.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10, "loglik decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn solver_permutation_equivariance((i, q, vals) in small_matrix()) {
        // Reversing type order permutes the solution identically.
        let mut reversed = vec![0.0; i * q];
        for r in 0..i {
            for c in 0..q {
                reversed[r * q + (q - 1 - c)] = vals[r * q + c];
            }
        }
        let opts = SolverOptions { max_iter: 200, ..Default::default() };
        let (pa, _) = fixed_point_iterate(
            &DenseLogDensity::new(i, q, vals),
            MixingDistribution::uniform(q),
            &opts,
        )
        .unwrap();
        let (pb, _) = fixed_point_iterate(
            &DenseLogDensity::new(i, q, reversed),
            MixingDistribution::uniform(q),
            &opts,
        )
        .unwrap();
        for c in 0..q {
            prop_assert!((pa.weights[c] - pb.weights[q - 1 - c]).abs() < 1e-12);
        }
    }

    #[test]
    fn solver_per_firm_scale_invariance((i, q, vals) in small_matrix(), shift in -100.0..100.0f64) {
        // Adding a constant to one firm's log-density row changes nothing.
        let mut shifted = vals.clone();
        for v in shifted[..q].iter_mut() {
            *v += shift;
        }
        let opts = SolverOptions { max_iter: 200, ..Default::default() };
        let (pa, _) = fixed_point_iterate(
            &DenseLogDensity::new(i, q, vals),
            MixingDistribution::uniform(q),
            &opts,
        )
        .unwrap();
        let (pb, _) = fixed_point_iterate(
            &DenseLogDensity::new(i, q, shifted),
            MixingDistribution::uniform(q),
            &opts,
        )
        .unwrap();
        for c in 0..q {
            prop_assert!((pa.weights[c] - pb.weights[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn type_table_bijective(radices in proptest::collection::vec(1usize..5, 3)) {
        // Intensive family: 3 dimensions with arbitrary radices.
        let model = ModelSpec::new(Family::IntensiveCd, 3);
        let dims = vec![
            DimSpec::new("a", 0.0, if radices[0] == 1 { 0.0 } else { 1.0 }, radices[0]),
            DimSpec::new("b", 0.0, if radices[1] == 1 { 0.0 } else { 1.0 }, radices[1]),
            DimSpec::new(
                "s",
                0.1,
                if radices[2] == 1 { 0.1 } else { 0.9 },
                radices[2],
            ),
        ];
        let table = TypeTable::from_grid(&model, &GridSpec { dims }).unwrap();
        let mut seen = vec![false; table.q()];
        for t in 0..table.q() {
            let idx = table.decode(t);
            prop_assert_eq!(table.encode(&idx), t);
            prop_assert!(!seen[t]);
            seen[t] = true;
        }
        prop_assert!(seen.into_iter().all(|b| b));
    }

    #[test]
    fn mean_output_monotone_in_inputs(
        k in -3.0..3.0f64,
        l in -3.0..3.0f64,
        delta in 0.0..2.0f64,
        beta in 0.0..1.5f64,
        gamma in 0.0..1.5f64,
        omega in 0.05..0.95f64,
        nu in 0.0..2.0f64,
        sigma_raw in 0.2..6.0f64,
    ) {
        // Nonnegative elasticities: higher inputs never lower the mean.
        let sigma = if (sigma_raw - 1.0).abs() < 2e-3 { 1.1 } else { sigma_raw };
        let cd = ModelSpec::new(Family::DynamicCd, 4);
        let p = hetprod_core::model::ParamVector(vec![0.5, beta, gamma, 0.01, -0.001, 0.2]);
        prop_assert!(cd.mean_output(&p, k + delta, l, 2) >= cd.mean_output(&p, k, l, 2) - 1e-12);
        prop_assert!(cd.mean_output(&p, k, l + delta, 2) >= cd.mean_output(&p, k, l, 2) - 1e-12);

        let ces = ModelSpec::new(Family::GeneralizedCes, 4);
        let p = hetprod_core::model::ParamVector(vec![0.5, omega, nu, sigma, 0.0, 0.0, 0.2]);
        let base = ces.mean_output(&p, k, l, 2);
        prop_assert!(ces.mean_output(&p, k + delta, l, 2) >= base - 1e-10);
        prop_assert!(ces.mean_output(&p, k, l + delta, 2) >= base - 1e-10);

        let int = ModelSpec::new(Family::IntensiveCd, 4);
        let p = hetprod_core::model::ParamVector(vec![0.5, beta, 0.2]);
        prop_assert!(int.mean_output(&p, k + delta, 0.0, 2) >= int.mean_output(&p, k, 0.0, 2) - 1e-12);
    }

    #[test]
    fn quantiles_monotone_in_p(mut values in proptest::collection::vec(-1e6..1e6f64, 1..60)) {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ps = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];
        let mut last = f64::NEG_INFINITY;
        for &p in &ps {
            let v = sample_quantile(&values, p);
            prop_assert!(v >= last);
            last = v;
        }
        prop_assert_eq!(sample_quantile(&values, 0.0), values[0]);
        prop_assert_eq!(sample_quantile(&values, 1.0), *values.last().unwrap());
    }

    #[test]
    fn panel_csv_round_trip(
        i in 1usize..6,
        t in 2usize..5,
        raw in proptest::collection::vec(-50.0..50.0f64, 90),
    ) {
        let mut y = Vec::new();
        let mut k = Vec::new();
        let mut l = Vec::new();
        let mut it = raw.into_iter().cycle();
        for _ in 0..i * t {
            y.push(it.next().unwrap());
            k.push(it.next().unwrap());
            l.push(it.next().unwrap());
        }
        let panel = hetprod_core::panel::PanelDataset {
            firm_ids: (0..i).map(|j| format!("f{j}")).collect(),
            periods: (1..=t as i64).collect(),
            y,
            k,
            l,
            sector: None,
            wage_share: None,
        };
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut map = hetprod_core::panel::ColumnMap::canonical();
        map.sector = None;
        map.wage_share = None;
        let (back, _) = hetprod_core::panel::load_panel_str(&text, &map, false).unwrap();
        prop_assert_eq!(panel, back);
    }
}
