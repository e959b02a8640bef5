use factorial_ri::assignment::{draw_assignment, enumerate_assignments, observe, GroupSizes, ObservedData};
use factorial_ri::design::{build_model_matrix, check_orthogonality};
use factorial_ri::estimators::{
    balanced_covariance, cov_he, cov_hw, estimate_ri, fit_ols, ri_effects, xtx_inverse,
};
use factorial_ri::population::{
    neymanian_bias, population_effects, population_effects_from_units, true_sampling_covariance,
    PotentialOutcomeTable,
};
use factorial_ri::stats::{is_symmetric, max_abs_diff, max_abs_diff_diagonal, max_abs_diff_matrix, min_eigenvalue};
use factorial_ri::verify::{check_xtx_identities, he_hw_discrepancy};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// K in 1..=3, per-group sizes in [min, max], outcomes in [-9, 9].
fn observed(min: usize, max: usize) -> impl Strategy<Value = ObservedData> {
    (1u32..=3).prop_flat_map(move |k| {
        let j = 1usize << k;
        prop::collection::vec(min..=max, j).prop_flat_map(move |sizes| {
            let n: usize = sizes.iter().sum();
            prop::collection::vec(-9.0f64..9.0, n).prop_map(move |ys| {
                let treatments = sizes
                    .iter()
                    .enumerate()
                    .flat_map(|(t, &nt)| std::iter::repeat_n(t, nt));
                ObservedData::from_pairs(k, treatments.zip(ys)).unwrap()
            })
        })
    })
}

fn table(max_units: usize) -> impl Strategy<Value = PotentialOutcomeTable> {
    (1u32..=3).prop_flat_map(move |k| {
        let j = 1usize << k;
        (2usize..=max_units).prop_flat_map(move |n| {
            prop::collection::vec(prop::collection::vec(-9.0f64..9.0, j), n)
                .prop_map(move |rows| PotentialOutcomeTable::from_rows(k, rows).unwrap())
        })
    })
}

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(1.0f64, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn point_estimates_agree(obs in observed(1, 5)) {
        let ri = ri_effects(&obs).unwrap();
        let ols = fit_ols(&obs).unwrap().effects();
        prop_assert!(max_abs_diff(&ri, &ols) <= 1e-10);
    }

    #[test]
    fn covariance_estimates_agree(obs in observed(2, 6)) {
        let ney = estimate_ri(&obs).unwrap().covariance;
        let fit = fit_ols(&obs).unwrap();
        let hw = cov_hw(&fit, &obs).unwrap();
        prop_assert!(max_abs_diff_matrix(&ney, &hw) <= 1e-10);
        prop_assert!(is_symmetric(&ney));
        let d = ney[(0, 0)];
        prop_assert!(d >= 0.0);
        // Every diagonal entry is 4^-(K-1) sum_j s_j^2 / n_j.
        prop_assert!((0..ney.nrows()).all(|i| (ney[(i, i)] - d).abs() <= 1e-12 * d.max(1.0)));
    }

    #[test]
    fn leverages_and_residuals(obs in observed(1, 6)) {
        let fit = fit_ols(&obs).unwrap();
        for (h, r) in fit.leverages.iter().zip(obs.records()) {
            prop_assert!((h - 1.0 / obs.group_counts()[r.treatment] as f64).abs() <= 1e-12);
        }
        let total: f64 = fit.leverages.iter().sum();
        prop_assert!((total - obs.n_treatments() as f64).abs() <= 1e-12);
        prop_assert!(max_abs_diff(&fit.residuals, &fit.residuals_from_matrix(&obs)) <= 1e-12);
        let mut sums = vec![0.0; obs.n_treatments()];
        for (e, r) in fit.residuals.iter().zip(obs.records()) {
            sums[r.treatment] += e;
        }
        prop_assert!(sums.iter().all(|s| s.abs() <= 1e-12));
    }

    #[test]
    fn xtx_eigenstructure(obs in observed(1, 6)) {
        prop_assert!(check_xtx_identities(&obs, 1e-12).unwrap().pass);
        let sizes = obs.group_sizes().unwrap();
        let model = build_model_matrix(obs.k()).unwrap();
        let inv = xtx_inverse(&sizes, &model).unwrap();
        let x = factorial_ri::estimators::build_regression_matrix(&obs);
        let id = DMatrix::identity(model.dim(), model.dim());
        prop_assert!(max_abs_diff_matrix(&(x.xtx() * inv), &id) <= 1e-12);
        // X'X = sum_j n_j h_j' h_j
        let mut direct = DMatrix::zeros(model.dim(), model.dim());
        for j in 0..model.dim() {
            let h = DMatrix::from_row_slice(1, model.dim(), &model.row_f64(j));
            direct += h.transpose() * h * sizes.get(j) as f64;
        }
        prop_assert_eq!(direct, x.xtx());
    }

    #[test]
    fn balanced_designs_reduce(k in 1u32..=3, r in 2usize..=4, seed in any::<u64>()) {
        let j = 1usize << k;
        let mut s = seed;
        let pairs: Vec<(usize, f64)> = (0..j * r)
            .map(|i| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (i % j, ((s >> 33) % 19) as f64 - 9.0)
            })
            .collect();
        let obs = ObservedData::from_pairs(k, pairs).unwrap();
        let fit = fit_ols(&obs).unwrap();
        let hw = cov_hw(&fit, &obs).unwrap();
        let he = cov_he(&fit, &obs).unwrap();
        let bal = balanced_covariance(&obs).unwrap();
        prop_assert!(max_abs_diff_matrix(&bal, &hw) <= 1e-12 * scale_of(&hw));
        prop_assert!(max_abs_diff_matrix(&bal, &estimate_ri(&obs).unwrap().covariance) <= 1e-12 * scale_of(&hw));
        prop_assert!(max_abs_diff_diagonal(&he, &hw) <= 1e-12 * scale_of(&hw));
        prop_assert!(max_abs_diff_matrix(&fit.xtx_inverse, &(DMatrix::identity(j, j) / (j * r) as f64)) <= 1e-15);
    }

    #[test]
    fn affine_equivariance(obs in observed(2, 4), a in -3.0f64..3.0, b in -5.0f64..5.0) {
        let mapped = obs.map_outcomes(|y| a * y + b).unwrap();
        let e0 = estimate_ri(&obs).unwrap();
        let e1 = estimate_ri(&mapped).unwrap();
        prop_assert!((e1.effects[0] - (a * e0.effects[0] + 2.0 * b)).abs() <= 1e-9);
        for c in 1..e0.effects.len() {
            prop_assert!((e1.effects[c] - a * e0.effects[c]).abs() <= 1e-9);
        }
        let tol = 1e-9 * scale_of(&e0.covariance) * a.abs().max(1.0).powi(2);
        prop_assert!(max_abs_diff_matrix(&e1.covariance, &(&e0.covariance * (a * a))) <= tol);
        let (f0, f1) = (fit_ols(&obs).unwrap(), fit_ols(&mapped).unwrap());
        prop_assert!(max_abs_diff_matrix(&cov_hw(&f1, &mapped).unwrap(), &(cov_hw(&f0, &obs).unwrap() * (a * a))) <= tol);
        prop_assert!(max_abs_diff_matrix(&cov_he(&f1, &mapped).unwrap(), &(cov_he(&f0, &obs).unwrap() * (a * a))) <= tol);
    }

    #[test]
    fn population_routes_agree(t in table(12)) {
        let a = population_effects(&t).values;
        let b = population_effects_from_units(&t).values;
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs_diff(&a, &b) <= 1e-12 * scale);
    }

    #[test]
    fn bias_is_psd_and_covariance_symmetric(t in table(12), seed in any::<u64>()) {
        let bias = neymanian_bias(&t).unwrap();
        prop_assert!(is_symmetric(&bias));
        prop_assert!(min_eigenvalue(&bias) >= -1e-10);
        prop_assert!((0..bias.nrows()).all(|i| bias[(i, i)] >= 0.0));

        // Random group sizes with n_j >= 1 summing to N, when N >= 2^K.
        let j = t.n_treatments();
        let n = t.n_units();
        if n >= j {
            let mut sizes = vec![1usize; j];
            let mut s = seed;
            for _ in 0..n - j {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                sizes[(s >> 33) as usize % j] += 1;
            }
            let cov = true_sampling_covariance(&t, &GroupSizes::new(sizes).unwrap()).unwrap();
            prop_assert!(is_symmetric(&cov));
            prop_assert!((0..j).all(|i| cov[(i, i)] >= -1e-12));
        }
    }

    #[test]
    fn population_affine_equivariance(t in table(10), a in -3.0f64..3.0, b in -5.0f64..5.0) {
        let m = t.map(|y| a * y + b).unwrap();
        let (p0, p1) = (population_effects(&t).values, population_effects(&m).values);
        prop_assert!((p1[0] - (a * p0[0] + 2.0 * b)).abs() <= 1e-9);
        for c in 1..p0.len() {
            prop_assert!((p1[c] - a * p0[c]).abs() <= 1e-9);
        }
        let (b0, b1) = (neymanian_bias(&t).unwrap(), neymanian_bias(&m).unwrap());
        prop_assert!(max_abs_diff_matrix(&b1, &(&b0 * (a * a))) <= 1e-9 * scale_of(&b0) * 9.0);
        let j = t.n_treatments();
        if t.n_units() >= j {
            let mut sizes = vec![1usize; j];
            sizes[0] += t.n_units() - j;
            let gs = GroupSizes::new(sizes).unwrap();
            let (c0, c1) = (true_sampling_covariance(&t, &gs).unwrap(), true_sampling_covariance(&m, &gs).unwrap());
            prop_assert!(max_abs_diff_matrix(&c1, &(&c0 * (a * a))) <= 1e-9 * scale_of(&c0) * 9.0);
        }
    }

    #[test]
    fn draws_satisfy_assignment_invariants(sizes in prop::collection::vec(0usize..=4, 4), seed in any::<u64>()) {
        prop_assume!(sizes.iter().sum::<usize>() > 0);
        let gs = GroupSizes::new(sizes.clone()).unwrap();
        let a = draw_assignment(&gs, seed);
        prop_assert_eq!(a.n_units(), gs.total());
        for (j, &n) in sizes.iter().enumerate() {
            prop_assert_eq!(a.treatment_of().iter().filter(|&&t| t == j).count(), n);
        }
        prop_assert_eq!(&a, &draw_assignment(&gs, seed));
    }
}

#[test]
fn orthogonality_k1_to_10() {
    for k in 1..=10 {
        assert!(check_orthogonality(&build_model_matrix(k).unwrap()), "K={k}");
    }
}

#[test]
fn unbalanced_he_differs_from_hw() {
    let obs = ObservedData::from_pairs(
        1,
        [(0, 3.0), (0, -2.0), (1, 5.0), (1, 1.0), (1, -7.0), (1, 4.0)],
    )
    .unwrap();
    assert!(he_hw_discrepancy(&obs).unwrap() > 1e-6);
}

#[test]
fn identical_units_give_exact_oracle() {
    let t = PotentialOutcomeTable::from_rows(2, vec![vec![3.0, -1.0, 4.0, 1.5]; 8]).unwrap();
    let sizes = GroupSizes::new(vec![2, 2, 2, 2]).unwrap();
    let report = factorial_ri::verify::run_oracle(&t, &sizes).unwrap();
    assert!(report.passed());
    assert!(report.bias.iter().all(|&v| v == 0.0));
    assert!(max_abs_diff_matrix(&report.mean_neymanian_covariance, &report.true_covariance) < 1e-12);
    let n = enumerate_assignments(&sizes).unwrap().count();
    assert_eq!(n, 2520);
    let obs = observe(&t, &draw_assignment(&sizes, 3)).unwrap();
    assert_eq!(ri_effects(&obs).unwrap(), population_effects(&t).values);
}

#[test]
fn unit_shift_oracle_bias_sits_in_null_component() {
    let base = [0.0, 2.0, -1.0, 5.0];
    let rows = (0..8).map(|i| base.iter().map(|c| c + (i * i) as f64).collect()).collect();
    let t = PotentialOutcomeTable::from_rows(2, rows).unwrap();
    let report = factorial_ri::verify::run_oracle(&t, &GroupSizes::new(vec![2, 2, 2, 2]).unwrap()).unwrap();
    assert!(report.passed(), "{:?}", report.discrepancies);
    let excess = &report.mean_neymanian_covariance - &report.true_covariance;
    for r in 0..4 {
        for c in 0..4 {
            if (r, c) != (0, 0) {
                assert!(excess[(r, c)].abs() < 1e-9, "({r},{c}) {}", excess[(r, c)]);
            }
        }
    }
    assert!(excess[(0, 0)] > 0.0);
}
