mod common;

use approx::assert_abs_diff_eq;
use common::*;
use lassopv_core::lars::{compute_path, first_activation, residual_at_entry, verify_kkt, PathEvent, PathOptions};
use lassopv_core::DataMatrix;
use proptest::prelude::*;

/// Two orthogonal centered predictors with `|x1.y|/n = 0.8` and
/// `|x2.y|/n = 0.3`.
fn orthogonal_design() -> (DataMatrix, Vec<f64>) {
    let x1 = vec![1.0, -1.0, 1.0, -1.0];
    let x2 = vec![1.0, 1.0, -1.0, -1.0];
    // y = a x1 + b x2 with x.x/n = 1, so correlations are a and b
    let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 0.8 * a - 0.3 * b).collect();
    let x = DataMatrix::from_columns(names(2), vec![x1, x2]).unwrap().center_columns();
    (x, y)
}

#[test]
fn orthogonal_design_soft_thresholds() {
    let (x, y) = orthogonal_design();
    let path = compute_path(&x, &y, &PathOptions::default()).unwrap();
    assert_abs_diff_eq!(path.lambda_max(), 0.8, epsilon = 1e-15);
    let events: Vec<PathEvent> = path.knots().iter().flat_map(|k| k.events.clone()).collect();
    assert_eq!(events, vec![PathEvent::Enter(0), PathEvent::Enter(1), PathEvent::Terminate]);
    let lambdas: Vec<f64> = path.lambdas().collect();
    assert_abs_diff_eq!(lambdas[1], 0.3, epsilon = 1e-14);
    assert_eq!(lambdas[2], 0.0);

    let fa = first_activation(&path);
    assert_abs_diff_eq!(fa[0].unwrap(), 0.8, epsilon = 1e-14);
    assert_abs_diff_eq!(fa[1].unwrap(), 0.3, epsilon = 1e-14);

    // closed form sign(c) max(|c| - lambda, 0) / sigma^2 with sigma^2 = 1,
    // and coordinate descent on the same grid
    for i in 0..=40 {
        let lambda = 0.9 * i as f64 / 40.0;
        let b = path.coefficients_at(lambda);
        let closed = [(0.8 - lambda).max(0.0), -(0.3 - lambda).max(0.0)];
        let cd = coordinate_descent(&x, &y, lambda, 1e-13);
        for j in 0..2 {
            assert_abs_diff_eq!(b[j], closed[j], epsilon = 1e-12);
            assert_abs_diff_eq!(cd[j], closed[j], epsilon = 1e-10);
        }
    }
    let report = verify_kkt(&path, &x, &y, 1e-8);
    assert!(report.ok, "{report:?}");
}

#[test]
fn residual_at_entry_cases() {
    let (x, y) = orthogonal_design();
    let path = compute_path(&x, &y, &PathOptions::default()).unwrap();

    let (r0, v0) = residual_at_entry(&path, &x, &y, 0).unwrap();
    assert_eq!(r0, y);
    assert_abs_diff_eq!(v0, y.iter().map(|v| v * v).sum::<f64>() / 4.0, epsilon = 1e-15);

    // second enterer: y - x1 b1(0.3) with b1(0.3) = 0.5
    let (r1, v1) = residual_at_entry(&path, &x, &y, 1).unwrap();
    for (i, r) in r1.iter().enumerate() {
        assert_abs_diff_eq!(*r, y[i] - 0.5 * x.column(0)[i], epsilon = 1e-14);
    }
    let stored = path.knots()[1].residual_variance;
    assert_abs_diff_eq!(v1, stored, epsilon = 1e-14);

    let zero = vec![0.0; 4];
    let flat = compute_path(&x, &zero, &PathOptions::default()).unwrap();
    assert!(residual_at_entry(&flat, &x, &zero, 0).is_err());
}

#[test]
fn residual_at_entry_matches_reduced_problem() {
    let mut rng = rng(11);
    for _ in 0..30 {
        let (x, y) = correlated_instance(&mut rng, 15, 6);
        let path = compute_path(&x, &y, &PathOptions::default()).unwrap();
        for (i, entry) in first_activation(&path).iter().enumerate() {
            let Some(lambda_i) = entry else { continue };
            let (res, _) = residual_at_entry(&path, &x, &y, i).unwrap();
            let others: Vec<usize> = (0..x.n_vars()).filter(|&j| j != i).collect();
            let reduced = x.select_columns(&others).unwrap();
            let b = coordinate_descent(&reduced, &y, *lambda_i, 1e-14);
            let mut expect = y.clone();
            for (p, &j) in others.iter().enumerate() {
                for (e, xv) in expect.iter_mut().zip(x.column(j)) {
                    *e -= b[p] * xv;
                }
            }
            for (a, e) in res.iter().zip(&expect) {
                assert_abs_diff_eq!(a, e, epsilon = 1e-7);
            }
        }
    }
}

#[test]
fn perturbed_path_fails_kkt() {
    let mut rng = rng(3);
    let (x, y) = correlated_instance(&mut rng, 18, 5);
    let path = compute_path(&x, &y, &PathOptions::default()).unwrap();
    assert!(verify_kkt(&path, &x, &y, 1e-8).ok);

    let mut knots = path.knots().to_vec();
    let idx = knots.iter().position(|k| k.coefs.iter().any(|c| c.1 != 0.0)).unwrap();
    let slot = knots[idx].coefs.iter().position(|c| c.1 != 0.0).unwrap();
    knots[idx].coefs[slot].1 += 1e-3;
    let bad = lassopv_core::RegularizationPath::from_knots(knots, 18, 5, false).unwrap();
    let report = verify_kkt(&bad, &x, &y, 1e-8);
    assert!(!report.ok);
    assert_eq!(report.knot, idx);
}

#[test]
fn enter_drop_reenter_reports_first_entry() {
    let mut rng = rng(5);
    let mut seen = 0;
    for _ in 0..400 {
        let (x, y) = correlated_instance(&mut rng, 14, 8);
        let path = compute_path(&x, &y, &PathOptions::default()).unwrap();
        for (i, fa) in first_activation(&path).iter().enumerate() {
            let entries: Vec<f64> = path
                .knots()
                .iter()
                .filter(|k| k.events.contains(&PathEvent::Enter(i)))
                .map(|k| k.lambda)
                .collect();
            if entries.len() > 1 {
                assert_eq!(fa.unwrap(), entries[0]);
                assert!(entries[0] > entries[1]);
                seen += 1;
            }
        }
    }
    assert!(seen > 0, "no re-entry observed");
}

#[test]
fn saturates_at_n_minus_one_active() {
    let mut rng = rng(8);
    let (x, y) = correlated_instance(&mut rng, 6, 12);
    let path = compute_path(&x, &y, &PathOptions::default()).unwrap();
    let last = path.knots().last().unwrap();
    assert!(last.events.contains(&PathEvent::Terminate));
    assert_eq!(last.coefs.len(), 5);
    assert!(!path.truncated());
    assert!(verify_kkt(&path, &x, &y, 1e-8).ok);
}

#[test]
fn lambda_floor_stops_early() {
    let mut rng = rng(9);
    let (x, y) = correlated_instance(&mut rng, 20, 6);
    let full = compute_path(&x, &y, &PathOptions::default()).unwrap();
    let floor = full.knots()[2].lambda;
    let opts = PathOptions {
        max_knots: None,
        lambda_floor: floor,
    };
    let part = compute_path(&x, &y, &opts).unwrap();
    assert!(part.truncated());
    assert_eq!(part.knots(), &full.knots()[..3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn path_matches_coordinate_descent(seed in any::<u64>(), n in 12usize..=20, k in 1usize..=10) {
        let mut rng = rng(seed);
        let (x, y) = correlated_instance(&mut rng, n, k);
        let path = compute_path(&x, &y, &PathOptions::default()).unwrap();
        let lmax = path.lambda_max();
        let expect_max = (0..k)
            .map(|j| x.column(j).iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().abs() / n as f64)
            .fold(0.0, f64::max);
        prop_assert!((lmax - expect_max).abs() <= 1e-14 * expect_max);
        prop_assert!(path.knots()[0].coefs.iter().all(|c| c.1 == 0.0));
        prop_assert!(verify_kkt(&path, &x, &y, 1e-8).ok);
        for g in 0..25 {
            let lambda = lmax * (0.98 - 0.96 * g as f64 / 24.0);
            let b = path.coefficients_at(lambda);
            let cd = coordinate_descent(&x, &y, lambda, 1e-12);
            for j in 0..k {
                prop_assert!((b[j] - cd[j]).abs() <= 1e-6, "lambda {} coef {}: {} vs {}", lambda, j, b[j], cd[j]);
            }
        }
    }

    #[test]
    fn permuting_columns_permutes_first_activation(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let (x, y) = correlated_instance(&mut rng, 16, 6);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let xp = x.select_columns(&perm).unwrap();
        let a = first_activation(&compute_path(&x, &y, &PathOptions::default()).unwrap());
        let b = first_activation(&compute_path(&xp, &y, &PathOptions::default()).unwrap());
        for (p, &orig) in perm.iter().enumerate() {
            match (a[orig], b[p]) {
                (Some(u), Some(v)) => prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0)),
                (None, None) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }
    }
}
