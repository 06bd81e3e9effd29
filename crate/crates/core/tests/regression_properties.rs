use dbb_core::analysis::synthetic::{linear_dataset, OrderScenario, PartyScenario};
use dbb_core::analysis::{
    fit_design, marginal_means, order_bias_model, party_bias_model, smooth_proportions,
    BetaLikelihood, Design, FitOptions, CONVERGENCE_TOL, LOGLIK_RESOLUTION,
};
use dbb_core::Method;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn linear_design(xs: &[f64]) -> Design {
    let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![1.0, *x]).collect();
    Design::from_rows(
        vec![("Intercept".into(), "β0".into()), ("x".into(), "β1".into())],
        &rows,
    )
    .unwrap()
}

fn random_dataset(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>) {
    let (xs, ys) = linear_dataset(seed, n, -0.5, 1.5, 8.0);
    let x = DMatrix::from_fn(n, p, |i, j| match j {
        0 => 1.0,
        1 => xs[i],
        _ => xs[i].powi(j as i32) + ((i * (j + 3)) % 7) as f64 / 7.0,
    });
    (x, smooth_proportions(&ys))
}

fn central_difference(lik: &BetaLikelihood, theta: &[f64], k: usize) -> f64 {
    let h = 1e-6 * theta[k].abs().max(1.0);
    let mut a = theta.to_vec();
    let mut b = theta.to_vec();
    a[k] += h;
    b[k] -= h;
    (lik.value(&a) - lik.value(&b)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_matches_finite_differences(
        seed in 0u64..1000,
        p in 1usize..4,
        theta in prop::collection::vec(-1.5f64..1.5, 4),
        log_phi in 0.0f64..4.5,
    ) {
        let (x, y) = random_dataset(seed, 60, p);
        let lik = BetaLikelihood::new(&x, &y);
        let mut t: Vec<f64> = theta[..p].to_vec();
        t.push(log_phi);
        let g = lik.gradient(&t);
        for k in 0..=p {
            let fd = central_difference(&lik, &t, k);
            prop_assert!((g[k] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "k={} {} vs {}", k, g[k], fd);
        }
    }

    #[test]
    fn hessian_matches_gradient_differences(
        seed in 0u64..1000,
        theta in prop::collection::vec(-1.0f64..1.0, 3),
        log_phi in 0.5f64..4.0,
    ) {
        let (x, y) = random_dataset(seed, 40, 3);
        let lik = BetaLikelihood::new(&x, &y);
        let mut t = theta.clone();
        t.push(log_phi);
        let h = lik.hessian(&t);
        for k in 0..4 {
            let step = 1e-5;
            let mut a = t.clone();
            let mut b = t.clone();
            a[k] += step;
            b[k] -= step;
            let (ga, gb) = (lik.gradient(&a), lik.gradient(&b));
            for j in 0..4 {
                let fd = (ga[j] - gb[j]) / (2.0 * step);
                prop_assert!((h[(j, k)] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "({j},{k}) {} vs {fd}", h[(j, k)]);
            }
        }
    }
}

#[test]
fn fitted_optimum_is_stationary_with_positive_information() {
    let (xs, ys) = linear_dataset(7, 800, -1.0, 2.0, 30.0);
    let fit = fit_design(&ys, &linear_design(&xs), FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.gradient_max_abs < CONVERGENCE_TOL);
    assert!(fit.information_positive_definite);
    // non-decreasing up to the rounding resolution of ℓ
    assert!(
        fit.trace
            .windows(2)
            .all(|w| w[1] >= w[0] - LOGLIK_RESOLUTION * w[0].abs()),
        "{:?}",
        fit.trace
    );
    assert_eq!(*fit.trace.last().unwrap(), fit.log_likelihood);
}

#[test]
fn row_permutation_leaves_coefficients_unchanged() {
    let (xs, ys) = linear_dataset(11, 1500, -1.0, 2.0, 30.0);
    let base = fit_design(&ys, &linear_design(&xs), FitOptions::default()).unwrap();
    let n = xs.len();
    let perm: Vec<usize> = (0..n).map(|i| (i * 7919 + 13) % n).collect();
    let xp: Vec<f64> = perm.iter().map(|&i| xs[i]).collect();
    let yp: Vec<f64> = perm.iter().map(|&i| ys[i]).collect();
    let permuted = fit_design(&yp, &linear_design(&xp), FitOptions::default()).unwrap();
    for (a, b) in base.coefficients.iter().zip(&permuted.coefficients) {
        assert!((a.estimate - b.estimate).abs() <= 1e-10, "{} vs {}", a.estimate, b.estimate);
    }
    assert!((base.phi() - permuted.phi()).abs() <= 1e-10 * base.phi());
}

#[test]
fn duplicate_column_is_rejected() {
    let xs: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
    let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![1.0, *x, 1.0]).collect();
    let d = Design::from_rows(
        vec![
            ("Intercept".into(), "β0".into()),
            ("x".into(), "β1".into()),
            ("Constant copy".into(), "c".into()),
        ],
        &rows,
    )
    .unwrap();
    let err = fit_design(&vec![0.4; 50], &d, FitOptions::default()).unwrap_err();
    assert!(err.to_string().contains("Constant copy"), "{err}");
}

#[test]
fn marginal_means_do_not_depend_on_reference_party() {
    let records = PartyScenario::three_parties(200, 0.3).records(5, "m", Method::Default);
    let a = party_bias_model(&records, "m", Method::Default, Some("A"), FitOptions::default()).unwrap();
    let c = party_bias_model(&records, "m", Method::Default, Some("C"), FitOptions::default()).unwrap();
    let mut ma = marginal_means(&a).unwrap();
    let mut mc = marginal_means(&c).unwrap();
    ma.sort_by(|x, y| x.group.cmp(&y.group));
    mc.sort_by(|x, y| x.group.cmp(&y.group));
    assert_eq!(ma.len(), 3);
    for (x, y) in ma.iter().zip(&mc) {
        assert_eq!(x.group, y.group);
        assert!((x.mu_hat - y.mu_hat).abs() < 1e-8);
        assert!((x.ci_low - y.ci_low).abs() < 1e-8);
        assert!((x.ci_high - y.ci_high).abs() < 1e-8);
        assert!(x.ci_low <= x.mu_hat && x.mu_hat <= x.ci_high);
    }
    let b = ma.iter().find(|m| m.group == "B").unwrap();
    let ref_a = ma.iter().find(|m| m.group == "A").unwrap();
    assert!(b.mu_hat > ref_a.mu_hat);
}

#[test]
fn small_parties_are_dropped_with_warning() {
    let mut scenario = PartyScenario::three_parties(100, 0.0);
    scenario.parties.push(("Tiny".into(), 4, 0.0));
    let records = scenario.records(1, "m", Method::Grouped);
    let fit = party_bias_model(&records, "m", Method::Grouped, None, FitOptions::default()).unwrap();
    assert!(fit.warnings.iter().any(|w| w.contains("Tiny")));
    assert!(fit.coefficients.iter().all(|c| !c.name.contains("Tiny")));
    assert_eq!(fit.n_obs, 301);
    assert_eq!(fit.party_layout.as_ref().unwrap().reference, "A");
}

#[test]
fn order_bias_requires_all_methods() {
    let records: Vec<_> = OrderScenario::flat()
        .records(3, "m")
        .into_iter()
        .filter(|r| r.method != Method::Prompted)
        .collect();
    let err = order_bias_model(&records, "m", FitOptions::default()).unwrap_err();
    assert!(err.to_string().contains("prompted"), "{err}");
}

#[test]
fn order_bias_table_has_thirteen_rows() {
    let fit = order_bias_model(&OrderScenario::u_shaped().records(2, "m"), "m", FitOptions::default())
        .unwrap();
    assert!(fit.converged);
    let rows = fit.table_rows();
    assert_eq!(rows.len(), 13);
    assert_eq!(rows[0].name, "Intercept");
    assert_eq!(rows[12].name, "Precision");
    assert_eq!(fit.model.as_deref(), Some("m"));
}
