mod common;

use common::*;
use gmport::evar::evar_gaussian_reduced;
use gmport::oracle::{grid_search_evar, mc_quantile, GridOptions};
use gmport::{EvarMethod, EvarOptions, EvarProblem, FeasibleSet, GmModel};
use nalgebra::DMatrix;

#[test]
fn change_of_variable_identity() {
    let mut r = rng(1);
    for _ in 0..100 {
        let model = random_model(&mut r, 2, 3, 0.5, 0.5);
        let p = EvarProblem::new(model.clone(), uniform(&mut r, 0.01, 0.5), FeasibleSet::budget(2)).unwrap();
        let w = random_vector(&mut r, 2, 1.5);
        let delta = uniform(&mut r, 0.05, 5.0);
        let a = p.objective(&w, delta).unwrap();
        assert!((a - p.objective_lambda(&w, 1.0 / delta).unwrap()).abs() < 1e-10);
        assert!((a - evar_objective(&model, p.alpha(), &w, delta)).abs() < 1e-10);
    }
}

#[test]
fn finite_values_reduction() {
    let mut r = rng(2);
    for _ in 0..50 {
        let k = 5;
        let weights = random_weights(&mut r, k);
        let values: Vec<_> = (0..k).map(|_| random_vector(&mut r, 2, 0.5)).collect();
        let model = GmModel::finite_values(weights.clone(), values.clone()).unwrap();
        let alpha = 0.1;
        let p = EvarProblem::new(model, alpha, FeasibleSet::budget(2)).unwrap();
        let w = random_vector(&mut r, 2, 1.0);
        let delta = uniform(&mut r, 0.1, 2.0);
        let terms: Vec<f64> = (0..k).map(|i| (weights[i] / alpha).ln() - values[i].dot(&w) / delta).collect();
        assert!((p.objective(&w, delta).unwrap() - delta * lse(&terms)).abs() < 1e-12);
    }
}

#[test]
fn evar_bounds_var() {
    let model = paper_model(0.05);
    let p = EvarProblem::new(model.clone(), 0.05, FeasibleSet::budget(2)).unwrap();
    let w = v(&[1.47, -0.47]);
    let (evar, _) = p.evar_value(&w).unwrap();
    let var = mc_quantile(&model, &w, 0.05, 1_000_000, 3).unwrap();
    assert!(evar >= var.value - 3.0 * var.std_error, "{evar} vs {var:?}");

    let mut r = rng(4);
    for i in 0..5 {
        let model = random_model(&mut r, 2, 2, 0.2, 0.3);
        let p = EvarProblem::new(model.clone(), 0.05, FeasibleSet::budget(2)).unwrap();
        let w = random_vector(&mut r, 2, 1.0);
        let (evar, _) = p.evar_value(&w).unwrap();
        let var = mc_quantile(&model, &w, 0.05, 200_000, 10 + i).unwrap();
        assert!(evar >= var.value - 3.0 * var.std_error);
    }
}

#[test]
fn evar_value_is_nonincreasing_in_alpha() {
    let mut r = rng(5);
    let model = random_model(&mut r, 2, 3, 0.3, 0.3);
    let w = v(&[0.2, 0.8]);
    let values: Vec<f64> = [0.01, 0.05, 0.1, 0.3, 0.6, 0.9]
        .iter()
        .map(|&a| EvarProblem::new(model.clone(), a, FeasibleSet::budget(2)).unwrap().evar_value(&w).unwrap().0)
        .collect();
    assert!(values.windows(2).all(|p| p[1] <= p[0] + 1e-12), "{values:?}");
}

#[test]
fn single_gaussian_evar_value() {
    let mut r = rng(6);
    let model = random_model(&mut r, 3, 1, 0.3, 0.4);
    let alpha: f64 = 0.05;
    let p = EvarProblem::new(model.clone(), alpha, FeasibleSet::budget(3)).unwrap();
    let w = v(&[0.2, 0.5, 0.3]);
    let expected =
        -model.means()[0].dot(&w) + (-2.0 * alpha.ln()).sqrt() * (&model.covariances()[0] * &w).dot(&w).sqrt();
    assert!((p.evar_value(&w).unwrap().0 - expected).abs() < 1e-8);
}

#[test]
fn approx_is_exact_for_one_component() {
    let mut r = rng(7);
    for _ in 0..5 {
        let model = random_model(&mut r, 2, 1, 0.2, 0.3);
        let p = EvarProblem::new(model, 0.05, FeasibleSet::budget(2)).unwrap();
        let approx = p.solve(EvarMethod::Approx, &EvarOptions::default()).unwrap();
        let alt = p.solve(EvarMethod::Alternating, &EvarOptions::default()).unwrap();
        assert!((approx.objective - alt.objective).abs() < 1e-6);
    }
}

#[test]
fn approx_gap_within_soft_max_bound() {
    let mut r = rng(8);
    for _ in 0..5 {
        let model = random_model(&mut r, 3, 3, 0.2, 0.3);
        let p = EvarProblem::new(model, 0.05, FeasibleSet::budget(3)).unwrap();
        let approx = p.solve(EvarMethod::Approx, &EvarOptions::default()).unwrap();
        let alt = p.solve(EvarMethod::Alternating, &EvarOptions::default()).unwrap();
        let gap = approx.objective - alt.objective;
        assert!(gap >= -1e-9 && gap <= alt.delta * 3f64.ln());
    }
}

#[test]
fn scenario_models_with_rare_scenarios_use_the_upper_bound() {
    let mut r = rng(9);
    let weights = vec![0.125; 8];
    let values = (0..8).map(|_| v(&[uniform(&mut r, -0.3, 0.4), uniform(&mut r, -0.1, 0.15)])).collect();
    let model = GmModel::finite_values(weights, values).unwrap();
    let p = EvarProblem::new(model, 0.3, FeasibleSet::budget(2)).unwrap();
    let approx = p.solve(EvarMethod::Approx, &EvarOptions::default()).unwrap();
    let alt = p.solve(EvarMethod::Alternating, &EvarOptions::default()).unwrap();
    assert!(approx.diagnostics.upper_bound_surrogate);
    assert!(approx.weights.iter().all(|w| w.abs() < 10.0));
    assert!(approx.objective - alt.objective <= alt.delta * 8f64.ln());
}

#[test]
fn paper_model_matches_grid() {
    let p = EvarProblem::new(paper_model(0.05), 0.05, FeasibleSet::budget(2)).unwrap();
    let opts = GridOptions { span: (-3.0, 3.0), delta_range: (1e-9, 1e3), ..GridOptions::default() };
    let grid = grid_search_evar(&p, &opts).unwrap();
    for method in [EvarMethod::Approx, EvarMethod::Alternating] {
        let rep = p.solve(method, &EvarOptions::default()).unwrap();
        assert!((rep.objective - grid.objective).abs() <= 1e-3, "{method:?}");
    }
}

#[test]
fn unit_risk_coefficient() {
    // α = e^{-1/2} makes (−2 log α)^{1/2} = 1
    let alpha = (-0.5f64).exp();
    let mu = v(&[0.1, 0.3]);
    let sigma = DMatrix::identity(2, 2);
    let rep = evar_gaussian_reduced(&mu, &sigma, alpha, &FeasibleSet::budget(2), &EvarOptions::default()).unwrap();
    let w = rep.weights_vector();
    assert!((rep.objective - (-mu.dot(&w) + w.norm())).abs() < 1e-10);
}

#[test]
fn implied_risk_aversion_grows_as_alpha_falls() {
    let mut r = rng(10);
    let model = random_model(&mut r, 2, 1, 0.2, 0.3);
    let lambdas: Vec<f64> = [0.3, 0.1, 0.05, 0.01]
        .iter()
        .map(|&a| {
            evar_gaussian_reduced(&model.means()[0], &model.covariances()[0], a, &FeasibleSet::budget(2), &EvarOptions::default())
                .unwrap()
                .lambda
        })
        .collect();
    assert!(lambdas.windows(2).all(|p| p[1] > p[0]), "{lambdas:?}");
}
