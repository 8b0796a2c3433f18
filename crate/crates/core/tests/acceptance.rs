//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

mod common;

use std::time::Instant;

use common::*;
use gmport::linalg::min_eigenvalue;
use gmport::oracle::{finite_difference_gradient, grid_search_evar, mc_quantile, GridOptions};
use gmport::{markowitz_solve, EgmProblem, EvarMethod, EvarOptions, EvarProblem, FeasibleSet, GmModel, SolveOptions};
use nalgebra::DVector;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn egm(model: &GmModel, gamma: f64, set: FeasibleSet) -> gmport::SolveReport {
    EgmProblem::new(model.clone(), gamma, set).unwrap().solve(&SolveOptions::default())
}

fn markowitz(model: &GmModel, gamma: f64, set: &FeasibleSet) -> gmport::SolveReport {
    let (mu, cov) = model.mixture_moments();
    markowitz_solve(&mu, &cov, gamma, set, &SolveOptions::default()).unwrap()
}

fn golden_values() -> Outcome {
    let start = Instant::now();
    let model = paper_model(0.05);
    let we = egm(&model, 1.0, FeasibleSet::budget(2)).weights;
    let wm = markowitz(&model, 1.0, &FeasibleSet::budget(2)).weights;
    let elapsed = start.elapsed().as_secs_f64();
    let de = max_abs_diff(&we, &[1.47, -0.47]);
    let dm = max_abs_diff(&wm, &[4.74, -3.74]);
    check(
        de <= 0.005 && dm <= 0.005 && elapsed < 1.0,
        format!("w^E={we:.4?} (off {de:.1e}), w^M={wm:.4?} (off {dm:.1e}), {elapsed:.3}s"),
    )
}

fn analytic_sweep() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 1..=9 {
        let pi = i as f64 / 10.0;
        let model = paper_model(pi);
        for gamma in [0.5, 1.0, 2.0] {
            let me = (1.0 - 2.0 * pi) / (4.0 * gamma * pi * (1.0 - pi));
            let ee = (1.0 / pi - 1.0).ln() / (2.0 * gamma);
            let wm = markowitz(&model, gamma, &FeasibleSet::budget(2)).weights;
            let we = egm(&model, gamma, FeasibleSet::budget(2)).weights;
            worst = worst.max((wm[0] - me).abs()).max((we[0] - ee).abs());
        }
    }
    check(worst <= 1e-6, format!("27 cases, worst deviation {worst:.1e}"))
}

fn monte_carlo_var() -> Outcome {
    let model = paper_model(0.05);
    let wm = markowitz(&model, 1.0, &FeasibleSet::budget(2)).weights_vector();
    let we = egm(&model, 1.0, FeasibleSet::budget(2)).weights_vector();
    let mut ok = true;
    let mut lines = Vec::new();
    for (label, w, printed, seed) in [("Markowitz", &wm, 4.74, 31), ("EGM", &we, 1.47, 32)] {
        let est = mc_quantile(&model, w, 0.05, 1_000_000, seed).unwrap();
        // the 5% quantile sits on the loss atom: VaR equals the weight on asset 1
        let exact = w[0];
        ok &= est.covers(exact) && (exact - printed).abs() <= 0.005;
        lines.push(format!("{label}: MC {:.4} ± {:.4}, model {exact:.4}, printed {printed}", est.value, est.std_error));
    }
    check(ok, lines.join("; "))
}

fn single_component() -> Outcome {
    let mut r = rng(41);
    let (mut egm_gap, mut delta_gap, mut w_gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for case in 0..20 {
        let n = 2 + case % 2;
        let model = random_model(&mut r, n, 1, 0.2, 0.3);
        let set = FeasibleSet::budget(n);
        let gamma = uniform(&mut r, 0.5, 5.0);
        let we = egm(&model, gamma, set.clone()).weights;
        let wm = markowitz_solve(&model.means()[0], &model.covariances()[0], gamma, &set, &SolveOptions::default())
            .unwrap()
            .weights;
        egm_gap = egm_gap.max(max_abs_diff(&we, &wm));

        let alpha = [0.05, 0.1][case % 2];
        let rep = EvarProblem::new(model.clone(), alpha, set.clone())
            .unwrap()
            .solve(EvarMethod::Alternating, &EvarOptions::default())
            .unwrap();
        let w = rep.weights_vector();
        let sigma = &model.covariances()[0];
        let q = (sigma * &w).dot(&w);
        delta_gap = delta_gap.max((rep.delta - (q / (-2.0 * alpha.ln())).sqrt()).abs());

        let mu = &model.means()[0];
        let c = (-2.0 * alpha.ln()).sqrt();
        let reference: Vec<f64> = if n == 2 {
            let f = |a: f64| {
                let x = DVector::from_vec(vec![a, 1.0 - a]);
                -mu.dot(&x) + c * (sigma * &x).dot(&x).sqrt()
            };
            let (a, _) = golden_min(f, -20.0, 20.0, 1e-12);
            vec![a, 1.0 - a]
        } else {
            gmport::evar::evar_gaussian_reduced(mu, sigma, alpha, &set, &EvarOptions::default()).unwrap().weights
        };
        w_gap = w_gap.max(max_abs_diff(&rep.weights, &reference));
    }
    check(
        egm_gap <= 1e-6 && delta_gap <= 1e-6 && w_gap <= 1e-5,
        format!("20 models: EGM vs Markowitz {egm_gap:.1e}, δ {delta_gap:.1e}, EVaR weights {w_gap:.1e}"),
    )
}

/// Box-constrained, so both minimizers stay bounded as `γ → 0`.
fn low_gamma_gaps() -> Vec<f64> {
    let mut r = rng(52);
    let model = random_model(&mut r, 3, 3, 0.1, 0.3);
    let set = FeasibleSet::with_bounds(3, Some(vec![-10.0; 3]), Some(vec![10.0; 3])).unwrap();
    [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&g| {
            let we = egm(&model, g, set.clone()).weights;
            let wm = markowitz(&model, g, &set).weights;
            max_abs_diff(&we, &wm)
        })
        .collect()
}

fn identities_and_limits() -> Outcome {
    let mut r = rng(51);
    let mut identity: f64 = 0.0;
    let mut sandwich: f64 = 0.0;
    for _ in 0..100 {
        let n = 2 + r_usize(&mut r, 3);
        let k = 1 + r_usize(&mut r, 4);
        let model = random_model(&mut r, n, k, 0.5, 0.5);
        let w = random_vector(&mut r, n, 1.5);
        let t = uniform(&mut r, -3.0, 3.0);
        identity = identity.max((model.cgf(&w, t).unwrap() - model.cgf(&(&w * t), 1.0).unwrap()).abs());

        let problem = EgmProblem::new(model.clone(), uniform(&mut r, 0.1, 10.0), FeasibleSet::budget(n)).unwrap();
        let lower = problem.soft_max_lower_bound(&w).unwrap();
        let value = problem.objective(&w).unwrap();
        let excess = (lower - value).max(value - lower - (k as f64).ln()).max(0.0);
        sandwich = sandwich.max(excess);
    }
    let gaps = low_gamma_gaps();
    let shrinking = gaps.windows(2).all(|p| p[1] <= p[0]) && gaps[2] < gaps[0];
    check(
        identity <= 1e-10 && sandwich <= 1e-12 && shrinking,
        format!("identity {identity:.1e}, sandwich excess {sandwich:.1e}, low-γ gaps {gaps:?}"),
    )
}

fn r_usize(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> usize {
    (uniform(r, 0.0, n as f64) as usize).min(n - 1)
}

fn derivatives() -> Outcome {
    let mut r = rng(61);
    let (mut worst_rel, mut worst_eig): (f64, f64) = (0.0, f64::INFINITY);
    for _ in 0..50 {
        let n = 2 + r_usize(&mut r, 3);
        let k = 1 + r_usize(&mut r, 3);
        let model = random_model(&mut r, n, k, 0.5, 0.5);
        let gamma = uniform(&mut r, 0.2, 3.0);
        let problem = EgmProblem::new(model, gamma, FeasibleSet::budget(n)).unwrap();
        let w = random_vector(&mut r, n, 1.0);
        let g = problem.gradient(&w).unwrap();
        let fd = finite_difference_gradient(|x| problem.objective(x).unwrap(), &w, 1e-5);
        let rel = (&g - &fd).amax() / g.amax().max(1.0);
        worst_rel = worst_rel.max(rel);
        worst_eig = worst_eig.min(min_eigenvalue(&problem.hessian(&w).unwrap()));
    }
    check(
        worst_rel < 1e-5 && worst_eig >= -1e-8,
        format!("50 triples: gradient rel. err {worst_rel:.1e}, min Hessian eigenvalue {worst_eig:.1e}"),
    )
}

fn graphform_equivalence() -> Outcome {
    let mut lines = Vec::new();
    let mut total = 0;
    for (i, case) in rule_cases().iter().enumerate() {
        let tally = probe_case(case, 1000, 700 + i as u64);
        total += tally.disagree;
        lines.push(format!("{} {}/{}", case.name, tally.agree, tally.agree + tally.disagree));
    }
    check(total == 0, format!("{total} disagreements ({})", lines.join(", ")))
}

/// Two-asset instances for the EVaR criteria: five scenario models and five
/// full-covariance mixtures, each with its tail level.
fn evar_instances() -> Vec<(GmModel, f64)> {
    let mut r = rng(81);
    let mut out = Vec::new();
    for _ in 0..5 {
        let s = 8;
        let weights = random_weights(&mut r, s);
        let values = (0..s)
            .map(|_| v(&[uniform(&mut r, -0.3, 0.4), uniform(&mut r, -0.1, 0.15)]))
            .collect();
        out.push((GmModel::finite_values(weights, values).unwrap(), 0.3));
    }
    for i in 0..5 {
        let k = 1 + i % 3;
        out.push((random_model(&mut r, 2, k, 0.15, 0.3), 0.05));
    }
    out
}

struct EvarCase {
    problem: EvarProblem,
    alternating: gmport::EvarReport,
}

fn solve_instances() -> Vec<EvarCase> {
    evar_instances()
        .into_iter()
        .map(|(model, alpha)| {
            let problem = EvarProblem::new(model, alpha, FeasibleSet::budget(2)).unwrap();
            let alternating = problem.solve(EvarMethod::Alternating, &EvarOptions::default()).unwrap();
            EvarCase { problem, alternating }
        })
        .collect()
}

fn method_agreement(cases: &[EvarCase]) -> Outcome {
    let grid_opts = GridOptions {
        span: (-4.0, 4.0),
        delta_range: (1e-3, 1e2),
        delta_steps: 2000,
        ..GridOptions::default()
    };
    let mut spread: f64 = 0.0;
    let mut approx_ok = true;
    let mut bound_ok = true;
    let mut margin = f64::INFINITY;
    let verbose = std::env::var_os("ACCEPTANCE_VERBOSE").is_some();
    for (i, case) in cases.iter().enumerate() {
        let opts = EvarOptions::default();
        let approx = case.problem.solve(EvarMethod::Approx, &opts).unwrap();
        let polished = case.problem.solve(EvarMethod::Joint, &opts).unwrap();
        let conic = case.problem.solve(EvarMethod::Conic, &opts).unwrap();
        let grid = grid_search_evar(&case.problem, &grid_opts).unwrap();
        let edge = grid.weights[0].abs() >= grid_opts.span.1 - 1e-9;
        let values = [case.alternating.objective, polished.objective, conic.objective, grid.objective];
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        spread = spread.max(if edge { f64::INFINITY } else { hi - lo });
        let k = case.problem.model().k() as f64;
        let approx_gap = approx.objective - case.alternating.objective;
        approx_ok &= approx_gap >= -1e-9 && approx_gap <= case.alternating.delta * k.ln() + 1e-9;
        if verbose {
            eprintln!("  instance {i}: alternating/polished/conic/grid {values:?}, approx gap {approx_gap:.2e}");
        }

        let w = case.alternating.weights_vector();
        let var = mc_quantile(case.problem.model(), &w, case.problem.alpha(), 1_000_000, 900 + i as u64).unwrap();
        let evar = case.alternating.objective;
        bound_ok &= evar >= var.value - 3.0 * var.std_error;
        margin = margin.min(evar - var.value);
    }
    check(
        spread <= 1e-3 && approx_ok && bound_ok,
        format!(
            "{} instances: max objective spread {spread:.1e}, raw approx within δ·log k: {approx_ok}, min EVaR − VaR {margin:.3}",
            cases.len()
        ),
    )
}

fn optimality_transfer(cases: &[EvarCase]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    let mut r = rng(91);
    let mut instances: Vec<(EvarProblem, gmport::EvarReport)> =
        cases.iter().map(|c| (c.problem.clone(), c.alternating.clone())).collect();
    for case in 0..4 {
        let n = 2 + case % 2;
        let model = random_model(&mut r, n, 1 + case % 3, 0.15, 0.3);
        let problem = EvarProblem::new(model, 0.05, FeasibleSet::budget(n)).unwrap();
        let rep = problem.solve(EvarMethod::Alternating, &EvarOptions::default()).unwrap();
        instances.push((problem, rep));
    }
    for (problem, rep) in &instances {
        if rep.diagnostics.degenerate {
            skipped += 1;
            continue;
        }
        let again = egm(problem.model(), 1.0 / rep.delta, problem.feasible().clone()).weights;
        worst = worst.max(max_abs_diff(&again, &rep.weights));
        used += 1;
    }
    check(
        worst <= 1e-5 && skipped == 0,
        format!("{used} instances ({skipped} degenerate): max weight change {worst:.1e}"),
    )
}

fn main() {
    let start = Instant::now();
    let mut failures = 0;
    let mut report = |id: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id} [{tag}] {name}: {detail}");
    };
    report(1, "golden two-asset portfolios", golden_values());
    report(2, "closed-form sweep", analytic_sweep());
    report(3, "Monte Carlo VaR", monte_carlo_var());
    report(4, "single-component reductions", single_component());
    report(5, "identities and limits", identities_and_limits());
    report(6, "derivatives", derivatives());
    report(7, "graph-form equivalence", graphform_equivalence());
    let cases = solve_instances();
    report(8, "EVaR method agreement", method_agreement(&cases));
    report(9, "EVaR/EGM optimality transfer", optimality_transfer(&cases));
    println!("acceptance: {} of 9 passed in {:.1}s", 9 - failures, start.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
