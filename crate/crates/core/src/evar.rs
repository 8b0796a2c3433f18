//! Minimum entropic value at risk portfolios.
//!
//! With `δ = 1/λ` the EVaR objective becomes the perspective of the CGF,
//!
//! ```text
//! P(w, δ) = δ K(w/δ, -1) - δ log α,
//! ```
//!
//! which is jointly convex in `(w, δ)`. Three routes minimize it here:
//! alternating between an EGM solve in `w` and a scalar search in `δ`; a
//! smoothed version of the soft-max lower bound; and, for a single Gaussian
//! component, the reduced standard-deviation-penalized form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::egm::{polytope_for, vertex_check, EgmProblem, SolveOptions};
use crate::error::{GmError, Result};
use crate::feasible::FeasibleSet;
use crate::graphform::{self, ClarabelAdapter};
use crate::lse::{log_sum_exp, softmax};
use crate::model::{ComponentProjection, GmModel};
use crate::solver::{projected_newton, NewtonOptions, Polytope, SmoothObjective};

#[derive(Debug, Clone)]
pub struct EvarProblem {
    model: GmModel,
    alpha: f64,
    feasible: FeasibleSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvarMethod {
    Alternating,
    Approx,
    /// Exported cone program solved through the Clarabel adapter.
    Conic,
    /// Joint projected Newton on the exact perspective objective.
    Joint,
    Gaussian,
}

impl std::str::FromStr for EvarMethod {
    type Err = GmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alternating" => Ok(EvarMethod::Alternating),
            "approx" => Ok(EvarMethod::Approx),
            "conic" => Ok(EvarMethod::Conic),
            "joint" => Ok(EvarMethod::Joint),
            "gaussian" => Ok(EvarMethod::Gaussian),
            other => Err(GmError::param(format!("unknown EVaR method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvarOptions {
    pub newton: NewtonOptions,
    pub max_outer: usize,
    /// Alternating stops once an outer sweep lowers the objective by less than this.
    pub outer_tol: f64,
    /// Lower clamp on `δ`; the optimum sits here when the minimum-EVaR portfolio is riskless.
    pub delta_min: f64,
    pub delta_max: f64,
    /// Temperature of the smoothed max in the approximate problem.
    pub tau: f64,
    /// Finish the alternating route with a joint Newton solve in `(w, δ)`.
    pub polish: bool,
}

impl Default for EvarOptions {
    fn default() -> Self {
        EvarOptions {
            newton: NewtonOptions::default(),
            max_outer: 100,
            outer_tol: 1e-10,
            delta_min: 1e-8,
            delta_max: 1e8,
            tau: 1e-4,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvarDiagnostics {
    pub stop_reason: String,
    /// `δ` is at `delta_min` (riskless optimum) or the variance vanished.
    pub degenerate: bool,
    pub vertex_check: Option<bool>,
    /// Objective of the problem the method actually minimized (smoothed max
    /// for `approx`), when it differs from `evar_value`.
    pub surrogate_objective: Option<f64>,
    pub outer_iterations: usize,
    /// The approximate problem used the soft-max upper bound because the
    /// lower-bound surrogate is unbounded below.
    #[serde(default)]
    pub upper_bound_surrogate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvarReport {
    pub weights: Vec<f64>,
    /// Equals `evar_value`.
    pub objective: f64,
    /// `log π_i - μ_iᵀw/δ + wᵀΣ_iw/(2δ²)`: the EGM terms at `γ = 1/δ`.
    pub per_component: Vec<f64>,
    pub delta: f64,
    /// Implied risk aversion `1/δ`.
    pub lambda: f64,
    pub alpha: f64,
    /// `δ K(w/δ, -1) - δ log α` at the reported `(w, δ)`.
    pub evar_value: f64,
    pub method: EvarMethod,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub diagnostics: EvarDiagnostics,
}

impl EvarReport {
    pub fn weights_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }
}

impl EvarProblem {
    pub fn new(model: GmModel, alpha: f64, feasible: FeasibleSet) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(GmError::param(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if feasible.n() != model.n() {
            return Err(GmError::dim(format!(
                "feasible set has {} assets, model has {}",
                feasible.n(),
                model.n()
            )));
        }
        Ok(EvarProblem { model, alpha, feasible })
    }

    pub fn model(&self) -> &GmModel {
        &self.model
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn feasible(&self) -> &FeasibleSet {
        &self.feasible
    }

    /// `δ K(w/δ, -1) - δ log α`, `+inf` for `δ ≤ 0`.
    pub fn objective(&self, w: &DVector<f64>, delta: f64) -> Result<f64> {
        let proj = self.model.project(w)?;
        Ok(self.objective_projected(&proj, delta))
    }

    fn objective_projected(&self, proj: &ComponentProjection, delta: f64) -> f64 {
        if !(delta > 0.0) {
            return f64::INFINITY;
        }
        // K(w/δ, -1) = K(w, -1/δ)
        let terms = proj.cgf_terms(self.model.weights(), -1.0 / delta);
        delta * (log_sum_exp(&terms) - self.alpha.ln())
    }

    /// `(K(w, -λ) - log α)/λ`, the form before the change of variable.
    pub fn objective_lambda(&self, w: &DVector<f64>, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) {
            return Ok(f64::INFINITY);
        }
        Ok((self.model.cgf(w, -lambda)? - self.alpha.ln()) / lambda)
    }

    /// `EVaR_α(wᵀr)`: the objective minimized over `δ` for fixed `w`.
    /// Returns `(value, δ*)`.
    pub fn evar_value(&self, w: &DVector<f64>) -> Result<(f64, f64)> {
        self.evar_value_from(w, None, &EvarOptions::default())
    }

    fn evar_value_from(&self, w: &DVector<f64>, start: Option<f64>, opts: &EvarOptions) -> Result<(f64, f64)> {
        let proj = self.model.project(w)?;
        let start = start.unwrap_or_else(|| self.initial_delta(w, opts));
        let (delta, value) = minimize_delta(&proj, self, start, opts);
        Ok((value, delta))
    }

    /// Gaussian closed form `(wᵀΣw / (-2 log α))^{1/2}` with the mixture covariance.
    fn initial_delta(&self, w: &DVector<f64>, opts: &EvarOptions) -> f64 {
        let (_, cov) = self.model.mixture_moments();
        let q = crate::linalg::quad_form(&cov, w);
        let d = (q / (-2.0 * self.alpha.ln())).sqrt();
        if d.is_finite() && d > 0.0 {
            d.clamp(opts.delta_min, opts.delta_max)
        } else {
            1.0f64.clamp(opts.delta_min, opts.delta_max)
        }
    }

    fn egm_at(&self, delta: f64) -> Result<EgmProblem> {
        EgmProblem::new(self.model.clone(), 1.0 / delta, self.feasible.clone())
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        w: DVector<f64>,
        delta: f64,
        method: EvarMethod,
        iterations: usize,
        converged: bool,
        stop_reason: String,
        surrogate_objective: Option<f64>,
        outer_iterations: usize,
        opts: &EvarOptions,
    ) -> EvarReport {
        let proj = self.model.project(&w).expect("dimension checked at construction");
        let value = self.objective_projected(&proj, delta);
        let per_component = proj.cgf_terms(self.model.weights(), -1.0 / delta);
        let smooth = JointEvar { problem: self, n: w.len() };
        let x = w.clone().insert_row(w.len(), delta);
        let g = smooth.gradient(&x);
        let poly = joint_polytope(&self.feasible, opts);
        let kkt_residual = (&x - poly.project(&(&x - &g))).norm();
        let vcheck = vertex_check(&self.feasible, value, |v| {
            self.evar_value_from(v, None, opts).map(|r| r.0).unwrap_or(f64::INFINITY)
        });
        EvarReport {
            weights: w.iter().copied().collect(),
            objective: value,
            per_component,
            delta,
            lambda: 1.0 / delta,
            alpha: self.alpha,
            evar_value: value,
            method,
            iterations,
            converged,
            kkt_residual,
            diagnostics: EvarDiagnostics {
                stop_reason,
                degenerate: delta <= opts.delta_min * (1.0 + 1e-9),
                vertex_check: vcheck,
                surrogate_objective,
                outer_iterations,
                upper_bound_surrogate: false,
            },
        }
    }

    /// Alternate an EGM solve at `γ = 1/δ` with a scalar search over `δ`,
    /// starting from the approximate problem's solution.
    pub fn solve_alternating(&self, opts: &EvarOptions) -> Result<EvarReport> {
        let start = self.solve_approx(opts)?;
        let mut w = start.weights_vector();
        let mut delta = start.delta;
        let mut value = self.objective(&w, delta)?;
        let mut iterations = start.iterations;
        let mut converged = false;
        let mut outer = 0;
        let mut stop = String::from("MaxOuter");

        while outer < opts.max_outer {
            outer += 1;
            let (_, d) = self.evar_value_from(&w, Some(delta), opts)?;
            let egm = self.egm_at(d)?;
            let sol = egm.solve(&SolveOptions {
                newton: opts.newton.clone(),
                warm_start: Some(w.clone()),
            });
            iterations += sol.iterations;
            let w_new = sol.weights_vector();
            let v_new = self.objective(&w_new, d)?;
            if !v_new.is_finite() {
                stop = format!("EgmStep:{}", sol.diagnostics.stop_reason);
                break;
            }
            let decrease = value - v_new;
            if v_new <= value {
                w = w_new;
                delta = d;
                value = v_new;
            }
            if decrease < opts.outer_tol {
                converged = true;
                stop = "ObjectiveStall".into();
                break;
            }
        }

        if opts.polish && converged {
            let polished = self.joint_newton(&w, delta, opts);
            iterations += polished.iterations;
            let (wp, dp) = split(&polished.x);
            if polished.converged && polished.value <= value + 1e-14 * value.abs().max(1.0) {
                w = wp;
                delta = dp;
                stop = format!("ObjectiveStall+Polish:{:?}", polished.stop);
            }
        }
        Ok(self.report(w, delta, EvarMethod::Alternating, iterations, converged, stop, None, outer, opts))
    }

    fn joint_newton(&self, w: &DVector<f64>, delta: f64, opts: &EvarOptions) -> crate::solver::NewtonOutcome {
        let n = w.len();
        let mut x0 = w.clone().insert_row(n, delta);
        x0[n] = delta;
        let f = JointEvar { problem: self, n };
        projected_newton(&f, &joint_polytope(&self.feasible, opts), &x0, &opts.newton)
    }

    /// Minimize the smoothed soft-max lower bound
    /// `max_i(δ log(π_i/α) - μ_iᵀw + wᵀΣ_iw/(2δ))` jointly in `(w, δ)`, then
    /// re-optimize `δ` for the exact objective at the resulting `w`.
    ///
    /// When every `π_i < α` each term decreases without bound as `δ` grows,
    /// and the same happens whenever the solve runs into `delta_max`. The
    /// upper bound, which adds `δ log k` to every term, is used instead.
    pub fn solve_approx(&self, opts: &EvarOptions) -> Result<EvarReport> {
        if !(opts.tau > 0.0) {
            return Err(GmError::param("smoothing temperature must be positive"));
        }
        let n = self.model.n();
        let w0 = self.feasible.initial_point();
        let d0 = self.initial_delta(&w0, opts);
        let mut x0 = w0.clone().insert_row(n, d0);
        x0[n] = d0;
        let run = |shift: f64| {
            let f = ApproxEvar {
                problem: self,
                n,
                tau: opts.tau,
                shift,
            };
            projected_newton(&f, &joint_polytope(&self.feasible, opts), &x0, &opts.newton)
        };
        let lower_unbounded = self.model.weights().iter().all(|&p| p < self.alpha);
        let mut upper = lower_unbounded;
        let mut out = run(if upper { (self.model.k() as f64).ln() } else { 0.0 });
        if !upper && (out.x[n] >= 0.5 * opts.delta_max || !out.value.is_finite()) {
            upper = true;
            out = run((self.model.k() as f64).ln());
        }
        let (w, d_approx) = split(&out.x);
        let (_, delta) = self.evar_value_from(&w, Some(d_approx), opts)?;
        let mut rep = self.report(
            w,
            delta,
            EvarMethod::Approx,
            out.iterations,
            out.converged,
            format!("{:?}", out.stop),
            Some(out.value),
            0,
            opts,
        );
        rep.diagnostics.upper_bound_surrogate = upper;
        Ok(rep)
    }

    /// Joint Newton solve of the exact perspective objective from the
    /// approximate solution.
    pub fn solve_joint(&self, opts: &EvarOptions) -> Result<EvarReport> {
        let start = self.solve_approx(opts)?;
        let out = self.joint_newton(&start.weights_vector(), start.delta, opts);
        let (w, delta) = split(&out.x);
        Ok(self.report(
            w,
            delta,
            EvarMethod::Joint,
            start.iterations + out.iterations,
            out.converged,
            format!("{:?}", out.stop),
            None,
            0,
            opts,
        ))
    }

    /// Solve the exported cone program with Clarabel. The reported objective
    /// is the exact perspective objective at the returned `(w, δ)`.
    pub fn solve_conic(&self, opts: &EvarOptions) -> Result<EvarReport> {
        let sol = graphform::solve_exported_evar(&self.model, self.alpha, &self.feasible, &ClarabelAdapter::default())?;
        let w = self.feasible.project(&sol.weights);
        let delta = sol.delta.clamp(opts.delta_min, opts.delta_max);
        Ok(self.report(
            w,
            delta,
            EvarMethod::Conic,
            0,
            sol.status.is_solved(),
            format!("{:?}", sol.status),
            Some(sol.objective),
            0,
            opts,
        ))
    }

    pub fn solve(&self, method: EvarMethod, opts: &EvarOptions) -> Result<EvarReport> {
        match method {
            EvarMethod::Alternating => self.solve_alternating(opts),
            EvarMethod::Approx => self.solve_approx(opts),
            EvarMethod::Conic => self.solve_conic(opts),
            EvarMethod::Joint => self.solve_joint(opts),
            EvarMethod::Gaussian => {
                if self.model.k() != 1 {
                    return Err(GmError::param("the Gaussian reduction needs a single-component model"));
                }
                evar_gaussian_reduced(
                    &self.model.means()[0],
                    &self.model.covariances()[0],
                    self.alpha,
                    &self.feasible,
                    opts,
                )
            }
        }
    }
}

fn split(x: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = x.len() - 1;
    (x.rows(0, n).into_owned(), x[n])
}

fn joint_polytope(set: &FeasibleSet, opts: &EvarOptions) -> Polytope {
    let mut p = polytope_for(set);
    p.lower.push(opts.delta_min);
    p.upper.push(opts.delta_max);
    p
}

/// Scalar minimization of `φ(δ) = δK(w/δ, -1) - δ log α`: bracket in `log δ`,
/// golden section, then safeguarded Newton on the analytic derivatives.
fn minimize_delta(proj: &ComponentProjection, problem: &EvarProblem, start: f64, opts: &EvarOptions) -> (f64, f64) {
    let (lo_lim, hi_lim) = (opts.delta_min.ln(), opts.delta_max.ln());
    let phi = |u: f64| problem.objective_projected(proj, u.exp());
    let u0 = start.clamp(opts.delta_min, opts.delta_max).ln();

    // bracket [a, c] around a point b with phi(b) ≤ phi(a), phi(c)
    let mut step = 1.0;
    let (mut a, mut b, mut c) = ((u0 - step).max(lo_lim), u0, (u0 + step).min(hi_lim));
    let (mut fa, mut fb, mut fc) = (phi(a), phi(b), phi(c));
    for _ in 0..200 {
        if fb <= fa && fb <= fc {
            break;
        }
        step *= 1.6;
        if fa < fb {
            if a <= lo_lim {
                return (opts.delta_min, phi(lo_lim));
            }
            c = b;
            fc = fb;
            b = a;
            fb = fa;
            a = (b - step).max(lo_lim);
            fa = phi(a);
        } else {
            if c >= hi_lim {
                return (opts.delta_max, phi(hi_lim));
            }
            a = b;
            fa = fb;
            b = c;
            fb = fc;
            c = (b + step).min(hi_lim);
            fc = phi(c);
        }
    }
    let _ = (fa, fc);

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut lo, mut hi) = (a, c);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (phi(x1), phi(x2));
    while hi - lo > 1e-9 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = phi(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = phi(x2);
        }
    }
    let (mut best_u, mut best) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if fb < best {
        best_u = b;
        best = fb;
    }

    // Newton polish in δ, kept inside the bracket
    let (d_lo, d_hi) = (a.exp(), c.exp());
    let mut delta = best_u.exp();
    for _ in 0..30 {
        let (d1, d2) = delta_derivatives(proj, problem, delta);
        if !(d2 > 0.0) || !d1.is_finite() {
            break;
        }
        let next = (delta - d1 / d2).clamp(d_lo, d_hi);
        let fnext = problem.objective_projected(proj, next);
        if !(fnext <= best) {
            break;
        }
        let moved = (next - delta).abs();
        delta = next;
        best = fnext;
        if moved <= 1e-15 * delta {
            break;
        }
    }
    (delta, best)
}

/// First and second derivative of `φ(δ)` for fixed `w`.
fn delta_derivatives(proj: &ComponentProjection, problem: &EvarProblem, delta: f64) -> (f64, f64) {
    let terms = proj.cgf_terms(problem.model.weights(), -1.0 / delta);
    let (p, k) = softmax(&terms);
    // b_i = g_i(x)ᵀx with x = w/δ, g_i = -μ_i + Σ_i x
    let b: Vec<f64> = proj
        .nus
        .iter()
        .zip(&proj.sigmas2)
        .map(|(nu, s2)| -nu / delta + s2 / (delta * delta))
        .collect();
    let mean_b: f64 = p.iter().zip(&b).map(|(pi, bi)| pi * bi).sum();
    let d1 = k - mean_b - problem.alpha.ln();
    let xhx: f64 = p
        .iter()
        .zip(b.iter().zip(&proj.sigmas2))
        .map(|(pi, (bi, s2))| pi * (s2 / (delta * delta) + bi * bi))
        .sum::<f64>()
        - mean_b * mean_b;
    (d1, xhx / delta)
}

/// `P(w, δ)` as a smooth function of the stacked vector `(w, δ)`.
struct JointEvar<'a> {
    problem: &'a EvarProblem,
    n: usize,
}

impl JointEvar<'_> {
    /// Softmax weights, per-component gradients at `x = w/δ`, and `K(x, -1)`.
    fn pieces(&self, v: &DVector<f64>) -> (Vec<f64>, Vec<DVector<f64>>, DVector<f64>, f64) {
        let (w, delta) = split(v);
        let x = &w / delta;
        let model = &self.problem.model;
        let mut terms = Vec::with_capacity(model.k());
        let mut grads = Vec::with_capacity(model.k());
        for ((p, mu), cov) in model.weights().iter().zip(model.means()).zip(model.covariances()) {
            let sx = cov * &x;
            terms.push(p.ln() - mu.dot(&x) + 0.5 * x.dot(&sx));
            grads.push(sx - mu);
        }
        let (p, k) = softmax(&terms);
        (p, grads, x, k)
    }
}

impl SmoothObjective for JointEvar<'_> {
    fn dim(&self) -> usize {
        self.n + 1
    }

    fn value(&self, v: &DVector<f64>) -> f64 {
        let (w, delta) = split(v);
        self.problem.objective(&w, delta).unwrap_or(f64::INFINITY)
    }

    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let (p, grads, x, k) = self.pieces(v);
        let mut g = DVector::zeros(self.n);
        for (pi, gi) in p.iter().zip(&grads) {
            g.axpy(*pi, gi, 1.0);
        }
        let d_delta = k - g.dot(&x) - self.problem.alpha.ln();
        let mut out = g.insert_row(self.n, 0.0);
        out[self.n] = d_delta;
        out
    }

    fn hessian(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let delta = v[self.n];
        let (p, grads, x, _) = self.pieces(v);
        let n = self.n;
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        for ((pi, gi), cov) in p.iter().zip(&grads).zip(self.problem.model.covariances()) {
            g.axpy(*pi, gi, 1.0);
            h += (cov + gi * gi.transpose()) * *pi;
        }
        h -= &g * g.transpose();
        let hx = &h * &x;
        let mut out = DMatrix::zeros(n + 1, n + 1);
        out.view_mut((0, 0), (n, n)).copy_from(&(&h / delta));
        for j in 0..n {
            out[(j, n)] = -hx[j] / delta;
            out[(n, j)] = -hx[j] / delta;
        }
        out[(n, n)] = x.dot(&hx) / delta;
        out
    }
}

/// `τ log Σ exp(h_i/τ)` with `h_i = δ (log(π_i/α) + shift) - μ_iᵀw + wᵀΣ_iw/(2δ)`.
/// `shift` is 0 for the soft-max lower bound and `log k` for the upper bound.
struct ApproxEvar<'a> {
    problem: &'a EvarProblem,
    n: usize,
    tau: f64,
    shift: f64,
}

impl ApproxEvar<'_> {
    #[allow(clippy::type_complexity)]
    fn pieces(&self, v: &DVector<f64>) -> (Vec<f64>, Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<f64>) {
        let (w, delta) = split(v);
        let model = &self.problem.model;
        let la = self.problem.alpha.ln();
        let mut h = Vec::with_capacity(model.k());
        let mut grads = Vec::with_capacity(model.k());
        let mut sws = Vec::with_capacity(model.k());
        let mut qs = Vec::with_capacity(model.k());
        for ((p, mu), cov) in model.weights().iter().zip(model.means()).zip(model.covariances()) {
            let sw = cov * &w;
            let q = w.dot(&sw);
            let c = p.ln() - la + self.shift;
            h.push(delta * c - mu.dot(&w) + q / (2.0 * delta));
            let gw = &sw / delta - mu;
            let mut g = gw.insert_row(self.n, 0.0);
            g[self.n] = c - q / (2.0 * delta * delta);
            grads.push(g);
            sws.push(sw);
            qs.push(q);
        }
        (h, grads, sws, qs)
    }
}

impl SmoothObjective for ApproxEvar<'_> {
    fn dim(&self) -> usize {
        self.n + 1
    }

    fn value(&self, v: &DVector<f64>) -> f64 {
        if !(v[self.n] > 0.0) {
            return f64::INFINITY;
        }
        let (h, ..) = self.pieces(v);
        let scaled: Vec<f64> = h.iter().map(|x| x / self.tau).collect();
        self.tau * log_sum_exp(&scaled)
    }

    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let (h, grads, ..) = self.pieces(v);
        let scaled: Vec<f64> = h.iter().map(|x| x / self.tau).collect();
        let (p, _) = softmax(&scaled);
        let mut g = DVector::zeros(self.n + 1);
        for (pi, gi) in p.iter().zip(&grads) {
            g.axpy(*pi, gi, 1.0);
        }
        g
    }

    fn hessian(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let delta = v[self.n];
        let n = self.n;
        let (h, grads, sws, qs) = self.pieces(v);
        let scaled: Vec<f64> = h.iter().map(|x| x / self.tau).collect();
        let (p, _) = softmax(&scaled);
        let mut g = DVector::zeros(n + 1);
        let mut out = DMatrix::zeros(n + 1, n + 1);
        for (i, cov) in self.problem.model.covariances().iter().enumerate() {
            let pi = p[i];
            if pi == 0.0 {
                continue;
            }
            g.axpy(pi, &grads[i], 1.0);
            // curvature of h_i
            let mut hi = DMatrix::zeros(n + 1, n + 1);
            hi.view_mut((0, 0), (n, n)).copy_from(&(cov / delta));
            for j in 0..n {
                hi[(j, n)] = -sws[i][j] / (delta * delta);
                hi[(n, j)] = -sws[i][j] / (delta * delta);
            }
            hi[(n, n)] = qs[i] / (delta * delta * delta);
            out += hi * pi + (&grads[i] * grads[i].transpose()) * (pi / self.tau);
        }
        out -= (&g * g.transpose()) / self.tau;
        (&out + out.transpose()) * 0.5
    }
}

/// `-μᵀw + c (wᵀΣw)^{1/2}` with `c = (-2 log α)^{1/2}`.
struct StdPenalized<'a> {
    mu: &'a DVector<f64>,
    sigma: &'a DMatrix<f64>,
    coef: f64,
}

impl SmoothObjective for StdPenalized<'_> {
    fn dim(&self) -> usize {
        self.mu.len()
    }
    fn value(&self, w: &DVector<f64>) -> f64 {
        -self.mu.dot(w) + self.coef * crate::linalg::quad_form(self.sigma, w).max(0.0).sqrt()
    }
    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let sw = self.sigma * w;
        let s = w.dot(&sw).max(0.0).sqrt();
        if s > 0.0 {
            sw * (self.coef / s) - self.mu
        } else {
            // 0 is a subgradient of the norm term at the kink
            -self.mu
        }
    }
    fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let sw = self.sigma * w;
        let s = w.dot(&sw).max(0.0).sqrt();
        if s > 0.0 {
            (self.sigma / s - (&sw * sw.transpose()) / (s * s * s)) * self.coef
        } else {
            DMatrix::zeros(w.len(), w.len())
        }
    }
}

/// Single-Gaussian EVaR: maximize `μᵀw - (-2 log α)^{1/2} (wᵀΣw)^{1/2}`, with
/// the implied `δ = (wᵀΣw / (-2 log α))^{1/2}`.
pub fn evar_gaussian_reduced(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    alpha: f64,
    feasible: &FeasibleSet,
    opts: &EvarOptions,
) -> Result<EvarReport> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n || feasible.n() != n {
        return Err(GmError::dim("mean, covariance and feasible set disagree in size"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GmError::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let sigma = crate::linalg::symmetrize(sigma);
    let coef = (-2.0 * alpha.ln()).sqrt();
    let f = StdPenalized {
        mu,
        sigma: &sigma,
        coef,
    };
    let out = projected_newton(&f, &polytope_for(feasible), &feasible.initial_point(), &opts.newton);
    let w = out.x.clone();
    let q = crate::linalg::quad_form(&sigma, &w).max(0.0);
    let delta = (q / (-2.0 * alpha.ln())).sqrt();
    let degenerate = q == 0.0;
    let per_component = if degenerate {
        vec![f64::NEG_INFINITY]
    } else {
        vec![-mu.dot(&w) / delta + q / (2.0 * delta * delta)]
    };
    Ok(EvarReport {
        weights: w.iter().copied().collect(),
        objective: out.value,
        per_component,
        delta,
        lambda: if degenerate { f64::INFINITY } else { 1.0 / delta },
        alpha,
        evar_value: out.value,
        method: EvarMethod::Gaussian,
        iterations: out.iterations,
        converged: out.converged,
        kkt_residual: out.kkt_residual,
        diagnostics: EvarDiagnostics {
            stop_reason: format!("{:?}", out.stop),
            degenerate,
            vertex_check: vertex_check(feasible, out.value, |v| f.value(v)),
            surrogate_objective: None,
            outer_iterations: 0,
            upper_bound_surrogate: false,
        },
    })
}
