//! Projected Newton method for smooth convex objectives over a
//! budget-plus-box polytope.
//!
//! Each iteration fixes the bounds that are active and pushed against by the
//! gradient, takes a Newton step on the remaining coordinates subject to the
//! budget row, and backtracks along the projected arc with an Armijo test.
//! When the Newton system is singular or yields no descent the iteration falls
//! back to a projected gradient step.

use nalgebra::{DMatrix, DVector};

use crate::feasible::project_budget_box;

/// A twice-differentiable convex function. `value` may return `+inf` outside
/// the domain; the polytope is expected to keep iterates inside it.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `{x : Σ_{j < budget_len} x_j = 1, lower ≤ x ≤ upper}`. With
/// `budget_len == 0` there is no budget row.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub budget_len: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Polytope {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        let nb = self.budget_len;
        let mut out = Vec::with_capacity(y.len());
        if nb > 0 {
            out.extend(project_budget_box(&y.as_slice()[..nb], &self.lower[..nb], &self.upper[..nb]));
        }
        for j in nb..y.len() {
            out.push(y[j].clamp(self.lower[j], self.upper[j]));
        }
        DVector::from_vec(out)
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Projected-gradient norm at which the iterate is accepted.
    pub tol: f64,
    /// Objective decrease after a full Newton step below which the iterate is accepted.
    pub stall_tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    pub shrink: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-8,
            stall_tol: 1e-12,
            max_iter: 1000,
            armijo: 1e-4,
            shrink: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    Stalled,
    LineSearchFailed,
    MaxIterations,
    NonFinite,
    /// Iterates left every sensible scale; the objective is likely unbounded below.
    Diverged,
}

/// Largest coordinate magnitude accepted before declaring divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖x - P(x - ∇f(x))‖₂` at the returned point.
    pub kkt_residual: f64,
    pub stop: StopReason,
    /// Objective at every accepted iterate, starting point included.
    pub history: Vec<f64>,
}

fn projected_residual(poly: &Polytope, x: &DVector<f64>, g: &DVector<f64>) -> (f64, DVector<f64>) {
    let z = poly.project(&(x - g));
    ((x - &z).norm(), z)
}

/// Newton direction on the free coordinates; zero on the fixed ones.
fn newton_direction(
    poly: &Polytope,
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    free: &[usize],
) -> Option<DVector<f64>> {
    let n = g.len();
    let m = free.len();
    if m == 0 {
        return None;
    }
    let budget_rows: Vec<usize> = (0..m).filter(|&a| free[a] < poly.budget_len).collect();
    let with_budget = poly.budget_len > 0 && !budget_rows.is_empty();
    let size = m + usize::from(with_budget);
    let scale = free.iter().map(|&j| h[(j, j)].abs()).fold(0.0, f64::max).max(1.0);
    let mut reg = 1e-14 * scale;
    for _ in 0..8 {
        let mut kkt = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        for a in 0..m {
            for b in 0..m {
                kkt[(a, b)] = h[(free[a], free[b])];
            }
            kkt[(a, a)] += reg;
            rhs[a] = -g[free[a]];
        }
        if with_budget {
            for &a in &budget_rows {
                kkt[(a, m)] = 1.0;
                kkt[(m, a)] = 1.0;
            }
        }
        if let Some(sol) = kkt.lu().solve(&rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                let mut d = DVector::zeros(n);
                for a in 0..m {
                    d[free[a]] = sol[a];
                }
                if g.dot(&d) < 0.0 {
                    return Some(d);
                }
            }
        }
        reg *= 1e3;
    }
    None
}

pub fn projected_newton<F: SmoothObjective + ?Sized>(
    f: &F,
    poly: &Polytope,
    x0: &DVector<f64>,
    opts: &NewtonOptions,
) -> NewtonOutcome {
    let mut x = poly.project(x0);
    let mut fx = f.value(&x);
    let mut history = vec![fx];
    let bound_eps = |v: f64| 1e-12 * (1.0 + v.abs());

    let finish = |x: DVector<f64>, fx: f64, it: usize, stop: StopReason, history: Vec<f64>| {
        let g = f.gradient(&x);
        let (res, _) = projected_residual(poly, &x, &g);
        let converged = match stop {
            StopReason::GradientTolerance | StopReason::Stalled => true,
            // no representable descent left; accept if the residual is tiny anyway
            StopReason::LineSearchFailed => res < opts.tol.sqrt(),
            _ => false,
        };
        NewtonOutcome {
            x,
            value: fx,
            iterations: it,
            converged,
            kkt_residual: res,
            stop,
            history,
        }
    };

    if !fx.is_finite() {
        return finish(x, fx, 0, StopReason::NonFinite, history);
    }

    for it in 0..opts.max_iter {
        let g = f.gradient(&x);
        if g.iter().any(|v| !v.is_finite()) {
            return finish(x, fx, it, StopReason::NonFinite, history);
        }
        if x.amax() > DIVERGENCE_LIMIT {
            return finish(x, fx, it, StopReason::Diverged, history);
        }
        let (res, z) = projected_residual(poly, &x, &g);
        if res < opts.tol {
            return finish(x, fx, it, StopReason::GradientTolerance, history);
        }

        let free: Vec<usize> = (0..x.len())
            .filter(|&j| {
                let at_lo = x[j] <= poly.lower[j] + bound_eps(poly.lower[j]) && z[j] <= poly.lower[j];
                let at_hi = x[j] >= poly.upper[j] - bound_eps(poly.upper[j]) && z[j] >= poly.upper[j];
                !(at_lo || at_hi)
            })
            .collect();

        let h = f.hessian(&x);
        let mut accepted = None;
        if let Some(d) = newton_direction(poly, &g, &h, &free) {
            accepted = line_search(f, poly, &x, fx, &g, |s| &x + &d * s, opts).map(|(xn, fxn, s)| (xn, fxn, s == 1.0));
        }
        if accepted.is_none() {
            // gradient path, initial step from the curvature scale
            let scale = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let s0 = if scale > 0.0 { 1.0 / scale } else { 1.0 };
            accepted = line_search(f, poly, &x, fx, &g, |s| &x - &g * (s * s0), opts).map(|(xn, fxn, _)| (xn, fxn, false));
        }
        let Some((xn, fxn, full_newton)) = accepted else {
            return finish(x, fx, it, StopReason::LineSearchFailed, history);
        };
        let decrease = fx - fxn;
        x = xn;
        fx = fxn;
        history.push(fx);
        if full_newton && decrease < opts.stall_tol * fx.abs().max(1.0) {
            return finish(x, fx, it + 1, StopReason::Stalled, history);
        }
    }
    finish(x, fx, opts.max_iter, StopReason::MaxIterations, history)
}

/// Backtracking along `P(path(s))`; returns the point, its value and the step.
fn line_search<F: SmoothObjective + ?Sized>(
    f: &F,
    poly: &Polytope,
    x: &DVector<f64>,
    fx: f64,
    g: &DVector<f64>,
    path: impl Fn(f64) -> DVector<f64>,
    opts: &NewtonOptions,
) -> Option<(DVector<f64>, f64, f64)> {
    let mut s = 1.0;
    while s > 1e-20 {
        let xn = poly.project(&path(s));
        let step = &xn - x;
        if step.amax() <= f64::EPSILON * (1.0 + x.amax()) {
            return None;
        }
        let fxn = f.value(&xn);
        if fxn.is_finite() && fxn <= fx + opts.armijo * g.dot(&step) {
            return Some((xn, fxn, s));
        }
        s *= opts.shrink;
    }
    None
}
