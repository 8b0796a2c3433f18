//! Expected exponential utility under Gaussian-mixture returns.
//!
//! Maximizing `E[1 - exp(-γR)]` is the same as minimizing the cumulant
//! generating function `K(w, -γ)`, a log-sum-exp of convex quadratics:
//!
//! ```text
//! K(w, -γ) = log Σ_i exp(log π_i - γ μ_iᵀw + (γ²/2) wᵀΣ_i w)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};
use crate::feasible::FeasibleSet;
use crate::lse::{log_sum_exp, max, softmax};
use crate::model::GmModel;
use crate::solver::{projected_newton, NewtonOptions, NewtonOutcome, Polytope, SmoothObjective};

#[derive(Debug, Clone)]
pub struct EgmProblem {
    model: GmModel,
    gamma: f64,
    feasible: FeasibleSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitMode {
    /// `γ → ∞`: worst component's negative risk-adjusted return.
    High,
    /// `γ → 0`: Markowitz on the mixture mean and covariance.
    Low,
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub newton: NewtonOptions,
    pub warm_start: Option<DVector<f64>>,
}

/// Diagnostics attached to a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub stop_reason: String,
    /// Whether the solution beats every simple vertex of a bounded box.
    /// `None` when the set has no finite lower bounds.
    pub vertex_check: Option<bool>,
    /// `max_i(-μ_iᵀw + (γ/2)wᵀΣ_iw)` at the solution.
    pub limit_high: Option<f64>,
    /// `-μᵀw + (γ/2)wᵀΣw` at the solution (mixture moments).
    pub limit_low: Option<f64>,
    /// `K(w, -γ)/γ` at the solution, for comparison with the limits.
    pub scaled_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub weights: Vec<f64>,
    /// `K(w*, -γ)` for EGM; `-μᵀw* + (γ/2)w*ᵀΣw*` for Markowitz.
    pub objective: f64,
    /// `log π_i - γμ_iᵀw* + (γ²/2)w*ᵀΣ_iw*` per component.
    pub per_component: Vec<f64>,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub diagnostics: Diagnostics,
}

impl SolveReport {
    pub fn weights_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }
}

impl EgmProblem {
    pub fn new(model: GmModel, gamma: f64, feasible: FeasibleSet) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(GmError::param(format!("risk aversion must be positive, got {gamma}")));
        }
        if feasible.n() != model.n() {
            return Err(GmError::dim(format!(
                "feasible set has {} assets, model has {}",
                feasible.n(),
                model.n()
            )));
        }
        Ok(EgmProblem { model, gamma, feasible })
    }

    pub fn model(&self) -> &GmModel {
        &self.model
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn feasible(&self) -> &FeasibleSet {
        &self.feasible
    }

    /// Same model and constraints at a different risk aversion.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        EgmProblem::new(self.model.clone(), gamma, self.feasible.clone())
    }

    /// `log π_i - γμ_iᵀw + (γ²/2)wᵀΣ_iw`.
    pub fn per_component(&self, w: &DVector<f64>) -> Result<Vec<f64>> {
        self.model.cgf_terms(w, -self.gamma)
    }

    /// `K(w, -γ)`.
    pub fn objective(&self, w: &DVector<f64>) -> Result<f64> {
        Ok(log_sum_exp(&self.per_component(w)?))
    }

    /// `max_i` of the per-component terms; `objective` lies in
    /// `[lower, lower + log k]`.
    pub fn soft_max_lower_bound(&self, w: &DVector<f64>) -> Result<f64> {
        Ok(max(&self.per_component(w)?))
    }

    pub fn gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(w)?;
        Ok(self.derivatives(w, false).1)
    }

    pub fn hessian(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check(w)?;
        Ok(self.derivatives(w, true).2.expect("hessian requested"))
    }

    fn check(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.model.n() {
            return Err(GmError::dim(format!("weights have length {}, expected {}", w.len(), self.model.n())));
        }
        Ok(())
    }

    /// Value, gradient and optionally the Hessian in one pass.
    ///
    /// With softmax weights `p_i` and per-component gradients
    /// `g_i = -γμ_i + γ²Σ_iw`, the gradient is `g = Σ p_i g_i` and the Hessian
    /// is `Σ p_i (γ²Σ_i + g_i g_iᵀ) - g gᵀ`.
    fn derivatives(&self, w: &DVector<f64>, with_hessian: bool) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
        let gamma = self.gamma;
        let n = w.len();
        let comps: Vec<(f64, DVector<f64>)> = self
            .model
            .weights()
            .iter()
            .zip(self.model.means().iter().zip(self.model.covariances()))
            .map(|(p, (mu, cov))| {
                let sw = cov * w;
                let u = p.ln() - gamma * mu.dot(w) + 0.5 * gamma * gamma * w.dot(&sw);
                (u, mu * -gamma + sw * (gamma * gamma))
            })
            .collect();
        let terms: Vec<f64> = comps.iter().map(|c| c.0).collect();
        let (p, value) = softmax(&terms);
        let mut g = DVector::zeros(n);
        for (pi, (_, gi)) in p.iter().zip(&comps) {
            g.axpy(*pi, gi, 1.0);
        }
        let hess = with_hessian.then(|| {
            let mut h = DMatrix::zeros(n, n);
            for ((pi, (_, gi)), cov) in p.iter().zip(&comps).zip(self.model.covariances()) {
                h += (cov * (gamma * gamma) + gi * gi.transpose()) * *pi;
            }
            h -= &g * g.transpose();
            (&h + h.transpose()) * 0.5
        });
        (value, g, hess)
    }

    /// Limit-case approximation of `K(w, -γ)/γ`.
    pub fn limit_objective(&self, w: &DVector<f64>, mode: LimitMode) -> Result<f64> {
        let proj = self.model.project(w)?;
        let g = self.gamma;
        Ok(match mode {
            LimitMode::High => proj
                .nus
                .iter()
                .zip(&proj.sigmas2)
                .map(|(nu, s2)| -nu + 0.5 * g * s2)
                .fold(f64::NEG_INFINITY, f64::max),
            LimitMode::Low => {
                let (mu, cov) = self.model.mixture_moments();
                -mu.dot(w) + 0.5 * g * crate::linalg::quad_form(&cov, w)
            }
        })
    }

    fn polytope(&self) -> Polytope {
        polytope_for(&self.feasible)
    }

    pub fn solve(&self, opts: &SolveOptions) -> SolveReport {
        let x0 = opts.warm_start.clone().unwrap_or_else(|| self.feasible.initial_point());
        let out = projected_newton(&EgmSmooth(self), &self.polytope(), &x0, &opts.newton);
        let w = &out.x;
        let per_component = self.per_component(w).expect("dimension checked at construction");
        let diagnostics = Diagnostics {
            stop_reason: format!("{:?}", out.stop),
            vertex_check: vertex_check(&self.feasible, out.value, |v| {
                self.objective(v).expect("dimension checked at construction")
            }),
            limit_high: self.limit_objective(w, LimitMode::High).ok(),
            limit_low: self.limit_objective(w, LimitMode::Low).ok(),
            scaled_objective: Some(out.value / self.gamma),
        };
        report_from(out, per_component, self.gamma, diagnostics)
    }
}

pub(crate) fn polytope_for(set: &FeasibleSet) -> Polytope {
    let n = set.n();
    Polytope {
        budget_len: n,
        lower: (0..n).map(|j| set.lower_at(j)).collect(),
        upper: (0..n).map(|j| set.upper_at(j)).collect(),
    }
}

pub(crate) fn vertex_check(set: &FeasibleSet, value: f64, f: impl Fn(&DVector<f64>) -> f64) -> Option<bool> {
    let probes = set.vertex_probes();
    if probes.is_empty() {
        return None;
    }
    Some(probes.iter().all(|v| value <= f(v) + 1e-9 * (1.0 + value.abs())))
}

fn report_from(out: NewtonOutcome, per_component: Vec<f64>, gamma: f64, diagnostics: Diagnostics) -> SolveReport {
    SolveReport {
        weights: out.x.iter().copied().collect(),
        objective: out.value,
        per_component,
        gamma,
        iterations: out.iterations,
        converged: out.converged,
        kkt_residual: out.kkt_residual,
        diagnostics,
    }
}

struct EgmSmooth<'a>(&'a EgmProblem);

impl SmoothObjective for EgmSmooth<'_> {
    fn dim(&self) -> usize {
        self.0.model.n()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.0.derivatives(x, false).0
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.0.derivatives(x, false).1
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.0.derivatives(x, true).2.expect("hessian requested")
    }
}

/// `-μᵀw + (γ/2) wᵀΣw`.
struct MarkowitzSmooth<'a> {
    mu: &'a DVector<f64>,
    sigma: &'a DMatrix<f64>,
    gamma: f64,
}

impl SmoothObjective for MarkowitzSmooth<'_> {
    fn dim(&self) -> usize {
        self.mu.len()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        -self.mu.dot(x) + 0.5 * self.gamma * crate::linalg::quad_form(self.sigma, x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.sigma * x * self.gamma - self.mu
    }
    fn hessian(&self, _: &DVector<f64>) -> DMatrix<f64> {
        self.sigma * self.gamma
    }
}

/// Mean-variance portfolio: maximize `μᵀw - (γ/2)wᵀΣw` over the feasible set.
pub fn markowitz_solve(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    gamma: f64,
    feasible: &FeasibleSet,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n || feasible.n() != n {
        return Err(GmError::dim("mean, covariance and feasible set disagree in size"));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(GmError::param(format!("risk aversion must be positive, got {gamma}")));
    }
    let sigma = crate::linalg::symmetrize(sigma);
    if crate::linalg::min_eigenvalue(&sigma) < -crate::model::PSD_TOL {
        return Err(GmError::NotPsd {
            component: 0,
            eigenvalue: crate::linalg::min_eigenvalue(&sigma),
        });
    }
    let f = MarkowitzSmooth {
        mu,
        sigma: &sigma,
        gamma,
    };
    let x0 = opts.warm_start.clone().unwrap_or_else(|| feasible.initial_point());
    let out = projected_newton(&f, &polytope_for(feasible), &x0, &opts.newton);
    let w = out.x.clone();
    let quad = crate::linalg::quad_form(&sigma, &w);
    let per_component = vec![-gamma * mu.dot(&w) + 0.5 * gamma * gamma * quad];
    let diagnostics = Diagnostics {
        stop_reason: format!("{:?}", out.stop),
        vertex_check: vertex_check(feasible, out.value, |v| f.value(v)),
        limit_high: None,
        limit_low: None,
        scaled_objective: None,
    };
    Ok(report_from(out, per_component, gamma, diagnostics))
}

/// Budget-only Markowitz portfolio from the KKT system; `None` when the
/// system is singular.
pub fn markowitz_closed_form(mu: &DVector<f64>, sigma: &DMatrix<f64>, gamma: f64) -> Option<DVector<f64>> {
    // γΣw - μ + ν1 = 0, 1ᵀw = 1
    crate::linalg::solve_budget_kkt(&(sigma * gamma), mu, 1.0)
}
