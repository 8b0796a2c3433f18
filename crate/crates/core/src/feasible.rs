//! Budget-plus-box feasible sets and Euclidean projection onto them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};

/// `{w : 1ᵀw = 1, lower ≤ w ≤ upper}`; a missing bound vector means unbounded
/// on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    n: usize,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
}

impl FeasibleSet {
    /// Only the budget constraint.
    pub fn budget(n: usize) -> Self {
        FeasibleSet {
            n,
            lower: None,
            upper: None,
        }
    }

    /// `w ≥ 0`, `1ᵀw = 1`.
    pub fn long_only(n: usize) -> Self {
        FeasibleSet {
            n,
            lower: Some(vec![0.0; n]),
            upper: None,
        }
    }

    pub fn with_bounds(n: usize, lower: Option<Vec<f64>>, upper: Option<Vec<f64>>) -> Result<Self> {
        if n == 0 {
            return Err(GmError::dim("feasible set needs at least one asset"));
        }
        for (name, b) in [("lower", &lower), ("upper", &upper)] {
            if let Some(b) = b {
                if b.len() != n {
                    return Err(GmError::dim(format!("{name} bounds have length {}, expected {n}", b.len())));
                }
                if b.iter().any(|v| v.is_nan()) {
                    return Err(GmError::NonFinite(format!("{name} bounds")));
                }
            }
        }
        let set = FeasibleSet { n, lower, upper };
        for j in 0..n {
            if set.lower_at(j) > set.upper_at(j) {
                return Err(GmError::Infeasible(format!(
                    "asset {j}: lower bound {} exceeds upper bound {}",
                    set.lower_at(j),
                    set.upper_at(j)
                )));
            }
            if set.lower_at(j) == f64::INFINITY || set.upper_at(j) == f64::NEG_INFINITY {
                return Err(GmError::Infeasible(format!("asset {j}: bounds exclude every finite weight")));
            }
        }
        let lo: f64 = (0..n).map(|j| set.lower_at(j)).sum();
        let hi: f64 = (0..n).map(|j| set.upper_at(j)).sum();
        if lo > 1.0 + 1e-12 || hi < 1.0 - 1e-12 {
            return Err(GmError::Infeasible(format!(
                "budget 1 outside [{lo}, {hi}] allowed by the bounds"
            )));
        }
        Ok(set)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> Option<&[f64]> {
        self.lower.as_deref()
    }

    pub fn upper(&self) -> Option<&[f64]> {
        self.upper.as_deref()
    }

    pub fn lower_at(&self, j: usize) -> f64 {
        self.lower.as_ref().map_or(f64::NEG_INFINITY, |l| l[j])
    }

    pub fn upper_at(&self, j: usize) -> f64 {
        self.upper.as_ref().map_or(f64::INFINITY, |u| u[j])
    }

    pub fn is_boxed(&self) -> bool {
        self.lower.is_some() || self.upper.is_some()
    }

    /// Largest violation of the budget or a bound.
    pub fn violation(&self, w: &DVector<f64>) -> f64 {
        let mut v = (w.sum() - 1.0).abs();
        for j in 0..self.n {
            v = v.max(self.lower_at(j) - w[j]).max(w[j] - self.upper_at(j));
        }
        v
    }

    pub fn contains(&self, w: &DVector<f64>, tol: f64) -> bool {
        w.len() == self.n && self.violation(w) <= tol
    }

    /// A feasible starting point: the equal-weight portfolio projected onto the set.
    pub fn initial_point(&self) -> DVector<f64> {
        self.project(&DVector::from_element(self.n, 1.0 / self.n as f64))
    }

    /// Euclidean projection.
    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        let lower: Vec<f64> = (0..self.n).map(|j| self.lower_at(j)).collect();
        let upper: Vec<f64> = (0..self.n).map(|j| self.upper_at(j)).collect();
        DVector::from_vec(project_budget_box(y.as_slice(), &lower, &upper))
    }

    /// The simple vertex-like points of the polytope: each asset in turn
    /// takes the residual budget while the others sit at their lower bound.
    /// Only defined when every lower bound is finite.
    pub fn vertex_probes(&self) -> Vec<DVector<f64>> {
        let Some(lower) = &self.lower else {
            return Vec::new();
        };
        if lower.iter().any(|v| !v.is_finite()) {
            return Vec::new();
        }
        let base: f64 = lower.iter().sum();
        (0..self.n)
            .filter_map(|j| {
                let mut w = DVector::from_column_slice(lower);
                w[j] += 1.0 - base;
                (w[j] <= self.upper_at(j)).then_some(w)
            })
            .collect()
    }
}

/// Projection onto `{x : Σx = 1, l ≤ x ≤ u}`: `x = clip(y - τ, l, u)` with the
/// scalar `τ` found by bisection, then recomputed exactly from the free set.
pub fn project_budget_box(y: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let n = y.len();
    let unbounded = lower.iter().all(|v| *v == f64::NEG_INFINITY) && upper.iter().all(|v| *v == f64::INFINITY);
    if unbounded {
        let shift = (y.iter().sum::<f64>() - 1.0) / n as f64;
        return y.iter().map(|v| v - shift).collect();
    }
    let clip = |tau: f64| -> Vec<f64> {
        (0..n).map(|j| (y[j] - tau).clamp(lower[j], upper[j])).collect()
    };
    let total = |tau: f64| -> f64 { clip(tau).iter().sum() };

    let mut lo = (y.iter().sum::<f64>() - 1.0) / n as f64;
    let mut hi = lo;
    let mut step = 1.0;
    while total(lo) < 1.0 {
        lo -= step;
        step *= 2.0;
    }
    step = 1.0;
    while total(hi) > 1.0 {
        hi += step;
        step *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    let mut x = clip(tau);
    // exact τ on the free coordinates so the budget holds to rounding
    let free: Vec<usize> = (0..n).filter(|&j| x[j] > lower[j] && x[j] < upper[j]).collect();
    if !free.is_empty() {
        let fixed: f64 = (0..n).filter(|j| !free.contains(j)).map(|j| x[j]).sum();
        let tau = (free.iter().map(|&j| y[j]).sum::<f64>() - (1.0 - fixed)) / free.len() as f64;
        let candidate: Vec<f64> = (0..n)
            .map(|j| if free.contains(&j) { y[j] - tau } else { x[j] })
            .collect();
        if free.iter().all(|&j| candidate[j] >= lower[j] && candidate[j] <= upper[j]) {
            x = candidate;
        }
    }
    x
}
