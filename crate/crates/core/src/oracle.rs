//! Brute-force and Monte Carlo reference computations for tests.
//!
//! Nothing in the solvers calls into this module. The grid searches evaluate
//! the objectives from the per-component projections directly rather than
//! through [`crate::egm`] or [`crate::evar`].

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::egm::EgmProblem;
use crate::error::{GmError, Result};
use crate::evar::EvarProblem;
use crate::feasible::FeasibleSet;
use crate::model::GmModel;

/// Monte Carlo draws are generated in this many independently seeded shards.
pub const SHARDS: usize = 8;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub count: usize,
}

impl McEstimate {
    /// `|value - x| ≤ 3·std_error`.
    pub fn covers(&self, x: f64) -> bool {
        (self.value - x).abs() <= 3.0 * self.std_error
    }

    fn from_values(values: impl Iterator<Item = f64> + Clone) -> McEstimate {
        let count = values.clone().count();
        let mean = values.clone().sum::<f64>() / count as f64;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (count.max(2) - 1) as f64;
        McEstimate {
            value: mean,
            std_error: (var / count as f64).sqrt(),
            count,
        }
    }
}

fn shard_seed(seed: u64, shard: usize) -> u64 {
    seed ^ (shard as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn shard_sizes(count: usize) -> Vec<usize> {
    (0..SHARDS)
        .map(|s| count / SHARDS + usize::from(s < count % SHARDS))
        .collect()
}

/// `count` draws of `R = wᵀr`, sharded across threads. The result depends
/// only on `(seed, count)`.
pub fn mc_portfolio_returns(model: &GmModel, w: &DVector<f64>, count: usize, seed: u64) -> Result<Vec<f64>> {
    let parts: Result<Vec<Vec<f64>>> = shard_sizes(count)
        .into_par_iter()
        .enumerate()
        .map(|(s, c)| model.sample_portfolio_returns(w, c, shard_seed(seed, s)))
        .collect();
    Ok(parts?.concat())
}

/// `count` draws of the asset return vector, one per row.
pub fn mc_asset_returns(model: &GmModel, count: usize, seed: u64) -> DMatrix<f64> {
    let parts: Vec<DMatrix<f64>> = shard_sizes(count)
        .into_par_iter()
        .enumerate()
        .map(|(s, c)| model.sample(c, shard_seed(seed, s)))
        .collect();
    let mut out = DMatrix::zeros(count, model.n());
    let mut row = 0;
    for p in parts {
        out.rows_mut(row, p.nrows()).copy_from(&p);
        row += p.nrows();
    }
    out
}

/// Mean and standard error of the exponential utility `1 − exp(−γR)`.
pub fn mc_expected_utility(model: &GmModel, w: &DVector<f64>, gamma: f64, count: usize, seed: u64) -> Result<McEstimate> {
    if count < 10_000 {
        return Err(GmError::param("Monte Carlo utility needs at least 10^4 draws"));
    }
    let r = mc_portfolio_returns(model, w, count, seed)?;
    Ok(McEstimate::from_values(r.iter().map(|x| 1.0 - (-gamma * x).exp())))
}

/// Sample estimate of `E exp(tR)`.
pub fn mc_mgf(model: &GmModel, w: &DVector<f64>, t: f64, count: usize, seed: u64) -> Result<McEstimate> {
    let r = mc_portfolio_returns(model, w, count, seed)?;
    Ok(McEstimate::from_values(r.iter().map(|x| (t * x).exp())))
}

/// Empirical `P(R ≤ a)` with its binomial standard error.
pub fn mc_cdf(model: &GmModel, w: &DVector<f64>, a: f64, count: usize, seed: u64) -> Result<McEstimate> {
    let r = mc_portfolio_returns(model, w, count, seed)?;
    Ok(McEstimate::from_values(r.iter().map(|&x| if x <= a { 1.0 } else { 0.0 })))
}

/// Sample mean and covariance, each entry with its standard error.
pub struct McMoments {
    pub mean: Vec<McEstimate>,
    pub covariance: Vec<Vec<McEstimate>>,
}

pub fn mc_moments(model: &GmModel, count: usize, seed: u64) -> McMoments {
    let x = mc_asset_returns(model, count, seed);
    let n = model.n();
    let mean: Vec<McEstimate> = (0..n).map(|j| McEstimate::from_values(x.column(j).iter().copied())).collect();
    let covariance = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    let (ma, mb) = (mean[a].value, mean[b].value);
                    McEstimate::from_values(x.row_iter().map(move |r| (r[a] - ma) * (r[b] - mb)))
                })
                .collect()
        })
        .collect();
    McMoments { mean, covariance }
}

/// Empirical value at risk `−q_α`, where `q_α` is the lower α-quantile of the
/// sampled returns (the `⌈αN⌉`-th smallest).
///
/// The standard error comes from 200 bootstrap resamples. The `r`-th order
/// statistic of a resample of size `N` is `sorted[⌊N·U⌋]` with
/// `U ~ Beta(r, N + 1 − r)`, so each resample is drawn in O(1) without
/// materializing it.
pub fn mc_quantile(model: &GmModel, w: &DVector<f64>, alpha: f64, count: usize, seed: u64) -> Result<McEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GmError::param("alpha must lie in (0, 1)"));
    }
    if (count as f64) * alpha < 100.0 {
        return Err(GmError::param("quantile estimate needs count·alpha ≥ 100"));
    }
    let mut r = mc_portfolio_returns(model, w, count, seed)?;
    r.sort_unstable_by(f64::total_cmp);
    let rank = ((alpha * count as f64).ceil() as usize).clamp(1, count);
    let value = -r[rank - 1];
    let beta = Beta::new(rank as f64, (count + 1 - rank) as f64).map_err(|e| GmError::param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(shard_seed(seed, SHARDS));
    let boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let u: f64 = beta.sample(&mut rng);
            let idx = ((u * count as f64) as usize).min(count - 1);
            -r[idx]
        })
        .collect();
    let spread = McEstimate::from_values(boots.iter().copied());
    Ok(McEstimate {
        value,
        std_error: spread.std_error * (BOOTSTRAP_RESAMPLES as f64).sqrt(),
        count,
    })
}

/// Central differences, component-wise.
pub fn finite_difference_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, step: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        probe[j] = x[j] + step;
        let up = f(&probe);
        probe[j] = x[j] - step;
        let down = f(&probe);
        probe[j] = x[j];
        g[j] = (up - down) / (2.0 * step);
    }
    g
}

/// Search region for the grid oracles.
#[derive(Debug, Clone)]
pub struct GridOptions {
    /// Spacing of the weight grid.
    pub resolution: f64,
    /// Coordinate box intersected with the problem's own bounds. Needed when
    /// the feasible set is unbounded.
    pub span: (f64, f64),
    /// δ range searched by [`grid_search_evar`], log-spaced.
    pub delta_range: (f64, f64),
    pub delta_steps: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            resolution: 1e-3,
            span: (-10.0, 10.0),
            delta_range: (1e-3, 1e3),
            delta_steps: 4000,
        }
    }
}

/// Upper limit on the number of weight grid points.
pub const MAX_GRID_POINTS: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GridEgm {
    pub weights: DVector<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEvar {
    pub weights: DVector<f64>,
    pub delta: f64,
    pub objective: f64,
}

/// All grid points of the feasible set with free coordinates on multiples of
/// `resolution` and the last coordinate taking up the budget.
fn weight_grid(set: &FeasibleSet, opts: &GridOptions) -> Result<Vec<DVector<f64>>> {
    let n = set.n();
    if n == 0 || n > 3 {
        return Err(GmError::dim(format!("grid oracle supports 1 to 3 assets, got {n}")));
    }
    if !(opts.resolution > 0.0 && opts.resolution <= 1e-2) {
        return Err(GmError::param("grid resolution must lie in (0, 1e-2]"));
    }
    let lo = |j: usize| set.lower_at(j).max(opts.span.0);
    let hi = |j: usize| set.upper_at(j).min(opts.span.1);
    let axis = |j: usize| -> Vec<f64> {
        let a = (lo(j) / opts.resolution).ceil() as i64;
        let b = (hi(j) / opts.resolution).floor() as i64;
        (a..=b).map(|i| i as f64 * opts.resolution).collect()
    };
    let slack = 1e-9;
    let last_ok = |v: f64| v >= lo(n - 1) - slack && v <= hi(n - 1) + slack;
    let points = match n {
        1 => vec![DVector::from_element(1, 1.0)],
        2 => axis(0)
            .into_iter()
            .filter(|a| last_ok(1.0 - a))
            .map(|a| DVector::from_vec(vec![a, 1.0 - a]))
            .collect(),
        _ => {
            let (xa, xb) = (axis(0), axis(1));
            if xa.len().saturating_mul(xb.len()) > MAX_GRID_POINTS {
                return Err(GmError::param("grid too large; narrow the span"));
            }
            let mut pts = Vec::new();
            for &a in &xa {
                for &b in &xb {
                    let c = 1.0 - a - b;
                    if last_ok(c) {
                        pts.push(DVector::from_vec(vec![a, b, c]));
                    }
                }
            }
            pts
        }
    };
    if points.is_empty() {
        return Err(GmError::Infeasible("no grid point is feasible".into()));
    }
    Ok(points)
}

fn lse(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    m + terms.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Exhaustive minimization of `K(w, −γ)` over the weight grid.
pub fn grid_search_egm(problem: &EgmProblem, opts: &GridOptions) -> Result<GridEgm> {
    let model = problem.model();
    let g = problem.gamma();
    let logp: Vec<f64> = model.weights().iter().map(|p| p.ln()).collect();
    weight_grid(problem.feasible(), opts)?
        .into_par_iter()
        .map(|w| {
            let proj = model.project(&w)?;
            let value = lse(
                (0..logp.len()).map(|i| logp[i] - g * proj.nus[i] + 0.5 * g * g * proj.sigmas2[i]),
            );
            Ok(GridEgm { weights: w, objective: value })
        })
        .try_reduce_with(|a, b| Ok(if b.objective < a.objective { b } else { a }))
        .expect("grid is nonempty")
}

/// Exhaustive minimization of `δ K(w/δ, −1) − δ log α` over the weight grid
/// and a log-spaced δ grid.
pub fn grid_search_evar(problem: &EvarProblem, opts: &GridOptions) -> Result<GridEvar> {
    let (d0, d1) = opts.delta_range;
    if !(d0 > 0.0 && d0 < d1 && opts.delta_steps >= 2) {
        return Err(GmError::param("delta grid needs 0 < lo < hi and at least 2 steps"));
    }
    let deltas: Vec<f64> = (0..opts.delta_steps)
        .map(|i| (d0.ln() + (d1 / d0).ln() * i as f64 / (opts.delta_steps - 1) as f64).exp())
        .collect();
    let model = problem.model();
    let log_alpha = problem.alpha().ln();
    let logp: Vec<f64> = model.weights().iter().map(|p| p.ln()).collect();
    weight_grid(problem.feasible(), opts)?
        .into_par_iter()
        .map(|w| {
            let proj = model.project(&w)?;
            let mut best = (f64::INFINITY, d0);
            for &d in &deltas {
                let k = lse((0..logp.len()).map(|i| logp[i] - proj.nus[i] / d + 0.5 * proj.sigmas2[i] / (d * d)));
                let v = d * k - d * log_alpha;
                if v < best.0 {
                    best = (v, d);
                }
            }
            Ok(GridEvar {
                weights: w,
                delta: best.1,
                objective: best.0,
            })
        })
        .try_reduce_with(|a, b| Ok(if b.objective < a.objective { b } else { a }))
        .expect("grid is nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn normal_model() -> GmModel {
        GmModel::new(vec![1.0], vec![DVector::zeros(1)], vec![DMatrix::identity(1, 1)]).unwrap()
    }

    #[test]
    fn zero_gamma_utility_is_exactly_zero() {
        let m = normal_model();
        let e = mc_expected_utility(&m, &DVector::from_element(1, 1.0), 0.0, 10_000, 1).unwrap();
        assert_eq!((e.value, e.std_error), (0.0, 0.0));
        assert!(mc_expected_utility(&m, &DVector::from_element(1, 1.0), 1.0, 100, 1).is_err());
    }

    #[test]
    fn degenerate_utility_is_deterministic() {
        let m = GmModel::finite_values(vec![1.0], vec![DVector::from_element(1, 0.3)]).unwrap();
        let e = mc_expected_utility(&m, &DVector::from_element(1, 1.0), 2.0, 10_000, 1).unwrap();
        assert!((e.value - (1.0 - (-0.6f64).exp())).abs() < 1e-12);
        assert!(e.std_error < 1e-12);
    }

    #[test]
    fn gaussian_quantile() {
        let m = normal_model();
        let w = DVector::from_element(1, 1.0);
        let alpha = 0.05;
        let q = mc_quantile(&m, &w, alpha, 200_000, 4).unwrap();
        let truth = -Normal::standard().inverse_cdf(alpha);
        assert!(q.covers(truth), "{q:?} vs {truth}");
        assert!(q.std_error > 0.0);
        assert!(mc_quantile(&m, &w, 0.001, 10_000, 4).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let m = normal_model();
        let w = DVector::from_element(1, 1.0);
        let a = mc_quantile(&m, &w, 0.1, 20_000, 9).unwrap();
        let b = mc_quantile(&m, &w, 0.1, 20_000, 9).unwrap();
        assert_eq!(a, b);
        let c = mc_quantile(&m, &w, 0.1, 20_000, 10).unwrap();
        assert_ne!(a.value, c.value);
    }

    #[test]
    fn finite_differences() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let g = finite_difference_gradient(|v| 0.5 * v.dot(&(&q * v)), &x, 1e-4);
        assert!((g - &q * &x).amax() < 1e-8);
        let c = DVector::from_vec(vec![1.5, -2.0]);
        let g = finite_difference_gradient(|v| c.dot(v), &x, 1e-3);
        assert!((g - c).amax() < 1e-12);
    }

    #[test]
    fn grid_preconditions() {
        let m = GmModel::new(vec![1.0], vec![DVector::zeros(4)], vec![DMatrix::identity(4, 4)]).unwrap();
        let p = EgmProblem::new(m, 1.0, FeasibleSet::long_only(4)).unwrap();
        assert!(grid_search_egm(&p, &GridOptions::default()).is_err());
        let m = normal_model();
        let p = EgmProblem::new(m, 1.0, FeasibleSet::budget(1)).unwrap();
        let coarse = GridOptions { resolution: 0.1, ..GridOptions::default() };
        assert!(grid_search_egm(&p, &coarse).is_err());
    }

    #[test]
    fn grid_markowitz_toy() {
        let mu = DVector::from_vec(vec![0.1, 0.05]);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
        let m = GmModel::new(vec![1.0], vec![mu.clone()], vec![sigma.clone()]).unwrap();
        let p = EgmProblem::new(m, 2.0, FeasibleSet::budget(2)).unwrap();
        let grid = grid_search_egm(&p, &GridOptions::default()).unwrap();
        let exact = crate::egm::markowitz_closed_form(&mu, &sigma, 2.0).unwrap();
        assert!((grid.weights[0] - exact[0]).abs() <= 1e-3);
    }

    #[test]
    fn grid_evar_gaussian_delta() {
        let mu = DVector::from_vec(vec![0.1, 0.05]);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
        let m = GmModel::new(vec![1.0], vec![mu], vec![sigma.clone()]).unwrap();
        let alpha: f64 = 0.05;
        let p = EvarProblem::new(m, alpha, FeasibleSet::long_only(2)).unwrap();
        let grid = grid_search_evar(&p, &GridOptions::default()).unwrap();
        let w = &grid.weights;
        let closed = (w.dot(&(&sigma * w)) / (-2.0 * alpha.ln())).sqrt();
        let step = (1e6f64).ln() / 3999.0;
        assert!((grid.delta / closed).ln().abs() <= step, "{} vs {closed}", grid.delta);
    }
}
