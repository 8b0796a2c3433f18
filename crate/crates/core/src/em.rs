//! Fitting a Gaussian mixture to a return history by expectation-maximization.
//!
//! The covariance update carries a ridge: each M-step sets
//! `Σ_i = (S_i + βI) / N_i`, the maximizer of the log-likelihood penalized by
//! `-(β/2) tr(Σ_i⁻¹)` per component. With `β = ε T / k` a component holding
//! its fair share of the data gets a ridge of about `ε`, and the penalized
//! objective is nondecreasing across iterations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GmError, Result};
use crate::lse::log_sum_exp;
use crate::model::GmModel;

/// Components whose weight falls below this are dropped.
pub const MIN_COMPONENT_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    /// Covariance ridge `ε`; defaults to `1e-6` times the mean sample variance.
    pub ridge: Option<f64>,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 500,
            tol: 1e-8,
            restarts: 5,
            ridge: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmModel,
    /// Plain log-likelihood of the data under `model`.
    pub log_likelihood: f64,
    /// Penalized objective after every iteration of the winning restart.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

struct Params {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

fn sample_covariance(data: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let t = data.nrows() as f64;
    let mean = data.row_mean().transpose();
    let mut cov = DMatrix::zeros(data.ncols(), data.ncols());
    for r in data.row_iter() {
        let d = r.transpose() - &mean;
        cov += &d * d.transpose();
    }
    (mean, cov / t)
}

/// Per-row log densities `log π_i + log N(x_t | μ_i, Σ_i)`; `None` when a
/// covariance fails to factor.
fn log_joint(data: &DMatrix<f64>, p: &Params) -> Option<Vec<Vec<f64>>> {
    let n = data.ncols() as f64;
    let log2pi = (2.0 * std::f64::consts::PI).ln();
    let mut cols = Vec::with_capacity(p.weights.len());
    for ((w, mu), cov) in p.weights.iter().zip(&p.means).zip(&p.covs) {
        let chol: Cholesky<f64, Dyn> = Cholesky::new(cov.clone())?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let col = data
            .row_iter()
            .map(|r| {
                let d = r.transpose() - mu;
                let z = chol.l().solve_lower_triangular(&d).expect("factor is nonsingular");
                w.ln() - 0.5 * (n * log2pi + logdet + z.norm_squared())
            })
            .collect();
        cols.push(col);
    }
    Some(cols)
}

fn penalty(p: &Params, beta: f64) -> f64 {
    p.covs
        .iter()
        .map(|c| {
            let inv = c.clone().try_inverse().map_or(f64::INFINITY, |i| i.trace());
            -0.5 * beta * inv
        })
        .sum()
}

/// Fit a `k`-component mixture to `returns` (one row per period).
pub fn fit_em(returns: &DMatrix<f64>, k: usize, seed: u64, opts: &EmOptions) -> Result<EmFit> {
    let (t, n) = returns.shape();
    if k == 0 {
        return Err(GmError::param("k must be at least 1"));
    }
    if t == 0 || n == 0 {
        return Err(GmError::dim("empty return matrix"));
    }
    if returns.iter().any(|v| !v.is_finite()) {
        return Err(GmError::NonFinite("return data".into()));
    }
    if t < k {
        return Err(GmError::dim(format!("{t} observations cannot support {k} components")));
    }
    let (mean, cov) = sample_covariance(returns);
    let mean_var = cov.diagonal().mean();
    let eps = opts.ridge.unwrap_or(1e-6 * mean_var.max(f64::MIN_POSITIVE)).max(f64::MIN_POSITIVE);
    let beta = eps * t as f64 / k as f64;

    let mut warnings = Vec::new();
    let mut best: Option<(Params, Vec<f64>, usize, bool)> = None;
    let restarts = if k == 1 { 1 } else { opts.restarts.max(1) };
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let init_cov = &cov + DMatrix::identity(n, n) * eps;
        let means = if k == 1 {
            vec![mean.clone()]
        } else {
            sample_indices(&mut rng, t, k)
                .into_iter()
                .map(|i| returns.row(i).transpose())
                .collect()
        };
        let params = Params {
            weights: vec![1.0 / k as f64; k],
            means,
            covs: vec![init_cov; k],
        };
        let (params, trace, iters, converged) = run_em(returns, params, beta, opts, &mut warnings)?;
        let last = *trace.last().unwrap_or(&f64::NEG_INFINITY);
        let better = best
            .as_ref()
            .is_none_or(|(_, tr, ..)| last > *tr.last().unwrap_or(&f64::NEG_INFINITY));
        if better {
            best = Some((params, trace, iters, converged));
        }
    }
    let (params, trace, iterations, converged) = best.expect("at least one restart");
    let model = GmModel::new(params.weights.clone(), params.means.clone(), params.covs.clone())?;
    let log_likelihood = log_likelihood(&model, returns)?;
    warnings.sort();
    warnings.dedup();
    Ok(EmFit {
        model,
        log_likelihood,
        trace,
        iterations,
        converged,
        warnings,
    })
}

fn run_em(
    data: &DMatrix<f64>,
    mut p: Params,
    beta: f64,
    opts: &EmOptions,
    warnings: &mut Vec<String>,
) -> Result<(Params, Vec<f64>, usize, bool)> {
    let (t, n) = data.shape();
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for it in 0..opts.max_iter {
        let cols = log_joint(data, &p).ok_or_else(|| GmError::Singular("component covariance".into()))?;
        let k = p.weights.len();
        // E-step
        let mut resp = DMatrix::zeros(t, k);
        let mut ll = 0.0;
        let mut row = vec![0.0; k];
        for r in 0..t {
            for i in 0..k {
                row[i] = cols[i][r];
            }
            let lse = log_sum_exp(&row);
            ll += lse;
            for i in 0..k {
                resp[(r, i)] = (row[i] - lse).exp();
            }
        }
        let objective = ll + penalty(&p, beta);
        trace.push(objective);
        if it > 0 && (objective - prev).abs() < opts.tol {
            return Ok((p, trace, it, true));
        }
        prev = objective;

        // M-step
        let mut next = Params {
            weights: Vec::with_capacity(k),
            means: Vec::with_capacity(k),
            covs: Vec::with_capacity(k),
        };
        for i in 0..k {
            let col = resp.column(i);
            let nk: f64 = col.sum();
            let pi = nk / t as f64;
            if pi < MIN_COMPONENT_WEIGHT {
                warnings.push(format!("dropped degenerate component with weight {pi:e}"));
                continue;
            }
            let mu = data.tr_mul(&col) / nk;
            let mut s = DMatrix::zeros(n, n);
            for (r, x) in data.row_iter().enumerate() {
                let d = x.transpose() - &mu;
                s += &d * d.transpose() * col[r];
            }
            let cov = (s + DMatrix::identity(n, n) * beta) / nk;
            next.weights.push(pi);
            next.means.push(mu);
            next.covs.push((&cov + cov.transpose()) * 0.5);
        }
        let total: f64 = next.weights.iter().sum();
        next.weights.iter_mut().for_each(|w| *w /= total);
        if next.weights.len() < k {
            // the objective is not comparable across a change of k
            prev = f64::NEG_INFINITY;
            trace.clear();
        }
        p = next;
    }
    Ok((p, trace, opts.max_iter, false))
}

/// `Σ_t log Σ_i π_i N(x_t | μ_i, Σ_i)`.
pub fn log_likelihood(model: &GmModel, data: &DMatrix<f64>) -> Result<f64> {
    if data.ncols() != model.n() {
        return Err(GmError::dim("data and model disagree on the number of assets"));
    }
    let p = Params {
        weights: model.weights().to_vec(),
        means: model.means().to_vec(),
        covs: model.covariances().to_vec(),
    };
    let cols = log_joint(data, &p).ok_or_else(|| GmError::Singular("component covariance".into()))?;
    let k = model.k();
    let mut row = vec![0.0; k];
    Ok((0..data.nrows())
        .map(|r| {
            for i in 0..k {
                row[i] = cols[i][r];
            }
            log_sum_exp(&row)
        })
        .sum())
}
