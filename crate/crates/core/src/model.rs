//! Gaussian-mixture return model.
//!
//! The asset return vector `r` is drawn by first picking component `i` with
//! probability `π_i` and then sampling `N(μ_i, Σ_i)`. A portfolio return
//! `R = wᵀr` is then itself a scalar mixture with component means
//! `ν_i = wᵀμ_i` and variances `σ_i² = wᵀΣ_i w`, which is all the closed-form
//! quantities below need.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{GmError, Result};
use crate::linalg;
use crate::lse::log_sum_exp;

/// Tolerance on `|Σπ - 1|` below which the weights are silently renormalized.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;
/// Most negative eigenvalue accepted for a covariance matrix.
pub const PSD_TOL: f64 = 1e-10;
/// Most negative projected variance clipped to zero instead of rejected.
pub const VARIANCE_CLIP_TOL: f64 = 1e-12;

/// Model as it appears on disk: `{"n", "k", "weights", "means", "covariances"}`,
/// covariances row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawModel {
    pub n: usize,
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

/// A validated Gaussian mixture over `n` asset returns with `k` components.
///
/// Immutable after construction; every method is a pure function of `self`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmModel {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

/// Per-component statistics of the portfolio return `wᵀr`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentProjection {
    /// `ν_i = wᵀμ_i`
    pub nus: Vec<f64>,
    /// `σ_i² = wᵀΣ_i w`
    pub sigmas2: Vec<f64>,
}

/// Moment generating function value; `overflowed` is set when the true value
/// exceeds the largest finite double and `value` is `+inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mgf {
    pub value: f64,
    pub overflowed: bool,
}

impl GmModel {
    /// Build and validate a model from component parameters.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(GmError::dim("at least one component required"));
        }
        if means.len() != k || covariances.len() != k {
            return Err(GmError::dim(format!(
                "{} weights, {} means, {} covariances",
                k,
                means.len(),
                covariances.len()
            )));
        }
        let n = means[0].len();
        if n == 0 {
            return Err(GmError::dim("at least one asset required"));
        }
        for (i, (mu, cov)) in means.iter().zip(&covariances).enumerate() {
            if mu.len() != n {
                return Err(GmError::dim(format!("mean {i} has length {}, expected {n}", mu.len())));
            }
            if cov.nrows() != n || cov.ncols() != n {
                return Err(GmError::dim(format!(
                    "covariance {i} is {}x{}, expected {n}x{n}",
                    cov.nrows(),
                    cov.ncols()
                )));
            }
            if !mu.iter().chain(cov.iter()).all(|v| v.is_finite()) {
                return Err(GmError::NonFinite(format!("component {i}")));
            }
        }
        if let Some(p) = weights.iter().find(|&&p| !(p > 0.0) || !p.is_finite()) {
            return Err(GmError::Weights(format!("weight {p} is not a positive probability")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(GmError::Weights(format!("weights sum to {total}, not 1")));
        }
        // sums equal to 1 up to rounding are kept as given
        let weights = if (total - 1.0).abs() <= 2.0 * k as f64 * f64::EPSILON {
            weights
        } else {
            weights.iter().map(|p| p / total).collect()
        };

        let covariances: Vec<DMatrix<f64>> = covariances.iter().map(linalg::symmetrize).collect();
        for (i, cov) in covariances.iter().enumerate() {
            if linalg::is_zero(cov) {
                continue;
            }
            let lmin = linalg::min_eigenvalue(cov);
            if lmin < -PSD_TOL {
                return Err(GmError::NotPsd {
                    component: i,
                    eigenvalue: lmin,
                });
            }
        }
        Ok(GmModel {
            weights,
            means,
            covariances,
        })
    }

    /// Validate the on-disk representation.
    pub fn from_raw(raw: &RawModel) -> Result<Self> {
        if raw.weights.len() != raw.k || raw.means.len() != raw.k || raw.covariances.len() != raw.k
        {
            return Err(GmError::dim(format!("declared k={} does not match arrays", raw.k)));
        }
        let mut means = Vec::with_capacity(raw.k);
        let mut covs = Vec::with_capacity(raw.k);
        for (i, (mu, cov)) in raw.means.iter().zip(&raw.covariances).enumerate() {
            if mu.len() != raw.n {
                return Err(GmError::dim(format!("mean {i} has length {}, declared n={}", mu.len(), raw.n)));
            }
            if cov.len() != raw.n || cov.iter().any(|row| row.len() != raw.n) {
                return Err(GmError::dim(format!("covariance {i} is not {0}x{0}", raw.n)));
            }
            means.push(DVector::from_column_slice(mu));
            covs.push(DMatrix::from_fn(raw.n, raw.n, |r, c| cov[r][c]));
        }
        Self::new(raw.weights.clone(), means, covs)
    }

    pub fn to_raw(&self) -> RawModel {
        RawModel {
            n: self.n(),
            k: self.k(),
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| (0..c.nrows()).map(|r| c.row(r).iter().copied().collect()).collect())
                .collect(),
        }
    }

    /// Finite-values model (`Σ_i = 0` for all `i`) from scenario returns.
    pub fn finite_values(weights: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        let n = values.first().map_or(0, |v| v.len());
        let covs = vec![DMatrix::zeros(n, n); values.len()];
        Self::new(weights, values, covs)
    }

    pub fn n(&self) -> usize {
        self.means[0].len()
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// True when every component covariance is exactly zero, so returns take
    /// only the values `μ_i`.
    pub fn is_finite_values(&self) -> bool {
        self.covariances.iter().all(linalg::is_zero)
    }

    fn check_len(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.n() {
            return Err(GmError::dim(format!("weights have length {}, model has {} assets", w.len(), self.n())));
        }
        Ok(())
    }

    pub fn project(&self, w: &DVector<f64>) -> Result<ComponentProjection> {
        self.check_len(w)?;
        let nus = self.means.iter().map(|mu| mu.dot(w)).collect();
        let sigmas2 = self
            .covariances
            .iter()
            .map(|cov| {
                let s = linalg::quad_form(cov, w);
                if s >= 0.0 {
                    Ok(s)
                } else if s >= -VARIANCE_CLIP_TOL * (1.0 + w.norm_squared()) {
                    Ok(0.0)
                } else {
                    Err(GmError::NegativeVariance { value: s })
                }
            })
            .collect::<Result<_>>()?;
        Ok(ComponentProjection { nus, sigmas2 })
    }

    /// `Prob(wᵀr ≤ a)`.
    pub fn cdf(&self, w: &DVector<f64>, a: f64) -> Result<f64> {
        let proj = self.project(w)?;
        Ok(proj.cdf(&self.weights, a))
    }

    /// `log π_i + t ν_i + t² σ_i² / 2` for each component.
    pub fn cgf_terms(&self, w: &DVector<f64>, t: f64) -> Result<Vec<f64>> {
        let proj = self.project(w)?;
        Ok(proj.cgf_terms(&self.weights, t))
    }

    /// Cumulant generating function `K(w, t) = log E exp(t wᵀr)`.
    pub fn cgf(&self, w: &DVector<f64>, t: f64) -> Result<f64> {
        let terms = self.cgf_terms(w, t)?;
        if t == 0.0 {
            // log Σπ_i = log 1
            return Ok(0.0);
        }
        Ok(log_sum_exp(&terms))
    }

    /// Moment generating function `M(w, t) = E exp(t wᵀr) = exp K(w, t)`.
    pub fn mgf(&self, w: &DVector<f64>, t: f64) -> Result<Mgf> {
        let k = self.cgf(w, t)?;
        let value = k.exp();
        Ok(Mgf {
            value,
            overflowed: value.is_infinite(),
        })
    }

    /// Mean vector and covariance matrix of `r`.
    pub fn mixture_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let mut mean = DVector::zeros(n);
        for (p, mu) in self.weights.iter().zip(&self.means) {
            mean.axpy(*p, mu, 1.0);
        }
        let mut cov = DMatrix::zeros(n, n);
        for ((p, mu), s) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            let dev = mu - &mean;
            cov += (s + &dev * dev.transpose()) * *p;
        }
        (mean, linalg::symmetrize(&cov))
    }

    /// `count` draws of `r`, one per row. Deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(count, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let sampler = Sampler::new(self);
        let mut out = DMatrix::zeros(count, self.n());
        let mut row = DVector::zeros(self.n());
        for r in 0..count {
            sampler.draw_into(rng, &mut row);
            out.row_mut(r).copy_from(&row.transpose());
        }
        out
    }

    /// Draw the portfolio return `wᵀr` directly, which only needs the scalar
    /// component statistics.
    pub fn sample_portfolio_returns(&self, w: &DVector<f64>, count: usize, seed: u64) -> Result<Vec<f64>> {
        let proj = self.project(w)?;
        let sampler = ComponentPicker::new(&self.weights);
        let sds: Vec<f64> = proj.sigmas2.iter().map(|s| s.sqrt()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                let i = sampler.pick(&mut rng);
                let z: f64 = StandardNormal.sample(&mut rng);
                proj.nus[i] + sds[i] * z
            })
            .collect())
    }
}

impl ComponentProjection {
    pub fn cdf(&self, weights: &[f64], a: f64) -> f64 {
        let total: f64 = weights
            .iter()
            .zip(self.nus.iter().zip(&self.sigmas2))
            .map(|(p, (&nu, &s2))| {
                if s2 == 0.0 {
                    if a >= nu {
                        *p
                    } else {
                        0.0
                    }
                } else {
                    p * std_normal_cdf((a - nu) / s2.sqrt())
                }
            })
            .sum();
        total.clamp(0.0, 1.0)
    }

    pub fn cgf_terms(&self, weights: &[f64], t: f64) -> Vec<f64> {
        weights
            .iter()
            .zip(self.nus.iter().zip(&self.sigmas2))
            .map(|(p, (nu, s2))| p.ln() + t * nu + 0.5 * t * t * s2)
            .collect()
    }
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

struct ComponentPicker {
    cumulative: Vec<f64>,
}

impl ComponentPicker {
    fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        ComponentPicker { cumulative }
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let last = self.cumulative.len() - 1;
        self.cumulative.iter().position(|&c| u < c).unwrap_or(last)
    }
}

struct Sampler<'a> {
    model: &'a GmModel,
    picker: ComponentPicker,
    factors: Vec<DMatrix<f64>>,
}

impl<'a> Sampler<'a> {
    fn new(model: &'a GmModel) -> Self {
        Sampler {
            model,
            picker: ComponentPicker::new(&model.weights),
            factors: model.covariances.iter().map(linalg::psd_factor).collect(),
        }
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut DVector<f64>) {
        let i = self.picker.pick(rng);
        let n = out.len();
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut *rng));
        out.copy_from(&self.model.means[i]);
        out.gemv(1.0, &self.factors[i], &z, 1.0);
    }
}
