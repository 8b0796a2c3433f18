#![allow(dead_code)]

use gmport::graphform::{check_membership, GraphForm, Membership};
use gmport::GmModel;
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

/// Two assets, scenarios `(−1, 0)` with probability `π_1` and `(1, 0)` otherwise.
pub fn paper_model(pi1: f64) -> GmModel {
    GmModel::finite_values(vec![pi1, 1.0 - pi1], vec![v(&[-1.0, 0.0]), v(&[1.0, 0.0])]).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| uniform(rng, -scale, scale))
}

/// `LLᵀ + εI` with `L` entries uniform in `±scale`.
pub fn random_covariance(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| uniform(rng, -scale, scale));
    &l * l.transpose() + DMatrix::identity(n, n) * (0.1 * scale * scale)
}

pub fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| uniform(rng, 0.2, 1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / s).collect()
}

/// Mixture with means in `±mean_scale` and covariances of size `cov_scale²`.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, k: usize, mean_scale: f64, cov_scale: f64) -> GmModel {
    let weights = random_weights(rng, k);
    let means = (0..k).map(|_| random_vector(rng, n, mean_scale)).collect();
    let covs = (0..k).map(|_| random_covariance(rng, n, cov_scale)).collect();
    GmModel::new(weights, means, covs).unwrap()
}

pub fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `K(w, t)` written out from the component parameters.
pub fn cgf(model: &GmModel, w: &DVector<f64>, t: f64) -> f64 {
    let terms: Vec<f64> = (0..model.k())
        .map(|i| {
            let nu = model.means()[i].dot(w);
            let s2 = (&model.covariances()[i] * w).dot(w);
            model.weights()[i].ln() + t * nu + 0.5 * t * t * s2
        })
        .collect();
    lse(&terms)
}

/// `δ K(w/δ, −1) − δ log α`.
pub fn evar_objective(model: &GmModel, alpha: f64, w: &DVector<f64>, delta: f64) -> f64 {
    delta * cgf(model, w, -1.0 / delta) - delta * alpha.ln()
}

/// Golden-section minimum of a unimodal function on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Empirical `VaR_α`: minus the `⌈αN⌉`-th smallest sample.
pub fn empirical_var(mut samples: Vec<f64>, alpha: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let idx = ((alpha * samples.len() as f64).ceil() as usize).max(1) - 1;
    -samples[idx]
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ProbeTally {
    pub agree: usize,
    pub disagree: usize,
    pub in_band: usize,
}

/// Membership probes `(x, f(x) + u)` with `u` drawn on both sides of the
/// boundary. Probes within `band` of the boundary are skipped; everything
/// else must match the sign of `u`.
pub fn membership_probes(
    gf: &GraphForm,
    f: impl Fn(&DVector<f64>) -> f64,
    sample_x: impl Fn(&mut ChaCha8Rng) -> DVector<f64>,
    count: usize,
    seed: u64,
) -> ProbeTally {
    let band = 1e-6;
    let mut rng = rng(seed);
    let mut tally = ProbeTally::default();
    while tally.agree + tally.disagree < count {
        let x = sample_x(&mut rng);
        let fx = f(&x);
        let scale: f64 = [1e-4, 1e-2, 1.0][rng.random_range(0..3)];
        let u = uniform(&mut rng, -scale, scale);
        let t = fx + u;
        if u.abs() <= band * fx.abs().max(1.0) {
            tally.in_band += 1;
            continue;
        }
        let expect = if u > 0.0 { Membership::Member } else { Membership::NonMember };
        if check_membership(gf, &x, t) == expect {
            tally.agree += 1;
        } else {
            tally.disagree += 1;
        }
    }
    tally
}

pub type Oracle = Box<dyn Fn(&DVector<f64>) -> f64>;
pub type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> DVector<f64>>;

/// A graph form together with an independent evaluation of the function it
/// represents and a distribution of probe inputs.
pub struct RuleCase {
    pub name: &'static str,
    pub gf: GraphForm,
    pub f: Oracle,
    pub sample: Sampler,
}

fn boxed(n: usize, scale: f64) -> Sampler {
    Box::new(move |r| random_vector(r, n, scale))
}

/// One case per atom and calculus rule, plus the assembled EVaR form.
pub fn rule_cases() -> Vec<RuleCase> {
    use gmport::graphform::{affine, affine_post, affine_pre, assemble_evar_graphform, compose, lse as gf_lse, perspective, quad};

    let mut r = rng(6);
    let c = v(&[0.5, -1.5]);
    let a_pre = DMatrix::from_row_slice(2, 3, &[1.0, -0.5, 0.2, 0.3, 0.8, -1.0]);
    let b_pre = v(&[0.4, -0.7]);
    let parts: Vec<(DMatrix<f64>, DVector<f64>, f64)> = (0..3)
        .map(|_| {
            let a = DMatrix::from_fn(2, 2, |_, _| uniform(&mut r, -1.0, 1.0));
            let b = random_vector(&mut r, 2, 1.0);
            (a, b, uniform(&mut r, -1.0, 0.0))
        })
        .collect();
    let inners: Vec<GraphForm> = parts
        .iter()
        .map(|(a, b, c0)| affine_post(&affine_pre(&quad(2).unwrap(), a, b).unwrap(), 1.0, *c0).unwrap())
        .collect();
    let model = random_model(&mut r, 2, 2, 0.3, 0.4);
    let with_scale = |lo: f64, hi: f64| -> Sampler {
        Box::new(move |r| v(&[uniform(r, -2.0, 2.0), uniform(r, -2.0, 2.0), uniform(r, lo, hi)]))
    };

    vec![
        RuleCase {
            name: "lse",
            gf: gf_lse(3).unwrap(),
            f: Box::new(|x| lse(x.as_slice())),
            sample: boxed(3, 3.0),
        },
        RuleCase {
            name: "quad",
            gf: quad(3).unwrap(),
            f: Box::new(|x| x.norm_squared()),
            sample: boxed(3, 2.0),
        },
        RuleCase {
            name: "affine",
            gf: affine(c.clone(), 0.25).unwrap(),
            f: Box::new(move |x| c.dot(x) + 0.25),
            sample: boxed(2, 2.0),
        },
        RuleCase {
            name: "affine_pre",
            gf: affine_pre(&quad(2).unwrap(), &a_pre, &b_pre).unwrap(),
            f: Box::new(move |x| (&a_pre * x + &b_pre).norm_squared()),
            sample: boxed(3, 2.0),
        },
        RuleCase {
            name: "affine_post",
            gf: affine_post(&gf_lse(2).unwrap(), 2.5, -0.75).unwrap(),
            f: Box::new(|x| 2.5 * lse(x.as_slice()) - 0.75),
            sample: boxed(2, 2.0),
        },
        RuleCase {
            name: "compose",
            gf: compose(&gf_lse(3).unwrap(), &inners).unwrap(),
            f: Box::new(move |x| {
                let vals: Vec<f64> = parts.iter().map(|(a, b, c0)| (a * x + b).norm_squared() + c0).collect();
                lse(&vals)
            }),
            sample: boxed(2, 1.5),
        },
        RuleCase {
            name: "perspective",
            gf: perspective(&gf_lse(2).unwrap()),
            f: Box::new(|x| x[2] * lse(&[x[0] / x[2], x[1] / x[2]])),
            sample: with_scale(0.05, 3.0),
        },
        RuleCase {
            name: "evar_assembly",
            gf: assemble_evar_graphform(&model).unwrap(),
            f: Box::new(move |x| x[2] * cgf(&model, &v(&[x[0], x[1]]), -1.0 / x[2])),
            sample: with_scale(0.2, 3.0),
        },
    ]
}

pub fn probe_case(case: &RuleCase, count: usize, seed: u64) -> ProbeTally {
    membership_probes(&case.gf, &case.f, &case.sample, count, seed)
}
