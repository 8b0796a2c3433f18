//! Graph-form (cone-representable epigraph) calculus.
//!
//! A [`GraphForm`] represents a convex function `f` through
//! `f(x) ≤ t  ⇔  ∃z : Fx + Gz + td + e ∈ C`, with `C` a product of the cones
//! in [`Cone`]. Second-order cone blocks follow the `‖x‖ ≤ t` layout with the
//! bound in the last row; the exponential cone is
//! `cl{(a, b, c) : b·exp(a/b) ≤ c, b > 0}`.
//!
//! Forms built from the atoms and rules here also carry the expression they
//! represent, which gives direct evaluation and analytic witnesses `z` for
//! [`check_membership`].

mod adapter;
mod membership;
mod program;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};
use crate::linalg;
use crate::lse::log_sum_exp;
use crate::model::GmModel;

pub use adapter::{AdapterSolution, AdapterStatus, ClarabelAdapter, NullAdapter, SolverAdapter};
pub use membership::{
    check_membership, cone_residual, min_violation, minimize_t, Membership, MEMBER_TOL, NONMEMBER_GAP,
};
pub use program::{
    export_cone_program, parse_cone_program, solve_exported_evar, ConeProgram, ConicEvarSolution, Triplets,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Nonnegative(usize),
    Nonpositive(usize),
    /// `{(x, t) : ‖x‖₂ ≤ t}` of the given total length, bound last.
    SecondOrder(usize),
    /// Always three rows.
    Exponential,
    Zero(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Nonnegative(d) | Cone::Nonpositive(d) | Cone::SecondOrder(d) | Cone::Zero(d) => d,
            Cone::Exponential => 3,
        }
    }

    /// Tag used in text fixtures.
    pub fn tag(&self) -> &'static str {
        match self {
            Cone::Nonnegative(_) => "nonneg",
            Cone::Nonpositive(_) => "nonpos",
            Cone::SecondOrder(_) => "soc",
            Cone::Exponential => "exp",
            Cone::Zero(_) => "zero",
        }
    }

    pub fn from_tag(tag: &str, dim: usize) -> Option<Cone> {
        let cone = match tag {
            "nonneg" => Cone::Nonnegative(dim),
            "nonpos" => Cone::Nonpositive(dim),
            "soc" => Cone::SecondOrder(dim),
            "exp" if dim == 3 => Cone::Exponential,
            "zero" => Cone::Zero(dim),
            _ => return None,
        };
        (dim > 0).then_some(cone)
    }

    /// How far `v` is from the cone, zero inside it.
    pub fn violation(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim());
        let worst = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, f64::max);
        match self {
            Cone::Nonnegative(_) => worst(&mut v.iter().map(|x| -x)),
            Cone::Nonpositive(_) => worst(&mut v.iter().copied()),
            Cone::Zero(_) => worst(&mut v.iter().map(|x| x.abs())),
            Cone::SecondOrder(d) => {
                let norm = v[..d - 1].iter().map(|x| x * x).sum::<f64>().sqrt();
                (norm - v[d - 1]).max(0.0)
            }
            Cone::Exponential => {
                let (a, b, c) = (v[0], v[1], v[2]);
                if b > 0.0 {
                    (b * (a / b).exp() - c).max(0.0)
                } else {
                    (-b).max(0.0) + a.max(0.0) + (-c).max(0.0)
                }
            }
        }
    }

    /// A direction pointing into the cone's interior (zero for the zero cone).
    pub(crate) fn interior_direction(&self) -> Vec<f64> {
        match *self {
            Cone::Nonnegative(d) => vec![1.0; d],
            Cone::Nonpositive(d) => vec![-1.0; d],
            Cone::Zero(d) => vec![0.0; d],
            Cone::SecondOrder(d) => {
                let mut v = vec![0.0; d];
                v[d - 1] = 1.0;
                v
            }
            Cone::Exponential => vec![-1.0, 1.0, 1.0],
        }
    }
}

/// The function a form was built to represent.
#[derive(Debug)]
enum Expr {
    Lse(usize),
    Quad,
    Affine { c: DVector<f64>, c0: f64 },
    Pre { inner: Arc<Expr>, a: DMatrix<f64>, b: DVector<f64> },
    Post { inner: Arc<Expr>, a: f64, b: f64 },
    Compose { outer: Arc<Expr>, inners: Vec<Arc<Expr>>, outer_m: usize, inner_ms: Vec<usize> },
    Perspective(Arc<Expr>),
}

impl Expr {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            Expr::Lse(_) => log_sum_exp(x.as_slice()),
            Expr::Quad => x.norm_squared(),
            Expr::Affine { c, c0 } => c.dot(x) + c0,
            Expr::Pre { inner, a, b } => inner.eval(&(a * x + b)),
            Expr::Post { inner, a, b } => a * inner.eval(x) + b,
            Expr::Compose { outer, inners, .. } => {
                let u = DVector::from_iterator(inners.len(), inners.iter().map(|g| g.eval(x)));
                outer.eval(&u)
            }
            Expr::Perspective(inner) => {
                let n = x.len() - 1;
                let s = x[n];
                let head = x.rows(0, n).into_owned();
                if s > 0.0 {
                    s * inner.eval(&(head / s))
                } else if s == 0.0 && head.iter().all(|v| *v == 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Auxiliary values certifying `f(x) ≤ t` when that holds.
    fn witness(&self, x: &DVector<f64>, t: f64) -> Option<DVector<f64>> {
        match self {
            Expr::Lse(k) => Some(DVector::from_iterator(*k, x.iter().map(|xi| (xi - t).exp()))),
            Expr::Quad | Expr::Affine { .. } => Some(DVector::zeros(0)),
            Expr::Pre { inner, a, b } => inner.witness(&(a * x + b), t),
            Expr::Post { inner, a, b } => inner.witness(x, (t - b) / a),
            Expr::Compose { outer, inners, outer_m, inner_ms } => {
                let k = inners.len();
                let g = DVector::from_iterator(k, inners.iter().map(|gi| gi.eval(x)));
                let slack = t - outer.eval(&g);
                // LSE is 1-Lipschitz in the max norm, so raising every t_i by
                // half the slack keeps the outer constraint satisfied.
                let lift = if matches!(**outer, Expr::Lse(_)) && slack > 0.0 { 0.5 * slack } else { 0.0 };
                let ts = g.add_scalar(lift);
                let z0 = outer.witness(&ts, t)?;
                let total = outer_m + k + inner_ms.iter().sum::<usize>();
                let mut z = DVector::zeros(total);
                z.rows_mut(0, *outer_m).copy_from(&z0);
                z.rows_mut(*outer_m, k).copy_from(&ts);
                let mut off = outer_m + k;
                for (i, gi) in inners.iter().enumerate() {
                    let zi = gi.witness(x, ts[i])?;
                    z.rows_mut(off, inner_ms[i]).copy_from(&zi);
                    off += inner_ms[i];
                }
                Some(z)
            }
            Expr::Perspective(inner) => {
                let n = x.len() - 1;
                let s = x[n];
                if s <= 0.0 {
                    return None;
                }
                let head = x.rows(0, n).into_owned() / s;
                inner.witness(&head, t / s).map(|z| z * s)
            }
        }
    }
}

/// Epigraph representation `Fx + Gz + td + e ∈ C`.
#[derive(Debug, Clone)]
pub struct GraphForm {
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    cones: Vec<Cone>,
    row_labels: Vec<String>,
    aux_names: Vec<String>,
    expr: Option<Arc<Expr>>,
}

impl PartialEq for GraphForm {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f && self.g == other.g && self.d == other.d && self.e == other.e && self.cones == other.cones
    }
}

fn check_cones(cones: &[Cone], rows: usize) -> Result<()> {
    if cones.iter().any(|c| c.dim() == 0) {
        return Err(GmError::dim("cone dimensions must be positive"));
    }
    let total: usize = cones.iter().map(Cone::dim).sum();
    if total != rows {
        return Err(GmError::dim(format!("cones cover {total} rows, form has {rows}")));
    }
    Ok(())
}

impl GraphForm {
    /// A form from raw data. It carries no expression, so membership checks
    /// fall back to numerical violation minimization.
    pub fn new(f: DMatrix<f64>, g: DMatrix<f64>, d: DVector<f64>, e: DVector<f64>, cones: Vec<Cone>) -> Result<Self> {
        let p = f.nrows();
        if g.nrows() != p || d.len() != p || e.len() != p {
            return Err(GmError::dim("F, G, d and e must have the same number of rows"));
        }
        check_cones(&cones, p)?;
        let row_labels = (1..=p).map(|i| format!("r{i}")).collect();
        let aux_names = (1..=g.ncols()).map(|i| format!("z{i}")).collect();
        Ok(GraphForm { f, g, d, e, cones, row_labels, aux_names, expr: None })
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn e(&self) -> &DVector<f64> {
        &self.e
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn aux_names(&self) -> &[String] {
        &self.aux_names
    }

    /// Input dimension.
    pub fn n(&self) -> usize {
        self.f.ncols()
    }

    /// Auxiliary dimension.
    pub fn m(&self) -> usize {
        self.g.ncols()
    }

    pub fn rows(&self) -> usize {
        self.f.nrows()
    }

    /// Direct evaluation of the represented function, when known.
    pub fn evaluate(&self, x: &DVector<f64>) -> Option<f64> {
        (x.len() == self.n()).then(|| self.expr.as_ref().map(|e| e.eval(x)))?
    }

    /// Analytic auxiliary values for `(x, t)`, when known.
    pub fn witness(&self, x: &DVector<f64>, t: f64) -> Option<DVector<f64>> {
        if x.len() != self.n() {
            return None;
        }
        self.expr.as_ref()?.witness(x, t)
    }

    /// `Fx + Gz + td + e`.
    pub fn affine_image(&self, x: &DVector<f64>, z: &DVector<f64>, t: f64) -> DVector<f64> {
        &self.f * x + &self.g * z + &self.d * t + &self.e
    }

    /// Row ranges of the cone blocks.
    pub fn blocks(&self) -> impl Iterator<Item = (Cone, std::ops::Range<usize>)> + '_ {
        let mut start = 0;
        self.cones.iter().map(move |c| {
            let r = start..start + c.dim();
            start = r.end;
            (*c, r)
        })
    }
}

/// `log Σ exp(x_i)` on `R^k`: `(3k+1)` rows over `R_− × C_exp^k` with
/// auxiliary `u` and witness `u_i = exp(x_i − t)`.
pub fn lse(k: usize) -> Result<GraphForm> {
    if k == 0 {
        return Err(GmError::dim("log-sum-exp needs k ≥ 1"));
    }
    let p = 3 * k + 1;
    let mut f = DMatrix::zeros(p, k);
    let mut g = DMatrix::zeros(p, k);
    let mut d = DVector::zeros(p);
    let mut e = DVector::zeros(p);
    let mut labels = vec!["lse.sum".to_string()];
    g.row_mut(0).fill(1.0);
    e[0] = -1.0;
    for i in 0..k {
        let r = 1 + 3 * i;
        f[(r, i)] = 1.0;
        d[r] = -1.0;
        e[r + 1] = 1.0;
        g[(r + 2, i)] = 1.0;
        for part in ["a", "b", "c"] {
            labels.push(format!("lse{}.{part}", i + 1));
        }
    }
    let mut cones = vec![Cone::Nonpositive(1)];
    cones.extend(std::iter::repeat_n(Cone::Exponential, k));
    Ok(GraphForm {
        f,
        g,
        d,
        e,
        cones,
        row_labels: labels,
        aux_names: (1..=k).map(|i| format!("u{i}")).collect(),
        expr: Some(Arc::new(Expr::Lse(k))),
    })
}

/// `xᵀx` on `R^n` through `‖(x, (t−1)/2)‖ ≤ (t+1)/2`: `n + 2` rows, one
/// second-order cone, no auxiliaries.
pub fn quad(n: usize) -> Result<GraphForm> {
    if n == 0 {
        return Err(GmError::dim("quadratic needs n ≥ 1"));
    }
    let p = n + 2;
    let mut f = DMatrix::zeros(p, n);
    f.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut d = DVector::zeros(p);
    let mut e = DVector::zeros(p);
    d[n] = 0.5;
    d[n + 1] = 0.5;
    e[n] = -0.5;
    e[n + 1] = 0.5;
    let mut labels: Vec<String> = (1..=n).map(|j| format!("quad.x{j}")).collect();
    labels.push("quad.lo".into());
    labels.push("quad.hi".into());
    Ok(GraphForm {
        f,
        g: DMatrix::zeros(p, 0),
        d,
        e,
        cones: vec![Cone::SecondOrder(p)],
        row_labels: labels,
        aux_names: Vec::new(),
        expr: Some(Arc::new(Expr::Quad)),
    })
}

/// `cᵀx + c0` as the single row `cᵀx − t + c0 ≤ 0`.
pub fn affine(c: DVector<f64>, c0: f64) -> Result<GraphForm> {
    if c.is_empty() {
        return Err(GmError::dim("affine atom needs n ≥ 1"));
    }
    Ok(GraphForm {
        f: DMatrix::from_row_slice(1, c.len(), c.as_slice()),
        g: DMatrix::zeros(1, 0),
        d: DVector::from_element(1, -1.0),
        e: DVector::from_element(1, c0),
        cones: vec![Cone::Nonpositive(1)],
        row_labels: vec!["affine".into()],
        aux_names: Vec::new(),
        expr: Some(Arc::new(Expr::Affine { c, c0 })),
    })
}

/// `g(x) = f(Ax + b)`: `F ← FA`, `e ← Fb + e`.
pub fn affine_pre(gf: &GraphForm, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<GraphForm> {
    if a.nrows() != gf.n() || b.len() != gf.n() {
        return Err(GmError::dim(format!(
            "pre-composition map is {}x{} with offset {}, form input is {}",
            a.nrows(),
            a.ncols(),
            b.len(),
            gf.n()
        )));
    }
    Ok(GraphForm {
        f: &gf.f * a,
        e: &gf.f * b + &gf.e,
        expr: gf.expr.as_ref().map(|inner| {
            Arc::new(Expr::Pre { inner: inner.clone(), a: a.clone(), b: b.clone() })
        }),
        ..gf.clone()
    })
}

/// `h(x) = a·f(x) + b` with `a > 0`: `d ← d/a`, `e ← e − (b/a)d`.
pub fn affine_post(gf: &GraphForm, a: f64, b: f64) -> Result<GraphForm> {
    if !(a > 0.0 && a.is_finite()) || !b.is_finite() {
        return Err(GmError::param(format!("post-composition needs finite a > 0 and finite b, got a={a}, b={b}")));
    }
    Ok(GraphForm {
        d: &gf.d / a,
        e: &gf.e - &gf.d * (b / a),
        expr: gf.expr.as_ref().map(|inner| Arc::new(Expr::Post { inner: inner.clone(), a, b })),
        ..gf.clone()
    })
}

/// `K(w) = S(g_1(w), …, g_k(w))` for `S` increasing in every argument.
///
/// Auxiliaries are stacked as `(z_0, t_1, …, t_k, z_1, …, z_k)` and cones as
/// `C_0 × C_1 × ⋯ × C_k`.
pub fn compose(outer: &GraphForm, inners: &[GraphForm]) -> Result<GraphForm> {
    let k = inners.len();
    if k == 0 || outer.n() != k {
        return Err(GmError::dim(format!("outer form takes {} inputs, {k} inner forms given", outer.n())));
    }
    let n = inners[0].n();
    if inners.iter().any(|g| g.n() != n) {
        return Err(GmError::dim("inner forms disagree on input dimension"));
    }
    let p = outer.rows() + inners.iter().map(GraphForm::rows).sum::<usize>();
    let m = outer.m() + k + inners.iter().map(GraphForm::m).sum::<usize>();
    let mut f = DMatrix::zeros(p, n);
    let mut g = DMatrix::zeros(p, m);
    let mut d = DVector::zeros(p);
    let mut e = DVector::zeros(p);
    let p0 = outer.rows();
    g.view_mut((0, 0), (p0, outer.m())).copy_from(&outer.g);
    g.view_mut((0, outer.m()), (p0, k)).copy_from(&outer.f);
    d.rows_mut(0, p0).copy_from(&outer.d);
    e.rows_mut(0, p0).copy_from(&outer.e);
    let mut cones = outer.cones.clone();
    let mut labels = outer.row_labels.clone();
    let mut aux = outer.aux_names.clone();
    aux.extend((1..=k).map(|i| format!("t{i}")));
    let (mut row, mut col) = (p0, outer.m() + k);
    for (i, gi) in inners.iter().enumerate() {
        let pi = gi.rows();
        f.view_mut((row, 0), (pi, n)).copy_from(&gi.f);
        g.view_mut((row, outer.m() + i), (pi, 1)).copy_from(&gi.d);
        g.view_mut((row, col), (pi, gi.m())).copy_from(&gi.g);
        e.rows_mut(row, pi).copy_from(&gi.e);
        cones.extend_from_slice(&gi.cones);
        labels.extend(gi.row_labels.iter().map(|l| format!("g{}.{l}", i + 1)));
        aux.extend(gi.aux_names.iter().map(|a| format!("g{}.{a}", i + 1)));
        row += pi;
        col += gi.m();
    }
    let expr = match (&outer.expr, inners.iter().map(|g| g.expr.clone()).collect::<Option<Vec<_>>>()) {
        (Some(o), Some(is)) => Some(Arc::new(Expr::Compose {
            outer: o.clone(),
            inners: is,
            outer_m: outer.m(),
            inner_ms: inners.iter().map(GraphForm::m).collect(),
        })),
        _ => None,
    };
    Ok(GraphForm { f, g, d, e, cones, row_labels: labels, aux_names: aux, expr })
}

/// `p(x, s) = s·f(x/s)`: `F̃ = [F e]`, `ẽ = 0`, input becomes `(x, s)`.
pub fn perspective(gf: &GraphForm) -> GraphForm {
    let p = gf.rows();
    let n = gf.n();
    let mut f = DMatrix::zeros(p, n + 1);
    f.view_mut((0, 0), (p, n)).copy_from(&gf.f);
    f.set_column(n, &gf.e);
    GraphForm {
        f,
        e: DVector::zeros(p),
        expr: gf.expr.as_ref().map(|inner| Arc::new(Expr::Perspective(inner.clone()))),
        ..gf.clone()
    }
}

/// Relative size of the ridge added to a singular, nonzero covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-9;

/// `Σ + ρI` with `ρ = 1e-9·tr(Σ)/n` when `Σ` has no inverse square root.
pub fn ridged_covariance(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    if linalg::psd_inv_sqrt(sigma).is_some() {
        return sigma.clone();
    }
    let n = sigma.nrows();
    sigma + DMatrix::identity(n, n) * (COVARIANCE_RIDGE * sigma.trace() / n as f64)
}

/// `g(w) = log π − μᵀw + ½wᵀΣw`.
///
/// With `Σ ≠ 0` this is the quadratic atom pre-composed with
/// `A = Σ^{1/2}/√2`, `b = −(√2/2)Σ^{−1/2}μ` and post-composed with the offset
/// `log π − ½μᵀΣ⁻¹μ`. A zero covariance makes `g` affine and uses the affine
/// atom instead.
pub fn component_graphform(pi: f64, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<GraphForm> {
    if linalg::is_zero(sigma) {
        return affine(-mu, pi.ln());
    }
    let sigma = ridged_covariance(sigma);
    let inv_sqrt = linalg::psd_inv_sqrt(&sigma)
        .ok_or_else(|| GmError::Singular("component covariance is singular after the ridge".into()))?;
    let a = linalg::psd_sqrt(&sigma) / std::f64::consts::SQRT_2;
    let scaled = &inv_sqrt * mu;
    let b = &scaled * (-std::f64::consts::FRAC_1_SQRT_2);
    let offset = pi.ln() - 0.5 * scaled.norm_squared();
    affine_post(&affine_pre(&quad(mu.len())?, &a, &b)?, 1.0, offset)
}

/// `K(w) = K(w, −1)` for the mixture.
pub fn cgf_graphform(model: &GmModel) -> Result<GraphForm> {
    let inners = (0..model.k())
        .map(|i| component_graphform(model.weights()[i], &model.means()[i], &model.covariances()[i]))
        .collect::<Result<Vec<_>>>()?;
    compose(&lse(model.k())?, &inners)
}

/// Graph form of `P(w, δ) = δ K(w/δ, −1)` over the input `(w, δ)`.
pub fn assemble_evar_graphform(model: &GmModel) -> Result<GraphForm> {
    Ok(perspective(&cgf_graphform(model)?))
}
