//! Deciding `(x, t) ∈ epi f` from a graph form.

use nalgebra::DVector;
use serde::Serialize;

use super::adapter::{ClarabelAdapter, SolverAdapter};
use super::program::{ConeProgram, Triplets};
use super::GraphForm;
use crate::error::{GmError, Result};

/// A witness with cone residual below this certifies membership.
pub const MEMBER_TOL: f64 = 1e-7;
/// Direct evaluation exceeding `t` by more than this certifies non-membership.
pub const NONMEMBER_GAP: f64 = 1e-6;
/// Without a direct evaluation, a minimal violation above this is taken as
/// non-membership.
const NUMERIC_NONMEMBER: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Member,
    NonMember,
    Indeterminate,
}

/// Largest cone violation of `Fx + Gz + td + e`.
pub fn cone_residual(gf: &GraphForm, x: &DVector<f64>, z: &DVector<f64>, t: f64) -> f64 {
    let v = gf.affine_image(x, z, t);
    gf.blocks()
        .map(|(cone, r)| cone.violation(&v.as_slice()[r]))
        .fold(0.0, f64::max)
}

fn checked_input(gf: &GraphForm, x: &DVector<f64>) -> Result<()> {
    if x.len() != gf.n() {
        return Err(GmError::dim(format!("form takes {} inputs, got {}", gf.n(), x.len())));
    }
    Ok(())
}

/// The constant part `Fx + td + e` as a cone-program offset.
fn offset(gf: &GraphForm, x: &DVector<f64>, t: f64) -> Vec<f64> {
    (gf.f() * x + gf.d() * t + gf.e()).iter().copied().collect()
}

/// `min ρ` over `(z, ρ)` with `Fx + Gz + td + e + ρc ∈ C` and `ρ ≥ −1`, where
/// `c` points into each cone's interior. Non-positive values mean a feasible
/// `z` exists. `None` when the solver does not finish.
pub fn min_violation(gf: &GraphForm, x: &DVector<f64>, t: f64) -> Option<f64> {
    checked_input(gf, x).ok()?;
    let m = gf.m();
    let mut entries = Vec::new();
    for r in 0..gf.rows() {
        for c in 0..m {
            entries.push((r, c, gf.g()[(r, c)]));
        }
    }
    let mut row = 0;
    for cone in gf.cones() {
        for v in cone.interior_direction() {
            entries.push((row, m, v));
            row += 1;
        }
    }
    let mut names: Vec<String> = gf.aux_names().to_vec();
    names.push("rho".into());
    let mut lower = vec![f64::NEG_INFINITY; m + 1];
    lower[m] = -1.0;
    let mut objective = vec![0.0; m + 1];
    objective[m] = 1.0;
    let program = ConeProgram {
        var_names: names,
        lower,
        upper: vec![f64::INFINITY; m + 1],
        objective,
        eq: Triplets::new(0, m + 1),
        eq_rhs: Vec::new(),
        cone_matrix: Triplets::from_entries(gf.rows(), m + 1, entries),
        cone_offset: offset(gf, x, t),
        cones: gf.cones().to_vec(),
        row_labels: gf.row_labels().to_vec(),
    };
    let sol = ClarabelAdapter::default().solve(&program).ok()?;
    sol.status.is_solved().then_some(sol.x[m])
}

/// `min t` over `(z, t)` with `Fx + Gz + td + e ∈ C`: the represented
/// function value at `x`, computed from the form alone.
pub fn minimize_t(gf: &GraphForm, x: &DVector<f64>) -> Result<f64> {
    checked_input(gf, x)?;
    let m = gf.m();
    let mut entries = Vec::new();
    for r in 0..gf.rows() {
        for c in 0..m {
            entries.push((r, c, gf.g()[(r, c)]));
        }
        entries.push((r, m, gf.d()[r]));
    }
    let mut names: Vec<String> = gf.aux_names().to_vec();
    names.push("t".into());
    let mut objective = vec![0.0; m + 1];
    objective[m] = 1.0;
    let program = ConeProgram {
        var_names: names,
        lower: vec![f64::NEG_INFINITY; m + 1],
        upper: vec![f64::INFINITY; m + 1],
        objective,
        eq: Triplets::new(0, m + 1),
        eq_rhs: Vec::new(),
        cone_matrix: Triplets::from_entries(gf.rows(), m + 1, entries),
        cone_offset: offset(gf, x, 0.0),
        cones: gf.cones().to_vec(),
        row_labels: gf.row_labels().to_vec(),
    };
    let sol = ClarabelAdapter::default().solve(&program)?;
    if !sol.status.is_solved() {
        return Err(GmError::Adapter(format!("epigraph minimization ended with {:?}", sol.status)));
    }
    Ok(sol.x[m])
}

/// Decide whether `f(x) ≤ t` from the representation.
///
/// An analytic witness is tried first when the form knows its function.
/// Otherwise the auxiliaries are chosen by [`min_violation`]. A residual
/// below [`MEMBER_TOL`] is a member; a direct evaluation above
/// `t + NONMEMBER_GAP` is a non-member; anything else is indeterminate.
pub fn check_membership(gf: &GraphForm, x: &DVector<f64>, t: f64) -> Membership {
    if x.len() != gf.n() || !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Membership::Indeterminate;
    }
    let direct = gf.evaluate(x);
    if direct.is_some_and(|v| t >= v) {
        if let Some(z) = gf.witness(x, t) {
            if cone_residual(gf, x, &z, t) < MEMBER_TOL {
                return Membership::Member;
            }
        }
    }
    let solved = min_violation(gf, x, t);
    if solved.is_some_and(|r| r < MEMBER_TOL) {
        return Membership::Member;
    }
    match direct {
        Some(v) if v - t > NONMEMBER_GAP => Membership::NonMember,
        None if solved.is_some_and(|r| r > NUMERIC_NONMEMBER) => Membership::NonMember,
        _ => Membership::Indeterminate,
    }
}
