//! Solver adapters consuming a [`ConeProgram`].

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT, SupportedConeT::*,
};
use serde::Serialize;

use super::{Cone, ConeProgram};
use crate::error::{GmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterStatus {
    Solved,
    /// Solved to reduced accuracy.
    Inaccurate,
    Infeasible,
    Unbounded,
    Failed,
    /// The adapter does not solve programs.
    NotSolved,
}

impl AdapterStatus {
    pub fn is_solved(self) -> bool {
        matches!(self, AdapterStatus::Solved | AdapterStatus::Inaccurate)
    }
}

#[derive(Debug, Clone)]
pub struct AdapterSolution {
    pub status: AdapterStatus,
    /// Variable values in program order.
    pub x: Vec<f64>,
    pub objective: f64,
}

pub trait SolverAdapter {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConeProgram) -> Result<AdapterSolution>;
}

/// Validates the program and returns it unsolved.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullAdapter;

impl SolverAdapter for NullAdapter {
    fn name(&self) -> &'static str {
        "null"
    }

    fn solve(&self, program: &ConeProgram) -> Result<AdapterSolution> {
        program.validate()?;
        Ok(AdapterSolution {
            status: AdapterStatus::NotSolved,
            x: vec![0.0; program.num_vars()],
            objective: f64::NAN,
        })
    }
}

/// Interior-point solve with Clarabel.
#[derive(Debug, Clone, Copy)]
pub struct ClarabelAdapter {
    pub tolerance: f64,
    pub max_iter: u32,
}

impl Default for ClarabelAdapter {
    fn default() -> Self {
        ClarabelAdapter { tolerance: 1e-9, max_iter: 200 }
    }
}

/// Clarabel solves `min qᵀx` s.t. `b − Ax ∈ K`. Each program row `r` with
/// value `a_r·v + b_r` lands at clarabel position `pos` with sign `σ` so that
/// `s_pos = σ(a_r·v + b_r)`.
struct Layout {
    rows: Vec<(usize, f64)>,
    cones: Vec<SupportedConeT<f64>>,
    total: usize,
}

fn layout(program: &ConeProgram) -> Layout {
    let mut rows = vec![(0, 1.0); program.cone_offset.len()];
    let mut cones = Vec::with_capacity(program.cones.len() + 2);
    let mut pos = program.eq_rhs.len();
    if pos > 0 {
        cones.push(ZeroConeT(pos));
    }
    let mut start = 0;
    for cone in &program.cones {
        let d = cone.dim();
        match *cone {
            Cone::Nonnegative(_) => cones.push(NonnegativeConeT(d)),
            Cone::Nonpositive(_) => cones.push(NonnegativeConeT(d)),
            Cone::Zero(_) => cones.push(ZeroConeT(d)),
            Cone::SecondOrder(_) => cones.push(SecondOrderConeT(d)),
            Cone::Exponential => cones.push(ExponentialConeT()),
        }
        let sign = if matches!(cone, Cone::Nonpositive(_)) { -1.0 } else { 1.0 };
        for i in 0..d {
            // clarabel puts the second-order bound first
            let slot = match cone {
                Cone::SecondOrder(_) => (i + 1) % d,
                _ => i,
            };
            rows[start + i] = (pos + slot, sign);
        }
        start += d;
        pos += d;
    }
    Layout { rows, cones, total: pos }
}

impl SolverAdapter for ClarabelAdapter {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, program: &ConeProgram) -> Result<AdapterSolution> {
        program.validate()?;
        let nv = program.num_vars();
        let Layout { rows, mut cones, total } = layout(program);
        let mut ai = Vec::new();
        let mut aj = Vec::new();
        let mut av = Vec::new();
        let mut b = vec![0.0; total];
        for &(r, c, v) in &program.eq.entries {
            ai.push(r);
            aj.push(c);
            av.push(v);
        }
        b[..program.eq_rhs.len()].copy_from_slice(&program.eq_rhs);
        for &(r, c, v) in &program.cone_matrix.entries {
            let (pos, sign) = rows[r];
            ai.push(pos);
            aj.push(c);
            av.push(-sign * v);
        }
        for (r, off) in program.cone_offset.iter().enumerate() {
            let (pos, sign) = rows[r];
            b[pos] = sign * off;
        }
        let mut bounds = 0;
        for j in 0..nv {
            if program.lower[j].is_finite() {
                ai.push(total + bounds);
                aj.push(j);
                av.push(-1.0);
                b.push(-program.lower[j]);
                bounds += 1;
            }
            if program.upper[j].is_finite() {
                ai.push(total + bounds);
                aj.push(j);
                av.push(1.0);
                b.push(program.upper[j]);
                bounds += 1;
            }
        }
        if bounds > 0 {
            cones.push(NonnegativeConeT(bounds));
        }
        let a = CscMatrix::new_from_triplets(total + bounds, nv, ai, aj, av);
        let p = CscMatrix::zeros((nv, nv));
        let settings = DefaultSettings {
            verbose: false,
            max_iter: self.max_iter,
            tol_gap_abs: self.tolerance,
            tol_gap_rel: self.tolerance,
            tol_feas: self.tolerance,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &program.objective, &a, &b, &cones, settings)
            .map_err(|e| GmError::Adapter(format!("clarabel rejected the program: {e:?}")))?;
        solver.solve();
        let status = match solver.solution.status {
            SolverStatus::Solved => AdapterStatus::Solved,
            SolverStatus::AlmostSolved => AdapterStatus::Inaccurate,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => AdapterStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => AdapterStatus::Unbounded,
            _ => AdapterStatus::Failed,
        };
        Ok(AdapterSolution {
            status,
            x: solver.solution.x.clone(),
            objective: solver.solution.obj_val,
        })
    }
}
