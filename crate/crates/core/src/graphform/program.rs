//! Standard-form cone programs and their text fixture format.
//!
//! A [`ConeProgram`] is
//!
//! ```text
//! minimize    cᵀv
//! subject to  A_eq v = b_eq
//!             A_c v + b_c ∈ C
//!             lower ≤ v ≤ upper
//! ```
//!
//! with `C` a product of [`Cone`]s in the graph-form orientation
//! (second-order bound last). The EVaR export orders variables as
//! `(w_1, …, w_n, delta, t, auxiliaries…)`.
//!
//! The text format is line based, with `#` comments and blank lines ignored:
//!
//! ```text
//! CONEPROGRAM v1
//! VARS <count>
//! <name> <lower> <upper> <objective>        one line per variable
//! EQ <rows> <nonzeros>
//! rhs <value>                               one line per row
//! <row> <col> <value>                       one line per nonzero
//! CONES <blocks> <rows> <nonzeros>
//! <kind> <dim>                              one line per block
//! <kind> <offset> <label>                   one line per row
//! <row> <col> <value>                       one line per nonzero
//! END
//! ```

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::{assemble_evar_graphform, Cone, SolverAdapter};
use crate::error::{GmError, Result};
use crate::feasible::FeasibleSet;
use crate::graphform::adapter::{AdapterSolution, AdapterStatus};
use crate::model::GmModel;

/// Sparse matrix as sorted `(row, col, value)` entries without zeros or
/// duplicates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets { nrows, ncols, entries: Vec::new() }
    }

    /// Collect entries, summing duplicates and dropping zeros.
    pub fn from_entries(nrows: usize, ncols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by_key(|a| (a.0, a.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);
        Triplets { nrows, ncols, entries: merged }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        for &(r, c, x) in &self.entries {
            out[r] += x * v[c];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    pub var_names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: Vec<f64>,
    pub eq: Triplets,
    pub eq_rhs: Vec<f64>,
    pub cone_matrix: Triplets,
    pub cone_offset: Vec<f64>,
    pub cones: Vec<Cone>,
    /// Name of the graph-form row behind each cone row.
    pub row_labels: Vec<String>,
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace) && !s.starts_with('#')
}

impl ConeProgram {
    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|v| v == name)
    }

    /// Check every dimension and value invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n || self.objective.len() != n {
            return Err(GmError::dim("bounds and objective must have one entry per variable"));
        }
        if let Some(name) = self.var_names.iter().find(|s| !valid_token(s)) {
            return Err(GmError::param(format!("invalid variable name '{name}'")));
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(GmError::param(format!("bad bounds on '{}'", self.var_names[j])));
            }
            if !self.objective[j].is_finite() {
                return Err(GmError::NonFinite(format!("objective coefficient of '{}'", self.var_names[j])));
            }
        }
        for (label, m, rows) in [("equality", &self.eq, self.eq_rhs.len()), ("cone", &self.cone_matrix, self.cone_offset.len())] {
            if m.nrows != rows || m.ncols != n {
                return Err(GmError::dim(format!("{label} matrix is {}x{}, expected {rows}x{n}", m.nrows, m.ncols)));
            }
            if m.entries.iter().any(|&(r, c, v)| r >= m.nrows || c >= m.ncols || !v.is_finite()) {
                return Err(GmError::param(format!("{label} matrix has an out-of-range or non-finite entry")));
            }
        }
        if self.eq_rhs.iter().chain(&self.cone_offset).any(|v| !v.is_finite()) {
            return Err(GmError::NonFinite("constraint constants".into()));
        }
        if self.row_labels.len() != self.cone_offset.len() {
            return Err(GmError::dim("one label per cone row is required"));
        }
        if let Some(l) = self.row_labels.iter().find(|s| !valid_token(s)) {
            return Err(GmError::param(format!("invalid row label '{l}'")));
        }
        super::check_cones(&self.cones, self.cone_offset.len())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any equality, cone or bound constraint at `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let eq = self
            .eq
            .mul(x)
            .iter()
            .zip(&self.eq_rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let mut rows = self.cone_matrix.mul(x);
        rows.iter_mut().zip(&self.cone_offset).for_each(|(r, b)| *r += b);
        let mut start = 0;
        let mut cone = 0.0f64;
        for c in &self.cones {
            cone = cone.max(c.violation(&rows[start..start + c.dim()]));
            start += c.dim();
        }
        let bounds = (0..x.len())
            .map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0))
            .fold(0.0, f64::max);
        eq.max(cone).max(bounds)
    }

    /// Deterministic text fixture.
    pub fn to_text(&self) -> String {
        let mut s = String::from("CONEPROGRAM v1\n");
        let _ = writeln!(s, "VARS {}", self.num_vars());
        for j in 0..self.num_vars() {
            let _ = writeln!(s, "{} {:?} {:?} {:?}", self.var_names[j], self.lower[j], self.upper[j], self.objective[j]);
        }
        let _ = writeln!(s, "EQ {} {}", self.eq_rhs.len(), self.eq.entries.len());
        for b in &self.eq_rhs {
            let _ = writeln!(s, "rhs {b:?}");
        }
        for (r, c, v) in &self.eq.entries {
            let _ = writeln!(s, "{r} {c} {v:?}");
        }
        let _ = writeln!(
            s,
            "CONES {} {} {}",
            self.cones.len(),
            self.cone_offset.len(),
            self.cone_matrix.entries.len()
        );
        for c in &self.cones {
            let _ = writeln!(s, "{} {}", c.tag(), c.dim());
        }
        let mut row = 0;
        for c in &self.cones {
            for _ in 0..c.dim() {
                let _ = writeln!(s, "{} {:?} {}", c.tag(), self.cone_offset[row], self.row_labels[row]);
                row += 1;
            }
        }
        for (r, c, v) in &self.cone_matrix.entries {
            let _ = writeln!(s, "{r} {c} {v:?}");
        }
        s.push_str("END\n");
        s
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_tokens(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Ok((i + 1, line.split_whitespace().collect()));
        }
        Err(GmError::parse(self.last + 1, "unexpected end of input"))
    }

    fn header(&mut self, keyword: &str, fields: usize) -> Result<(usize, Vec<usize>)> {
        let (line, toks) = self.next_tokens()?;
        if toks.first() != Some(&keyword) || toks.len() != fields + 1 {
            return Err(GmError::parse(line, format!("expected '{keyword}' with {fields} counts")));
        }
        let counts = toks[1..]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| GmError::parse(line, format!("bad count '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        Ok((line, counts))
    }
}

fn num(line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| GmError::parse(line, format!("'{tok}' is not a number")))
}

fn index(line: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| GmError::parse(line, format!("'{tok}' is not an index")))
}

fn entry(lines: &mut Lines, nrows: usize, ncols: usize) -> Result<(usize, usize, f64)> {
    let (line, t) = lines.next_tokens()?;
    if t.len() != 3 {
        return Err(GmError::parse(line, "expected 'row col value'"));
    }
    let (r, c, v) = (index(line, t[0])?, index(line, t[1])?, num(line, t[2])?);
    if r >= nrows || c >= ncols {
        return Err(GmError::parse(line, format!("entry ({r}, {c}) outside {nrows}x{ncols}")));
    }
    Ok((r, c, v))
}

/// Parse a text fixture written by [`ConeProgram::to_text`].
pub fn parse_cone_program(text: &str) -> Result<ConeProgram> {
    let mut lines = Lines { inner: text.lines().enumerate(), last: 0 };
    let (line, toks) = lines.next_tokens()?;
    if toks != ["CONEPROGRAM", "v1"] {
        return Err(GmError::parse(line, "expected 'CONEPROGRAM v1'"));
    }
    let (_, c) = lines.header("VARS", 1)?;
    let nv = c[0];
    let (mut names, mut lower, mut upper, mut objective) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..nv {
        let (line, t) = lines.next_tokens()?;
        if t.len() != 4 {
            return Err(GmError::parse(line, "expected 'name lower upper objective'"));
        }
        names.push(t[0].to_string());
        lower.push(num(line, t[1])?);
        upper.push(num(line, t[2])?);
        objective.push(num(line, t[3])?);
    }
    let (_, c) = lines.header("EQ", 2)?;
    let (eq_rows, eq_nnz) = (c[0], c[1]);
    let mut eq_rhs = Vec::new();
    for _ in 0..eq_rows {
        let (line, t) = lines.next_tokens()?;
        if t.len() != 2 || t[0] != "rhs" {
            return Err(GmError::parse(line, "expected 'rhs value'"));
        }
        eq_rhs.push(num(line, t[1])?);
    }
    let mut eq_entries = Vec::new();
    for _ in 0..eq_nnz {
        eq_entries.push(entry(&mut lines, eq_rows, nv)?);
    }
    let (cone_line, c) = lines.header("CONES", 3)?;
    let (blocks, rows, nnz) = (c[0], c[1], c[2]);
    let mut cones = Vec::new();
    for _ in 0..blocks {
        let (line, t) = lines.next_tokens()?;
        let cone = match t.as_slice() {
            [tag, dim] => Cone::from_tag(tag, index(line, dim)?),
            _ => None,
        };
        cones.push(cone.ok_or_else(|| GmError::parse(line, "expected a cone 'kind dim'"))?);
    }
    if cones.iter().map(Cone::dim).sum::<usize>() != rows {
        return Err(GmError::parse(cone_line, "cone block dimensions do not add up to the row count"));
    }
    let mut kinds = cones.iter().flat_map(|c| std::iter::repeat_n(c.tag(), c.dim()));
    let (mut offsets, mut labels) = (Vec::new(), Vec::new());
    for _ in 0..rows {
        let (line, t) = lines.next_tokens()?;
        if t.len() != 3 {
            return Err(GmError::parse(line, "expected 'kind offset label'"));
        }
        if kinds.next() != Some(t[0]) {
            return Err(GmError::parse(line, format!("row kind '{}' does not match its cone block", t[0])));
        }
        offsets.push(num(line, t[1])?);
        labels.push(t[2].to_string());
    }
    let mut entries = Vec::new();
    for _ in 0..nnz {
        entries.push(entry(&mut lines, rows, nv)?);
    }
    let (line, t) = lines.next_tokens()?;
    if t != ["END"] {
        return Err(GmError::parse(line, "expected 'END'"));
    }
    let program = ConeProgram {
        var_names: names,
        lower,
        upper,
        objective,
        eq: Triplets::from_entries(eq_rows, nv, eq_entries),
        eq_rhs,
        cone_matrix: Triplets::from_entries(rows, nv, entries),
        cone_offset: offsets,
        cones,
        row_labels: labels,
    };
    program.validate().map_err(|e| match e {
        GmError::Parse { .. } => e,
        other => GmError::parse(line, other.to_string()),
    })?;
    Ok(program)
}

/// The EVaR problem `minimize t − δ log α` over `(w, δ, t, z)` subject to
/// `1ᵀw = 1`, the bounds on `w`, `δ ≥ 0`, and the graph form of
/// `δ K(w/δ, −1) ≤ t`.
pub fn export_cone_program(model: &GmModel, alpha: f64, feasible: &FeasibleSet) -> Result<ConeProgram> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GmError::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = model.n();
    if feasible.n() != n {
        return Err(GmError::dim(format!("feasible set has {} assets, model has {n}", feasible.n())));
    }
    let gf = assemble_evar_graphform(model)?;
    let m = gf.m();
    let nv = n + 2 + m;
    let (delta, t) = (n, n + 1);
    let mut var_names: Vec<String> = (1..=n).map(|j| format!("w{j}")).collect();
    var_names.push("delta".into());
    var_names.push("t".into());
    var_names.extend(gf.aux_names().iter().cloned());
    let mut lower = vec![f64::NEG_INFINITY; nv];
    let mut upper = vec![f64::INFINITY; nv];
    for j in 0..n {
        lower[j] = feasible.lower_at(j);
        upper[j] = feasible.upper_at(j);
    }
    lower[delta] = 0.0;
    let mut objective = vec![0.0; nv];
    objective[delta] = -alpha.ln();
    objective[t] = 1.0;
    let eq = Triplets::from_entries(1, nv, (0..n).map(|j| (0, j, 1.0)).collect());
    let mut entries = Vec::new();
    for r in 0..gf.rows() {
        for c in 0..=n {
            entries.push((r, c, gf.f()[(r, c)]));
        }
        entries.push((r, t, gf.d()[r]));
        for c in 0..m {
            entries.push((r, n + 2 + c, gf.g()[(r, c)]));
        }
    }
    let program = ConeProgram {
        var_names,
        lower,
        upper,
        objective,
        eq,
        eq_rhs: vec![1.0],
        cone_matrix: Triplets::from_entries(gf.rows(), nv, entries),
        cone_offset: gf.e().iter().copied().collect(),
        cones: gf.cones().to_vec(),
        row_labels: gf.row_labels().to_vec(),
    };
    program.validate()?;
    Ok(program)
}

#[derive(Debug, Clone)]
pub struct ConicEvarSolution {
    pub weights: DVector<f64>,
    pub delta: f64,
    pub t: f64,
    /// `t − δ log α` as reported by the adapter.
    pub objective: f64,
    pub status: AdapterStatus,
    /// Largest constraint violation of the returned point.
    pub residual: f64,
}

/// Export the EVaR cone program and solve it through `adapter`.
pub fn solve_exported_evar(
    model: &GmModel,
    alpha: f64,
    feasible: &FeasibleSet,
    adapter: &dyn SolverAdapter,
) -> Result<ConicEvarSolution> {
    let program = export_cone_program(model, alpha, feasible)?;
    let AdapterSolution { status, x, objective } = adapter.solve(&program)?;
    let n = model.n();
    if x.len() != program.num_vars() {
        return Err(GmError::Adapter(format!("{} returned {} values for {} variables", adapter.name(), x.len(), program.num_vars())));
    }
    Ok(ConicEvarSolution {
        weights: DVector::from_column_slice(&x[..n]),
        delta: x[n],
        t: x[n + 1],
        objective,
        status,
        residual: program.residual(&x),
    })
}
