//! Dense semidefinite feasibility and linear-objective solver over structured
//! matrix variables.
//!
//! Problems are affine matrix inequalities in symmetric, rectangular and
//! scalar variables. The backend is a path-following barrier method on the
//! stacked blocks: each strict inequality is normalized to `S(θ) ≻ 0`,
//! feasibility minimizes an auxiliary slack until the true margins hold, and
//! objectives (linear functionals or `−log det` of one symmetric variable)
//! are driven along the central path with exact Newton steps.
//!
//! Everything is deterministic: no randomization, fixed iteration schedules,
//! and every FEASIBLE answer is re-checked by direct eigenvalue evaluation of
//! the original constraints.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, SymMat};

#[derive(Debug, Error)]
pub enum LmiError {
    #[error("problem structure error: {0}")]
    Structure(String),
    #[error("objective is unbounded below")]
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarShape {
    Symmetric(usize),
    Rectangular(usize, usize),
    Scalar,
}

impl VarShape {
    fn rows(&self) -> usize {
        match *self {
            VarShape::Symmetric(d) => d,
            VarShape::Rectangular(r, _) => r,
            VarShape::Scalar => 1,
        }
    }

    fn cols(&self) -> usize {
        match *self {
            VarShape::Symmetric(d) => d,
            VarShape::Rectangular(_, c) => c,
            VarShape::Scalar => 1,
        }
    }

    fn param_count(&self) -> usize {
        match *self {
            VarShape::Symmetric(d) => d * (d + 1) / 2,
            VarShape::Rectangular(r, c) => r * c,
            VarShape::Scalar => 1,
        }
    }
}

#[derive(Debug, Clone)]
struct Variable {
    name: String,
    shape: VarShape,
    /// Entries pinned to zero (row, col); for symmetric shapes the mirrored
    /// entry is pinned too.
    fixed_zeros: Vec<(usize, usize)>,
    offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// Expression ≺ 0, realized as λ_max ≤ −margin.
    NegDef,
    /// Expression ≻ 0, realized as λ_min ≥ margin.
    PosDef,
    /// Expression ⪰ 0 (interior iterates keep it ≻ 0).
    PosSemiDef,
}

#[derive(Debug, Clone)]
enum TermKind {
    /// left · V · right, optionally with the transposed product added.
    Sandwich {
        left: DMatrix<f64>,
        right: DMatrix<f64>,
        transpose_var: bool,
        with_transpose: bool,
    },
    /// scalar variable times a constant symmetric coefficient.
    Scaled { coeff: DMatrix<f64> },
}

#[derive(Debug, Clone)]
struct Term {
    var: usize,
    kind: TermKind,
}

#[derive(Debug, Clone)]
struct Constraint {
    label: String,
    sense: Sense,
    constant: DMatrix<f64>,
    terms: Vec<Term>,
    margin: Option<f64>,
}

/// Linear functional Σ tr(coeffᵢ · varᵢ) over the declared variables.
#[derive(Debug, Clone, Default)]
pub struct LinearObjective {
    terms: Vec<(String, DMatrix<f64>)>,
}

impl LinearObjective {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `tr(coeff · var)`; for a scalar variable `coeff` is 1×1.
    pub fn trace_term(mut self, var: &str, coeff: DMatrix<f64>) -> Self {
        self.terms.push((var.to_string(), coeff));
        self
    }
}

#[derive(Debug, Clone)]
pub enum Objective {
    Feasibility,
    Minimize(LinearObjective),
    /// Maximize log det of a symmetric variable (smallest-set criterion).
    MaxLogDet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub status: SolveStatus,
    pub assignment: BTreeMap<String, DMatrix<f64>>,
    /// Most-violated margin-shifted eigenvalue across constraints; negative
    /// values certify strict feasibility with that much slack.
    pub worst_margin: f64,
    pub objective: Option<f64>,
    pub outer_iterations: usize,
}

impl LmiSolution {
    pub fn matrix(&self, name: &str) -> &DMatrix<f64> {
        &self.assignment[name]
    }

    pub fn symmetric(&self, name: &str) -> SymMat {
        SymMat::symmetrize(self.assignment[name].clone()).expect("symmetric variable")
    }

    pub fn scalar(&self, name: &str) -> f64 {
        self.assignment[name][(0, 0)]
    }

    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Feasible
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Cap on outer barrier stages per phase.
    pub max_outer: usize,
    /// Cap on Newton iterations per stage.
    pub max_newton: usize,
    /// Barrier parameter growth factor.
    pub t_factor: f64,
    /// Newton decrement threshold for a centered iterate.
    pub newton_tol: f64,
    /// Relative duality-gap target for objective phases.
    pub gap_tol: f64,
    /// Trust ball radius on the stacked parameter vector; 0 picks an
    /// automatic radius from the constraint scales.
    pub ball_radius: f64,
    /// Objective values below this abort with `Unbounded`.
    pub unbounded_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer: 200,
            max_newton: 80,
            t_factor: 8.0,
            newton_tol: 1e-10,
            gap_tol: 1e-8,
            ball_radius: 0.0,
            unbounded_threshold: -1e12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    vars: Vec<Variable>,
    constraints: Vec<Constraint>,
    pub options: SolverOptions,
}

impl Default for LmiProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl LmiProblem {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            constraints: Vec::new(),
            options: SolverOptions::default(),
        }
    }

    pub fn add_symmetric(&mut self, name: &str, dim: usize) -> &mut Self {
        self.push_var(name, VarShape::Symmetric(dim), Vec::new())
    }

    pub fn add_rectangular(&mut self, name: &str, rows: usize, cols: usize) -> &mut Self {
        self.push_var(name, VarShape::Rectangular(rows, cols), Vec::new())
    }

    pub fn add_scalar(&mut self, name: &str) -> &mut Self {
        self.push_var(name, VarShape::Scalar, Vec::new())
    }

    /// Declares a variable with entries pinned to zero.
    pub fn add_with_zeros(
        &mut self,
        name: &str,
        shape: VarShape,
        fixed_zeros: Vec<(usize, usize)>,
    ) -> &mut Self {
        self.push_var(name, shape, fixed_zeros)
    }

    fn push_var(
        &mut self,
        name: &str,
        shape: VarShape,
        fixed_zeros: Vec<(usize, usize)>,
    ) -> &mut Self {
        assert!(
            self.vars.iter().all(|v| v.name != name),
            "duplicate variable name {name}"
        );
        let offset = self.vars.last().map_or(0, |v| v.offset + live_params(v));
        self.vars.push(Variable {
            name: name.to_string(),
            shape,
            fixed_zeros,
            offset,
        });
        self
    }

    pub fn constraint(&mut self, label: &str, sense: Sense) -> ConstraintBuilder<'_> {
        ConstraintBuilder {
            problem: self,
            constraint: Constraint {
                label: label.to_string(),
                sense,
                constant: DMatrix::zeros(0, 0),
                terms: Vec::new(),
                margin: None,
            },
        }
    }

    fn var_index(&self, name: &str) -> Result<usize, LmiError> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| LmiError::Structure(format!("unknown variable {name}")))
    }
}

fn live_params(v: &Variable) -> usize {
    v.shape.param_count() - zero_param_count(v)
}

fn zero_param_count(v: &Variable) -> usize {
    match v.shape {
        VarShape::Symmetric(_) => {
            let mut seen = std::collections::BTreeSet::new();
            for &(i, j) in &v.fixed_zeros {
                seen.insert((i.min(j), i.max(j)));
            }
            seen.len()
        }
        _ => {
            let mut seen = std::collections::BTreeSet::new();
            for &p in &v.fixed_zeros {
                seen.insert(p);
            }
            seen.len()
        }
    }
}

pub struct ConstraintBuilder<'a> {
    problem: &'a mut LmiProblem,
    constraint: Constraint,
}

impl ConstraintBuilder<'_> {
    pub fn constant(mut self, c: DMatrix<f64>) -> Self {
        self.constraint.constant = c;
        self
    }

    pub fn margin(mut self, m: f64) -> Self {
        self.constraint.margin = Some(m);
        self
    }

    /// Adds `left · var · right`.
    pub fn term(self, left: DMatrix<f64>, var: &str, right: DMatrix<f64>) -> Self {
        self.push(var, left, right, false, false)
    }

    /// Adds `left · var · right + (left · var · right)ᵀ`.
    pub fn term_sym(self, left: DMatrix<f64>, var: &str, right: DMatrix<f64>) -> Self {
        self.push(var, left, right, false, true)
    }

    /// Adds `left · varᵀ · right`.
    pub fn term_transposed(self, left: DMatrix<f64>, var: &str, right: DMatrix<f64>) -> Self {
        self.push(var, left, right, true, false)
    }

    /// Adds `var · coeff` for a scalar variable.
    pub fn term_scaled(mut self, var: &str, coeff: DMatrix<f64>) -> Self {
        let idx = self
            .problem
            .var_index(var)
            .unwrap_or_else(|e| panic!("{e}"));
        self.constraint.terms.push(Term {
            var: idx,
            kind: TermKind::Scaled { coeff },
        });
        self
    }

    fn push(
        mut self,
        var: &str,
        left: DMatrix<f64>,
        right: DMatrix<f64>,
        transpose_var: bool,
        with_transpose: bool,
    ) -> Self {
        let idx = self
            .problem
            .var_index(var)
            .unwrap_or_else(|e| panic!("{e}"));
        self.constraint.terms.push(Term {
            var: idx,
            kind: TermKind::Sandwich {
                left,
                right,
                transpose_var,
                with_transpose,
            },
        });
        self
    }

    pub fn done(self) {
        self.problem.constraints.push(self.constraint);
    }
}

// ---------------------------------------------------------------------------
// compiled affine form
// ---------------------------------------------------------------------------

/// `S(θ) = c + Σ_j θ_j a_j`, kept positive definite during solves.
#[derive(Debug, Clone)]
struct AffineBlock {
    c: DMatrix<f64>,
    a: Vec<DMatrix<f64>>,
}

impl AffineBlock {
    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.c.clone();
        for (j, aj) in self.a.iter().enumerate() {
            if x[j] != 0.0 {
                s += aj * x[j];
            }
        }
        s
    }
}

struct Compiled {
    dim: usize,
    /// Normalized strict blocks, margins folded in.
    blocks: Vec<AffineBlock>,
    /// Effective margins per original constraint.
    margins: Vec<f64>,
}

fn param_entries(v: &Variable) -> Vec<(usize, usize)> {
    let mut zeros = std::collections::BTreeSet::new();
    match v.shape {
        VarShape::Symmetric(_) => {
            for &(i, j) in &v.fixed_zeros {
                zeros.insert((i.min(j), i.max(j)));
            }
        }
        _ => {
            for &p in &v.fixed_zeros {
                zeros.insert(p);
            }
        }
    }
    let mut out = Vec::new();
    match v.shape {
        VarShape::Symmetric(d) => {
            for i in 0..d {
                for j in i..d {
                    if !zeros.contains(&(i, j)) {
                        out.push((i, j));
                    }
                }
            }
        }
        VarShape::Rectangular(r, c) => {
            for i in 0..r {
                for j in 0..c {
                    if !zeros.contains(&(i, j)) {
                        out.push((i, j));
                    }
                }
            }
        }
        VarShape::Scalar => out.push((0, 0)),
    }
    out
}

fn var_value(v: &Variable, entries: &[(usize, usize)], x: &DVector<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(v.shape.rows(), v.shape.cols());
    for (slot, &(i, j)) in entries.iter().enumerate() {
        let value = x[v.offset + slot];
        m[(i, j)] = value;
        if matches!(v.shape, VarShape::Symmetric(_)) && i != j {
            m[(j, i)] = value;
        }
    }
    m
}

impl LmiProblem {
    fn total_params(&self) -> usize {
        self.vars.last().map_or(0, |v| v.offset + live_params(v))
    }

    fn eval_constraint(
        &self,
        con: &Constraint,
        values: &[DMatrix<f64>],
    ) -> Result<DMatrix<f64>, LmiError> {
        let mut acc = con.constant.clone();
        for term in &con.terms {
            let v = &values[term.var];
            let add = match &term.kind {
                TermKind::Sandwich {
                    left,
                    right,
                    transpose_var,
                    with_transpose,
                } => {
                    let mid = if *transpose_var {
                        v.transpose()
                    } else {
                        v.clone()
                    };
                    if left.ncols() != mid.nrows() || mid.ncols() != right.nrows() {
                        return Err(LmiError::Structure(format!(
                            "term shape mismatch in constraint {}: {}x{} · {}x{} · {}x{}",
                            con.label,
                            left.nrows(),
                            left.ncols(),
                            mid.nrows(),
                            mid.ncols(),
                            right.nrows(),
                            right.ncols()
                        )));
                    }
                    let prod = left * mid * right;
                    if *with_transpose {
                        &prod + prod.transpose()
                    } else {
                        prod
                    }
                }
                TermKind::Scaled { coeff } => coeff * v[(0, 0)],
            };
            if acc.shape() == (0, 0) {
                acc = add;
            } else if acc.shape() != add.shape() {
                return Err(LmiError::Structure(format!(
                    "constraint {} mixes block sizes {:?} and {:?}",
                    con.label,
                    acc.shape(),
                    add.shape()
                )));
            } else {
                acc += add;
            }
        }
        Ok(acc)
    }

    /// Evaluates all constraints at an assignment and returns the worst
    /// margin-shifted violation (negative = strictly feasible).
    fn verify(&self, x: &DVector<f64>, compiled: &Compiled) -> Result<f64, LmiError> {
        let values = self.assemble_values(x);
        let mut worst = f64::NEG_INFINITY;
        for (ci, con) in self.constraints.iter().enumerate() {
            let e = SymMat::symmetrize(self.eval_constraint(con, &values)?)
                .map_err(|err| LmiError::Structure(err.to_string()))?;
            if e.dim() == 0 {
                continue;
            }
            let (vals, _) = e.eigen();
            let margin = compiled.margins[ci];
            let viol = match con.sense {
                Sense::NegDef => vals[vals.len() - 1] + margin,
                Sense::PosDef => margin - vals[0],
                Sense::PosSemiDef => {
                    // boundary contact is legal for non-strict blocks, and
                    // minimizers land there on purpose; allow the solver's
                    // own resolution when judging it
                    let scale = vals[0].abs().max(vals[vals.len() - 1].abs());
                    -vals[0] - 1e-8 * (1.0 + scale)
                }
            };
            worst = worst.max(viol);
        }
        Ok(if worst == f64::NEG_INFINITY {
            -f64::INFINITY
        } else {
            worst
        })
    }

    fn assemble_values(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.vars
            .iter()
            .map(|v| var_value(v, &param_entries(v), x))
            .collect()
    }

    fn compile(&self) -> Result<Compiled, LmiError> {
        if self.constraints.is_empty() {
            return Err(LmiError::Structure("no constraints".into()));
        }
        let dim = self.total_params();
        let zero = DVector::zeros(dim);
        let zero_values = self.assemble_values(&zero);
        let mut blocks = Vec::new();
        let mut margins = Vec::new();
        for con in &self.constraints {
            let base = self.eval_constraint(con, &zero_values)?;
            let p = base.nrows();
            if base.ncols() != p {
                return Err(LmiError::Structure(format!(
                    "constraint {} is not square: {}x{}",
                    con.label,
                    p,
                    base.ncols()
                )));
            }
            let margin = con.margin.unwrap_or_else(|| match con.sense {
                Sense::PosSemiDef => 0.0,
                _ => 1e-6 * (1.0 + linalg::fro(&con.constant)),
            });
            margins.push(margin);
            if p == 0 {
                continue; // vacuous block
            }
            let mut a = Vec::with_capacity(dim);
            for j in 0..dim {
                let mut xj = DVector::zeros(dim);
                xj[j] = 1.0;
                let values = self.assemble_values(&xj);
                let ej = self.eval_constraint(con, &values)? - &base;
                a.push(symmetrize_checked(&con.label, ej)?);
            }
            let base = symmetrize_checked(&con.label, base)?;
            let (c_norm, a_norm): (DMatrix<f64>, Vec<DMatrix<f64>>) = match con.sense {
                Sense::NegDef => (
                    -(base + DMatrix::identity(p, p) * margin),
                    a.iter().map(|m| -m).collect(),
                ),
                Sense::PosDef => (base - DMatrix::identity(p, p) * margin, a),
                Sense::PosSemiDef => (base - DMatrix::identity(p, p) * margin, a),
            };
            blocks.push(AffineBlock {
                c: c_norm,
                a: a_norm,
            });
        }
        if blocks.is_empty() {
            return Err(LmiError::Structure(
                "all constraint blocks are empty".into(),
            ));
        }
        Ok(Compiled {
            dim,
            blocks,
            margins,
        })
    }
}

fn symmetrize_checked(label: &str, m: DMatrix<f64>) -> Result<DMatrix<f64>, LmiError> {
    let scale = 1.0 + m.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    let asym = (&m - m.transpose())
        .iter()
        .fold(0.0_f64, |a, &x| a.max(x.abs()));
    if asym > 1e-9 * scale {
        return Err(LmiError::Structure(format!(
            "constraint {label} evaluates to a non-symmetric matrix (asymmetry {asym:.3e})"
        )));
    }
    Ok((&m + m.transpose()) * 0.5)
}

// ---------------------------------------------------------------------------
// barrier machinery
// ---------------------------------------------------------------------------

struct Potential<'a> {
    blocks: &'a [AffineBlock],
    t: f64,
    lin: Option<&'a DVector<f64>>,
    /// Affine map of the variable whose log det is maximized.
    logdet: Option<&'a AffineBlock>,
}

struct Derivatives {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl Potential<'_> {
    /// Potential value only; `None` when outside the domain.
    fn value(&self, x: &DVector<f64>) -> Option<f64> {
        let mut total = 0.0;
        for b in self.blocks {
            total -= logdet_chol(&b.eval(x))?;
        }
        total += self.t * self.objective_value(x)?;
        Some(total)
    }

    fn objective_value(&self, x: &DVector<f64>) -> Option<f64> {
        let mut obj = 0.0;
        if let Some(c) = self.lin {
            obj += c.dot(x);
        }
        if let Some(ld) = self.logdet {
            obj -= logdet_chol(&ld.eval(x))?;
        }
        Some(obj)
    }

    fn derivatives(&self, x: &DVector<f64>) -> Option<Derivatives> {
        let n = x.len();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut value = 0.0;

        for b in self.blocks {
            let (ld, g, h) = barrier_derivs(b, x)?;
            value -= ld;
            grad -= g;
            hess += h;
        }

        let mut objective = 0.0;
        if let Some(c) = self.lin {
            objective += c.dot(x);
            grad += c * self.t;
        }
        if let Some(ldb) = self.logdet {
            let (ld, g, h) = barrier_derivs(ldb, x)?;
            objective -= ld;
            grad -= g * self.t;
            hess += h * self.t;
        }
        value += self.t * objective;
        Some(Derivatives { value, grad, hess })
    }
}

fn logdet_chol(s: &DMatrix<f64>) -> Option<f64> {
    if s.nrows() == 0 {
        return Some(0.0);
    }
    let chol = Cholesky::new(s.clone())?;
    Some(
        2.0 * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>(),
    )
}

/// log det, gradient and Gram-matrix Hessian of the log-barrier of one block.
fn barrier_derivs(b: &AffineBlock, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
    let s = b.eval(x);
    let p = s.nrows();
    let n = x.len();
    if p == 0 {
        return Some((0.0, DVector::zeros(n), DMatrix::zeros(n, n)));
    }
    let chol = Cholesky::new(s)?;
    let logdet = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    let l = chol.l();

    // active parameters: many a_j are zero for a given block
    let mut tilde: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(b.a.len());
    for aj in &b.a {
        if aj.amax() == 0.0 {
            tilde.push(None);
            continue;
        }
        // L⁻¹ aj L⁻ᵀ
        let half = l
            .solve_lower_triangular(aj)
            .expect("cholesky factor invertible");
        let full = l
            .solve_lower_triangular(&half.transpose())
            .expect("cholesky factor invertible");
        tilde.push(Some(full));
    }
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        if let Some(tj) = &tilde[j] {
            grad[j] = tj.trace();
            for k in j..n {
                if let Some(tk) = &tilde[k] {
                    let v = tj.dot(tk);
                    hess[(j, k)] = v;
                    hess[(k, j)] = v;
                }
            }
        }
    }
    Some((logdet, grad, hess))
}

/// Newton-centers the potential; returns false if progress stalled outside
/// the domain (should not happen from a feasible start).
fn center(
    pot: &Potential,
    x: &mut DVector<f64>,
    opts: &SolverOptions,
    mut stop_early: impl FnMut(&DVector<f64>) -> bool,
) -> bool {
    for _ in 0..opts.max_newton {
        if stop_early(x) {
            return true;
        }
        let Some(d) = pot.derivatives(x) else {
            return false;
        };
        let mut hess = d.hess.clone();
        let ridge_base = 1e-14 * (1.0 + hess.trace() / hess.nrows().max(1) as f64);
        let mut ridge = 0.0;
        let delta = loop {
            let attempt = Cholesky::new(hess.clone()).map(|ch| ch.solve(&(-&d.grad)));
            match attempt {
                Some(step) => break step,
                None => {
                    ridge = if ridge == 0.0 {
                        ridge_base
                    } else {
                        ridge * 100.0
                    };
                    if ridge > 1e6 * ridge_base.max(1.0) {
                        return true; // hopeless curvature; accept current point
                    }
                    for i in 0..hess.nrows() {
                        hess[(i, i)] += ridge;
                    }
                }
            }
        };
        let decrement = -d.grad.dot(&delta);
        if decrement * 0.5 <= opts.newton_tol {
            return true;
        }
        // backtracking line search staying inside the domain
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &*x + &delta * alpha;
            if let Some(v) = pot.value(&cand) {
                if v <= d.value + 0.25 * alpha * d.grad.dot(&delta) {
                    *x = cand;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            return true;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// public entry points
// ---------------------------------------------------------------------------

/// Finds a strictly feasible assignment satisfying every constraint with its
/// margin, or reports infeasibility.
pub fn solve_feasibility(problem: &LmiProblem) -> Result<LmiSolution, LmiError> {
    let compiled = problem.compile()?;
    let (x, outer, found, _) = phase_one(problem, &compiled)?;
    finish(problem, &compiled, x, outer, found, None)
}

/// Minimizes a linear functional or maximizes log det of one symmetric
/// variable over the constraint set.
pub fn minimize(problem: &LmiProblem, objective: &Objective) -> Result<LmiSolution, LmiError> {
    let compiled = problem.compile()?;
    let (x0, outer0, found, radius) = phase_one(problem, &compiled)?;
    if !found {
        return finish(problem, &compiled, x0, outer0, false, None);
    }
    let radius = radius * 1024.0; // room for the objective phase to move
    match objective {
        Objective::Feasibility => finish(problem, &compiled, x0, outer0, true, None),
        Objective::Minimize(lin) => {
            let c = compile_linear(problem, lin)?;
            let (x, outer, obj) = phase_two(problem, &compiled, x0, radius, Some(&c), None)?;
            finish(problem, &compiled, x, outer0 + outer, true, Some(obj))
        }
        Objective::MaxLogDet(name) => {
            let idx = problem.var_index(name)?;
            let v = &problem.vars[idx];
            let VarShape::Symmetric(d) = v.shape else {
                return Err(LmiError::Structure(format!(
                    "log det objective needs a symmetric variable, {name} is not"
                )));
            };
            let ld_block = logdet_block(problem, idx, d);
            let (x, outer, obj) = phase_two(problem, &compiled, x0, radius, None, Some(&ld_block))?;
            finish(problem, &compiled, x, outer0 + outer, true, Some(obj))
        }
    }
}

fn logdet_block(problem: &LmiProblem, var_idx: usize, d: usize) -> AffineBlock {
    let dim = problem.total_params();
    let v = &problem.vars[var_idx];
    let entries = param_entries(v);
    let mut a = vec![DMatrix::zeros(d, d); dim];
    for (slot, &(i, j)) in entries.iter().enumerate() {
        let mut basis = DMatrix::zeros(d, d);
        basis[(i, j)] = 1.0;
        basis[(j, i)] = 1.0;
        if i == j {
            basis[(i, j)] = 1.0;
        }
        a[v.offset + slot] = basis;
    }
    AffineBlock {
        c: DMatrix::zeros(d, d),
        a,
    }
}

fn compile_linear(problem: &LmiProblem, lin: &LinearObjective) -> Result<DVector<f64>, LmiError> {
    let dim = problem.total_params();
    let mut c = DVector::zeros(dim);
    for (name, coeff) in &lin.terms {
        let idx = problem.var_index(name)?;
        let v = &problem.vars[idx];
        if coeff.nrows() != v.shape.cols() || coeff.ncols() != v.shape.rows() {
            return Err(LmiError::Structure(format!(
                "objective coefficient for {name} must be {}x{}, got {}x{}",
                v.shape.cols(),
                v.shape.rows(),
                coeff.nrows(),
                coeff.ncols()
            )));
        }
        let entries = param_entries(v);
        for (slot, &(i, j)) in entries.iter().enumerate() {
            // d/dθ tr(coeff · V): entry (i,j) of V multiplies coeff[(j,i)]
            let mut g = coeff[(j, i)];
            if matches!(v.shape, VarShape::Symmetric(_)) && i != j {
                g += coeff[(i, j)];
            }
            c[v.offset + slot] += g;
        }
    }
    Ok(c)
}

/// Starting trust ball radius: tight, so interior points come out at the
/// natural scale of the data; phase I doubles it when the feasible set
/// genuinely lives further out.
fn base_radius(problem: &LmiProblem, opts: &SolverOptions) -> f64 {
    if opts.ball_radius > 0.0 {
        return opts.ball_radius;
    }
    let mut scale = 0.0_f64;
    for con in &problem.constraints {
        scale = scale.max(con.constant.amax());
    }
    10.0 * (1.0 + scale)
}

/// Ball block [[ρI, θ], [θᵀ, ρ]] ≻ 0 keeping ‖θ‖ < ρ.
fn ball_block(dim: usize, radius: f64) -> AffineBlock {
    let p = dim + 1;
    let c = DMatrix::identity(p, p) * radius;
    let mut a = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut e = DMatrix::zeros(p, p);
        e[(j, dim)] = 1.0;
        e[(dim, j)] = 1.0;
        a.push(e);
    }
    AffineBlock { c, a }
}

/// Phase I: minimize an auxiliary slack until the true margins hold,
/// growing the trust ball geometrically when the feasible set lives beyond
/// it. Returns (point, stages used, feasible found, final radius).
fn phase_one(
    problem: &LmiProblem,
    compiled: &Compiled,
) -> Result<(DVector<f64>, usize, bool, f64), LmiError> {
    let opts = &problem.options;
    let mut radius = base_radius(problem, opts);
    // beyond this scale double precision cannot certify the blocks anyway
    let radius_cap = radius * 1e8;
    let mut outer_total = 0;
    loop {
        let (last, outer, found, boundary) = phase_one_attempt(
            problem,
            compiled,
            radius,
            opts.max_outer.saturating_sub(outer_total),
        )?;
        outer_total += outer;
        if found {
            return Ok((last, outer_total, true, radius));
        }
        if !boundary || outer_total >= opts.max_outer || radius >= radius_cap {
            // stalled with positive slack away from the ball: infeasible
            return Ok((last, outer_total, false, radius));
        }
        radius = (radius * 8.0).min(radius_cap);
    }
}

/// One phase-I run at a fixed trust radius. The fourth return value reports
/// whether the iterate ended near the ball boundary (the cue to enlarge it).
fn phase_one_attempt(
    problem: &LmiProblem,
    compiled: &Compiled,
    radius: f64,
    stage_budget: usize,
) -> Result<(DVector<f64>, usize, bool, bool), LmiError> {
    let dim = compiled.dim;
    let opts = &problem.options;

    // extended vector [θ; s]
    let ext = dim + 1;
    let mut blocks: Vec<AffineBlock> = Vec::with_capacity(compiled.blocks.len() + 1);
    for b in &compiled.blocks {
        let p = b.c.nrows();
        let mut a = Vec::with_capacity(ext);
        for aj in &b.a {
            a.push(aj.clone());
        }
        a.push(DMatrix::identity(p, p)); // slack channel
        blocks.push(AffineBlock { c: b.c.clone(), a });
    }
    {
        let ball = ball_block(dim, radius);
        let p = ball.c.nrows();
        let mut a = ball.a;
        a.push(DMatrix::zeros(p, p));
        blocks.push(AffineBlock { c: ball.c, a });
    }

    // strictly feasible start: θ = 0, s beyond the worst eigenvalue
    let mut x = DVector::zeros(ext);
    let mut s0 = 0.0_f64;
    for b in &compiled.blocks {
        if b.c.nrows() == 0 {
            continue;
        }
        let sym =
            SymMat::symmetrize(b.c.clone()).map_err(|e| LmiError::Structure(e.to_string()))?;
        let (vals, _) = sym.eigen();
        s0 = s0.max(-vals[0]);
    }
    x[dim] = s0 + 1.0;

    let mut lin = DVector::zeros(ext);
    lin[dim] = 1.0;

    let strict_ok = |problem: &LmiProblem, compiled: &Compiled, theta: &DVector<f64>| -> bool {
        compiled
            .blocks
            .iter()
            .all(|b| logdet_chol(&b.eval(theta)).is_some())
            && problem
                .verify(theta, compiled)
                .map(|w| w < 0.0)
                .unwrap_or(false)
    };

    let mut t = 1.0;
    let mut found = false;
    let mut outer = 0;
    for _stage in 0..stage_budget.max(4) {
        outer += 1;
        let pot = Potential {
            blocks: &blocks,
            t,
            lin: Some(&lin),
            logdet: None,
        };
        let mut hit = false;
        center(&pot, &mut x, opts, |xc| {
            if xc[dim] < 0.0 {
                let theta = xc.rows(0, dim).into_owned();
                if strict_ok(problem, compiled, &theta) {
                    hit = true;
                    return true;
                }
            }
            false
        });
        if hit {
            found = true;
            break;
        }
        // also accept a centered point whose slack went negative
        if x[dim] < 0.0 {
            let theta = x.rows(0, dim).into_owned();
            if strict_ok(problem, compiled, &theta) {
                found = true;
                break;
            }
        }
        t *= opts.t_factor;
        // slack cannot reach 0 anymore once the gap bound rules it out
        let total_size: usize = blocks.iter().map(|b| b.c.nrows()).sum();
        if x[dim] > 0.0 && total_size as f64 / t < 0.25 * x[dim] && outer > 6 {
            break; // converged to a positive slack at this radius
        }
    }
    let theta = x.rows(0, dim).into_owned();
    let near_boundary = theta.norm() >= 0.5 * radius;
    Ok((theta, outer, found, near_boundary))
}

/// Phase II: follow the central path for the objective from a feasible start.
fn phase_two(
    problem: &LmiProblem,
    compiled: &Compiled,
    mut x: DVector<f64>,
    radius: f64,
    lin: Option<&DVector<f64>>,
    logdet: Option<&AffineBlock>,
) -> Result<(DVector<f64>, usize, f64), LmiError> {
    let opts = &problem.options;
    let mut blocks = compiled.blocks.clone();
    blocks.push(ball_block(compiled.dim, radius));
    let total_size: usize = blocks.iter().map(|b| b.c.nrows()).sum();

    let mut t = 1.0;
    let mut outer = 0;
    let mut obj = f64::INFINITY;
    for _stage in 0..opts.max_outer {
        outer += 1;
        let pot = Potential {
            blocks: &blocks,
            t,
            lin,
            logdet,
        };
        center(&pot, &mut x, opts, |_| false);
        obj = pot
            .objective_value(&x)
            .ok_or_else(|| LmiError::Structure("iterate left the domain".into()))?;
        if obj < opts.unbounded_threshold {
            return Err(LmiError::Unbounded);
        }
        let gap = total_size as f64 / t;
        if gap <= opts.gap_tol * (1.0 + obj.abs()) {
            break;
        }
        t *= opts.t_factor;
    }
    Ok((x, outer, obj))
}

fn finish(
    problem: &LmiProblem,
    compiled: &Compiled,
    x: DVector<f64>,
    outer: usize,
    found: bool,
    objective: Option<f64>,
) -> Result<LmiSolution, LmiError> {
    let worst = problem.verify(&x, compiled)?;
    let values = problem.assemble_values(&x);
    let mut assignment = BTreeMap::new();
    for (v, m) in problem.vars.iter().zip(values) {
        assignment.insert(v.name.clone(), m);
    }
    let status = if found && worst < 0.0 {
        SolveStatus::Feasible
    } else if outer >= problem.options.max_outer {
        SolveStatus::MaxIter
    } else {
        SolveStatus::Infeasible
    };
    Ok(LmiSolution {
        status,
        assignment,
        worst_margin: worst,
        objective,
        outer_iterations: outer,
    })
}
