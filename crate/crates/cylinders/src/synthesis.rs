//! Dynamic output-feedback synthesis for the general linear tracking problem.
//!
//! The plant, reference model and controller are lifted into one closed loop
//! `ṡ = Ms + Nf`, `z = Ks` whose target variable `z` must be captured by an
//! attracting cylinder `{s : sᵀKᵀPKs ≤ 1}`. The pipeline is:
//!
//! 1. check the pseudoinverse solvability condition tying `K, A, B, D`;
//! 2. run the cone-complementarity iteration for a pair `P, Q ≻ 0` with
//!    `PQ ≈ I` satisfying the two synthesis inequalities, exiting early as
//!    soon as some `P` already admits a controller;
//! 3. solve the linear matrix inequality in the free parameter `Y`;
//! 4. recover the stacked controller matrix `X` from `Y` and split it into
//!    the six controller blocks;
//! 5. re-verify the closed loop a posteriori with the analysis certificate.
//!
//! Measurement feedthrough of the control (`D_u ≠ 0`) is handled by designing
//! against the auxiliary output with the feedthrough removed and transforming
//! the controller back afterwards.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::analysis::{self, AnalysisError, DisturbedSystem};
use crate::geometry::{Cylinder, GeometryError};
use crate::linalg::{self, LinalgError, SymMat, RESIDUAL_TOL};
use crate::lmi::{self, LinearObjective, LmiProblem, Objective, Sense};
use crate::matrix_equations::{self, MatrixEquationError};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lmi(#[from] lmi::LmiError),
    #[error(transparent)]
    MatrixEquation(#[from] MatrixEquationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(
        "target map [K1 K2 K3] must have full row rank {rows}, numerical rank is {rank}; \
         drop linearly dependent target rows"
    )]
    TargetRankDeficient { rows: usize, rank: usize },
    #[error("disturbance bound G must be positive definite (min eigenvalue {0:.3e})")]
    BoundNotPositive(f64),
    #[error("solvability condition fails with relative residual {residual:.3e}")]
    SolvabilityFailed { residual: f64 },
    #[error("synthesis inequalities are infeasible at alpha = {alpha}")]
    StepOneInfeasible { alpha: f64 },
    #[error("controller inequality in Y is infeasible for the given P")]
    YInfeasible,
    #[error("feedthrough loop is not realizable: I + D_y·D_u is singular")]
    NotRealizable,
    #[error("no alpha in the grid produced a verified controller ({} attempted)", attempts.len())]
    NoFeasibleAlpha { attempts: Vec<AlphaAttempt> },
}

// ---------------------------------------------------------------------------
// models
// ---------------------------------------------------------------------------

/// Plant `ẋ = Ax + B_u u + B_w w`, `y = C x + D_u u + D_w w`.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d_u: DMatrix<f64>,
    pub d_w: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(
        a: DMatrix<f64>,
        b_u: DMatrix<f64>,
        b_w: DMatrix<f64>,
        c: DMatrix<f64>,
        d_u: DMatrix<f64>,
        d_w: DMatrix<f64>,
    ) -> Result<Self, SynthesisError> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(SynthesisError::DimensionMismatch(format!(
                "plant A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let checks = [
            (b_u.nrows() == n, "B_u rows must match the state dimension"),
            (b_w.nrows() == n, "B_w rows must match the state dimension"),
            (c.ncols() == n, "C columns must match the state dimension"),
            (d_u.nrows() == c.nrows(), "D_u rows must match C rows"),
            (
                d_u.ncols() == b_u.ncols(),
                "D_u columns must match B_u columns",
            ),
            (d_w.nrows() == c.nrows(), "D_w rows must match C rows"),
            (
                d_w.ncols() == b_w.ncols(),
                "D_w columns must match B_w columns",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(SynthesisError::DimensionMismatch(msg.into()));
            }
        }
        Ok(Self {
            a,
            b_u,
            b_w,
            c,
            d_u,
            d_w,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.b_w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn has_control_feedthrough(&self) -> bool {
        self.d_u.amax() != 0.0
    }
}

/// Reference model `ẋ_r = A x_r + B h`, `g = C x_r`; may be empty.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl ReferenceModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, SynthesisError> {
        if !a.is_square() || b.nrows() != a.nrows() || c.ncols() != a.nrows() {
            return Err(SynthesisError::DimensionMismatch(
                "reference model dimensions are inconsistent".into(),
            ));
        }
        Ok(Self { a, b, c })
    }

    /// No reference dynamics; `g` keeps the given width and is identically 0.
    pub fn empty(reference_output_dim: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, 0),
            c: DMatrix::zeros(reference_output_dim, 0),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn command_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Target variable `z = T_x x + T_r x_r + T_c x_c`.
#[derive(Debug, Clone)]
pub struct TargetMap {
    pub on_plant: DMatrix<f64>,
    pub on_reference: DMatrix<f64>,
    pub on_controller: DMatrix<f64>,
}

impl TargetMap {
    pub fn target_dim(&self) -> usize {
        self.on_plant.nrows()
    }

    pub fn stacked(&self) -> DMatrix<f64> {
        linalg::hstack(&[&self.on_plant, &self.on_reference, &self.on_controller])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub plant: usize,
    pub reference: usize,
    pub controller: usize,
    pub control: usize,
    pub output: usize,
    pub dist_plant: usize,
    pub dist_reference: usize,
    pub target: usize,
}

impl Dims {
    pub fn state(&self) -> usize {
        self.plant + self.reference + self.controller
    }

    pub fn disturbance(&self) -> usize {
        self.dist_plant + self.dist_reference
    }

    /// Rows of the stacked controller matrix X.
    pub fn ctrl_rows(&self) -> usize {
        self.controller + self.control
    }

    /// Columns of the stacked controller matrix X.
    pub fn ctrl_cols(&self) -> usize {
        self.controller + self.output + self.dist_plant
    }
}

/// The full synthesis problem data.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub plant: PlantModel,
    pub reference: ReferenceModel,
    pub controller_order: usize,
    pub target: TargetMap,
    pub bound: SymMat,
}

impl SynthesisProblem {
    pub fn new(
        plant: PlantModel,
        reference: ReferenceModel,
        controller_order: usize,
        target: TargetMap,
        bound: SymMat,
    ) -> Result<Self, SynthesisError> {
        if reference.output_dim() != plant.disturbance_dim() {
            return Err(SynthesisError::DimensionMismatch(format!(
                "reference output g has {} rows but the controller expects {}",
                reference.output_dim(),
                plant.disturbance_dim()
            )));
        }
        let k = target.target_dim();
        if target.on_plant.ncols() != plant.state_dim()
            || target.on_reference.nrows() != k
            || target.on_reference.ncols() != reference.state_dim()
            || target.on_controller.nrows() != k
            || target.on_controller.ncols() != controller_order
        {
            return Err(SynthesisError::DimensionMismatch(
                "target map blocks do not match the model dimensions".into(),
            ));
        }
        let stacked = target.stacked();
        let rank = linalg::rank(&stacked, 0.0)?;
        if rank != k {
            return Err(SynthesisError::TargetRankDeficient { rows: k, rank });
        }
        let dist = plant.disturbance_dim() + reference.command_dim();
        if bound.dim() != dist {
            return Err(SynthesisError::DimensionMismatch(format!(
                "bound G is {}x{} but the stacked disturbance has dimension {}",
                bound.dim(),
                bound.dim(),
                dist
            )));
        }
        if bound.dim() > 0 {
            let rep = linalg::definiteness(&bound, 0.0)?;
            if rep.class != linalg::Definiteness::PositiveDefinite {
                return Err(SynthesisError::BoundNotPositive(rep.lambda_min));
            }
        }
        Ok(Self {
            plant,
            reference,
            controller_order,
            target,
            bound,
        })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            plant: self.plant.state_dim(),
            reference: self.reference.state_dim(),
            controller: self.controller_order,
            control: self.plant.control_dim(),
            output: self.plant.output_dim(),
            dist_plant: self.plant.disturbance_dim(),
            dist_reference: self.reference.command_dim(),
            target: self.target.target_dim(),
        }
    }
}

/// Controller `ẋ_c = A x_c + B_y y + B_g g`, `u = C x_c + D_y y + D_g g`.
#[derive(Debug, Clone)]
pub struct Controller {
    pub a: DMatrix<f64>,
    pub b_y: DMatrix<f64>,
    pub b_g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d_y: DMatrix<f64>,
    pub d_g: DMatrix<f64>,
}

impl Controller {
    /// The stacked parameter matrix `X = [A B_y B_g; C D_y D_g]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        linalg::block(&[
            &[&self.a, &self.b_y, &self.b_g],
            &[&self.c, &self.d_y, &self.d_g],
        ])
    }

    pub fn from_stacked(x: &DMatrix<f64>, dims: &Dims) -> Self {
        let (a3, b1) = (dims.controller, dims.control);
        let (b2, c1) = (dims.output, dims.dist_plant);
        assert_eq!(x.nrows(), a3 + b1, "stacked controller row count");
        assert_eq!(x.ncols(), a3 + b2 + c1, "stacked controller column count");
        Self {
            a: x.view((0, 0), (a3, a3)).into_owned(),
            b_y: x.view((0, a3), (a3, b2)).into_owned(),
            b_g: x.view((0, a3 + b2), (a3, c1)).into_owned(),
            c: x.view((a3, 0), (b1, a3)).into_owned(),
            d_y: x.view((a3, a3), (b1, b2)).into_owned(),
            d_g: x.view((a3, a3 + b2), (b1, c1)).into_owned(),
        }
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// A controller whose dynamic blocks are negligible acts statically.
    pub fn is_effectively_static(&self, tol: f64) -> bool {
        self.a.amax() <= tol
            && self.b_y.amax() <= tol
            && self.b_g.amax() <= tol
            && self.c.amax() <= tol
    }
}

// ---------------------------------------------------------------------------
// lifting and reduction
// ---------------------------------------------------------------------------

/// Open closed-loop skeleton: `M = A + BXD`, `N = C_d + BXF` for the stacked
/// controller matrix `X`, with target row map `K`.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    pub drift: DMatrix<f64>,
    pub input: DMatrix<f64>,
    pub disturbance: DMatrix<f64>,
    pub measurement: DMatrix<f64>,
    pub measurement_feed: DMatrix<f64>,
    pub target: DMatrix<f64>,
    pub dims: Dims,
}

/// Builds the lifted block matrices. Control feedthrough in the measurement
/// is excluded here by design: synthesis always runs against the auxiliary
/// output; see [`recover_feedthrough_controller`].
pub fn assemble(problem: &SynthesisProblem) -> LiftedSystem {
    let d = problem.dims();
    let (a1, a2, a3) = (d.plant, d.reference, d.controller);
    let (b1, b2) = (d.control, d.output);
    let (c1, c2) = (d.dist_plant, d.dist_reference);
    let z = DMatrix::<f64>::zeros;

    let drift = linalg::block(&[
        &[&problem.plant.a, &z(a1, a2), &z(a1, a3)],
        &[&z(a2, a1), &problem.reference.a, &z(a2, a3)],
        &[&z(a3, a1), &z(a3, a2), &z(a3, a3)],
    ]);
    let input = linalg::block(&[
        &[&z(a1, a3), &problem.plant.b_u],
        &[&z(a2, a3), &z(a2, b1)],
        &[&DMatrix::identity(a3, a3), &z(a3, b1)],
    ]);
    let disturbance = linalg::block(&[
        &[&problem.plant.b_w, &z(a1, c2)],
        &[&z(a2, c1), &problem.reference.b],
        &[&z(a3, c1), &z(a3, c2)],
    ]);
    let measurement = linalg::block(&[
        &[&z(a3, a1), &z(a3, a2), &DMatrix::identity(a3, a3)],
        &[&problem.plant.c, &z(b2, a2), &z(b2, a3)],
        &[&z(c1, a1), &problem.reference.c, &z(c1, a3)],
    ]);
    let measurement_feed = linalg::block(&[
        &[&z(a3, c1), &z(a3, c2)],
        &[&problem.plant.d_w, &z(b2, c2)],
        &[&z(c1, c1), &z(c1, c2)],
    ]);
    let target = problem.target.stacked();
    LiftedSystem {
        drift,
        input,
        disturbance,
        measurement,
        measurement_feed,
        target,
        dims: d,
    }
}

/// Closed loop `(M, N)` for a stacked controller matrix.
pub fn close_loop(lifted: &LiftedSystem, controller: &Controller) -> (DMatrix<f64>, DMatrix<f64>) {
    let x = controller.stacked();
    let m = &lifted.drift + &lifted.input * &x * &lifted.measurement;
    let n = &lifted.disturbance + &lifted.input * &x * &lifted.measurement_feed;
    (m, n)
}

/// The closed loop reduced to the target variable, split into the part fixed
/// by the data and the channels through which the free parameter enters.
#[derive(Debug, Clone)]
pub struct ReducedLoop {
    /// k×k target drift with the forced controller part substituted.
    pub drift: DMatrix<f64>,
    /// k×(c1+c2) disturbance injection into the target dynamics.
    pub disturbance: DMatrix<f64>,
    /// k×(a3+b1) left factor of the free parameter.
    pub gain_in: DMatrix<f64>,
    /// (a3+b2+c1)×k state-side right factor of the free parameter.
    pub gain_out_state: DMatrix<f64>,
    /// (a3+b2+c1)×(c1+c2) disturbance-side right factor.
    pub gain_out_disturbance: DMatrix<f64>,
}

/// Computes the reduced-loop matrices from the lifted blocks by the literal
/// pseudoinverse formulas.
pub fn reduce(lifted: &LiftedSystem) -> Result<ReducedLoop, SynthesisError> {
    let k = &lifted.target;
    let n = k.ncols();
    let k_pinv = linalg::pinv(k, 0.0)?;
    let kb = k * &lifted.input;
    let kb_pinv = linalg::pinv(&kb, 0.0)?;
    let ka = k * &lifted.drift;
    // T = D(K⁺K − I)
    let t = &lifted.measurement * (&k_pinv * k - DMatrix::identity(n, n));
    let t_floor = linalg::projector_product_floor(&lifted.measurement, k, &k_pinv)?;
    let t_pinv = linalg::pinv_floored(&t, 0.0, t_floor)?;
    let forced = &kb * &kb_pinv * &ka * &t_pinv;
    Ok(ReducedLoop {
        drift: &ka * &k_pinv + &forced * &lifted.measurement * &k_pinv,
        disturbance: k * &lifted.disturbance + &forced * &lifted.measurement_feed,
        gain_in: kb,
        gain_out_state: &lifted.measurement * &k_pinv
            + &lifted.measurement * &t_pinv * &lifted.measurement * &k_pinv,
        gain_out_disturbance: &lifted.measurement_feed
            + &lifted.measurement * &t_pinv * &lifted.measurement_feed,
    })
}

// ---------------------------------------------------------------------------
// solvability condition
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SolvabilityReport {
    pub holds: bool,
    /// Relative residual of the pseudoinverse identity.
    pub residual: f64,
    /// Residual of the specialized state-tracking form, when the target map
    /// has the `[I −I 0]` structure.
    pub tracking_residual: Option<f64>,
}

/// Checks the structural condition under which the cylinder-enforcing matrix
/// equation on the controller is solvable:
/// `KB(KB)⁺ KA (D(I−K⁺K))⁺ D(I−K⁺K) = KA(I−K⁺K)`.
pub fn check_solvability(
    lifted: &LiftedSystem,
    problem: &SynthesisProblem,
) -> Result<SolvabilityReport, SynthesisError> {
    let k = &lifted.target;
    let n = k.ncols();
    let k_pinv = linalg::pinv(k, 0.0)?;
    let complement = DMatrix::identity(n, n) - &k_pinv * k;
    let kb = k * &lifted.input;
    let kb_pinv = linalg::pinv(&kb, 0.0)?;
    let ka = k * &lifted.drift;
    let s = &lifted.measurement * &complement;
    let s_floor = linalg::projector_product_floor(&lifted.measurement, k, &k_pinv)?;
    let s_pinv = linalg::pinv_floored(&s, 0.0, s_floor)?;
    let lhs = &kb * kb_pinv * &ka * s_pinv * &s;
    let rhs = &ka * &complement;
    let residual = linalg::fro(&(&lhs - &rhs)) / (1.0 + linalg::fro(&rhs));

    let tracking_residual = tracking_form_residual(problem)?;
    Ok(SolvabilityReport {
        holds: residual <= RESIDUAL_TOL,
        residual,
        tracking_residual,
    })
}

/// Specialized solvability form for pure state tracking (`z = x − x_r`):
/// `B₁B₁⁺(A₁−A₂)(CᵀC + C_rᵀC_r)⁺(CᵀC + C_rᵀC_r) = A₁−A₂`.
fn tracking_form_residual(problem: &SynthesisProblem) -> Result<Option<f64>, SynthesisError> {
    let d = problem.dims();
    if d.plant != d.reference {
        return Ok(None);
    }
    let eye = DMatrix::<f64>::identity(d.plant, d.plant);
    let is_tracking = linalg::fro(&(&problem.target.on_plant - &eye)) <= 1e-12
        && linalg::fro(&(&problem.target.on_reference + &eye)) <= 1e-12
        && problem.target.on_controller.amax() <= 1e-12;
    if !is_tracking {
        return Ok(None);
    }
    let b1 = &problem.plant.b_u;
    let b1_pinv = linalg::pinv(b1, 0.0)?;
    let diff = &problem.plant.a - &problem.reference.a;
    let gram = problem.plant.c.transpose() * &problem.plant.c
        + problem.reference.c.transpose() * &problem.reference.c;
    let gram_pinv = linalg::pinv(&gram, 0.0)?;
    let lhs = b1 * b1_pinv * &diff * gram_pinv * &gram;
    let residual = linalg::fro(&(&lhs - &diff)) / (1.0 + linalg::fro(&diff));
    Ok(Some(residual))
}

// ---------------------------------------------------------------------------
// cone complementarity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CclOptions {
    /// Stop once trace(P·Sᵢ + Q·Rᵢ) ≤ 2k(1 + stop_tol).
    pub stop_tol: f64,
    pub max_iters: usize,
    /// Try the controller inequality after every iterate and stop as soon as
    /// it is feasible.
    pub early_exit: bool,
    /// Pick the free parameter of smallest spectral norm instead of the
    /// solver's plain feasible point; off by default so the unprocessed
    /// solution family stays observable.
    pub min_norm_y: bool,
}

impl Default for CclOptions {
    fn default() -> Self {
        Self {
            stop_tol: 0.05,
            max_iters: 100,
            early_exit: true,
            min_norm_y: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CclRun {
    pub p: SymMat,
    pub q: SymMat,
    /// trace(P̂·Sᵢ + Q̂·Rᵢ) after each minimization step.
    pub trace_history: Vec<f64>,
    /// Whether the trace stop criterion was met.
    pub converged: bool,
    /// Whether the run stopped because a controller inequality became
    /// feasible before (or instead of) trace convergence.
    pub early_exit: bool,
    /// The feasible free parameter found by the early-exit check, if any.
    pub y: Option<DMatrix<f64>>,
    /// Scalar witnesses from the last inequality solve.
    pub mu1: f64,
    pub mu2: f64,
}

/// Builds the two synthesis inequalities plus positivity and coupling
/// constraints into a fresh LMI problem.
fn synthesis_constraints(reduced: &ReducedLoop, bound: &SymMat, alpha: f64) -> (LmiProblem, usize) {
    let k = reduced.drift.nrows();
    let m = bound.dim();
    let up = linalg::vstack(&[&DMatrix::identity(k, k), &DMatrix::zeros(m, k)]);
    let low = linalg::vstack(&[&DMatrix::zeros(k, m), &DMatrix::identity(m, m)]);
    let neg_alpha_g = &low * (bound.as_matrix() * (-alpha)) * low.transpose();

    let drift = &reduced.drift;
    let dist = &reduced.disturbance;
    let gain = &reduced.gain_in;

    let mut problem = LmiProblem::new();
    problem.add_symmetric("P", k);
    problem.add_symmetric("Q", k);
    problem.add_scalar("mu1");
    problem.add_scalar("mu2");

    // gain side, in Q and mu1: the drift part must be dominated through the
    // channels the free parameter can reach from the left
    let q_constant =
        &up * dist * low.transpose() + &low * dist.transpose() * up.transpose() + &neg_alpha_g;
    problem
        .constraint("gain_side", Sense::NegDef)
        .constant(q_constant)
        .term_sym(up.clone() * drift, "Q", up.transpose())
        .term(&up * alpha, "Q", up.transpose())
        .term_scaled("mu1", -(&up * gain * gain.transpose() * up.transpose()))
        .done();

    // output side, in P and mu2: domination through the right factors
    let right = linalg::hstack(&[&reduced.gain_out_state, &reduced.gain_out_disturbance]);
    problem
        .constraint("output_side", Sense::NegDef)
        .constant(neg_alpha_g)
        .term_sym(up.clone(), "P", drift * up.transpose())
        .term(&up * alpha, "P", up.transpose())
        .term_sym(up.clone(), "P", dist * low.transpose())
        .term_scaled("mu2", -(right.transpose() * &right))
        .done();

    problem
        .constraint("p_pd", Sense::PosDef)
        .term(DMatrix::identity(k, k), "P", DMatrix::identity(k, k))
        .done();
    problem
        .constraint("q_pd", Sense::PosDef)
        .term(DMatrix::identity(k, k), "Q", DMatrix::identity(k, k))
        .done();

    // coupling [P I; I Q] ⪰ 0
    let p_embed = linalg::vstack(&[&DMatrix::identity(k, k), &DMatrix::zeros(k, k)]);
    let q_embed = linalg::vstack(&[&DMatrix::zeros(k, k), &DMatrix::identity(k, k)]);
    let couple_const = &p_embed * q_embed.transpose() + &q_embed * p_embed.transpose();
    problem
        .constraint("coupling", Sense::PosSemiDef)
        .constant(couple_const)
        .term(p_embed.clone(), "P", p_embed.transpose())
        .term(q_embed.clone(), "Q", q_embed.transpose())
        .done();

    (problem, k)
}

/// Cone-complementarity iteration for a pair `P, Q ≻ 0` with `PQ ≈ I`
/// satisfying the synthesis inequalities at the given decay rate.
pub fn cone_complementarity(
    reduced: &ReducedLoop,
    bound: &SymMat,
    alpha: f64,
    opts: &CclOptions,
) -> Result<CclRun, SynthesisError> {
    let (problem, k) = synthesis_constraints(reduced, bound, alpha);

    // The initial pair is the smallest-trace feasible one: a pure feasibility
    // solve may return an arbitrarily scaled pair from which the trace
    // iteration converges poorly. The witnesses get a weak pull toward their
    // natural values; otherwise they drift to the trust region boundary and
    // their scale drowns the margin checks in roundoff.
    let mu_weight = DMatrix::from_row_slice(1, 1, &[1e-3]);
    let seed_objective = Objective::Minimize(
        LinearObjective::new()
            .trace_term("P", DMatrix::identity(k, k))
            .trace_term("Q", DMatrix::identity(k, k))
            .trace_term("mu1", mu_weight.clone())
            .trace_term("mu2", mu_weight.clone()),
    );
    let feasible = lmi::minimize(&problem, &seed_objective)?;
    if !feasible.is_feasible() {
        return Err(SynthesisError::StepOneInfeasible { alpha });
    }
    let mut p_hat = feasible.symmetric("P");
    let mut q_hat = feasible.symmetric("Q");
    let mut mu = (feasible.scalar("mu1"), feasible.scalar("mu2"));

    let mut history = Vec::new();
    let mut converged = false;
    let target = 2.0 * k as f64 * (1.0 + opts.stop_tol);

    let solve_free = |p: &SymMat| {
        if opts.min_norm_y {
            solve_y_min_norm(reduced, bound, p, alpha)
        } else {
            solve_y(reduced, bound, p, alpha)
        }
    };
    for _iter in 0..opts.max_iters {
        if opts.early_exit {
            if let Ok(y) = solve_free(&p_hat) {
                return Ok(CclRun {
                    p: p_hat,
                    q: q_hat,
                    trace_history: history,
                    converged,
                    early_exit: true,
                    y: Some(y),
                    mu1: mu.0,
                    mu2: mu.1,
                });
            }
        } else if converged {
            break;
        }

        let (r_i, s_i) = (p_hat.clone(), q_hat.clone());
        let objective = Objective::Minimize(
            LinearObjective::new()
                .trace_term("P", s_i.as_matrix().clone())
                .trace_term("Q", r_i.as_matrix().clone())
                .trace_term("mu1", mu_weight.clone())
                .trace_term("mu2", mu_weight.clone()),
        );
        let sol = lmi::minimize(&problem, &objective)?;
        if !sol.is_feasible() {
            break; // numerical stall: keep the best pair found so far
        }
        p_hat = sol.symmetric("P");
        q_hat = sol.symmetric("Q");
        mu = (sol.scalar("mu1"), sol.scalar("mu2"));
        let trace_value = (p_hat.as_matrix() * s_i.as_matrix()).trace()
            + (q_hat.as_matrix() * r_i.as_matrix()).trace();
        history.push(trace_value);
        if trace_value <= target {
            converged = true;
            if !opts.early_exit {
                break;
            }
        }
    }

    Ok(CclRun {
        p: p_hat,
        q: q_hat,
        trace_history: history,
        converged,
        early_exit: false,
        y: None,
        mu1: mu.0,
        mu2: mu.1,
    })
}

// ---------------------------------------------------------------------------
// controller recovery
// ---------------------------------------------------------------------------

/// Solves the controller inequality, linear in the free parameter `Y` at
/// fixed `P` and alpha:
/// `base(P, α) + [PH₃; 0]·Y·[H₄ H₅] + (…)ᵀ ≺ 0`.
pub fn solve_y(
    reduced: &ReducedLoop,
    bound: &SymMat,
    p: &SymMat,
    alpha: f64,
) -> Result<DMatrix<f64>, SynthesisError> {
    let k = reduced.drift.nrows();
    let m = bound.dim();
    let pm = p.as_matrix();
    let top = pm * &reduced.drift + reduced.drift.transpose() * pm + pm * alpha;
    let off = pm * &reduced.disturbance;
    let neg_alpha_g = bound.as_matrix() * (-alpha);
    let base = linalg::block(&[&[&top, &off], &[&off.transpose(), &neg_alpha_g]]);
    let base = SymMat::symmetrize(base)?;

    let left = linalg::vstack(&[
        &(pm * &reduced.gain_in),
        &DMatrix::zeros(m, reduced.gain_in.ncols()),
    ]);
    let right = linalg::hstack(&[&reduced.gain_out_state, &reduced.gain_out_disturbance]);

    // Fast analytic feasibility test before running the solver. The margin
    // follows the synthesis inequalities' own strictness scale: certificates
    // sitting at their margin boundary only propagate that much slack here.
    let margin = 0.5e-6 * (1.0 + alpha * linalg::fro(bound.as_matrix()));
    let shifted = SymMat::symmetrize(base.as_matrix() + DMatrix::identity(k + m, k + m) * margin)?;
    let witness = matrix_equations::strict_lyap_solvable(&left, &right, &shifted)?;
    if !witness.feasible {
        return Err(SynthesisError::YInfeasible);
    }

    let mut problem = LmiProblem::new();
    problem.add_rectangular("Y", reduced.gain_in.ncols(), reduced.gain_out_state.nrows());
    problem
        .constraint("controller", Sense::NegDef)
        .constant(base.as_matrix().clone())
        .margin(margin)
        .term_sym(left, "Y", right)
        .done();
    let sol = lmi::solve_feasibility(&problem)?;
    if !sol.is_feasible() {
        return Err(SynthesisError::YInfeasible);
    }
    Ok(sol.matrix("Y").clone())
}

/// Like [`solve_y`] but minimizes the spectral norm of the free parameter
/// over the feasible set, trading certificate slack for small gains.
pub fn solve_y_min_norm(
    reduced: &ReducedLoop,
    bound: &SymMat,
    p: &SymMat,
    alpha: f64,
) -> Result<DMatrix<f64>, SynthesisError> {
    let k = reduced.drift.nrows();
    let m = bound.dim();
    let pm = p.as_matrix();
    let top = pm * &reduced.drift + reduced.drift.transpose() * pm + pm * alpha;
    let off = pm * &reduced.disturbance;
    let neg_alpha_g = bound.as_matrix() * (-alpha);
    let base = linalg::block(&[&[&top, &off], &[&off.transpose(), &neg_alpha_g]]);
    let base = SymMat::symmetrize(base)?;
    let margin = 0.5e-6 * (1.0 + alpha * linalg::fro(bound.as_matrix()));
    let shifted = SymMat::symmetrize(base.as_matrix() + DMatrix::identity(k + m, k + m) * margin)?;
    let left = linalg::vstack(&[
        &(pm * &reduced.gain_in),
        &DMatrix::zeros(m, reduced.gain_in.ncols()),
    ]);
    let right = linalg::hstack(&[&reduced.gain_out_state, &reduced.gain_out_disturbance]);
    let witness = matrix_equations::strict_lyap_solvable(&left, &right, &shifted)?;
    if !witness.feasible {
        return Err(SynthesisError::YInfeasible);
    }

    let (rows, cols) = (reduced.gain_in.ncols(), reduced.gain_out_state.nrows());
    let mut problem = LmiProblem::new();
    problem.add_rectangular("Y", rows, cols);
    problem.add_scalar("t");
    problem
        .constraint("controller", Sense::NegDef)
        .constant(base.as_matrix().clone())
        .margin(margin)
        .term_sym(left, "Y", right)
        .done();
    // ‖Y‖₂ ≤ t as the block [tI Y; Yᵀ tI] ⪰ 0
    let up = linalg::vstack(&[&DMatrix::identity(rows, rows), &DMatrix::zeros(cols, rows)]);
    let low = linalg::vstack(&[&DMatrix::zeros(rows, cols), &DMatrix::identity(cols, cols)]);
    problem
        .constraint("norm_cap", Sense::PosSemiDef)
        .term_sym(up.clone(), "Y", low.transpose())
        .term_scaled("t", DMatrix::identity(rows + cols, rows + cols))
        .done();
    let objective =
        Objective::Minimize(LinearObjective::new().trace_term("t", DMatrix::identity(1, 1)));
    let sol = lmi::minimize(&problem, &objective)?;
    if !sol.is_feasible() {
        return Err(SynthesisError::YInfeasible);
    }
    Ok(sol.matrix("Y").clone())
}

/// Recovers the stacked controller matrix from the free parameter:
/// `X = (KB)⁺KA·T⁺ + Y + (KB)⁺KB·Y·D·T⁺` with `T = D(K⁺K − I)`.
pub fn recover_controller(
    y: &DMatrix<f64>,
    lifted: &LiftedSystem,
) -> Result<Controller, SynthesisError> {
    let k = &lifted.target;
    let n = k.ncols();
    let k_pinv = linalg::pinv(k, 0.0)?;
    let kb = k * &lifted.input;
    let kb_pinv = linalg::pinv(&kb, 0.0)?;
    let ka = k * &lifted.drift;
    let t = &lifted.measurement * (&k_pinv * k - DMatrix::identity(n, n));
    let t_floor = linalg::projector_product_floor(&lifted.measurement, k, &k_pinv)?;
    let t_pinv = linalg::pinv_floored(&t, 0.0, t_floor)?;
    let x = &kb_pinv * &ka * &t_pinv + y + &kb_pinv * &kb * y * &lifted.measurement * &t_pinv;
    Ok(Controller::from_stacked(&x, &lifted.dims))
}

/// Transforms a controller designed against the auxiliary output
/// `ŷ = y − D_u·u` into one driven by the true measured output.
pub fn recover_feedthrough_controller(
    ctrl: &Controller,
    control_feedthrough: &DMatrix<f64>,
) -> Result<Controller, SynthesisError> {
    let d_u = control_feedthrough;
    if d_u.nrows() != ctrl.d_y.ncols() || d_u.ncols() != ctrl.d_y.nrows() {
        return Err(SynthesisError::DimensionMismatch(format!(
            "feedthrough is {}x{}, controller output gain is {}x{}",
            d_u.nrows(),
            d_u.ncols(),
            ctrl.d_y.nrows(),
            ctrl.d_y.ncols()
        )));
    }
    let b1 = ctrl.d_y.nrows();
    let w = (DMatrix::identity(b1, b1) + &ctrl.d_y * d_u)
        .try_inverse()
        .ok_or(SynthesisError::NotRealizable)?;
    let c_new = &w * &ctrl.c;
    let d_y_new = &w * &ctrl.d_y;
    let d_g_new = &w * &ctrl.d_g;
    Ok(Controller {
        a: &ctrl.a - &ctrl.b_y * d_u * &c_new,
        b_y: &ctrl.b_y - &ctrl.b_y * d_u * &d_y_new,
        b_g: &ctrl.b_g - &ctrl.b_y * d_u * &d_g_new,
        c: c_new,
        d_y: d_y_new,
        d_g: d_g_new,
    })
}

/// Physical closed loop `(M, N)` with the controller driven by the true
/// measured output, eliminating the algebraic loop through `D_u`.
pub fn close_loop_physical(
    plant: &PlantModel,
    reference: &ReferenceModel,
    ctrl: &Controller,
) -> Result<(DMatrix<f64>, DMatrix<f64>), SynthesisError> {
    let b1 = plant.control_dim();
    let w = (DMatrix::identity(b1, b1) - &ctrl.d_y * &plant.d_u)
        .try_inverse()
        .ok_or(SynthesisError::NotRealizable)?;
    // u = W(C x_c + D_y C_p x + D_y D_w w + D_g C_r x_r)
    let u_x = &w * &ctrl.d_y * &plant.c;
    let u_r = &w * &ctrl.d_g * &reference.c;
    let u_c = &w * &ctrl.c;
    let u_w = &w * &ctrl.d_y * &plant.d_w;

    let (a1, a2, a3) = (plant.state_dim(), reference.state_dim(), ctrl.order());
    let (c1, c2) = (plant.disturbance_dim(), reference.command_dim());
    let z = DMatrix::<f64>::zeros;

    let m11 = &plant.a + &plant.b_u * &u_x;
    let m12 = &plant.b_u * &u_r;
    let m13 = &plant.b_u * &u_c;
    let m31 = &ctrl.b_y * &plant.c + &ctrl.b_y * &plant.d_u * &u_x;
    let m32 = &ctrl.b_g * &reference.c + &ctrl.b_y * &plant.d_u * &u_r;
    let m33 = &ctrl.a + &ctrl.b_y * &plant.d_u * &u_c;
    let m = linalg::block(&[
        &[&m11, &m12, &m13],
        &[&z(a2, a1), &reference.a, &z(a2, a3)],
        &[&m31, &m32, &m33],
    ]);

    let n11 = &plant.b_w + &plant.b_u * &u_w;
    let n31 = &ctrl.b_y * &plant.d_w + &ctrl.b_y * &plant.d_u * &u_w;
    let n = linalg::block(&[
        &[&n11, &z(a1, c2)],
        &[&z(a2, c1), &reference.b],
        &[&n31, &z(a3, c2)],
    ]);
    Ok((m, n))
}

// ---------------------------------------------------------------------------
// full pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum AttemptOutcome {
    StepOneInfeasible,
    ControllerInequalityInfeasible,
    NotVerified { margin: f64 },
    Verified { margin: f64, log_det_p: f64 },
}

#[derive(Debug, Clone)]
pub struct AlphaAttempt {
    pub alpha: f64,
    pub outcome: AttemptOutcome,
    pub trace_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub solvability: SolvabilityReport,
    pub attempts: Vec<AlphaAttempt>,
    pub chosen_alpha: f64,
    pub ccl_converged: bool,
    pub ccl_early_exit: bool,
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub dynamics: DMatrix<f64>,
    pub input: DMatrix<f64>,
    pub target: DMatrix<f64>,
    pub p: SymMat,
    pub alpha: f64,
    pub cylinder: Cylinder,
    /// Verified certificate margin (λ_max of the closed-loop block).
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub controller: Controller,
    pub closed_loop: ClosedLoop,
    pub diagnostics: Diagnostics,
}

/// Runs the complete synthesis pipeline over an alpha grid and returns the
/// verified controller with the smallest target cylinder; among verified
/// candidates ties go to the smallest alpha.
pub fn synthesize(
    problem: &SynthesisProblem,
    alpha_grid: &[f64],
    ccl_opts: &CclOptions,
) -> Result<SynthesisOutcome, SynthesisError> {
    if alpha_grid.is_empty() || alpha_grid.iter().any(|&a| a.is_nan() || a <= 0.0) {
        return Err(SynthesisError::DimensionMismatch(
            "alpha grid must be non-empty and positive".into(),
        ));
    }
    let lifted = assemble(problem);
    let solvability = check_solvability(&lifted, problem)?;
    if !solvability.holds {
        return Err(SynthesisError::SolvabilityFailed {
            residual: solvability.residual,
        });
    }
    let reduced = reduce(&lifted)?;

    let mut grid = alpha_grid.to_vec();
    grid.sort_by(f64::total_cmp);

    struct Candidate {
        controller: Controller,
        p: SymMat,
        alpha: f64,
        margin: f64,
        log_det: f64,
        converged: bool,
        early_exit: bool,
    }
    let mut attempts = Vec::new();
    let mut best: Option<Candidate> = None;

    for &alpha in &grid {
        let run = match cone_complementarity(&reduced, &problem.bound, alpha, ccl_opts) {
            Ok(run) => run,
            Err(SynthesisError::StepOneInfeasible { .. }) => {
                attempts.push(AlphaAttempt {
                    alpha,
                    outcome: AttemptOutcome::StepOneInfeasible,
                    trace_history: Vec::new(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let y = match run.y.clone() {
            Some(y) => y,
            None => match if ccl_opts.min_norm_y {
                solve_y_min_norm(&reduced, &problem.bound, &run.p, alpha)
            } else {
                solve_y(&reduced, &problem.bound, &run.p, alpha)
            } {
                Ok(y) => y,
                Err(SynthesisError::YInfeasible) => {
                    attempts.push(AlphaAttempt {
                        alpha,
                        outcome: AttemptOutcome::ControllerInequalityInfeasible,
                        trace_history: run.trace_history,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            },
        };
        let controller = recover_controller(&y, &lifted)?;
        let (m, n) = close_loop(&lifted, &controller);
        let sys = DisturbedSystem::new(m, n, problem.bound.clone())?;
        let margin = analysis::verify_cylinder(&sys, &lifted.target, &run.p, alpha)?;
        if margin < 0.0 {
            let (vals, _) = run.p.eigen();
            let log_det: f64 = vals.iter().map(|v| v.ln()).sum();
            attempts.push(AlphaAttempt {
                alpha,
                outcome: AttemptOutcome::Verified {
                    margin,
                    log_det_p: log_det,
                },
                trace_history: run.trace_history.clone(),
            });
            if best.as_ref().is_none_or(|b| log_det > b.log_det) {
                best = Some(Candidate {
                    controller,
                    p: run.p,
                    alpha,
                    margin,
                    log_det,
                    converged: run.converged,
                    early_exit: run.early_exit,
                });
            }
        } else {
            attempts.push(AlphaAttempt {
                alpha,
                outcome: AttemptOutcome::NotVerified { margin },
                trace_history: run.trace_history,
            });
        }
    }

    let Some(chosen) = best else {
        return Err(SynthesisError::NoFeasibleAlpha { attempts });
    };

    let controller = if problem.plant.has_control_feedthrough() {
        recover_feedthrough_controller(&chosen.controller, &problem.plant.d_u)?
    } else {
        chosen.controller.clone()
    };
    let (m, n) = close_loop(&lifted, &chosen.controller);
    let q = SymMat::symmetrize(lifted.target.transpose() * chosen.p.as_matrix() * &lifted.target)?;
    let closed_loop = ClosedLoop {
        dynamics: m,
        input: n,
        target: lifted.target.clone(),
        p: chosen.p,
        alpha: chosen.alpha,
        cylinder: Cylinder::new(q)?,
        margin: chosen.margin,
    };
    Ok(SynthesisOutcome {
        controller,
        closed_loop,
        diagnostics: Diagnostics {
            solvability,
            attempts,
            chosen_alpha: chosen.alpha,
            ccl_converged: chosen.converged,
            ccl_early_exit: chosen.early_exit,
        },
    })
}
