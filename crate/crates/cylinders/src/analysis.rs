//! Attracting-cylinder certificates for disturbed linear systems.
//!
//! For `ẋ = Ax + Bf` with `fᵀGf ≤ 1` and an output map `C` of full row rank
//! satisfying `CA(I − C⁺C) = 0`, the output `y = Cx` has autonomous dynamics
//! `ẏ = CAC⁺y + CBf`. A matrix `P ≻ 0` and rate `α > 0` making the
//! certificate block
//!
//! ```text
//! [ P·CAC⁺ + (CAC⁺)ᵀP + αP   P·CB ]
//! [ (CB)ᵀP                  −αG  ]  ≺ 0
//! ```
//!
//! negative definite prove that `{x : xᵀCᵀPCx ≤ 1}` is an invariant and
//! attracting (k,n)-cylinder. With `C = I` this is the classical invariant
//! ellipsoid certificate.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{Cylinder, GeometryError};
use crate::linalg::{self, LinalgError, SymMat, RESIDUAL_TOL};
use crate::lmi::{self, LmiProblem, Objective, Sense};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lmi(#[from] lmi::LmiError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("disturbance bound G must be positive definite (min eigenvalue {0:.3e})")]
    BoundNotPositive(f64),
    #[error(
        "output map is not regular: rank {rank} of {rows} rows, closure residual {residual:.3e}"
    )]
    NotRegular {
        rank: usize,
        rows: usize,
        residual: f64,
    },
    #[error("alpha grid is empty or contains non-positive entries")]
    BadAlphaGrid,
    #[error("no alpha in the grid admits a certificate; best margin {best_margin:.3e}")]
    Infeasible {
        best_margin: f64,
        per_alpha: Vec<AlphaStatus>,
    },
}

/// `ẋ = Ax + Bf` with the admissible-disturbance bound `fᵀGf ≤ 1`, `G ≻ 0`.
#[derive(Debug, Clone)]
pub struct DisturbedSystem {
    drift: DMatrix<f64>,
    input: DMatrix<f64>,
    bound: SymMat,
}

impl DisturbedSystem {
    pub fn new(
        drift: DMatrix<f64>,
        input: DMatrix<f64>,
        bound: SymMat,
    ) -> Result<Self, AnalysisError> {
        if !drift.is_square() {
            return Err(AnalysisError::DimensionMismatch(format!(
                "drift must be square, got {}x{}",
                drift.nrows(),
                drift.ncols()
            )));
        }
        if input.nrows() != drift.nrows() {
            return Err(AnalysisError::DimensionMismatch(format!(
                "input has {} rows, state dimension is {}",
                input.nrows(),
                drift.nrows()
            )));
        }
        if input.ncols() != bound.dim() {
            return Err(AnalysisError::DimensionMismatch(format!(
                "bound G is {}x{}, disturbance dimension is {}",
                bound.dim(),
                bound.dim(),
                input.ncols()
            )));
        }
        if bound.dim() > 0 {
            let rep = linalg::definiteness(&bound, 0.0)?;
            if rep.class != linalg::Definiteness::PositiveDefinite {
                return Err(AnalysisError::BoundNotPositive(rep.lambda_min));
            }
        }
        Ok(Self {
            drift,
            input,
            bound,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    pub fn input(&self) -> &DMatrix<f64> {
        &self.input
    }

    pub fn bound(&self) -> &SymMat {
        &self.bound
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegularityReport {
    pub ok: bool,
    pub output_rank: usize,
    pub rows: usize,
    /// Relative residual of `CA(I − C⁺C)`.
    pub residual: f64,
}

/// Checks that `C` has full row rank and that `CA(I − C⁺C) = 0`, i.e. that
/// the output dynamics close on themselves.
pub fn check_output_regularity(
    c: &DMatrix<f64>,
    drift: &DMatrix<f64>,
) -> Result<RegularityReport, AnalysisError> {
    if c.ncols() != drift.nrows() {
        return Err(AnalysisError::DimensionMismatch(format!(
            "output map has {} columns, state dimension is {}",
            c.ncols(),
            drift.nrows()
        )));
    }
    let rows = c.nrows();
    let rank = linalg::rank(c, 0.0)?;
    let c_pinv = linalg::pinv(c, 0.0)?;
    let ca = c * drift;
    let closure = &ca * (DMatrix::identity(c.ncols(), c.ncols()) - &c_pinv * c);
    let residual = linalg::fro(&closure) / (1.0 + linalg::fro(&ca));
    Ok(RegularityReport {
        ok: rank == rows && residual <= RESIDUAL_TOL,
        output_rank: rank,
        rows,
        residual,
    })
}

/// Per-alpha record from the grid search.
#[derive(Debug, Clone, Copy)]
pub struct AlphaStatus {
    pub alpha: f64,
    pub feasible: bool,
    /// log det P of the certificate (larger = smaller cylinder cross-section).
    pub log_det: f64,
    /// λ_max of the certificate block at the solution.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct AttractingCylinder {
    pub p: SymMat,
    pub alpha: f64,
    pub cylinder: Cylinder,
    /// λ_max of the certificate block; negative certifies the set.
    pub lmi_margin: f64,
    pub per_alpha: Vec<AlphaStatus>,
}

/// Default log-spaced alpha grid: 20 points spanning 1e−2…1e2 times the
/// spectral scale of the reduced drift `CAC⁺`.
pub fn default_alpha_grid(
    c: &DMatrix<f64>,
    drift: &DMatrix<f64>,
) -> Result<Vec<f64>, AnalysisError> {
    let c_pinv = linalg::pinv(c, 0.0)?;
    let reduced = c * drift * c_pinv;
    let scale = if reduced.nrows() == 0 {
        1.0
    } else {
        linalg::sigma_max(&reduced)?.max(1e-6)
    };
    let n = 20;
    Ok((0..n)
        .map(|i| scale * 10f64.powf(-2.0 + 4.0 * i as f64 / (n - 1) as f64))
        .collect())
}

/// Grid-searches `alpha` and, for each feasible value, picks the certificate
/// `P ≻ 0` of maximal log det (the smallest cylinder cross-section);
/// returns the best over the grid, ties broken by the smallest alpha.
pub fn find_attracting_cylinder(
    sys: &DisturbedSystem,
    c: &DMatrix<f64>,
    alpha_grid: &[f64],
) -> Result<AttractingCylinder, AnalysisError> {
    let reg = check_output_regularity(c, &sys.drift)?;
    if !reg.ok {
        return Err(AnalysisError::NotRegular {
            rank: reg.output_rank,
            rows: reg.rows,
            residual: reg.residual,
        });
    }
    if alpha_grid.is_empty() || alpha_grid.iter().any(|&a| a.is_nan() || a <= 0.0) {
        return Err(AnalysisError::BadAlphaGrid);
    }
    let mut grid = alpha_grid.to_vec();
    grid.sort_by(f64::total_cmp);

    let c_pinv = linalg::pinv(c, 0.0)?;
    let reduced_drift = c * &sys.drift * &c_pinv;
    let reduced_input = c * &sys.input;

    let mut per_alpha = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, SymMat, f64, f64)> = None; // (logdet, P, alpha, margin)
    let mut best_margin_seen = f64::INFINITY;
    for &alpha in &grid {
        let sol = solve_certificate(&reduced_drift, &reduced_input, &sys.bound, alpha)?;
        match sol {
            Some(p) => {
                let margin = verify_reduced(&reduced_drift, &reduced_input, &sys.bound, &p, alpha);
                let (vals, _) = p.eigen();
                let log_det: f64 = vals.iter().map(|v| v.ln()).sum();
                per_alpha.push(AlphaStatus {
                    alpha,
                    feasible: margin < 0.0,
                    log_det,
                    margin,
                });
                best_margin_seen = best_margin_seen.min(margin);
                if margin < 0.0 && best.as_ref().is_none_or(|b| log_det > b.0) {
                    best = Some((log_det, p, alpha, margin));
                }
            }
            None => {
                per_alpha.push(AlphaStatus {
                    alpha,
                    feasible: false,
                    log_det: f64::NEG_INFINITY,
                    margin: f64::INFINITY,
                });
            }
        }
    }
    let Some((_, p, alpha, margin)) = best else {
        return Err(AnalysisError::Infeasible {
            best_margin: best_margin_seen,
            per_alpha,
        });
    };
    let q = SymMat::symmetrize(c.transpose() * p.as_matrix() * c)?;
    Ok(AttractingCylinder {
        cylinder: Cylinder::new(q)?,
        p,
        alpha,
        lmi_margin: margin,
        per_alpha,
    })
}

/// Detailed certificate evaluation: the extreme eigenvalue plus the block's
/// spectral norm, for relative (soft) margin judgments.
#[derive(Debug, Clone, Copy)]
pub struct CertificateCheck {
    /// λ_max of the certificate block; negative certifies.
    pub margin: f64,
    pub block_norm: f64,
}

impl CertificateCheck {
    pub fn relative_margin(&self) -> f64 {
        if self.block_norm == 0.0 {
            self.margin
        } else {
            self.margin / self.block_norm
        }
    }
}

/// Assembles and measures the certificate block for given data.
pub fn check_certificate(
    sys: &DisturbedSystem,
    c: &DMatrix<f64>,
    p: &SymMat,
    alpha: f64,
) -> Result<CertificateCheck, AnalysisError> {
    if c.ncols() != sys.state_dim() {
        return Err(AnalysisError::DimensionMismatch(format!(
            "output map has {} columns, state dimension is {}",
            c.ncols(),
            sys.state_dim()
        )));
    }
    if p.dim() != c.nrows() {
        return Err(AnalysisError::DimensionMismatch(format!(
            "P is {}x{}, output dimension is {}",
            p.dim(),
            p.dim(),
            c.nrows()
        )));
    }
    let c_pinv = linalg::pinv(c, 0.0)?;
    let reduced_drift = c * &sys.drift * c_pinv;
    let reduced_input = c * &sys.input;
    let block = certificate_block(&reduced_drift, &reduced_input, &sys.bound, p, alpha);
    if block.dim() == 0 {
        return Ok(CertificateCheck {
            margin: f64::NEG_INFINITY,
            block_norm: 0.0,
        });
    }
    let (vals, _) = block.eigen();
    Ok(CertificateCheck {
        margin: vals[vals.len() - 1],
        block_norm: vals[0].abs().max(vals[vals.len() - 1].abs()),
    })
}

/// λ_max of the certificate block for given data; negative certifies.
pub fn verify_cylinder(
    sys: &DisturbedSystem,
    c: &DMatrix<f64>,
    p: &SymMat,
    alpha: f64,
) -> Result<f64, AnalysisError> {
    if c.ncols() != sys.state_dim() {
        return Err(AnalysisError::DimensionMismatch(format!(
            "output map has {} columns, state dimension is {}",
            c.ncols(),
            sys.state_dim()
        )));
    }
    if p.dim() != c.nrows() {
        return Err(AnalysisError::DimensionMismatch(format!(
            "P is {}x{}, output dimension is {}",
            p.dim(),
            p.dim(),
            c.nrows()
        )));
    }
    let c_pinv = linalg::pinv(c, 0.0)?;
    let reduced_drift = c * &sys.drift * c_pinv;
    let reduced_input = c * &sys.input;
    Ok(verify_reduced(
        &reduced_drift,
        &reduced_input,
        &sys.bound,
        p,
        alpha,
    ))
}

/// Assembles the certificate block from already-reduced data.
pub(crate) fn certificate_block(
    reduced_drift: &DMatrix<f64>,
    reduced_input: &DMatrix<f64>,
    bound: &SymMat,
    p: &SymMat,
    alpha: f64,
) -> SymMat {
    let pm = p.as_matrix();
    let top = pm * reduced_drift + reduced_drift.transpose() * pm + pm * alpha;
    let off = pm * reduced_input;
    let bottom = bound.as_matrix() * (-alpha);
    let blk = linalg::block(&[&[&top, &off], &[&off.transpose(), &bottom]]);
    SymMat::symmetrize(blk).expect("certificate block is symmetric")
}

fn verify_reduced(
    reduced_drift: &DMatrix<f64>,
    reduced_input: &DMatrix<f64>,
    bound: &SymMat,
    p: &SymMat,
    alpha: f64,
) -> f64 {
    let blk = certificate_block(reduced_drift, reduced_input, bound, p, alpha);
    if blk.dim() == 0 {
        return f64::NEG_INFINITY;
    }
    let (vals, _) = blk.eigen();
    vals[vals.len() - 1]
}

/// Solves the certificate LMI at fixed alpha, maximizing log det P.
fn solve_certificate(
    reduced_drift: &DMatrix<f64>,
    reduced_input: &DMatrix<f64>,
    bound: &SymMat,
    alpha: f64,
) -> Result<Option<SymMat>, AnalysisError> {
    let k = reduced_drift.nrows();
    let m = bound.dim();
    let up = linalg::vstack(&[&DMatrix::identity(k, k), &DMatrix::zeros(m, k)]);
    let low = linalg::vstack(&[&DMatrix::zeros(k, m), &DMatrix::identity(m, m)]);
    let constant = &low * (bound.as_matrix() * (-alpha)) * low.transpose();

    let mut problem = LmiProblem::new();
    problem.add_symmetric("P", k);
    problem
        .constraint("certificate", Sense::NegDef)
        .constant(constant)
        .term_sym(up.clone(), "P", reduced_drift * up.transpose())
        .term(&up * alpha, "P", up.transpose())
        .term_sym(up.clone(), "P", reduced_input * low.transpose())
        .done();
    problem
        .constraint("p_pd", Sense::PosDef)
        .term(DMatrix::identity(k, k), "P", DMatrix::identity(k, k))
        .done();

    let sol = lmi::minimize(&problem, &Objective::MaxLogDet("P".into()))?;
    if !sol.is_feasible() {
        return Ok(None);
    }
    Ok(Some(sol.symmetric("P")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn observation_example() -> (DisturbedSystem, DMatrix<f64>) {
        // first-order plant with a first-order observer, a=1, l=3, b=2
        let (a, l, b) = (1.0, 3.0, 2.0);
        let drift = DMatrix::from_row_slice(2, 2, &[a, 0.0, l, a - l]);
        let input = DMatrix::from_row_slice(2, 1, &[b, 0.0]);
        let sys = DisturbedSystem::new(drift, input, SymMat::identity(1)).unwrap();
        let c = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        (sys, c)
    }

    #[test]
    fn regularity_identity_output() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
        let rep = check_output_regularity(&DMatrix::identity(2, 2), &a).unwrap();
        assert!(rep.ok);
        assert_abs_diff_eq!(rep.residual, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn regularity_observation_error_output() {
        let (sys, c) = observation_example();
        let rep = check_output_regularity(&c, sys.drift()).unwrap();
        assert!(rep.ok, "residual {}", rep.residual);
    }

    #[test]
    fn regularity_fails_for_double_integrator_position() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let rep = check_output_regularity(&c, &a).unwrap();
        assert!(!rep.ok);
        assert!(rep.residual > 0.1);
    }

    #[test]
    fn observation_strip_bound_matches_analytic_value() {
        // analytic best bound is b²/(l−a)² = 1 at alpha = l−a = 2
        let (sys, c) = observation_example();
        let grid: Vec<f64> = (1..=35).map(|i| 0.1 * i as f64).collect();
        let found = find_attracting_cylinder(&sys, &c, &grid).unwrap();
        let p = found.p.as_matrix()[(0, 0)];
        assert_abs_diff_eq!(1.0 / p, 1.0, epsilon = 0.01);
        assert_abs_diff_eq!(found.alpha, 2.0, epsilon = 1e-12);
        assert!(found.lmi_margin < 0.0);
        assert_eq!(found.cylinder.rank(), 1);
        assert_eq!(found.cylinder.ambient_dim(), 2);
    }

    #[test]
    fn stable_identity_system_is_certifiable() {
        let sys = DisturbedSystem::new(
            DMatrix::identity(2, 2) * -1.0,
            DMatrix::identity(2, 2),
            SymMat::identity(2),
        )
        .unwrap();
        let found =
            find_attracting_cylinder(&sys, &DMatrix::identity(2, 2), &[0.5, 1.0, 1.5]).unwrap();
        assert!(found.lmi_margin < 0.0);
        assert!(found.cylinder.is_ellipsoid());
        // at alpha = 1 the feasible set is 0 ≺ P ≺ I: P = I sits exactly on
        // the boundary and P = I/2 is strictly inside
        let margin =
            verify_cylinder(&sys, &DMatrix::identity(2, 2), &SymMat::identity(2), 1.0).unwrap();
        assert_abs_diff_eq!(margin, 0.0, epsilon = 1e-12);
        let margin = verify_cylinder(
            &sys,
            &DMatrix::identity(2, 2),
            &SymMat::from_diagonal(&[0.5, 0.5]),
            1.0,
        )
        .unwrap();
        assert!(margin < -0.1);
        // det-maximization drives P toward I: the cylinder stays inside the
        // radius-√2 ball
        let (vals, _) = found.p.eigen();
        assert!(vals[0] > 0.5, "P eigenvalues {vals:?}");
    }

    #[test]
    fn verify_without_disturbance_channel() {
        // A = −I, C = I, P = I, alpha = 1, no disturbance: block is −P
        let sys = DisturbedSystem::new(
            DMatrix::identity(2, 2) * -1.0,
            DMatrix::zeros(2, 0),
            SymMat::zeros(0),
        )
        .unwrap();
        let margin =
            verify_cylinder(&sys, &DMatrix::identity(2, 2), &SymMat::identity(2), 1.0).unwrap();
        assert_abs_diff_eq!(margin, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn unstable_pairing_has_positive_margin() {
        let sys = DisturbedSystem::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            SymMat::identity(1),
        )
        .unwrap();
        let margin =
            verify_cylinder(&sys, &DMatrix::identity(1, 1), &SymMat::identity(1), 0.01).unwrap();
        assert!(margin > 0.0);
    }
}
