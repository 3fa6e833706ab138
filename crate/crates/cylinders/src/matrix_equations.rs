//! Solvability of the linear matrix equation `AXB = C` with its full
//! solution parameterization, and the two-sided solvability test for the
//! strict inequality `AXB + (AXB)ᵀ + C ≺ 0`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{self, LinalgError, SymMat, RESIDUAL_TOL};

#[derive(Debug, Error)]
pub enum MatrixEquationError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Outcome of the `AXB = C` solvability test.
///
/// When solvable, every solution is `X(Y) = X0 + Y − projector_left · Y ·
/// projector_right` for an arbitrary `Y`.
#[derive(Debug, Clone)]
pub struct AxbSolution {
    pub solvable: bool,
    /// Particular solution `A⁺ C B⁺`.
    pub x0: DMatrix<f64>,
    /// `A⁺A`.
    pub projector_left: DMatrix<f64>,
    /// `B B⁺`.
    pub projector_right: DMatrix<f64>,
    /// Relative residual of the solvability criterion `AA⁺CB⁺B = C`.
    pub residual: f64,
}

impl AxbSolution {
    /// The solution associated with the free parameter `Y`.
    pub fn solution(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        &self.x0 + y - &self.projector_left * y * &self.projector_right
    }
}

/// Decides solvability of `AXB = C` and returns the particular solution and
/// parameterization projectors.
///
/// The equation is solvable iff `AA⁺CB⁺B = C`, checked at relative tolerance
/// `RESIDUAL_TOL`.
pub fn solve_axb(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<AxbSolution, MatrixEquationError> {
    if a.nrows() != c.nrows() || b.ncols() != c.ncols() {
        return Err(MatrixEquationError::DimensionMismatch(format!(
            "A is {}x{}, B is {}x{}, C is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    let a_pinv = linalg::pinv(a, 0.0)?;
    let b_pinv = linalg::pinv(b, 0.0)?;
    let projected = a * &a_pinv * c * &b_pinv * b;
    let residual = linalg::fro(&(&projected - c)) / (1.0 + linalg::fro(c));
    Ok(AxbSolution {
        solvable: residual <= RESIDUAL_TOL,
        x0: &a_pinv * c * &b_pinv,
        projector_left: &a_pinv * a,
        projector_right: b * &b_pinv,
        residual,
    })
}

/// Witnesses for the two-sided solvability test.
///
/// `AXB + (AXB)ᵀ + C ≺ 0` is solvable in `X` iff there are `μ₁, μ₂` with
/// `C ≺ μ₁ A Aᵀ` and `C ≺ μ₂ BᵀB`. An infeasible side reports `f64::INFINITY`.
#[derive(Debug, Clone, Copy)]
pub struct TwoSidedSolvability {
    pub feasible: bool,
    pub mu1: f64,
    pub mu2: f64,
}

/// Decides whether `AXB + (AXB)ᵀ + C ≺ 0` has a solution `X` and computes
/// scalar witnesses with 10% headroom.
pub fn strict_lyap_solvable(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &SymMat,
) -> Result<TwoSidedSolvability, MatrixEquationError> {
    let n = c.dim();
    if a.nrows() != n || b.ncols() != n {
        return Err(MatrixEquationError::DimensionMismatch(format!(
            "C is {n}x{n}, A has {} rows, B has {} cols",
            a.nrows(),
            b.ncols()
        )));
    }
    let w1 = SymMat::symmetrize(a * a.transpose())?;
    let w2 = SymMat::symmetrize(b.transpose() * b)?;
    let mu1 = one_sided_witness(c, &w1);
    let mu2 = one_sided_witness(c, &w2);
    Ok(TwoSidedSolvability {
        feasible: mu1.is_some() && mu2.is_some(),
        mu1: mu1.unwrap_or(f64::INFINITY),
        mu2: mu2.unwrap_or(f64::INFINITY),
    })
}

/// Smallest-plus-headroom `μ` with `C ≺ μW` for PSD `W`, or `None`.
///
/// Feasibility requires `C` negative definite on `ker W`; the witness comes
/// from the generalized eigenvalue bound on the complement, with a bisection
/// fallback when the kernel restriction is nearly singular.
fn one_sided_witness(c: &SymMat, w: &SymMat) -> Option<f64> {
    let n = c.dim();
    if n == 0 {
        return Some(0.0);
    }
    let (w_vals, w_vecs) = w.eigen();
    let w_max = w_vals[n - 1].max(0.0);
    let tol = f64::EPSILON * n as f64 * w_max;
    let kernel_idx: Vec<usize> = (0..n).filter(|&i| w_vals[i] <= tol).collect();
    let pos_idx: Vec<usize> = (0..n).filter(|&i| w_vals[i] > tol).collect();

    let c_scale = 1.0 + c.spectral_norm();
    let cm = c.as_matrix();

    if pos_idx.is_empty() {
        // W vanishes: C ≺ 0 itself is required and any μ works.
        let (c_vals, _) = c.eigen();
        return if c_vals[n - 1] < 0.0 { Some(0.0) } else { None };
    }

    let mu_star = if kernel_idx.is_empty() {
        let u = select_columns(&w_vecs, &pos_idx);
        let c_uu = u.transpose() * cm * &u;
        generalized_max(&c_uu, &w_vals, &pos_idx)
    } else {
        let v = select_columns(&w_vecs, &kernel_idx);
        let c_vv = SymMat::symmetrize(v.transpose() * cm * &v).expect("restriction symmetric");
        let (vals, _) = c_vv.eigen();
        let lam_max = vals[vals.len() - 1];
        if lam_max >= 0.0 {
            return None;
        }
        if lam_max > -1e-10 * c_scale {
            // kernel restriction nearly singular: Schur complement unusable
            return bisect_witness(c, w);
        }
        let u = select_columns(&w_vecs, &pos_idx);
        let c_uu = u.transpose() * cm * &u;
        let c_uv = u.transpose() * cm * &v;
        let c_vv_inv = linalg::pinv(c_vv.as_matrix(), 0.0).ok()?;
        let schur = &c_uu - &c_uv * c_vv_inv * c_uv.transpose();
        generalized_max(&schur, &w_vals, &pos_idx)
    };

    let headroom = mu_star + 0.1 * mu_star.abs() + 1e-12 * c_scale;
    Some(headroom.max(0.0))
}

/// λ_max of `W_U^{-1/2} S W_U^{-1/2}` where `W_U = diag(w_vals[pos_idx])`.
fn generalized_max(s: &DMatrix<f64>, w_vals: &nalgebra::DVector<f64>, pos_idx: &[usize]) -> f64 {
    let r = pos_idx.len();
    let mut scaled = s.clone();
    for i in 0..r {
        for j in 0..r {
            scaled[(i, j)] /= (w_vals[pos_idx[i]] * w_vals[pos_idx[j]]).sqrt();
        }
    }
    let sym = SymMat::symmetrize(scaled).expect("scaled restriction symmetric");
    let (vals, _) = sym.eigen();
    vals[vals.len() - 1]
}

fn bisect_witness(c: &SymMat, w: &SymMat) -> Option<f64> {
    let feasible_at = |mu: f64| -> bool {
        let shifted = SymMat::symmetrize(c.as_matrix() - w.as_matrix() * mu).unwrap();
        let (vals, _) = shifted.eigen();
        vals[vals.len() - 1] < 0.0
    };
    let mut hi = 1e12;
    if !feasible_at(hi) {
        return None;
    }
    if feasible_at(0.0) {
        return Some(0.0);
    }
    let mut lo = 0.0;
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if feasible_at(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi * 1.1)
}

fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), idx.len());
    for (j, &i) in idx.iter().enumerate() {
        out.set_column(j, &m.column(i));
    }
    out
}
