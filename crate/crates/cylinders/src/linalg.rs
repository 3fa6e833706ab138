//! Dense real matrix primitives: rank-aware pseudoinverse, PSD square root,
//! definiteness tests and null/range-space bases.
//!
//! Everything here is deterministic: symmetric eigendecomposition backs the
//! symmetric operations, SVD backs the pseudoinverse and rank decisions.
//! Matrices in this crate are small and dense; zero-width and zero-height
//! matrices are first-class citizens so block formulas never need special
//! cases.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Shared relative residual tolerance for solvability and regularity checks.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Relative eigenvalue threshold below which a PSD form is clamped to zero.
pub const PSD_CLAMP_REL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative tolerance {0}")]
    NegativeTolerance(f64),
}

pub fn validate_finite(m: &DMatrix<f64>) -> Result<(), LinalgError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Default rank cutoff: machine epsilon scaled by the larger dimension and
/// the largest singular value.
fn effective_rank_tol(rank_tol: f64, rows: usize, cols: usize, sigma_max: f64) -> f64 {
    if rank_tol > 0.0 {
        rank_tol
    } else {
        f64::EPSILON * rows.max(cols) as f64 * sigma_max
    }
}

struct ThinSvd {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v_t: DMatrix<f64>,
    tol: f64,
}

/// One-sided Jacobi SVD for tall matrices (rows ≥ cols): orthogonalizes the
/// columns of a working copy by plane rotations accumulated into V.
///
/// Direct bidiagonalization-free Jacobi stays accurate on rank-deficient and
/// clustered spectra, which the certificate formulas hit constantly; the
/// matrices here are small enough that its extra flops are irrelevant.
fn jacobi_svd_tall(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    debug_assert!(rows >= cols);
    let mut w = m.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);
    let tol = 1e-15;
    for _sweep in 0..60 {
        let mut converged = true;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let ci = w.column(i);
                let cj = w.column(j);
                let a = ci.dot(&ci);
                let b = cj.dot(&cj);
                let c = ci.dot(&cj);
                if c.abs() <= tol * (a * b).sqrt() || a == 0.0 || b == 0.0 {
                    continue;
                }
                converged = false;
                let zeta = (b - a) / (2.0 * c);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for r in 0..rows {
                    let wi = w[(r, i)];
                    let wj = w[(r, j)];
                    w[(r, i)] = cs * wi - sn * wj;
                    w[(r, j)] = sn * wi + cs * wj;
                }
                for r in 0..cols {
                    let vi = v[(r, i)];
                    let vj = v[(r, j)];
                    v[(r, i)] = cs * vi - sn * vj;
                    v[(r, j)] = sn * vi + cs * vj;
                }
            }
        }
        if converged {
            break;
        }
    }
    let mut sigma = DVector::zeros(cols);
    let mut u = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        let norm = w.column(j).norm();
        sigma[j] = norm;
        if norm > 0.0 {
            u.set_column(j, &(w.column(j) / norm));
        }
    }
    // sort descending for a conventional factorization
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let sigma_sorted = DVector::from_iterator(cols, order.iter().map(|&i| sigma[i]));
    let mut u_sorted = DMatrix::zeros(rows, cols);
    let mut v_sorted = DMatrix::zeros(cols, cols);
    for (pos, &i) in order.iter().enumerate() {
        u_sorted.set_column(pos, &u.column(i));
        v_sorted.set_column(pos, &v.column(i));
    }
    (u_sorted, sigma_sorted, v_sorted.transpose())
}

fn thin_svd(m: &DMatrix<f64>, rank_tol: f64) -> Result<ThinSvd, LinalgError> {
    validate_finite(m)?;
    if rank_tol < 0.0 {
        return Err(LinalgError::NegativeTolerance(rank_tol));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(ThinSvd {
            u: DMatrix::zeros(rows, 0),
            sigma: DVector::zeros(0),
            v_t: DMatrix::zeros(0, cols),
            tol: 0.0,
        });
    }
    let (u, sigma, v_t) = if rows >= cols {
        jacobi_svd_tall(m)
    } else {
        let (ut, sigma, vt_t) = jacobi_svd_tall(&m.transpose());
        (vt_t.transpose(), sigma, ut.transpose())
    };
    let sigma_max = sigma.iter().cloned().fold(0.0_f64, f64::max);
    let tol = effective_rank_tol(rank_tol, rows, cols, sigma_max);
    Ok(ThinSvd { u, sigma, v_t, tol })
}

/// Largest singular value.
pub fn sigma_max(m: &DMatrix<f64>) -> Result<f64, LinalgError> {
    let svd = thin_svd(m, 0.0)?;
    Ok(svd.sigma.iter().cloned().fold(0.0_f64, f64::max))
}

/// Moore-Penrose pseudoinverse with an explicit rank tolerance.
///
/// `rank_tol = 0` selects the automatic cutoff; singular values at or below
/// the cutoff are treated as zero.
pub fn pinv(m: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>, LinalgError> {
    pinv_floored(m, rank_tol, 0.0)
}

/// Pseudoinverse with an additional absolute cutoff floor.
///
/// Needed when `m` is a product like `M(I − C⁺C)` that may vanish exactly:
/// its roundoff then scales with the factors, not with `m` itself, and a
/// purely relative cutoff would invert noise.
pub(crate) fn pinv_floored(
    m: &DMatrix<f64>,
    rank_tol: f64,
    abs_floor: f64,
) -> Result<DMatrix<f64>, LinalgError> {
    let svd = thin_svd(m, rank_tol)?;
    let tol = svd.tol.max(abs_floor);
    let p = svd.sigma.len();
    let mut inv = DMatrix::zeros(p, p);
    for i in 0..p {
        if svd.sigma[i] > tol {
            inv[(i, i)] = 1.0 / svd.sigma[i];
        }
    }
    Ok(svd.v_t.transpose() * inv * svd.u.transpose())
}

/// Roundoff floor for rank decisions on a product `left · Π(base)` where `Π`
/// is assembled from `base` and its pseudoinverse (for example `I − C⁺C`).
pub(crate) fn projector_product_floor(
    left: &DMatrix<f64>,
    base: &DMatrix<f64>,
    base_pinv: &DMatrix<f64>,
) -> Result<f64, LinalgError> {
    let dim = left.nrows().max(left.ncols()).max(1);
    Ok(100.0
        * f64::EPSILON
        * dim as f64
        * sigma_max(left)?
        * (1.0 + sigma_max(base)? * sigma_max(base_pinv)?))
}

/// Numerical rank by singular value thresholding.
pub fn rank(m: &DMatrix<f64>, rank_tol: f64) -> Result<usize, LinalgError> {
    let svd = thin_svd(m, rank_tol)?;
    Ok(svd.sigma.iter().filter(|&&s| s > svd.tol).count())
}

/// Orthonormal bases of the range and kernel of `m`.
///
/// Returns `(range_basis, null_basis)` with shapes rows×rank and
/// cols×(cols−rank).
pub fn null_range_bases(
    m: &DMatrix<f64>,
    rank_tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), LinalgError> {
    let (rows, cols) = m.shape();
    let svd = thin_svd(m, rank_tol)?;
    let kept: Vec<usize> = (0..svd.sigma.len())
        .filter(|&i| svd.sigma[i] > svd.tol)
        .collect();
    let r = kept.len();
    let mut range = DMatrix::zeros(rows, r);
    for (j, &i) in kept.iter().enumerate() {
        range.set_column(j, &svd.u.column(i));
    }
    // Kernel of m is the orthogonal complement of the row space.
    let mut row_space = DMatrix::zeros(cols, r);
    for (j, &i) in kept.iter().enumerate() {
        row_space.set_column(j, &svd.v_t.row(i).transpose());
    }
    let null = orthogonal_complement(&row_space, cols);
    Ok((range, null))
}

/// Orthonormal basis of the orthogonal complement of the column span of
/// `basis` (columns assumed orthonormal) inside R^dim.
fn orthogonal_complement(basis: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let r = basis.ncols();
    if r >= dim {
        return DMatrix::zeros(dim, 0);
    }
    if r == 0 {
        return DMatrix::identity(dim, dim);
    }
    // QR of [basis | I]: the first r reflections reproduce span(basis), the
    // remaining columns of Q complete it to an orthonormal basis of R^dim.
    let mut stacked = DMatrix::zeros(dim, r + dim);
    stacked.view_mut((0, 0), (dim, r)).copy_from(basis);
    stacked
        .view_mut((0, r), (dim, dim))
        .copy_from(&DMatrix::identity(dim, dim));
    let qr = stacked.qr();
    let q = qr.q();
    debug_assert_eq!(q.ncols(), dim);
    q.columns(r, dim - r).into_owned()
}

/// Symmetric matrix with storage-enforced symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    m: DMatrix<f64>,
}

impl SymMat {
    /// Builds from a square matrix, rejecting visible asymmetry; the stored
    /// matrix is the symmetric part.
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        let scale = 1.0 + m.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        let asym = (&m - m.transpose())
            .iter()
            .fold(0.0_f64, |a, &x| a.max(x.abs()));
        if asym > 1e-8 * scale {
            return Err(LinalgError::NotSymmetric(asym));
        }
        Self::symmetrize(m)
    }

    /// Builds from a square matrix by projecting onto its symmetric part.
    /// Intended for products like CᵀPC that are symmetric up to roundoff.
    pub fn symmetrize(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        validate_finite(&m)?;
        if !m.is_square() {
            return Err(LinalgError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self { m: sym })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            m: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self {
            m: DMatrix::from_diagonal(&DVector::from_row_slice(diag)),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Eigendecomposition with eigenvalues sorted ascending; the returned
    /// vectors are the matching orthonormal columns.
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        if d == 0 {
            return (DVector::zeros(0), DMatrix::zeros(0, 0));
        }
        let se = self.m.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
        let values = DVector::from_iterator(d, order.iter().map(|&i| se.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(d, d);
        for (j, &i) in order.iter().enumerate() {
            vectors.set_column(j, &se.eigenvectors.column(i));
        }
        (values, vectors)
    }

    /// Largest absolute eigenvalue (spectral norm for symmetric matrices).
    pub fn spectral_norm(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        let (vals, _) = self.eigen();
        vals.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
    }
}

/// Definiteness classification relative to a nonnegative margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    PositiveDefinite,
    PositiveSemidefinite,
    Indefinite,
    NegativeDefinite,
    NegativeSemidefinite,
}

#[derive(Debug, Clone, Copy)]
pub struct DefinitenessReport {
    pub class: Definiteness,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Classifies a symmetric matrix by the signs of its eigenvalues relative to
/// ±margin and reports the extreme eigenvalues for diagnostics.
///
/// An empty matrix is vacuously positive definite.
pub fn definiteness(s: &SymMat, margin: f64) -> Result<DefinitenessReport, LinalgError> {
    if margin < 0.0 {
        return Err(LinalgError::NegativeTolerance(margin));
    }
    if s.dim() == 0 {
        return Ok(DefinitenessReport {
            class: Definiteness::PositiveDefinite,
            lambda_min: f64::INFINITY,
            lambda_max: f64::NEG_INFINITY,
        });
    }
    let (vals, _) = s.eigen();
    let lambda_min = vals[0];
    let lambda_max = vals[vals.len() - 1];
    let class = if lambda_min > margin {
        Definiteness::PositiveDefinite
    } else if lambda_max < -margin {
        Definiteness::NegativeDefinite
    } else if lambda_min >= -margin {
        Definiteness::PositiveSemidefinite
    } else if lambda_max <= margin {
        Definiteness::NegativeSemidefinite
    } else {
        Definiteness::Indefinite
    };
    Ok(DefinitenessReport {
        class,
        lambda_min,
        lambda_max,
    })
}

/// Symmetric PSD square root.
///
/// Eigenvalues within `-PSD_CLAMP_REL · ‖Q‖` of zero are clamped to zero;
/// anything more negative is rejected.
pub fn sqrt_psd(q: &SymMat) -> Result<SymMat, LinalgError> {
    if q.dim() == 0 {
        return Ok(SymMat::zeros(0));
    }
    let (vals, vecs) = q.eigen();
    let scale = vals.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    let clamp = PSD_CLAMP_REL * scale;
    let mut roots = DVector::zeros(vals.len());
    for i in 0..vals.len() {
        if vals[i] < -clamp {
            return Err(LinalgError::NotPsd(vals[i]));
        }
        roots[i] = vals[i].max(0.0).sqrt();
    }
    let m = &vecs * DMatrix::from_diagonal(&roots) * vecs.transpose();
    SymMat::symmetrize(m)
}

/// Assembles a block matrix from a grid of blocks. Zero-sized blocks are
/// allowed and must carry consistent dimensions.
pub fn block(grid: &[&[&DMatrix<f64>]]) -> DMatrix<f64> {
    assert!(!grid.is_empty(), "block grid must have at least one row");
    let ncols_blocks = grid[0].len();
    assert!(
        grid.iter().all(|r| r.len() == ncols_blocks),
        "block grid rows must have equal length"
    );
    let heights: Vec<usize> = grid.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = grid[0].iter().map(|b| b.ncols()).collect();
    for (i, row) in grid.iter().enumerate() {
        for (j, b) in row.iter().enumerate() {
            assert_eq!(b.nrows(), heights[i], "block ({i},{j}) height mismatch");
            assert_eq!(b.ncols(), widths[j], "block ({i},{j}) width mismatch");
        }
    }
    let total_r: usize = heights.iter().sum();
    let total_c: usize = widths.iter().sum();
    let mut out = DMatrix::zeros(total_r, total_c);
    let mut r0 = 0;
    for (i, row) in grid.iter().enumerate() {
        let mut c0 = 0;
        for (j, b) in row.iter().enumerate() {
            out.view_mut((r0, c0), (heights[i], widths[j]))
                .copy_from(*b);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    out
}

pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    block(&[blocks])
}

pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: Vec<&[&DMatrix<f64>]> = blocks.iter().map(std::slice::from_ref).collect();
    block(&rows)
}

/// Frobenius norm shorthand used by the residual checks.
pub fn fro(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn pinv_identity() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        let p = pinv(&i3, 0.0).unwrap();
        assert_abs_diff_eq!(fro(&(&p - &i3)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pinv_diagonal_projector() {
        let a = m(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let p = pinv(&a, 0.0).unwrap();
        assert_abs_diff_eq!(fro(&(&p - &a)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let a = m(1, 2, &[f64::NAN, 1.0]);
        assert!(matches!(pinv(&a, 0.0), Err(LinalgError::NonFinite)));
    }

    #[test]
    fn pinv_empty_matrices() {
        let a = DMatrix::<f64>::zeros(0, 3);
        let p = pinv(&a, 0.0).unwrap();
        assert_eq!(p.shape(), (3, 0));
        let b = DMatrix::<f64>::zeros(2, 0);
        assert_eq!(pinv(&b, 0.0).unwrap().shape(), (0, 2));
    }

    #[test]
    fn rank_tol_zeroes_small_singular_values() {
        let a = m(2, 2, &[1.0, 0.0, 0.0, 1e-12]);
        assert_eq!(rank(&a, 1e-6).unwrap(), 1);
        assert_eq!(rank(&a, 1e-14).unwrap(), 2);
    }

    #[test]
    fn sqrt_psd_identity_and_diag() {
        let r = sqrt_psd(&SymMat::identity(2)).unwrap();
        assert_abs_diff_eq!(
            fro(&(r.as_matrix() - DMatrix::identity(2, 2))),
            0.0,
            epsilon = 1e-12
        );
        let q = SymMat::from_diagonal(&[4.0, 0.0]);
        let r = sqrt_psd(&q).unwrap();
        let want = m(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(fro(&(r.as_matrix() - want)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_psd_rejects_negative() {
        let q = SymMat::from_diagonal(&[1.0, -0.5]);
        assert!(matches!(sqrt_psd(&q), Err(LinalgError::NotPsd(_))));
    }

    #[test]
    fn definiteness_cases() {
        let pd = definiteness(&SymMat::from_diagonal(&[1.0, 2.0]), 0.0).unwrap();
        assert_eq!(pd.class, Definiteness::PositiveDefinite);
        let ind = definiteness(&SymMat::from_diagonal(&[1.0, -1.0]), 0.0).unwrap();
        assert_eq!(ind.class, Definiteness::Indefinite);
        assert_abs_diff_eq!(ind.lambda_min, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ind.lambda_max, 1.0, epsilon = 1e-12);
        let psd = definiteness(&SymMat::from_diagonal(&[0.0, 1.0]), 0.0).unwrap();
        assert_eq!(psd.class, Definiteness::PositiveSemidefinite);
        let empty = definiteness(&SymMat::zeros(0), 0.0).unwrap();
        assert_eq!(empty.class, Definiteness::PositiveDefinite);
    }

    #[test]
    fn bases_projector_example() {
        let a = m(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (range, null) = null_range_bases(&a, 0.0).unwrap();
        assert_eq!(range.shape(), (2, 1));
        assert_eq!(null.shape(), (2, 1));
        assert_abs_diff_eq!(range[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(null[(1, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bases_difference_map() {
        let a = m(1, 2, &[1.0, -1.0]);
        let (_, null) = null_range_bases(&a, 0.0).unwrap();
        assert_eq!(null.shape(), (2, 1));
        let s = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(null[(0, 0)].abs(), s, epsilon = 1e-12);
        assert_abs_diff_eq!(null[(1, 0)].abs(), s, epsilon = 1e-12);
        assert_abs_diff_eq!(null[(0, 0)] - null[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bases_of_empty_and_zero() {
        let z = DMatrix::<f64>::zeros(2, 3);
        let (range, null) = null_range_bases(&z, 0.0).unwrap();
        assert_eq!(range.shape(), (2, 0));
        assert_eq!(null.shape(), (3, 3));
        let e = DMatrix::<f64>::zeros(0, 4);
        let (range, null) = null_range_bases(&e, 0.0).unwrap();
        assert_eq!(range.shape(), (0, 0));
        assert_eq!(null.shape(), (4, 4));
    }

    #[test]
    fn symmat_rejects_asymmetry() {
        let a = m(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(SymMat::new(a), Err(LinalgError::NotSymmetric(_))));
    }

    #[test]
    fn block_assembly_with_empties() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let e_r = DMatrix::<f64>::zeros(2, 0);
        let b = m(1, 2, &[5.0, 6.0]);
        let e_b = DMatrix::<f64>::zeros(1, 0);
        let out = block(&[&[&a, &e_r], &[&b, &e_b]]);
        assert_eq!(out.shape(), (3, 2));
        assert_abs_diff_eq!(out[(2, 1)], 6.0, epsilon = 0.0);
    }
}
