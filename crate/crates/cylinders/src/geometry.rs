//! (k,n)-cylinders and their geometric calculus.
//!
//! A cylinder `{x ∈ Rⁿ : xᵀQx ≤ 1}` with `Q ⪰ 0`, `rank Q = k` decomposes
//! into a k-dimensional ellipsoid on `range Q` swept along `ker Q`. Images
//! under full-row-rank linear maps are again cylinders; projecting onto a
//! coordinate plane therefore yields the whole plane, a strip, or an ellipse.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, LinalgError, SymMat, PSD_CLAMP_REL};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("form is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("point dimension {got} does not match ambient dimension {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error("map has {got} columns but the cylinder lives in R^{expected}")]
    MapDimension { expected: usize, got: usize },
    #[error("map must have full row rank {rows}, numerical rank is {rank}")]
    RowRankDeficient { rows: usize, rank: usize },
    #[error("invalid plane axes ({i}, {j}) for ambient dimension {n}")]
    InvalidAxes { i: usize, j: usize, n: usize },
}

/// The set `{x : xᵀQx ≤ 1}` with `Q ⪰ 0`; `rank Q` is fixed at construction.
#[derive(Debug, Clone)]
pub struct Cylinder {
    q: SymMat,
    rank: usize,
    // eigendecomposition of the clamped form, ascending eigenvalues
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl Cylinder {
    /// Builds a cylinder from a PSD quadratic form.
    ///
    /// Eigenvalues within `PSD_CLAMP_REL · ‖Q‖` of zero are clamped to exact
    /// zero (they are roundoff from upstream computations); anything more
    /// negative is rejected.
    pub fn new(q: SymMat) -> Result<Self, GeometryError> {
        Self::build(q, 0.0, false)
    }

    /// Constructor for forms produced by the image formula, which are PSD by
    /// construction: eigenvalues below the computation's own noise level
    /// (`noise_floor`) are roundoff and get clamped; gross negatives still
    /// error since they can only be an upstream bug.
    fn from_computed(q: SymMat, noise_floor: f64) -> Result<Self, GeometryError> {
        Self::build(q, noise_floor, true)
    }

    fn build(q: SymMat, noise_floor: f64, computed: bool) -> Result<Self, GeometryError> {
        let n = q.dim();
        let (vals, vecs) = q.eigen();
        let scale = vals.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        let clamp = (PSD_CLAMP_REL * scale).max(noise_floor);
        let reject_below = if computed {
            1e-6 * (1.0 + scale)
        } else {
            clamp
        };
        let mut clamped = DVector::zeros(n);
        let mut rank = 0;
        for i in 0..n {
            if vals[i] < -reject_below {
                return Err(GeometryError::NotPsd(vals[i]));
            }
            if vals[i] > clamp {
                clamped[i] = vals[i];
                rank += 1;
            }
        }
        let rebuilt = &vecs * DMatrix::from_diagonal(&clamped) * vecs.transpose();
        Ok(Self {
            q: SymMat::symmetrize(rebuilt)?,
            rank,
            eigenvalues: clamped,
            eigenvectors: vecs,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.q.dim()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn form(&self) -> &SymMat {
        &self.q
    }

    /// Eigenvalues of the clamped form, ascending; exactly `n − k` zeros.
    pub fn spectrum(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `rank Q = n` means the set is a bounded ellipsoid.
    pub fn is_ellipsoid(&self) -> bool {
        self.rank == self.ambient_dim()
    }

    /// Quadratic-form value `xᵀQx`; values ≤ 1 are inside the set.
    pub fn membership(&self, x: &DVector<f64>) -> Result<f64, GeometryError> {
        let n = self.ambient_dim();
        if x.len() != n {
            return Err(GeometryError::PointDimension {
                expected: n,
                got: x.len(),
            });
        }
        Ok((x.transpose() * self.q.as_matrix() * x)[(0, 0)])
    }

    /// Splits the set into its bounded ellipsoidal part on `range Q` and the
    /// unbounded directions `ker Q`.
    pub fn decompose(&self) -> Decomposition {
        let n = self.ambient_dim();
        let k = self.rank;
        // ascending eigenvalues: kernel first, range last
        let kernel_basis = self.eigenvectors.columns(0, n - k).into_owned();
        let range_basis = self.eigenvectors.columns(n - k, k).into_owned();
        let restricted = range_basis.transpose() * self.q.as_matrix() * &range_basis;
        Decomposition {
            ellipsoid_form: SymMat::symmetrize(restricted).expect("restriction is symmetric"),
            range_basis,
            kernel_basis,
        }
    }

    /// Image of the cylinder under `y = Cx` for a full-row-rank map `C`.
    ///
    /// With `M = Q^{1/2}` and `N = I − C⁺C` the image form is
    /// `R = C⁺ᵀ M (I − (MN)(MN)⁺) M C⁺`, which is PSD by construction.
    pub fn image(&self, c: &DMatrix<f64>, rank_tol: f64) -> Result<Cylinder, GeometryError> {
        let n = self.ambient_dim();
        if c.ncols() != n {
            return Err(GeometryError::MapDimension {
                expected: n,
                got: c.ncols(),
            });
        }
        let rows = c.nrows();
        let r = linalg::rank(c, rank_tol)?;
        if r != rows {
            return Err(GeometryError::RowRankDeficient { rows, rank: r });
        }
        let c_pinv = linalg::pinv(c, rank_tol)?;
        let m = linalg::sqrt_psd(&self.q)?;
        let n_proj = DMatrix::identity(n, n) - &c_pinv * c;
        let mn = m.as_matrix() * n_proj;
        let mn_floor = linalg::projector_product_floor(m.as_matrix(), c, &c_pinv)?;
        let mn_pinv = linalg::pinv_floored(&mn, rank_tol, mn_floor)?;
        let inner = DMatrix::identity(n, n) - &mn * mn_pinv;
        let r_form = c_pinv.transpose() * m.as_matrix() * inner * m.as_matrix() * &c_pinv;
        // roundoff in R scales with the factors, not with R itself
        let factor_scale = linalg::sigma_max(&(m.as_matrix() * &c_pinv))?;
        let noise_floor = 100.0 * f64::EPSILON * n as f64 * factor_scale * factor_scale;
        Cylinder::from_computed(SymMat::symmetrize(r_form)?, noise_floor)
    }

    /// Projection onto the coordinate plane spanned by axes `i` and `j`
    /// (zero-based), classified by the rank of the projected form.
    pub fn project_to_plane(&self, i: usize, j: usize) -> Result<Projection, GeometryError> {
        let n = self.ambient_dim();
        if n < 2 || i == j || i >= n || j >= n {
            return Err(GeometryError::InvalidAxes { i, j, n });
        }
        let mut sel = DMatrix::zeros(2, n);
        sel[(0, i)] = 1.0;
        sel[(1, j)] = 1.0;
        let image = self.image(&sel, 0.0)?;
        let kind = match image.rank() {
            0 => ProjectionKind::WholePlane,
            1 => ProjectionKind::Strip,
            _ => ProjectionKind::Ellipse,
        };
        Ok(Projection { kind, image })
    }
}

/// Ellipsoid ⊕ kernel decomposition of a cylinder.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// k×k positive definite restriction of Q to the range basis.
    pub ellipsoid_form: SymMat,
    /// n×k orthonormal basis of `range Q`.
    pub range_basis: DMatrix<f64>,
    /// n×(n−k) orthonormal basis of `ker Q`.
    pub kernel_basis: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    WholePlane,
    Strip,
    Ellipse,
}

/// A cylinder projected onto a plane: the 2×2 form plus its classification.
#[derive(Debug, Clone)]
pub struct Projection {
    pub kind: ProjectionKind,
    image: Cylinder,
}

impl Projection {
    pub fn form(&self) -> &SymMat {
        self.image.form()
    }

    pub fn cylinder(&self) -> &Cylinder {
        &self.image
    }

    /// For a strip `|uᵀy| ≤ w`: the unit normal `u` and half-width `w`.
    pub fn strip_params(&self) -> Option<(DVector<f64>, f64)> {
        if self.kind != ProjectionKind::Strip {
            return None;
        }
        let (vals, vecs) = self.image.form().eigen();
        // rank 1: the positive eigenvalue is the last one
        let lambda = vals[1];
        let normal = vecs.column(1).into_owned();
        Some((normal, 1.0 / lambda.sqrt()))
    }

    /// Sampled boundary polyline of an elliptic projection.
    pub fn ellipse_boundary(&self, samples: usize) -> Option<Vec<(f64, f64)>> {
        if self.kind != ProjectionKind::Ellipse {
            return None;
        }
        let (vals, vecs) = self.image.form().eigen();
        let mut pts = Vec::with_capacity(samples + 1);
        for s in 0..=samples {
            let theta = 2.0 * std::f64::consts::PI * s as f64 / samples as f64;
            let unit = DVector::from_column_slice(&[theta.cos(), theta.sin()]);
            let scaled =
                DVector::from_column_slice(&[unit[0] / vals[0].sqrt(), unit[1] / vals[1].sqrt()]);
            let y = &vecs * scaled;
            pts.push((y[0], y[1]));
        }
        Some(pts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cyl(diag: &[f64]) -> Cylinder {
        Cylinder::new(SymMat::from_diagonal(diag)).unwrap()
    }

    #[test]
    fn membership_kernel_direction_is_free() {
        let c = cyl(&[1.0, 0.0]);
        let far = DVector::from_column_slice(&[0.0, 1e6]);
        assert_abs_diff_eq!(c.membership(&far).unwrap(), 0.0, epsilon = 1e-9);
        let out = DVector::from_column_slice(&[2.0, 0.0]);
        assert_abs_diff_eq!(c.membership(&out).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn membership_observation_strip() {
        // strip |x − x̂| ≤ b/(l−a) with a=1, l=3, b=2 has form ¼[[1,−1],[−1,1]]
        let q = SymMat::new(DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25])).unwrap();
        let c = Cylinder::new(q).unwrap();
        assert_eq!(c.rank(), 1);
        let x = DVector::from_column_slice(&[5.0, 4.0]);
        assert_abs_diff_eq!(c.membership(&x).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn decompose_full_rank_has_empty_kernel() {
        let c = cyl(&[1.0, 1.0]);
        let d = c.decompose();
        assert_eq!(d.kernel_basis.ncols(), 0);
        assert_eq!(d.ellipsoid_form.dim(), 2);
        assert!(c.is_ellipsoid());
    }

    #[test]
    fn decompose_rank_one() {
        let c = cyl(&[1.0, 0.0]);
        let d = c.decompose();
        assert_eq!(d.ellipsoid_form.dim(), 1);
        assert_abs_diff_eq!(d.ellipsoid_form.as_matrix()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.kernel_basis[(1, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn decompose_infinite_cylinder_in_r3() {
        // x² + (y−z)² ≤ 1
        let q = SymMat::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, -1.0, 1.0],
        ))
        .unwrap();
        let c = Cylinder::new(q).unwrap();
        assert_eq!(c.rank(), 2);
        let d = c.decompose();
        assert_eq!(d.kernel_basis.ncols(), 1);
        let k = d.kernel_basis.column(0);
        let s = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(k[0].abs(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(k[1].abs(), s, epsilon = 1e-10);
        assert_abs_diff_eq!(k[1] - k[2], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn image_under_identity_is_same_form() {
        let q = SymMat::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let c = Cylinder::new(q.clone()).unwrap();
        let img = c.image(&DMatrix::identity(2, 2), 0.0).unwrap();
        assert_abs_diff_eq!(
            linalg::fro(&(img.form().as_matrix() - q.as_matrix())),
            0.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn image_rejects_row_rank_deficient_map() {
        let c = cyl(&[1.0, 1.0]);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert!(matches!(
            c.image(&bad, 0.0),
            Err(GeometryError::RowRankDeficient { .. })
        ));
    }

    #[test]
    fn image_of_positive_definite_matches_closed_form() {
        let q = SymMat::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let c = Cylinder::new(q.clone()).unwrap();
        let map = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let img = c.image(&map, 0.0).unwrap();
        let q_inv = q.as_matrix().clone().try_inverse().unwrap();
        let want = (&map * q_inv * map.transpose()).try_inverse().unwrap();
        assert_abs_diff_eq!(
            linalg::fro(&(img.form().as_matrix() - &want)),
            0.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn projection_classification() {
        let c = cyl(&[1.0, 0.0, 0.0]);
        let p = c.project_to_plane(1, 2).unwrap();
        assert_eq!(p.kind, ProjectionKind::WholePlane);

        let strip_form =
            SymMat::new(DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25])).unwrap();
        let strip = Cylinder::new(strip_form).unwrap();
        let p = strip.project_to_plane(0, 1).unwrap();
        assert_eq!(p.kind, ProjectionKind::Strip);
        let (normal, half_width) = p.strip_params().unwrap();
        // |x − y|/√2 scaled: half-width is 1/√λ with λ = 1/2
        assert_abs_diff_eq!(half_width, 2.0_f64.sqrt(), epsilon = 1e-10);
        assert_abs_diff_eq!(normal[0] + normal[1], 0.0, epsilon = 1e-10);

        let ball = cyl(&[1.0, 1.0, 1.0]);
        let p = ball.project_to_plane(0, 2).unwrap();
        assert_eq!(p.kind, ProjectionKind::Ellipse);
        for (u, v) in p.ellipse_boundary(16).unwrap() {
            assert_abs_diff_eq!(u * u + v * v, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_rejects_bad_axes() {
        let c = cyl(&[1.0, 1.0]);
        assert!(c.project_to_plane(0, 0).is_err());
        assert!(c.project_to_plane(0, 5).is_err());
    }
}
