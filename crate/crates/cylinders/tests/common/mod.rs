//! Shared generators and reference problems for the integration suites.
#![allow(dead_code)]

use cylinders::linalg::SymMat;
use cylinders::synthesis::{PlantModel, ReferenceModel, SynthesisProblem, TargetMap};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Random matrix with orthonormal columns (QR of a Gaussian-ish sample).
pub fn rand_orth(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    assert!(cols <= rows);
    let m = rand_mat(rng, rows, rows, 1.0) + DMatrix::identity(rows, rows) * 0.1;
    let q = m.qr().q();
    q.columns(0, cols).into_owned()
}

/// Random PSD form with `rank` eigenvalues drawn from `[lo, hi]`.
pub fn rand_psd(rng: &mut ChaCha8Rng, dim: usize, rank: usize, lo: f64, hi: f64) -> SymMat {
    let v = rand_orth(rng, dim, dim);
    let mut d = DVector::zeros(dim);
    for i in 0..rank {
        d[i] = rng.random_range(lo..hi);
    }
    SymMat::symmetrize(&v * DMatrix::from_diagonal(&d) * v.transpose()).unwrap()
}

/// Random full-row-rank map, resampled until it is also decently
/// conditioned so oracle comparisons stay sharp.
pub fn rand_full_row_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    assert!(rows <= cols);
    loop {
        let m = rand_mat(rng, rows, cols, 2.0);
        if cylinders::linalg::rank(&m, 0.0).unwrap() != rows {
            continue;
        }
        let pinv = cylinders::linalg::pinv(&m, 0.0).unwrap();
        if cylinders::linalg::sigma_max(&pinv).unwrap() <= 5.0 {
            return m;
        }
    }
}

/// Two-state tracking problem: stable plant, unstable oscillatory reference,
/// first-order controller, target z = x − x_r, scalar bound.
pub fn tracking_problem() -> SynthesisProblem {
    let plant = PlantModel::new(
        DMatrix::from_row_slice(2, 2, &[-2.99, 3.10, -2.10, 2.01]),
        DMatrix::from_row_slice(2, 1, &[1.5, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.15, 0.15]),
        DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        DMatrix::zeros(1, 1),
        DMatrix::zeros(1, 1),
    )
    .unwrap();
    let reference = ReferenceModel::new(
        DMatrix::from_row_slice(2, 2, &[0.01, 0.1, -0.1, 0.01]),
        DMatrix::zeros(2, 0),
        DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
    )
    .unwrap();
    let target = TargetMap {
        on_plant: DMatrix::identity(2, 2),
        on_reference: DMatrix::identity(2, 2) * -1.0,
        on_controller: DMatrix::zeros(2, 1),
    };
    SynthesisProblem::new(plant, reference, 1, target, SymMat::identity(1)).unwrap()
}

/// Certificate reported for the tracking problem at alpha = 0.5.
pub fn tracking_reported_p() -> SymMat {
    SymMat::new(DMatrix::from_row_slice(
        2,
        2,
        &[1485.0, -1585.0, -1585.0, 1698.0],
    ))
    .unwrap()
}

/// Controller reported for the tracking problem (static despite order 1).
pub fn tracking_reported_x() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 0.0, -2.95, 4.95])
}

/// Three-state observation problem: unstable plant, no reference model,
/// third-order observer, target z = x − x_c, measurement noise feedthrough.
pub fn observer_problem() -> SynthesisProblem {
    let plant = PlantModel::new(
        DMatrix::from_row_slice(
            3,
            3,
            &[
                0.168, -0.132, -0.052, 0.148, -0.152, 0.028, 0.204, -0.196, -0.006,
            ],
        ),
        DMatrix::zeros(3, 1),
        DMatrix::zeros(3, 1),
        DMatrix::from_row_slice(1, 3, &[-0.2, 0.8, -0.2]),
        DMatrix::zeros(1, 1),
        DMatrix::from_row_slice(1, 1, &[0.02]),
    )
    .unwrap();
    let reference = ReferenceModel::empty(1);
    let target = TargetMap {
        on_plant: DMatrix::identity(3, 3),
        on_reference: DMatrix::zeros(3, 0),
        on_controller: DMatrix::identity(3, 3) * -1.0,
    };
    SynthesisProblem::new(plant, reference, 3, target, SymMat::identity(1)).unwrap()
}

/// Certificate reported for the observation problem at alpha = 0.3.
pub fn observer_reported_p() -> SymMat {
    SymMat::new(DMatrix::from_row_slice(
        3,
        3,
        &[
            192.0, -624.0, 222.0, -624.0, 2051.0, -732.0, 222.0, -732.0, 289.0,
        ],
    ))
    .unwrap()
}

/// Observer blocks reported for the observation problem.
pub fn observer_reported_a3_b3() -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(
            3,
            3,
            &[
                3.970, -15.341, 3.750, 1.506, -5.585, 1.386, 0.559, -1.618, 0.349,
            ],
        ),
        DMatrix::from_row_slice(3, 1, &[19.011, 6.792, 1.777]),
    )
}
