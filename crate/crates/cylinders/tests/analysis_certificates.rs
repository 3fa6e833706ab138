//! Certificate-level checks: the analytic observation-strip bound, the
//! invariant-ellipsoid reduction, and the Lyapunov decay the certificate
//! promises along simulated trajectories.

mod common;

use cylinders::analysis::{self, DisturbedSystem};
use cylinders::linalg::{self, SymMat};
use cylinders::simulation::{self, SignalKind, SignalSpec};
use nalgebra::{DMatrix, DVector};

/// Plant/observer pair with a = 1, l = 3, b = 2: the state diverges but the
/// observation error has stable autonomous dynamics.
fn observation_system() -> (DisturbedSystem, DMatrix<f64>) {
    let (a, l, b) = (1.0, 3.0, 2.0);
    let drift = DMatrix::from_row_slice(2, 2, &[a, 0.0, l, a - l]);
    let input = DMatrix::from_row_slice(2, 1, &[b, 0.0]);
    (
        DisturbedSystem::new(drift, input, SymMat::identity(1)).unwrap(),
        DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
    )
}

#[test]
fn strip_bound_is_tight_and_trajectories_enter_it() {
    let (sys, c) = observation_system();
    let grid: Vec<f64> = (1..=35).map(|i| 0.1 * i as f64).collect();
    let found = analysis::find_attracting_cylinder(&sys, &c, &grid).unwrap();
    // analytic minimum bound b²/(l−a)² = 1
    let bound = 1.0 / found.p.as_matrix()[(0, 0)];
    assert!((bound - 1.0).abs() <= 0.01, "bound {bound}");

    // diverging trajectory that still falls into the strip and stays
    let signal = SignalSpec::new(vec![SignalKind::Sine {
        amplitude: 1.0,
        omega: 1.0,
    }])
    .unwrap();
    // horizon short enough that x − x̂ is still resolvable next to e^t growth
    let s0 = DVector::from_column_slice(&[3.0, -1.0]);
    let trace = simulation::simulate(
        sys.drift(),
        sys.input(),
        &signal,
        &s0,
        1e-3,
        20.0,
        Some(sys.bound()),
    )
    .unwrap();
    let series = simulation::membership_series(&trace, &c, &found.p).unwrap();
    assert!(series.entry_time.is_some());
    assert!(
        !series.invariance_violated,
        "max {}",
        series.max_after_entry
    );
    // the state itself runs away while the membership value stays put
    let last = trace.states.last().unwrap();
    assert!(
        last[0].abs() > 10.0,
        "state should diverge, got {}",
        last[0]
    );
}

#[test]
fn identity_output_reduces_to_invariant_ellipsoid() {
    let drift = DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, 0.0, -1.6]);
    let input = DMatrix::from_row_slice(2, 1, &[0.5, 0.3]);
    let sys = DisturbedSystem::new(drift.clone(), input.clone(), SymMat::identity(1)).unwrap();
    let eye = DMatrix::identity(2, 2);
    let found = analysis::find_attracting_cylinder(&sys, &eye, &[0.4, 0.8, 1.2, 1.6]).unwrap();
    assert!(found.cylinder.is_ellipsoid());

    // independent assembly of the same certificate block
    let pm = found.p.as_matrix();
    let top = pm * &drift + drift.transpose() * pm + pm * found.alpha;
    let off = pm * &input;
    let bottom = DMatrix::identity(1, 1) * (-found.alpha);
    let block = linalg::block(&[&[&top, &off], &[&off.transpose(), &bottom]]);
    let (vals, _) = SymMat::symmetrize(block).unwrap().eigen();
    let direct_margin = vals[vals.len() - 1];
    assert!(
        (direct_margin - found.lmi_margin).abs() <= 1e-9,
        "margins differ: {direct_margin} vs {}",
        found.lmi_margin
    );
}

#[test]
fn certified_decay_holds_along_trajectories() {
    // V̇ + αV ≤ α·fᵀGf (+ discretization slack) wherever the certificate holds
    let (sys, c) = observation_system();
    let grid: Vec<f64> = (1..=35).map(|i| 0.1 * i as f64).collect();
    let found = analysis::find_attracting_cylinder(&sys, &c, &grid).unwrap();
    let signal = SignalSpec::new(vec![SignalKind::SquareSgnSine {
        offset: 0.0,
        amplitude: 1.0,
        omega: 0.5,
    }])
    .unwrap();
    let dt = 1e-3;
    let s0 = DVector::from_column_slice(&[1.0, 2.0]);
    let trace = simulation::simulate(
        sys.drift(),
        sys.input(),
        &signal,
        &s0,
        dt,
        15.0,
        Some(sys.bound()),
    )
    .unwrap();
    let series = simulation::membership_series(&trace, &c, &found.p).unwrap();
    let alpha = found.alpha;
    let _ = dt;
    // V̇ evaluated exactly from the vector field, not by differencing
    for i in (0..trace.times.len()).step_by(97) {
        let t = trace.times[i];
        let s = &trace.states[i];
        let f = &trace.disturbances[i];
        let z = &c * s;
        let s_dot = sys.drift() * s + sys.input() * f;
        let v_dot = 2.0 * (z.transpose() * found.p.as_matrix() * (&c * s_dot))[(0, 0)];
        let f_bound = (f.transpose() * sys.bound().as_matrix() * f)[(0, 0)];
        let slack = v_dot + alpha * series.values[i] - alpha * f_bound;
        assert!(
            slack <= 1e-6 * (1.0 + series.values[i].abs()),
            "decay violated at t={t}: {slack}"
        );
    }
}
