//! Fixed-step integration of the closed loop `ṡ = Ms + Nf` under admissible
//! disturbance signals, with cylinder-membership traces and plane-projection
//! data for plotting.
//!
//! Integration is classical fourth-order Runge-Kutta with a fixed step so
//! that repeated runs produce identical output byte for byte. Square-wave
//! signals are evaluated at node times without event detection; the local
//! error at switching instants is O(dt).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{Cylinder, GeometryError, Projection};
use crate::linalg::SymMat;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("time step must be positive and no larger than the horizon")]
    BadTimeGrid,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("disturbance sample at t = {t} violates the bound: fᵀGf = {value}")]
    Inadmissible { t: f64, value: f64 },
    #[error("state diverged (non-finite) at t = {t}")]
    Diverged { t: f64 },
    #[error("sampled signal needs at least one sample")]
    EmptySampledSignal,
}

/// One disturbance channel.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalKind {
    Sine {
        amplitude: f64,
        omega: f64,
    },
    /// `offset + amplitude · sgn(sin(omega t))`.
    SquareSgnSine {
        offset: f64,
        amplitude: f64,
        omega: f64,
    },
    Constant {
        value: f64,
    },
    /// Piecewise-linear interpolation of (times, values), clamped outside.
    Sampled {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl SignalKind {
    fn eval(&self, t: f64) -> f64 {
        match self {
            SignalKind::Sine { amplitude, omega } => amplitude * (omega * t).sin(),
            SignalKind::SquareSgnSine {
                offset,
                amplitude,
                omega,
            } => offset + amplitude * (omega * t).sin().signum(),
            SignalKind::Constant { value } => *value,
            SignalKind::Sampled { times, values } => {
                if t <= times[0] {
                    return values[0];
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return values[last];
                }
                let idx = times.partition_point(|&x| x <= t).saturating_sub(1);
                let (t0, t1) = (times[idx], times[idx + 1]);
                let (v0, v1) = (values[idx], values[idx + 1]);
                if t1 == t0 {
                    v0
                } else {
                    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                }
            }
        }
    }

    fn validate(&self) -> Result<(), SimulationError> {
        if let SignalKind::Sampled { times, values } = self {
            if times.is_empty() || times.len() != values.len() {
                return Err(SimulationError::EmptySampledSignal);
            }
        }
        Ok(())
    }
}

/// Per-channel disturbance specification.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    channels: Vec<SignalKind>,
}

impl SignalSpec {
    pub fn new(channels: Vec<SignalKind>) -> Result<Self, SimulationError> {
        for ch in &channels {
            ch.validate()?;
        }
        Ok(Self { channels })
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn sample(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.channels.len(), self.channels.iter().map(|c| c.eval(t)))
    }
}

/// Time-indexed closed-loop states and disturbance samples on a uniform grid.
#[derive(Debug, Clone)]
pub struct Trace {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
}

/// Integrates `ṡ = Ms + Nf(t)` from `s0` with fixed step `dt` up to `t_final`.
///
/// When `bound` is given, every evaluated disturbance sample is audited
/// against `fᵀGf ≤ 1 + 1e−9`; admissibility is a precondition for any
/// invariance guarantee.
pub fn simulate(
    dynamics: &DMatrix<f64>,
    input: &DMatrix<f64>,
    signal: &SignalSpec,
    s0: &DVector<f64>,
    dt: f64,
    t_final: f64,
    bound: Option<&SymMat>,
) -> Result<Trace, SimulationError> {
    if dt.is_nan() || dt <= 0.0 || t_final < dt {
        return Err(SimulationError::BadTimeGrid);
    }
    let n = dynamics.nrows();
    if !dynamics.is_square() || input.nrows() != n || s0.len() != n {
        return Err(SimulationError::DimensionMismatch(format!(
            "dynamics {}x{}, input {}x{}, state {}",
            dynamics.nrows(),
            dynamics.ncols(),
            input.nrows(),
            input.ncols(),
            s0.len()
        )));
    }
    if input.ncols() != signal.dim() {
        return Err(SimulationError::DimensionMismatch(format!(
            "input expects {} disturbance channels, signal has {}",
            input.ncols(),
            signal.dim()
        )));
    }
    if let Some(g) = bound {
        if g.dim() != signal.dim() {
            return Err(SimulationError::DimensionMismatch(format!(
                "bound G is {}x{}, signal has {} channels",
                g.dim(),
                g.dim(),
                signal.dim()
            )));
        }
    }

    let steps = (t_final / dt).round() as usize;
    let audited = |t: f64| -> Result<DVector<f64>, SimulationError> {
        let f = signal.sample(t);
        if let Some(g) = bound {
            let value = (f.transpose() * g.as_matrix() * &f)[(0, 0)];
            if value > 1.0 + 1e-9 {
                return Err(SimulationError::Inadmissible { t, value });
            }
        }
        Ok(f)
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut disturbances = Vec::with_capacity(steps + 1);
    let mut s = s0.clone();
    let f0 = audited(0.0)?;
    times.push(0.0);
    states.push(s.clone());
    disturbances.push(f0);

    for i in 0..steps {
        let t = i as f64 * dt;
        let f_a = audited(t)?;
        let f_half = audited(t + 0.5 * dt)?;
        let f_b = audited(t + dt)?;
        let k1 = dynamics * &s + input * &f_a;
        let k2 = dynamics * (&s + &k1 * (0.5 * dt)) + input * &f_half;
        let k3 = dynamics * (&s + &k2 * (0.5 * dt)) + input * &f_half;
        let k4 = dynamics * (&s + &k3 * dt) + input * &f_b;
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let t_next = (i + 1) as f64 * dt;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(SimulationError::Diverged { t: t_next });
        }
        times.push(t_next);
        states.push(s.clone());
        disturbances.push(audited(t_next)?);
    }
    Ok(Trace {
        times,
        states,
        disturbances,
    })
}

/// Membership values `V(t) = (Ks)ᵀP(Ks)` along a trace.
#[derive(Debug, Clone)]
pub struct MembershipSeries {
    pub values: Vec<f64>,
    /// First grid time with `V ≤ 1`.
    pub entry_time: Option<f64>,
    /// Largest value observed after entry (1.0 when never entered).
    pub max_after_entry: f64,
    /// `V > 1 + 1e−6` at some time after entry.
    pub invariance_violated: bool,
}

pub fn membership_series(
    trace: &Trace,
    target: &DMatrix<f64>,
    p: &SymMat,
) -> Result<MembershipSeries, SimulationError> {
    let n = trace.states.first().map_or(0, |s| s.len());
    if target.ncols() != n || target.nrows() != p.dim() {
        return Err(SimulationError::DimensionMismatch(format!(
            "target map {}x{}, P {}x{}, state {}",
            target.nrows(),
            target.ncols(),
            p.dim(),
            p.dim(),
            n
        )));
    }
    let mut values = Vec::with_capacity(trace.states.len());
    for s in &trace.states {
        let z = target * s;
        values.push((z.transpose() * p.as_matrix() * &z)[(0, 0)]);
    }
    let entry_idx = values.iter().position(|&v| v <= 1.0);
    let entry_time = entry_idx.map(|i| trace.times[i]);
    let mut max_after_entry: f64 = 1.0;
    if let Some(i0) = entry_idx {
        for &v in &values[i0..] {
            max_after_entry = max_after_entry.max(v);
        }
    }
    Ok(MembershipSeries {
        invariance_violated: max_after_entry > 1.0 + 1e-6,
        values,
        entry_time,
        max_after_entry,
    })
}

/// Trajectory projection onto a coordinate plane together with the shape of
/// the projected cylinder.
#[derive(Debug, Clone)]
pub struct ProjectionSeries {
    pub points: Vec<(f64, f64)>,
    pub shape: Projection,
}

pub fn projection_series(
    trace: &Trace,
    cylinder: &Cylinder,
    i: usize,
    j: usize,
) -> Result<ProjectionSeries, SimulationError> {
    let shape = cylinder.project_to_plane(i, j)?;
    let points = trace.states.iter().map(|s| (s[i], s[j])).collect();
    Ok(ProjectionSeries { points, shape })
}

/// Cross-section of a 2D projected form at a fixed companion value: the set
/// `{u : [u v] R [u v]ᵀ ≤ 1}` for given `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorridorSection {
    /// The form does not bound this coordinate.
    Unbounded,
    /// No admissible value at this companion value.
    Empty,
    Interval {
        lo: f64,
        hi: f64,
    },
}

pub fn corridor_interval(form: &SymMat, companion: f64) -> CorridorSection {
    let r = form.as_matrix();
    let (r00, r01, r11) = (r[(0, 0)], r[(0, 1)], r[(1, 1)]);
    let scale = r00.abs().max(r01.abs()).max(r11.abs());
    if r00 <= 1e-12 * scale.max(1.0) {
        return CorridorSection::Unbounded;
    }
    let disc = r01 * companion * (r01 * companion) - r00 * (r11 * companion * companion - 1.0);
    if disc < 0.0 {
        return CorridorSection::Empty;
    }
    let root = disc.sqrt();
    CorridorSection::Interval {
        lo: (-r01 * companion - root) / r00,
        hi: (-r01 * companion + root) / r00,
    }
}
