//! Attracting-cylinder toolkit for linear systems under bounded disturbances.
//!
//! A (k,n)-cylinder is a set `{x : xᵀQx ≤ 1}` with `Q ⪰ 0` of rank `k` — an
//! ellipsoidal cross-section swept along the kernel of `Q`. The crate finds
//! such sets that are invariant and attracting for disturbed linear systems,
//! synthesizes dynamic output-feedback controllers and observers that enforce
//! them for a chosen target variable, and verifies the results by simulation.
//!
//! Module map:
//! - [`linalg`]: pseudoinverse, PSD square root, definiteness, subspace bases;
//! - [`geometry`]: cylinder sets, images under linear maps, plane projections;
//! - [`matrix_equations`]: `AXB = C` solvability and the two-sided
//!   solvability test for `AXB + (AXB)ᵀ + C ≺ 0`;
//! - [`lmi`]: a small dense semidefinite feasibility/minimization solver;
//! - [`analysis`]: attracting-cylinder certificates for a given output map;
//! - [`synthesis`]: the full tracking/observation controller pipeline;
//! - [`simulation`]: fixed-step closed-loop integration and membership traces.

pub mod analysis;
pub mod geometry;
pub mod linalg;
pub mod lmi;
pub mod matrix_equations;
pub mod simulation;
pub mod synthesis;

pub use linalg::{LinalgError, SymMat};
