//! Pressure-stabilized projection Lagrange–Galerkin finite elements for the
//! transient Oseen problem on the unit square.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: structured triangulations, point location, plain-text I/O.
//! - [`fe_space`]: Lagrange P1/P2 spaces, basis evaluation, interpolation.
//! - [`quadrature`]: symmetric and collapsed Gauss rules on triangles.
//! - [`linalg`]: CSR storage and preconditioned (deflated) conjugate gradients.
//! - [`assembly`]: mass, stiffness, pressure-gradient and stabilization forms,
//!   plus the stabilized Stokes projection.
//! - [`characteristics`]: the linearized characteristic map and exact
//!   integration of composed fields by polygon clipping.
//! - [`scheme`]: the three-stage projection time stepper.
//! - [`problems`]: the manufactured Oseen solution and discrete error norms.
//! - [`harness`]: convergence studies, EOC tables and CSV/plot output.
//! - [`verify`]: the structural property suite behind `oseen verify`.

pub mod assembly;
pub mod characteristics;
pub mod error;
pub mod fe_space;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod scheme;
pub mod verify;

pub use error::{Error, Result};

/// A point in the plane.
pub type Point = [f64; 2];
