//! Adaptive mixed finite elements on 2D triangulations.
//!
//! This crate implements the full Solve–Estimate–Mark–Refine pipeline for
//! the mixed Poisson problem and the pseudostress-velocity Stokes problem:
//!
//! * [`mesh`] — conforming triangulations with newest-vertex-bisection
//!   refinement and conformity closure,
//! * [`elements`] — Raviart–Thomas / Brezzi–Douglas–Marini reference bases,
//!   Piola mapping and quadrature,
//! * [`spaces`] — global degree-of-freedom management, L² projection and the
//!   mesh-dependent discrete H¹ norm,
//! * [`system`] — saddle-point assembly and sparse direct solution,
//! * [`estimator`] — residual edge estimator and data oscillation,
//! * [`adapt`] — Dörfler marking and the adaptive iteration,
//! * [`verify`] — numerical checks of discrete reliability, quasi-orthogonality,
//!   inf-sup stability and estimator efficiency with empirical constants.

pub mod adapt;
pub mod elements;
pub mod error;
pub mod estimator;
pub mod mesh;
pub mod poly;
pub mod problem;
pub mod quadrature;
pub mod sparse;
pub mod spaces;
pub mod system;
pub mod verify;

pub use adapt::{AfemConfig, AfemHistory, AfemRecord, StopRule};
pub use elements::{ElementFamily, FamilyKind};
pub use error::{Error, Result};
pub use estimator::IndicatorSet;
pub use mesh::{MarkSet, Mesh};
pub use problem::{DomainSpec, ErrorMode, ProblemKind, ProblemSpec, SourceTerm};
pub use spaces::{DofMap, FieldPair};
pub use system::{MaterialOperator, SaddleSystem};
pub use verify::ConstantsReport;
