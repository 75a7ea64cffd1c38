//! Discrete F-harmonic maps from closed surfaces into round spheres.
//!
//! The crate evaluates F-energies `∫F(|dφ|²/2)` of piecewise-linear maps,
//! their tension fields and second variation, the F-stress-energy tensor, and
//! Morse-index estimates for the identity map, homothetic maps and the Clifford
//! torus. Face loops run on rayon unless the `parallel` feature is disabled.

pub mod error;
pub mod hessian;
pub mod identity;
pub mod linalg;
pub mod mesh;
pub mod par;
pub mod profile;
pub mod runner;
pub mod scenario;
pub mod sphere_map;
pub mod stress;
pub mod variation;

pub use error::{Error, Result};
pub use hessian::IndexReport;
pub use mesh::{DomainKind, DomainMesh, DomainSpec, TangentField};
pub use profile::{Condition, ConditionOutcome, Derivatives, FProfile, ProfileKind};
pub use sphere_map::{make_map, MapKind, SectionField, SphereMap};
pub use stress::{verify_theorem1, StressReport, TheoremCheck};
pub use variation::{f_energy, solve_f_harmonic, SecondVariation, StepRule};
