//! Simulation and spectral analysis of cooperative linear random delay systems
//!
//! `z'(t) = A(θ_tω) z(t) + B(θ_tω) z(t-1)`.
//!
//! The pipeline goes from a driver realization ([`driver`]) through the
//! method-of-steps semiflow ([`dde`]) and the positivity checks ([`cone`]) to
//! the Floquet bundle, Lyapunov exponents and separation rate ([`spectrum`]).
//! [`oracle`] holds independent reference computations.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

pub mod cone;
pub mod dde;
pub mod driver;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod scalar;
pub mod spectrum;

pub use dde::{
    apply_cocycle, discretize_operator, embed_j, fundamental_matrix, grid_weights, norm,
    step_unit, Segment, Semiflow, SpaceNorm, Trajectory,
};
pub use driver::{
    make_constant_driver, make_iid_switching_driver, make_markov_switching_driver,
    make_quasiperiodic_driver, sample_coefficients, shift, CoefficientSample, DriverKind,
    DriverPoint, FourierTerm, SwitchState,
};
pub use error::{Error, Result};
pub use linalg::Mat;
pub use scalar::Real;

pub type Mat64 = Mat<f64>;
pub type Segment64 = Segment<f64>;
pub type DriverPoint64 = DriverPoint<f64>;
pub type Semiflow64 = Semiflow<f64>;
pub type Segment32 = Segment<f32>;
pub type DriverPoint32 = DriverPoint<f32>;
