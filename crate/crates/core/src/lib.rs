//! Semi-implicit variational inference with an unbiased reparameterization
//! gradient. The entropy term's intractable `grad_z log q(z)` is estimated
//! from HMC draws of the reverse conditional `q(eps | z)`.
//!
//! The crate has no global state; every random operation takes an explicit
//! RNG, so seeded runs are reproducible.

pub mod checkpoint;
pub mod conditional;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod family;
pub mod hmc;
pub mod optimizer;
pub mod oracle;
pub mod quadrature;
pub mod runner;
pub mod sivi;
pub mod stats;
pub mod targets;
pub mod tensor;

pub use error::{Error, Result};
pub use family::{DrawRecord, QGrad, SemiImplicitQ};
pub use hmc::HmcConfig;
pub use targets::TargetModel;
