//! Physics-informed neural network correctors for singularly perturbed
//! convection-diffusion problems.
//!
//! The crate provides tanh networks with exact input derivatives and
//! parameter gradients ([`net`]), the model problems ([`problems`]), a
//! central finite-difference baseline ([`fdm`]), affine input maps
//! ([`transform`]), Adam and L-BFGS ([`optim`]), training and correction
//! drivers ([`trainer`]), tangent-kernel diagnostics ([`ntk`]) and the
//! experiment runner behind the `cdpinn` binary ([`cli`]).

pub mod cli;
pub mod error;
pub mod fdm;
pub mod net;
pub mod ntk;
pub mod optim;
pub mod problems;
pub mod rng;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};
