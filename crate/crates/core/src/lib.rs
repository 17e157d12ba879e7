//! Numerical Darboux charts for compatible weak symplectic structures on
//! finite towers of normed spaces.
//!
//! The pipeline is: build a [`tower::Tower`], put a [`symplectic::SymplecticField`]
//! on it, construct the radial primitive and Moser vector field
//! ([`moser`]), integrate the isotopy, and certify the pullback identity
//! ([`darboux::darboux_chart`]). [`scenario`] wires all of it to JSON configs.

pub mod darboux;
pub mod error;
pub mod expr;
pub mod linalg;
pub mod moser;
pub mod ode;
pub mod projective;
pub mod quadrature;
pub mod sampling;
pub mod scenario;
pub mod symplectic;
pub mod tower;

pub use error::{Error, Result};
