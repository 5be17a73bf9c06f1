//! Nonholonomic brackets on local charts: constrained phase spaces, gauge
//! transformations by semibasic 2-forms, horizontal gauge momenta and the
//! numerical checks that go with them.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod gauge;
pub mod integrate;
pub mod geom;
pub mod momenta;
pub mod symmetry;
pub mod system;
pub mod systems;

pub use error::{Error, Result};

/// Shortest decimal form that keeps 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
