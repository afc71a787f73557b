//! Infinite-horizon optimal control of 1D reaction–diffusion systems through
//! their canonical (state/costate) systems.
//!
//! The workflow has two stages. First, branches of canonical steady states
//! (CSS) are continued in a parameter with bifurcation detection
//! ([`continuation`]). Second, canonical paths from an initial state to a CSS
//! with the saddle-point property are computed as boundary-value problems in
//! time ([`tbvp`]), reached by continuation in the initial state ([`isc`]),
//! and their discounted values compared ([`value`]).

pub mod continuation;
pub mod error;
pub mod fem1d;
pub mod io;
pub mod isc;
pub mod linalg;
pub mod models;
pub mod spectral;
pub mod tbvp;
pub mod value;

pub use error::{Error, Result};
