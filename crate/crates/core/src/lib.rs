//! Numerical laboratory for random walks in random potentials.
//!
//! The model: a walk on Z^d with uniform steps over a finite set R is
//! reweighted by e^{ΣV} along its trajectory, where the potential V reads
//! a random site field. The crate computes the resulting partition
//! functions exactly by forward recursion, realizes the quenched free
//! energy on periodic environments as a Perron root, minimizes the
//! convex functional whose infimum equals it, and probes weak/strong
//! disorder and KPZ-type fluctuation growth by seeded Monte Carlo.

pub mod disorder;
pub mod env;
pub mod error;
pub mod freeenergy;
pub mod numeric;
pub mod rng;
pub mod spectral;
pub mod torus;
pub mod transfer;
pub mod variational;

pub use error::{Error, Result};
