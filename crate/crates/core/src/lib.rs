//! Transformation-invariant mixtures of Gaussians, component analyzers and
//! hidden Markov models for images and video.
//!
//! Each model treats a discrete spatial transformation (shift, shear) as a
//! hidden variable, integrates the latent image out in closed form, and is
//! trained with EM. Transformations are sparse generalized permutations, so
//! every per-transformation likelihood costs O(n) in the pixel count (O(nK²)
//! with K linear factors).

pub mod error;
pub mod harness;
pub mod io;
pub mod math;
pub mod models;
pub mod synth;
pub mod thmm;
pub mod transform;

pub use error::{Error, Result};
