//! Transformed hidden Markov models over image sequences.

mod em;
mod inference;
mod model;
mod motion;
mod tasks;

pub use em::{ThmmOptions, ThmmStep};
pub use inference::SequencePosterior;
pub use model::{InitialDist, ThmmModel};
pub use motion::{vector_bins, MotionMode, MotionPrior};
pub use tasks::{Decoding, DenoiseMode, TrackPoint};
