//! Static transformation-invariant density models.

mod classify;
mod em;
mod kernel;
mod mixture;
mod mtca;
mod tangent;
mod tca;
mod tmg;

pub use classify::{bayes_classify, classify_scores, DensityModel};
pub use em::{EmOptions, EmStep, FrozenColumn, Reduction, Schedule, StepReport};
pub use kernel::LatentPosterior;
pub use mixture::PosteriorSummary;
pub use mtca::MtcaModel;
pub use tangent::{tangent_columns, Axis, TangentDirection};
pub use tca::TcaModel;
pub use tmg::TmgModel;

pub(crate) use em::{reduce_stats, regress_loadings, residual_variance, MixtureStats};
pub(crate) use kernel::{cond_loglik, latent_posterior_with, ComponentRef, KernelCache};
pub(crate) use tmg::{categorical, normal};
