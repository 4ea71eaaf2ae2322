//! Bayes-rule classification with per-class generative models.

use super::{MtcaModel, TcaModel, TmgModel};
use crate::transform::ImageShape;

/// Anything that assigns a log density to an image.
pub trait DensityModel {
    fn shape(&self) -> ImageShape;
    fn log_density(&self, x: &[f64]) -> f64;
}

impl DensityModel for TmgModel {
    fn shape(&self) -> ImageShape {
        TmgModel::shape(self)
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.loglik(x)
    }
}

impl DensityModel for TcaModel {
    fn shape(&self) -> ImageShape {
        TcaModel::shape(self)
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.loglik(x)
    }
}

impl DensityModel for MtcaModel {
    fn shape(&self) -> ImageShape {
        MtcaModel::shape(self)
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.loglik(x)
    }
}

/// Class maximizing `log p(x | class) + log prior`, lowest index on ties.
/// `priors` defaults to uniform.
pub fn bayes_classify<M: DensityModel>(models: &[M], priors: Option<&[f64]>, x: &[f64]) -> usize {
    let scores: Vec<f64> = models.iter().map(|m| m.log_density(x)).collect();
    classify_scores(&scores, priors)
}

/// Decision rule on precomputed class log-likelihoods.
pub fn classify_scores(log_likelihoods: &[f64], priors: Option<&[f64]>) -> usize {
    assert!(log_likelihoods.len() >= 2, "classification needs at least two classes");
    if let Some(p) = priors {
        assert_eq!(p.len(), log_likelihoods.len(), "one prior per class");
    }
    let posterior: Vec<f64> = log_likelihoods
        .iter()
        .enumerate()
        .map(|(k, ll)| ll + priors.map_or(0.0, |p| crate::math::safe_ln(p[k])))
        .collect();
    crate::math::argmax(&posterior)
}
