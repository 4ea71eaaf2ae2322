//! Sequence inference tasks: denoising, stabilization and tracking.

use rayon::prelude::*;

use super::inference::{decode, emissions, smooth, Dynamics, SequencePosterior};
use super::model::ThmmModel;
use crate::error::{Error, Result};
use crate::math::argmax;
use crate::models::latent_posterior_with;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenoiseMode {
    /// `G_ℓ μ_c` along the Viterbi path.
    Hard,
    /// `Σ_s γ_t(s) G_ℓ E[z | x_t, s]`.
    #[default]
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Decoding {
    /// Per-frame argmax of the smoothed marginals.
    #[default]
    Smoothed,
    /// Jointly most probable path.
    Viterbi,
}

/// One decoded frame of a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub t: usize,
    pub class: usize,
    pub transform: usize,
    /// Signed grid shift `(Δv, Δh)` of the decoded transformation.
    pub shift: (i64, i64),
    /// `log γ_t(chosen) − log max_{s ≠ chosen} γ_t(s)`.
    pub log_margin: f64,
}

impl ThmmModel {
    /// Per-frame posterior-weighted latent means, optionally pushed back
    /// through each state's transformation.
    fn expected_latents(&self, frames: &[Vec<f64>], post: &SequencePosterior, observed: bool) -> Vec<Vec<f64>> {
        let n = self.shape().n();
        let cache = self.cache();
        frames
            .par_iter()
            .zip(&post.gamma)
            .map(|(x, gamma)| {
                let mut out = vec![0.0; n];
                for (s, &g) in gamma.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let (c, l) = self.state(s);
                    let op = self.transforms.op(l);
                    let (_, lat) = latent_posterior_with(cache.get(l, c), op, self.component(c), &self.psi, x, false);
                    let img = if observed { op.apply(&lat.z_mean) } else { lat.z_mean };
                    for (o, v) in out.iter_mut().zip(img) {
                        *o += g * v;
                    }
                }
                out
            })
            .collect()
    }

    pub fn denoise(&self, frames: &[Vec<f64>], mode: DenoiseMode) -> Result<Vec<Vec<f64>>> {
        match mode {
            DenoiseMode::Hard => {
                let path = self.viterbi(frames)?;
                Ok(path
                    .iter()
                    .map(|&s| {
                        let (c, l) = self.state(s);
                        self.transforms.op(l).apply(&self.mu[c])
                    })
                    .collect())
            }
            DenoiseMode::Soft => {
                let post = self.forward_backward(frames)?;
                Ok(self.expected_latents(frames, &post, true))
            }
        }
    }

    /// `E[z_t | x_{1:T}]` per frame: the sequence registered to the latent frame.
    pub fn stabilize(&self, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let post = self.forward_backward(frames)?;
        Ok(self.expected_latents(frames, &post, false))
    }

    pub fn track(&self, frames: &[Vec<f64>], decoding: Decoding) -> Result<Vec<TrackPoint>> {
        let grid = self
            .transforms
            .grid()
            .ok_or_else(|| Error::InvalidModel("tracking needs a grid-structured transformation set".into()))?;
        let le = emissions(self, frames)?;
        let dyn_ = Dynamics::new(self)?;
        let post = smooth(&dyn_, &le, false)?;
        let chosen: Vec<usize> = match decoding {
            Decoding::Smoothed => post.gamma.iter().map(|g| argmax(g)).collect(),
            Decoding::Viterbi => decode(&dyn_, &le)?,
        };
        Ok(chosen
            .iter()
            .enumerate()
            .map(|(t, &s)| {
                let g = &post.gamma[t];
                let rival = g
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != s)
                    .map(|(_, &v)| v)
                    .fold(0.0, f64::max);
                let (class, transform) = self.state(s);
                TrackPoint {
                    t,
                    class,
                    transform,
                    shift: grid.shift_of(transform),
                    log_margin: g[s].ln() - rival.ln(),
                }
            })
            .collect())
    }
}
