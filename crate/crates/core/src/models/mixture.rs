//! The lumped `(ℓ, c)` mixture engine behind TMG, TCA and MTCA.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::em::{
    reduce_stats, regress_loadings, residual_variance, EmOptions, MixtureStats, StepReport,
};
use super::kernel::{cond_loglik, latent_posterior_with, ComponentRef, KernelCache, LatentPosterior};
use super::tangent::tangent_columns;
use crate::error::{Error, Result};
use crate::math::{global_variance, normalize_log_weights, safe_ln, variance_floor};
use crate::transform::TransformationSet;

/// Posterior over the discrete configuration and the latent images.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// `P(ℓ, c | x)` stored at `ℓ·C + c`.
    pub resp: Vec<f64>,
    pub clusters: usize,
    /// Latent moments per `(ℓ, c)`, same layout as `resp`.
    pub latents: Vec<LatentPosterior>,
    /// `log p(x)`.
    pub loglik: f64,
}

impl PosteriorSummary {
    #[inline]
    pub fn resp_at(&self, l: usize, c: usize) -> f64 {
        self.resp[l * self.clusters + c]
    }

    #[inline]
    pub fn latent(&self, l: usize, c: usize) -> &LatentPosterior {
        &self.latents[l * self.clusters + c]
    }

    /// Most probable `(ℓ, c)`; ties go to the smallest lumped index.
    pub fn map_state(&self) -> (usize, usize) {
        let s = crate::math::argmax(&self.resp);
        (s / self.clusters, s % self.clusters)
    }

    /// `E[z | x]` averaged over the discrete posterior.
    pub fn z_mean(&self) -> Vec<f64> {
        let n = self.latents[0].z_mean.len();
        let mut out = vec![0.0; n];
        for (r, lat) in self.resp.iter().zip(&self.latents) {
            if *r > 0.0 {
                for (o, z) in out.iter_mut().zip(&lat.z_mean) {
                    *o += r * z;
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
pub(crate) struct MixtureRef<'a> {
    pub transforms: &'a TransformationSet,
    pub pi: &'a [f64],
    /// `[c][ℓ]`.
    pub rho: &'a [Vec<f64>],
    pub mu: &'a [Vec<f64>],
    pub phi: &'a [Vec<f64>],
    pub lambda: Option<&'a [DMatrix<f64>]>,
    pub psi: &'a [f64],
    pub fast: bool,
}

/// Parameters produced by an M-step.
pub(crate) struct MixtureParams {
    pub pi: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub lambda: Vec<DMatrix<f64>>,
    pub psi: Vec<f64>,
}

impl<'a> MixtureRef<'a> {
    #[inline]
    pub fn clusters(&self) -> usize {
        self.pi.len()
    }

    #[inline]
    pub fn component(&self, c: usize) -> ComponentRef<'a> {
        ComponentRef {
            mu: &self.mu[c],
            phi: &self.phi[c],
            lambda: self.lambda.map(|l| &l[c]),
        }
    }

    fn factors(&self) -> Vec<usize> {
        (0..self.clusters())
            .map(|c| self.component(c).factors())
            .collect()
    }

    fn check_input(&self, x: &[f64]) {
        assert_eq!(x.len(), self.transforms.shape().n(), "image length does not match model");
        assert!(x.iter().all(|v| v.is_finite()), "image contains non-finite pixels");
    }

    pub fn cond_loglik(&self, x: &[f64], l: usize, c: usize) -> f64 {
        self.check_input(x);
        cond_loglik(self.transforms.op(l), self.component(c), self.psi, x, self.fast)
    }

    pub(crate) fn cache(&self) -> KernelCache {
        let comps: Vec<ComponentRef<'_>> = (0..self.clusters()).map(|c| self.component(c)).collect();
        KernelCache::new(self.transforms, &comps, self.psi, self.fast)
    }

    /// `log ρ_ℓc + log π_c + log p(x | ℓ, c)` at `ℓ·C + c`.
    pub fn joint_logliks(&self, x: &[f64]) -> Vec<f64> {
        self.joint_logliks_with(&self.cache(), x)
    }

    pub(crate) fn joint_logliks_with(&self, cache: &KernelCache, x: &[f64]) -> Vec<f64> {
        self.check_input(x);
        let cs = self.clusters();
        let mut out = Vec::with_capacity(self.transforms.len() * cs);
        for l in 0..self.transforms.len() {
            let op = self.transforms.op(l);
            for c in 0..cs {
                let prior = safe_ln(self.rho[c][l]) + safe_ln(self.pi[c]);
                out.push(if prior == f64::NEG_INFINITY {
                    prior
                } else {
                    prior + cache.get(l, c).loglik(op, self.component(c), x)
                });
            }
        }
        out
    }

    /// `log p(x)` for each datum, sharing the per-`(ℓ, c)` work.
    pub fn logliks(&self, data: &[Vec<f64>]) -> Vec<f64> {
        let cache = self.cache();
        data.par_iter()
            .map(|x| crate::math::log_sum_exp(&self.joint_logliks_with(&cache, x)))
            .collect()
    }

    pub fn loglik(&self, x: &[f64]) -> f64 {
        crate::math::log_sum_exp(&self.joint_logliks(x))
    }

    pub fn posterior(&self, x: &[f64]) -> Result<PosteriorSummary> {
        self.check_input(x);
        let cs = self.clusters();
        let total = self.transforms.len() * cs;
        let cache = self.cache();
        let mut logw = Vec::with_capacity(total);
        let mut latents = Vec::with_capacity(total);
        for l in 0..self.transforms.len() {
            for c in 0..cs {
                let op = self.transforms.op(l);
                let (ll, lat) = latent_posterior_with(cache.get(l, c), op, self.component(c), self.psi, x, self.fast);
                logw.push(safe_ln(self.rho[c][l]) + safe_ln(self.pi[c]) + ll);
                latents.push(lat);
            }
        }
        let loglik = normalize_log_weights(&mut logw);
        if !loglik.is_finite() {
            return Err(Error::Underflow(
                "every (transformation, cluster) pair has zero likelihood".into(),
            ));
        }
        Ok(PosteriorSummary {
            resp: logw,
            clusters: cs,
            latents,
            loglik,
        })
    }

    /// Adds one datum's expected statistics.
    fn accumulate_datum(
        &self,
        cache: &KernelCache,
        x: &[f64],
        stats: &mut MixtureStats,
        update_psi: bool,
    ) -> Result<()> {
        let mut logw = self.joint_logliks_with(cache, x);
        let ll = normalize_log_weights(&mut logw);
        if !ll.is_finite() {
            return Err(Error::Underflow(
                "every (transformation, cluster) pair has zero likelihood".into(),
            ));
        }
        stats.loglik += ll;
        stats.count += 1;
        let cs = self.clusters();
        for (s, &r) in logw.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let (l, c) = (s / cs, s % cs);
            let op = self.transforms.op(l);
            let (_, post) =
                latent_posterior_with(cache.get(l, c), op, self.component(c), self.psi, x, self.fast);
            stats.accumulate(l, c, r, op, &post, x, update_psi);
        }
        Ok(())
    }

    /// Whether any op takes the exact path, so Ψ still appears in the model.
    fn psi_in_use(&self) -> bool {
        !self.fast || self.transforms.ops().iter().any(|op| !op.is_permutation())
    }

    pub fn em_step(&self, data: &[Vec<f64>], opts: &EmOptions) -> Result<(MixtureParams, StepReport)> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("EM needs at least one datum".into()));
        }
        let n = self.transforms.shape().n();
        let factors = self.factors();
        let update_psi = !opts.freeze_psi && self.psi_in_use();
        let cache = self.cache();
        let stats = reduce_stats(
            data,
            opts.reduction,
            || MixtureStats::zeros(n, self.transforms.len(), &factors),
            |x, acc| self.accumulate_datum(&cache, x, acc, update_psi),
        )?;

        let global = global_variance(data.iter().map(Vec::as_slice));
        let floor = variance_floor(global);
        let init_var = global.max(floor);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let cs = self.clusters();
        let count = stats.count as f64;
        let mut rescued = Vec::new();
        let mut params = MixtureParams {
            pi: vec![0.0; cs],
            rho: Vec::with_capacity(cs),
            mu: Vec::with_capacity(cs),
            phi: Vec::with_capacity(cs),
            lambda: Vec::with_capacity(cs),
            psi: self.psi.to_vec(),
        };

        for c in 0..cs {
            let mass = stats.mass[c];
            let k = factors[c];
            let current_lambda = self
                .lambda
                .map(|l| l[c].clone())
                .unwrap_or_else(|| DMatrix::zeros(n, 0));
            if mass < opts.min_cluster_mass {
                let pick = rng.random_range(0..data.len());
                rescued.push(c);
                params.pi[c] = 1.0 / cs as f64;
                params.rho.push(if opts.freeze_rho {
                    self.rho[c].clone()
                } else {
                    vec![1.0 / self.transforms.len() as f64; self.transforms.len()]
                });
                params.mu.push(data[pick].clone());
                params.phi.push(vec![init_var; n]);
                params.lambda.push(current_lambda);
                continue;
            }
            params.pi[c] = mass / count;
            params.rho.push(if opts.freeze_rho {
                self.rho[c].clone()
            } else {
                stats.rho_counts[c].iter().map(|v| v / mass).collect()
            });

            // Current Λ̃ = [Λ μ] supplies the values of frozen columns.
            let mut current = DMatrix::zeros(n, k + 1);
            for f in 0..k {
                current.set_column(f, &current_lambda.column(f));
            }
            for q in 0..n {
                current[(q, k)] = self.mu[c][q];
            }
            let fixed: Vec<usize> = opts
                .frozen_columns
                .iter()
                .map(|fc| fc.column)
                .filter(|&f| f < k)
                .collect();
            let mut loadings = regress_loadings(&stats.sz[c], &stats.syy[c], &current, &fixed);
            let mu: Vec<f64> = (0..n).map(|q| loadings[(q, k)]).collect();
            if opts.refresh_frozen && !fixed.is_empty() {
                for fc in opts.frozen_columns.iter().filter(|fc| fc.column < k) {
                    let col = tangent_columns(&mu, self.transforms, &[fc.direction]);
                    loadings.set_column(fc.column, &col.column(0));
                }
            }
            let phi: Vec<f64> = (0..n)
                .map(|q| {
                    (residual_variance(&stats.sz[c], &stats.szz[c], &stats.syy[c], &loadings, q)
                        / mass)
                        .max(floor)
                })
                .collect();
            params.mu.push(mu);
            params.phi.push(phi);
            params.lambda.push(loadings.columns(0, k).into_owned());
        }
        if !rescued.is_empty() {
            let total: f64 = params.pi.iter().sum();
            params.pi.iter_mut().for_each(|p| *p /= total);
        }

        if update_psi {
            for (p, s) in params.psi.iter_mut().zip(&stats.spsi) {
                *p = s / count;
            }
            if opts.tie_psi {
                let mean = params.psi.iter().sum::<f64>() / n as f64;
                params.psi.fill(mean);
            }
            params.psi.iter_mut().for_each(|p| *p = p.max(floor));
        }

        let report = StepReport {
            iteration: 0,
            loglik: stats.loglik,
            cluster_mass: stats.mass.clone(),
            rescued,
        };
        Ok((params, report))
    }
}

/// Picks `count` distinct data indices (with repeats only if the data are
/// fewer than `count`).
pub(crate) fn pick_distinct<R: Rng>(rng: &mut R, len: usize, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if idx.is_empty() {
            idx = (0..len).collect();
        }
        let j = rng.random_range(0..idx.len());
        out.push(idx.swap_remove(j));
    }
    out
}

/// `μ` initialized from a datum plus small Gaussian noise.
pub(crate) fn jittered<R: Rng>(rng: &mut R, x: &[f64], scale: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    x.iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(rng);
            v + scale * e
        })
        .collect()
}

/// Random `n×k` loadings with orthogonal columns of norm `scale`.
pub(crate) fn random_loadings<R: Rng>(rng: &mut R, n: usize, k: usize, scale: f64) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    if k == 0 {
        return DMatrix::zeros(n, 0);
    }
    let raw = DMatrix::from_fn(n, k, |_, _| {
        let e: f64 = StandardNormal.sample(rng);
        e
    });
    let q = raw.qr().q();
    q.columns(0, k).into_owned() * scale
}
