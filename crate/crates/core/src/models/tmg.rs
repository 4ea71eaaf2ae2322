//! Transformed mixture of Gaussians.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::em::{EmOptions, EmStep, Schedule, StepReport};
use super::mixture::{jittered, pick_distinct, MixtureRef, PosteriorSummary};
use crate::error::{Error, Result};
use crate::math::{global_variance, variance_floor};
use crate::transform::{ImageShape, TransformationSet};

/// Clusters `c` with proportions `π_c`, latent means `μ_c`, diagonal latent
/// variances `Φ_c`, transformation probabilities `ρ_ℓc`, and sensor noise Ψ
/// shared by all clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct TmgModel {
    pub transforms: TransformationSet,
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    /// `rho[c][ℓ]`.
    pub rho: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
}

impl TmgModel {
    pub fn new(
        transforms: TransformationSet,
        pi: Vec<f64>,
        mu: Vec<Vec<f64>>,
        phi: Vec<Vec<f64>>,
        rho: Vec<Vec<f64>>,
        psi: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            transforms,
            pi,
            mu,
            phi,
            rho,
            psi,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.shape().n();
        let l = self.transforms.len();
        let c = self.pi.len();
        let bad = |m: String| Err(Error::InvalidModel(m));
        if c == 0 {
            return bad("a mixture needs at least one cluster".into());
        }
        if self.mu.len() != c || self.phi.len() != c || self.rho.len() != c {
            return bad(format!("expected {c} clusters in every parameter block"));
        }
        if (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.pi.iter().any(|&p| p < 0.0) {
            return bad("mixing proportions must be a distribution".into());
        }
        for k in 0..c {
            if self.mu[k].len() != n || self.phi[k].len() != n {
                return bad(format!("cluster {k} images must have {n} pixels"));
            }
            if self.phi[k].iter().any(|&v| !(v > 0.0)) {
                return bad(format!("cluster {k} has non-positive latent variance"));
            }
            if self.rho[k].len() != l
                || (self.rho[k].iter().sum::<f64>() - 1.0).abs() > 1e-9
                || self.rho[k].iter().any(|&p| p < 0.0)
            {
                return bad(format!("cluster {k} transformation probabilities are not a distribution over {l} ops"));
            }
        }
        if self.psi.len() != n || self.psi.iter().any(|&v| !(v > 0.0)) {
            return bad("sensor variances must be positive, one per pixel".into());
        }
        Ok(())
    }

    /// Initializes `C` clusters from distinct random data items plus small
    /// noise, with variances from the pooled data variance and uniform `π`, `ρ`.
    pub fn init<R: Rng>(
        transforms: TransformationSet,
        data: &[Vec<f64>],
        clusters: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if data.is_empty() || clusters == 0 {
            return Err(Error::InvalidArgument(
                "initialization needs data and at least one cluster".into(),
            ));
        }
        let n = transforms.shape().n();
        if data.iter().any(|x| x.len() != n) {
            return Err(Error::InvalidArgument(format!("data images must have {n} pixels")));
        }
        let var = global_variance(data.iter().map(Vec::as_slice));
        let var = var.max(variance_floor(var));
        let jitter = 0.01 * var.sqrt();
        let l = transforms.len();
        let mu = pick_distinct(rng, data.len(), clusters)
            .into_iter()
            .map(|i| jittered(rng, &data[i], jitter))
            .collect();
        Self::new(
            transforms,
            vec![1.0 / clusters as f64; clusters],
            mu,
            vec![vec![var; n]; clusters],
            vec![vec![1.0 / l as f64; l]; clusters],
            vec![var; n],
        )
    }

    #[inline]
    pub fn shape(&self) -> ImageShape {
        self.transforms.shape()
    }

    #[inline]
    pub fn clusters(&self) -> usize {
        self.pi.len()
    }

    pub(crate) fn view(&self) -> MixtureRef<'_> {
        MixtureRef {
            transforms: &self.transforms,
            pi: &self.pi,
            rho: &self.rho,
            mu: &self.mu,
            phi: &self.phi,
            lambda: None,
            psi: &self.psi,
            fast: false,
        }
    }

    /// `log N(x; G_ℓ μ_c, G_ℓ Φ_c G_ℓᵀ + Ψ)` in O(n).
    pub fn cond_loglik(&self, x: &[f64], l: usize, c: usize) -> f64 {
        self.view().cond_loglik(x, l, c)
    }

    pub fn loglik(&self, x: &[f64]) -> f64 {
        self.view().loglik(x)
    }

    /// `log p(x)` for a batch; cheaper than calling `loglik` per datum.
    pub fn logliks(&self, data: &[Vec<f64>]) -> Vec<f64> {
        self.view().logliks(data)
    }

    pub fn posterior(&self, x: &[f64]) -> Result<PosteriorSummary> {
        self.view().posterior(x)
    }

    /// One EM iteration. The returned log-likelihood is that of the input model.
    pub fn em_step(&self, data: &[Vec<f64>], opts: &EmOptions) -> Result<EmStep<Self>> {
        let (p, report) = self.view().em_step(data, opts)?;
        let model = Self {
            transforms: self.transforms.clone(),
            pi: p.pi,
            mu: p.mu,
            phi: p.phi,
            rho: p.rho,
            psi: p.psi,
        };
        Ok(EmStep {
            model,
            loglik: report.loglik,
            report,
        })
    }

    /// Runs EM per `schedule`; returns the final model and one report per step.
    pub fn fit(
        &self,
        data: &[Vec<f64>],
        schedule: Schedule,
        opts: &EmOptions,
    ) -> Result<(Self, Vec<StepReport>)> {
        run_em(self.clone(), data, schedule, opts, Self::em_step)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let c = categorical(rng, &self.pi);
        let l = categorical(rng, &self.rho[c]);
        let z: Vec<f64> = self.mu[c]
            .iter()
            .zip(&self.phi[c])
            .map(|(m, v)| m + v.sqrt() * normal(rng))
            .collect();
        let mut x = self.transforms.op(l).apply(&z);
        for (xi, v) in x.iter_mut().zip(&self.psi) {
            *xi += v.sqrt() * normal(rng);
        }
        x
    }

    pub fn sample_seeded(&self, seed: u64) -> Vec<f64> {
        self.sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Cyclically re-registers every cluster so that the centroid of its
    /// above-median mass sits at the image center. Only valid for toroidal
    /// shift grids with uniform `ρ`, where it leaves the likelihood unchanged.
    pub fn recenter(&mut self) -> Result<()> {
        if !self.transforms.is_toroidal() {
            return Err(Error::InvalidArgument(
                "recentering needs a full wrap-around shift grid".into(),
            ));
        }
        let shape = self.shape();
        let grid = self.transforms.grid().unwrap();
        for c in 0..self.clusters() {
            let (dv, dh) = centroid_offset(&self.mu[c], shape);
            if let Some(l) = grid.index_of_shift(dv, dh) {
                let op = self.transforms.op(l);
                self.mu[c] = op.apply(&self.mu[c]);
                self.phi[c] = op.apply(&self.phi[c]);
            }
        }
        Ok(())
    }
}

/// Shift that moves the circular centroid of an image's bright part to the center.
pub(crate) fn centroid_offset(mu: &[f64], shape: ImageShape) -> (i64, i64) {
    use std::f64::consts::TAU;
    let mut sorted = mu.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let (h, w) = (shape.height as f64, shape.width as f64);
    let (mut rs, mut rc, mut cs, mut cc) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..shape.height {
        for col in 0..shape.width {
            let wgt = (mu[shape.index(r, col)] - median).max(0.0);
            let (ar, ac) = (TAU * r as f64 / h, TAU * col as f64 / w);
            rs += wgt * ar.sin();
            rc += wgt * ar.cos();
            cs += wgt * ac.sin();
            cc += wgt * ac.cos();
        }
    }
    let circ = |s: f64, c: f64, m: f64| (s.atan2(c).rem_euclid(TAU) * m / TAU).round() as i64;
    let (cr, ccol) = (circ(rs, rc, h), circ(cs, cc, w));
    let wrap = |d: i64, m: i64| {
        let r = d.rem_euclid(m);
        if r > m / 2 {
            r - m
        } else {
            r
        }
    };
    (
        wrap((shape.height / 2) as i64 - cr, shape.height as i64),
        wrap((shape.width / 2) as i64 - ccol, shape.width as i64),
    )
}

pub(crate) fn run_em<M: Clone>(
    mut model: M,
    data: &[Vec<f64>],
    schedule: Schedule,
    opts: &EmOptions,
    step: impl Fn(&M, &[Vec<f64>], &EmOptions) -> Result<EmStep<M>>,
) -> Result<(M, Vec<StepReport>)> {
    let mut reports = Vec::with_capacity(schedule.iterations);
    let mut step_opts = opts.clone();
    let mut previous = f64::NEG_INFINITY;
    for it in 0..schedule.iterations {
        step_opts.seed = opts.seed.wrapping_add(it as u64);
        let out = step(&model, data, &step_opts)?;
        let mut report = out.report;
        report.iteration = it;
        let converged = schedule.converged(previous, out.loglik);
        previous = out.loglik;
        reports.push(report);
        model = out.model;
        if converged {
            break;
        }
    }
    Ok((model, reports))
}

pub(crate) fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws an index from a discrete distribution.
pub(crate) fn categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
