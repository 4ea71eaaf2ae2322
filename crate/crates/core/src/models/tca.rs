//! Transformed component analysis: a factor analyzer over the latent image.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::em::{EmOptions, EmStep, Schedule, StepReport};
use super::mixture::{jittered, pick_distinct, random_loadings, MixtureRef, PosteriorSummary};
use super::tmg::{categorical, normal, run_em, TmgModel};
use crate::error::{Error, Result};
use crate::math::{global_variance, variance_floor};
use crate::transform::{ImageShape, TransformationSet};

#[derive(Debug, Clone, PartialEq)]
pub struct TcaModel {
    pub transforms: TransformationSet,
    pub mu: Vec<f64>,
    /// Loading matrix Λ, n×K.
    pub lambda: DMatrix<f64>,
    pub phi: Vec<f64>,
    pub rho: Vec<f64>,
    pub psi: Vec<f64>,
    /// Evaluate permutation ops with Ψ absorbed into Φ.
    pub fast_likelihood: bool,
}

impl TcaModel {
    pub fn new(
        transforms: TransformationSet,
        mu: Vec<f64>,
        lambda: DMatrix<f64>,
        phi: Vec<f64>,
        rho: Vec<f64>,
        psi: Vec<f64>,
        fast_likelihood: bool,
    ) -> Result<Self> {
        let model = Self {
            transforms,
            mu,
            lambda,
            phi,
            rho,
            psi,
            fast_likelihood,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.shape().n();
        if self.lambda.nrows() != n {
            return Err(Error::InvalidModel(format!("loading columns must have {n} entries")));
        }
        if self.lambda.ncols() >= n {
            return Err(Error::InvalidModel(format!(
                "{} factors for {n} pixels: need K < n",
                self.lambda.ncols()
            )));
        }
        self.as_tmg_shape().validate()
    }

    /// Same μ, Φ, ρ, Ψ as a single-cluster TMG (ignores Λ).
    fn as_tmg_shape(&self) -> TmgModel {
        TmgModel {
            transforms: self.transforms.clone(),
            pi: vec![1.0],
            mu: vec![self.mu.clone()],
            phi: vec![self.phi.clone()],
            rho: vec![self.rho.clone()],
            psi: self.psi.clone(),
        }
    }

    /// μ from a random datum, variances from the pooled data variance,
    /// uniform ρ, and orthogonal random loadings.
    pub fn init<R: Rng>(
        transforms: TransformationSet,
        data: &[Vec<f64>],
        factors: usize,
        fast_likelihood: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("initialization needs data".into()));
        }
        let n = transforms.shape().n();
        if data.iter().any(|x| x.len() != n) {
            return Err(Error::InvalidArgument(format!("data images must have {n} pixels")));
        }
        let var = global_variance(data.iter().map(Vec::as_slice));
        let var = var.max(variance_floor(var));
        let pick = pick_distinct(rng, data.len(), 1)[0];
        let mu = jittered(rng, &data[pick], 0.01 * var.sqrt());
        let lambda = random_loadings(rng, n, factors, var.sqrt());
        let l = transforms.len();
        Self::new(
            transforms,
            mu,
            lambda,
            vec![var; n],
            vec![1.0 / l as f64; l],
            vec![var; n],
            fast_likelihood,
        )
    }

    #[inline]
    pub fn shape(&self) -> ImageShape {
        self.transforms.shape()
    }

    #[inline]
    pub fn factors(&self) -> usize {
        self.lambda.ncols()
    }

    pub(crate) fn view(&self) -> MixtureRef<'_> {
        MixtureRef {
            transforms: &self.transforms,
            pi: &[1.0],
            rho: std::slice::from_ref(&self.rho),
            mu: std::slice::from_ref(&self.mu),
            phi: std::slice::from_ref(&self.phi),
            lambda: Some(std::slice::from_ref(&self.lambda)),
            psi: &self.psi,
            fast: self.fast_likelihood,
        }
    }

    /// `log N(x; G_ℓ μ, G_ℓ(ΛΛᵀ+Φ)G_ℓᵀ + Ψ)` via the rank-K identities.
    pub fn cond_loglik(&self, x: &[f64], l: usize) -> f64 {
        self.view().cond_loglik(x, l, 0)
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

    pub fn em_step(&self, data: &[Vec<f64>], opts: &EmOptions) -> Result<EmStep<Self>> {
        let (mut p, report) = self.view().em_step(data, opts)?;
        let model = Self {
            transforms: self.transforms.clone(),
            mu: p.mu.pop().unwrap(),
            lambda: p.lambda.pop().unwrap(),
            phi: p.phi.pop().unwrap(),
            rho: p.rho.pop().unwrap(),
            psi: p.psi,
            fast_likelihood: self.fast_likelihood,
        };
        Ok(EmStep {
            model,
            loglik: report.loglik,
            report,
        })
    }

    pub fn fit(
        &self,
        data: &[Vec<f64>],
        schedule: Schedule,
        opts: &EmOptions,
    ) -> Result<(Self, Vec<StepReport>)> {
        run_em(self.clone(), data, schedule, opts, Self::em_step)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let l = categorical(rng, &self.rho);
        let y: Vec<f64> = (0..self.factors()).map(|_| normal(rng)).collect();
        let z: Vec<f64> = (0..self.mu.len())
            .map(|q| {
                let mut v = self.mu[q] + self.phi[q].sqrt() * normal(rng);
                for (f, yf) in y.iter().enumerate() {
                    v += self.lambda[(q, f)] * yf;
                }
                v
            })
            .collect();
        let op = self.transforms.op(l);
        let mut x = op.apply(&z);
        if !(self.fast_likelihood && op.is_permutation()) {
            for (xi, v) in x.iter_mut().zip(&self.psi) {
                *xi += v.sqrt() * normal(rng);
            }
        }
        x
    }

    pub fn sample_seeded(&self, seed: u64) -> Vec<f64> {
        self.sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}
