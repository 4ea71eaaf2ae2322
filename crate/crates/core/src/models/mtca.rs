//! Mixtures of transformed component analyzers.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::em::{EmOptions, EmStep, Schedule, StepReport};
use super::mixture::{random_loadings, MixtureRef, PosteriorSummary};
use super::tca::TcaModel;
use super::tmg::{categorical, normal, run_em, TmgModel};
use crate::error::{Error, Result};
use crate::math::{global_variance, variance_floor};
use crate::transform::{ImageShape, TransformationSet};

/// A TMG whose clusters each carry their own loading matrix `Λ_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MtcaModel {
    pub transforms: TransformationSet,
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub lambda: Vec<DMatrix<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub fast_likelihood: bool,
}

impl MtcaModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.shape().n();
        if self.lambda.len() != self.pi.len() {
            return Err(Error::InvalidModel(format!(
                "expected {} loading matrices",
                self.pi.len()
            )));
        }
        for (c, l) in self.lambda.iter().enumerate() {
            if l.nrows() != n || l.ncols() >= n {
                return Err(Error::InvalidModel(format!(
                    "cluster {c} loading matrix is {}x{}; need {n} rows and K < {n}",
                    l.nrows(),
                    l.ncols()
                )));
            }
        }
        TmgModel {
            transforms: self.transforms.clone(),
            pi: self.pi.clone(),
            mu: self.mu.clone(),
            phi: self.phi.clone(),
            rho: self.rho.clone(),
            psi: self.psi.clone(),
        }
        .validate()
    }

    pub fn init<R: Rng>(
        transforms: TransformationSet,
        data: &[Vec<f64>],
        clusters: usize,
        factors: usize,
        fast_likelihood: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let tmg = TmgModel::init(transforms, data, clusters, rng)?;
        let var = global_variance(data.iter().map(Vec::as_slice));
        let var = var.max(variance_floor(var));
        let n = tmg.shape().n();
        let lambda = (0..clusters)
            .map(|_| random_loadings(rng, n, factors, var.sqrt()))
            .collect();
        let model = Self::from_tmg(tmg, lambda, fast_likelihood);
        model.validate()?;
        Ok(model)
    }

    pub fn from_tmg(tmg: TmgModel, lambda: Vec<DMatrix<f64>>, fast_likelihood: bool) -> Self {
        Self {
            transforms: tmg.transforms,
            pi: tmg.pi,
            mu: tmg.mu,
            lambda,
            phi: tmg.phi,
            rho: tmg.rho,
            psi: tmg.psi,
            fast_likelihood,
        }
    }

    pub fn from_tca(tca: TcaModel) -> Self {
        Self {
            transforms: tca.transforms,
            pi: vec![1.0],
            mu: vec![tca.mu],
            lambda: vec![tca.lambda],
            phi: vec![tca.phi],
            rho: vec![tca.rho],
            psi: tca.psi,
            fast_likelihood: tca.fast_likelihood,
        }
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
            lambda: Some(&self.lambda),
            psi: &self.psi,
            fast: self.fast_likelihood,
        }
    }

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

    pub fn em_step(&self, data: &[Vec<f64>], opts: &EmOptions) -> Result<EmStep<Self>> {
        let (p, report) = self.view().em_step(data, opts)?;
        let model = Self {
            transforms: self.transforms.clone(),
            pi: p.pi,
            mu: p.mu,
            lambda: p.lambda,
            phi: p.phi,
            rho: p.rho,
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
        let c = categorical(rng, &self.pi);
        let l = categorical(rng, &self.rho[c]);
        let lambda = &self.lambda[c];
        let y: Vec<f64> = (0..lambda.ncols()).map(|_| normal(rng)).collect();
        let z: Vec<f64> = (0..self.mu[c].len())
            .map(|q| {
                let mut v = self.mu[c][q] + self.phi[c][q].sqrt() * normal(rng);
                for (f, yf) in y.iter().enumerate() {
                    v += lambda[(q, f)] * yf;
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
