use rand::Rng;

use super::motion::{MotionGraph, MotionPrior};
use crate::error::{Error, Result};
use crate::math::safe_ln;
use crate::models::{categorical, cond_loglik, normal, ComponentRef, KernelCache, TmgModel};
use crate::transform::{ImageShape, TransformationSet};

/// Distribution of the first state `s_1 = (c, ℓ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDist {
    /// Learned class probabilities, uniform over transformations.
    Factorized(Vec<f64>),
    /// A full table over lumped states `s = c·L + ℓ`.
    Joint(Vec<f64>),
}

impl InitialDist {
    /// `π_s` over lumped states.
    pub fn state_probs(&self, transforms: usize) -> Vec<f64> {
        match self {
            InitialDist::Factorized(pc) => pc
                .iter()
                .flat_map(|&p| std::iter::repeat_n(p / transforms as f64, transforms))
                .collect(),
            InitialDist::Joint(ps) => ps.clone(),
        }
    }
}

/// Transformed hidden Markov model. Hidden state `s = (c, ℓ)` is lumped as
/// `s = c·L + ℓ`; transitions factor as
/// `p(c' | c) · p(m(ℓ, ℓ') | c)` with `m` the grid displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct ThmmModel {
    pub transforms: TransformationSet,
    pub mu: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub initial: InitialDist,
    /// `class_trans[c][c']`.
    pub class_trans: Vec<Vec<f64>>,
    pub motion: MotionPrior,
}

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|&v| v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

impl ThmmModel {
    pub fn new(
        transforms: TransformationSet,
        mu: Vec<Vec<f64>>,
        phi: Vec<Vec<f64>>,
        psi: Vec<f64>,
        initial: InitialDist,
        class_trans: Vec<Vec<f64>>,
        motion: MotionPrior,
    ) -> Result<Self> {
        let model = Self {
            transforms,
            mu,
            phi,
            psi,
            initial,
            class_trans,
            motion,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.transforms.grid().is_none() {
            return bad("a sequence model needs a grid-structured transformation set".into());
        }
        let n = self.shape().n();
        let c = self.mu.len();
        if c == 0 {
            return bad("a sequence model needs at least one class".into());
        }
        if self.phi.len() != c || self.class_trans.len() != c {
            return bad(format!("expected {c} classes in every parameter block"));
        }
        for k in 0..c {
            if self.mu[k].len() != n || self.phi[k].len() != n {
                return bad(format!("class {k} images must have {n} pixels"));
            }
            if self.phi[k].iter().any(|&v| !(v > 0.0)) {
                return bad(format!("class {k} has non-positive latent variance"));
            }
            if self.class_trans[k].len() != c || !is_distribution(&self.class_trans[k]) {
                return bad(format!("class transition row {k} is not a distribution over {c} classes"));
            }
        }
        if self.psi.len() != n || self.psi.iter().any(|&v| !(v > 0.0)) {
            return bad("sensor variances must be positive, one per pixel".into());
        }
        match &self.initial {
            InitialDist::Factorized(p) if p.len() != c || !is_distribution(p) => {
                return bad(format!("initial class probabilities must be a distribution over {c} classes"));
            }
            InitialDist::Joint(p) if p.len() != self.states() || !is_distribution(p) => {
                return bad(format!(
                    "initial state probabilities must be a distribution over {} states",
                    self.states()
                ));
            }
            _ => {}
        }
        self.motion.validate(c)
    }

    /// Wraps a trained TMG. Transitions start at `stay` probability of
    /// keeping the class (the rest spread evenly) and the given motion prior;
    /// the initial distribution is factorized with the TMG's class weights.
    pub fn from_tmg(tmg: &TmgModel, motion: MotionPrior, stay: f64) -> Result<Self> {
        let c = tmg.clusters();
        if !(0.0..=1.0).contains(&stay) {
            return Err(Error::InvalidArgument(format!("class stay probability {stay} outside [0, 1]")));
        }
        let class_trans = (0..c)
            .map(|a| {
                (0..c)
                    .map(|b| match (a == b, c) {
                        (true, 1) => 1.0,
                        (true, _) => stay,
                        (false, _) => (1.0 - stay) / (c - 1) as f64,
                    })
                    .collect()
            })
            .collect();
        Self::new(
            tmg.transforms.clone(),
            tmg.mu.clone(),
            tmg.phi.clone(),
            tmg.psi.clone(),
            InitialDist::Factorized(tmg.pi.clone()),
            class_trans,
            motion,
        )
    }

    #[inline]
    pub fn shape(&self) -> ImageShape {
        self.transforms.shape()
    }

    #[inline]
    pub fn clusters(&self) -> usize {
        self.mu.len()
    }

    #[inline]
    pub fn states(&self) -> usize {
        self.clusters() * self.transforms.len()
    }

    /// `(c, ℓ)` of lumped state `s`.
    #[inline]
    pub fn state(&self, s: usize) -> (usize, usize) {
        let l = self.transforms.len();
        (s / l, s % l)
    }

    #[inline]
    pub fn state_index(&self, c: usize, l: usize) -> usize {
        c * self.transforms.len() + l
    }

    pub(crate) fn component(&self, c: usize) -> ComponentRef<'_> {
        ComponentRef {
            mu: &self.mu[c],
            phi: &self.phi[c],
            lambda: None,
        }
    }

    pub(crate) fn check_frame(&self, x: &[f64]) -> Result<()> {
        let n = self.shape().n();
        if x.len() != n {
            return Err(Error::InvalidArgument(format!(
                "frame has {} pixels, model expects {n}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("frame contains non-finite pixels".into()));
        }
        Ok(())
    }

    /// `log p(x | s)` for every lumped state.
    pub fn emission_loglik(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.emission_loglik_with(&self.cache(), x)
    }

    pub(crate) fn cache(&self) -> KernelCache {
        let comps: Vec<ComponentRef<'_>> = (0..self.clusters()).map(|c| self.component(c)).collect();
        KernelCache::new(&self.transforms, &comps, &self.psi, false)
    }

    pub(crate) fn emission_loglik_with(&self, cache: &KernelCache, x: &[f64]) -> Result<Vec<f64>> {
        self.check_frame(x)?;
        let mut out = Vec::with_capacity(self.states());
        for c in 0..self.clusters() {
            let comp = self.component(c);
            for (l, op) in self.transforms.ops().iter().enumerate() {
                out.push(cache.get(l, c).loglik(op, comp, x));
            }
        }
        Ok(out)
    }

    pub(crate) fn graph(&self) -> Result<MotionGraph> {
        MotionGraph::build(&self.transforms, &self.motion)
    }

    /// Dense row `p(s' | s)`.
    pub fn transition_row(&self, s: usize) -> Result<Vec<f64>> {
        let graph = self.graph()?;
        let (c, l) = self.state(s);
        let w = graph.edge_weights(&self.motion.tables[self.motion.table_index(c)]);
        let mut row = vec![0.0; self.states()];
        for c2 in 0..self.clusters() {
            for e in graph.out_edges(l) {
                row[self.state_index(c2, graph.to[e] as usize)] = self.class_trans[c][c2] * w[e];
            }
        }
        Ok(row)
    }

    /// `log p(s_{1:T}, x_{1:T})` for an explicit state path.
    pub fn path_logprob(&self, frames: &[Vec<f64>], path: &[usize]) -> Result<f64> {
        if frames.len() != path.len() || frames.is_empty() {
            return Err(Error::InvalidArgument("path and frames must have the same nonzero length".into()));
        }
        let graph = self.graph()?;
        let weights: Vec<Vec<f64>> = self.motion.tables.iter().map(|t| graph.edge_weights(t)).collect();
        let pi = self.initial.state_probs(self.transforms.len());
        let mut lp = safe_ln(pi[path[0]]);
        for (t, (x, &s)) in frames.iter().zip(path).enumerate() {
            let (c, l) = self.state(s);
            if t > 0 {
                let (pc, pl) = self.state(path[t - 1]);
                let motion = graph
                    .find(pl, l)
                    .map_or(0.0, |e| weights[self.motion.table_index(pc)][e]);
                lp += safe_ln(self.class_trans[pc][c]) + safe_ln(motion);
            }
            self.check_frame(x)?;
            lp += cond_loglik(self.transforms.op(l), self.component(c), &self.psi, x, false);
        }
        Ok(lp)
    }

    /// Draws a sequence of `len` frames with its state path.
    pub fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let graph = self.graph()?;
        let weights: Vec<Vec<f64>> = self.motion.tables.iter().map(|t| graph.edge_weights(t)).collect();
        let pi = self.initial.state_probs(self.transforms.len());
        let mut frames = Vec::with_capacity(len);
        let mut path = Vec::with_capacity(len);
        let mut s = categorical(rng, &pi);
        for t in 0..len {
            if t > 0 {
                let (c, l) = self.state(s);
                let c2 = categorical(rng, &self.class_trans[c]);
                let range = graph.out_edges(l);
                let w = &weights[self.motion.table_index(c)][range.clone()];
                let e = range.start + categorical(rng, w);
                s = self.state_index(c2, graph.to[e] as usize);
            }
            let (c, l) = self.state(s);
            let z: Vec<f64> = self.mu[c]
                .iter()
                .zip(&self.phi[c])
                .map(|(m, v)| m + v.sqrt() * normal(rng))
                .collect();
            let mut x = self.transforms.op(l).apply(&z);
            for (xi, v) in x.iter_mut().zip(&self.psi) {
                *xi += v.sqrt() * normal(rng);
            }
            frames.push(x);
            path.push(s);
        }
        Ok((frames, path))
    }
}
