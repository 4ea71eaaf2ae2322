use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::inference::{smooth, Dynamics};
use super::model::{InitialDist, ThmmModel};
use crate::error::{Error, Result};
use crate::math::{global_variance, variance_floor};
use crate::models::{
    latent_posterior_with, reduce_stats, regress_loadings, residual_variance, MixtureStats, Reduction,
    Schedule, StepReport,
};

#[derive(Debug, Clone)]
pub struct ThmmOptions {
    /// Keep the motion tables fixed.
    pub clamp_motion: bool,
    pub freeze_class_trans: bool,
    pub tie_psi: bool,
    pub freeze_psi: bool,
    pub min_class_mass: f64,
    /// Fixed-point iterations for the motion tables when some cells cannot
    /// reach every bin.
    pub motion_iterations: usize,
    pub seed: u64,
    pub reduction: Reduction,
}

impl Default for ThmmOptions {
    fn default() -> Self {
        Self {
            clamp_motion: false,
            freeze_class_trans: false,
            tie_psi: false,
            freeze_psi: false,
            min_class_mass: 1e-8,
            motion_iterations: 100,
            seed: 0,
            reduction: Reduction::Deterministic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThmmStep {
    pub model: ThmmModel,
    /// Total log-likelihood of the input model.
    pub loglik: f64,
    pub report: StepReport,
}

impl ThmmModel {
    /// One Baum-Welch iteration over a batch of sequences.
    pub fn em_step(&self, sequences: &[Vec<Vec<f64>>], opts: &ThmmOptions) -> Result<ThmmStep> {
        if sequences.is_empty() || sequences.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("EM needs at least one non-empty sequence".into()));
        }
        let n = self.shape().n();
        let cs = self.clusters();
        let ls = self.transforms.len();
        let tables = self.motion.tables.len();
        let dyn_ = Dynamics::new(self)?;
        let cache = self.cache();
        let update_psi = !opts.freeze_psi;

        let mut mix = MixtureStats::zeros(n, ls, &vec![0; cs]);
        let mut first = vec![0.0; self.states()];
        let mut class_pairs = vec![vec![0.0; cs]; cs];
        let mut motion_counts = vec![vec![0.0; dyn_.graph.bins]; tables];
        let mut departures = vec![vec![0.0; ls]; tables];
        let mut loglik = 0.0;
        for frames in sequences {
            let le = frames
                .iter()
                .map(|x| self.emission_loglik_with(&cache, x))
                .collect::<Result<Vec<_>>>()?;
            let post = smooth(&dyn_, &le, false)?;
            loglik += post.loglik;
            for (a, b) in first.iter_mut().zip(&post.gamma[0]) {
                *a += b;
            }
            for c in 0..cs {
                for c2 in 0..cs {
                    class_pairs[c][c2] += post.class_pairs[c][c2];
                }
            }
            for k in 0..tables {
                for (a, b) in motion_counts[k].iter_mut().zip(&post.motion_counts[k]) {
                    *a += b;
                }
                for (a, b) in departures[k].iter_mut().zip(&post.departures[k]) {
                    *a += b;
                }
            }
            let times: Vec<usize> = (0..frames.len()).collect();
            let stats = reduce_stats(
                &times,
                opts.reduction,
                || MixtureStats::zeros(n, ls, &vec![0; cs]),
                |&t, acc| {
                    let x = &frames[t];
                    for (s, &g) in post.gamma[t].iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let (c, l) = self.state(s);
                        let op = self.transforms.op(l);
                        let (_, lat) =
                            latent_posterior_with(cache.get(l, c), op, self.component(c), &self.psi, x, false);
                        acc.accumulate(l, c, g, op, &lat, x, update_psi);
                    }
                    acc.count += 1;
                    Ok(())
                },
            )?;
            mix.merge(&stats);
        }

        let global = global_variance(sequences.iter().flatten().map(Vec::as_slice));
        let floor = variance_floor(global);
        let init_var = global.max(floor);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let count = mix.count as f64;
        let mut next = self.clone();
        let mut rescued = Vec::new();
        for c in 0..cs {
            let mass = mix.mass[c];
            if mass < opts.min_class_mass {
                let seq = &sequences[rng.random_range(0..sequences.len())];
                next.mu[c] = seq[rng.random_range(0..seq.len())].clone();
                next.phi[c] = vec![init_var; n];
                if !opts.freeze_class_trans {
                    next.class_trans[c] = vec![1.0 / cs as f64; cs];
                }
                rescued.push(c);
                continue;
            }
            let current = DMatrix::from_column_slice(n, 1, &self.mu[c]);
            let loadings = regress_loadings(&mix.sz[c], &mix.syy[c], &current, &[]);
            next.mu[c] = loadings.column(0).iter().copied().collect();
            next.phi[c] = (0..n)
                .map(|q| {
                    (residual_variance(&mix.sz[c], &mix.szz[c], &mix.syy[c], &loadings, q) / mass)
                        .max(floor)
                })
                .collect();
            if !opts.freeze_class_trans {
                let total: f64 = class_pairs[c].iter().sum();
                if total > 0.0 {
                    next.class_trans[c] = class_pairs[c].iter().map(|v| v / total).collect();
                }
            }
        }

        if update_psi {
            for (p, s) in next.psi.iter_mut().zip(&mix.spsi) {
                *p = s / count;
            }
            if opts.tie_psi {
                let mean = next.psi.iter().sum::<f64>() / n as f64;
                next.psi.fill(mean);
            }
            next.psi.iter_mut().for_each(|p| *p = p.max(floor));
        }

        let runs = sequences.len() as f64;
        next.initial = match &self.initial {
            InitialDist::Factorized(_) => {
                let mut pc: Vec<f64> = (0..cs)
                    .map(|c| first[c * ls..(c + 1) * ls].iter().sum::<f64>() / runs)
                    .collect();
                if !rescued.is_empty() {
                    for &c in &rescued {
                        pc[c] = pc[c].max(1.0 / cs as f64);
                    }
                    let total: f64 = pc.iter().sum();
                    pc.iter_mut().for_each(|p| *p /= total);
                }
                InitialDist::Factorized(pc)
            }
            InitialDist::Joint(_) => InitialDist::Joint(first.iter().map(|v| v / runs).collect()),
        };

        if !opts.clamp_motion {
            for k in 0..tables {
                next.motion.tables[k] = dyn_.graph.refit_table(
                    &self.motion.tables[k],
                    &motion_counts[k],
                    &departures[k],
                    opts.motion_iterations,
                );
            }
        }

        let report = StepReport {
            iteration: 0,
            loglik,
            cluster_mass: mix.mass.clone(),
            rescued,
        };
        Ok(ThmmStep {
            model: next,
            loglik,
            report,
        })
    }

    pub fn fit(
        &self,
        sequences: &[Vec<Vec<f64>>],
        schedule: Schedule,
        opts: &ThmmOptions,
    ) -> Result<(Self, Vec<StepReport>)> {
        let mut model = self.clone();
        let mut reports = Vec::with_capacity(schedule.iterations);
        let mut step_opts = opts.clone();
        let mut previous = f64::NEG_INFINITY;
        for it in 0..schedule.iterations {
            step_opts.seed = opts.seed.wrapping_add(it as u64);
            let out = model.em_step(sequences, &step_opts)?;
            let mut report = out.report;
            report.iteration = it;
            let done = schedule.converged(previous, out.loglik);
            previous = out.loglik;
            reports.push(report);
            model = out.model;
            if done {
                break;
            }
        }
        Ok((model, reports))
    }
}
