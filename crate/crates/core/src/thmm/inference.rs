//! Exact scaled forward-backward and Viterbi over lumped states.
//!
//! A step costs `O(C·L·B + C²·L)`: the motion factor is pushed through the
//! sparse move graph per class, then the class factor is mixed per cell.

use rayon::prelude::*;

use super::model::ThmmModel;
use super::motion::MotionGraph;
use crate::error::{Error, Result};
use crate::math::safe_ln;

/// Smoothed posterior of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePosterior {
    /// `gamma[t][s]`.
    pub gamma: Vec<Vec<f64>>,
    /// Expected class transitions `[c][c']`.
    pub class_pairs: Vec<Vec<f64>>,
    /// Expected moves per relative-motion bin, `[table][bin]`.
    pub motion_counts: Vec<Vec<f64>>,
    /// Expected moves leaving each grid cell, `[table][ℓ]`.
    pub departures: Vec<Vec<f64>>,
    pub map_path: Vec<usize>,
    pub loglik: f64,
}

/// Transition structure of a model, evaluated once per call.
pub(crate) struct Dynamics<'a> {
    pub model: &'a ThmmModel,
    pub graph: MotionGraph,
    /// `[table][edge]`.
    pub weights: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
}

impl<'a> Dynamics<'a> {
    pub fn new(model: &'a ThmmModel) -> Result<Self> {
        let graph = model.graph()?;
        let weights = model
            .motion
            .tables
            .iter()
            .map(|t| graph.edge_weights(t))
            .collect();
        Ok(Self {
            model,
            graph,
            weights,
            pi: model.initial.state_probs(model.transforms.len()),
        })
    }

    #[inline]
    fn cells(&self) -> usize {
        self.graph.cells
    }

    #[inline]
    fn table(&self, c: usize) -> &[f64] {
        &self.weights[self.model.motion.table_index(c)]
    }

    /// `out(c, ℓ') = Σ_ℓ a(c, ℓ) T_c(ℓ → ℓ')`.
    fn push_motion(&self, a: &[f64], out: &mut [f64]) {
        let l = self.cells();
        out.par_chunks_mut(l).enumerate().for_each(|(c, row)| {
            let w = self.table(c);
            let src = &a[c * l..(c + 1) * l];
            for (cell, o) in row.iter_mut().enumerate() {
                *o = self
                    .graph
                    .in_edges(cell)
                    .iter()
                    .map(|&e| src[self.graph.from[e as usize] as usize] * w[e as usize])
                    .sum();
            }
        });
    }

    /// `out(c, ℓ) = Σ_ℓ' T_c(ℓ → ℓ') v(c, ℓ')`.
    fn pull_motion(&self, v: &[f64], out: &mut [f64]) {
        let l = self.cells();
        out.par_chunks_mut(l).enumerate().for_each(|(c, row)| {
            let w = self.table(c);
            let dst = &v[c * l..(c + 1) * l];
            for (cell, o) in row.iter_mut().enumerate() {
                *o = self
                    .graph
                    .out_edges(cell)
                    .map(|e| w[e] * dst[self.graph.to[e] as usize])
                    .sum();
            }
        });
    }

    /// `out(c', ℓ) = Σ_c A[c][c'] w(c, ℓ)`.
    fn mix_forward(&self, w: &[f64], out: &mut [f64]) {
        let l = self.cells();
        let a = &self.model.class_trans;
        out.par_chunks_mut(l).enumerate().for_each(|(c2, row)| {
            for (cell, o) in row.iter_mut().enumerate() {
                *o = (0..a.len()).map(|c| a[c][c2] * w[c * l + cell]).sum();
            }
        });
    }

    /// `out(c, ℓ) = Σ_c' A[c][c'] u(c', ℓ)`.
    fn mix_backward(&self, u: &[f64], out: &mut [f64]) {
        let l = self.cells();
        let a = &self.model.class_trans;
        out.par_chunks_mut(l).enumerate().for_each(|(c, row)| {
            for (cell, o) in row.iter_mut().enumerate() {
                *o = (0..a.len()).map(|c2| a[c][c2] * u[c2 * l + cell]).sum();
            }
        });
    }
}

/// Emission log-likelihoods for every frame, `[t][s]`.
pub(crate) fn emissions(model: &ThmmModel, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("a sequence needs at least one frame".into()));
    }
    let cache = model.cache();
    frames.par_iter().map(|x| model.emission_loglik_with(&cache, x)).collect()
}

/// Exponentiates `base + row` relative to its maximum; returns the shifted
/// values and the maximum.
fn exp_shifted(base: impl Iterator<Item = f64>, row: &[f64]) -> (Vec<f64>, f64) {
    let z: Vec<f64> = base.zip(row).map(|(b, e)| b + e).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (z.iter().map(|v| (v - m).exp()).collect(), m)
}

struct Forward {
    alpha: Vec<Vec<f64>>,
    /// Prior mass of each state before frame t's emission.
    pred: Vec<Vec<f64>>,
    loglik: f64,
}

fn forward(dyn_: &Dynamics<'_>, le: &[Vec<f64>], keep: bool) -> Result<Forward> {
    let s_count = dyn_.model.states();
    let mut alpha = Vec::with_capacity(if keep { le.len() } else { 1 });
    let mut preds = Vec::with_capacity(if keep { le.len() } else { 0 });
    let mut loglik = 0.0;
    let mut prev: Vec<f64> = Vec::new();
    let mut moved = vec![0.0; s_count];
    let mut pred = vec![0.0; s_count];
    for (t, row) in le.iter().enumerate() {
        if !row.iter().any(|v| v.is_finite()) || row.iter().any(|v| v.is_nan()) {
            return Err(Error::Underflow(format!("frame {t} has zero likelihood under every state")));
        }
        if t == 0 {
            pred.copy_from_slice(&dyn_.pi);
        } else {
            dyn_.push_motion(&prev, &mut moved);
            dyn_.mix_forward(&moved, &mut pred);
        }
        let (mut a, m) = exp_shifted(pred.iter().map(|p| p.ln()), row);
        let c: f64 = a.iter().sum();
        if !(m.is_finite() && c > 0.0 && c.is_finite()) {
            return Err(Error::Underflow(format!(
                "no state path explains frames 1..={}",
                t + 1
            )));
        }
        a.iter_mut().for_each(|v| *v /= c);
        loglik += c.ln() + m;
        if keep {
            alpha.push(a.clone());
            preds.push(pred.clone());
        }
        prev = a;
    }
    if !keep {
        alpha.push(prev);
    }
    Ok(Forward {
        alpha,
        pred: preds,
        loglik,
    })
}

/// Smoothed posterior from precomputed emissions.
pub(crate) fn smooth(dyn_: &Dynamics<'_>, le: &[Vec<f64>], with_path: bool) -> Result<SequencePosterior> {
    let model = dyn_.model;
    let fw = forward(dyn_, le, true)?;
    let t_len = le.len();
    let s_count = model.states();
    let cells = dyn_.cells();
    let cs = model.clusters();
    let tables = model.motion.tables.len();
    let graph = &dyn_.graph;

    let mut class_pairs = vec![vec![0.0; cs]; cs];
    let mut motion_counts = vec![vec![0.0; graph.bins]; tables];
    let mut departures = vec![vec![0.0; cells]; tables];
    // log β up to a per-frame constant, shifted by its maximum over states
    // with prior mass; states without any are exactly unreachable. Each
    // step's pair posterior is normalized by its own total ct = Σ α_{t-1} (T u).
    let mut log_beta = vec![vec![0.0; s_count]; t_len];
    let mut v = vec![0.0; s_count];
    let mut moved = vec![0.0; s_count];
    for t in (1..t_len).rev() {
        let reach = &fw.pred[t];
        let z: Vec<f64> = log_beta[t].iter().zip(&le[t]).map(|(b, e)| b + e).collect();
        let top = z
            .iter()
            .zip(reach)
            .filter(|(_, &p)| p > 0.0)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let u: Vec<f64> = z
            .iter()
            .zip(reach)
            .map(|(v, &p)| if p > 0.0 { (v - top).exp() } else { 0.0 })
            .collect();
        dyn_.mix_backward(&u, &mut v);
        let mut prev = vec![0.0; s_count];
        dyn_.pull_motion(&v, &mut prev);
        let ct: f64 = fw.alpha[t - 1].iter().zip(&prev).map(|(a, b)| a * b).sum();
        if !(ct > 0.0 && ct.is_finite()) {
            return Err(Error::Underflow(format!("no state path explains frames {t}..={t_len}")));
        }
        log_beta[t - 1] = prev.iter().map(|b| b.ln()).collect();

        // ξ over class pairs: A[c][c'] Σ_ℓ' (α T)(c, ℓ') u(c', ℓ') / c_t
        dyn_.push_motion(&fw.alpha[t - 1], &mut moved);
        for c in 0..cs {
            for c2 in 0..cs {
                let dot: f64 = (0..cells)
                    .map(|l| moved[c * cells + l] * u[c2 * cells + l])
                    .sum();
                class_pairs[c][c2] += model.class_trans[c][c2] * dot / ct;
            }
        }
        // ξ over moves: α(c, ℓ) T_c(e) v(c, ℓ') / c_t
        for c in 0..cs {
            let k = model.motion.table_index(c);
            let w = &dyn_.weights[k];
            for e in 0..graph.edges() {
                let a = graph.from[e] as usize;
                let b = graph.to[e] as usize;
                let x = fw.alpha[t - 1][c * cells + a] * w[e] * v[c * cells + b] / ct;
                motion_counts[k][graph.bin[e] as usize] += x;
                departures[k][a] += x;
            }
        }
    }
    let gamma: Vec<Vec<f64>> = fw
        .alpha
        .iter()
        .zip(&log_beta)
        .map(|(a, b)| {
            let (g, _) = exp_shifted(a.iter().map(|x| x.ln()), b);
            let z: f64 = g.iter().sum();
            g.into_iter().map(|x| x / z).collect()
        })
        .collect();
    let map_path = if with_path { decode(dyn_, le)? } else { Vec::new() };
    Ok(SequencePosterior {
        gamma,
        class_pairs,
        motion_counts,
        departures,
        map_path,
        loglik: fw.loglik,
    })
}

/// Log-domain Viterbi with a two-stage max (motion, then class). Ties go to
/// the smallest lumped index.
pub(crate) fn decode(dyn_: &Dynamics<'_>, le: &[Vec<f64>]) -> Result<Vec<usize>> {
    let model = dyn_.model;
    let s_count = model.states();
    let cells = dyn_.cells();
    let cs = model.clusters();
    let graph = &dyn_.graph;
    let log_w: Vec<Vec<f64>> = dyn_.weights.iter().map(|w| w.iter().map(|&p| safe_ln(p)).collect()).collect();
    let log_a: Vec<Vec<f64>> = model
        .class_trans
        .iter()
        .map(|r| r.iter().map(|&p| safe_ln(p)).collect())
        .collect();

    let mut delta: Vec<f64> = dyn_.pi.iter().zip(&le[0]).map(|(p, e)| safe_ln(*p) + e).collect();
    let mut back: Vec<Vec<u32>> = Vec::with_capacity(le.len());
    let mut stage = vec![(f64::NEG_INFINITY, 0u32); s_count];
    for row in le.iter().skip(1) {
        // stage 1: best predecessor cell within each previous class
        stage.par_chunks_mut(cells).enumerate().for_each(|(c, out)| {
            let w = &log_w[model.motion.table_index(c)];
            for (cell, o) in out.iter_mut().enumerate() {
                let mut best = (f64::NEG_INFINITY, u32::MAX);
                for &e in graph.in_edges(cell) {
                    let from = graph.from[e as usize];
                    let v = delta[c * cells + from as usize] + w[e as usize];
                    if v > best.0 || best.1 == u32::MAX {
                        best = (v, from);
                    }
                }
                *o = best;
            }
        });
        let mut next = vec![0.0; s_count];
        let mut ptr = vec![0u32; s_count];
        for c2 in 0..cs {
            for cell in 0..cells {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for c in 0..cs {
                    let (v, from) = stage[c * cells + cell];
                    let v = v + log_a[c][c2];
                    if v > best.0 || best.1 == usize::MAX {
                        best = (v, c * cells + from as usize);
                    }
                }
                let s = c2 * cells + cell;
                next[s] = best.0 + row[s];
                ptr[s] = best.1 as u32;
            }
        }
        delta = next;
        back.push(ptr);
    }
    let mut s = crate::math::argmax(&delta);
    if delta[s] == f64::NEG_INFINITY {
        return Err(Error::Underflow("every state path has zero probability".into()));
    }
    let mut path = vec![s; le.len()];
    for t in (1..le.len()).rev() {
        s = back[t - 1][s] as usize;
        path[t - 1] = s;
    }
    Ok(path)
}

impl ThmmModel {
    pub fn forward_backward(&self, frames: &[Vec<f64>]) -> Result<SequencePosterior> {
        let le = emissions(self, frames)?;
        smooth(&Dynamics::new(self)?, &le, true)
    }

    pub fn viterbi(&self, frames: &[Vec<f64>]) -> Result<Vec<usize>> {
        let le = emissions(self, frames)?;
        decode(&Dynamics::new(self)?, &le)
    }

    /// `log p(x_{1:T})` by the forward pass alone.
    pub fn score_sequence(&self, frames: &[Vec<f64>]) -> Result<f64> {
        let le = emissions(self, frames)?;
        Ok(forward(&Dynamics::new(self)?, &le, false)?.loglik)
    }
}
