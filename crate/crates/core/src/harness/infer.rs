//! `infer`: run a trained model over a frame sequence.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{track_rows, write_csv, write_frames, BitDepth, LabelRow, Model, TrackRow};
use crate::math::argmax;
use crate::models::{classify_scores, PosteriorSummary};
use crate::thmm::{Decoding, DenoiseMode, TrackPoint};
use crate::transform::ImageShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Denoise,
    Stabilize,
    Track,
    Score,
    Classify,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "denoise" => Ok(Task::Denoise),
            "stabilize" => Ok(Task::Stabilize),
            "track" => Ok(Task::Track),
            "score" => Ok(Task::Score),
            "classify" => Ok(Task::Classify),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InferOptions {
    pub denoise: DenoiseMode,
    pub decoding: Decoding,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InferOutput {
    Frames(Vec<Vec<f64>>),
    Track(Vec<TrackRow>),
    Score(f64),
    Labels(Vec<LabelRow>),
}

fn posterior(model: &Model, x: &[f64]) -> Result<PosteriorSummary> {
    match model {
        Model::Tmg(m) => m.posterior(x),
        Model::Tca(m) => m.posterior(x),
        Model::Mtca(m) => m.posterior(x),
        Model::Thmm(_) => unreachable!("sequence models have no per-image posterior"),
    }
}

/// Maps every frame through its posterior without keeping the posteriors.
fn per_frame<T: Send>(
    model: &Model,
    frames: &[Vec<f64>],
    f: impl Fn(usize, PosteriorSummary) -> T + Sync,
) -> Result<Vec<T>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(t, x)| posterior(model, x).map(|p| f(t, p)))
        .collect()
}

/// `log a − log b` of the two largest entries; infinite with one candidate.
fn log_margin(values: &[f64]) -> f64 {
    let best = argmax(values);
    let rival = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    values[best] - rival
}

fn ln_all(p: &[f64]) -> Vec<f64> {
    p.iter().map(|v| v.ln()).collect()
}

fn model_shape(model: &Model) -> ImageShape {
    model.transforms().shape()
}

/// Dispatches `task`. Several models are only meaningful for `classify`,
/// where each model stands for one class under the Bayes rule.
pub fn infer(models: &[Model], frames: &[Vec<f64>], shape: ImageShape, task: Task, opts: InferOptions) -> Result<InferOutput> {
    let Some(first) = models.first() else {
        return Err(Error::InvalidArgument("no model given".into()));
    };
    for m in models {
        if model_shape(m) != shape {
            return Err(Error::InvalidArgument(format!(
                "model shape {} does not match frame shape {shape}",
                model_shape(m)
            )));
        }
    }
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames".into()));
    }
    if models.len() > 1 {
        return match task {
            Task::Classify => bayes_labels(models, frames),
            _ => Err(Error::InvalidArgument("several models are only accepted by classify".into())),
        };
    }
    match first {
        Model::Thmm(m) => match task {
            Task::Denoise => Ok(InferOutput::Frames(m.denoise(frames, opts.denoise)?)),
            Task::Stabilize => Ok(InferOutput::Frames(m.stabilize(frames)?)),
            Task::Track => {
                let points = m.track(frames, opts.decoding)?;
                let grid = m.transforms.grid().expect("tracking succeeded on a grid");
                Ok(InferOutput::Track(track_rows(&points, grid)))
            }
            Task::Score => Ok(InferOutput::Score(m.score_sequence(frames)?)),
            Task::Classify => {
                let points = m.track(frames, opts.decoding)?;
                Ok(InferOutput::Labels(
                    points
                        .iter()
                        .map(|p| LabelRow {
                            index: p.t,
                            label: p.class,
                            transform: p.transform,
                            log_margin: p.log_margin,
                        })
                        .collect(),
                ))
            }
        },
        model => mixture_task(model, frames, task, opts),
    }
}

fn mixture_task(model: &Model, frames: &[Vec<f64>], task: Task, opts: InferOptions) -> Result<InferOutput> {
    let set = model.transforms();
    if task == Task::Score {
        return super::train::score(model, frames).map(InferOutput::Score);
    }
    let n = set.shape().n();
    match task {
        Task::Denoise => per_frame(model, frames, |_, p| match opts.denoise {
            DenoiseMode::Hard => {
                let (l, c) = p.map_state();
                set.op(l).apply(&p.latent(l, c).z_mean)
            }
            DenoiseMode::Soft => {
                let mut out = vec![0.0; n];
                for (s, (&r, lat)) in p.resp.iter().zip(&p.latents).enumerate() {
                    if r > 0.0 {
                        let img = set.op(s / p.clusters).apply(&lat.z_mean);
                        out.iter_mut().zip(img).for_each(|(o, v)| *o += r * v);
                    }
                }
                out
            }
        })
        .map(InferOutput::Frames),
        Task::Stabilize => per_frame(model, frames, |_, p| p.z_mean()).map(InferOutput::Frames),
        Task::Track => {
            let grid = set
                .grid()
                .ok_or_else(|| Error::InvalidModel("tracking needs a grid-structured transformation set".into()))?;
            let points = per_frame(model, frames, |t, p| {
                let (l, c) = p.map_state();
                TrackPoint {
                    t,
                    class: c,
                    transform: l,
                    shift: grid.shift_of(l),
                    log_margin: log_margin(&ln_all(&p.resp)),
                }
            })?;
            Ok(InferOutput::Track(track_rows(&points, grid)))
        }
        Task::Classify => per_frame(model, frames, |index, p| {
            let classes: Vec<f64> = (0..p.clusters)
                .map(|c| (0..set.len()).map(|l| p.resp_at(l, c)).sum())
                .collect();
            let label = argmax(&classes);
            let within: Vec<f64> = (0..set.len()).map(|l| p.resp_at(l, label)).collect();
            LabelRow {
                index,
                label,
                transform: argmax(&within),
                log_margin: log_margin(&ln_all(&classes)),
            }
        })
        .map(InferOutput::Labels),
        Task::Score => unreachable!(),
    }
}

fn bayes_labels(models: &[Model], frames: &[Vec<f64>]) -> Result<InferOutput> {
    if models.iter().any(|m| matches!(m, Model::Thmm(_))) {
        return Err(Error::InvalidArgument("Bayes-rule classification takes static models".into()));
    }
    let scores: Vec<Vec<f64>> = models
        .iter()
        .map(|m| super::train::score_each(m, frames))
        .collect();
    frames
        .par_iter()
        .enumerate()
        .map(|(index, x)| {
            let ll: Vec<f64> = scores.iter().map(|s| s[index]).collect();
            let label = classify_scores(&ll, None);
            let p = posterior(&models[label], x)?;
            Ok(LabelRow {
                index,
                label,
                transform: p.map_state().0,
                log_margin: log_margin(&ll),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(InferOutput::Labels)
}

/// Writes an [`InferOutput`]: frames into the directory `out`, tables and
/// scores into the file `out`.
pub fn write_output(output: &InferOutput, shape: ImageShape, out: &Path) -> Result<()> {
    match output {
        InferOutput::Frames(f) => write_frames(out, shape, f, BitDepth::Sixteen),
        InferOutput::Track(rows) => write_csv(out, rows),
        InferOutput::Labels(rows) => write_csv(out, rows),
        InferOutput::Score(s) => Ok(std::fs::write(out, format!("{s:.6}\n"))?),
    }
}
