//! Experiment plumbing behind the `tinv` binary: manifests, training with
//! restarts, inference tasks, evaluation and generator passthrough.

pub mod eval;
pub mod infer;
pub mod manifest;
pub mod train;

use std::path::{Path, PathBuf};

pub use eval::{cmd_eval, label_metrics, track_metrics, EvalMode, Metrics};
pub use infer::{infer, write_output, InferOptions, InferOutput, Task};
pub use manifest::{DataSpec, Dataset, Experiment, Family, Manifest, TemplateSpec, TransformSpec};
pub use train::{fit_best, fit_once, restart_seed, score, score_each, train, Fit, TrainOutcome};

use crate::error::Result;
use crate::io::{read_frames, truth_rows, write_csv, write_frames, write_params, BitDepth, Model};

pub fn cmd_train(manifest: &Manifest) -> Result<TrainOutcome> {
    train(&Experiment::from_manifest(manifest)?)
}

/// Loads models and frames, runs `task`, and writes the result to `out`.
pub fn cmd_infer(models: &[PathBuf], frames: &Path, task: Task, opts: InferOptions, out: &Path) -> Result<InferOutput> {
    let models = models
        .iter()
        .map(crate::io::load_model)
        .collect::<Result<Vec<Model>>>()?;
    let (shape, frames) = read_frames(frames)?;
    let output = infer(&models, &frames, shape, task, opts)?;
    write_output(&output, shape, out)?;
    Ok(output)
}

/// Writes the manifest's data as `frames/`, plus `truth.csv` and
/// `params.csv` when generated.
pub fn cmd_gen(manifest: &Manifest) -> Result<Dataset> {
    let exp = Experiment::from_manifest(manifest)?;
    let data = exp.data.generate(exp.seed)?;
    write_frames(&exp.output.join("frames"), data.shape, &data.frames, BitDepth::Sixteen)?;
    if let Some(truth) = &data.truth {
        write_csv(&exp.output.join("truth.csv"), &truth_rows(truth))?;
        write_params(&exp.output.join("params.csv"), &truth.params)?;
    }
    Ok(data)
}
