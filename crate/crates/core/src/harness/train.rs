//! `train`: fit a model family with restarts and write its artifacts.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Dataset, Experiment, Family};
use crate::error::{Error, Result};
use crate::io::{
    montage, save_model, step_rows, truth_rows, write_csv, write_params, write_pgm, BitDepth, Model, StepRow,
};
use crate::models::{EmOptions, MtcaModel, Schedule, TcaModel, TmgModel};
use crate::thmm::{MotionPrior, ThmmModel, ThmmOptions};
use crate::transform::{ImageShape, TransformationSet};

/// Seed of restart `r`; restart 0 of seed `s` differs from restart 1 of `s − 1`.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (restart as u64).wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Total log-likelihood: the sequence score for a THMM, the sum over
/// independent images otherwise.
pub fn score(model: &Model, frames: &[Vec<f64>]) -> Result<f64> {
    match model {
        Model::Thmm(m) => m.score_sequence(frames),
        static_model => Ok(score_each(static_model, frames).iter().sum()),
    }
}

/// `log p(x)` per image for a static model.
///
/// # Panics
/// On a THMM, which only scores whole sequences.
pub fn score_each(model: &Model, frames: &[Vec<f64>]) -> Vec<f64> {
    match model {
        Model::Tmg(m) => m.logliks(frames),
        Model::Tca(m) => m.logliks(frames),
        Model::Mtca(m) => m.logliks(frames),
        Model::Thmm(_) => panic!("a THMM scores sequences, not single images"),
    }
}

/// One EM run from a fresh initialization.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: Model,
    pub loglik: f64,
    pub steps: Vec<StepRow>,
}

fn em_options(exp: &Experiment, seed: u64) -> EmOptions {
    EmOptions {
        freeze_rho: exp.freeze_rho,
        tie_psi: exp.tie_psi,
        seed,
        reduction: exp.reduction,
        ..EmOptions::default()
    }
}

fn schedule(exp: &Experiment, iterations: usize) -> Schedule {
    Schedule {
        iterations,
        tolerance: exp.tolerance,
    }
}

/// Trains one restart of `exp.family` on `frames`.
pub fn fit_once(exp: &Experiment, set: &TransformationSet, frames: &[Vec<f64>], restart: usize) -> Result<Fit> {
    let seed = restart_seed(exp.seed, restart);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = em_options(exp, seed);
    let sched = schedule(exp, exp.iterations);
    let stage = exp.family.as_str();
    let (model, steps) = match exp.family {
        Family::Tmg => {
            let (m, r) = TmgModel::init(set.clone(), frames, exp.clusters, &mut rng)?.fit(frames, sched, &opts)?;
            (Model::Tmg(m), step_rows(restart, stage, &r))
        }
        Family::Tca => {
            let init = TcaModel::init(set.clone(), frames, exp.factors, exp.fast_likelihood, &mut rng)?;
            let (m, r) = init.fit(frames, sched, &opts)?;
            (Model::Tca(m), step_rows(restart, stage, &r))
        }
        Family::Mtca => {
            let init = MtcaModel::init(
                set.clone(),
                frames,
                exp.clusters,
                exp.factors,
                exp.fast_likelihood,
                &mut rng,
            )?;
            let (m, r) = init.fit(frames, sched, &opts)?;
            (Model::Mtca(m), step_rows(restart, stage, &r))
        }
        Family::Thmm => {
            let warm = TmgModel::init(set.clone(), frames, exp.clusters, &mut rng)?;
            let (mut tmg, r0) = warm.fit(frames, schedule(exp, exp.tmg_iterations), &opts)?;
            if tmg.transforms.is_toroidal() {
                tmg.recenter()?;
            }
            let motion = MotionPrior::uniform(exp.motion, exp.motion_threshold, exp.per_class_motion, exp.clusters);
            let thmm_opts = ThmmOptions {
                clamp_motion: exp.clamp_motion,
                tie_psi: exp.tie_psi,
                seed,
                reduction: exp.reduction,
                ..ThmmOptions::default()
            };
            let (m, r1) = ThmmModel::from_tmg(&tmg, motion, exp.class_stay)?.fit(
                std::slice::from_ref(&frames.to_vec()),
                sched,
                &thmm_opts,
            )?;
            let mut steps = step_rows(restart, "tmg", &r0);
            steps.extend(step_rows(restart, stage, &r1));
            (Model::Thmm(m), steps)
        }
    };
    let loglik = score(&model, frames)?;
    Ok(Fit { model, loglik, steps })
}

/// All restarts; the highest final log-likelihood wins, earliest on ties.
/// Returns the winning index, its fit carrying every restart's steps, and
/// each restart's score.
pub fn fit_best(exp: &Experiment, set: &TransformationSet, frames: &[Vec<f64>]) -> Result<(usize, Fit, Vec<f64>)> {
    let mut best: Option<(usize, Fit)> = None;
    let mut scores = Vec::with_capacity(exp.restarts);
    let mut steps = Vec::new();
    for r in 0..exp.restarts {
        let fit = fit_once(exp, set, frames, r)?;
        scores.push(fit.loglik);
        steps.extend(fit.steps.iter().cloned());
        if best.as_ref().is_none_or(|(_, b)| fit.loglik > b.loglik) {
            best = Some((r, fit));
        }
    }
    let (r, mut fit) = best.expect("at least one restart");
    fit.steps = steps;
    Ok((r, fit, scores))
}

/// Result of [`train`]: one model, or one per class when supervised.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: Vec<Model>,
    /// Final log-likelihood of every restart, per model.
    pub restart_logliks: Vec<Vec<f64>>,
    pub dataset: Dataset,
    pub files: Vec<PathBuf>,
}

pub fn model_file_name(index: Option<usize>) -> String {
    match index {
        None => "model.tinv".into(),
        Some(k) => format!("model_class{k:02}.tinv"),
    }
}

/// Runs the experiment and writes its artifacts under `exp.output`.
pub fn train(exp: &Experiment) -> Result<TrainOutcome> {
    let dataset = exp.data.generate(exp.seed)?;
    let set = exp.transforms.build(dataset.shape)?;
    let groups: Vec<(Option<usize>, Vec<Vec<f64>>)> = if exp.supervised {
        let truth = dataset
            .truth
            .as_ref()
            .ok_or_else(|| Error::Manifest("supervised training needs labeled generated data".into()))?;
        let classes = truth.classes.iter().max().map_or(0, |c| c + 1);
        (0..classes)
            .map(|k| {
                let rows = dataset
                    .frames
                    .iter()
                    .zip(&truth.classes)
                    .filter(|(_, &c)| c == k)
                    .map(|(f, _)| f.clone())
                    .collect();
                (Some(k), rows)
            })
            .collect()
    } else {
        vec![(None, dataset.frames.clone())]
    };

    std::fs::create_dir_all(&exp.output)?;
    let mut files = Vec::new();
    let mut models = Vec::new();
    let mut restart_logliks = Vec::new();
    let mut steps = Vec::new();
    let mut summary = vec![
        ("name".to_string(), exp.name.clone()),
        ("family".to_string(), exp.family.as_str().to_string()),
        ("seed".to_string(), exp.seed.to_string()),
    ];
    for (k, frames) in &groups {
        if frames.is_empty() {
            return Err(Error::Manifest(format!("class {} has no training data", k.unwrap_or(0))));
        }
        let (best, fit, scores) = fit_best(exp, &set, frames)?;
        let prefix = k.map_or(String::new(), |k| format!("class{k:02}_"));
        summary.push((format!("{prefix}best_restart"), best.to_string()));
        for (r, s) in scores.iter().enumerate() {
            summary.push((format!("{prefix}restart{r}_loglik"), format!("{s:.6}")));
        }
        let path = exp.output.join(model_file_name(*k));
        save_model(&fit.model, &path)?;
        files.push(path);
        steps.extend(fit.steps);
        models.push(fit.model);
        restart_logliks.push(scores);
    }

    let out = &exp.output;
    let mut write = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let p = out.join(name);
        f(&p)?;
        files.push(p);
        Ok(())
    };
    write("steps.csv", &|p| write_csv(p, &steps))?;
    write("summary.csv", &|p| write_params(p, &summary))?;
    if let Some(truth) = &dataset.truth {
        write("truth.csv", &|p| write_csv(p, &truth_rows(truth)))?;
    }
    let grids = image_grids(&models, dataset.shape);
    for (name, images) in &grids {
        write(name, &|p| {
            let (shape, img) = montage(dataset.shape, images, 1)?;
            write_pgm(p, shape, &img, BitDepth::Eight)
        })?;
    }
    Ok(TrainOutcome {
        models,
        restart_logliks,
        dataset,
        files,
    })
}

/// Montage contents: means, per-cluster variances, sensor noise and, for
/// factor models, loading columns.
fn image_grids(models: &[Model], shape: ImageShape) -> Vec<(&'static str, Vec<Vec<f64>>)> {
    let n = shape.n();
    let mut means = Vec::new();
    let mut vars = Vec::new();
    let mut psi = Vec::new();
    let mut loadings = Vec::new();
    let mut columns = |l: &nalgebra::DMatrix<f64>| {
        for col in l.column_iter() {
            loadings.push(col.iter().copied().collect::<Vec<f64>>());
        }
    };
    for m in models {
        match m {
            Model::Tmg(m) => {
                means.extend(m.mu.iter().cloned());
                vars.extend(m.phi.iter().cloned());
                psi.push(m.psi.clone());
            }
            Model::Tca(m) => {
                means.push(m.mu.clone());
                vars.push(m.phi.clone());
                psi.push(m.psi.clone());
                columns(&m.lambda);
            }
            Model::Mtca(m) => {
                means.extend(m.mu.iter().cloned());
                vars.extend(m.phi.iter().cloned());
                psi.push(m.psi.clone());
                m.lambda.iter().for_each(&mut columns);
            }
            Model::Thmm(m) => {
                means.extend(m.mu.iter().cloned());
                vars.extend(m.phi.iter().cloned());
                psi.push(m.psi.clone());
            }
        }
    }
    debug_assert!(means.iter().all(|m| m.len() == n));
    let mut grids = vec![("means.pgm", means), ("variances.pgm", vars), ("sensor_noise.pgm", psi)];
    if !loadings.is_empty() {
        grids.push(("loadings.pgm", loadings));
    }
    grids
}
