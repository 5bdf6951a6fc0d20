//! Training, evaluation and generation jobs behind the CLI.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sgvae_core::data::{split_semi_supervised, Dataset};
use sgvae_core::model::{compile, ExecutionPlan};
use sgvae_core::objective::EVAL_SAMPLES;
use sgvae_core::train::{error_rate, Binding, TrainConfig, Trainer};
use sgvae_core::Tensor;

use crate::artifacts::{Artifacts, MetricsRow, MetricsWriter, RunManifest, Seeds};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::generate;
use crate::mnist;
use crate::pgm::Grid;
use crate::spec_file::{self, LoadedModel};

#[derive(Clone, Debug)]
pub struct TrainJob {
    pub model_path: PathBuf,
    pub data_dir: PathBuf,
    pub labeled: usize,
    pub config: TrainConfig,
    pub out_dir: PathBuf,
}

pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub metrics: Vec<MetricsRow>,
    /// Error on the test set after the last evaluated epoch.
    pub test_error: Option<f64>,
    pub plan: ExecutionPlan,
    pub params: Vec<Tensor>,
}

/// Checks that the data fits the model's observed and label variables.
fn check_binding(plan: &ExecutionPlan, data: &Dataset) -> Result<Binding> {
    let binding = Binding::infer(plan).map_err(|e| Error::Spec(e.to_string()))?;
    let g = plan.graph();
    let x = g.variable(binding.observed);
    if x.shape != data.width() {
        return Err(Error::Data(format!(
            "`{}` has {} features but the data has {}",
            x.name,
            x.shape,
            data.width()
        )));
    }
    if let Some(l) = binding.label {
        let y = g.variable(l);
        if y.shape != data.classes {
            return Err(Error::Data(format!(
                "`{}` has {} classes but the data has {}",
                y.name, y.shape, data.classes
            )));
        }
    }
    Ok(binding)
}

fn test_error(plan: &ExecutionPlan, params: &[Tensor], test: &Dataset, seed: u64) -> Result<f64> {
    Ok(error_rate(plan, params, test, EVAL_SAMPLES, seed)?)
}

pub fn train(job: &TrainJob) -> Result<TrainOutcome> {
    let model = spec_file::load(&job.model_path)?;
    let config = job.config;
    config.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let (plan, store) = compile(&model.graph, config.seed)?;
    let data = mnist::load(&job.data_dir)?;
    check_binding(&plan, &data.train)?;
    let split = split_semi_supervised(&data.train, job.labeled, config.seed).map_err(|e| Error::Data(e.to_string()))?;
    let (n, m) = (split.unsupervised.len(), split.supervised.len());
    let mut trainer = Trainer::new(plan, store, config, n, m).map_err(|e| Error::Usage(e.to_string()))?;

    std::fs::create_dir_all(&job.out_dir).map_err(Error::io(&job.out_dir))?;
    let artifacts = Artifacts::in_dir(&job.out_dir);
    let manifest = RunManifest {
        model_path: job.model_path.clone(),
        model_digest: model.digest.clone(),
        data_dir: job.data_dir.clone(),
        labeled: m,
        unlabeled: n,
        rho: trainer.rho()?,
        alpha: trainer.alpha(),
        config,
        seeds: Seeds {
            init: config.seed,
            split: config.seed,
            train: config.seed,
        },
        artifacts: artifacts.clone(),
    };
    manifest.save(&artifacts.manifest)?;
    log::info!(
        "N = {n}, M = {m}, rho = {:.6}, alpha = {:.4}",
        manifest.rho,
        manifest.alpha
    );

    let mut log = MetricsWriter::create(&artifacts.metrics)?;
    let mut metrics = Vec::new();
    let mut last_error = None;
    let digest = model.file.digest();
    let save = |trainer: &Trainer, epoch: usize| {
        Checkpoint {
            digest,
            epoch: epoch as u64,
            names: trainer.params.names().to_vec(),
            params: trainer.params.tensors().to_vec(),
            adam: trainer.adam.clone(),
        }
        .save(&artifacts.checkpoint)
    };
    save(&trainer, 0)?;
    let start = Instant::now();
    for epoch in 0..config.epochs {
        let em = trainer.train_epoch(&split.supervised, &split.unsupervised, epoch)?;
        let evaluate = config.eval_every > 0 && ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs);
        let err = if evaluate && trainer.binding().label.is_some() {
            Some(test_error(
                &trainer.plan,
                trainer.params.tensors(),
                &data.test,
                config.seed,
            )?)
        } else {
            None
        };
        last_error = err.or(last_error);
        let row = MetricsRow {
            epoch,
            step: em.step,
            objective: em.objective,
            sup_term: em.sup_term,
            unsup_term: em.unsup_term,
            test_error: err,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: objective {:.3} (sup {:.3}, unsup {:.3}){} {:.0}s",
            row.objective,
            row.sup_term,
            row.unsup_term,
            err.map(|e| format!(", test error {e:.4}")).unwrap_or_default(),
            row.seconds
        );
        log.write(&row)?;
        metrics.push(row);
        save(&trainer, epoch + 1)?;
    }
    Ok(TrainOutcome {
        manifest,
        metrics,
        test_error: last_error,
        params: trainer.params.tensors().to_vec(),
        plan: trainer.plan,
    })
}

/// Loads a checkpoint for the model at `model_path`, checking the digest
/// and every parameter shape.
pub fn load_trained(model_path: &Path, checkpoint: &Path) -> Result<(LoadedModel, ExecutionPlan, Vec<Tensor>)> {
    let model = spec_file::load(model_path)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.check_digest(&model.digest)?;
    let (plan, store) = compile(&model.graph, 0)?;
    if ckpt.names.as_slice() != store.names() {
        return Err(Error::Checkpoint("parameter names do not match the model".into()));
    }
    for (a, b) in ckpt.params.iter().zip(store.tensors()) {
        if a.shape() != b.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter shape {:?} where the model needs {:?}",
                a.shape(),
                b.shape()
            )));
        }
    }
    Ok((model, plan, ckpt.params))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub test_error: f64,
    /// Binomial standard error.
    pub stderr: f64,
    pub points: usize,
}

pub fn evaluate(model_path: &Path, checkpoint: &Path, data_dir: &Path, seed: u64) -> Result<Evaluation> {
    let (_, plan, params) = load_trained(model_path, checkpoint)?;
    let data = mnist::load(data_dir)?;
    check_binding(&plan, &data.test)?;
    let e = test_error(&plan, &params, &data.test, seed)?;
    let n = data.test.len();
    Ok(Evaluation {
        test_error: e,
        stderr: (e * (1.0 - e) / n as f64).sqrt(),
        points: n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum GenerateMode {
    /// Rows of test images, each followed by one rendering per class.
    Analogy { indices: Vec<usize> },
    /// A fixed label over a square grid of two-dimensional styles.
    StyleSweep { label: usize, grid: usize, extent: f64 },
}

pub fn generate(model_path: &Path, checkpoint: &Path, data_dir: Option<&Path>, mode: &GenerateMode) -> Result<Grid> {
    let (_, plan, params) = load_trained(model_path, checkpoint)?;
    match mode {
        GenerateMode::Analogy { indices } => {
            let dir = data_dir.ok_or_else(|| Error::Usage("analogies need a data directory".into()))?;
            let data = mnist::load(dir)?;
            check_binding(&plan, &data.test)?;
            if let Some(&bad) = indices.iter().find(|&&i| i >= data.test.len()) {
                return Err(Error::Usage(format!(
                    "index {bad} outside the {} test images",
                    data.test.len()
                )));
            }
            if indices.is_empty() {
                return Err(Error::Usage("no input indices given".into()));
            }
            generate::analogy_grid(&plan, &params, &data.test.features.select_rows(indices))
        }
        GenerateMode::StyleSweep { label, grid, extent } => {
            generate::style_sweep(&plan, &params, *label, *grid, *extent)
        }
    }
}
