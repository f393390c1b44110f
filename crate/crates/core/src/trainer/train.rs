use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamWConfig, OptimizerState};
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use crate::autodiff::{sigmoid, Graph, Tensor};
use crate::data::{augment, Label, Manifest, Modality, Task, WindowSample};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_folds, ccc_multi, f1_binary, FoldReport};
use crate::model::{forward, objective, Batch, ModelConfig, ModelParams};

const EVAL_BATCH: usize = 64;

// Independent ChaCha streams of the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub best_metric: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub score: f64,
    pub fold: u32,
    pub n: usize,
}

/// Raw head outputs, one row per sample, in input order.
pub fn predict(
    params: &ModelParams,
    cfg: &ModelConfig,
    samples: &[WindowSample],
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs, cfg.task)?;
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let fwd = forward(&mut g, cfg, &vars, &batch)?;
        let o = g.value(fwd.out);
        out.extend((0..o.rows()).map(|r| o.row_slice(r).to_vec()));
    }
    Ok(out)
}

/// F1 of `σ(logit) >= threshold` for classification, mean valence/arousal
/// CCC for regression.
pub fn score(
    params: &ModelParams,
    cfg: &ModelConfig,
    samples: &[WindowSample],
    threshold: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("cannot score an empty split".into()));
    }
    let outputs = predict(params, cfg, samples)?;
    match cfg.task {
        Task::Classification => {
            let probs: Vec<f64> = outputs.iter().map(|o| sigmoid(o[0])).collect();
            let labels = samples
                .iter()
                .map(|s| match s.label {
                    Label::Class(c) => Ok(c),
                    Label::Va(_) => Err(Error::Config(
                        "regression label in a classification split".into(),
                    )),
                })
                .collect::<Result<Vec<u8>>>()?;
            f1_binary(&probs, &labels, threshold)
        }
        Task::Regression => {
            let targets = samples
                .iter()
                .map(|s| match s.label {
                    Label::Va(va) => Ok(va.to_vec()),
                    Label::Class(_) => {
                        Err(Error::Config("class label in a regression split".into()))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            ccc_multi(&outputs, &targets)
        }
    }
}

fn augment_sample<R: rand::Rng>(
    s: &WindowSample,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<WindowSample> {
    let mut out = s.clone();
    for m in Modality::ALL {
        *out.stream_mut(m) = augment(s.stream(m), cfg.sigma, cfg.mask_p, rng)?;
    }
    Ok(out)
}

/// Mean objective over `samples` and gradients of every parameter, in
/// `ModelParams::named_tensors` order.
pub fn loss_and_grads(
    params: &ModelParams,
    cfg: &TrainConfig,
    samples: &[&WindowSample],
) -> Result<(f64, Vec<Tensor>)> {
    let batch = Batch::from_samples(samples, cfg.model.task)?;
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let fwd = forward(&mut g, &cfg.model, &vars, &batch)?;
    let loss = objective(&mut g, &cfg.model, &cfg.loss, &vars, &fwd, &batch)?;
    g.backward(loss)?;
    let grads = vars.vars().into_iter().map(|v| g.grad(v)).collect();
    Ok((g.value(loss).item()?, grads))
}

/// Trains on explicit splits with early stopping on the validation metric
/// and returns the best-scoring parameters.
pub fn train_on(
    cfg: &TrainConfig,
    train: &[WindowSample],
    val: &[WindowSample],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "train and validation splits must be nonempty (got {} / {})",
            train.len(),
            val.len()
        )));
    }
    let mut params = ModelParams::init(&cfg.model, &mut seeded(cfg.seed, STREAM_INIT))?;
    let mut shuffle_rng = seeded(cfg.seed, STREAM_SHUFFLE);
    let mut aug_rng = seeded(cfg.seed, STREAM_AUGMENT);
    let adam = AdamWConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
        weight_decay: cfg.weight_decay,
    };
    let mut state = OptimizerState::new(params.named_tensors().into_iter().map(|(_, t)| t));

    let mut best = Checkpoint {
        config: cfg.clone(),
        params: params.clone(),
        epoch: 0,
        best_score: f64::NEG_INFINITY,
    };
    let mut log = Vec::new();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (step, idx) in order.chunks(cfg.batch).enumerate() {
            let augmented: Vec<WindowSample>;
            let refs: Vec<&WindowSample> = if cfg.augment {
                augmented = idx
                    .iter()
                    .map(|&i| augment_sample(&train[i], cfg, &mut aug_rng))
                    .collect::<Result<_>>()?;
                augmented.iter().collect()
            } else {
                idx.iter().map(|&i| &train[i]).collect()
            };
            let (loss, grads) = loss_and_grads(&params, cfg, &refs).map_err(|e| match e {
                Error::NonFinite(what) => Error::Data(format!(
                    "training diverged at epoch {epoch}, step {step}: {what}"
                )),
                other => other,
            })?;
            loss_sum += loss * refs.len() as f64;
            adamw_step(&mut params.tensors_mut(), &grads, &mut state, &adam)?;
        }
        let val_metric = score(&params, &cfg.model, val, cfg.threshold)?;
        let improved = val_metric > best.best_score;
        if improved {
            best.params = params.clone();
            best.epoch = epoch;
            best.best_score = val_metric;
            stale = 0;
        } else {
            stale += 1;
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_metric,
            best_metric: best.best_score,
            improved,
        });
        if stale >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        checkpoint: best,
        log,
    })
}

/// Loads the manifest's windows, holding out `cfg.val_fold`.
pub fn split_windows(
    cfg: &TrainConfig,
    manifest: &Manifest,
) -> Result<(Vec<WindowSample>, Vec<WindowSample>)> {
    manifest.check_task(cfg.model.task)?;
    let train = manifest.load_windows(|f| f != cfg.val_fold, cfg.stride)?;
    let val = manifest.load_windows(|f| f == cfg.val_fold, cfg.stride)?;
    Ok((train, val))
}

pub fn train(cfg: &TrainConfig, manifest: &Manifest) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (tr, va) = split_windows(cfg, manifest)?;
    train_on(cfg, &tr, &va)
}

/// Scores a checkpoint on one fold of a manifest.
pub fn evaluate(ckpt: &Checkpoint, manifest: &Manifest, fold: u32) -> Result<EvalReport> {
    let cfg = &ckpt.config;
    manifest.check_task(cfg.model.task)?;
    let samples = manifest.load_windows(|f| f == fold, cfg.stride)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("fold {fold} has no clips")));
    }
    Ok(EvalReport {
        metric: cfg.model.task.metric_name().to_string(),
        score: score(&ckpt.params, &cfg.model, &samples, cfg.threshold)?,
        fold,
        n: samples.len(),
    })
}

/// Trains once per held-out fold and aggregates the five validation scores.
pub fn cross_validate(
    cfg: &TrainConfig,
    manifest: &Manifest,
) -> Result<(FoldReport, Vec<TrainOutcome>)> {
    let mut scores = Vec::new();
    let mut outcomes = Vec::new();
    for fold in 1..=crate::data::manifest::NUM_FOLDS {
        let fold_cfg = TrainConfig {
            val_fold: fold,
            ..cfg.clone()
        };
        let outcome = train(&fold_cfg, manifest)?;
        scores.push(evaluate(&outcome.checkpoint, manifest, fold)?.score);
        outcomes.push(outcome);
    }
    Ok((
        aggregate_folds(&scores, cfg.model.task.metric_name())?,
        outcomes,
    ))
}
