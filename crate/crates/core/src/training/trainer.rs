use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sgd_step, Checkpoint, TrainConfig};
use crate::augment::{apply_specaugment, AugmentConfig};
use crate::autodiff::{Graph, ParamStore};
use crate::data::Example;
use crate::error::{LidError, Result};
use crate::features::FeatureSequence;
use crate::layers::ForwardCtx;
use crate::model::{Batch, LidModel};
use crate::sap::cross_entropy;
use crate::tensor::Tensor;

/// One optimizer step. `val_loss` is set on the last step of each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub epoch: usize,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Plateau,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<HistoryRow>,
    /// Parameters after the epoch with the lowest validation loss.
    pub best: Checkpoint,
    pub stop: StopReason,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean_loss: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// Per-utterance class probabilities.
    pub probabilities: Vec<Vec<f32>>,
}

impl EvalResult {
    pub fn accuracy(&self) -> f64 {
        let hits = self.predictions.iter().zip(&self.labels).filter(|(p, l)| p == l).count();
        hits as f64 / self.labels.len().max(1) as f64
    }

    /// `(true, predicted)` pairs for a confusion matrix.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.labels.iter().copied().zip(self.predictions.iter().copied()).collect()
    }
}

fn check_dataset(data: &[Example], name: &str, num_classes: usize) -> Result<()> {
    if data.is_empty() {
        return Err(LidError::Data {
            source_name: name.into(),
            line: 0,
            detail: "dataset is empty".into(),
        });
    }
    if let Some((i, e)) = data.iter().enumerate().find(|(_, e)| e.label >= num_classes) {
        return Err(LidError::Data {
            source_name: name.into(),
            line: i + 1,
            detail: format!("label index {} outside the {num_classes}-class set", e.label),
        });
    }
    Ok(())
}

/// Eval-mode forward over `data` in batches of `batch_size`: mean
/// cross-entropy and the argmax class of each utterance.
pub fn evaluate_model(model: &LidModel, store: &ParamStore, data: &[Example], batch_size: usize) -> Result<EvalResult> {
    check_dataset(data, "evaluation set", model.config.num_classes)?;
    let mut total = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    let mut probabilities = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let seqs: Vec<&FeatureSequence> = chunk.iter().map(|e| &e.features).collect();
        let batch = Batch::from_sequences(&seqs, chunk.iter().map(|e| e.label).collect())?;
        let mut g = Graph::with_params(store);
        let mut ctx = ForwardCtx::eval();
        let out = model.forward(&mut g, &batch.features, &batch.valid, &mut ctx)?;
        let logits = g.value(out.logits);
        let probs = crate::tensor::softmax_rows(logits, None)?;
        for (i, e) in chunk.iter().enumerate() {
            total += cross_entropy(&Tensor::from_vec(logits.row(i).to_vec()), e.label)? as f64;
            let p = probs.row(i);
            let best = p
                .iter()
                .enumerate()
                .fold(0, |b, (c, &v)| if v > p[b] { c } else { b });
            predictions.push(best);
            probabilities.push(p.to_vec());
        }
    }
    Ok(EvalResult {
        mean_loss: total / data.len() as f64,
        predictions,
        labels: data.iter().map(|e| e.label).collect(),
        probabilities,
    })
}

fn epoch_batches(train: &[Example], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    if !cfg.bucket_by_length {
        return order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
    }
    order.sort_by_key(|&i| train[i].features.num_frames());
    let mut batches: Vec<Vec<usize>> = order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

fn prepare(example: &Example, cfg: &TrainConfig, augment: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<FeatureSequence> {
    let frames = &example.features.frames;
    let t = frames.shape()[0];
    let cropped = match cfg.crop_frames {
        Some(c) if t > c => {
            let start = rng.gen_range(0..=t - c);
            let d = frames.shape()[1];
            Tensor::new(vec![c, d], frames.data()[start * d..(start + c) * d].to_vec())?
        }
        _ => frames.clone(),
    };
    FeatureSequence::new(apply_specaugment(&cropped, augment, rng)?)
}

/// Trains `store` in place and returns the per-step history together with
/// the best-validation checkpoint. `snapshot` is copied into every
/// checkpoint as the run configuration.
///
/// One ChaCha8 stream seeded from `cfg.seed` drives shuffling, cropping,
/// augmentation and dropout, in that order within each step, so a run is
/// reproducible bit for bit.
pub fn train_loop(
    model: &LidModel,
    store: &mut ParamStore,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    snapshot: &[(String, String)],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let k = model.config.num_classes;
    check_dataset(train, "training set", k)?;
    check_dataset(val, "validation set", k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut step = 0u64;
    let mut best: Option<Checkpoint> = None;
    let mut best_loss = f64::INFINITY;
    let mut wait = 0;
    let mut stop = StopReason::MaxEpochs;
    let mut epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        for indices in epoch_batches(train, cfg, &mut rng) {
            let seqs = indices
                .iter()
                .map(|&i| prepare(&train[i], cfg, augment, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&FeatureSequence> = seqs.iter().collect();
            let batch = Batch::from_sequences(&refs, indices.iter().map(|&i| train[i].label).collect())?;
            let lr = cfg.lr_at(step, train.len());

            let mut ctx = ForwardCtx::train(&mut rng);
            let (loss, grads) = {
                let mut g = Graph::with_params(&*store);
                let out = model.forward(&mut g, &batch.features, &batch.valid, &mut ctx)?;
                let loss = g.cross_entropy(out.logits, &batch.labels)?;
                let value = g.value(loss).item() as f64;
                if !value.is_finite() {
                    return Err(LidError::Numeric { step, value });
                }
                (value, g.backward(loss)?)
            };
            ctx.apply_stat_updates(store);
            store.zero_grads();
            store.accumulate(&grads)?;
            sgd_step(store, lr)?;
            debug!("step {step} lr {lr:.6} loss {loss:.6}");
            history.push(HistoryRow {
                step,
                lr,
                train_loss: loss,
                epoch,
                val_loss: None,
            });
            step += 1;
        }

        let val_loss = evaluate_model(model, store, val, cfg.batch_size)?.mean_loss;
        if !val_loss.is_finite() {
            return Err(LidError::Numeric { step, value: val_loss });
        }
        if let Some(last) = history.last_mut() {
            last.val_loss = Some(val_loss);
        }
        info!("epoch {epoch}: step {step}, validation loss {val_loss:.6}");
        if val_loss < best_loss - cfg.min_delta {
            best_loss = val_loss;
            wait = 0;
            let mut ckpt = Checkpoint::from_store(store);
            ckpt.step = step;
            ckpt.rng_seed = cfg.seed;
            ckpt.rng_word_pos = rng.get_word_pos();
            ckpt.best_val_loss = Some(val_loss);
            ckpt.config = snapshot.to_vec();
            best = Some(ckpt);
        } else {
            wait += 1;
            if wait >= cfg.patience {
                info!("validation loss has not improved for {wait} evaluations, stopping");
                stop = StopReason::Plateau;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        history,
        best: best.expect("the first evaluation always improves on infinity"),
        stop,
        epochs,
    })
}

/// `step,lr,train_loss,epoch,val_loss`; `val_loss` is empty on steps
/// without an evaluation.
pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut out = String::from("step,lr,train_loss,epoch,val_loss\n");
    for r in history {
        let _ = write!(out, "{},{:.4},{:.6},{},", r.step, r.lr, r.train_loss, r.epoch);
        if let Some(v) = r.val_loss {
            let _ = write!(out, "{v:.6}");
        }
        out.push('\n');
    }
    out
}
