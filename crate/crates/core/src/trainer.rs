//! Teacher-forced training, validation and best-model selection.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use uniconv_numcore::{AdamConfig, AdamState, Graph, ParamGrads, Precision};

use crate::checkpoint::Checkpoint;
use crate::config::{Config, TaskMode};
use crate::corpus::{Dataset, Dialogue};
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::model::{Example, LossParts, Provenance, UniConv};

/// `peak · min(step / warmup, sqrt(warmup / step))`, constant without warmup.
pub fn lr_at(step: usize, peak: f64, warmup: usize) -> f64 {
    if warmup == 0 {
        return peak;
    }
    let s = step.max(1) as f64;
    let w = warmup as f64;
    peak * (s / w).min((w / s).sqrt())
}

/// Teacher-forced examples of every turn of `dialogues`.
pub fn examples(model: &UniConv, dialogues: &[Dialogue], kb: &KnowledgeBase) -> Result<Vec<Example>> {
    dialogues.iter().flat_map(|d| d.turns.iter()).map(|t| model.example(t, kb)).collect()
}

/// Marks every parameter that receives no gradient in `mode` as frozen, so
/// the optimizer only tracks what the loss touches.
pub fn freeze_unused(model: &mut UniConv, mode: TaskMode, probe: &Example) -> Result<Vec<String>> {
    for p in model.store.iter_mut() {
        p.trainable = true;
    }
    let mut g = Graph::with_precision(Precision::F64);
    let (loss, _) = model.loss(&mut g, probe, mode, 0.0, 0.0)?;
    let grads = g.backward(loss)?;
    let mut frozen = Vec::new();
    for (id, p) in model.store.iter() {
        if grads.get(id).is_none() {
            frozen.push((id, p.name.clone()));
        }
    }
    for (id, _) in &frozen {
        model.store.get_mut(*id).trainable = false;
    }
    Ok(frozen.into_iter().map(|(_, n)| n).collect())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tval_loss\tlr\tseconds";

    pub fn line(&self) -> String {
        let val = self.val_loss.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        format!("{}\t{:.6}\t{val}\t{:.3e}\t{:.2}", self.epoch, self.train_loss, self.lr, self.seconds)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model after the last epoch.
    pub model: UniConv,
    /// Model with the lowest validation loss (training loss when there is no
    /// validation split).
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Mean teacher-forced loss per turn, without dropout or updates.
pub fn validate(model: &UniConv, examples: &[Example], mode: TaskMode, smoothing: f64) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let losses: Vec<Result<f64>> = examples
        .par_iter()
        .map(|e| {
            let mut g = Graph::new();
            let (_, parts) = model.loss(&mut g, e, mode, smoothing, 0.0)?;
            Ok(parts.total())
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / examples.len() as f64)
}

fn nan_report(batch: &[&Example], parts: &[Option<LossParts>], cause: &str, dump: Option<&Path>) -> Error {
    let mut msg = format!("non-finite loss ({cause}) in batch of {} turns:", batch.len());
    for (e, p) in batch.iter().zip(parts) {
        let _ = write!(msg, " {}#{}", e.dialogue_id, e.turn);
        if let Some(p) = p {
            let _ = write!(msg, "[inf {} req {} res {} act {}]", p.inform, p.request, p.response, p.act);
        }
    }
    if let Some(path) = dump {
        let records: Vec<serde_json::Value> = batch
            .iter()
            .map(|e| {
                serde_json::json!({
                    "dialogue": e.dialogue_id,
                    "turn": e.turn,
                    "ctx": e.input.ctx,
                    "utt": e.input.utt,
                    "prev_state": e.input.prev_state,
                    "response": e.input.response,
                })
            })
            .collect();
        if fs::write(path, serde_json::to_string_pretty(&records).unwrap_or_default()).is_ok() {
            let _ = write!(msg, "; batch dumped to {}", path.display());
        }
    }
    Error::Training(msg)
}

type EpochHook<'a> = dyn FnMut(&UniConv, &EpochLog) -> Result<bool> + 'a;

/// Trains a model on `ds` as configured. `on_epoch` sees the model after
/// every epoch and may stop training by returning `false`.
pub fn train(ds: &Dataset, config: &Config, on_epoch: &mut EpochHook<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let model = UniConv::for_dataset(config.model.clone(), ds, config.train.min_count, config.train.seed)?;
    train_model(model, ds, config, on_epoch)
}

/// Continues training an existing model.
pub fn train_model(mut model: UniConv, ds: &Dataset, config: &Config, on_epoch: &mut EpochHook<'_>) -> Result<TrainOutcome> {
    let tc = &config.train;
    let mode = tc.mode;
    let train_ex = examples(&model, &ds.corpus.train, &ds.kb)?;
    let val_ex = examples(&model, &ds.corpus.val, &ds.kb)?;
    if train_ex.is_empty() {
        return Err(Error::Training("training split is empty".into()));
    }
    let out_dir = config.paths.output.as_deref();
    if let Some(d) = out_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let log_path = out_dir.map(|d| d.join("train_log.tsv"));
    let dump_path = out_dir.map(|d| d.join("nonfinite_batch.json"));
    let frozen = freeze_unused(&mut model, mode, &train_ex[0]).map_err(|e| match e {
        Error::Num(n) => nan_report(&[&train_ex[0]], &[None], &n.to_string(), dump_path.as_deref()),
        other => other,
    })?;
    if !frozen.is_empty() {
        info!("{} parameter tensors unused in {mode} mode are frozen", frozen.len());
    }
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            lr: tc.lr,
            ..Default::default()
        },
    );
    let mut log_text = String::from(EpochLog::HEADER);
    log_text.push('\n');

    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut step = 0usize;
    let mut log = Vec::new();
    let mut best: Option<(f64, UniConv, usize)> = None;
    for epoch in 1..=tc.epochs {
        let started = Instant::now();
        let mut shuffle = ChaCha8Rng::seed_from_u64(tc.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let mut lr = tc.lr;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_ex[i]).collect();
            if let Some(e) = batch.iter().find(|e| e.input.provenance != Provenance::Gold) {
                return Err(Error::Contract(format!(
                    "{} turn {}: training input is not teacher-forced",
                    e.dialogue_id, e.turn
                )));
            }
            let results: Vec<Result<(ParamGrads, LossParts)>> = chunk
                .par_iter()
                .map(|&i| {
                    let seed = tc.seed.wrapping_mul(1_000_003) ^ ((epoch as u64) << 32) ^ i as u64;
                    let mut g = Graph::new().with_dropout_rng(ChaCha8Rng::seed_from_u64(seed));
                    let (loss, parts) = model.loss(&mut g, &train_ex[i], mode, tc.label_smoothing, model.config.dropout)?;
                    Ok((g.backward(loss)?, parts))
                })
                .collect();
            let mut parts = Vec::with_capacity(results.len());
            let mut grads = Vec::with_capacity(results.len());
            let mut failure = None;
            for r in results {
                match r {
                    Ok((g, p)) => {
                        parts.push(Some(p));
                        grads.push(g);
                    }
                    Err(e) => {
                        parts.push(None);
                        failure.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = failure {
                return Err(match e {
                    Error::Num(n) => nan_report(&batch, &parts, &n.to_string(), dump_path.as_deref()),
                    other => other,
                });
            }
            let batch_loss: f64 = parts.iter().flatten().map(LossParts::total).sum();
            if !batch_loss.is_finite() {
                return Err(nan_report(&batch, &parts, "loss", dump_path.as_deref()));
            }
            epoch_loss += batch_loss;
            model.store.zero_grads();
            let scale = 1.0 / grads.len() as f64;
            for g in &grads {
                model.store.accumulate(g, scale);
            }
            step += 1;
            lr = lr_at(step, tc.lr, tc.warmup);
            adam.step(&mut model.store, lr, Precision::F32)?;
        }
        let train_loss = epoch_loss / train_ex.len() as f64;
        let val_loss = if val_ex.is_empty() {
            None
        } else {
            Some(validate(&model, &val_ex, mode, tc.label_smoothing)?)
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        debug!("{}", entry.line());
        log_text.push_str(&entry.line());
        log_text.push('\n');
        if let Some(p) = &log_path {
            fs::write(p, &log_text).map_err(|e| Error::io(p, e))?;
        }
        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, model.clone(), epoch));
            if let Some(path) = &config.paths.checkpoint {
                checkpoint(ds, config, model.clone(), score, epoch, Some(adam.clone())).save(path)?;
            }
        }
        let go_on = on_epoch(&model, &entry)?;
        log.push(entry);
        if !go_on {
            break;
        }
    }
    let (score, best_model, epoch) = match best {
        Some(b) => b,
        None => (f64::INFINITY, model.clone(), 0),
    };
    Ok(TrainOutcome {
        best: checkpoint(ds, config, best_model, score, epoch, None),
        model,
        log,
    })
}

fn checkpoint(ds: &Dataset, config: &Config, model: UniConv, score: f64, epoch: usize, optimizer: Option<AdamState>) -> Checkpoint {
    Checkpoint {
        fingerprint: ds.fingerprint.clone(),
        config: config.clone(),
        model,
        best_val_loss: score.is_finite().then_some(score),
        epoch,
        optimizer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        assert_eq!(lr_at(5, 1e-3, 0), 1e-3);
        assert!((lr_at(100, 1.0, 100) - 1.0).abs() < 1e-12);
        assert!((lr_at(50, 1.0, 100) - 0.5).abs() < 1e-12);
        assert!((lr_at(400, 1.0, 100) - 0.5).abs() < 1e-12);
        let mut prev = lr_at(100, 1.0, 100);
        for s in 101..2000 {
            let l = lr_at(s, 1.0, 100);
            assert!(l <= prev);
            prev = l;
        }
        let eps = 1e-9;
        assert!((lr_at(100, 1.0, 100) - lr_at(101, 1.0, 100)).abs() < 0.01 + eps);
    }

    #[test]
    fn log_line_is_tab_delimited() {
        let l = EpochLog {
            epoch: 2,
            train_loss: 1.25,
            val_loss: None,
            lr: 1e-4,
            seconds: 0.5,
        };
        assert_eq!(l.line().split('\t').count(), EpochLog::HEADER.split('\t').count());
    }
}
