//! Minibatched Adam training with a held-out validation split and early
//! stopping on validation cross-entropy.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{crbm_cd_gradient, CrbmGradient, CrbmHead, CrbmInference, Head};
use crate::metrics::{self, MetricReport, RankedPrediction};
use crate::model::{Model, ModelGrads, ModelKind, ModelSpec};
use crate::numeric::{adam_step, AdamConfig, Matrix, SeededRng};
use crate::text::{build_vocab, load_embeddings, tokenize, Document, LabelVocab, TokenizedDoc};

/// Probabilities are clamped into `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

// Stream identifiers for derived RNGs.
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_CRBM_INIT: u64 = 5;
const STREAM_GIBBS: u64 = 6;

/// Mean binary cross-entropy over labels, `−(1/L) Σ [y log P + (1−y) log(1−P)]`.
pub fn cross_entropy(p: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), y.len());
    let l = p.len() as f64;
    -p.iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let pi = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln()
        })
        .sum::<f64>()
        / l
}

/// Gradient of [`cross_entropy`] w.r.t. the logits behind `p = σ(z)`.
pub fn cross_entropy_grad(p: &[f64], y: &[f64]) -> Vec<f64> {
    let l = p.len() as f64;
    p.iter().zip(y).map(|(pi, yi)| (pi - yi) / l).collect()
}

/// Seeded shuffle, then the last `⌈fraction · N⌉` items form the validation set.
pub fn validation_split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("validation fraction {fraction} not in (0, 1)")));
    }
    let n = items.len();
    let n_val = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "corpus of {n} documents is too small for a {fraction} validation split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::derive(seed, &[STREAM_SPLIT]).shuffle(&mut order);
    let train = order[..n - n_val].iter().map(|&i| items[i].clone()).collect();
    let val = order[n - n_val..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub minibatch: usize,
    pub dropout_keep: f64,
    pub val_fraction: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            minibatch: 50,
            dropout_keep: 0.5,
            val_fraction: 0.10,
            patience: 5,
            max_epochs: 100,
            seed: 0,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)");
        }
        if self.minibatch == 0 {
            return bad("minibatch must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad("dropout keep probability must be in (0, 1]");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Encoder and head trained jointly by backpropagation.
    Network,
    /// CRBM head trained on top of the frozen encoder.
    Crbm,
}

/// One line of the training history.
///
/// Wall time is kept in memory for logging but not serialized, so histories
/// from identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub stage: Stage,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_p_at_1: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochReport>,
    /// Epoch (1-based, within the final stage) whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Data-side inputs besides the corpus.
#[derive(Debug, Clone, Default)]
pub struct TrainInputs {
    pub embeddings: Option<PathBuf>,
    /// Fixed label vocabulary; derived from the corpus when absent.
    pub labels: Option<LabelVocab>,
}

/// Splits `corpus` into train/validation and trains.
pub fn train(corpus: &[Document], spec: &ModelSpec, cfg: &TrainConfig, inputs: &TrainInputs) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (tr, va) = validation_split(corpus, cfg.val_fraction, cfg.seed)?;
    let inputs = TrainInputs {
        embeddings: inputs.embeddings.clone(),
        labels: Some(match &inputs.labels {
            Some(l) => l.clone(),
            None => LabelVocab::from_corpus(corpus)?,
        }),
    };
    train_with_validation(&tr, &va, spec, cfg, &inputs)
}

/// Trains on `train_docs`, monitoring `val_docs` for early stopping.
pub fn train_with_validation(
    train_docs: &[Document],
    val_docs: &[Document],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    inputs: &TrainInputs,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_docs.is_empty() || val_docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let labels = match &inputs.labels {
        Some(l) => l.clone(),
        None => {
            let all: Vec<Document> = train_docs.iter().chain(val_docs).cloned().collect();
            LabelVocab::from_corpus(&all)?
        }
    };
    let train_tokens = train_docs
        .iter()
        .map(|d| tokenize(&d.text))
        .collect::<Result<Vec<_>>>()?;
    let vocab = build_vocab(train_tokens.iter().map(Vec::as_slice), cfg.min_count)?;

    let mut rng = SeededRng::derive(cfg.seed, &[STREAM_INIT]);
    let embedding = load_embeddings(inputs.embeddings.as_deref(), &vocab, spec.encoder.embed_dim, &mut rng)?;
    let network_spec = ModelSpec {
        kind: if spec.kind == ModelKind::Crbm {
            ModelKind::Logistic
        } else {
            spec.kind
        },
        ..spec.clone()
    };
    let mut model = Model::new(network_spec, vocab, labels, embedding, &mut rng)?;

    let prepare = |docs: &[Document], model: &Model| -> Result<(Vec<TokenizedDoc>, Vec<Vec<f64>>)> {
        let tds = docs.iter().map(|d| model.prepare(d)).collect::<Result<Vec<_>>>()?;
        let ys = tds.iter().map(|t| model.labels.indicator(&t.labels)).collect();
        Ok((tds, ys))
    };
    let (tr_docs, tr_y) = prepare(train_docs, &model)?;
    let (va_docs, va_y) = prepare(val_docs, &model)?;

    let mut outcome = train_network(&mut model, &tr_docs, &tr_y, &va_docs, &va_y, cfg)?;
    if spec.kind == ModelKind::Crbm {
        let crbm = train_crbm(&mut model, spec, &tr_docs, &tr_y, &va_docs, &va_y, cfg)?;
        outcome.history.extend(crbm.history);
        outcome.best_epoch = crbm.best_epoch;
        outcome.best_val_loss = crbm.best_val_loss;
    }
    model.spec = spec.clone();
    outcome.model = model;
    Ok(outcome)
}

struct StageResult {
    history: Vec<EpochReport>,
    best_epoch: usize,
    best_val_loss: f64,
}

fn validation_stats(preds: &[Vec<f64>], ys: &[Vec<f64>]) -> (f64, f64) {
    let loss = preds.iter().zip(ys).map(|(p, y)| cross_entropy(p, y)).sum::<f64>() / preds.len() as f64;
    let ranked: Vec<RankedPrediction> = preds
        .iter()
        .zip(ys)
        .filter(|(_, y)| y.iter().any(|&v| v > 0.5))
        .map(|(p, y)| RankedPrediction::new(p.clone(), y.iter().map(|&v| v > 0.5).collect()))
        .collect::<Result<_>>()
        .unwrap_or_default();
    let p1 = if ranked.is_empty() {
        0.0
    } else {
        ranked.iter().map(|r| metrics::precision_at_k(r, 1)).sum::<f64>() / ranked.len() as f64
    };
    (loss, p1)
}

fn train_network(
    model: &mut Model,
    docs: &[TokenizedDoc],
    ys: &[Vec<f64>],
    val_docs: &[TokenizedDoc],
    val_ys: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut grads = ModelGrads::new(model);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<Matrix>)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        SeededRng::derive(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]).shuffle(&mut order);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.minibatch).enumerate() {
            grads.clear();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut drng = SeededRng::derive(cfg.seed, &[STREAM_DROPOUT, epoch as u64, i as u64]);
                batch_loss += model.loss_and_grad(&docs[i], &ys[i], Some((&mut drng, cfg.dropout_keep)), &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            total += batch_loss;
            model
                .apply_adam(&grads, 1.0 / batch.len() as f64, &adam)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        let preds = val_docs.iter().map(|d| model.predict(d)).collect::<Result<Vec<_>>>()?;
        let (val_loss, val_p1) = validation_stats(&preds, val_ys);
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        history.push(EpochReport {
            epoch,
            stage: Stage::Network,
            train_loss: total / docs.len() as f64,
            val_loss,
            val_p_at_1: val_p1,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.snapshot()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, values) = best.ok_or_else(|| Error::Training("max_epochs is 0".into()))?;
    model.restore(&values);
    Ok(TrainOutcome {
        model: model.clone(),
        history,
        best_epoch,
        best_val_loss,
    })
}

fn train_crbm(
    model: &mut Model,
    spec: &ModelSpec,
    docs: &[TokenizedDoc],
    ys: &[Vec<f64>],
    val_docs: &[TokenizedDoc],
    val_ys: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<StageResult> {
    let xs: Vec<Vec<f64>> = docs.iter().map(|d| model.encode(d).x).collect();
    let val_xs: Vec<Vec<f64>> = val_docs.iter().map(|d| model.encode(d).x).collect();
    let l = model.labels.len();
    let mut rng = SeededRng::derive(cfg.seed, &[STREAM_CRBM_INIT]);
    let mut head = CrbmHead::new(l, model.encoder.output_dim(), spec.crbm_hidden.unwrap_or(l), &mut rng)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, CrbmHead)> = None;
    let mut stale = 0;
    let predict = |h: &CrbmHead, x: &[f64]| {
        Head::Crbm(h.clone()).predict(x, CrbmInference::MeanField, spec.meanfield_iters)
    };

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        SeededRng::derive(cfg.seed, &[STREAM_SHUFFLE, STREAM_CRBM_INIT, epoch as u64]).shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.minibatch) {
            let mut acc = CrbmGradient::zeros(&head);
            for &i in batch {
                total += cross_entropy(&crate::heads::crbm_meanfield_predict(&xs[i], &head, spec.meanfield_iters), &ys[i]);
                let mut g = SeededRng::derive(cfg.seed, &[STREAM_GIBBS, epoch as u64, i as u64]);
                acc.add_scaled(1.0, &crbm_cd_gradient(&xs[i], &ys[i], &head, spec.gibbs_steps, &mut g));
            }
            // Ascent on log-likelihood = descent on its negation.
            let scale = -1.0 / batch.len() as f64;
            for (p, g) in head.params_mut().into_iter().zip(acc.as_vec()) {
                for (d, s) in p.grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *d = scale * s;
                }
                adam_step(p, &adam).map_err(|e| Error::Training(format!("crbm epoch {epoch}: {e}")))?;
            }
        }
        let preds = val_xs.iter().map(|x| predict(&head, x)).collect::<Result<Vec<_>>>()?;
        let (val_loss, val_p1) = validation_stats(&preds, val_ys);
        if !val_loss.is_finite() || !total.is_finite() {
            return Err(Error::Training(format!("non-finite CRBM loss at epoch {epoch}")));
        }
        history.push(EpochReport {
            epoch,
            stage: Stage::Crbm,
            train_loss: total / docs.len() as f64,
            val_loss,
            val_p_at_1: val_p1,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, head.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, best_head) = best.ok_or_else(|| Error::Training("max_epochs is 0".into()))?;
    model.head = Head::Crbm(best_head);
    Ok(StageResult {
        history,
        best_epoch,
        best_val_loss,
    })
}

/// Marginals for every document of `corpus` (dropout off).
pub fn predict_corpus(model: &Model, corpus: &[Document]) -> Result<Vec<(TokenizedDoc, Vec<f64>)>> {
    corpus
        .iter()
        .map(|d| {
            let td = model.prepare(d)?;
            let p = model.predict(&td)?;
            Ok((td, p))
        })
        .collect()
}

/// P@{1,3,5}, N@{3,5} and macro AUC of `model` over `corpus`.
pub fn evaluate(model: &Model, corpus: &[Document]) -> Result<MetricReport> {
    let preds = predict_corpus(model, corpus)?
        .into_iter()
        .map(|(td, p)| RankedPrediction::from_label_ids(p, &td.labels))
        .collect::<Result<Vec<_>>>()?;
    Ok(metrics::report(&preds))
}
