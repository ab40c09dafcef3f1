//! Ranking metrics for multi-label prediction: P@k, nDCG@k and macro AUC.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores for every label of one document next to its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPrediction {
    pub scores: Vec<f64>,
    pub truth: Vec<bool>,
}

impl RankedPrediction {
    pub fn new(scores: Vec<f64>, truth: Vec<bool>) -> Result<Self> {
        if scores.len() != truth.len() {
            return Err(Error::Dimension {
                op: "RankedPrediction",
                left: (scores.len(), 1),
                right: (truth.len(), 1),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        Ok(Self { scores, truth })
    }

    pub fn from_label_ids(scores: Vec<f64>, labels: &[usize]) -> Result<Self> {
        let mut truth = vec![false; scores.len()];
        for &l in labels {
            *truth
                .get_mut(l)
                .ok_or_else(|| Error::InvalidArgument(format!("label id {l} out of range")))? = true;
        }
        Self::new(scores, truth)
    }

    pub fn positives(&self) -> usize {
        self.truth.iter().filter(|&&t| t).count()
    }
}

/// Descending by score, ties by ascending index.
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `min(k, L)` highest scores, best first.
pub fn rank_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    idx
}

/// True labels among the top `k`, divided by `k`.
pub fn precision_at_k(pred: &RankedPrediction, k: usize) -> f64 {
    assert!(k >= 1, "precision_at_k needs k >= 1");
    let hits = rank_k(&pred.scores, k).into_iter().filter(|&l| pred.truth[l]).count();
    hits as f64 / k as f64
}

/// Raw discounted gain over rank positions `1..=min(k, L)`, base-2 log.
pub fn dcg_at_k(pred: &RankedPrediction, k: usize) -> f64 {
    rank_k(&pred.scores, k)
        .into_iter()
        .enumerate()
        .filter(|&(_, l)| pred.truth[l])
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum()
}

/// DCG@k normalized by the ideal ranking's gain. Zero for documents without
/// true labels (those are excluded from corpus means).
pub fn ndcg_at_k(pred: &RankedPrediction, k: usize) -> f64 {
    assert!(k >= 1, "ndcg_at_k needs k >= 1");
    let ideal: f64 = (1..=k.min(pred.positives())).map(|r| 1.0 / ((r + 1) as f64).log2()).sum();
    if ideal == 0.0 {
        return 0.0;
    }
    dcg_at_k(pred, k) / ideal
}

/// Mann–Whitney AUC of one score column; `None` when either class is empty.
pub fn auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average 1-based ranks over tie groups.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        pos_rank_sum += avg_rank * order[i..j].iter().filter(|&&d| truth[d]).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-label AUCs (`None` for labels lacking positives or negatives).
pub fn per_label_auc(preds: &[RankedPrediction]) -> Vec<Option<f64>> {
    let l = preds.first().map_or(0, |p| p.scores.len());
    (0..l)
        .map(|label| {
            let scores: Vec<f64> = preds.iter().map(|p| p.scores[label]).collect();
            let truth: Vec<bool> = preds.iter().map(|p| p.truth[label]).collect();
            auc(&scores, &truth)
        })
        .collect()
}

/// Unweighted mean of per-label AUCs over labels that have both classes.
pub fn macro_auc(preds: &[RankedPrediction]) -> Result<f64> {
    let aucs: Vec<f64> = per_label_auc(preds).into_iter().flatten().collect();
    if aucs.is_empty() {
        return Err(Error::NoEvaluableLabel);
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Corpus-level report; serializes as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub p_at_1: f64,
    pub p_at_3: f64,
    pub p_at_5: f64,
    pub n_at_3: f64,
    pub n_at_5: f64,
    pub macro_auc: Option<f64>,
    pub per_label_auc: Vec<Option<f64>>,
}

/// Mean P@k / N@k over documents with at least one true label, plus macro AUC
/// over all documents. `macro_auc` is `None` when no label is evaluable.
pub fn report(preds: &[RankedPrediction]) -> MetricReport {
    let labelled: Vec<&RankedPrediction> = preds.iter().filter(|p| p.positives() > 0).collect();
    let mean = |f: &dyn Fn(&RankedPrediction) -> f64| {
        if labelled.is_empty() {
            0.0
        } else {
            labelled.iter().map(|p| f(p)).sum::<f64>() / labelled.len() as f64
        }
    };
    MetricReport {
        p_at_1: mean(&|p| precision_at_k(p, 1)),
        p_at_3: mean(&|p| precision_at_k(p, 3)),
        p_at_5: mean(&|p| precision_at_k(p, 5)),
        n_at_3: mean(&|p| ndcg_at_k(p, 3)),
        n_at_5: mean(&|p| ndcg_at_k(p, 5)),
        macro_auc: macro_auc(preds).ok(),
        per_label_auc: per_label_auc(preds),
    }
}
