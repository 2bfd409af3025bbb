use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub recording_id: String,
    /// Class-probability vector.
    pub probs: Vec<f64>,
    pub label: usize,
}

/// Area under the ROC curve via the rank-sum statistic: the probability that
/// a random positive outscores a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("AUC scores"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based average ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg_rank * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Mean over classes of the one-vs-rest AUC of that class's probability.
pub fn macro_ovr_auc(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape("probabilities and labels differ in length".into()));
    }
    if probs.iter().any(|p| p.len() != classes) {
        return Err(Error::Shape(format!("expected {classes}-class probability vectors")));
    }
    let mut total = 0.0;
    for c in 0..classes {
        if !labels.contains(&c) {
            return Err(Error::DegenerateLabels(format!("class {c} missing")));
        }
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        total += roc_auc(&scores, &pos)?;
    }
    Ok(total / classes as f64)
}

/// Recording-level AUC: for two classes the score is the impaired-class
/// probability, otherwise macro one-vs-rest.
pub fn recording_auc(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let classes = probs.first().map_or(0, |p| p.len());
    if classes == 2 {
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        roc_auc(&scores, &pos)
    } else {
        macro_ovr_auc(probs, labels, classes)
    }
}

pub fn examples_auc(examples: &[ScoredExample]) -> Result<f64> {
    let probs: Vec<Vec<f64>> = examples.iter().map(|e| e.probs.clone()).collect();
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    recording_auc(&probs, &labels)
}
