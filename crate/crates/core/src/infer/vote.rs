use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::FbankMatrix;
use crate::error::{Error, Result};
use crate::linalg::softmax;
use crate::par;
use crate::ssm::{backbone_forward, ModelParams};

/// Class probabilities of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    pub start: f64,
    pub end: f64,
    pub probs: Vec<f64>,
    pub peak: f64,
}

impl SegmentPrediction {
    pub fn new(start: f64, end: f64, probs: Vec<f64>) -> Self {
        let peak = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            start,
            end,
            probs,
            peak,
        }
    }
}

/// Softmax of the backbone logits for each `(start, end, features)` segment,
/// order preserved.
pub fn segment_probs(segments: &[(f64, f64, FbankMatrix)], model: &ModelParams) -> Result<Vec<SegmentPrediction>> {
    par::try_map(segments, |(start, end, f)| {
        let logits = backbone_forward(f, model)?;
        Ok(SegmentPrediction::new(*start, *end, softmax(&logits)))
    })
}

/// How many segments the recording-level vote keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TopK {
    K(usize),
    All,
}

impl TopK {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            TopK::K(k) => k.min(n),
            TopK::All => n,
        }
    }

    /// Validation grid for tuning, smallest first.
    pub fn grid() -> Vec<TopK> {
        vec![TopK::K(1), TopK::K(3), TopK::K(5), TopK::K(9), TopK::All]
    }
}

impl FromStr for TopK {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(TopK::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(TopK::K(k)),
            _ => Err(Error::InvalidInput(format!(
                "top-k must be a positive integer or 'all', got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for TopK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopK::K(k) => write!(f, "{k}"),
            TopK::All => f.write_str("all"),
        }
    }
}

impl From<TopK> for String {
    fn from(k: TopK) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for TopK {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Soft vote over the `k` segments with the highest peak probability. Ties in
/// peak go to the earlier segment. Returns the mean probability vector and
/// the indices of the selected segments.
pub fn selective_vote(preds: &[SegmentPrediction], k: TopK) -> Result<(Vec<f64>, Vec<usize>)> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("no segment predictions to vote over".into()));
    }
    if k == TopK::K(0) {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let classes = preds[0].probs.len();
    if preds.iter().any(|p| p.probs.len() != classes) {
        return Err(Error::Shape("segment predictions differ in class count".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .peak
            .total_cmp(&preds[a].peak)
            .then(preds[a].start.total_cmp(&preds[b].start))
            .then(a.cmp(&b))
    });
    order.truncate(k.resolve(preds.len()));
    // Sum in time order so the result does not depend on input order.
    let mut by_time = order.clone();
    by_time.sort_by(|&a, &b| preds[a].start.total_cmp(&preds[b].start).then(a.cmp(&b)));
    let mut mean = vec![0.0; classes];
    for &i in &by_time {
        for (m, p) in mean.iter_mut().zip(&preds[i].probs) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= order.len() as f64);
    Ok((mean, order))
}

/// (normal, MCI, dementia) → (normal, impaired).
pub fn merge_3to2(p3: &[f64]) -> Result<[f64; 2]> {
    match p3 {
        [n, m, d] => Ok([*n, m + d]),
        _ => Err(Error::Shape(format!("expected 3 probabilities, got {}", p3.len()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(start: f64, probs: &[f64]) -> SegmentPrediction {
        SegmentPrediction::new(start, start + 1.0, probs.to_vec())
    }

    #[test]
    fn top_two_of_three() {
        let preds = [pred(0.0, &[0.1, 0.9]), pred(1.0, &[0.6, 0.4]), pred(2.0, &[0.7, 0.3])];
        let (p, sel) = selective_vote(&preds, TopK::K(2)).unwrap();
        assert_eq!(sel, vec![0, 2]);
        assert!((p[0] - 0.4).abs() < 1e-15 && (p[1] - 0.6).abs() < 1e-15);
        let (p1, _) = selective_vote(&preds, TopK::K(1)).unwrap();
        assert_eq!(p1, vec![0.1, 0.9]);
    }

    #[test]
    fn ties_prefer_earlier_segments() {
        let preds = [pred(5.0, &[0.8, 0.2]), pred(1.0, &[0.2, 0.8])];
        assert_eq!(selective_vote(&preds, TopK::K(1)).unwrap().1, vec![1]);
    }

    #[test]
    fn merge_conserves_mass() {
        assert_eq!(merge_3to2(&[0.5, 0.2, 0.3]).unwrap(), [0.5, 0.5]);
        assert_eq!(merge_3to2(&[1.0, 0.0, 0.0]).unwrap(), [1.0, 0.0]);
        assert!(merge_3to2(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn top_k_parsing() {
        assert_eq!("all".parse::<TopK>().unwrap(), TopK::All);
        assert_eq!("3".parse::<TopK>().unwrap(), TopK::K(3));
        assert!("0".parse::<TopK>().is_err());
        assert_eq!(serde_json::to_string(&TopK::K(5)).unwrap(), "\"5\"");
    }

    #[test]
    fn empty_vote_is_an_error() {
        assert!(selective_vote(&[], TopK::All).is_err());
    }
}
