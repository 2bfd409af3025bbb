//! Transcript text branch: prompt construction, a built-in bag-of-words
//! classifier and an adapter for external completion models.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::vote::{selective_vote, SegmentPrediction, TopK};
use crate::error::{Error, Result};
use crate::linalg::softmax;
use crate::manifest::ManifestEntry;
use crate::segment::{assign_roles, oracle_diarize, Role, SpeakerTurn};
use crate::ssm::{ParamSet, Tensor};
use crate::train::{adam_step, AdamState, OptimConfig};

pub const TASK_DESCRIPTION: &str =
    "You are a helpful assistant that classifies if a participant in an interview has dementia";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub role: Role,
    pub text: String,
}

/// Time-ordered role-labelled transcript.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub lines: Vec<TranscriptLine>,
}

impl Transcript {
    /// `Role: text` lines.
    pub fn render(&self) -> Vec<String> {
        self.lines
            .iter()
            .map(|l| format!("{}: {}", l.role.label().unwrap_or("Unknown"), l.text))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Consecutive windows of at most `lines` lines.
    pub fn windows(&self, lines: usize) -> Vec<Transcript> {
        self.lines
            .chunks(lines.max(1))
            .map(|c| Transcript { lines: c.to_vec() })
            .collect()
    }
}

/// Pairs turns (with assigned roles) and their texts into a transcript.
pub fn build_transcript(turns: &[SpeakerTurn], texts: &[String]) -> Result<Transcript> {
    if turns.len() != texts.len() {
        return Err(Error::Shape(format!("{} turns but {} texts", turns.len(), texts.len())));
    }
    let mut order: Vec<usize> = (0..turns.len()).collect();
    order.sort_by(|&a, &b| turns[a].start.total_cmp(&turns[b].start).then(a.cmp(&b)));
    let lines = order
        .into_iter()
        .map(|i| {
            if turns[i].role == Role::Unassigned {
                return Err(Error::InvalidInput(format!(
                    "turn at {}s of speaker {} has no role",
                    turns[i].start, turns[i].speaker_id
                )));
            }
            Ok(TranscriptLine {
                role: turns[i].role,
                text: texts[i].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Transcript { lines })
}

/// Transcript of an annotated manifest entry.
pub fn transcript_for_entry(entry: &ManifestEntry) -> Result<Transcript> {
    let turns = assign_roles(&oracle_diarize(entry)?);
    let texts: Vec<String> = entry.turns.iter().flatten().map(|t| t.text.clone()).collect();
    build_transcript(&turns, &texts)
}

/// Task description, transcript lines, label set, then `Answer:`.
pub fn build_prompt(t: &Transcript, labels: &[&str]) -> String {
    let mut parts = vec![TASK_DESCRIPTION.to_string()];
    parts.extend(t.render());
    parts.push(labels.join(", "));
    parts.push("Answer:".to_string());
    parts.join("\n")
}

/// Anything that maps a transcript to class probabilities.
pub trait TextClassifier {
    fn predict(&self, t: &Transcript, labels: &[&str]) -> Result<Vec<f64>>;
}

/// Lower-cased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BowConfig {
    /// Transcript lines per text segment.
    pub lines_per_segment: usize,
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
    /// Recording-level vote over text segments.
    pub top_k: TopK,
}

impl Default for BowConfig {
    fn default() -> Self {
        Self {
            lines_per_segment: 8,
            iterations: 300,
            lr: 0.05,
            l2: 1e-4,
            top_k: TopK::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BowWeights(Tensor);

impl ParamSet for BowWeights {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.0]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.0]
    }
}

/// Multinomial logistic regression over relative token frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowClassifier {
    vocab: BTreeMap<String, usize>,
    classes: usize,
    /// (vocab + 1) × classes; the last row is the bias.
    weights: Vec<f64>,
    config: BowConfig,
}

impl BowClassifier {
    fn features(&self, t: &Transcript) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        let mut total = 0.0;
        for line in &t.lines {
            for tok in tokenize(&line.text) {
                total += 1.0;
                if let Some(&i) = self.vocab.get(&tok) {
                    *counts.entry(i).or_default() += 1.0;
                }
            }
        }
        let mut x: Vec<(usize, f64)> = counts.into_iter().map(|(i, c)| (i, c / total)).collect();
        x.push((self.vocab.len(), 1.0));
        x
    }

    fn logits(w: &[f64], x: &[(usize, f64)], classes: usize) -> Vec<f64> {
        let mut z = vec![0.0; classes];
        for &(i, v) in x {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += v * w[i * classes + c];
            }
        }
        z
    }

    /// Fits on text segments of labelled transcripts.
    pub fn fit(data: &[(Transcript, usize)], classes: usize, config: BowConfig) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidInput("need at least two classes".into()));
        }
        if let Some((_, l)) = data.iter().find(|(_, l)| *l >= classes) {
            return Err(Error::InvalidInput(format!("label {l} out of range")));
        }
        let mut vocab = BTreeMap::new();
        for (t, _) in data {
            for line in &t.lines {
                for tok in tokenize(&line.text) {
                    vocab.entry(tok).or_insert(0usize);
                }
            }
        }
        for (i, v) in vocab.values_mut().enumerate() {
            *v = i;
        }
        let mut model = Self {
            weights: vec![0.0; (vocab.len() + 1) * classes],
            vocab,
            classes,
            config,
        };
        let samples: Vec<(Vec<(usize, f64)>, usize)> = data
            .iter()
            .flat_map(|(t, l)| {
                t.windows(model.config.lines_per_segment)
                    .into_iter()
                    .filter(|w| w.lines.iter().any(|l| !tokenize(&l.text).is_empty()))
                    .map(|w| (model.features(&w), *l))
                    .collect::<Vec<_>>()
            })
            .collect();
        if samples.is_empty() {
            return Err(Error::InvalidInput(
                "no non-empty transcript segments to train on".into(),
            ));
        }

        let rows = model.vocab.len() + 1;
        let mut params = BowWeights(Tensor::zeros(&[rows, classes]));
        let mut state = AdamState::new(&params);
        let optim = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let n = samples.len() as f64;
        for _ in 0..model.config.iterations {
            let mut grad = params.zeroed();
            {
                let w = params.0.data();
                let g = grad.0.data_mut();
                for (x, label) in &samples {
                    let mut p = softmax(&Self::logits(w, x, classes));
                    p[*label] -= 1.0;
                    for &(i, v) in x {
                        for c in 0..classes {
                            g[i * classes + c] += v * p[c] / n;
                        }
                    }
                }
                for (gi, wi) in g.iter_mut().zip(w) {
                    *gi += model.config.l2 * wi;
                }
            }
            adam_step(&mut params, &grad, &mut state, model.config.lr, &optim);
        }
        model.weights = params.0.data().to_vec();
        Ok(model)
    }

    /// Fits on the transcripts of annotated manifest entries.
    pub fn fit_entries(entries: &[&ManifestEntry], classes: usize, config: BowConfig) -> Result<Self> {
        let data = entries
            .iter()
            .map(|e| Ok((transcript_for_entry(e)?, e.label)))
            .collect::<Result<Vec<_>>>()?;
        Self::fit(&data, classes, config)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Per-segment probabilities of a transcript's text windows.
    pub fn segment_probs(&self, t: &Transcript) -> Vec<SegmentPrediction> {
        t.windows(self.config.lines_per_segment)
            .iter()
            .enumerate()
            .filter(|(_, w)| w.lines.iter().any(|l| !tokenize(&l.text).is_empty()))
            .map(|(i, w)| {
                let p = softmax(&Self::logits(&self.weights, &self.features(w), self.classes));
                SegmentPrediction::new(i as f64, i as f64 + 1.0, p)
            })
            .collect()
    }
}

impl TextClassifier for BowClassifier {
    fn predict(&self, t: &Transcript, labels: &[&str]) -> Result<Vec<f64>> {
        if labels.len() != self.classes {
            return Err(Error::Shape(format!(
                "classifier has {} classes, asked for {}",
                self.classes,
                labels.len()
            )));
        }
        let preds = self.segment_probs(t);
        if preds.is_empty() {
            return Ok(vec![1.0 / self.classes as f64; self.classes]);
        }
        Ok(selective_vote(&preds, self.config.top_k)?.0)
    }
}

/// A completion model that scores each candidate label's first token.
pub trait CompletionClient {
    /// Log-scores, one per label, for the prompt's continuation.
    fn label_scores(&self, prompt: &str, labels: &[&str]) -> Result<Vec<f64>>;
}

/// Scores via an external completion model and normalizes with a softmax.
#[derive(Debug, Clone)]
pub struct ExternalClassifier<C> {
    pub client: C,
}

impl<C: CompletionClient> TextClassifier for ExternalClassifier<C> {
    fn predict(&self, t: &Transcript, labels: &[&str]) -> Result<Vec<f64>> {
        let scores = self.client.label_scores(&build_prompt(t, labels), labels)?;
        if scores.len() != labels.len() {
            return Err(Error::External(format!(
                "{} scores returned for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::External("non-finite label score".into()));
        }
        Ok(softmax(&scores))
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    labels: &'a [&'a str],
}

#[derive(Deserialize)]
struct CompletionResponse {
    scores: Vec<f64>,
}

/// Runs a command per request: JSON `{prompt, labels}` on stdin, JSON
/// `{scores}` expected on stdout.
#[derive(Debug, Clone)]
pub struct CommandClient {
    pub program: String,
    pub args: Vec<String>,
}

impl CompletionClient for CommandClient {
    fn label_scores(&self, prompt: &str, labels: &[&str]) -> Result<Vec<f64>> {
        let external = |msg: String| Error::External(format!("{}: {msg}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| external(e.to_string()))?;
        let body = serde_json::to_vec(&CompletionRequest { prompt, labels })?;
        child
            .stdin
            .take()
            .expect("stdin piped")
            .write_all(&body)
            .map_err(|e| external(e.to_string()))?;
        let out = child.wait_with_output().map_err(|e| external(e.to_string()))?;
        if !out.status.success() {
            return Err(external(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let resp: CompletionResponse =
            serde_json::from_slice(&out.stdout).map_err(|e| external(format!("bad response: {e}")))?;
        Ok(resp.scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(start: f64, end: f64, who: &str, role: Role) -> SpeakerTurn {
        SpeakerTurn {
            role,
            ..SpeakerTurn::new(start, end, who)
        }
    }

    #[test]
    fn transcript_lines_follow_time_and_roles() {
        let turns = [
            turn(3.0, 4.0, "B", Role::Participant),
            turn(0.0, 2.0, "A", Role::Interviewer),
        ];
        let t = build_transcript(&turns, &["".into(), "hello there".into()]).unwrap();
        assert_eq!(t.render(), vec!["Interviewer: hello there", "Participant: "]);
        let unassigned = [turn(0.0, 1.0, "A", Role::Unassigned)];
        assert!(build_transcript(&unassigned, &["x".into()]).is_err());
    }

    #[test]
    fn prompt_layout() {
        let t = Transcript {
            lines: vec![TranscriptLine {
                role: Role::Participant,
                text: "uh the boy".into(),
            }],
        };
        let p = build_prompt(&t, &["normal", "dementia"]);
        assert_eq!(
            p,
            format!("{TASK_DESCRIPTION}\nParticipant: uh the boy\nnormal, dementia\nAnswer:")
        );
        let empty = build_prompt(&Transcript::default(), &["normal", "MCI", "dementia"]);
        assert_eq!(empty, format!("{TASK_DESCRIPTION}\nnormal, MCI, dementia\nAnswer:"));
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Uh, the Boy's jar."), vec!["uh", "the", "boy's", "jar"]);
    }

    struct Fixed(Vec<f64>);

    impl CompletionClient for Fixed {
        fn label_scores(&self, _: &str, _: &[&str]) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn external_scores_are_normalized() {
        let c = ExternalClassifier {
            client: Fixed(vec![0.9f64.ln(), 0.1f64.ln()]),
        };
        let p = c.predict(&Transcript::default(), &["normal", "dementia"]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-12 && (p[1] - 0.1).abs() < 1e-12);
        let bad = ExternalClassifier {
            client: Fixed(vec![0.0]),
        };
        assert!(bad.predict(&Transcript::default(), &["a", "b"]).is_err());
    }
}
