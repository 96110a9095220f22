//! Detector scores for a single object mention.
//!
//! Every score is oriented so that a higher value means the mention is more
//! likely a hallucination. Logarithms are natural throughout.
//!
//! The attention detectors read one head-averaged row. The
//! mutual-information detectors compare the step-`k` distribution given the
//! real image against an image-free estimate obtained by averaging the
//! model's output over a fixed reference image set.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{Label, ObjectMention};
use crate::trace::{softmax_f32, LogitSlice, MarginalLogits, TokenRole, Trace, TraceError};

/// Floor applied to conditional probabilities inside the KL logarithm.
pub const KL_PROBABILITY_FLOOR: f64 = 1e-12;

/// Tolerance on the normalization of probability vectors passed to
/// [`entropy`].
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("no attention row for layer {layer} at position {position}")]
    MissingAttention { layer: u32, position: usize },
    #[error("no logit slice at position {position}")]
    MissingLogits { position: usize },
    #[error("no marginal logits at position {position}")]
    MissingMarginal { position: usize },
    #[error("marginal logits have no reference rows")]
    NoReferences,
    #[error("shape mismatch: marginal vocab {marginal}, conditional vocab {conditional}")]
    ShapeMismatch { marginal: usize, conditional: usize },
    #[error("token id {token} out of range for vocab size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("probability vector sums to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("probability vector has a negative or non-finite entry")]
    InvalidProbability,
    #[error("position {position} is not an output position")]
    NotOutput { position: usize },
    #[error("no detectors requested")]
    NoDetectors,
    #[error("detector `{detector}` scored zero mentions")]
    NothingScored { detector: Detector },
    #[error("unknown detector `{name}`; available: {available}")]
    UnknownDetector { name: String, available: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Registered detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    /// Prelim attention score.
    Pas,
    Nll,
    Entropy,
    /// Negated entropy-difference mutual information.
    MiEnt,
    /// Negated KL from the image-free estimate to the conditional.
    Kl,
    LogitDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requirement {
    Attention,
    Logits,
    Marginal,
}

impl Detector {
    pub const ALL: [Detector; 6] = [
        Detector::Pas,
        Detector::Nll,
        Detector::Entropy,
        Detector::MiEnt,
        Detector::Kl,
        Detector::LogitDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Pas => "pas",
            Detector::Nll => "nll",
            Detector::Entropy => "entropy",
            Detector::MiEnt => "mi_ent",
            Detector::Kl => "kl",
            Detector::LogitDiff => "logit_diff",
        }
    }

    pub fn requires(self) -> &'static [Requirement] {
        match self {
            Detector::Pas => &[Requirement::Attention],
            Detector::Nll | Detector::Entropy => &[Requirement::Logits],
            Detector::MiEnt | Detector::Kl | Detector::LogitDiff => {
                &[Requirement::Logits, Requirement::Marginal]
            }
        }
    }

    pub fn registry() -> String {
        Detector::ALL
            .iter()
            .map(|d| d.name())
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Parses a comma-separated detector list, keeping order and dropping
    /// duplicates.
    pub fn parse_list(list: &str) -> Result<Vec<Detector>, ScoreError> {
        let mut out = Vec::new();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let d: Detector = name.parse()?;
            if !out.contains(&d) {
                out.push(d);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Detector::ALL
            .iter()
            .copied()
            .find(|d| d.name() == s)
            .ok_or_else(|| ScoreError::UnknownDetector {
                name: s.to_string(),
                available: Detector::registry(),
            })
    }
}

/// Attention mass an output token places on each token type at one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoleAttentionSums {
    pub layer: u32,
    pub position: usize,
    pub bos: f64,
    pub image: f64,
    pub instruction: f64,
    pub prelim: f64,
}

impl RoleAttentionSums {
    pub fn get(&self, role: TokenRole) -> f64 {
        match role {
            TokenRole::Bos => self.bos,
            TokenRole::Image => self.image,
            TokenRole::Instruction => self.instruction,
            TokenRole::Output => self.prelim,
        }
    }

    pub fn total(&self) -> f64 {
        self.bos + self.image + self.instruction + self.prelim
    }
}

pub fn role_attention_sums(
    trace: &Trace,
    position: usize,
    layer: u32,
) -> Result<RoleAttentionSums, ScoreError> {
    let row = trace
        .attention_row(layer, position)
        .ok_or(ScoreError::MissingAttention { layer, position })?;
    let layout = &trace.layout;
    let span_sum = |span: std::ops::Range<usize>| -> f64 {
        // row.weights[j - 1] is the weight on position j < position
        let end = span.end.min(position);
        if span.start >= end {
            return 0.0;
        }
        row.weights[span.start - 1..end - 1]
            .iter()
            .map(|&w| f64::from(w))
            .sum()
    };
    Ok(RoleAttentionSums {
        layer,
        position,
        bos: span_sum(layout.bos_span()),
        image: span_sum(layout.image_span()),
        instruction: span_sum(layout.instruction_span()),
        prelim: span_sum(layout.output_start()..position),
    })
}

/// Role sums averaged over every stored layer.
pub fn global_role_sums(trace: &Trace, position: usize) -> Result<RoleAttentionSums, ScoreError> {
    let layers = &trace.header.layers;
    let mut acc = RoleAttentionSums {
        layer: u32::MAX,
        position,
        bos: 0.0,
        image: 0.0,
        instruction: 0.0,
        prelim: 0.0,
    };
    for &layer in layers {
        let s = role_attention_sums(trace, position, layer)?;
        acc.bos += s.bos;
        acc.image += s.image;
        acc.instruction += s.instruction;
        acc.prelim += s.prelim;
    }
    let count = layers.len().max(1) as f64;
    acc.bos /= count;
    acc.image /= count;
    acc.instruction /= count;
    acc.prelim /= count;
    Ok(acc)
}

/// Prelim attention score: attention mass on previously generated tokens.
pub fn pas(trace: &Trace, position: usize, layer: u32) -> Result<f64, ScoreError> {
    Ok(role_attention_sums(trace, position, layer)?.prelim)
}

/// Image-free next-token distribution: the mean of the per-reference
/// softmax distributions. Probabilities are averaged, not logits.
pub fn marginal_distribution(marginal: &MarginalLogits) -> Result<Vec<f64>, ScoreError> {
    if marginal.reference_count == 0 {
        return Err(ScoreError::NoReferences);
    }
    let mut acc = vec![0.0; marginal.vocab_size];
    for row in marginal.rows() {
        for (a, p) in acc.iter_mut().zip(softmax_f32(row)?) {
            *a += p;
        }
    }
    let l = marginal.reference_count as f64;
    acc.iter_mut().for_each(|a| *a /= l);
    Ok(acc)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64, ScoreError> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(ScoreError::InvalidProbability);
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(ScoreError::NotNormalized { sum });
    }
    Ok(-p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>())
}

/// `KL(p || q)` with `q` floored at [`KL_PROBABILITY_FLOOR`]; terms with
/// `p_i = 0` contribute nothing. Returns the divergence and whether the
/// floor was hit.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> (f64, bool) {
    let mut floored = false;
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi < KL_PROBABILITY_FLOOR {
                floored = true;
            }
            kl += pi * (pi.ln() - qi.max(KL_PROBABILITY_FLOOR).ln());
        }
    }
    (kl.max(0.0), floored)
}

fn check_shapes(marginal: &MarginalLogits, conditional: &LogitSlice) -> Result<(), ScoreError> {
    if marginal.vocab_size != conditional.logits.len() {
        return Err(ScoreError::ShapeMismatch {
            marginal: marginal.vocab_size,
            conditional: conditional.logits.len(),
        });
    }
    if marginal.reference_count == 0 {
        return Err(ScoreError::NoReferences);
    }
    Ok(())
}

/// `-(H(image-free) - H(conditional))`.
pub fn mi_entropy_diff_score(
    marginal: &MarginalLogits,
    conditional: &LogitSlice,
) -> Result<f64, ScoreError> {
    check_shapes(marginal, conditional)?;
    let h_marginal = entropy(&marginal_distribution(marginal)?)?;
    let h_conditional = entropy(&softmax_f32(&conditional.logits)?)?;
    Ok(-(h_marginal - h_conditional))
}

/// `-KL(image-free || conditional)`; always `<= 0`.
pub fn kl_score(marginal: &MarginalLogits, conditional: &LogitSlice) -> Result<f64, ScoreError> {
    check_shapes(marginal, conditional)?;
    let p = marginal_distribution(marginal)?;
    let q = softmax_f32(&conditional.logits)?;
    let (kl, floored) = kl_divergence(&p, &q);
    if floored {
        log::debug!(
            "kl at position {}: conditional probability floored at {KL_PROBABILITY_FLOOR:e}",
            conditional.position
        );
    }
    Ok(-kl)
}

/// Mean raw reference logit of `token` minus its conditional logit.
pub fn logit_diff_score(
    marginal: &MarginalLogits,
    conditional: &LogitSlice,
    token: usize,
) -> Result<f64, ScoreError> {
    check_shapes(marginal, conditional)?;
    if token >= conditional.logits.len() {
        return Err(ScoreError::TokenOutOfRange {
            token,
            vocab: conditional.logits.len(),
        });
    }
    let mean: f64 =
        marginal.rows().map(|r| f64::from(r[token])).sum::<f64>() / marginal.reference_count as f64;
    Ok(mean - f64::from(conditional.logits[token]))
}

/// Negative log-likelihood of `token` under the conditional distribution.
pub fn nll_score(conditional: &LogitSlice, token: usize) -> Result<f64, ScoreError> {
    let logits = &conditional.logits;
    if token >= logits.len() {
        return Err(ScoreError::TokenOutOfRange {
            token,
            vocab: logits.len(),
        });
    }
    // log-sum-exp form keeps tiny probabilities exact
    let max = logits
        .iter()
        .map(|&x| f64::from(x))
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .map(|&x| (f64::from(x) - max).exp())
            .sum::<f64>()
            .ln();
    Ok((lse - f64::from(logits[token])).max(0.0))
}

pub fn entropy_score(conditional: &LogitSlice) -> Result<f64, ScoreError> {
    entropy(&softmax_f32(&conditional.logits)?)
}

/// One detector score for one mention.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub trace_id: String,
    pub position: usize,
    pub class: String,
    pub label: Label,
    pub detector: Detector,
    pub score: f64,
}

impl ScoreRecord {
    fn sort_key(&self) -> (&str, usize, Detector) {
        (&self.trace_id, self.position, self.detector)
    }
}

/// Computes `detector` for the mention at `position`.
pub fn score_position(
    trace: &Trace,
    position: usize,
    detector: Detector,
    layer: u32,
) -> Result<f64, ScoreError> {
    if !trace.layout.is_output(position) {
        return Err(ScoreError::NotOutput { position });
    }
    let token = trace.tokens[position - 1].id as usize;
    let logits = || {
        trace
            .logit_slices
            .get(&position)
            .ok_or(ScoreError::MissingLogits { position })
    };
    let marginal = || {
        trace
            .marginal
            .get(&position)
            .ok_or(ScoreError::MissingMarginal { position })
    };
    match detector {
        Detector::Pas => pas(trace, position, layer),
        Detector::Nll => nll_score(logits()?, token),
        Detector::Entropy => entropy_score(logits()?),
        Detector::MiEnt => mi_entropy_diff_score(marginal()?, logits()?),
        Detector::Kl => kl_score(marginal()?, logits()?),
        Detector::LogitDiff => logit_diff_score(marginal()?, logits()?, token),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScoredCorpus {
    pub records: Vec<ScoreRecord>,
    pub warnings: Vec<String>,
}

/// Scores every mention with every detector.
///
/// Mentions missing a tensor a detector needs are skipped for that detector
/// with a warning. Records are ordered by (trace id, position, detector)
/// regardless of how the work was scheduled.
pub fn score_corpus(
    corpus: &[(Trace, Vec<ObjectMention>)],
    detectors: &[Detector],
    layer: u32,
) -> Result<ScoredCorpus, ScoreError> {
    if detectors.is_empty() {
        return Err(ScoreError::NoDetectors);
    }
    let per_trace: Vec<(Vec<ScoreRecord>, Vec<String>)> = corpus
        .par_iter()
        .map(|(trace, mentions)| {
            let mut records = Vec::new();
            let mut warnings = Vec::new();
            for mention in mentions {
                for &detector in detectors {
                    match score_position(trace, mention.position, detector, layer) {
                        Ok(score) => records.push(ScoreRecord {
                            trace_id: trace.header.trace_id.clone(),
                            position: mention.position,
                            class: mention.class.clone(),
                            label: mention.label,
                            detector,
                            score,
                        }),
                        Err(
                            e @ (ScoreError::MissingAttention { .. }
                            | ScoreError::MissingLogits { .. }
                            | ScoreError::MissingMarginal { .. }),
                        ) => warnings.push(format!(
                            "{}:{} skipped for {detector}: {e}",
                            trace.header.trace_id, mention.position
                        )),
                        Err(e) => return Err(e),
                    }
                }
            }
            Ok((records, warnings))
        })
        .collect::<Result<_, ScoreError>>()?;

    let mut out = ScoredCorpus::default();
    for (records, warnings) in per_trace {
        out.records.extend(records);
        out.warnings.extend(warnings);
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    out.records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    for &detector in detectors {
        if !out.records.iter().any(|r| r.detector == detector) {
            return Err(ScoreError::NothingScored { detector });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{AttentionRow, SpanLayout, Token, TraceHeader, SCHEMA_VERSION};
    use std::collections::BTreeMap;

    const LN2: f64 = std::f64::consts::LN_2;

    fn slice(logits: &[f32]) -> LogitSlice {
        LogitSlice {
            position: 6,
            logits: logits.to_vec(),
        }
    }

    fn marginal(rows: &[&[f32]]) -> MarginalLogits {
        MarginalLogits::new(6, rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    // BOS 1, image 2..4, instruction 4..5, output 5..=6
    fn trace_with_row(k: usize, weights: Vec<f32>) -> Trace {
        let n = 6;
        let mut attention = BTreeMap::new();
        attention.insert(
            (0, k),
            AttentionRow {
                position: k,
                layer: 0,
                weights,
            },
        );
        Trace {
            header: TraceHeader {
                trace_id: "t".into(),
                model_tag: "unit".into(),
                vocab_size: 8,
                head_count: 4,
                layers: vec![0],
                schema_version: SCHEMA_VERSION,
                marginal_prelim_identical: true,
            },
            layout: SpanLayout::from_lengths(1, 2, 1, n).unwrap(),
            tokens: (0..n as u32)
                .map(|i| Token::new(i, format!(" w{i}")))
                .collect(),
            attention,
            logit_slices: BTreeMap::new(),
            marginal: BTreeMap::new(),
            ground_truth_objects: vec![],
        }
    }

    #[test]
    fn role_sums_hand_example() {
        let t = trace_with_row(6, vec![0.1, 0.2, 0.2, 0.1, 0.4]);
        let s = role_attention_sums(&t, 6, 0).unwrap();
        assert!((s.bos - 0.1).abs() < 1e-7);
        assert!((s.image - 0.4).abs() < 1e-7);
        assert!((s.instruction - 0.1).abs() < 1e-7);
        assert!((s.prelim - 0.4).abs() < 1e-7);
        assert!((s.total() - 1.0).abs() < 1e-6);
        assert_eq!(pas(&t, 6, 0).unwrap(), s.prelim);
    }

    #[test]
    fn first_output_has_no_prelim() {
        let t = trace_with_row(5, vec![0.1, 0.3, 0.3, 0.3]);
        let s = role_attention_sums(&t, 5, 0).unwrap();
        assert_eq!(s.prelim, 0.0);
        assert_eq!(pas(&t, 5, 0).unwrap(), 0.0);
    }

    #[test]
    fn all_mass_on_bos() {
        let t = trace_with_row(6, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let s = role_attention_sums(&t, 6, 0).unwrap();
        assert_eq!(
            (s.bos, s.image, s.instruction, s.prelim),
            (1.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn missing_row() {
        let t = trace_with_row(6, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            role_attention_sums(&t, 6, 3),
            Err(ScoreError::MissingAttention {
                layer: 3,
                position: 6
            })
        );
        assert!(pas(&t, 5, 0).is_err());
    }

    #[test]
    fn marginal_examples() {
        let single = marginal(&[&[0.3, -1.0, 2.0]]);
        let direct = softmax_f32(&[0.3, -1.0, 2.0]).unwrap();
        let avg = marginal_distribution(&single).unwrap();
        for (a, b) in avg.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }

        let two = marginal(&[&[0.0, 0.0], &[0.0, 3f32.ln()]]);
        let avg = marginal_distribution(&two).unwrap();
        assert!((avg[0] - 0.375).abs() < 1e-7);
        assert!((avg[1] - 0.625).abs() < 1e-7);

        let row: &[f32] = &[1.0, 2.0, -0.5, 0.25];
        let repeated = marginal(&[row, row, row]);
        let avg = marginal_distribution(&repeated).unwrap();
        for (a, b) in avg.iter().zip(softmax_f32(row).unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((avg.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let empty = MarginalLogits {
            position: 6,
            reference_count: 0,
            vocab_size: 2,
            matrix: vec![],
        };
        assert_eq!(marginal_distribution(&empty), Err(ScoreError::NoReferences));
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap() - LN2).abs() < 1e-12);
        assert!(matches!(
            entropy(&[0.5, 0.6]),
            Err(ScoreError::NotNormalized { .. })
        ));
        assert_eq!(entropy(&[-0.5, 1.5]), Err(ScoreError::InvalidProbability));
    }

    // a very negative logit stands in for an exact zero after softmax
    const ZERO: f32 = -200.0;

    #[test]
    fn mi_entropy_diff_examples() {
        let uniform2 = marginal(&[&[0.0, 0.0]]);
        let one_hot = slice(&[0.0, ZERO]);
        let s = mi_entropy_diff_score(&uniform2, &one_hot).unwrap();
        assert!((s + LN2).abs() < 1e-9);

        let same = slice(&[0.5, 1.5, -2.0]);
        let m = marginal(&[&[0.5, 1.5, -2.0]]);
        assert!(mi_entropy_diff_score(&m, &same).unwrap().abs() < 1e-12);

        let m = marginal(&[&[0.0, ZERO]]);
        let s = mi_entropy_diff_score(&m, &slice(&[0.0, 0.0])).unwrap();
        assert!((s - LN2).abs() < 1e-9);

        assert!(matches!(
            mi_entropy_diff_score(&m, &slice(&[0.0, 0.0, 0.0])),
            Err(ScoreError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn kl_examples() {
        let m = marginal(&[&[0.2, 1.0, -1.0]]);
        assert!(kl_score(&m, &slice(&[0.2, 1.0, -1.0])).unwrap().abs() < 1e-12);

        let m = marginal(&[&[0.0, ZERO]]);
        let s = kl_score(&m, &slice(&[0.0, 0.0])).unwrap();
        assert!((s + LN2).abs() < 1e-9);

        // conditional underflows to zero where the marginal has mass: floored
        let m = marginal(&[&[0.0, 0.0]]);
        let s = kl_score(&m, &slice(&[0.0, -2000.0])).unwrap();
        assert!(s.is_finite() && s < 0.0);
        let expected =
            -(0.5 * (0.5f64.ln() - 0.0) + 0.5 * (0.5f64.ln() - KL_PROBABILITY_FLOOR.ln()));
        assert!((s - expected).abs() < 1e-9);
    }

    #[test]
    fn logit_diff_examples() {
        let m = marginal(&[&[0.0, 2.0], &[0.0, 4.0]]);
        assert!((logit_diff_score(&m, &slice(&[0.0, 5.0]), 1).unwrap() + 2.0).abs() < 1e-12);

        let row: &[f32] = &[0.3, -0.7, 1.1];
        let m = marginal(&[row, row]);
        assert_eq!(logit_diff_score(&m, &slice(row), 2).unwrap(), 0.0);

        let m = marginal(&[&[0.0, 9.0]]);
        assert!((logit_diff_score(&m, &slice(&[-1.0, 9.0]), 0).unwrap() - 1.0).abs() < 1e-12);

        assert!(matches!(
            logit_diff_score(&m, &slice(&[-1.0, 9.0]), 2),
            Err(ScoreError::TokenOutOfRange { token: 2, vocab: 2 })
        ));
    }

    #[test]
    fn nll_examples() {
        assert!(nll_score(&slice(&[0.0, ZERO, ZERO]), 0).unwrap().abs() < 1e-12);
        assert!((nll_score(&slice(&[1.0; 4]), 3).unwrap() - 4f64.ln()).abs() < 1e-12);
        let s = nll_score(&slice(&[0.0, 3f32.ln()]), 0).unwrap();
        assert!((s - 4f64.ln()).abs() < 1e-7);
        assert!(nll_score(&slice(&[0.0]), 1).is_err());
    }

    #[test]
    fn entropy_score_examples() {
        assert!((entropy_score(&slice(&[2.0; 4])).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(entropy_score(&slice(&[0.0, ZERO])).unwrap().abs() < 1e-12);
        let s = entropy_score(&slice(&[0.0, 0.0, ZERO, ZERO])).unwrap();
        assert!((s - LN2).abs() < 1e-12);
    }

    #[test]
    fn detector_registry() {
        assert_eq!(
            Detector::parse_list("pas, nll,pas").unwrap(),
            vec![Detector::Pas, Detector::Nll]
        );
        let err = Detector::parse_list("pas,svar").unwrap_err().to_string();
        assert!(err.contains("svar"));
        for d in Detector::ALL {
            assert!(err.contains(d.name()));
            assert_eq!(d.name().parse::<Detector>().unwrap(), d);
        }
    }
}
