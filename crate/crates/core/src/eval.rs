//! Threshold-free evaluation of detector scores against real/hallucinated
//! labels: AUROC, ROC and precision-recall curves, per-label quartiles,
//! Pearson correlation, and layer/role ablations of the attention scores.
//!
//! Scores follow the detector orientation: higher means "more likely a
//! hallucination", so the positive class is [`Label::Hallucinated`].

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::matching::{Label, ObjectMention};
use crate::scoring::{
    global_role_sums, role_attention_sums, Detector, RoleAttentionSums, ScoreError, ScoreRecord,
};
use crate::trace::{TokenRole, Trace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(
        "undefined AUROC: need both classes, got {n_real} real and {n_hallucinated} hallucinated"
    )]
    SingleClass {
        n_real: usize,
        n_hallucinated: usize,
    },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("input contains unlabeled mentions")]
    Unlabeled,
    #[error("score {index} is not finite")]
    NonFinite { index: usize },
    #[error("no {0} scores to summarize")]
    EmptyGroup(Label),
    #[error("score `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("correlation needs equal-length vectors of at least 2 values")]
    BadColumns,
    #[error("layer {layer} is not stored in trace `{trace_id}`")]
    MissingLayer { layer: u32, trace_id: String },
    #[error(transparent)]
    Score(#[from] ScoreError),
}

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite { index });
    }
    let mut n_real = 0;
    let mut n_hallucinated = 0;
    for l in labels {
        match l {
            Label::Real => n_real += 1,
            Label::Hallucinated => n_hallucinated += 1,
            Label::Unlabeled => return Err(EvalError::Unlabeled),
        }
    }
    Ok((n_real, n_hallucinated))
}

fn require_both(n_real: usize, n_hallucinated: usize) -> Result<(), EvalError> {
    if n_real == 0 || n_hallucinated == 0 {
        return Err(EvalError::SingleClass {
            n_real,
            n_hallucinated,
        });
    }
    Ok(())
}

/// Rank-based AUROC with midranks for ties: the probability that a
/// hallucinated mention outscores a real one, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64, EvalError> {
    let (n_real, n_hall) = check_inputs(scores, labels)?;
    require_both(n_real, n_hall)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut hallucinated_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        let tied_hall = order[i..j]
            .iter()
            .filter(|&&o| labels[o] == Label::Hallucinated)
            .count();
        hallucinated_rank_sum += midrank * tied_hall as f64;
        i = j;
    }
    let nh = n_hall as f64;
    let u = hallucinated_rank_sum - nh * (nh + 1.0) / 2.0;
    Ok(u / (nh * n_real as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

/// Flags every mention with `score >= tau` as a hallucination.
pub fn threshold_detector(
    scores: &[f64],
    labels: &[Label],
    tau: f64,
) -> Result<Confusion, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        let flagged = s >= tau;
        match (l, flagged) {
            (Label::Hallucinated, true) => c.true_positive += 1,
            (Label::Hallucinated, false) => c.false_negative += 1,
            (Label::Real, true) => c.false_positive += 1,
            (Label::Real, false) => c.true_negative += 1,
            (Label::Unlabeled, _) => return Err(EvalError::Unlabeled),
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curves {
    /// (false positive rate, true positive rate), from (0,0) to (1,1).
    pub roc: Vec<(f64, f64)>,
    /// (recall, precision), starting at (0, 1).
    pub prc: Vec<(f64, f64)>,
}

/// Sweeps the threshold down through every distinct score.
pub fn roc_prc_curves(scores: &[f64], labels: &[Label]) -> Result<Curves, EvalError> {
    let (n_real, n_hall) = check_inputs(scores, labels)?;
    require_both(n_real, n_hall)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut roc = vec![(0.0, 0.0)];
    let mut prc = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            match labels[order[j]] {
                Label::Hallucinated => tp += 1,
                _ => fp += 1,
            }
            j += 1;
        }
        roc.push((fp as f64 / n_real as f64, tp as f64 / n_hall as f64));
        prc.push((tp as f64 / n_hall as f64, tp as f64 / (tp + fp) as f64));
        i = j;
    }
    Ok(Curves { roc, prc })
}

/// Trapezoid area under a polyline of (x, y) points.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Quantile by midpoint interpolation: the mean of the two order
/// statistics bracketing position `(n - 1) * p`.
fn midpoint_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p;
    (sorted[pos.floor() as usize] + sorted[pos.ceil() as usize]) / 2.0
}

pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Quartiles {
        q1: midpoint_quantile(&sorted, 0.25),
        median: midpoint_quantile(&sorted, 0.5),
        q3: midpoint_quantile(&sorted, 0.75),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionSummary {
    pub real: Quartiles,
    pub hallucinated: Quartiles,
}

pub fn distribution_summary(
    scores: &[f64],
    labels: &[Label],
) -> Result<DistributionSummary, EvalError> {
    check_inputs(scores, labels)?;
    let group = |want: Label| -> Result<Quartiles, EvalError> {
        let values: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == want)
            .map(|(&s, _)| s)
            .collect();
        quartiles(&values).ok_or(EvalError::EmptyGroup(want))
    };
    Ok(DistributionSummary {
        real: group(Label::Real)?,
        hallucinated: group(Label::Hallucinated)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Pearson correlation between named score columns.
pub fn correlation_matrix(columns: &[(String, Vec<f64>)]) -> Result<CorrelationMatrix, EvalError> {
    let len = columns.first().map_or(0, |c| c.1.len());
    if len < 2 || columns.iter().any(|c| c.1.len() != len) {
        return Err(EvalError::BadColumns);
    }
    for (name, values) in columns {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite { index });
        }
        let first = values[0];
        if values.iter().all(|&v| v == first) {
            return Err(EvalError::ZeroVariance(name.clone()));
        }
    }
    let k = columns.len();
    let mut matrix = vec![vec![0.0; k]; k];
    for i in 0..k {
        matrix[i][i] = 1.0;
        for j in i + 1..k {
            let r = pearson(&columns[i].1, &columns[j].1);
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: columns.iter().map(|c| c.0.clone()).collect(),
        matrix,
    })
}

/// Column name and orientation sign for a role's attention score. Only the
/// prelim score already points toward hallucination; the others are
/// negated.
pub fn role_orientation(role: TokenRole) -> (&'static str, f64) {
    match role {
        TokenRole::Output => ("prelim", 1.0),
        TokenRole::Instruction => ("instruction", -1.0),
        TokenRole::Image => ("image", -1.0),
        TokenRole::Bos => ("bos", -1.0),
    }
}

pub const ABLATION_ROLES: [TokenRole; 4] = [
    TokenRole::Output,
    TokenRole::Instruction,
    TokenRole::Image,
    TokenRole::Bos,
];

/// Correlation of the oriented role attention scores.
pub fn attention_correlation(sums: &[RoleAttentionSums]) -> Result<CorrelationMatrix, EvalError> {
    let columns: Vec<(String, Vec<f64>)> = ABLATION_ROLES
        .iter()
        .map(|&role| {
            let (name, sign) = role_orientation(role);
            (
                name.to_string(),
                sums.iter().map(|s| sign * s.get(role)).collect(),
            )
        })
        .collect();
    correlation_matrix(&columns)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub detector: String,
    pub auroc: f64,
    pub roc_points: Vec<(f64, f64)>,
    pub prc_points: Vec<(f64, f64)>,
    pub real_quartiles: Quartiles,
    pub hallucinated_quartiles: Quartiles,
    pub n_real: usize,
    pub n_hallucinated: usize,
}

pub fn evaluate(detector: &str, scores: &[f64], labels: &[Label]) -> Result<EvalReport, EvalError> {
    let (n_real, n_hallucinated) = check_inputs(scores, labels)?;
    require_both(n_real, n_hallucinated)?;
    let curves = roc_prc_curves(scores, labels)?;
    let summary = distribution_summary(scores, labels)?;
    Ok(EvalReport {
        detector: detector.to_string(),
        auroc: auroc(scores, labels)?,
        roc_points: curves.roc,
        prc_points: curves.prc,
        real_quartiles: summary.real,
        hallucinated_quartiles: summary.hallucinated,
        n_real,
        n_hallucinated,
    })
}

/// Evaluates each detector present in `records`. Unlabeled records are
/// ignored.
pub fn evaluate_records(
    records: &[ScoreRecord],
) -> BTreeMap<Detector, Result<EvalReport, EvalError>> {
    let mut grouped: BTreeMap<Detector, (Vec<f64>, Vec<Label>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.label != Label::Unlabeled) {
        let entry = grouped.entry(r.detector).or_default();
        entry.0.push(r.score);
        entry.1.push(r.label);
    }
    grouped
        .into_iter()
        .map(|(d, (scores, labels))| (d, evaluate(d.name(), &scores, &labels)))
        .collect()
}

fn labeled(mentions: &[ObjectMention]) -> impl Iterator<Item = &ObjectMention> {
    mentions.iter().filter(|m| m.label != Label::Unlabeled)
}

/// PAS AUROC at each requested layer.
pub fn layer_ablation(
    corpus: &[(Trace, Vec<ObjectMention>)],
    layers: &[u32],
) -> Result<Vec<(u32, f64)>, EvalError> {
    for (trace, _) in corpus {
        if let Some(&layer) = layers.iter().find(|l| !trace.header.layers.contains(l)) {
            return Err(EvalError::MissingLayer {
                layer,
                trace_id: trace.header.trace_id.clone(),
            });
        }
    }
    layers
        .iter()
        .map(|&layer| {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for (trace, mentions) in corpus {
                for m in labeled(mentions) {
                    scores.push(role_attention_sums(trace, m.position, layer)?.prelim);
                    labels.push(m.label);
                }
            }
            Ok((layer, auroc(&scores, &labels)?))
        })
        .collect()
}

/// Which attention rows feed the role scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleScope {
    Layer(u32),
    /// Mean of the per-layer role sums over every stored layer.
    Global,
}

/// Role sums and labels for every labeled mention in the corpus.
pub fn collect_role_sums(
    corpus: &[(Trace, Vec<ObjectMention>)],
    scope: RoleScope,
) -> Result<(Vec<RoleAttentionSums>, Vec<Label>), EvalError> {
    let mut sums = Vec::new();
    let mut labels = Vec::new();
    for (trace, mentions) in corpus {
        if let RoleScope::Layer(layer) = scope {
            if !trace.header.layers.contains(&layer) {
                return Err(EvalError::MissingLayer {
                    layer,
                    trace_id: trace.header.trace_id.clone(),
                });
            }
        }
        for m in labeled(mentions) {
            let s = match scope {
                RoleScope::Layer(layer) => role_attention_sums(trace, m.position, layer)?,
                RoleScope::Global => global_role_sums(trace, m.position)?,
            };
            sums.push(s);
            labels.push(m.label);
        }
    }
    Ok((sums, labels))
}

/// AUROC of each oriented role score (prelim, instruction, image, BOS).
pub fn role_ablation(
    corpus: &[(Trace, Vec<ObjectMention>)],
    scope: RoleScope,
) -> Result<Vec<(TokenRole, f64)>, EvalError> {
    let (sums, labels) = collect_role_sums(corpus, scope)?;
    ABLATION_ROLES
        .iter()
        .map(|&role| {
            let sign = role_orientation(role).1;
            let scores: Vec<f64> = sums.iter().map(|s| sign * s.get(role)).collect();
            Ok((role, auroc(&scores, &labels)?))
        })
        .collect()
}

/// Sort helper for descending AUROC tables.
pub fn by_auroc_desc<T>(a: &(T, f64), b: &(T, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
}
