//! In-memory model of one recorded generation.
//!
//! Positions are 1-based throughout this module: the BOS token sits at
//! position 1, the first generated token at `m + 1`, and the last at `n`.
//! An attention row for output position `k` holds the head-averaged weights
//! that position `k` places on every earlier position `j = 1 ..= k - 1`.
//! The container format stores 0-based offsets; see [`crate::container`].

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on attention-row sums, for rows read back from f32 storage.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Current container schema version.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("position {position} out of range 1..={n}")]
    PositionOutOfRange { position: usize, n: usize },
    #[error("invalid span layout: {0}")]
    Layout(String),
    #[error("token count {found} does not match layout length {expected}")]
    TokenCount { expected: usize, found: usize },
    #[error("attention row at layer {layer} position {position}: {reason}")]
    AttentionRow {
        layer: u32,
        position: usize,
        reason: String,
    },
    #[error("attention row references layer {layer}, which is not a stored layer")]
    UnknownLayer { layer: u32 },
    #[error("logit slice at position {position}: {reason}")]
    LogitSlice { position: usize, reason: String },
    #[error("marginal logits at position {position}: {reason}")]
    Marginal { position: usize, reason: String },
    #[error("header: {0}")]
    Header(String),
    #[error("softmax of an empty logit vector")]
    EmptyLogits,
}

/// The four token types that an output token can attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenRole {
    Bos,
    Image,
    Instruction,
    Output,
}

impl TokenRole {
    pub const ALL: [TokenRole; 4] = [
        TokenRole::Bos,
        TokenRole::Image,
        TokenRole::Instruction,
        TokenRole::Output,
    ];
}

impl fmt::Display for TokenRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenRole::Bos => "bos",
            TokenRole::Image => "image",
            TokenRole::Instruction => "instruction",
            TokenRole::Output => "output",
        };
        f.write_str(s)
    }
}

/// Contiguous role spans tiling positions `1 ..= n`.
///
/// Ranges are half-open over 1-based positions, so a layout with one BOS
/// token, two image tokens and one instruction token has
/// `image = 2..4`, `instruction = 4..5` and output starting at 5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanLayout {
    bos_len: usize,
    image: Range<usize>,
    instruction: Range<usize>,
    n: usize,
}

impl SpanLayout {
    /// Builds a layout from role lengths. The output span takes whatever is
    /// left of `n` after the input tokens.
    pub fn from_lengths(
        bos_len: usize,
        image_len: usize,
        instruction_len: usize,
        n: usize,
    ) -> Result<Self, TraceError> {
        let image = bos_len + 1..bos_len + 1 + image_len;
        let instruction = image.end..image.end + instruction_len;
        Self::new(bos_len, image, instruction, n)
    }

    pub fn new(
        bos_len: usize,
        image: Range<usize>,
        instruction: Range<usize>,
        n: usize,
    ) -> Result<Self, TraceError> {
        if image.start != bos_len + 1 {
            return Err(TraceError::Layout(format!(
                "image span must start right after BOS at {}, got {}",
                bos_len + 1,
                image.start
            )));
        }
        if image.end < image.start {
            return Err(TraceError::Layout("image span is reversed".into()));
        }
        if instruction.start != image.end || instruction.end < instruction.start {
            return Err(TraceError::Layout(format!(
                "instruction span {:?} must start at image end {}",
                instruction, image.end
            )));
        }
        let m = instruction.end - 1;
        if n < m {
            return Err(TraceError::Layout(format!(
                "total length {n} is shorter than the {m} input tokens"
            )));
        }
        Ok(Self {
            bos_len,
            image,
            instruction,
            n,
        })
    }

    pub fn bos_len(&self) -> usize {
        self.bos_len
    }

    pub fn bos_span(&self) -> Range<usize> {
        1..self.bos_len + 1
    }

    pub fn image_span(&self) -> Range<usize> {
        self.image.clone()
    }

    pub fn instruction_span(&self) -> Range<usize> {
        self.instruction.clone()
    }

    pub fn output_span(&self) -> Range<usize> {
        self.output_start()..self.n + 1
    }

    /// Number of input tokens (BOS, image and instruction).
    pub fn m(&self) -> usize {
        self.instruction.end - 1
    }

    /// Total token count.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn output_start(&self) -> usize {
        self.m() + 1
    }

    pub fn span_of(&self, role: TokenRole) -> Range<usize> {
        match role {
            TokenRole::Bos => self.bos_span(),
            TokenRole::Image => self.image_span(),
            TokenRole::Instruction => self.instruction_span(),
            TokenRole::Output => self.output_span(),
        }
    }

    pub fn is_output(&self, position: usize) -> bool {
        position > self.m() && position <= self.n
    }
}

/// Returns the role of 1-based position `j`.
pub fn role_of(layout: &SpanLayout, j: usize) -> Result<TokenRole, TraceError> {
    if j == 0 || j > layout.n() {
        return Err(TraceError::PositionOutOfRange {
            position: j,
            n: layout.n(),
        });
    }
    let role = if j <= layout.bos_len {
        TokenRole::Bos
    } else if j < layout.image.end {
        TokenRole::Image
    } else if j < layout.instruction.end {
        TokenRole::Instruction
    } else {
        TokenRole::Output
    };
    Ok(role)
}

/// Numerically stable softmax, computed in f64.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, TraceError> {
    if logits.is_empty() {
        return Err(TraceError::EmptyLogits);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Same as [`softmax`] over f32 storage.
pub fn softmax_f32(logits: &[f32]) -> Result<Vec<f64>, TraceError> {
    let wide: Vec<f64> = logits.iter().map(|&x| f64::from(x)).collect();
    softmax(&wide)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub surface: String,
}

impl Token {
    pub fn new(id: u32, surface: impl Into<String>) -> Self {
        Self {
            id,
            surface: surface.into(),
        }
    }

    /// Whether this token starts a new word (leading whitespace or a
    /// SentencePiece word marker).
    pub fn begins_word(&self) -> bool {
        self.surface
            .chars()
            .next()
            .is_some_and(|c| c.is_whitespace() || c == '\u{2581}')
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub trace_id: String,
    pub model_tag: String,
    pub vocab_size: usize,
    pub head_count: usize,
    /// Layer indices for which attention rows were recorded, ascending.
    pub layers: Vec<u32>,
    pub schema_version: u32,
    /// Set by exporters when every marginal pass reused the exact prelim
    /// token ids of the original generation.
    pub marginal_prelim_identical: bool,
}

/// Head-averaged attention from output position `position` to all
/// earlier positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub position: usize,
    pub layer: u32,
    /// `weights[j - 1]` is the weight on position `j`; length `position - 1`.
    pub weights: Vec<f32>,
}

impl AttentionRow {
    pub fn sum(&self) -> f64 {
        self.weights.iter().map(|&w| f64::from(w)).sum()
    }
}

/// Pre-softmax model output at step `position`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSlice {
    pub position: usize,
    pub logits: Vec<f32>,
}

/// Per-reference-image logits for the same prelim, `L x V` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalLogits {
    pub position: usize,
    pub reference_count: usize,
    pub vocab_size: usize,
    pub matrix: Vec<f32>,
}

impl MarginalLogits {
    pub fn new(position: usize, rows: Vec<Vec<f32>>) -> Result<Self, TraceError> {
        let vocab_size = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != vocab_size) {
            return Err(TraceError::Marginal {
                position,
                reason: "ragged rows".into(),
            });
        }
        Ok(Self {
            position,
            reference_count: rows.len(),
            vocab_size,
            matrix: rows.into_iter().flatten().collect(),
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.vocab_size..(i + 1) * self.vocab_size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.matrix.chunks_exact(self.vocab_size.max(1))
    }
}

/// One recorded generation. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub layout: SpanLayout,
    pub tokens: Vec<Token>,
    pub attention: BTreeMap<(u32, usize), AttentionRow>,
    pub logit_slices: BTreeMap<usize, LogitSlice>,
    pub marginal: BTreeMap<usize, MarginalLogits>,
    pub ground_truth_objects: Vec<String>,
}

impl Trace {
    pub fn n(&self) -> usize {
        self.layout.n()
    }

    pub fn m(&self) -> usize {
        self.layout.m()
    }

    /// Token at 1-based position `k`.
    pub fn token(&self, k: usize) -> Option<&Token> {
        k.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    pub fn attention_row(&self, layer: u32, k: usize) -> Option<&AttentionRow> {
        self.attention.get(&(layer, k))
    }

    /// Output positions whose surface begins a word.
    pub fn object_candidates(&self) -> Vec<usize> {
        self.layout
            .output_span()
            .filter(|&k| self.tokens[k - 1].begins_word())
            .collect()
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let header = &self.header;
        let n = self.layout.n();
        if header.vocab_size == 0 {
            return Err(TraceError::Header("vocab_size must be positive".into()));
        }
        if header.schema_version != SCHEMA_VERSION {
            return Err(TraceError::Header(format!(
                "schema version {} is not supported",
                header.schema_version
            )));
        }
        if header.layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TraceError::Header(
                "stored layers must be strictly ascending".into(),
            ));
        }
        if self.tokens.len() != n {
            return Err(TraceError::TokenCount {
                expected: n,
                found: self.tokens.len(),
            });
        }
        if let Some(t) = self
            .tokens
            .iter()
            .find(|t| t.id as usize >= header.vocab_size)
        {
            return Err(TraceError::Header(format!(
                "token id {} exceeds vocab size {}",
                t.id, header.vocab_size
            )));
        }

        for (&(layer, k), row) in &self.attention {
            let bad = |reason: String| TraceError::AttentionRow {
                layer,
                position: k,
                reason,
            };
            if header.layers.binary_search(&layer).is_err() {
                return Err(TraceError::UnknownLayer { layer });
            }
            if row.layer != layer || row.position != k {
                return Err(bad("row key does not match its contents".into()));
            }
            if !self.layout.is_output(k) {
                return Err(bad(format!(
                    "position must be an output position in {}..={n}",
                    self.layout.m() + 1
                )));
            }
            if row.weights.len() != k - 1 {
                return Err(bad(format!(
                    "expected {} weights, found {}",
                    k - 1,
                    row.weights.len()
                )));
            }
            if let Some(j) = row.weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
                return Err(bad(format!(
                    "weight on position {} is negative or not finite",
                    j + 1
                )));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(bad(format!("row sum {sum:.4} at position {k}")));
            }
        }

        for (&k, slice) in &self.logit_slices {
            let bad = |reason: String| TraceError::LogitSlice {
                position: k,
                reason,
            };
            if slice.position != k || !self.layout.is_output(k) {
                return Err(bad("not an output position".into()));
            }
            if slice.logits.len() != header.vocab_size {
                return Err(bad(format!(
                    "length {} does not match vocab size {}",
                    slice.logits.len(),
                    header.vocab_size
                )));
            }
            if let Some(i) = slice.logits.iter().position(|x| !x.is_finite()) {
                return Err(bad(format!("logit {i} is not finite")));
            }
        }

        for (&k, marginal) in &self.marginal {
            let bad = |reason: String| TraceError::Marginal {
                position: k,
                reason,
            };
            if marginal.position != k || !self.layout.is_output(k) {
                return Err(bad("not an output position".into()));
            }
            if marginal.reference_count == 0 {
                return Err(bad("no reference rows".into()));
            }
            if marginal.vocab_size != header.vocab_size
                || marginal.matrix.len() != marginal.reference_count * marginal.vocab_size
            {
                return Err(bad(format!(
                    "shape {}x{} with {} values does not match vocab size {}",
                    marginal.reference_count,
                    marginal.vocab_size,
                    marginal.matrix.len(),
                    header.vocab_size
                )));
            }
            if let Some(i) = marginal.matrix.iter().position(|x| !x.is_finite()) {
                return Err(bad(format!("value {i} is not finite")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> SpanLayout {
        // BOS at 1, image 2..4, instruction 4..5, output 5..=7
        SpanLayout::from_lengths(1, 2, 1, 7).unwrap()
    }

    #[test]
    fn role_of_follows_spans() {
        let l = layout();
        assert_eq!(l.image_span(), 2..4);
        assert_eq!(l.instruction_span(), 4..5);
        assert_eq!(l.m(), 4);
        assert_eq!(role_of(&l, 1).unwrap(), TokenRole::Bos);
        assert_eq!(role_of(&l, 3).unwrap(), TokenRole::Image);
        assert_eq!(role_of(&l, 4).unwrap(), TokenRole::Instruction);
        assert_eq!(role_of(&l, 6).unwrap(), TokenRole::Output);
        assert!(matches!(
            role_of(&l, 0),
            Err(TraceError::PositionOutOfRange { .. })
        ));
        assert!(role_of(&l, 8).is_err());
    }

    #[test]
    fn roles_partition_positions() {
        let l = SpanLayout::from_lengths(1, 5, 3, 20).unwrap();
        let total: usize = TokenRole::ALL.iter().map(|&r| l.span_of(r).len()).sum();
        assert_eq!(total, l.n());
        for j in 1..=l.n() {
            let r = role_of(&l, j).unwrap();
            let hits = TokenRole::ALL
                .iter()
                .filter(|&&q| l.span_of(q).contains(&j))
                .count();
            assert_eq!(hits, 1);
            assert!(l.span_of(r).contains(&j));
        }
    }

    #[test]
    fn layout_rejects_gaps() {
        assert!(SpanLayout::new(1, 3..5, 5..6, 8).is_err());
        assert!(SpanLayout::new(1, 2..5, 6..7, 8).is_err());
        assert!(SpanLayout::from_lengths(1, 4, 4, 5).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);

        let p = softmax(&[1f64.ln(), 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);

        let p = softmax(&[1000.0, 1000.0, 1000.0]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(softmax(&[]), Err(TraceError::EmptyLogits));
    }

    #[test]
    fn softmax_shift_invariant() {
        let base = [0.3, -1.2, 4.0, 2.5, 0.0];
        let shifted: Vec<f64> = base.iter().map(|x| x + 123.456).collect();
        let a = softmax(&base).unwrap();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn begins_word_markers() {
        assert!(Token::new(0, " dog").begins_word());
        assert!(Token::new(0, "\u{2581}dog").begins_word());
        assert!(!Token::new(0, "gy").begins_word());
        assert!(!Token::new(0, "").begins_word());
    }
}
