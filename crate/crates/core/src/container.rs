//! Single-file trace container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   magic    b"PAST"
//! offset 4   u32      container version (1)
//! offset 8   u32      manifest byte length
//! offset 12  manifest UTF-8 JSON
//!            zero padding up to the next multiple of 64
//!            blob     packed f32 tensors, located by the manifest directory
//! ```
//!
//! Positions in the manifest and tensor names are 0-based offsets; the
//! reader converts them to the 1-based positions of [`crate::trace`].
//! Tensors are named `attention.l{layer}.p{offset}` (shape `[offset]`, one
//! weight per earlier token), `logits.p{offset}` (shape `[V]`) and
//! `marginal.p{offset}` (shape `[L, V]`).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{
    AttentionRow, LogitSlice, MarginalLogits, SpanLayout, Token, Trace, TraceError, TraceHeader,
    ROW_SUM_TOLERANCE,
};

pub const MAGIC: &[u8; 4] = b"PAST";
pub const CONTAINER_VERSION: u32 = 1;
pub const BLOB_ALIGNMENT: usize = 64;
pub const TRACE_EXTENSION: &str = "past";

const PREAMBLE_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported container version {found} at offset {offset}")]
    UnsupportedVersion { found: u32, offset: usize },
    #[error("truncated input at offset {offset}: need {needed} bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("manifest error at offset {offset}: {message}")]
    Manifest { offset: usize, message: String },
    #[error("non-zero padding byte at offset {offset}")]
    Padding { offset: usize },
    #[error("blob length mismatch at offset {offset}: declared {declared}, actual {actual}")]
    BlobLength {
        offset: usize,
        declared: u64,
        actual: u64,
    },
    #[error("tensor `{tensor}` at offset {offset}: {message}")]
    Tensor {
        tensor: String,
        offset: usize,
        message: String,
    },
    #[error("shape mismatch for tensor `{tensor}` at offset {offset}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        offset: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(
        "attention row at layer {layer}, offset {offset}: row sum {sum:.4} at position {position}"
    )]
    RowSum {
        layer: u32,
        position: usize,
        sum: f64,
        offset: usize,
    },
    #[error("trace invariant violated (manifest at offset {offset}): {source}")]
    Invariant {
        offset: usize,
        #[source]
        source: TraceError,
    },
    #[error("refusing to write invalid trace: {0}")]
    InvalidTrace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FormatError {
    /// Byte offset the error refers to, when it has one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            FormatError::BadMagic { offset }
            | FormatError::UnsupportedVersion { offset, .. }
            | FormatError::Truncated { offset, .. }
            | FormatError::Manifest { offset, .. }
            | FormatError::Padding { offset }
            | FormatError::BlobLength { offset, .. }
            | FormatError::Tensor { offset, .. }
            | FormatError::ShapeMismatch { offset, .. }
            | FormatError::RowSum { offset, .. }
            | FormatError::Invariant { offset, .. } => Some(*offset),
            FormatError::InvalidTrace(_) | FormatError::Io(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

/// Half-open 0-based token ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spans {
    pub bos: [usize; 2],
    pub image: [usize; 2],
    pub instruction: [usize; 2],
    pub output: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub trace_id: String,
    pub model_tag: String,
    pub vocab_size: usize,
    pub head_count: usize,
    pub layers: Vec<u32>,
    pub spans: Spans,
    pub tokens: Vec<Token>,
    pub object_candidates: Vec<usize>,
    pub ground_truth_objects: Vec<String>,
    #[serde(default)]
    pub marginal_prelim_identical: bool,
    pub blob_length: u64,
    pub tensors: Vec<TensorEntry>,
}

enum TensorKind {
    Attention { layer: u32, position: usize },
    Logits { position: usize },
    Marginal { position: usize },
}

fn parse_tensor_name(name: &str) -> Option<TensorKind> {
    let offset = |s: &str| s.strip_prefix('p')?.parse::<usize>().ok();
    let mut parts = name.split('.');
    let kind = match (parts.next()?, parts.next(), parts.next()) {
        ("attention", Some(l), Some(p)) => TensorKind::Attention {
            layer: l.strip_prefix('l')?.parse().ok()?,
            position: offset(p)?.checked_add(1)?,
        },
        ("logits", Some(p), None) => TensorKind::Logits {
            position: offset(p)?.checked_add(1)?,
        },
        ("marginal", Some(p), None) => TensorKind::Marginal {
            position: offset(p)?.checked_add(1)?,
        },
        _ => return None,
    };
    if parts.next().is_some() {
        return None;
    }
    Some(kind)
}

fn align_up(x: usize, to: usize) -> usize {
    x.div_ceil(to) * to
}

fn to_spans(layout: &SpanLayout) -> Spans {
    let zero = |r: std::ops::Range<usize>| [r.start - 1, r.end - 1];
    Spans {
        bos: zero(layout.bos_span()),
        image: zero(layout.image_span()),
        instruction: zero(layout.instruction_span()),
        output: zero(layout.output_span()),
    }
}

fn from_spans(spans: &Spans, n: usize) -> Result<SpanLayout, String> {
    let ordered = spans.bos[0] == 0
        && spans.bos[1] == spans.image[0]
        && spans.image[1] == spans.instruction[0]
        && spans.instruction[1] == spans.output[0]
        && spans.output[1] == n
        && [spans.bos, spans.image, spans.instruction, spans.output]
            .iter()
            .all(|s| s[0] <= s[1]);
    if !ordered {
        return Err(format!(
            "spans {spans:?} do not tile the {n} tokens in BOS, image, instruction, output order"
        ));
    }
    SpanLayout::new(
        spans.bos[1],
        spans.image[0] + 1..spans.image[1] + 1,
        spans.instruction[0] + 1..spans.instruction[1] + 1,
        n,
    )
    .map_err(|e| e.to_string())
}

fn push_tensor(
    blob: &mut Vec<u8>,
    entries: &mut Vec<TensorEntry>,
    name: String,
    shape: Vec<usize>,
    values: &[f32],
) {
    let offset = blob.len() as u64;
    for v in values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    entries.push(TensorEntry {
        name,
        dtype: "f32".into(),
        shape,
        offset,
        length: (values.len() * 4) as u64,
    });
}

/// Serializes a trace. Invalid traces are refused before anything is
/// written.
pub fn write_trace<W: Write>(trace: &Trace, mut sink: W) -> Result<u64, FormatError> {
    let bytes = encode_trace(trace)?;
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(bytes.len() as u64)
}

pub fn encode_trace(trace: &Trace) -> Result<Vec<u8>, FormatError> {
    trace.validate()?;

    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (&(layer, k), row) in &trace.attention {
        push_tensor(
            &mut blob,
            &mut tensors,
            format!("attention.l{layer}.p{}", k - 1),
            vec![row.weights.len()],
            &row.weights,
        );
    }
    for (&k, slice) in &trace.logit_slices {
        push_tensor(
            &mut blob,
            &mut tensors,
            format!("logits.p{}", k - 1),
            vec![slice.logits.len()],
            &slice.logits,
        );
    }
    for (&k, marginal) in &trace.marginal {
        push_tensor(
            &mut blob,
            &mut tensors,
            format!("marginal.p{}", k - 1),
            vec![marginal.reference_count, marginal.vocab_size],
            &marginal.matrix,
        );
    }

    let header = &trace.header;
    let manifest = Manifest {
        schema_version: header.schema_version,
        trace_id: header.trace_id.clone(),
        model_tag: header.model_tag.clone(),
        vocab_size: header.vocab_size,
        head_count: header.head_count,
        layers: header.layers.clone(),
        spans: to_spans(&trace.layout),
        tokens: trace.tokens.clone(),
        object_candidates: trace.object_candidates().iter().map(|k| k - 1).collect(),
        ground_truth_objects: trace.ground_truth_objects.clone(),
        marginal_prelim_identical: header.marginal_prelim_identical,
        blob_length: blob.len() as u64,
        tensors,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let manifest_len = u32::try_from(manifest_bytes.len()).map_err(|_| {
        std::io::Error::new(std::io::ErrorKind::InvalidData, "manifest exceeds 4 GiB")
    })?;

    let blob_start = align_up(PREAMBLE_LEN + manifest_bytes.len(), BLOB_ALIGNMENT);
    let mut out = Vec::with_capacity(blob_start + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&manifest_len.to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    out.resize(blob_start, 0);
    out.extend_from_slice(&blob);
    Ok(out)
}

/// Reads and validates a trace from a byte stream.
pub fn read_trace<R: Read>(mut source: R) -> Result<Trace, FormatError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_trace(&bytes)
}

pub fn read_trace_file(path: &Path) -> Result<Trace, FormatError> {
    decode_trace(&fs::read(path)?)
}

/// Decodes a trace, stopping at the first violation.
pub fn decode_trace(bytes: &[u8]) -> Result<Trace, FormatError> {
    let mut violations = Vec::new();
    let trace = decode_inner(bytes, &mut violations)?;
    match violations.into_iter().next() {
        Some(first) => Err(first),
        None => Ok(trace),
    }
}

/// Lists every violation found in a container. Structural errors end the
/// scan early; per-tensor content errors are all collected.
pub fn check_trace_bytes(bytes: &[u8]) -> Vec<FormatError> {
    let mut violations = Vec::new();
    if let Err(e) = decode_inner(bytes, &mut violations) {
        violations.insert(0, e);
    }
    violations
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, FormatError> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or(FormatError::Truncated {
            offset,
            needed: 4,
            available: bytes.len().saturating_sub(offset),
        })?;
    Ok(u32::from_le_bytes(slice.try_into().unwrap()))
}

fn decode_inner(bytes: &[u8], violations: &mut Vec<FormatError>) -> Result<Trace, FormatError> {
    if bytes.len() < MAGIC.len() {
        return Err(FormatError::Truncated {
            offset: 0,
            needed: MAGIC.len(),
            available: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic { offset: 0 });
    }
    let version = read_u32(bytes, 4)?;
    if version != CONTAINER_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            offset: 4,
        });
    }
    let manifest_len = read_u32(bytes, 8)? as usize;
    let manifest_end = PREAMBLE_LEN + manifest_len;
    if bytes.len() < manifest_end {
        return Err(FormatError::Truncated {
            offset: PREAMBLE_LEN,
            needed: manifest_len,
            available: bytes.len() - PREAMBLE_LEN,
        });
    }
    let manifest_err = |message: String| FormatError::Manifest {
        offset: PREAMBLE_LEN,
        message,
    };
    let manifest_text = std::str::from_utf8(&bytes[PREAMBLE_LEN..manifest_end])
        .map_err(|e| manifest_err(format!("not UTF-8: {e}")))?;
    let manifest: Manifest =
        serde_json::from_str(manifest_text).map_err(|e| manifest_err(e.to_string()))?;

    let blob_start = align_up(manifest_end, BLOB_ALIGNMENT);
    if bytes.len() < blob_start {
        return Err(FormatError::Truncated {
            offset: manifest_end,
            needed: blob_start - manifest_end,
            available: bytes.len() - manifest_end,
        });
    }
    if let Some(i) = bytes[manifest_end..blob_start].iter().position(|&b| b != 0) {
        return Err(FormatError::Padding {
            offset: manifest_end + i,
        });
    }
    let actual = (bytes.len() - blob_start) as u64;
    if actual != manifest.blob_length {
        return Err(FormatError::BlobLength {
            offset: blob_start,
            declared: manifest.blob_length,
            actual,
        });
    }
    let blob = &bytes[blob_start..];

    if manifest.schema_version != crate::trace::SCHEMA_VERSION {
        return Err(manifest_err(format!(
            "schema version {} is not supported",
            manifest.schema_version
        )));
    }
    let n = manifest.tokens.len();
    let layout = from_spans(&manifest.spans, n).map_err(manifest_err)?;
    if let Some(c) = manifest
        .object_candidates
        .iter()
        .find(|&&c| c < layout.m() || c >= n)
    {
        return Err(manifest_err(format!(
            "object candidate offset {c} is not an output position"
        )));
    }

    let vocab = manifest.vocab_size;
    let mut attention = BTreeMap::new();
    let mut logit_slices = BTreeMap::new();
    let mut marginal = BTreeMap::new();

    for entry in &manifest.tensors {
        let tensor_err = |offset: usize, message: String| FormatError::Tensor {
            tensor: entry.name.clone(),
            offset,
            message,
        };
        if entry.dtype != "f32" {
            return Err(tensor_err(
                PREAMBLE_LEN,
                format!("dtype `{}` is not f32", entry.dtype),
            ));
        }
        let end = entry.offset.checked_add(entry.length);
        if end.is_none_or(|e| e > manifest.blob_length) || entry.offset % 4 != 0 {
            return Err(tensor_err(
                PREAMBLE_LEN,
                format!(
                    "range {}+{} is outside the {}-byte blob or misaligned",
                    entry.offset, entry.length, manifest.blob_length
                ),
            ));
        }
        // both fit in the blob, which fits in memory
        let start = entry.offset as usize;
        let abs = blob_start + start;
        let count = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if count.and_then(|c| c.checked_mul(4)) != Some(entry.length as usize) {
            return Err(tensor_err(
                abs,
                format!(
                    "shape {:?} does not match byte length {}",
                    entry.shape, entry.length
                ),
            ));
        }
        let kind = parse_tensor_name(&entry.name)
            .ok_or_else(|| tensor_err(abs, "unrecognized tensor name".into()))?;
        let expected = match kind {
            TensorKind::Attention { position, .. } => vec![position - 1],
            TensorKind::Logits { .. } => vec![vocab],
            TensorKind::Marginal { .. } => {
                let refs = entry.shape.first().copied().unwrap_or(0);
                vec![refs.max(1), vocab]
            }
        };
        if entry.shape != expected {
            return Err(FormatError::ShapeMismatch {
                tensor: entry.name.clone(),
                offset: abs,
                expected,
                found: entry.shape.clone(),
            });
        }
        let raw = &blob[start..start + entry.length as usize];
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            violations.push(tensor_err(abs + 4 * i, format!("value {i} is not finite")));
        }

        let duplicate = match kind {
            TensorKind::Attention { layer, position } => {
                if !layout.is_output(position) {
                    return Err(tensor_err(abs, "not an output position".into()));
                }
                let row = AttentionRow {
                    position,
                    layer,
                    weights: values,
                };
                let sum = row.sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    violations.push(FormatError::RowSum {
                        layer,
                        position,
                        sum,
                        offset: abs,
                    });
                }
                attention.insert((layer, position), row).is_some()
            }
            TensorKind::Logits { position } => logit_slices
                .insert(
                    position,
                    LogitSlice {
                        position,
                        logits: values,
                    },
                )
                .is_some(),
            TensorKind::Marginal { position } => marginal
                .insert(
                    position,
                    MarginalLogits {
                        position,
                        reference_count: entry.shape[0],
                        vocab_size: vocab,
                        matrix: values,
                    },
                )
                .is_some(),
        };
        if duplicate {
            return Err(tensor_err(abs, "duplicate tensor".into()));
        }
    }

    let trace = Trace {
        header: TraceHeader {
            trace_id: manifest.trace_id,
            model_tag: manifest.model_tag,
            vocab_size: manifest.vocab_size,
            head_count: manifest.head_count,
            layers: manifest.layers,
            schema_version: manifest.schema_version,
            marginal_prelim_identical: manifest.marginal_prelim_identical,
        },
        layout,
        tokens: manifest.tokens,
        attention,
        logit_slices,
        marginal,
        ground_truth_objects: manifest.ground_truth_objects,
    };
    if violations.is_empty() {
        trace.validate().map_err(|source| FormatError::Invariant {
            offset: PREAMBLE_LEN,
            source,
        })?;
    }
    Ok(trace)
}

/// Sorted list of trace files directly inside `dir`.
pub fn list_corpus(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == TRACE_EXTENSION) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

#[derive(Debug)]
pub struct FileReport {
    pub path: PathBuf,
    pub violations: Vec<String>,
}

impl FileReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct ValidationReport {
    pub files: Vec<FileReport>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.files.iter().all(FileReport::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FileReport> {
        self.files.iter().filter(|f| !f.passed())
    }

    /// Process exit status: nonzero iff any file failed.
    pub fn exit_status(&self) -> i32 {
        i32::from(!self.all_passed())
    }
}

pub fn validate_files(paths: &[PathBuf]) -> ValidationReport {
    let mut files: Vec<FileReport> = paths
        .par_iter()
        .map(|path| {
            let violations = match fs::read(path) {
                Ok(bytes) => check_trace_bytes(&bytes)
                    .into_iter()
                    .map(|e| e.to_string())
                    .collect(),
                Err(e) => vec![format!("unreadable: {e}")],
            };
            FileReport {
                path: path.clone(),
                violations,
            }
        })
        .collect();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    ValidationReport { files }
}

/// Validates every trace file in a directory.
pub fn validate_corpus(dir: &Path) -> std::io::Result<ValidationReport> {
    Ok(validate_files(&list_corpus(dir)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::SCHEMA_VERSION;

    fn header(vocab_size: usize) -> TraceHeader {
        TraceHeader {
            trace_id: "t0".into(),
            model_tag: "unit".into(),
            vocab_size,
            head_count: 2,
            layers: vec![0],
            schema_version: SCHEMA_VERSION,
            marginal_prelim_identical: true,
        }
    }

    // BOS, one image token, output of one token: n = 3, m = 2
    fn minimal() -> Trace {
        let layout = SpanLayout::from_lengths(1, 1, 0, 3).unwrap();
        let mut attention = BTreeMap::new();
        attention.insert(
            (0, 3),
            AttentionRow {
                position: 3,
                layer: 0,
                weights: vec![0.25, 0.75],
            },
        );
        Trace {
            header: header(4),
            layout,
            tokens: vec![
                Token::new(0, "<s>"),
                Token::new(1, "<image>"),
                Token::new(2, " cat"),
            ],
            attention,
            logit_slices: BTreeMap::new(),
            marginal: BTreeMap::new(),
            ground_truth_objects: vec!["cat".into()],
        }
    }

    #[test]
    fn minimal_round_trip() {
        let t = minimal();
        let mut buf = Vec::new();
        let written = write_trace(&t, &mut buf).unwrap();
        assert_eq!(written as usize, buf.len());
        assert_eq!(read_trace(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn marginal_round_trip_preserves_shape() {
        let mut t = minimal();
        t.logit_slices.insert(
            3,
            LogitSlice {
                position: 3,
                logits: vec![0.0, 1.0, 2.0, 3.0],
            },
        );
        t.marginal.insert(
            3,
            MarginalLogits::new(3, vec![vec![0.1, 0.2, 0.3, 0.4], vec![1.0, -1.0, 0.5, 0.0]])
                .unwrap(),
        );
        let bytes = encode_trace(&t).unwrap();
        let back = decode_trace(&bytes).unwrap();
        assert_eq!(back, t);
        let m = &back.marginal[&3];
        assert_eq!((m.reference_count, m.vocab_size), (2, 4));
    }

    #[test]
    fn nan_logit_refused() {
        let mut t = minimal();
        t.logit_slices.insert(
            3,
            LogitSlice {
                position: 3,
                logits: vec![0.0, f32::NAN, 0.0, 0.0],
            },
        );
        let mut buf = Vec::new();
        let err = write_trace(&t, &mut buf).unwrap_err();
        assert!(matches!(
            err,
            FormatError::InvalidTrace(TraceError::LogitSlice { .. })
        ));
        assert!(buf.is_empty());
    }

    #[test]
    fn blob_is_aligned() {
        let bytes = encode_trace(&minimal()).unwrap();
        let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let blob_start = align_up(12 + manifest_len, 64);
        assert_eq!(blob_start % 64, 0);
        assert_eq!(bytes.len() - blob_start, 8);
        assert!(bytes[12 + manifest_len..blob_start].iter().all(|&b| b == 0));
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode_trace(&minimal()).unwrap();
        bytes[0] = b'X';
        let err = decode_trace(&bytes).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
        assert_eq!(err.offset(), Some(0));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_trace(&minimal()).unwrap();
        bytes[4] = 2;
        let err = decode_trace(&bytes).unwrap_err();
        assert!(matches!(
            err,
            FormatError::UnsupportedVersion {
                found: 2,
                offset: 4
            }
        ));
    }

    #[test]
    fn truncated_blob() {
        let bytes = encode_trace(&minimal()).unwrap();
        let err = decode_trace(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, FormatError::BlobLength { .. }));
        let err = decode_trace(&bytes[..20]).unwrap_err();
        assert!(matches!(err, FormatError::Truncated { offset: 12, .. }));
    }

    #[test]
    fn scaled_row_reports_row_sum() {
        let mut bytes = encode_trace(&minimal()).unwrap();
        let n = bytes.len();
        // the attention row is the whole blob: [0.25, 0.75] -> [0.5, 1.5]
        bytes[n - 8..n - 4].copy_from_slice(&0.5f32.to_le_bytes());
        bytes[n - 4..].copy_from_slice(&1.5f32.to_le_bytes());
        let err = decode_trace(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row sum 2.0"), "{msg}");
        assert!(msg.contains("position 3"), "{msg}");
        assert!(matches!(
            err,
            FormatError::RowSum {
                layer: 0,
                position: 3,
                ..
            }
        ));
    }

    #[test]
    fn check_collects_all_row_violations() {
        let mut t = minimal();
        t.tokens.push(Token::new(3, " dog"));
        t.layout = SpanLayout::from_lengths(1, 1, 0, 4).unwrap();
        t.attention.insert(
            (0, 4),
            AttentionRow {
                position: 4,
                layer: 0,
                weights: vec![0.2, 0.3, 0.5],
            },
        );
        let mut bytes = encode_trace(&t).unwrap();
        let n = bytes.len();
        // scale every weight of both rows by 3
        for chunk in bytes[n - 20..].chunks_exact_mut(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap()) * 3.0;
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        let violations = check_trace_bytes(&bytes);
        assert_eq!(violations.len(), 2);
    }

    #[test]
    fn shape_mismatch_detected() {
        let mut t = minimal();
        t.logit_slices.insert(
            3,
            LogitSlice {
                position: 3,
                logits: vec![0.0; 4],
            },
        );
        let bytes = encode_trace(&t).unwrap();
        let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut manifest: Manifest = serde_json::from_slice(&bytes[12..12 + manifest_len]).unwrap();
        manifest.vocab_size = 2;
        let err = decode_trace(&reassemble(&manifest, &bytes, manifest_len)).unwrap_err();
        assert!(matches!(err, FormatError::ShapeMismatch { .. }), "{err}");
    }

    fn reassemble(manifest: &Manifest, original: &[u8], old_len: usize) -> Vec<u8> {
        let blob = &original[align_up(12 + old_len, 64)..];
        let text = serde_json::to_vec(manifest).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(&text);
        out.resize(align_up(out.len(), 64), 0);
        out.extend_from_slice(blob);
        out
    }

    #[test]
    fn tensor_outside_blob() {
        let bytes = encode_trace(&minimal()).unwrap();
        let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut manifest: Manifest = serde_json::from_slice(&bytes[12..12 + manifest_len]).unwrap();
        manifest.tensors[0].offset = u64::MAX - 2;
        let err = decode_trace(&reassemble(&manifest, &bytes, manifest_len)).unwrap_err();
        assert!(matches!(err, FormatError::Tensor { .. }), "{err}");
    }

    #[test]
    fn empty_directory_validates() {
        let dir = tempfile::tempdir().unwrap();
        let report = validate_corpus(dir.path()).unwrap();
        assert!(report.files.is_empty());
        assert!(report.all_passed());
        assert_eq!(report.exit_status(), 0);
    }

    #[test]
    fn corpus_report_names_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = encode_trace(&minimal()).unwrap();
        fs::write(dir.path().join("a.past"), &bytes).unwrap();
        fs::write(dir.path().join("b.past"), &bytes[..bytes.len() / 2]).unwrap();
        fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let report = validate_corpus(dir.path()).unwrap();
        assert_eq!(report.files.len(), 2);
        let failed: Vec<_> = report.failures().collect();
        assert_eq!(failed.len(), 1);
        assert!(failed[0].path.ends_with("b.past"));
        assert_eq!(report.exit_status(), 1);
    }

    #[test]
    fn unreadable_directory_errors() {
        assert!(validate_corpus(Path::new("/nonexistent/paskit/dir")).is_err());
    }
}
