//! Two-mode synthetic trace generator.
//!
//! Every object slot is drawn either in the image-reliant mode (labeled
//! real) or in the prelim-reliant mode (labeled hallucinated). In the
//! prelim-reliant mode a fraction of the attention mass that would go to
//! the image is moved onto the previously generated tokens at the signal
//! layer, the conditional next-token distribution loses its image boost,
//! and the reference-image logits stop depending on which image is shown.
//!
//! Random draws never depend on the mode shift, so two corpora generated
//! with the same seed differ only in the moved attention mass.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{encode_trace, FormatError, TRACE_EXTENSION};
use crate::matching::{regular_plural, ClassVocabulary, Label, VOC_CLASSES};
use crate::trace::{
    AttentionRow, LogitSlice, MarginalLogits, SpanLayout, Token, Trace, TraceHeader, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Expected attention mass per token type in the image-reliant mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleMass {
    pub bos: f64,
    pub image: f64,
    pub instruction: f64,
    pub prelim: f64,
}

impl Default for RoleMass {
    fn default() -> Self {
        Self {
            bos: 0.15,
            image: 0.45,
            instruction: 0.15,
            prelim: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_traces: usize,
    pub vocab_size: usize,
    /// Recorded in the trace header only; rows are already head-averaged.
    pub head_count: usize,
    pub layers: usize,
    /// Layer that carries the mode signal.
    pub signal_layer: u32,
    pub image_len: usize,
    pub instruction_len: usize,
    pub output_len: usize,
    pub objects_per_trace: usize,
    pub class_count: usize,
    /// Expected attention mass moved from image to prelim in the
    /// prelim-reliant mode.
    pub mode_shift: f64,
    pub hallucination_rate: f64,
    /// Dirichlet concentration of the role masses; higher is sharper.
    pub concentration: f64,
    pub reference_count: usize,
    pub role_mass: RoleMass,
    pub logit_noise: f64,
    pub prelim_logit_boost: f64,
    pub image_logit_boost: f64,
    pub reference_noise: f64,
    pub plural_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_traces: 100,
            vocab_size: 64,
            head_count: 8,
            layers: 4,
            signal_layer: 0,
            image_len: 16,
            instruction_len: 8,
            output_len: 24,
            objects_per_trace: 4,
            class_count: 8,
            mode_shift: 0.3,
            hallucination_rate: 0.3,
            concentration: 50.0,
            reference_count: 8,
            role_mass: RoleMass::default(),
            logit_noise: 1.0,
            prelim_logit_boost: 2.0,
            image_logit_boost: 4.0,
            reference_noise: 0.3,
            plural_rate: 0.25,
        }
    }
}

/// Tokens an object phrase may span.
const MAX_OBJECT_TOKENS: usize = 2;

const PROMPT: &[&str] = &[
    " Please",
    " help",
    " me",
    " describe",
    " the",
    " image",
    " in",
    " detail",
    ".",
];

const FILLER: &[&str] = &[
    " a", " the", " there", " is", " and", " with", " on", " near", " of", " some", " next", " to",
    " in", " large", " small", " picture", " shows", " left", " right", " side",
];

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.image_len == 0 || self.instruction_len == 0 || self.output_len == 0 {
            return bad("span lengths must be at least 1".into());
        }
        if self.layers == 0 || self.head_count == 0 || self.reference_count == 0 {
            return bad("layers, head_count and reference_count must be at least 1".into());
        }
        if self.signal_layer as usize >= self.layers {
            return bad(format!(
                "signal_layer {} is not below the layer count {}",
                self.signal_layer, self.layers
            ));
        }
        if !(2..=VOC_CLASSES.len()).contains(&self.class_count) {
            return bad(format!("class_count must be in 2..={}", VOC_CLASSES.len()));
        }
        if self.objects_per_trace == 0
            || self.output_len < self.objects_per_trace * (MAX_OBJECT_TOKENS + 1)
        {
            return bad(format!(
                "output_len {} cannot hold {} objects (need {} tokens each)",
                self.output_len,
                self.objects_per_trace,
                MAX_OBJECT_TOKENS + 1
            ));
        }
        let rm = self.role_mass;
        let masses = [rm.bos, rm.image, rm.instruction, rm.prelim];
        if masses.iter().any(|&m| m <= 0.0 || m.is_nan())
            || ((masses.iter().sum::<f64>()) - 1.0).abs() > 1e-9
        {
            return bad("role masses must be positive and sum to 1".into());
        }
        if !(0.0..=1.0).contains(&self.mode_shift) || self.mode_shift > rm.image {
            return bad(format!(
                "mode_shift {} must lie in [0, image mass {}]",
                self.mode_shift, rm.image
            ));
        }
        if self.mode_shift + rm.prelim > 1.0 {
            return bad("mode_shift plus prelim mass exceeds 1".into());
        }
        if !(self.hallucination_rate > 0.0 && self.hallucination_rate < 1.0) {
            return bad("hallucination_rate must lie in (0, 1)".into());
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad("concentration must be positive".into());
        }
        let noise = [self.logit_noise, self.reference_noise];
        if noise.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return bad("noise scales must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.plural_rate) {
            return bad("plural_rate must lie in [0, 1]".into());
        }
        let pieces = PieceTable::new(self.class_count).len();
        if self.vocab_size < pieces {
            return bad(format!(
                "vocab_size {} is smaller than the {pieces} simulator pieces",
                self.vocab_size
            ));
        }
        Ok(())
    }

    pub fn classes(&self) -> Vec<String> {
        VOC_CLASSES[..self.class_count]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    /// Vocabulary that recovers every simulated mention.
    pub fn vocabulary(&self) -> ClassVocabulary {
        ClassVocabulary::from_classes(&self.classes()).expect("non-empty class list")
    }

    pub fn trace_id(&self, index: usize) -> String {
        format!("sim-{:016x}-{index:06}", self.seed)
    }
}

/// Splits a word into subword pieces; long words become two pieces.
fn word_pieces(word: &str, first: bool) -> Vec<String> {
    let lead = if first { " " } else { "" };
    if word.chars().count() >= 8 {
        let cut = word.char_indices().nth(4).map_or(word.len(), |(i, _)| i);
        vec![format!("{lead}{}", &word[..cut]), word[cut..].to_string()]
    } else {
        vec![format!("{lead}{word}")]
    }
}

/// Pieces of an object phrase; every word begins with a space.
fn phrase_pieces(phrase: &str) -> Vec<String> {
    phrase
        .split(' ')
        .flat_map(|w| word_pieces(w, true))
        .collect()
}

struct PieceTable {
    ids: BTreeMap<String, u32>,
}

impl PieceTable {
    fn new(class_count: usize) -> Self {
        let mut pieces: BTreeSet<String> = BTreeSet::new();
        pieces.extend(PROMPT.iter().map(|s| s.to_string()));
        pieces.extend(FILLER.iter().map(|s| s.to_string()));
        for class in &VOC_CLASSES[..class_count] {
            pieces.extend(phrase_pieces(class));
            pieces.extend(phrase_pieces(&regular_plural(class)));
        }
        let mut ids = BTreeMap::new();
        ids.insert("<s>".to_string(), 0);
        ids.insert("<image>".to_string(), 1);
        for (i, p) in pieces.into_iter().enumerate() {
            ids.insert(p, i as u32 + 2);
        }
        Self { ids }
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn token(&self, piece: &str) -> Token {
        Token::new(self.ids[piece], piece)
    }
}

/// Ground-truth label of one simulated object mention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionLabel {
    pub trace_id: String,
    pub position: usize,
    pub class: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub trace: Trace,
    pub labels: Vec<MentionLabel>,
}

/// Moves `fraction` of the image mass of `weights` (a row for 1-based
/// position `position`) onto the prelim positions, proportionally to their
/// current weights. Returns the mass moved.
pub fn shift_image_mass(
    weights: &mut [f64],
    layout: &SpanLayout,
    position: usize,
    fraction: f64,
) -> f64 {
    let prelim = layout.output_start()..position;
    if prelim.is_empty() || fraction <= 0.0 {
        return 0.0;
    }
    let image = layout.image_span();
    let mut moved = 0.0;
    for j in image {
        let take = weights[j - 1] * fraction;
        weights[j - 1] -= take;
        moved += take;
    }
    let prelim_sum: f64 = prelim.clone().map(|j| weights[j - 1]).sum();
    let count = prelim.len() as f64;
    for j in prelim {
        let share = if prelim_sum > 0.0 {
            weights[j - 1] / prelim_sum
        } else {
            1.0 / count
        };
        weights[j - 1] += moved * share;
    }
    moved
}

/// Attention row with Dirichlet role masses and flat within-role weights.
fn draw_row(
    rng: &mut ChaCha8Rng,
    layout: &SpanLayout,
    position: usize,
    config: &SimConfig,
) -> Vec<f64> {
    let rm = config.role_mass;
    let spans = [
        (layout.bos_span(), rm.bos),
        (layout.image_span(), rm.image),
        (layout.instruction_span(), rm.instruction),
        (layout.output_start()..position, rm.prelim),
    ];
    let active_total: f64 = spans
        .iter()
        .filter(|(s, _)| !s.is_empty())
        .map(|(_, m)| m)
        .sum();
    let mut role_draws = [0.0f64; 4];
    for (draw, (span, mass)) in role_draws.iter_mut().zip(&spans) {
        if !span.is_empty() {
            let shape = config.concentration * mass / active_total;
            *draw = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        }
    }
    let draw_total: f64 = role_draws.iter().sum();
    let mut weights = vec![0.0; position - 1];
    for (draw, (span, _)) in role_draws.iter().zip(&spans) {
        if span.is_empty() {
            continue;
        }
        let raw: Vec<f64> = span.clone().map(|_| Exp1.sample(rng)).collect();
        let raw_total: f64 = raw.iter().sum();
        let role_mass = if draw_total > 0.0 {
            draw / draw_total
        } else {
            0.0
        };
        for (j, r) in span.clone().zip(raw) {
            weights[j - 1] = role_mass * r / raw_total;
        }
    }
    if draw_total == 0.0 {
        // every gamma underflowed; fall back to uniform
        let u = 1.0 / weights.len() as f64;
        weights.iter_mut().for_each(|w| *w = u);
    }
    weights
}

struct Slot {
    offset: usize,
    class_index: usize,
    plural: bool,
    label: Label,
}

/// Generates trace `index` of the corpus described by `config`.
pub fn generate_trace(config: &SimConfig, index: usize) -> Result<SimTrace, SimError> {
    config.validate()?;
    let table = PieceTable::new(config.class_count);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let classes = config.classes();
    let mut shuffled: Vec<usize> = (0..config.class_count).collect();
    shuffled.shuffle(&mut rng);
    let (present, absent) = shuffled.split_at(config.class_count / 2);

    let layout = SpanLayout::from_lengths(1, config.image_len, config.instruction_len, {
        1 + config.image_len + config.instruction_len + config.output_len
    })
    .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let m = layout.m();

    let segment = config.output_len / config.objects_per_trace;
    let mut slots = Vec::with_capacity(config.objects_per_trace);
    for s in 0..config.objects_per_trace {
        let lo = (s * segment).max(1);
        let hi = (s + 1) * segment - MAX_OBJECT_TOKENS;
        let offset = rng.random_range(lo..=hi);
        let label = if rng.random_bool(config.hallucination_rate) {
            Label::Hallucinated
        } else {
            Label::Real
        };
        let pool = if label == Label::Real {
            present
        } else {
            absent
        };
        let class_index = *pool.choose(&mut rng).expect("non-empty class pool");
        let plural = rng.random_bool(config.plural_rate);
        slots.push(Slot {
            offset,
            class_index,
            plural,
            label,
        });
    }

    let mut tokens = vec![table.token("<s>")];
    tokens.extend((0..config.image_len).map(|_| table.token("<image>")));
    tokens.extend((0..config.instruction_len).map(|i| table.token(PROMPT[i % PROMPT.len()])));

    // position -> (slot index) for object starts
    let mut object_at: BTreeMap<usize, usize> = BTreeMap::new();
    let mut slot_iter = slots.iter().enumerate().peekable();
    let mut offset = 0;
    while offset < config.output_len {
        match slot_iter.peek() {
            Some((i, slot)) if slot.offset == offset => {
                let class = &classes[slot.class_index];
                let phrase = if slot.plural {
                    regular_plural(class)
                } else {
                    class.clone()
                };
                let pieces = phrase_pieces(&phrase);
                object_at.insert(m + offset + 1, *i);
                for p in &pieces {
                    tokens.push(table.token(p));
                }
                offset += pieces.len();
                slot_iter.next();
            }
            _ => {
                let word = FILLER.choose(&mut rng).expect("filler list");
                tokens.push(table.token(word));
                offset += 1;
            }
        }
    }
    debug_assert_eq!(tokens.len(), layout.n());

    let header = TraceHeader {
        trace_id: config.trace_id(index),
        model_tag: "simulator".into(),
        vocab_size: config.vocab_size,
        head_count: config.head_count,
        layers: (0..config.layers as u32).collect(),
        schema_version: SCHEMA_VERSION,
        marginal_prelim_identical: true,
    };

    let shift_fraction = config.mode_shift / config.role_mass.image;
    let logit_noise = Normal::new(0.0, config.logit_noise).expect("finite sd");
    let reference_noise = Normal::new(0.0, config.reference_noise).expect("finite sd");
    let mut attention = BTreeMap::new();
    let mut logit_slices = BTreeMap::new();
    let mut marginal = BTreeMap::new();

    let candidates: Vec<usize> = layout
        .output_span()
        .filter(|&k| tokens[k - 1].begins_word())
        .collect();
    for &k in &candidates {
        let slot = object_at.get(&k).map(|&i| &slots[i]);
        let hallucinated = slot.is_some_and(|s| s.label == Label::Hallucinated);

        for layer in 0..config.layers as u32 {
            let mut row = draw_row(&mut rng, &layout, k, config);
            if hallucinated && layer == config.signal_layer {
                shift_image_mass(&mut row, &layout, k, shift_fraction);
            }
            attention.insert(
                (layer, k),
                AttentionRow {
                    position: k,
                    layer,
                    weights: row.into_iter().map(|w| w as f32).collect(),
                },
            );
        }

        let y = tokens[k - 1].id as usize;
        let mut prelim_only: Vec<f64> = (0..config.vocab_size)
            .map(|_| logit_noise.sample(&mut rng))
            .collect();
        prelim_only[y] += config.prelim_logit_boost;

        let mut conditional: Vec<f64> = prelim_only
            .iter()
            .map(|z| z + reference_noise.sample(&mut rng))
            .collect();
        if !hallucinated {
            conditional[y] += config.image_logit_boost;
        }
        let mut rows = Vec::with_capacity(config.reference_count);
        for i in 0..config.reference_count {
            let mut row: Vec<f64> = prelim_only
                .iter()
                .map(|z| z + reference_noise.sample(&mut rng))
                .collect();
            // only the reference image showing this class lifts the object
            let shows_class = slot.is_some_and(|s| s.class_index == i % config.class_count);
            if !hallucinated && shows_class {
                row[y] += config.image_logit_boost;
            }
            rows.push(row.into_iter().map(|z| z as f32).collect());
        }
        logit_slices.insert(
            k,
            LogitSlice {
                position: k,
                logits: conditional.into_iter().map(|z| z as f32).collect(),
            },
        );
        marginal.insert(k, MarginalLogits::new(k, rows).expect("equal row lengths"));
    }

    let trace = Trace {
        header,
        layout,
        tokens,
        attention,
        logit_slices,
        marginal,
        ground_truth_objects: present.iter().map(|&i| classes[i].clone()).collect(),
    };
    let labels = object_at
        .iter()
        .map(|(&position, &i)| MentionLabel {
            trace_id: trace.header.trace_id.clone(),
            position,
            class: classes[slots[i].class_index].clone(),
            label: slots[i].label,
        })
        .collect();
    Ok(SimTrace { trace, labels })
}

/// Generates `config.n_traces` traces in parallel, in index order.
pub fn generate_traces(config: &SimConfig) -> Result<Vec<SimTrace>, SimError> {
    config.validate()?;
    (0..config.n_traces)
        .into_par_iter()
        .map(|i| generate_trace(config, i))
        .collect()
}

#[derive(Debug, Clone)]
pub struct CorpusSummary {
    pub trace_files: Vec<PathBuf>,
    pub label_file: PathBuf,
    pub mentions: usize,
}

pub const LABEL_FILE: &str = "labels.csv";

pub fn write_labels<W: Write>(labels: &[MentionLabel], mut out: W) -> std::io::Result<()> {
    writeln!(out, "trace_id,k,label")?;
    for l in labels {
        writeln!(out, "{},{},{}", l.trace_id, l.position, l.label)?;
    }
    Ok(())
}

/// Writes one container per trace plus `labels.csv` into `dir`.
pub fn generate_corpus(config: &SimConfig, dir: &Path) -> Result<CorpusSummary, SimError> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let written: Vec<(PathBuf, Vec<MentionLabel>)> = (0..config.n_traces)
        .into_par_iter()
        .map(|i| {
            let sim = generate_trace(config, i)?;
            let bytes = encode_trace(&sim.trace)?;
            let path = dir.join(format!("{}.{TRACE_EXTENSION}", sim.trace.header.trace_id));
            write_atomic(&path, &bytes)?;
            Ok((path, sim.labels))
        })
        .collect::<Result<_, SimError>>()?;

    let mut trace_files = Vec::with_capacity(written.len());
    let mut labels = Vec::new();
    for (path, l) in written {
        trace_files.push(path);
        labels.extend(l);
    }
    let mut buf = Vec::new();
    write_labels(&labels, &mut buf)?;
    let label_file = dir.join(LABEL_FILE);
    write_atomic(&label_file, &buf)?;
    Ok(CorpusSummary {
        trace_files,
        label_file,
        mentions: labels.len(),
    })
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
