//! CHAIR-style object discovery: case-insensitive, word-boundary string
//! matching of class names and synonyms against the generated text, then
//! labeling against the image's ground-truth object list.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::Trace;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("synonym `{surface}` maps to unknown class `{class}`")]
    UnknownClass { surface: String, class: String },
    #[error("class vocabulary is empty")]
    Empty,
    #[error("reading vocabulary: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing vocabulary: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Hallucinated,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Hallucinated => "hallucinated",
            Label::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(Label::Real),
            "hallucinated" => Ok(Label::Hallucinated),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// An object-token occurrence in one trace. `position` is the 1-based
/// position of the first subword token of the matched phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMention {
    pub trace_id: String,
    pub position: usize,
    pub class: String,
    pub surface: String,
    pub label: Label,
}

/// On-disk vocabulary file: `{"classes": [...], "synonyms": {"surface": "class"}}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub classes: Vec<String>,
    #[serde(default)]
    pub synonyms: BTreeMap<String, String>,
}

/// Class names plus a lowercase surface-form lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassVocabulary {
    classes: Vec<String>,
    synonyms: BTreeMap<String, String>,
    // synonym keys as lowercase char vectors, longest first
    patterns: Vec<(Vec<char>, String)>,
}

fn lower(s: &str) -> String {
    s.chars().flat_map(char::to_lowercase).collect()
}

/// Regular English plural of the last word of `name`.
pub fn regular_plural(name: &str) -> String {
    let (head, last) = match name.rsplit_once(' ') {
        Some((h, l)) => (format!("{h} "), l),
        None => (String::new(), name),
    };
    let plural = if ["s", "x", "z", "ch", "sh"]
        .iter()
        .any(|e| last.ends_with(e))
    {
        format!("{last}es")
    } else if last.ends_with('y')
        && !last[..last.len() - 1].ends_with(|c: char| "aeiou".contains(c))
    {
        format!("{}ies", &last[..last.len() - 1])
    } else {
        format!("{last}s")
    };
    head + &plural
}

impl ClassVocabulary {
    /// Identity and regular plural entries for every class. Identity
    /// entries win over generated plurals, and `extra` synonyms win over
    /// both.
    pub fn new(classes: Vec<String>, extra: BTreeMap<String, String>) -> Result<Self, VocabError> {
        if classes.is_empty() {
            return Err(VocabError::Empty);
        }
        let known: BTreeSet<String> = classes.iter().map(|c| lower(c)).collect();
        let canonical: BTreeMap<String, String> =
            classes.iter().map(|c| (lower(c), c.clone())).collect();
        let mut synonyms = BTreeMap::new();
        for class in &classes {
            synonyms.insert(lower(&regular_plural(class)), class.clone());
        }
        for class in &classes {
            synonyms.insert(lower(class), class.clone());
        }
        for (surface, class) in extra {
            let key = lower(&class);
            if !known.contains(&key) {
                return Err(VocabError::UnknownClass { surface, class });
            }
            synonyms.insert(lower(&surface), canonical[&key].clone());
        }
        let mut patterns: Vec<(Vec<char>, String)> = synonyms
            .iter()
            .map(|(s, c)| (s.chars().collect(), c.clone()))
            .collect();
        patterns.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Self {
            classes,
            synonyms,
            patterns,
        })
    }

    pub fn from_classes<S: AsRef<str>>(classes: &[S]) -> Result<Self, VocabError> {
        Self::new(
            classes.iter().map(|c| c.as_ref().to_string()).collect(),
            BTreeMap::new(),
        )
    }

    pub fn from_file(file: VocabularyFile) -> Result<Self, VocabError> {
        Self::new(file.classes, file.synonyms)
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file(serde_json::from_str(&text)?)
    }

    /// The 80 COCO object classes.
    pub fn coco() -> Self {
        Self::from_classes(COCO_CLASSES).expect("builtin vocabulary")
    }

    /// The 20 Pascal VOC object classes.
    pub fn pascal_voc() -> Self {
        Self::from_classes(VOC_CLASSES).expect("builtin vocabulary")
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn synonyms(&self) -> &BTreeMap<String, String> {
        &self.synonyms
    }

    /// Case-insensitive synonym lookup.
    pub fn lookup(&self, surface: &str) -> Option<&str> {
        self.synonyms.get(&lower(surface)).map(String::as_str)
    }

    pub fn contains_class(&self, class: &str) -> bool {
        let key = lower(class);
        self.classes.iter().any(|c| lower(c) == key)
    }

    pub fn to_file(&self) -> VocabularyFile {
        VocabularyFile {
            classes: self.classes.clone(),
            synonyms: self.synonyms.clone(),
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Finds object mentions in the output span of `trace`. Each match is
/// anchored at the output token that contains its first character.
pub fn discover_mentions(trace: &Trace, vocab: &ClassVocabulary) -> Vec<ObjectMention> {
    // lowercased output text with the owning position of every char
    let mut text: Vec<char> = Vec::new();
    let mut owner: Vec<usize> = Vec::new();
    let mut original: Vec<char> = Vec::new();
    for k in trace.layout.output_span() {
        for c in trace.tokens[k - 1].surface.chars() {
            let c = if c == '\u{2581}' { ' ' } else { c };
            for lc in c.to_lowercase() {
                text.push(lc);
                owner.push(k);
                original.push(c);
            }
        }
    }

    let mut mentions = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let at_word_start = is_word_char(text[i]) && (i == 0 || !is_word_char(text[i - 1]));
        if !at_word_start {
            i += 1;
            continue;
        }
        let hit = vocab.patterns.iter().find(|(pattern, _)| {
            let end = i + pattern.len();
            end <= text.len()
                && text[i..end] == pattern[..]
                && (end == text.len() || !is_word_char(text[end]))
        });
        match hit {
            Some((pattern, class)) => {
                let end = i + pattern.len();
                let surface: String = original[i..end].iter().collect();
                mentions.push(ObjectMention {
                    trace_id: trace.header.trace_id.clone(),
                    position: owner[i],
                    class: class.clone(),
                    surface,
                    label: Label::Unlabeled,
                });
                i = end;
            }
            None => {
                while i < text.len() && is_word_char(text[i]) {
                    i += 1;
                }
            }
        }
    }
    mentions
}

/// Real if the mention's class is in the ground-truth list, else
/// Hallucinated. Class comparison is case-insensitive.
pub fn label_mentions(
    mut mentions: Vec<ObjectMention>,
    ground_truth: &[String],
) -> Vec<ObjectMention> {
    let truth: BTreeSet<String> = ground_truth.iter().map(|c| lower(c)).collect();
    for m in &mut mentions {
        m.label = if truth.contains(&lower(&m.class)) {
            Label::Real
        } else {
            Label::Hallucinated
        };
    }
    mentions
}

/// Discovers and labels mentions against the trace's own ground truth.
pub fn labeled_mentions(trace: &Trace, vocab: &ClassVocabulary) -> Vec<ObjectMention> {
    label_mentions(discover_mentions(trace, vocab), &trace.ground_truth_objects)
}

pub const VOC_CLASSES: &[&str] = &[
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "dining table",
    "dog",
    "horse",
    "motorbike",
    "person",
    "potted plant",
    "sheep",
    "sofa",
    "train",
    "tv monitor",
];

pub const COCO_CLASSES: &[&str] = &[
    "person",
    "bicycle",
    "car",
    "motorcycle",
    "airplane",
    "bus",
    "train",
    "truck",
    "boat",
    "traffic light",
    "fire hydrant",
    "stop sign",
    "parking meter",
    "bench",
    "bird",
    "cat",
    "dog",
    "horse",
    "sheep",
    "cow",
    "elephant",
    "bear",
    "zebra",
    "giraffe",
    "backpack",
    "umbrella",
    "handbag",
    "tie",
    "suitcase",
    "frisbee",
    "skis",
    "snowboard",
    "sports ball",
    "kite",
    "baseball bat",
    "baseball glove",
    "skateboard",
    "surfboard",
    "tennis racket",
    "bottle",
    "wine glass",
    "cup",
    "fork",
    "knife",
    "spoon",
    "bowl",
    "banana",
    "apple",
    "sandwich",
    "orange",
    "broccoli",
    "carrot",
    "hot dog",
    "pizza",
    "donut",
    "cake",
    "chair",
    "couch",
    "potted plant",
    "bed",
    "dining table",
    "toilet",
    "tv",
    "laptop",
    "mouse",
    "remote",
    "keyboard",
    "cell phone",
    "microwave",
    "oven",
    "toaster",
    "sink",
    "refrigerator",
    "book",
    "clock",
    "vase",
    "scissors",
    "teddy bear",
    "hair drier",
    "toothbrush",
];
