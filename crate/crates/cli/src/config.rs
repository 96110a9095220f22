use std::path::Path;

use anyhow::{Context, Result};
use paskit_core::scoring::Detector;
use paskit_core::sim::SimConfig;
use serde::Deserialize;

use crate::{usage, Command, Format, Run};

/// Contents of a `--config` TOML file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub simulate: Option<SimConfig>,
    pub score: ScoreSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub vocab: Option<String>,
    pub detectors: Option<Vec<String>>,
    pub layer: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub format: Option<Vec<Format>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub vocab: Option<String>,
    pub layers: Option<Vec<u32>>,
    pub layer: Option<u32>,
}

/// Vocabulary file the simulator leaves next to its traces.
pub const CORPUS_VOCAB: &str = "vocab.json";

fn detector_names(list: &str) -> Result<Vec<String>> {
    let parsed = Detector::parse_list(list).map_err(|e| usage(e.to_string()))?;
    if parsed.is_empty() {
        return Err(usage("no detectors given"));
    }
    Ok(parsed.iter().map(|d| d.name().to_string()).collect())
}

fn formats(flag: Vec<Format>, file: Option<Vec<Format>>) -> Vec<Format> {
    let mut chosen = if flag.is_empty() {
        file.unwrap_or_default()
    } else {
        flag
    };
    if chosen.is_empty() {
        chosen = vec![Format::Csv, Format::Svg, Format::Json];
    }
    chosen.sort();
    chosen.dedup();
    chosen
}

fn vocab_or_default(flag: Option<String>, file: Option<String>, corpus: &Path) -> Result<String> {
    if let Some(v) = flag.or(file) {
        return Ok(v);
    }
    let beside = corpus.join(CORPUS_VOCAB);
    if beside.is_file() {
        return Ok(beside.to_string_lossy().into_owned());
    }
    Err(usage(format!(
        "--vocab is required (no {CORPUS_VOCAB} in {})",
        corpus.display()
    )))
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    /// Merges command-line flags over this file into a resolved run.
    pub fn resolve(self, command: Command) -> Result<Run> {
        Ok(match command {
            Command::Validate(a) => Run::Validate {
                corpus: a.corpus,
                report: a.report,
            },
            Command::Simulate(a) => {
                let mut config = self.simulate.unwrap_or_default();
                if let Some(seed) = a.seed {
                    config.seed = seed;
                }
                if let Some(n) = a.n_traces {
                    config.n_traces = n;
                }
                if let Some(shift) = a.mode_shift {
                    config.mode_shift = shift;
                }
                if let Some(rate) = a.hallucination_rate {
                    config.hallucination_rate = rate;
                }
                config.validate().map_err(|e| usage(e.to_string()))?;
                Run::Simulate { out: a.out, config }
            }
            Command::Score(a) => {
                let detectors = match (a.detectors, self.score.detectors) {
                    (Some(flag), _) => detector_names(&flag)?,
                    (None, Some(list)) => detector_names(&list.join(","))?,
                    (None, None) => Detector::ALL.iter().map(|d| d.name().to_string()).collect(),
                };
                Run::Score {
                    vocab: vocab_or_default(a.vocab, self.score.vocab, &a.corpus)?,
                    corpus: a.corpus,
                    detectors,
                    layer: a.layer.or(self.score.layer).unwrap_or(0),
                    out: a.out,
                }
            }
            Command::Eval(a) => Run::Eval {
                scores: a.scores,
                out: a.out,
                formats: formats(a.format, self.eval.format),
            },
            Command::Ablate(a) => Run::Ablate {
                vocab: vocab_or_default(a.vocab, self.ablate.vocab, &a.corpus)?,
                corpus: a.corpus,
                layers: if a.layers.is_empty() {
                    self.ablate.layers.unwrap_or_default()
                } else {
                    a.layers
                },
                layer: a.layer.or(self.ablate.layer).unwrap_or(0),
                out: a.out,
            },
            Command::ExportCurves(a) => Run::ExportCurves {
                detectors: match a.detectors {
                    Some(list) => detector_names(&list)?,
                    None => Vec::new(),
                },
                scores: a.scores,
                formats: formats(a.format, None),
                out: a.out,
            },
            Command::Replay(_) => unreachable!("replay is handled before resolution"),
        })
    }
}
