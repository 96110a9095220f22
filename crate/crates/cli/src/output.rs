use std::path::Path;

use anyhow::{Context, Result};
use paskit_core::scoring::ScoreRecord;
use paskit_core::Label;
use serde::{Deserialize, Serialize};

/// Writes through a temp file and rename, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    paskit_core::sim::write_atomic(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
}

/// One line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub trace_id: String,
    pub k: usize,
    pub class: String,
    pub label: Label,
    pub detector: String,
    pub score: f64,
}

impl From<&ScoreRecord> for ScoreRow {
    fn from(r: &ScoreRecord) -> Self {
        Self {
            trace_id: r.trace_id.clone(),
            k: r.position,
            class: r.class.clone(),
            label: r.label,
            detector: r.detector.name().to_string(),
            score: r.score,
        }
    }
}

pub fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().context("flushing csv")
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<ScoreRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    if let Some(bad) = rows.iter().find(|r| !r.score.is_finite()) {
        anyhow::bail!(
            "{}: non-finite score for {}:{} ({})",
            path.display(),
            bad.trace_id,
            bad.k,
            bad.detector
        );
    }
    Ok(rows)
}

/// (x, y) points as a two-column CSV.
pub fn points_csv(x: &str, y: &str, points: &[(f64, f64)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([x, y])?;
    for (a, b) in points {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.into_inner().context("flushing csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_rows_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ScoreRow {
                trace_id: "t".into(),
                k: 12,
                class: "potted plant".into(),
                label: Label::Hallucinated,
                detector: "pas".into(),
                score: 0.1 + 0.2,
            },
            ScoreRow {
                trace_id: "t".into(),
                k: 15,
                class: "cat".into(),
                label: Label::Real,
                detector: "kl".into(),
                score: -1.2345678901234567e-9,
            },
        ];
        let path = dir.path().join("nested/scores.csv");
        write_atomic(&path, &csv_bytes(&rows).unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("trace_id,k,class,label,detector,score\n"));
        assert_eq!(read_scores(&path).unwrap(), rows);
    }

    #[test]
    fn non_finite_scores_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(
            &path,
            "trace_id,k,class,label,detector,score\nt,3,cat,real,pas,NaN\n",
        )
        .unwrap();
        assert!(read_scores(&path).is_err());
    }
}
