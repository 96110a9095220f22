use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use paskit_core::container::{list_corpus, read_trace_file, validate_files};
use paskit_core::eval::{
    attention_correlation, by_auroc_desc, collect_role_sums, evaluate, layer_ablation,
    role_ablation, role_orientation, EvalReport, RoleScope,
};
use paskit_core::matching::{labeled_mentions, ClassVocabulary};
use paskit_core::scoring::{score_corpus, Detector};
use paskit_core::sim::{generate_corpus, SimConfig};
use paskit_core::{Label, ObjectMention, Trace};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::CORPUS_VOCAB;
use crate::output::{csv_bytes, points_csv, read_scores, write_atomic, ScoreRow};
use crate::{svg, usage, Format, Run};

pub struct Outcome {
    pub status: u8,
    pub outputs: Vec<String>,
}

/// Collects written file names for the run manifest.
struct Written {
    dir_outputs: Vec<String>,
}

impl Written {
    fn new() -> Self {
        Self {
            dir_outputs: Vec::new(),
        }
    }

    fn put(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&dir.join(name), bytes)?;
        self.dir_outputs.push(name.to_string());
        Ok(())
    }

    fn done(mut self, status: u8) -> Outcome {
        self.dir_outputs.sort();
        Outcome {
            status,
            outputs: self.dir_outputs,
        }
    }
}

pub fn execute(run: &Run) -> Result<Outcome> {
    match run {
        Run::Validate { corpus, report } => validate(corpus, report.as_deref()),
        Run::Simulate { out, config } => simulate(out, config),
        Run::Score {
            corpus,
            vocab,
            detectors,
            layer,
            out,
        } => score(corpus, vocab, detectors, *layer, out),
        Run::Eval {
            scores,
            out,
            formats,
        } => eval(scores, out, formats),
        Run::Ablate {
            corpus,
            vocab,
            layers,
            layer,
            out,
        } => ablate(corpus, vocab, layers, *layer, out),
        Run::ExportCurves {
            scores,
            detectors,
            formats,
            out,
        } => export_curves(scores, detectors, formats, out),
    }
}

fn corpus_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let files = list_corpus(dir).with_context(|| format!("listing {}", dir.display()))?;
    if files.is_empty() {
        bail!("no trace files in {}", dir.display());
    }
    Ok(files)
}

#[derive(Serialize)]
struct FileVerdict {
    path: String,
    violations: Vec<String>,
}

fn validate(corpus: &Path, report: Option<&Path>) -> Result<Outcome> {
    let report_data = validate_files(&corpus_files(corpus)?);
    for file in &report_data.files {
        if file.passed() {
            println!("ok   {}", file.path.display());
        } else {
            for v in &file.violations {
                println!("FAIL {}: {v}", file.path.display());
            }
        }
    }
    let failed = report_data.failures().count();
    println!("{} files, {failed} failed", report_data.files.len());

    let mut outputs = Vec::new();
    if let Some(path) = report {
        let verdicts: Vec<FileVerdict> = report_data
            .files
            .iter()
            .map(|f| FileVerdict {
                path: f.path.display().to_string(),
                violations: f.violations.clone(),
            })
            .collect();
        write_atomic(path, &json_bytes(&verdicts)?)?;
        outputs.push(file_name(path));
    }
    Ok(Outcome {
        status: report_data.exit_status() as u8,
        outputs,
    })
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn simulate(out: &Path, config: &SimConfig) -> Result<Outcome> {
    let summary = generate_corpus(config, out).map_err(|e| match e {
        paskit_core::sim::SimError::InvalidConfig(msg) => usage(msg),
        other => anyhow!(other),
    })?;
    let mut written = Written::new();
    written.put(
        out,
        CORPUS_VOCAB,
        &json_bytes(&config.vocabulary().to_file())?,
    )?;
    written
        .dir_outputs
        .extend(summary.trace_files.iter().map(|p| file_name(p)));
    written.dir_outputs.push(file_name(&summary.label_file));
    println!(
        "wrote {} traces with {} object mentions to {}",
        summary.trace_files.len(),
        summary.mentions,
        out.display()
    );
    Ok(written.done(0))
}

fn load_vocab(spec: &str) -> Result<ClassVocabulary> {
    match spec {
        "coco" => Ok(ClassVocabulary::coco()),
        "voc" => Ok(ClassVocabulary::pascal_voc()),
        path => {
            ClassVocabulary::load(Path::new(path)).with_context(|| format!("vocabulary {path}"))
        }
    }
}

type Corpus = Vec<(Trace, Vec<ObjectMention>)>;

fn load_corpus(dir: &Path, vocab: &str) -> Result<Corpus> {
    let vocab = load_vocab(vocab)?;
    let files = corpus_files(dir)?;
    files
        .par_iter()
        .map(|path| {
            let trace =
                read_trace_file(path).with_context(|| format!("reading {}", path.display()))?;
            let mentions = labeled_mentions(&trace, &vocab);
            Ok((trace, mentions))
        })
        .collect()
}

fn parse_detectors(names: &[String]) -> Result<Vec<Detector>> {
    names
        .iter()
        .map(|n| {
            n.parse()
                .map_err(|e: paskit_core::ScoreError| usage(e.to_string()))
        })
        .collect()
}

fn score(
    corpus: &Path,
    vocab: &str,
    detectors: &[String],
    layer: u32,
    out: &Path,
) -> Result<Outcome> {
    let detectors = parse_detectors(detectors)?;
    let corpus = load_corpus(corpus, vocab)?;
    let scored = score_corpus(&corpus, &detectors, layer)?;
    for w in &scored.warnings {
        log::warn!("{w}");
    }
    let rows: Vec<ScoreRow> = scored.records.iter().map(ScoreRow::from).collect();
    write_atomic(out, &csv_bytes(&rows)?)?;
    let mentions: usize = corpus.iter().map(|(_, m)| m.len()).sum();
    let unlabeled = corpus
        .iter()
        .flat_map(|(_, m)| m)
        .filter(|m| m.label == Label::Unlabeled)
        .count();
    println!(
        "scored {mentions} mentions ({unlabeled} unlabeled) from {} traces: {} rows, {} skipped",
        corpus.len(),
        rows.len(),
        scored.warnings.len()
    );
    Ok(Outcome {
        status: 0,
        outputs: vec![file_name(out)],
    })
}

/// Labeled scores grouped by detector, in registry order.
type Grouped = BTreeMap<Detector, (Vec<f64>, Vec<Label>)>;

fn group_scores(rows: &[ScoreRow]) -> Result<Grouped> {
    if rows.is_empty() {
        bail!("score file has no rows");
    }
    let mut grouped = Grouped::new();
    for r in rows {
        let detector: Detector = r.detector.parse()?;
        let entry = grouped.entry(detector).or_default();
        if r.label != Label::Unlabeled {
            entry.0.push(r.score);
            entry.1.push(r.label);
        }
    }
    Ok(grouped)
}

#[derive(Serialize)]
struct SummaryRow {
    detector: String,
    auroc: f64,
    n_real: usize,
    n_hallucinated: usize,
    real_q1: f64,
    real_median: f64,
    real_q3: f64,
    hallucinated_q1: f64,
    hallucinated_median: f64,
    hallucinated_q3: f64,
}

impl From<&EvalReport> for SummaryRow {
    fn from(r: &EvalReport) -> Self {
        Self {
            detector: r.detector.clone(),
            auroc: r.auroc,
            n_real: r.n_real,
            n_hallucinated: r.n_hallucinated,
            real_q1: r.real_quartiles.q1,
            real_median: r.real_quartiles.median,
            real_q3: r.real_quartiles.q3,
            hallucinated_q1: r.hallucinated_quartiles.q1,
            hallucinated_median: r.hallucinated_quartiles.median,
            hallucinated_q3: r.hallucinated_quartiles.q3,
        }
    }
}

#[derive(Serialize)]
struct FailedDetector {
    detector: String,
    error: String,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    detectors: &'a [EvalReport],
    failed: &'a [FailedDetector],
}

fn evaluate_groups(grouped: &Grouped) -> (Vec<EvalReport>, Vec<FailedDetector>) {
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for (d, (scores, labels)) in grouped {
        match evaluate(d.name(), scores, labels) {
            Ok(r) => reports.push(r),
            Err(e) => {
                eprintln!("{d}: {e}");
                failed.push(FailedDetector {
                    detector: d.name().into(),
                    error: e.to_string(),
                });
            }
        }
    }
    (reports, failed)
}

fn write_curves(
    written: &mut Written,
    out: &Path,
    reports: &[EvalReport],
    formats: &[Format],
) -> Result<()> {
    if formats.contains(&Format::Csv) {
        for r in reports {
            written.put(
                out,
                &format!("roc_{}.csv", r.detector),
                &points_csv("fpr", "tpr", &r.roc_points)?,
            )?;
            written.put(
                out,
                &format!("prc_{}.csv", r.detector),
                &points_csv("recall", "precision", &r.prc_points)?,
            )?;
        }
    }
    if formats.contains(&Format::Svg) && !reports.is_empty() {
        let roc: Vec<(String, Vec<(f64, f64)>)> = reports
            .iter()
            .map(|r| {
                (
                    format!("{} ({:.3})", r.detector, r.auroc),
                    r.roc_points.clone(),
                )
            })
            .collect();
        let prc: Vec<(String, Vec<(f64, f64)>)> = reports
            .iter()
            .map(|r| (r.detector.clone(), r.prc_points.clone()))
            .collect();
        let roc_svg = svg::curve_chart("ROC", "false positive rate", "true positive rate", &roc);
        let prc_svg = svg::curve_chart("Precision-recall", "recall", "precision", &prc);
        written.put(out, "roc.svg", roc_svg.as_bytes())?;
        written.put(out, "prc.svg", prc_svg.as_bytes())?;
    }
    Ok(())
}

fn eval(scores: &Path, out: &Path, formats: &[Format]) -> Result<Outcome> {
    let grouped = group_scores(&read_scores(scores)?)?;
    let (reports, failed) = evaluate_groups(&grouped);
    let mut written = Written::new();

    if formats.contains(&Format::Csv) {
        written.put(
            out,
            "summary.csv",
            &csv_bytes(reports.iter().map(SummaryRow::from))?,
        )?;
    }
    if formats.contains(&Format::Json) {
        let report = JsonReport {
            detectors: &reports,
            failed: &failed,
        };
        written.put(out, "report.json", &json_bytes(&report)?)?;
    }
    write_curves(&mut written, out, &reports, formats)?;
    if formats.contains(&Format::Svg) {
        for r in &reports {
            let (scores, labels) = &grouped[&r.detector.parse::<Detector>()?];
            let pick = |want: Label| -> Vec<f64> {
                scores
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == want)
                    .map(|(&s, _)| s)
                    .collect()
            };
            let chart = svg::distribution_chart(
                &format!("{} scores", r.detector),
                &pick(Label::Real),
                &pick(Label::Hallucinated),
                &r.real_quartiles,
                &r.hallucinated_quartiles,
            );
            written.put(out, &format!("dist_{}.svg", r.detector), chart.as_bytes())?;
        }
    }

    for r in &reports {
        println!(
            "{:<12} auroc {:.4}  (real {}, hallucinated {})",
            r.detector, r.auroc, r.n_real, r.n_hallucinated
        );
    }
    Ok(written.done(u8::from(!failed.is_empty())))
}

fn export_curves(
    scores: &Path,
    detectors: &[String],
    formats: &[Format],
    out: &Path,
) -> Result<Outcome> {
    let mut grouped = group_scores(&read_scores(scores)?)?;
    if !detectors.is_empty() {
        let wanted = parse_detectors(detectors)?;
        if let Some(missing) = wanted.iter().find(|d| !grouped.contains_key(d)) {
            bail!("detector {missing} has no scores in {}", scores.display());
        }
        grouped.retain(|d, _| wanted.contains(d));
    }
    let (reports, failed) = evaluate_groups(&grouped);
    let mut written = Written::new();
    write_curves(&mut written, out, &reports, formats)?;
    if formats.contains(&Format::Json) {
        #[derive(Serialize)]
        struct CurveSet<'a> {
            detector: &'a str,
            auroc: f64,
            roc: &'a [(f64, f64)],
            prc: &'a [(f64, f64)],
        }
        let sets: Vec<CurveSet> = reports
            .iter()
            .map(|r| CurveSet {
                detector: &r.detector,
                auroc: r.auroc,
                roc: &r.roc_points,
                prc: &r.prc_points,
            })
            .collect();
        written.put(out, "curves.json", &json_bytes(&sets)?)?;
    }
    Ok(written.done(u8::from(!failed.is_empty())))
}

#[derive(Serialize)]
struct LayerRow {
    layer: u32,
    auroc: f64,
    rank: usize,
}

#[derive(Serialize)]
struct RoleRow {
    scope: String,
    role: String,
    auroc: f64,
}

#[derive(Serialize)]
struct AblationReport {
    layers: Vec<LayerRow>,
    roles: Vec<RoleRow>,
    correlation: paskit_core::eval::CorrelationMatrix,
}

fn ablate(corpus: &Path, vocab: &str, layers: &[u32], layer: u32, out: &Path) -> Result<Outcome> {
    let corpus = load_corpus(corpus, vocab)?;
    let layers: Vec<u32> = if layers.is_empty() {
        let (first, rest) = corpus.split_first().expect("corpus is non-empty");
        first
            .0
            .header
            .layers
            .iter()
            .copied()
            .filter(|l| rest.iter().all(|(t, _)| t.header.layers.contains(l)))
            .collect()
    } else {
        layers.to_vec()
    };
    if layers.is_empty() {
        bail!("the traces share no attention layer");
    }

    let mut by_layer = layer_ablation(&corpus, &layers)?;
    by_layer.sort_by(by_auroc_desc);
    let layer_rows: Vec<LayerRow> = by_layer
        .iter()
        .enumerate()
        .map(|(i, &(layer, auroc))| LayerRow {
            layer,
            auroc,
            rank: i + 1,
        })
        .collect();

    let mut role_rows = Vec::new();
    for (scope, name) in [
        (RoleScope::Layer(layer), format!("layer{layer}")),
        (RoleScope::Global, "global".into()),
    ] {
        for (role, auroc) in role_ablation(&corpus, scope)? {
            role_rows.push(RoleRow {
                scope: name.clone(),
                role: role_orientation(role).0.to_string(),
                auroc,
            });
        }
    }
    let (sums, _) = collect_role_sums(&corpus, RoleScope::Layer(layer))?;
    let correlation = attention_correlation(&sums)?;

    let mut written = Written::new();
    written.put(out, "layer_ablation.csv", &csv_bytes(&layer_rows)?)?;
    written.put(out, "role_ablation.csv", &csv_bytes(&role_rows)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(correlation.names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in correlation.names.iter().zip(&correlation.matrix) {
        let mut record = vec![name.clone()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    written.put(
        out,
        "correlation.csv",
        &w.into_inner().context("flushing csv")?,
    )?;
    let report = AblationReport {
        layers: layer_rows,
        roles: role_rows,
        correlation,
    };
    written.put(out, "ablation.json", &json_bytes(&report)?)?;

    for row in &report.layers {
        println!(
            "layer {:<3} auroc {:.4}  rank {}",
            row.layer, row.auroc, row.rank
        );
    }
    for row in &report.roles {
        println!("{:<8} {:<12} auroc {:.4}", row.scope, row.role, row.auroc);
    }
    Ok(written.done(0))
}
