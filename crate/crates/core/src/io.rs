//! File formats and model persistence.
//!
//! Per-frame data travels as JSON lines, dense score tables as CSV, and the
//! fitted normality model as a single self-describing JSON document whose
//! floats round-trip bit-for-bit. All writers go through a temp-file rename
//! so partially written outputs never appear under the final name.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{FrameScore, NormalityModel, TrainingInfo};
use crate::error::{Error, Result};
use crate::eval::{ExplanationLabel, FrameKey, LabelSet};
use crate::gmm::GmmModel;
use crate::hoi::{BlockLayout, FrameRecord, HoiVector, Vocabulary};
use crate::pca::PcaModel;

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Writes through a sibling temp file and renames into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp.{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string()),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(display(&tmp), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(display(path), e))?;
    Ok(())
}

/// Serializes any value as pretty JSON, atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::invalid(format!("serializing {}: {e}", display(path))))?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------------
// HOI frame streams (JSON lines)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct FrameLine {
    video_id: String,
    frame_idx: u64,
    detections: Vec<HoiVector>,
}

/// Reads a JSONL stream of frames, validating block lengths against the
/// layout, the per-vector value invariants and strictly increasing frame
/// order within each video. Errors carry the offending line number.
pub fn read_hoi_jsonl(path: &Path, layout: &BlockLayout) -> Result<Vec<FrameRecord>> {
    let file = File::open(path).map_err(|e| Error::io(display(path), e))?;
    let reader = BufReader::new(file);
    let mut frames = Vec::new();
    let mut last_idx: BTreeMap<String, u64> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(display(path), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: display(path),
            line: lineno,
            message,
        };
        let parsed: FrameLine =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        for (i, h) in parsed.detections.iter().enumerate() {
            if !h.conforms_to(layout) {
                return Err(malformed(format!(
                    "detection {i} has blocks ({}, {}), layout wants ({}, {})",
                    h.interactions.len(),
                    h.objects.len(),
                    layout.k_int,
                    layout.k_obj
                )));
            }
            let finite = h
                .interactions
                .iter()
                .chain(h.objects.iter())
                .all(|v| v.is_finite());
            if !finite {
                return Err(malformed(format!("detection {i} has non-finite values")));
            }
            h.validate()
                .map_err(|e| malformed(format!("detection {i}: {e}")))?;
        }
        if let Some(&prev) = last_idx.get(&parsed.video_id) {
            if parsed.frame_idx <= prev {
                return Err(malformed(format!(
                    "frame_idx {} of video {} does not increase (previous {})",
                    parsed.frame_idx, parsed.video_id, prev
                )));
            }
        }
        last_idx.insert(parsed.video_id.clone(), parsed.frame_idx);
        frames.push(FrameRecord {
            video_id: parsed.video_id,
            frame_idx: parsed.frame_idx,
            detections: parsed.detections,
        });
    }
    Ok(frames)
}

pub fn write_hoi_jsonl(path: &Path, frames: &[FrameRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for f in frames {
        serde_json::to_writer(
            &mut buf,
            &FrameLine {
                video_id: f.video_id.clone(),
                frame_idx: f.frame_idx,
                detections: f.detections.clone(),
            },
        )
        .map_err(|e| Error::invalid(format!("serializing {}: {e}", display(path))))?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    layout: BlockLayout,
    vocabulary: VocabDoc,
    pca: PcaDoc,
    gmm: GmmDoc,
    bic_curve: Vec<(usize, f64)>,
    training: TrainingInfo,
}

#[derive(Serialize, Deserialize)]
struct VocabDoc {
    interactions: Vec<String>,
    objects: Vec<String>,
    interactions_digest: String,
    objects_digest: String,
}

#[derive(Serialize, Deserialize)]
struct PcaDoc {
    mean: Vec<f64>,
    /// `D x d`, flattened column-major.
    basis_col_major: Vec<f64>,
    reduced_dim: usize,
    eigenvalues: Vec<f64>,
    variance_captured: f64,
}

#[derive(Serialize, Deserialize)]
struct GmmDoc {
    components: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major `d x d` matrix per component.
    covariances: Vec<Vec<Vec<f64>>>,
}

/// `sha256:<hex>` over the class list in vocabulary-file form (one name per
/// line, trailing newline).
pub fn vocab_digest(names: &[String]) -> String {
    let mut hasher = Sha256::new();
    for name in names {
        hasher.update(name.as_bytes());
        hasher.update(b"\n");
    }
    format!("sha256:{:x}", hasher.finalize())
}

pub fn save_model(model: &NormalityModel, path: &Path) -> Result<()> {
    let pca = model.pca();
    let gmm = model.gmm();
    let doc = ModelDoc {
        format_version: MODEL_FORMAT_VERSION,
        layout: *model.layout(),
        vocabulary: VocabDoc {
            interactions: model.vocab().interactions.clone(),
            objects: model.vocab().objects.clone(),
            interactions_digest: vocab_digest(&model.vocab().interactions),
            objects_digest: vocab_digest(&model.vocab().objects),
        },
        pca: PcaDoc {
            mean: pca.mean().iter().copied().collect(),
            basis_col_major: pca.basis().as_slice().to_vec(),
            reduced_dim: pca.reduced_dim(),
            eigenvalues: pca.eigenvalues().iter().copied().collect(),
            variance_captured: pca.variance_captured(),
        },
        gmm: GmmDoc {
            components: gmm.component_count(),
            weights: gmm.weights().to_vec(),
            means: gmm
                .means()
                .iter()
                .map(|m| m.iter().copied().collect())
                .collect(),
            covariances: gmm
                .covariances()
                .iter()
                .map(|c| {
                    (0..c.nrows())
                        .map(|i| (0..c.ncols()).map(|j| c[(i, j)]).collect())
                        .collect()
                })
                .collect(),
        },
        bic_curve: model.bic_curve().to_vec(),
        training: model.training().clone(),
    };
    write_json(path, &doc)
}

pub fn load_model(path: &Path) -> Result<NormalityModel> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(display(path), e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: display(path),
        line: e.line(),
        message: e.to_string(),
    })?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::invalid(format!("{}: missing format_version", display(path))))?;
    if version != MODEL_FORMAT_VERSION as u64 {
        return Err(Error::FormatVersion {
            expected: MODEL_FORMAT_VERSION,
            found: version as u32,
        });
    }
    let doc: ModelDoc = serde_json::from_value(value).map_err(|e| Error::Malformed {
        path: display(path),
        line: 0,
        message: e.to_string(),
    })?;

    if vocab_digest(&doc.vocabulary.interactions) != doc.vocabulary.interactions_digest {
        return Err(Error::invalid(format!(
            "{}: interaction vocabulary does not match its recorded digest",
            display(path)
        )));
    }
    if vocab_digest(&doc.vocabulary.objects) != doc.vocabulary.objects_digest {
        return Err(Error::invalid(format!(
            "{}: object vocabulary does not match its recorded digest",
            display(path)
        )));
    }
    let vocab = Vocabulary::new(doc.vocabulary.interactions, doc.vocabulary.objects)?;

    let dim = doc.layout.dim();
    if doc.pca.mean.len() != dim {
        return Err(Error::Dimension {
            context: "model pca mean",
            expected: dim,
            actual: doc.pca.mean.len(),
        });
    }
    if doc.pca.basis_col_major.len() != dim * doc.pca.reduced_dim {
        return Err(Error::Dimension {
            context: "model pca basis",
            expected: dim * doc.pca.reduced_dim,
            actual: doc.pca.basis_col_major.len(),
        });
    }
    let pca = PcaModel::from_parts(
        DVector::from_vec(doc.pca.mean),
        DMatrix::from_column_slice(dim, doc.pca.reduced_dim, &doc.pca.basis_col_major),
        DVector::from_vec(doc.pca.eigenvalues),
        doc.pca.variance_captured,
    )?;

    if doc.gmm.weights.len() != doc.gmm.components {
        return Err(Error::Dimension {
            context: "model gmm weights",
            expected: doc.gmm.components,
            actual: doc.gmm.weights.len(),
        });
    }
    let d = pca.reduced_dim();
    let means = doc.gmm.means.into_iter().map(DVector::from_vec).collect();
    let covariances = doc
        .gmm
        .covariances
        .into_iter()
        .map(|rows| {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::Dimension {
                    context: "model gmm covariance",
                    expected: d,
                    actual: rows.len(),
                });
            }
            Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
        })
        .collect::<Result<Vec<_>>>()?;
    let gmm = GmmModel::new(doc.gmm.weights, means, covariances)?;

    NormalityModel::from_parts(doc.layout, vocab, pca, gmm, doc.bic_curve, doc.training)
}

// ---------------------------------------------------------------------------
// Score and flag tables (CSV)
// ---------------------------------------------------------------------------

/// One row of a score CSV; `decision` is empty when no threshold was set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub video_id: String,
    pub frame_idx: u64,
    pub raw_score: f64,
    pub smoothed_score: f64,
    pub decision: Option<u8>,
}

impl ScoreRow {
    pub fn from_score(s: &FrameScore, decision: Option<bool>) -> Self {
        ScoreRow {
            video_id: s.video_id.clone(),
            frame_idx: s.frame_idx,
            raw_score: s.raw_score,
            smoothed_score: s.smoothed_score,
            decision: decision.map(u8::from),
        }
    }
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::invalid(format!("serializing {}: {e}", display(path))))?;
    }
    let buf = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("serializing {}: {e}", display(path))))?;
    atomic_write(path, &buf)
}

fn csv_error(path: &Path, e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or_default();
    Error::Malformed {
        path: display(path),
        line,
        message: e.to_string(),
    }
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let file = File::open(path).map_err(|e| Error::io(display(path), e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let row: ScoreRow = record.map_err(|e| csv_error(path, &e))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct FlagRow {
    video_id: String,
    frame_idx: u64,
    flag: u8,
}

pub fn write_flags_csv(path: &Path, flags: &BTreeMap<FrameKey, bool>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for ((video_id, frame_idx), &flag) in flags {
        w.serialize(FlagRow {
            video_id: video_id.clone(),
            frame_idx: *frame_idx,
            flag: u8::from(flag),
        })
        .map_err(|e| Error::invalid(format!("serializing {}: {e}", display(path))))?;
    }
    let buf = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("serializing {}: {e}", display(path))))?;
    atomic_write(path, &buf)
}

pub fn read_flags_csv(path: &Path) -> Result<BTreeMap<FrameKey, bool>> {
    let file = File::open(path).map_err(|e| Error::io(display(path), e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut flags = BTreeMap::new();
    for record in reader.deserialize() {
        let row: FlagRow = record.map_err(|e| csv_error(path, &e))?;
        if row.flag > 1 {
            return Err(Error::invalid(format!(
                "{}: flag for {}:{} is {}, expected 0 or 1",
                display(path),
                row.video_id,
                row.frame_idx,
                row.flag
            )));
        }
        flags.insert((row.video_id, row.frame_idx), row.flag == 1);
    }
    Ok(flags)
}

// ---------------------------------------------------------------------------
// Explanation labels and per-frame predictions (JSON lines)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LabelLine {
    video_id: String,
    frame_idx: u64,
    labels: Vec<ExplanationLabel>,
}

pub fn write_labels_jsonl(path: &Path, truth: &LabelSet) -> Result<()> {
    let mut buf = Vec::new();
    for ((video_id, frame_idx), labels) in truth.explanations() {
        serde_json::to_writer(
            &mut buf,
            &LabelLine {
                video_id: video_id.clone(),
                frame_idx: *frame_idx,
                labels: labels.clone(),
            },
        )
        .map_err(|e| Error::invalid(format!("serializing {}: {e}", display(path))))?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

/// Reads explanation labels; every labelled frame is implied anomalous.
pub fn read_labels_jsonl(path: &Path) -> Result<LabelSet> {
    let file = File::open(path).map_err(|e| Error::io(display(path), e))?;
    let reader = BufReader::new(file);
    let mut explanations: BTreeMap<FrameKey, Vec<ExplanationLabel>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(display(path), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LabelLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: display(path),
            line: lineno,
            message: e.to_string(),
        })?;
        let key = (parsed.video_id, parsed.frame_idx);
        if explanations.insert(key.clone(), parsed.labels).is_some() {
            return Err(Error::Malformed {
                path: display(path),
                line: lineno,
                message: format!("duplicate labels for frame {}:{}", key.0, key.1),
            });
        }
    }
    LabelSet::from_explanations(explanations)
}

/// Per-frame explanation scores, as emitted by `explain` and consumed by
/// `eval-map`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub video_id: String,
    pub frame_idx: u64,
    pub class_scores: BTreeMap<String, f64>,
    pub location_score: f64,
}

pub fn write_predictions_jsonl(path: &Path, predictions: &[FramePrediction]) -> Result<()> {
    let mut buf = Vec::new();
    for p in predictions {
        serde_json::to_writer(&mut buf, p)
            .map_err(|e| Error::invalid(format!("serializing {}: {e}", display(path))))?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

pub fn read_predictions_jsonl(path: &Path) -> Result<Vec<FramePrediction>> {
    let file = File::open(path).map_err(|e| Error::io(display(path), e))?;
    let reader = BufReader::new(file);
    let mut predictions = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(display(path), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FramePrediction =
            serde_json::from_str(&line).map_err(|e| Error::Malformed {
                path: display(path),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        predictions.push(parsed);
    }
    Ok(predictions)
}

// ---------------------------------------------------------------------------
// Heatmap exports
// ---------------------------------------------------------------------------

/// Row-major CSV dump, one row per line, D columns.
pub fn write_heatmap_csv(path: &Path, heatmap: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::new();
    for i in 0..heatmap.nrows() {
        let row: Vec<String> = (0..heatmap.ncols())
            .map(|j| format!("{}", heatmap[(i, j)]))
            .collect();
        buf.extend_from_slice(row.join(",").as_bytes());
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

/// 8-bit binary PGM, min-max scaled per heatmap; the scale factors land in a
/// `<path>.txt` sidecar.
pub fn write_heatmap_pgm(path: &Path, heatmap: &DMatrix<f64>) -> Result<()> {
    let (rows, cols) = heatmap.shape();
    let min = heatmap.min();
    let max = heatmap.max();
    let span = max - min;
    let mut buf = Vec::with_capacity(rows * cols + 32);
    buf.extend_from_slice(format!("P5\n{cols} {rows}\n255\n").as_bytes());
    for i in 0..rows {
        for j in 0..cols {
            let byte = if span > 0.0 {
                ((heatmap[(i, j)] - min) / span * 255.0).round() as u8
            } else {
                0
            };
            buf.push(byte);
        }
    }
    atomic_write(path, &buf)?;
    let sidecar = path.with_file_name(format!(
        "{}.txt",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "heatmap.pgm".to_string())
    ));
    atomic_write(&sidecar, format!("min {min}\nmax {max}\n").as_bytes())
}

// ---------------------------------------------------------------------------
// Class filter files
// ---------------------------------------------------------------------------

/// One class name per line; blank lines are skipped.
pub fn read_class_filter(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(display(path), e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}
