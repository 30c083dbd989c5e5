//! Command-line surface: fit, score, explain, eval-auc, eval-map, synth.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or validation
//! errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::detector::{self, NormalityModel, TrainingConfig};
use crate::error::{Error, Result};
use crate::eval;
use crate::explain;
use crate::gmm::EmConfig;
use crate::hoi::Vocabulary;
use crate::io;
use crate::synth;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser)]
#[command(
    name = "hoianom",
    about = "Interpretable anomaly detection over human-object-interaction vectors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the PCA+GMM normality model on a stream of normal frames.
    Fit {
        /// Training frames (JSON lines).
        #[arg(long)]
        train: PathBuf,
        /// Interaction class names, one per line.
        #[arg(long)]
        interactions: PathBuf,
        /// Object class names, one per line.
        #[arg(long)]
        objects: PathBuf,
        /// PCA explained-variance threshold.
        #[arg(long, default_value_t = 0.99)]
        variance: f64,
        #[arg(long, default_value_t = 1)]
        m_min: usize,
        #[arg(long, default_value_t = 10)]
        m_max: usize,
        /// Fit exactly this component count instead of selecting by BIC.
        #[arg(long)]
        m_override: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a frame stream; writes a CSV of raw and smoothed scores.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Temporal smoothing sigma, in frames.
        #[arg(long, default_value_t = 3.0)]
        sigma: f64,
        /// Decision threshold on the smoothed score; without it the
        /// decision column stays empty.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain detections: per-detection heatmaps and per-frame class scores.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Restrict to one video.
        #[arg(long)]
        video: Option<String>,
        /// Restrict to one frame (requires --video).
        #[arg(long)]
        frame: Option<u64>,
        /// Emit only the per-frame class scores, skipping the per-detection
        /// heatmap files.
        #[arg(long)]
        no_heatmaps: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Frame-level ROC AUC of smoothed scores against ground-truth flags.
    EvalAuc {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        flags: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explanation mean average precision against ground-truth labels.
    EvalMap {
        /// Per-frame class scores (JSON lines, as written by `explain`).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth explanation labels (JSON lines).
        #[arg(long)]
        truth: PathBuf,
        /// Optional class-list file restricting the evaluated classes.
        #[arg(long)]
        class_filter: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic labelled stream from a scenario spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Parses `argv` and runs the selected command, mapping errors to exit
/// codes. The first element of `argv` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not usage errors.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CommandError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CommandError::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

enum CommandError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        CommandError::Data(e)
    }
}

fn usage(msg: impl Into<String>) -> CommandError {
    CommandError::Usage(msg.into())
}

fn dispatch(command: Command) -> std::result::Result<(), CommandError> {
    match command {
        Command::Fit {
            train,
            interactions,
            objects,
            variance,
            m_min,
            m_max,
            m_override,
            seed,
            out,
        } => {
            if !(variance > 0.0 && variance <= 1.0) {
                return Err(usage(format!("--variance {variance} outside (0, 1]")));
            }
            if m_min == 0 || m_min > m_max {
                return Err(usage(format!("--m-min {m_min} > --m-max {m_max}")));
            }
            if m_override == Some(0) {
                return Err(usage("--m-override must be at least 1"));
            }
            cmd_fit(
                &train,
                &interactions,
                &objects,
                variance,
                m_min,
                m_max,
                m_override,
                seed,
                &out,
            )?;
            Ok(())
        }
        Command::Score {
            model,
            input,
            sigma,
            threshold,
            out,
        } => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(usage(format!("--sigma {sigma} must be positive")));
            }
            cmd_score(&model, &input, sigma, threshold, &out)?;
            Ok(())
        }
        Command::Explain {
            model,
            input,
            video,
            frame,
            no_heatmaps,
            out_dir,
        } => {
            if frame.is_some() && video.is_none() {
                return Err(usage("--frame requires --video"));
            }
            cmd_explain(
                &model,
                &input,
                video.as_deref(),
                frame,
                no_heatmaps,
                &out_dir,
            )?;
            Ok(())
        }
        Command::EvalAuc { scores, flags, out } => {
            cmd_eval_auc(&scores, &flags, &out)?;
            Ok(())
        }
        Command::EvalMap {
            pred,
            truth,
            class_filter,
            out,
        } => {
            cmd_eval_map(&pred, &truth, class_filter.as_deref(), &out)?;
            Ok(())
        }
        Command::Synth { spec, out_dir } => {
            cmd_synth(&spec, &out_dir)?;
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    train: &Path,
    interactions: &Path,
    objects: &Path,
    variance: f64,
    m_min: usize,
    m_max: usize,
    m_override: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let vocab = Vocabulary::load(interactions, objects)?;
    let layout = vocab.layout();
    let frames = io::read_hoi_jsonl(train, &layout)?;
    let config = TrainingConfig {
        variance_threshold: variance,
        m_min,
        m_max,
        m_override,
        em: (&EmConfig {
            seed,
            ..EmConfig::default()
        })
            .into(),
    };
    let model = NormalityModel::fit(&frames, vocab, &config)?;
    io::save_model(&model, out)?;
    println!(
        "fitted on {} HOI vectors from {} frames: D={} d={} M={}",
        model.training().n_vectors,
        model.training().n_frames,
        model.layout().dim(),
        model.pca().reduced_dim(),
        model.gmm().component_count()
    );
    for (m, bic) in model.bic_curve() {
        println!("  bic[M={m}] = {bic:.3}");
    }
    println!("model written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ScoreMeta<'a> {
    model: &'a Path,
    input: &'a Path,
    sigma: f64,
    threshold: Option<f64>,
    n_frames: usize,
}

fn cmd_score(
    model_path: &Path,
    input: &Path,
    sigma: f64,
    threshold: Option<f64>,
    out: &Path,
) -> Result<()> {
    let model = io::load_model(model_path)?;
    let frames = io::read_hoi_jsonl(input, model.layout())?;
    let mut scores = model.score_frames(&frames)?;
    detector::smooth_scores(&mut scores, sigma)?;
    let rows: Vec<io::ScoreRow> = scores
        .iter()
        .map(|s| io::ScoreRow::from_score(s, threshold.map(|t| s.smoothed_score > t)))
        .collect();
    io::write_scores_csv(out, &rows)?;
    let meta_path = out.with_file_name(format!(
        "{}.meta.json",
        out.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scores".into())
    ));
    io::write_json(
        &meta_path,
        &ScoreMeta {
            model: model_path,
            input,
            sigma,
            threshold,
            n_frames: rows.len(),
        },
    )?;
    println!("scored {} frames to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_explain(
    model_path: &Path,
    input: &Path,
    video: Option<&str>,
    frame: Option<u64>,
    no_heatmaps: bool,
    out_dir: &Path,
) -> Result<()> {
    let model = io::load_model(model_path)?;
    let frames = io::read_hoi_jsonl(input, model.layout())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let selected: Vec<_> = frames
        .iter()
        .filter(|f| video.is_none_or(|v| f.video_id == v))
        .filter(|f| frame.is_none_or(|idx| f.frame_idx == idx))
        .collect();
    if selected.is_empty() {
        return Err(Error::invalid(format!(
            "no frames match the selection in {}",
            input.display()
        )));
    }

    let mut predictions = Vec::new();
    let mut n_heatmaps = 0usize;
    for f in &selected {
        if f.detections.is_empty() {
            continue;
        }
        if !no_heatmaps {
            for (i, h) in f.detections.iter().enumerate() {
                let e = explain::saliency_heatmap(&model, h)?;
                let stem = format!("{}_{:06}_{i:02}", f.video_id, f.frame_idx);
                io::write_heatmap_csv(&out_dir.join(format!("{stem}.heatmap.csv")), &e.heatmap)?;
                io::write_heatmap_pgm(&out_dir.join(format!("{stem}.heatmap.pgm")), &e.heatmap)?;
                n_heatmaps += 1;
            }
        }
        let (class_scores, location_score) = explain::frame_explanation_scores(&model, f)?;
        predictions.push(io::FramePrediction {
            video_id: f.video_id.clone(),
            frame_idx: f.frame_idx,
            class_scores,
            location_score,
        });
    }
    io::write_predictions_jsonl(&out_dir.join("frame_scores.jsonl"), &predictions)?;
    println!(
        "explained {} frames ({n_heatmaps} heatmaps) into {}",
        predictions.len(),
        out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AucReport<'a> {
    auc: f64,
    n_frames: usize,
    n_positive: usize,
    n_negative: usize,
    n_flags_unused: usize,
    config: AucConfig<'a>,
}

#[derive(Serialize)]
struct AucConfig<'a> {
    scores: &'a Path,
    flags: &'a Path,
}

fn cmd_eval_auc(scores_path: &Path, flags_path: &Path, out: &Path) -> Result<()> {
    let rows = io::read_scores_csv(scores_path)?;
    let flags = io::read_flags_csv(flags_path)?;
    let mut scores = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for row in &rows {
        let key = (row.video_id.clone(), row.frame_idx);
        let flag = flags.get(&key).ok_or_else(|| {
            Error::invalid(format!(
                "{}: no flag for scored frame {}:{}",
                flags_path.display(),
                row.video_id,
                row.frame_idx
            ))
        })?;
        scores.push(row.smoothed_score);
        labels.push(*flag);
    }
    let auc = eval::roc_auc(&scores, &labels)?;
    let n_positive = labels.iter().filter(|&&l| l).count();
    let report = AucReport {
        auc,
        n_frames: rows.len(),
        n_positive,
        n_negative: labels.len() - n_positive,
        n_flags_unused: flags.len() - rows.len(),
        config: AucConfig {
            scores: scores_path,
            flags: flags_path,
        },
    };
    io::write_json(out, &report)?;
    println!(
        "auc = {auc:.6} over {} frames -> {}",
        rows.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MapReportDoc<'a> {
    #[serde(flatten)]
    report: eval::MapReport,
    config: MapConfig<'a>,
}

#[derive(Serialize)]
struct MapConfig<'a> {
    pred: &'a Path,
    truth: &'a Path,
    class_filter: Option<&'a Path>,
}

fn cmd_eval_map(
    pred_path: &Path,
    truth_path: &Path,
    class_filter: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let predictions = io::read_predictions_jsonl(pred_path)?;
    let truth = io::read_labels_jsonl(truth_path)?;
    let filter = class_filter.map(io::read_class_filter).transpose()?;

    let mut pred: BTreeMap<eval::FrameKey, BTreeMap<String, f64>> = BTreeMap::new();
    for p in predictions {
        let mut scores = p.class_scores;
        let slot = scores
            .entry(explain::LOCATION_CLASS.to_string())
            .or_insert(f64::MIN);
        if p.location_score > *slot {
            *slot = p.location_score;
        }
        pred.insert((p.video_id, p.frame_idx), scores);
    }
    let report = eval::explanation_map(&pred, &truth, filter.as_ref())?;
    let map = report.map;
    io::write_json(
        out,
        &MapReportDoc {
            report,
            config: MapConfig {
                pred: pred_path,
                truth: truth_path,
                class_filter,
            },
        },
    )?;
    println!("map = {map:.6} -> {}", out.display());
    Ok(())
}

fn cmd_synth(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| Error::io(spec_path.display().to_string(), e))?;
    let spec: synth::ScenarioSpec = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: spec_path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let generated = synth::generate(&spec)?;
    io::write_hoi_jsonl(&out_dir.join("stream.jsonl"), &generated.frames)?;
    let train: Vec<_> = generated
        .frames
        .iter()
        .filter(|f| !generated.truth.is_flagged(&f.key()))
        .cloned()
        .collect();
    io::write_hoi_jsonl(&out_dir.join("train.jsonl"), &train)?;
    io::write_flags_csv(&out_dir.join("flags.csv"), generated.truth.frame_flags())?;
    io::write_labels_jsonl(&out_dir.join("labels.jsonl"), &generated.truth)?;
    atomic_text(
        &out_dir.join("interactions.txt"),
        &generated.vocab.interactions,
    )?;
    atomic_text(&out_dir.join("objects.txt"), &generated.vocab.objects)?;
    io::write_json(&out_dir.join("spec.json"), &spec)?;
    println!(
        "generated {} frames ({} anomalous) into {}",
        generated.frames.len(),
        generated
            .truth
            .frame_flags()
            .values()
            .filter(|&&f| f)
            .count(),
        out_dir.display()
    );
    Ok(())
}

fn atomic_text(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    io::atomic_write(path, text.as_bytes())
}
