//! End-to-end anomaly scoring: per-HOI likelihoods under the normality
//! model, worst-detection frame aggregation, Gaussian temporal smoothing and
//! thresholding.
//!
//! Scores live on the negative-log-density scale, so higher means more
//! anomalous and thresholding them is order-equivalent to thresholding the
//! raw probability.

use std::collections::HashMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{self, EmConfig, GmmModel};
use crate::hoi::{BlockLayout, FrameRecord, HoiVector, Vocabulary};
use crate::pca::PcaModel;

/// Knobs echoed into the persisted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// PCA explained-variance threshold.
    pub variance_threshold: f64,
    /// Candidate component range for BIC selection.
    pub m_min: usize,
    pub m_max: usize,
    /// Skip selection and fit exactly this many components.
    pub m_override: Option<usize>,
    pub em: EmConfigEcho,
}

/// Serializable mirror of [`EmConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfigEcho {
    pub max_iters: usize,
    pub tol: f64,
    pub ridge: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl From<&EmConfig> for EmConfigEcho {
    fn from(c: &EmConfig) -> Self {
        EmConfigEcho {
            max_iters: c.max_iters,
            tol: c.tol,
            ridge: c.ridge,
            restarts: c.restarts,
            seed: c.seed,
        }
    }
}

impl From<&EmConfigEcho> for EmConfig {
    fn from(c: &EmConfigEcho) -> Self {
        EmConfig {
            max_iters: c.max_iters,
            tol: c.tol,
            ridge: c.ridge,
            restarts: c.restarts,
            seed: c.seed,
        }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            variance_threshold: 0.99,
            m_min: 1,
            m_max: 10,
            m_override: None,
            em: (&EmConfig::default()).into(),
        }
    }
}

/// Counts and configuration recorded at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub n_frames: usize,
    pub n_vectors: usize,
    pub config: TrainingConfig,
}

/// The persisted artifact of training: vector layout, class names, PCA basis
/// and the Gaussian mixture, plus the BIC curve for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalityModel {
    layout: BlockLayout,
    vocab: Vocabulary,
    pca: PcaModel,
    gmm: GmmModel,
    bic_curve: Vec<(usize, f64)>,
    training: TrainingInfo,
}

impl NormalityModel {
    /// Assembles a model, checking the cross-module dimension invariants.
    pub fn from_parts(
        layout: BlockLayout,
        vocab: Vocabulary,
        pca: PcaModel,
        gmm: GmmModel,
        bic_curve: Vec<(usize, f64)>,
        training: TrainingInfo,
    ) -> Result<Self> {
        if !vocab.matches_layout(&layout) {
            return Err(Error::invalid(format!(
                "vocabulary sizes ({}, {}) do not match layout ({}, {})",
                vocab.interactions.len(),
                vocab.objects.len(),
                layout.k_int,
                layout.k_obj
            )));
        }
        if pca.input_dim() != layout.dim() {
            return Err(Error::Dimension {
                context: "model pca input",
                expected: layout.dim(),
                actual: pca.input_dim(),
            });
        }
        if gmm.dim() != pca.reduced_dim() {
            return Err(Error::Dimension {
                context: "model gmm dimension",
                expected: pca.reduced_dim(),
                actual: gmm.dim(),
            });
        }
        Ok(NormalityModel {
            layout,
            vocab,
            pca,
            gmm,
            bic_curve,
            training,
        })
    }

    /// Fits PCA and the mixture on the HOI vectors of (normal) training
    /// frames. Component count comes from the BIC elbow over
    /// `[m_min, m_max]`, or `m_override` when set.
    pub fn fit(frames: &[FrameRecord], vocab: Vocabulary, config: &TrainingConfig) -> Result<Self> {
        let layout = vocab.layout();
        let mut flat = Vec::new();
        for f in frames {
            for h in &f.detections {
                h.validate()?;
                flat.push(h.flatten(&layout).map_err(|e| {
                    Error::invalid(format!("{} frame {}: {e}", f.video_id, f.frame_idx))
                })?);
            }
        }
        if flat.len() < 2 {
            return Err(Error::invalid(format!(
                "training needs at least 2 HOI vectors, got {}",
                flat.len()
            )));
        }
        let pca = PcaModel::fit(&flat, config.variance_threshold)?;
        let reduced: Vec<DVector<f64>> = flat
            .iter()
            .map(|v| pca.project_slice(v))
            .collect::<Result<_>>()?;

        let em: EmConfig = (&config.em).into();
        let (fit, bic_curve) = match config.m_override {
            Some(m) => {
                let fit = gmm::fit_em(&reduced, m, &em)?;
                let b = gmm::bic_from_parts(reduced.len(), m, fit.model.dim(), fit.log_likelihood);
                (fit, vec![(m, b)])
            }
            None => {
                let sel = gmm::select_components(&reduced, config.m_min, config.m_max, &em)?;
                (sel.fit, sel.bic_curve)
            }
        };

        NormalityModel::from_parts(
            layout,
            vocab,
            pca,
            fit.model,
            bic_curve,
            TrainingInfo {
                n_frames: frames.len(),
                n_vectors: flat.len(),
                config: config.clone(),
            },
        )
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn pca(&self) -> &PcaModel {
        &self.pca
    }

    pub fn gmm(&self) -> &GmmModel {
        &self.gmm
    }

    pub fn bic_curve(&self) -> &[(usize, f64)] {
        &self.bic_curve
    }

    pub fn training(&self) -> &TrainingInfo {
        &self.training
    }

    /// Flattens and projects one HOI vector into the reduced space.
    pub fn reduce(&self, h: &HoiVector) -> Result<DVector<f64>> {
        let flat = h.flatten(&self.layout)?;
        self.pca.project_slice(&flat)
    }

    /// Anomaly score of one HOI vector: the negative log mixture density of
    /// its reduced representation. Higher means more anomalous; finite for
    /// every valid input.
    pub fn hoi_anomaly_score(&self, h: &HoiVector) -> Result<f64> {
        Ok(-self.gmm.log_mixture_density(&self.reduce(h)?)?)
    }

    /// Scores a frame by its worst detection; empty frames score 0.
    pub fn frame_score(&self, frame: &FrameRecord) -> Result<FrameScore> {
        let mut raw = 0.0;
        let mut worst = None;
        for (i, h) in frame.detections.iter().enumerate() {
            let s = self.hoi_anomaly_score(h)?;
            if worst.is_none() || s > raw {
                raw = s;
                worst = Some(i);
            }
        }
        Ok(FrameScore {
            video_id: frame.video_id.clone(),
            frame_idx: frame.frame_idx,
            raw_score: raw,
            smoothed_score: raw,
            worst_hoi_index: worst,
        })
    }

    /// Scores every frame, in input order; parallel across frames.
    pub fn score_frames(&self, frames: &[FrameRecord]) -> Result<Vec<FrameScore>> {
        frames.par_iter().map(|f| self.frame_score(f)).collect()
    }
}

/// Per-frame anomaly score. `smoothed_score` equals `raw_score` until
/// [`smooth_scores`] runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub video_id: String,
    pub frame_idx: u64,
    pub raw_score: f64,
    pub smoothed_score: f64,
    /// Index into the frame's detection list of the score-defining HOI;
    /// absent exactly when the frame had no detections.
    pub worst_hoi_index: Option<usize>,
}

/// A scored frame plus the thresholded decision.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDecision {
    pub score: FrameScore,
    pub anomalous: bool,
}

/// Smooths `raw_score` into `smoothed_score` with a discrete Gaussian kernel
/// truncated at radius `ceil(3 sigma)`; the kernel is renormalized over the
/// in-range window, so boundaries see no reflected or zero-padded data.
/// Smoothing never crosses video boundaries. Frames of one video must appear
/// in strictly increasing `frame_idx` order.
pub fn smooth_scores(scores: &mut [FrameScore], sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "smoothing sigma must be positive and finite, got {sigma}"
        )));
    }
    // Gather positions per video, in first-appearance order.
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for (i, s) in scores.iter().enumerate() {
        let entry = groups.entry(s.video_id.as_str());
        if let std::collections::hash_map::Entry::Vacant(_) = entry {
            order.push(s.video_id.as_str());
        }
        entry.or_default().push(i);
    }
    for video in &order {
        let idxs = &groups[video];
        for w in idxs.windows(2) {
            if scores[w[1]].frame_idx <= scores[w[0]].frame_idx {
                return Err(Error::invalid(format!(
                    "frames of video {video} not in strictly increasing order \
                     (frame {} follows {})",
                    scores[w[1]].frame_idx, scores[w[0]].frame_idx
                )));
            }
        }
    }

    let radius = (3.0 * sigma).ceil();
    let smoothed: HashMap<usize, f64> = groups
        .values()
        .flat_map(|idxs| {
            let raw: Vec<f64> = idxs.iter().map(|&i| scores[i].raw_score).collect();
            let out = gaussian_smooth(&raw, sigma, radius);
            idxs.iter().copied().zip(out).collect::<Vec<_>>()
        })
        .collect();
    for (i, v) in smoothed {
        scores[i].smoothed_score = v;
    }
    Ok(())
}

/// Renormalized truncated Gaussian convolution of one contiguous signal.
/// Offsets past the signal ends never contribute, so the kernel radius is
/// clamped to the signal length.
fn gaussian_smooth(signal: &[f64], sigma: f64, radius: f64) -> Vec<f64> {
    let n = signal.len();
    let r = if radius >= n as f64 {
        n.saturating_sub(1)
    } else {
        radius as usize
    };
    let weights: Vec<f64> = (0..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let r = r as i64;
    (0..n as i64)
        .map(|j| {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for k in -r..=r {
                let pos = j + k;
                if pos < 0 || pos >= n as i64 {
                    continue;
                }
                let w = weights[k.unsigned_abs() as usize];
                acc += w * signal[pos as usize];
                norm += w;
            }
            acc / norm
        })
        .collect()
}

/// Scores, smooths and thresholds a stream of frames. The threshold applies
/// to the smoothed negative-log-density score.
pub fn detect(
    model: &NormalityModel,
    frames: &[FrameRecord],
    threshold: f64,
    sigma: f64,
) -> Result<Vec<FrameDecision>> {
    let mut scores = model.score_frames(frames)?;
    smooth_scores(&mut scores, sigma)?;
    Ok(scores
        .into_iter()
        .map(|score| FrameDecision {
            anomalous: score.smoothed_score > threshold,
            score,
        })
        .collect())
}
