//! Three-level anomaly explanation: the tested event, its closest normal
//! event, and a saliency heatmap over the interpretable features.
//!
//! The heatmap decomposes the squared Mahalanobis deviation of a reduced
//! vector from its closest mixture mode exactly across pairs of original
//! HOI-vector elements: with `delta = v - y` and `A = W S^-1 W^T`,
//! `H[i][j] = delta_i A[i][j] delta_j`, so `sum(H)` reproduces the quadratic
//! form in the reduced space. Block sums give the coarse 3x3 view; diagonal
//! entries, named through the vocabulary, give per-class explanation scores.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::detector::NormalityModel;
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::hoi::{Block, FrameRecord, HoiVector};

/// Name under which the two box-size features are scored jointly.
pub const LOCATION_CLASS: &str = "location";

/// The inspected HOI vector with its top classes named.
#[derive(Debug, Clone, PartialEq)]
pub struct TestedEvent {
    pub hoi: HoiVector,
    pub top_interaction: Option<String>,
    pub top_object: Option<String>,
}

/// Saliency explanation of one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub tested: TestedEvent,
    /// Mixture component of the closest normal event (0-based).
    pub normal_mode: usize,
    /// The closest normal event back-projected into HOI coordinates.
    pub normal_event: DVector<f64>,
    /// Symmetric D x D pairwise contribution matrix.
    pub heatmap: DMatrix<f64>,
    /// Block-summed heatmap over (interaction, object, box) x same.
    pub coarse: [[f64; 3]; 3],
    /// Diagonal scores mapped through the vocabulary; the two box entries
    /// appear jointly as [`LOCATION_CLASS`].
    pub class_scores: BTreeMap<String, f64>,
    /// Sum of the two box diagonal entries.
    pub location_score: f64,
}

impl Explanation {
    /// Total of all heatmap entries, equal to the squared Mahalanobis
    /// deviation from the closest normal event.
    pub fn total(&self) -> f64 {
        self.heatmap.sum()
    }
}

/// The mixture component with the highest posterior responsibility for `x`
/// (weight times component density), with that weighted density. Ties break
/// toward the lower index.
pub fn closest_normal(gmm: &GmmModel, x: &DVector<f64>) -> Result<(usize, f64)> {
    let lw = gmm.log_weighted_densities(x)?;
    let mut best = 0;
    for (m, &v) in lw.iter().enumerate() {
        if v > lw[best] {
            best = m;
        }
    }
    Ok((best, lw[best].exp()))
}

/// Builds the full explanation of one detection under the model.
pub fn saliency_heatmap(model: &NormalityModel, h: &HoiVector) -> Result<Explanation> {
    let layout = *model.layout();
    let dim = layout.dim();
    let flat = h.flatten(&layout)?;
    let v = DVector::from_column_slice(&flat);
    let x = model.pca().project(&v)?;
    let (mode, _) = closest_normal(model.gmm(), &x)?;
    let y = model.pca().back_project(model.gmm().mean(mode))?;
    let delta = &v - &y;

    // A = W S^-1 W^T, the precision of the chosen mode pulled back into the
    // original coordinates.
    let w = model.pca().basis();
    let pulled = w * model.gmm().precision(mode) * w.transpose();
    let heatmap = DMatrix::from_fn(dim, dim, |i, j| delta[i] * pulled[(i, j)] * delta[j]);

    let blocks: Vec<usize> = (0..dim)
        .map(|i| layout.block_of(i).map(Block::index))
        .collect::<Result<_>>()?;
    let mut coarse = [[0.0f64; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            coarse[blocks[i]][blocks[j]] += heatmap[(i, j)];
        }
    }

    let vocab = model.vocab();
    let mut class_scores: BTreeMap<String, f64> = BTreeMap::new();
    let mut bump = |name: &str, score: f64| {
        let slot = class_scores.entry(name.to_string()).or_insert(f64::MIN);
        if score > *slot {
            *slot = score;
        }
    };
    for (i, name) in vocab.interactions.iter().enumerate() {
        bump(name, heatmap[(i, i)]);
    }
    for (j, name) in vocab.objects.iter().enumerate() {
        let i = layout.k_int + j;
        bump(name, heatmap[(i, i)]);
    }
    let location_score = heatmap[(dim - 2, dim - 2)] + heatmap[(dim - 1, dim - 1)];
    bump(LOCATION_CLASS, location_score);

    Ok(Explanation {
        tested: TestedEvent {
            top_interaction: h.top_interaction().map(|i| vocab.interactions[i].clone()),
            top_object: h.top_object().map(|i| vocab.objects[i].clone()),
            hoi: h.clone(),
        },
        normal_mode: mode,
        normal_event: y,
        heatmap,
        coarse,
        class_scores,
        location_score,
    })
}

/// Per-frame explanation scores: for each class, the maximum diagonal score
/// across all of the frame's detections; the location score aggregates the
/// same way. Scores are not normalized across classes, so several classes
/// can explain one frame simultaneously.
pub fn frame_explanation_scores(
    model: &NormalityModel,
    frame: &FrameRecord,
) -> Result<(BTreeMap<String, f64>, f64)> {
    if frame.detections.is_empty() {
        return Err(Error::invalid(format!(
            "frame {} of {} has no detections to explain",
            frame.frame_idx, frame.video_id
        )));
    }
    let mut merged: BTreeMap<String, f64> = BTreeMap::new();
    let mut location = f64::MIN;
    for h in &frame.detections {
        let e = saliency_heatmap(model, h)?;
        for (name, score) in e.class_scores {
            let slot = merged.entry(name).or_insert(f64::MIN);
            if score > *slot {
                *slot = score;
            }
        }
        location = location.max(e.location_score);
    }
    Ok((merged, location))
}
