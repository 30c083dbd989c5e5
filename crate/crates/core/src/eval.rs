//! Evaluation harnesses: frame-level ROC AUC for detection and mean average
//! precision for explanation labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(video_id, frame_idx)` — the identity of a frame across files.
pub type FrameKey = (String, u64);

/// Coarse explanation category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coarse {
    Object,
    Action,
    Location,
}

impl fmt::Display for Coarse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coarse::Object => write!(f, "object"),
            Coarse::Action => write!(f, "action"),
            Coarse::Location => write!(f, "location"),
        }
    }
}

/// One ground-truth explanation of an anomalous frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationLabel {
    pub coarse: Coarse,
    pub fine: String,
}

/// Ground-truth frame flags plus explanation labels for flagged frames.
///
/// Explanations may only appear on frames flagged anomalous, and a labelled
/// frame carries between 1 and 5 labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet {
    frame_flags: BTreeMap<FrameKey, bool>,
    explanations: BTreeMap<FrameKey, Vec<ExplanationLabel>>,
}

impl LabelSet {
    pub fn new(
        frame_flags: BTreeMap<FrameKey, bool>,
        explanations: BTreeMap<FrameKey, Vec<ExplanationLabel>>,
    ) -> Result<Self> {
        for (key, labels) in &explanations {
            if !frame_flags.get(key).copied().unwrap_or(false) {
                return Err(Error::invalid(format!(
                    "explanations on frame {}:{} which is not flagged anomalous",
                    key.0, key.1
                )));
            }
            if labels.is_empty() || labels.len() > 5 {
                return Err(Error::invalid(format!(
                    "frame {}:{} carries {} explanation labels, expected 1 to 5",
                    key.0,
                    key.1,
                    labels.len()
                )));
            }
        }
        Ok(LabelSet {
            frame_flags,
            explanations,
        })
    }

    /// Builds a label set from explanations alone; every labelled frame is
    /// flagged anomalous.
    pub fn from_explanations(
        explanations: BTreeMap<FrameKey, Vec<ExplanationLabel>>,
    ) -> Result<Self> {
        let flags = explanations.keys().map(|k| (k.clone(), true)).collect();
        LabelSet::new(flags, explanations)
    }

    pub fn frame_flags(&self) -> &BTreeMap<FrameKey, bool> {
        &self.frame_flags
    }

    pub fn explanations(&self) -> &BTreeMap<FrameKey, Vec<ExplanationLabel>> {
        &self.explanations
    }

    pub fn is_flagged(&self, key: &FrameKey) -> bool {
        self.frame_flags.get(key).copied().unwrap_or(false)
    }

    /// Distinct fine labels present in the ground truth.
    pub fn fine_classes(&self) -> BTreeSet<String> {
        self.explanations
            .values()
            .flatten()
            .map(|l| l.fine.clone())
            .collect()
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
/// Computed by rank averaging after one sort.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            context: "roc_auc labels",
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score in roc_auc input"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(format!(
            "roc_auc needs both classes, got {n_pos} positive / {n_neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average ranks over tie groups, accumulate the positive rank sum.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based: positions i..=j share the average rank.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Per-class average precisions and their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    /// Classes that entered the mean (at least one positive frame).
    pub evaluated_classes: Vec<String>,
    /// Filtered classes skipped for lack of ground-truth positives.
    pub skipped_classes: Vec<String>,
}

/// All-points average precision of per-frame class scores against fine
/// explanation labels.
///
/// Frames ranked per class are the union of predicted and ground-truth
/// frames; a frame missing a class score counts as score 0. Ranking ties
/// break by `(video_id, frame_idx)` order. The mean is unweighted over the
/// classes with at least one positive frame; `class_filter`, when given,
/// restricts the class set.
pub fn explanation_map(
    pred: &BTreeMap<FrameKey, BTreeMap<String, f64>>,
    truth: &LabelSet,
    class_filter: Option<&BTreeSet<String>>,
) -> Result<MapReport> {
    let truth_classes = truth.fine_classes();
    let classes: BTreeSet<String> = match class_filter {
        Some(filter) => {
            if filter.is_empty() {
                return Err(Error::invalid("class filter is empty"));
            }
            filter.iter().cloned().collect()
        }
        None => truth_classes.clone(),
    };
    if classes.is_empty() {
        return Err(Error::invalid("no explanation classes to evaluate"));
    }

    // The evaluated universe of frames.
    let frames: Vec<FrameKey> = pred
        .keys()
        .chain(truth.frame_flags().keys())
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut per_class_ap = BTreeMap::new();
    let mut skipped = Vec::new();
    for class in &classes {
        let positives: BTreeSet<&FrameKey> = truth
            .explanations()
            .iter()
            .filter(|(_, labels)| labels.iter().any(|l| &l.fine == class))
            .map(|(k, _)| k)
            .collect();
        if positives.is_empty() {
            skipped.push(class.clone());
            continue;
        }
        let mut ranked: Vec<(&FrameKey, f64)> = frames
            .iter()
            .map(|k| {
                let score = pred
                    .get(k)
                    .and_then(|scores| scores.get(class))
                    .copied()
                    .unwrap_or(0.0);
                (k, score)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank0, (key, _)) in ranked.iter().enumerate() {
            if positives.contains(key) {
                hits += 1;
                precision_sum += hits as f64 / (rank0 + 1) as f64;
            }
        }
        per_class_ap.insert(class.clone(), precision_sum / positives.len() as f64);
    }

    if per_class_ap.is_empty() {
        return Err(Error::invalid(
            "no evaluated class has ground-truth positives",
        ));
    }
    let map = per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64;
    Ok(MapReport {
        map,
        evaluated_classes: per_class_ap.keys().cloned().collect(),
        per_class_ap,
        skipped_classes: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn key(v: &str, f: u64) -> FrameKey {
        (v.to_string(), f)
    }

    fn label(coarse: Coarse, fine: &str) -> ExplanationLabel {
        ExplanationLabel {
            coarse,
            fine: fine.to_string(),
        }
    }

    #[test]
    fn perfect_separation_gives_unit_auc() {
        let auc = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        let flipped = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap();
        assert_eq!(flipped, 0.0);
    }

    #[test]
    fn half_correct_pairs_give_half_auc() {
        // Pairs: (0.9,0.8) ok, (0.9,0.2) ok, (0.1,0.8) wrong, (0.1,0.2) wrong.
        let auc = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, false, false, true]).unwrap();
        assert_relative_eq!(auc, 0.5, max_relative = 1e-15);
    }

    #[test]
    fn all_ties_give_half_auc() {
        let auc = roc_auc(&[3.0; 6], &[true, false, true, false, false, true]).unwrap();
        assert_relative_eq!(auc, 0.5, max_relative = 1e-15);
    }

    #[test]
    fn single_class_labels_are_rejected() {
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(roc_auc(&[1.0, 2.0], &[false, false]).is_err());
        assert!(roc_auc(&[1.0], &[true, false]).is_err());
        assert!(roc_auc(&[f64::NAN, 2.0], &[true, false]).is_err());
    }

    #[test]
    fn auc_matches_brute_force_pair_counting() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let n = rng.gen_range(5..60);
            // Coarse grid of scores so ties actually occur.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 4.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = roc_auc(&scores, &labels).unwrap();
            let mut correct = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] && !labels[j] {
                        pairs += 1.0;
                        if scores[i] > scores[j] {
                            correct += 1.0;
                        } else if scores[i] == scores[j] {
                            correct += 0.5;
                        }
                    }
                }
            }
            assert_relative_eq!(fast, correct / pairs, epsilon = 1e-12);
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let scores = [0.1, 0.7, 0.3, 0.9, 0.5, 0.2];
        let labels = [false, true, false, true, true, false];
        let base = roc_auc(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (s * 7.0).exp() + 3.0).collect();
        assert_relative_eq!(roc_auc(&warped, &labels).unwrap(), base, epsilon = 1e-15);
    }

    #[test]
    fn auc_complement_identity_without_ties() {
        let scores = [0.11, 0.72, 0.33, 0.94, 0.55, 0.26];
        let labels = [false, true, false, true, true, false];
        let a = roc_auc(&scores, &labels).unwrap();
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = roc_auc(&negated, &labels).unwrap();
        assert_relative_eq!(a + b, 1.0, epsilon = 1e-15);
    }

    fn truth_one_class() -> LabelSet {
        let mut explanations = BTreeMap::new();
        explanations.insert(key("v", 1), vec![label(Coarse::Object, "bicycle")]);
        explanations.insert(key("v", 2), vec![label(Coarse::Object, "bicycle")]);
        LabelSet::from_explanations(explanations).unwrap()
    }

    fn pred_for(scores: &[(&str, u64, f64)]) -> BTreeMap<FrameKey, BTreeMap<String, f64>> {
        let mut pred = BTreeMap::new();
        for &(v, f, s) in scores {
            let mut m = BTreeMap::new();
            m.insert("bicycle".to_string(), s);
            pred.insert(key(v, f), m);
        }
        pred
    }

    #[test]
    fn ap_matches_hand_computed_example() {
        // Positives on frames 1 and 2; scores rank them 1st and 3rd:
        // AP = (1/1 + 2/3) / 2.
        let truth = truth_one_class();
        let pred = pred_for(&[("v", 1, 0.9), ("v", 3, 0.5), ("v", 2, 0.3)]);
        let report = explanation_map(&pred, &truth, None).unwrap();
        assert_eq!(report.map, (1.0 + 2.0 / 3.0) / 2.0);
        assert_relative_eq!(
            report.per_class_ap["bicycle"],
            0.8333333333,
            max_relative = 1e-9
        );
    }

    #[test]
    fn perfect_ranking_gives_unit_map() {
        let mut explanations = BTreeMap::new();
        explanations.insert(key("v", 1), vec![label(Coarse::Object, "bicycle")]);
        explanations.insert(
            key("v", 5),
            vec![
                label(Coarse::Action, "run"),
                label(Coarse::Object, "bicycle"),
            ],
        );
        let truth = LabelSet::from_explanations(explanations).unwrap();
        let mut pred = BTreeMap::new();
        for f in 1..=6u64 {
            let mut m = BTreeMap::new();
            m.insert(
                "bicycle".to_string(),
                if f == 1 || f == 5 { 1.0 } else { 0.1 },
            );
            m.insert("run".to_string(), if f == 5 { 0.8 } else { 0.0 });
            pred.insert(key("v", f), m);
        }
        let report = explanation_map(&pred, &truth, None).unwrap();
        assert_eq!(report.map, 1.0);
        assert_eq!(report.evaluated_classes, vec!["bicycle", "run"]);
    }

    #[test]
    fn zero_score_negatives_below_positives_do_not_change_ap() {
        let truth = truth_one_class();
        let pred = pred_for(&[("v", 1, 0.9), ("v", 2, 0.3)]);
        let base = explanation_map(&pred, &truth, None).unwrap();
        let padded = pred_for(&[("v", 1, 0.9), ("v", 2, 0.3), ("v", 9, 0.0), ("v", 10, 0.0)]);
        let more = explanation_map(&padded, &truth, None).unwrap();
        assert_eq!(base.map, more.map);
    }

    #[test]
    fn ap_is_scale_invariant() {
        let truth = truth_one_class();
        let a = explanation_map(
            &pred_for(&[("v", 1, 0.9), ("v", 3, 0.5), ("v", 2, 0.3)]),
            &truth,
            None,
        )
        .unwrap();
        let b = explanation_map(
            &pred_for(&[("v", 1, 90.0), ("v", 3, 50.0), ("v", 2, 30.0)]),
            &truth,
            None,
        )
        .unwrap();
        assert_eq!(a.map, b.map);
    }

    #[test]
    fn map_is_mean_of_per_class_aps() {
        let mut explanations = BTreeMap::new();
        explanations.insert(key("v", 1), vec![label(Coarse::Object, "bicycle")]);
        explanations.insert(key("v", 2), vec![label(Coarse::Action, "run")]);
        explanations.insert(key("v", 4), vec![label(Coarse::Location, "location")]);
        let truth = LabelSet::from_explanations(explanations).unwrap();
        let mut pred = BTreeMap::new();
        for f in 1..=5u64 {
            let mut m = BTreeMap::new();
            m.insert("bicycle".to_string(), 1.0 / f as f64);
            m.insert("run".to_string(), f as f64);
            m.insert("location".to_string(), if f == 4 { 2.0 } else { 0.5 });
            pred.insert(key("v", f), m);
        }
        let report = explanation_map(&pred, &truth, None).unwrap();
        let mean: f64 =
            report.per_class_ap.values().sum::<f64>() / report.per_class_ap.len() as f64;
        assert_relative_eq!(report.map, mean, epsilon = 1e-15);
        assert_eq!(report.per_class_ap.len(), 3);
    }

    #[test]
    fn class_filter_restricts_and_reports_skips() {
        let truth = truth_one_class();
        let pred = pred_for(&[("v", 1, 0.9), ("v", 2, 0.3)]);
        let filter: BTreeSet<String> = ["bicycle".to_string(), "unicorn".to_string()]
            .into_iter()
            .collect();
        let report = explanation_map(&pred, &truth, Some(&filter)).unwrap();
        assert_eq!(report.evaluated_classes, vec!["bicycle"]);
        assert_eq!(report.skipped_classes, vec!["unicorn"]);

        let only_missing: BTreeSet<String> = ["unicorn".to_string()].into_iter().collect();
        assert!(explanation_map(&pred, &truth, Some(&only_missing)).is_err());
        let empty: BTreeSet<String> = BTreeSet::new();
        assert!(explanation_map(&pred, &truth, Some(&empty)).is_err());
    }

    #[test]
    fn label_set_enforces_its_invariants() {
        let mut flags = BTreeMap::new();
        flags.insert(key("v", 1), false);
        let mut explanations = BTreeMap::new();
        explanations.insert(key("v", 1), vec![label(Coarse::Action, "run")]);
        assert!(LabelSet::new(flags, explanations.clone()).is_err());

        let mut flags_ok = BTreeMap::new();
        flags_ok.insert(key("v", 1), true);
        assert!(LabelSet::new(flags_ok.clone(), explanations).is_ok());

        let six = vec![label(Coarse::Action, "run"); 6];
        let mut too_many = BTreeMap::new();
        too_many.insert(key("v", 1), six);
        assert!(LabelSet::new(flags_ok.clone(), too_many).is_err());

        let mut none = BTreeMap::new();
        none.insert(key("v", 1), Vec::new());
        assert!(LabelSet::new(flags_ok, none).is_err());
    }
}
