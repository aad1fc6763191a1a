//! Random-forest classifier over [`FeatureVector`]s: bootstrap-sampled
//! CART trees with Gini splits, leaf class fractions, and a decision
//! threshold chosen on cross-validation folds to favour precision.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FeatureVector, LabeledExample, FEATURE_NAMES};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Ad,
    NotAd,
}

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training data is empty")]
    EmptyData,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("need at least 2 examples of each class, got {ads} ads / {not_ads} non-ads")]
    InsufficientData { ads: usize, not_ads: usize },
    #[error("model feature names do not match this build: expected {expected:?}, found {found:?}")]
    FeatureMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model decode error: {0}")]
    Decode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { ad_fraction: f64 },
}

impl TreeNode {
    pub fn evaluate(&self, values: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { ad_fraction } => *ad_fraction,
            TreeNode::Split { feature, threshold, left, right } => {
                if values[*feature] <= *threshold {
                    left.evaluate(values)
                } else {
                    right.evaluate(values)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub precision: f64,
    pub recall: f64,
}

/// 5-fold cross-validation metrics at the selected decision threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldMetrics>,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub n_trees: usize,
    /// `None` grows trees until pure.
    pub max_depth: Option<usize>,
    pub seed: u64,
    /// Threshold selection maximizes precision subject to recall >= floor.
    pub recall_floor: f64,
    pub cv_folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { n_trees: 100, max_depth: None, seed: 0, recall_floor: 0.5, cv_folds: 5 }
    }
}

/// A trained forest; self-describing and JSON-serializable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub n_trees: usize,
    pub decision_threshold: f64,
    pub trees: Vec<TreeNode>,
    pub cv: Option<CvReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub verdict: Label,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: ForestModel,
    pub warnings: Vec<String>,
}

impl ForestModel {
    /// Mean of per-tree leaf fractions; ad iff probability >= threshold.
    pub fn predict(&self, fv: &FeatureVector) -> Result<Prediction, ForestError> {
        self.check_features()?;
        Ok(self.predict_values(&fv.to_values()))
    }

    pub fn predict_values(&self, values: &[f64]) -> Prediction {
        let sum: f64 = self.trees.iter().map(|t| t.evaluate(values)).sum();
        let probability = if self.trees.is_empty() { 0.0 } else { sum / self.trees.len() as f64 };
        let verdict =
            if probability >= self.decision_threshold { Label::Ad } else { Label::NotAd };
        Prediction { probability, verdict }
    }

    fn check_features(&self) -> Result<(), ForestError> {
        if self.feature_names != FEATURE_NAMES {
            return Err(ForestError::FeatureMismatch {
                expected: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
                found: self.feature_names.clone(),
            });
        }
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<(), ForestError> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ForestError> {
        self.to_writer(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// Loads and validates a stored model; mismatched feature names or an
    /// unknown format version fail loudly.
    pub fn from_reader<R: Read>(r: R) -> Result<Self, ForestError> {
        let model: ForestModel = serde_json::from_reader(r)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ForestError::UnsupportedVersion(model.format_version));
        }
        model.check_features()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, ForestError> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

struct Dataset {
    rows: Vec<Vec<f64>>,
    labels: Vec<bool>,
}

/// Trains a forest with 5-fold cross-validation. Deterministic for a given
/// seed. The decision threshold is chosen on pooled out-of-fold
/// probabilities: maximum precision subject to recall >= the configured
/// floor (falling back to maximum recall when the floor is unreachable).
pub fn train_forest(
    data: &[LabeledExample],
    config: TrainConfig,
) -> Result<TrainReport, ForestError> {
    if data.is_empty() {
        return Err(ForestError::EmptyData);
    }
    let dataset = Dataset {
        rows: data.iter().map(|ex| ex.features.to_values()).collect(),
        labels: data.iter().map(|ex| ex.label == Label::Ad).collect(),
    };
    let ads = dataset.labels.iter().filter(|&&l| l).count();
    let not_ads = dataset.labels.len() - ads;
    if ads == 0 || not_ads == 0 {
        return Err(ForestError::SingleClass);
    }
    if ads < 2 || not_ads < 2 {
        return Err(ForestError::InsufficientData { ads, not_ads });
    }

    let mut warnings = Vec::new();
    for (f, name) in FEATURE_NAMES.iter().enumerate() {
        let first = dataset.rows[0][f];
        if dataset.rows.iter().all(|r| r[f] == first) {
            warnings.push(format!("feature '{name}' is constant in the training data"));
        }
    }

    let folds = config.cv_folds.clamp(2, ads.min(not_ads));
    let assignments = stratified_folds(&dataset.labels, folds, config.seed);

    // Out-of-fold probabilities drive threshold selection.
    let mut pooled: Vec<(f64, bool, usize)> = Vec::with_capacity(dataset.rows.len());
    for fold in 0..folds {
        let train_idx: Vec<usize> =
            (0..dataset.rows.len()).filter(|i| assignments[*i] != fold).collect();
        let trees = grow_forest(&dataset, &train_idx, config, config.seed ^ (fold as u64 + 1));
        for i in (0..dataset.rows.len()).filter(|i| assignments[*i] == fold) {
            let sum: f64 = trees.iter().map(|t| t.evaluate(&dataset.rows[i])).sum();
            pooled.push((sum / trees.len() as f64, dataset.labels[i], fold));
        }
    }
    let decision_threshold = select_threshold(&pooled, config.recall_floor);

    let fold_metrics: Vec<FoldMetrics> = (0..folds)
        .map(|fold| {
            let subset: Vec<(f64, bool)> = pooled
                .iter()
                .filter(|(_, _, f)| *f == fold)
                .map(|(p, l, _)| (*p, *l))
                .collect();
            precision_recall(&subset, decision_threshold)
        })
        .collect();
    let cv = CvReport {
        mean_precision: fold_metrics.iter().map(|m| m.precision).sum::<f64>()
            / fold_metrics.len() as f64,
        mean_recall: fold_metrics.iter().map(|m| m.recall).sum::<f64>()
            / fold_metrics.len() as f64,
        folds: fold_metrics,
    };

    let all: Vec<usize> = (0..dataset.rows.len()).collect();
    let trees = grow_forest(&dataset, &all, config, config.seed);
    Ok(TrainReport {
        model: ForestModel {
            format_version: MODEL_FORMAT_VERSION,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            n_trees: trees.len(),
            decision_threshold,
            trees,
            cv: Some(cv),
        },
        warnings,
    })
}

/// Deterministic stratified fold assignment: each class is shuffled and
/// dealt round-robin so every fold sees both classes.
fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xf01d));
    let mut assignment = vec![0usize; labels.len()];
    for class in [true, false] {
        let mut members: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == class).collect();
        shuffle(&mut members, &mut rng);
        for (pos, idx) in members.into_iter().enumerate() {
            assignment[idx] = pos % folds;
        }
    }
    assignment
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn grow_forest(data: &Dataset, indices: &[usize], config: TrainConfig, seed: u64) -> Vec<TreeNode> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..config.n_trees)
        .map(|_| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.random());
            let sample: Vec<usize> =
                (0..indices.len()).map(|_| indices[rng.random_range(0..indices.len())]).collect();
            build_tree(data, &sample, 0, config.max_depth, &mut rng)
        })
        .collect()
}

fn build_tree(
    data: &Dataset,
    indices: &[usize],
    depth: usize,
    max_depth: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let ads = indices.iter().filter(|&&i| data.labels[i]).count();
    let ad_fraction = ads as f64 / indices.len() as f64;
    if ads == 0 || ads == indices.len() || indices.len() < 2 {
        return TreeNode::Leaf { ad_fraction };
    }
    if let Some(limit) = max_depth {
        if depth >= limit {
            return TreeNode::Leaf { ad_fraction };
        }
    }

    let n_features = data.rows[0].len();
    let candidates = (n_features as f64).sqrt().ceil() as usize;
    let mut feature_pool: Vec<usize> = (0..n_features).collect();
    shuffle(&mut feature_pool, rng);

    let parent_gini = gini(ad_fraction);
    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    for &feature in feature_pool.iter().take(candidates) {
        let mut values: Vec<(f64, bool)> =
            indices.iter().map(|&i| (data.rows[i][feature], data.labels[i])).collect();
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total = values.len() as f64;
        let total_ads = ads as f64;
        let mut left_n = 0f64;
        let mut left_ads = 0f64;
        for w in 0..values.len() - 1 {
            left_n += 1.0;
            if values[w].1 {
                left_ads += 1.0;
            }
            if values[w].0 == values[w + 1].0 {
                continue;
            }
            let right_n = total - left_n;
            let right_ads = total_ads - left_ads;
            let weighted = left_n / total * gini(left_ads / left_n)
                + right_n / total * gini(right_ads / right_n);
            let gain = parent_gini - weighted;
            if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                let threshold = (values[w].0 + values[w + 1].0) / 2.0;
                best = Some((gain, feature, threshold));
            }
        }
    }

    match best {
        None => TreeNode::Leaf { ad_fraction },
        Some((_, feature, threshold)) => {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                indices.iter().partition(|&&i| data.rows[i][feature] <= threshold);
            if left_idx.is_empty() || right_idx.is_empty() {
                return TreeNode::Leaf { ad_fraction };
            }
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(build_tree(data, &left_idx, depth + 1, max_depth, rng)),
                right: Box::new(build_tree(data, &right_idx, depth + 1, max_depth, rng)),
            }
        }
    }
}

fn gini(p: f64) -> f64 {
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

fn precision_recall(scored: &[(f64, bool)], threshold: f64) -> FoldMetrics {
    let mut tp = 0f64;
    let mut fp = 0f64;
    let mut fn_ = 0f64;
    for &(p, label) in scored {
        let predicted_ad = p >= threshold;
        match (predicted_ad, label) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    FoldMetrics {
        precision: if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) },
        recall: if tp + fn_ == 0.0 { 1.0 } else { tp / (tp + fn_) },
    }
}

/// Candidate thresholds are the observed probabilities; among those meeting
/// the recall floor the highest precision wins, ties broken toward higher
/// recall and then the lower threshold.
fn select_threshold(pooled: &[(f64, bool, usize)], recall_floor: f64) -> f64 {
    let scored: Vec<(f64, bool)> = pooled.iter().map(|(p, l, _)| (*p, *l)).collect();
    let mut candidates: Vec<f64> = scored.iter().map(|(p, _)| *p).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut feasible: Option<(f64, f64, f64)> = None; // (precision, recall, threshold)
    let mut fallback: Option<(f64, f64, f64)> = None; // (recall, precision, threshold)
    for &t in &candidates {
        let m = precision_recall(&scored, t);
        if m.recall >= recall_floor
            && feasible.is_none_or(|(bp, br, bt)| {
                m.precision > bp
                    || (m.precision == bp && (m.recall > br || (m.recall == br && t < bt)))
            })
        {
            feasible = Some((m.precision, m.recall, t));
        }
        if fallback.is_none_or(|(br, bp, _)| m.recall > br || (m.recall == br && m.precision > bp))
        {
            fallback = Some((m.recall, m.precision, t));
        }
    }
    let chosen = feasible
        .map(|(_, _, t)| t)
        .or(fallback.map(|(_, _, t)| t))
        .unwrap_or(0.5);
    // Split the margin below the chosen candidate: classifications on the
    // pooled data are unchanged, unseen points get slack.
    let below = candidates
        .iter()
        .copied()
        .filter(|&p| p < chosen)
        .fold(0.0f64, f64::max);
    (below + chosen) / 2.0
}
