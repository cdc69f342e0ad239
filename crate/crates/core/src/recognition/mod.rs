//! Identification from feature vectors: dataset splitting, nearest-neighbour
//! and MLP classifiers, and rank-k evaluation.

mod mlp;
mod split;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use mlp::{Mlp, MlpConfig, MlpGradient};
pub use split::{split_dataset, split_indices, Split, SplitIndices};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionKind {
    Eye,
    Mouth,
    Glasses,
    Hair,
    None,
}

impl OcclusionKind {
    pub const ALL: [OcclusionKind; 5] = [
        OcclusionKind::Eye,
        OcclusionKind::Mouth,
        OcclusionKind::Glasses,
        OcclusionKind::Hair,
        OcclusionKind::None,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            OcclusionKind::Eye => "eye",
            OcclusionKind::Mouth => "mouth",
            OcclusionKind::Glasses => "glasses",
            OcclusionKind::Hair => "hair",
            OcclusionKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeature {
    pub subject_id: u32,
    pub occlusion_kind: OcclusionKind,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    NearestNeighbor,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: ClassifierKind,
    pub mlp: MlpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierModel {
    NearestNeighbor { gallery: Vec<LabeledFeature> },
    Mlp(Mlp),
}

fn check_lengths(items: &[LabeledFeature]) -> Result<usize> {
    let first = items.first().ok_or(Error::EmptyInput("no training samples"))?;
    let d = first.vector.len();
    if d == 0 {
        return Err(Error::EmptyInput("feature vectors are empty"));
    }
    for it in items {
        if it.vector.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                found: it.vector.len(),
            });
        }
        if it.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("feature vector has non-finite entries".into()));
        }
    }
    Ok(d)
}

pub fn train(train_set: &[LabeledFeature], cfg: &TrainConfig) -> Result<ClassifierModel> {
    check_lengths(train_set)?;
    let mut labels: Vec<u32> = train_set.iter().map(|f| f.subject_id).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            found: labels.len(),
        });
    }
    Ok(match cfg.kind {
        ClassifierKind::NearestNeighbor => ClassifierModel::NearestNeighbor {
            gallery: train_set.to_vec(),
        },
        ClassifierKind::Mlp => ClassifierModel::Mlp(Mlp::train(train_set, &cfg.mlp)?),
    })
}

impl ClassifierModel {
    pub fn input_len(&self) -> usize {
        match self {
            ClassifierModel::NearestNeighbor { gallery } => gallery.first().map_or(0, |g| g.vector.len()),
            ClassifierModel::Mlp(m) => m.input_len(),
        }
    }

    pub fn labels(&self) -> Vec<u32> {
        match self {
            ClassifierModel::NearestNeighbor { gallery } => {
                let mut l: Vec<u32> = gallery.iter().map(|g| g.subject_id).collect();
                l.sort_unstable();
                l.dedup();
                l
            }
            ClassifierModel::Mlp(m) => m.labels.clone(),
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Every known label once, best first. Nearest-neighbour scores are the
/// negated distance to the closest gallery sample of the label; MLP scores
/// are class probabilities. Equal scores rank the lower subject id first.
pub fn classify(model: &ClassifierModel, vector: &[f64]) -> Result<Vec<(u32, f64)>> {
    if vector.len() != model.input_len() {
        return Err(Error::LengthMismatch {
            expected: model.input_len(),
            found: vector.len(),
        });
    }
    let mut scored: Vec<(u32, f64)> = match model {
        ClassifierModel::NearestNeighbor { gallery } => {
            let mut best: BTreeMap<u32, f64> = BTreeMap::new();
            for g in gallery {
                let d = euclidean(&g.vector, vector);
                let e = best.entry(g.subject_id).or_insert(f64::INFINITY);
                if d < *e {
                    *e = d;
                }
            }
            best.into_iter().map(|(l, d)| (l, -d)).collect()
        }
        ClassifierModel::Mlp(m) => m.labels.iter().copied().zip(m.probabilities(vector)).collect(),
    };
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRate {
    pub k: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionBreakdown {
    pub kind: OcclusionKind,
    pub count: usize,
    pub rank_1: f64,
    pub rank_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub truth: u32,
    pub predicted: u32,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub test_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub test_count: usize,
    pub rank_1: f64,
    pub rank_2: f64,
    /// One entry per requested `k`, ascending.
    pub ranks: Vec<RankRate>,
    pub per_occlusion: Vec<OcclusionBreakdown>,
    /// Rank-1 predictions, sorted by `(truth, predicted)`.
    pub confusion: Vec<ConfusionEntry>,
    pub split: Option<SplitInfo>,
}

/// Rank-k identification rates over `test_set`. Rank 1 and 2 are always
/// reported alongside any requested `ks`.
pub fn evaluate(model: &ClassifierModel, test_set: &[LabeledFeature], ks: &[usize]) -> Result<EvaluationReport> {
    if test_set.is_empty() {
        return Err(Error::EmptyInput("test set is empty"));
    }
    if ks.contains(&0) {
        return Err(Error::InvalidConfig("rank k must be at least 1".into()));
    }
    // position of the true label in each ranking; None if the label is unknown
    let mut positions = Vec::with_capacity(test_set.len());
    let mut confusion: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for item in test_set {
        let ranked = classify(model, &item.vector)?;
        positions.push(ranked.iter().position(|(l, _)| *l == item.subject_id));
        *confusion.entry((item.subject_id, ranked[0].0)).or_default() += 1;
    }
    let rate = |k: usize, filter: &dyn Fn(usize) -> bool| {
        let (mut hit, mut n) = (0usize, 0usize);
        for (i, p) in positions.iter().enumerate() {
            if filter(i) {
                n += 1;
                hit += p.is_some_and(|p| p < k) as usize;
            }
        }
        if n == 0 {
            0.0
        } else {
            hit as f64 / n as f64
        }
    };
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let ranks = ks.iter().map(|&k| RankRate { k, rate: rate(k, &|_| true) }).collect();

    let mut per_occlusion = Vec::new();
    for kind in OcclusionKind::ALL {
        let count = test_set.iter().filter(|t| t.occlusion_kind == kind).count();
        if count == 0 {
            continue;
        }
        let of_kind = |i: usize| test_set[i].occlusion_kind == kind;
        per_occlusion.push(OcclusionBreakdown {
            kind,
            count,
            rank_1: rate(1, &of_kind),
            rank_2: rate(2, &of_kind),
        });
    }
    Ok(EvaluationReport {
        test_count: test_set.len(),
        rank_1: rate(1, &|_| true),
        rank_2: rate(2, &|_| true),
        ranks,
        per_occlusion,
        confusion: confusion
            .into_iter()
            .map(|((truth, predicted), count)| ConfusionEntry { truth, predicted, count })
            .collect(),
        split: None,
    })
}
