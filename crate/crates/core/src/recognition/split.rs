use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{LabeledFeature, OcclusionKind};
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    /// Ascending indices into the input.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Subjects with a single sample; kept entirely in train.
    pub single_sample_subjects: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledFeature>,
    pub test: Vec<LabeledFeature>,
    pub single_sample_subjects: Vec<u32>,
}

/// Subject-stratified split: about `round(n * test_fraction)` samples go to
/// test, every subject keeps at least one sample in train, and within that
/// constraint the test set is balanced across occlusion kinds.
pub fn split_indices(labels: &[(u32, OcclusionKind)], test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig("test_fraction must lie in (0, 1)".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, (s, _)) in labels.iter().enumerate() {
        by_subject.entry(*s).or_default().push(i);
    }
    let single_sample_subjects: Vec<u32> = by_subject
        .iter()
        .filter(|(_, v)| v.len() == 1)
        .map(|(s, _)| *s)
        .collect();

    // per-subject quota: floor share, then largest remainders
    let subjects: Vec<u32> = by_subject.keys().copied().collect();
    let target = libm::round(labels.len() as f64 * test_fraction) as usize;
    let mut quota: Vec<usize> = Vec::with_capacity(subjects.len());
    let mut remainder: Vec<(f64, usize, usize)> = Vec::new();
    for (si, s) in subjects.iter().enumerate() {
        let n = by_subject[s].len();
        let share = n as f64 * test_fraction;
        let q = (libm::floor(share) as usize).min(n - 1);
        quota.push(q);
        remainder.push((share - q as f64, rng.below(usize::MAX), si));
    }
    remainder.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut assigned: usize = quota.iter().sum();
    while assigned < target {
        let mut progressed = false;
        for &(_, _, si) in &remainder {
            if assigned >= target {
                break;
            }
            if quota[si] + 1 < by_subject[&subjects[si]].len() {
                quota[si] += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    // choose which samples: least-used occlusion kind first, random ties
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    rng.shuffle(&mut order);
    let mut kind_counts: BTreeMap<OcclusionKind, usize> = BTreeMap::new();
    let mut test = Vec::with_capacity(target);
    for si in order {
        let mut pool = by_subject[&subjects[si]].clone();
        rng.shuffle(&mut pool);
        for _ in 0..quota[si] {
            let (pos, _) = pool
                .iter()
                .enumerate()
                .min_by_key(|(p, &i)| (kind_counts.get(&labels[i].1).copied().unwrap_or(0), *p))
                .expect("quota below pool size");
            let i = pool.remove(pos);
            *kind_counts.entry(labels[i].1).or_default() += 1;
            test.push(i);
        }
    }
    test.sort_unstable();
    let mut is_test = alloc::vec![false; labels.len()];
    test.iter().for_each(|&i| is_test[i] = true);
    let train = (0..labels.len()).filter(|&i| !is_test[i]).collect();
    Ok(SplitIndices {
        train,
        test,
        single_sample_subjects,
    })
}

pub fn split_dataset(items: &[LabeledFeature], test_fraction: f64, seed: u64) -> Result<Split> {
    let labels: Vec<(u32, OcclusionKind)> = items.iter().map(|f| (f.subject_id, f.occlusion_kind)).collect();
    let idx = split_indices(&labels, test_fraction, seed)?;
    Ok(Split {
        train: idx.train.iter().map(|&i| items[i].clone()).collect(),
        test: idx.test.iter().map(|&i| items[i].clone()).collect(),
        single_sample_subjects: idx.single_sample_subjects,
    })
}
