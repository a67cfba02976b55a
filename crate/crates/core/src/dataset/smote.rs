use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::features::{lerp, squared_distance, SparseVector};
use crate::labeling::CoarseLabel;

pub const DEFAULT_SMOTE_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub vector: SparseVector,
    pub label: CoarseLabel,
    #[serde(default)]
    pub synthetic: bool,
}

impl LabeledVector {
    pub fn real(doc_id: impl Into<String>, vector: SparseVector, label: CoarseLabel) -> Self {
        Self {
            doc_id: Some(doc_id.into()),
            vector,
            label,
            synthetic: false,
        }
    }
}

/// Oversamples every class up to the size of the largest one. Synthetic
/// points lie on the segment between a random member and one of its `k`
/// nearest same-class neighbours. The input comes back first, unchanged.
pub fn smote_oversample(
    train: &[LabeledVector],
    k: usize,
    seed: u64,
) -> Result<Vec<LabeledVector>, DatasetError> {
    if k == 0 {
        return Err(DatasetError::InvalidK);
    }
    if train.is_empty() {
        return Err(DatasetError::EmptyTraining);
    }
    let mut by_class: BTreeMap<CoarseLabel, Vec<&SparseVector>> = BTreeMap::new();
    for item in train {
        by_class.entry(item.label).or_default().push(&item.vector);
    }
    let target = by_class.values().map(Vec::len).max().unwrap_or(0);

    let synthetic: Vec<Vec<LabeledVector>> = by_class
        .par_iter()
        .map(|(&label, members)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(label.index() as u64);
            synthesize(label, members, target - members.len(), k, &mut rng)
        })
        .collect();

    let mut out = train.to_vec();
    out.extend(synthetic.into_iter().flatten());
    Ok(out)
}

fn synthesize(
    label: CoarseLabel,
    members: &[&SparseVector],
    needed: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<LabeledVector> {
    let make = |vector| LabeledVector {
        doc_id: None,
        vector,
        label,
        synthetic: true,
    };
    if needed == 0 {
        return Vec::new();
    }
    if members.len() == 1 {
        log::warn!("class {label} has a single training example; duplicating it {needed} times");
        return (0..needed).map(|_| make(members[0].clone())).collect();
    }
    let k = k.min(members.len() - 1);
    let neighbours = nearest_neighbours(members, k);
    (0..needed)
        .map(|_| {
            let base = rng.random_range(0..members.len());
            let other = neighbours[base][rng.random_range(0..k)];
            let u: f64 = rng.random();
            make(lerp(members[base], members[other], u))
        })
        .collect()
}

/// For each member, the positions of its `k` nearest other members;
/// equal distances keep the lower position.
fn nearest_neighbours(members: &[&SparseVector], k: usize) -> Vec<Vec<usize>> {
    (0..members.len())
        .into_par_iter()
        .map(|i| {
            let mut ranked: Vec<(f64, usize)> = (0..members.len())
                .filter(|&j| j != i)
                .map(|j| (squared_distance(members[i], members[j]), j))
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            ranked.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}
