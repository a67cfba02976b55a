use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::labeling::CoarseLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassQuota {
    pub validation: usize,
    pub test: usize,
}

/// Per-class validation/test counts; everything else goes to training.
/// Classes without a quota go entirely to training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub quotas: BTreeMap<CoarseLabel, ClassQuota>,
    pub seed: u64,
}

impl SplitSpec {
    fn from_counts(counts: [(CoarseLabel, usize, usize); 4], seed: u64) -> Self {
        Self {
            quotas: counts
                .into_iter()
                .map(|(c, validation, test)| (c, ClassQuota { validation, test }))
                .collect(),
            seed,
        }
    }

    /// Validation/test counts of the reference English dataset.
    pub fn reference_english(seed: u64) -> Self {
        use CoarseLabel::*;
        Self::from_counts(
            [
                (Normal, 12, 14),
                (Mild, 17, 16),
                (Moderate, 15, 14),
                (Severe, 13, 14),
            ],
            seed,
        )
    }

    /// Validation/test counts of the reference Luganda dataset.
    pub fn reference_luganda(seed: u64) -> Self {
        use CoarseLabel::*;
        Self::from_counts(
            [
                (Normal, 12, 11),
                (Mild, 12, 12),
                (Moderate, 21, 21),
                (Severe, 12, 14),
            ],
            seed,
        )
    }

    pub fn quota(&self, class: CoarseLabel) -> ClassQuota {
        self.quotas.get(&class).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledId {
    pub doc_id: String,
    pub label: CoarseLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub language: String,
    pub seed: u64,
    pub train: Vec<LabeledId>,
    pub validation: Vec<LabeledId>,
    pub test: Vec<LabeledId>,
}

impl DatasetSplits {
    pub fn counts(part: &[LabeledId]) -> BTreeMap<CoarseLabel, usize> {
        let mut out = BTreeMap::new();
        for item in part {
            *out.entry(item.label).or_default() += 1;
        }
        out
    }
}

/// Shuffles each class with its own seeded stream and deals out test, then
/// validation, then training members.
pub fn shuffle_split(
    population: &[LabeledId],
    spec: &SplitSpec,
    language: &str,
) -> Result<DatasetSplits, DatasetError> {
    let mut seen = HashSet::new();
    let mut by_class: BTreeMap<CoarseLabel, Vec<&LabeledId>> = BTreeMap::new();
    for item in population {
        if !seen.insert(item.doc_id.as_str()) {
            return Err(DatasetError::DuplicateId(item.doc_id.clone()));
        }
        by_class.entry(item.label).or_default().push(item);
    }
    for (&class, quota) in &spec.quotas {
        let available = by_class.get(&class).map_or(0, Vec::len);
        let requested = quota.validation + quota.test;
        if requested > available {
            return Err(DatasetError::ClassTooSmall {
                class,
                available,
                requested,
            });
        }
    }

    let mut splits = DatasetSplits {
        language: language.to_string(),
        seed: spec.seed,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut members) in by_class {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(class.index() as u64);
        members.shuffle(&mut rng);
        let quota = spec.quota(class);
        let (test, rest) = members.split_at(quota.test);
        let (validation, train) = rest.split_at(quota.validation);
        splits.test.extend(test.iter().map(|&i| i.clone()));
        splits
            .validation
            .extend(validation.iter().map(|&i| i.clone()));
        splits.train.extend(train.iter().map(|&i| i.clone()));
    }
    Ok(splits)
}
