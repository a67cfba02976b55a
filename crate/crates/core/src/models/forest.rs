use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Gini, GrowParams, Tree};
use super::{prepare, ModelError, ModelParams, ModelSpec, TrainedModel};
use crate::features::SparseVector;
use crate::labeling::CoarseLabel;

/// Bagged Gini trees; each leaf stores the class distribution of the
/// bootstrap samples that reached it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub max_features: usize,
    pub trees: Vec<Tree<Vec<f64>>>,
}

/// Index of the largest value; ties go to the earlier class.
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl RandomForestModel {
    /// Majority vote over per-tree predictions.
    pub(super) fn predict_index(&self, x: &SparseVector, n_classes: usize) -> usize {
        let mut votes = vec![0.0; n_classes];
        for tree in &self.trees {
            votes[argmax_first(tree.leaf(x))] += 1.0;
        }
        argmax_first(&votes)
    }

    pub(super) fn check_shape(&self, classes: usize) -> bool {
        !self.trees.is_empty()
            && self
                .trees
                .iter()
                .all(|t| t.is_well_formed() && t.leaves().all(|l| l.len() == classes))
    }
}

pub fn train_random_forest(
    x: &[SparseVector],
    y: &[CoarseLabel],
    n_features: usize,
    spec: &ModelSpec,
) -> Result<TrainedModel, ModelError> {
    let (classes, targets) = prepare(x, y, n_features)?;
    let n_trees = spec.get_count("n_trees");
    let max_features = ((n_features as f64).sqrt().floor() as usize).max(1);
    let params = GrowParams {
        max_depth: None,
        min_samples_split: spec.get_count("min_samples_split"),
        max_features: Some(max_features),
    };
    let n_classes = classes.len();

    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
            rng.set_stream(t as u64);
            let mut weights = vec![0.0; x.len()];
            for _ in 0..x.len() {
                weights[rng.random_range(0..x.len())] += 1.0;
            }
            let samples: Vec<usize> = (0..x.len()).filter(|&i| weights[i] > 0.0).collect();
            let gini = Gini {
                targets: &targets,
                weights: &weights,
                n_classes,
            };
            grow(x, samples, &gini, &params, Some(&mut rng), |reached| {
                let mut dist = vec![0.0; n_classes];
                for &s in reached {
                    dist[targets[s]] += weights[s];
                }
                let total: f64 = dist.iter().sum();
                dist.iter_mut().for_each(|d| *d /= total);
                dist
            })
        })
        .collect();

    Ok(TrainedModel {
        spec: spec.clone(),
        classes,
        n_features,
        params: ModelParams::RandomForest(RandomForestModel {
            max_features,
            trees,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    fn disjoint(n: usize) -> (Vec<SparseVector>, Vec<CoarseLabel>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let class = i % 2;
            let base = (class * 5) as u32;
            let entries = vec![
                (base + (i % 5) as u32, 1.0),
                (base + ((i + 2) % 5) as u32, 0.5),
            ];
            x.push(SparseVector::from_unsorted(entries));
            y.push(if class == 0 {
                CoarseLabel::Normal
            } else {
                CoarseLabel::Severe
            });
        }
        (x, y)
    }

    #[test]
    fn separable_training_accuracy() {
        let (x, y) = disjoint(20);
        let spec = ModelSpec::with_defaults(ModelKind::RandomForest, 11);
        let m = train_random_forest(&x, &y, 10, &spec).unwrap();
        assert_eq!(m.predict_batch(&x), y);
    }

    #[test]
    fn seed_determinism() {
        let (x, y) = disjoint(20);
        let spec = ModelSpec::with_defaults(ModelKind::RandomForest, 5)
            .with("n_trees", 7.0)
            .unwrap();
        assert_eq!(
            train_random_forest(&x, &y, 10, &spec).unwrap(),
            train_random_forest(&x, &y, 10, &spec).unwrap()
        );
    }

    #[test]
    fn single_leaf_predicts_bootstrap_majority() {
        let x = vec![
            SparseVector::from_dense(&[1.0]),
            SparseVector::from_dense(&[2.0]),
            SparseVector::from_dense(&[3.0]),
            SparseVector::from_dense(&[4.0]),
            SparseVector::from_dense(&[5.0]),
        ];
        let y = [
            CoarseLabel::Mild,
            CoarseLabel::Mild,
            CoarseLabel::Mild,
            CoarseLabel::Mild,
            CoarseLabel::Severe,
        ];
        let spec = ModelSpec::with_defaults(ModelKind::RandomForest, 0)
            .with("n_trees", 1.0)
            .unwrap()
            .with("min_samples_split", 6.0)
            .unwrap();
        let m = train_random_forest(&x, &y, 1, &spec).unwrap();
        let ModelParams::RandomForest(rf) = &m.params else {
            unreachable!()
        };
        assert_eq!(rf.trees[0].nodes.len(), 1);
        let leaf = rf.trees[0].leaf(&x[0]);
        let expected = if leaf[0] >= leaf[1] {
            CoarseLabel::Mild
        } else {
            CoarseLabel::Severe
        };
        assert!(x.iter().all(|v| m.predict(v) == expected));
    }
}
