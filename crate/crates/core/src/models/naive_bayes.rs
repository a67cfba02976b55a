use serde::{Deserialize, Serialize};

use super::{argmax_last, prepare, ModelError, ModelParams, ModelSpec, TrainedModel};
use crate::features::SparseVector;
use crate::labeling::CoarseLabel;

/// Multinomial naive Bayes treating TF-IDF weights as fractional counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub log_prior: Vec<f64>,
    /// `log_likelihood[c][t] = ln((n_ct + alpha) / (n_c + alpha * V))`
    pub log_likelihood: Vec<Vec<f64>>,
}

impl NaiveBayesModel {
    /// Unnormalized log joint `ln P(c) + sum_t x_t ln P(t | c)` per class.
    pub fn joint_log_likelihood(&self, x: &SparseVector) -> Vec<f64> {
        self.log_prior
            .iter()
            .zip(&self.log_likelihood)
            .map(|(prior, row)| {
                prior
                    + x.iter()
                        .filter_map(|(t, w)| row.get(t as usize).map(|l| w * l))
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn posterior(&self, x: &SparseVector) -> Vec<f64> {
        let joint = self.joint_log_likelihood(x);
        let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = joint.iter().map(|j| (j - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / total).collect()
    }

    pub(super) fn predict_index(&self, x: &SparseVector) -> usize {
        argmax_last(&self.joint_log_likelihood(x))
    }

    pub(super) fn check_shape(&self, classes: usize, n_features: usize) -> bool {
        self.log_prior.len() == classes
            && self.log_likelihood.len() == classes
            && self.log_likelihood.iter().all(|r| r.len() == n_features)
    }
}

pub fn train_naive_bayes(
    x: &[SparseVector],
    y: &[CoarseLabel],
    n_features: usize,
    spec: &ModelSpec,
) -> Result<TrainedModel, ModelError> {
    let (classes, targets) = prepare(x, y, n_features)?;
    let alpha = spec.get("alpha");
    let n_classes = classes.len();

    let mut class_count = vec![0usize; n_classes];
    let mut feature_count = vec![vec![0.0; n_features]; n_classes];
    for (v, &c) in x.iter().zip(&targets) {
        class_count[c] += 1;
        for (t, w) in v.iter() {
            feature_count[c][t as usize] += w;
        }
    }
    let n = x.len() as f64;
    let log_prior = class_count.iter().map(|&k| (k as f64 / n).ln()).collect();
    let log_likelihood = feature_count
        .into_iter()
        .map(|row| {
            let denom = (row.iter().sum::<f64>() + alpha * n_features as f64).ln();
            row.into_iter().map(|c| (c + alpha).ln() - denom).collect()
        })
        .collect();

    Ok(TrainedModel {
        spec: spec.clone(),
        classes,
        n_features,
        params: ModelParams::NaiveBayes(NaiveBayesModel {
            log_prior,
            log_likelihood,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    fn spec() -> ModelSpec {
        ModelSpec::with_defaults(ModelKind::NaiveBayes, 0)
    }

    #[test]
    fn hand_computed_posterior() {
        // Class A: one doc [2, 0]; class B: one doc [0, 1]. alpha = 1, V = 2.
        // P(t0|A) = 3/4, P(t1|A) = 1/4, P(t0|B) = 1/3, P(t1|B) = 2/3.
        // For x = [1, 0]: joint A = 0.5 * 3/4, joint B = 0.5 * 1/3.
        let x = vec![
            SparseVector::from_dense(&[2.0, 0.0]),
            SparseVector::from_dense(&[0.0, 1.0]),
        ];
        let y = [CoarseLabel::Normal, CoarseLabel::Severe];
        let m = train_naive_bayes(&x, &y, 2, &spec()).unwrap();
        let post = m.posterior(&SparseVector::from_dense(&[1.0, 0.0])).unwrap();
        let expected_a = (3.0 / 4.0) / (3.0 / 4.0 + 1.0 / 3.0);
        assert!((post[0] - expected_a).abs() < 1e-12);
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(
            m.predict(&SparseVector::from_dense(&[1.0, 0.0])),
            CoarseLabel::Normal
        );
    }

    #[test]
    fn zero_vector_picks_largest_prior() {
        let x = vec![
            SparseVector::from_dense(&[1.0, 0.0]),
            SparseVector::from_dense(&[1.0, 0.0]),
            SparseVector::from_dense(&[0.0, 1.0]),
        ];
        let y = [CoarseLabel::Mild, CoarseLabel::Mild, CoarseLabel::Moderate];
        let m = train_naive_bayes(&x, &y, 2, &spec()).unwrap();
        assert_eq!(m.predict(&SparseVector::new()), CoarseLabel::Mild);
    }

    #[test]
    fn single_class() {
        let x = vec![
            SparseVector::from_dense(&[1.0]),
            SparseVector::from_dense(&[0.5]),
        ];
        let y = [CoarseLabel::Severe; 2];
        let m = train_naive_bayes(&x, &y, 3, &spec()).unwrap();
        assert_eq!(m.classes, vec![CoarseLabel::Severe]);
        assert_eq!(
            m.predict(&SparseVector::from_dense(&[0.0, 0.0, 9.0])),
            CoarseLabel::Severe
        );
    }
}
