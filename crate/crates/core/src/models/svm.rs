use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_last, prepare, ModelError, ModelParams, ModelSpec, TrainedModel};
use crate::features::SparseVector;
use crate::labeling::CoarseLabel;

/// Below this the lazy scale factor is folded back into the weights.
const MIN_SCALE: f64 = 1e-9;

/// One-vs-rest linear SVMs. The bias is the weight of an implicit constant
/// feature and is regularized like every other weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearSvmModel {
    pub fn margins(&self, x: &SparseVector) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot_dense(w, x) + b)
            .collect()
    }

    pub(super) fn predict_index(&self, x: &SparseVector) -> usize {
        argmax_last(&self.margins(x))
    }

    pub(super) fn check_shape(&self, classes: usize, n_features: usize) -> bool {
        self.weights.len() == classes
            && self.bias.len() == classes
            && self.weights.iter().all(|w| w.len() == n_features)
    }
}

fn dot_dense(w: &[f64], x: &SparseVector) -> f64 {
    x.iter()
        .filter_map(|(i, v)| w.get(i as usize).map(|wi| wi * v))
        .sum()
}

/// Pegasos: stochastic subgradient steps of size `1 / (lambda * t)` on the
/// regularized hinge loss, visiting the data in a fresh order each epoch.
/// The weight vector is kept as `scale * v` so each step costs O(nnz).
fn train_binary(
    x: &[SparseVector],
    positive: &[bool],
    n_features: usize,
    lambda: f64,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, f64) {
    let mut v = vec![0.0; n_features];
    let mut vb = 0.0;
    let mut scale = 1.0;
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t = 0u64;
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let y = if positive[i] { 1.0 } else { -1.0 };
            let margin = scale * (dot_dense(&v, &x[i]) + vb);
            let shrink = 1.0 - 1.0 / t as f64;
            if shrink == 0.0 {
                v.iter_mut().for_each(|w| *w = 0.0);
                vb = 0.0;
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if y * margin < 1.0 {
                let step = eta * y / scale;
                for (j, xj) in x[i].iter() {
                    v[j as usize] += step * xj;
                }
                vb += step;
            }
            if scale < MIN_SCALE {
                v.iter_mut().for_each(|w| *w *= scale);
                vb *= scale;
                scale = 1.0;
            }
        }
    }
    v.iter_mut().for_each(|w| *w *= scale);
    (v, vb * scale)
}

pub fn train_linear_svm(
    x: &[SparseVector],
    y: &[CoarseLabel],
    n_features: usize,
    spec: &ModelSpec,
) -> Result<TrainedModel, ModelError> {
    let (classes, targets) = prepare(x, y, n_features)?;
    let lambda = spec.get("lambda");
    let epochs = spec.get_count("epochs");

    let (weights, bias): (Vec<Vec<f64>>, Vec<f64>) = (0..classes.len())
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
            rng.set_stream(c as u64);
            let positive: Vec<bool> = targets.iter().map(|&t| t == c).collect();
            train_binary(x, &positive, n_features, lambda, epochs, &mut rng)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .unzip();

    Ok(TrainedModel {
        spec: spec.clone(),
        classes,
        n_features,
        params: ModelParams::LinearSvm(LinearSvmModel { weights, bias }),
    })
}
