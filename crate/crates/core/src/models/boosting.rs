use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, GrowParams, SquaredError, Tree};
use super::{argmax_last, prepare, ModelError, ModelParams, ModelSpec, TrainedModel};
use crate::features::SparseVector;
use crate::labeling::CoarseLabel;

/// Keeps the initial log-odds finite when a class covers all or none of the data.
const PRIOR_CLAMP: f64 = 1e-9;

/// One-vs-rest logistic boosting with Newton leaf values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostingModel {
    pub learning_rate: f64,
    /// Per-class log-odds of the class prior.
    pub initial: Vec<f64>,
    pub trees: Vec<Vec<Tree<f64>>>,
    /// Mean training logistic loss per class, before and after every stage.
    pub loss_trace: Vec<Vec<f64>>,
}

impl GradientBoostingModel {
    pub fn scores(&self, x: &SparseVector) -> Vec<f64> {
        self.initial
            .iter()
            .zip(&self.trees)
            .map(|(f0, trees)| {
                f0 + self.learning_rate * trees.iter().map(|t| t.leaf(x)).sum::<f64>()
            })
            .collect()
    }

    pub(super) fn predict_index(&self, x: &SparseVector) -> usize {
        argmax_last(&self.scores(x))
    }

    pub(super) fn check_shape(&self, classes: usize) -> bool {
        self.initial.len() == classes
            && self.trees.len() == classes
            && self.trees.iter().flatten().all(Tree::is_well_formed)
    }
}

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^f) - y f`, computed without overflow.
fn logistic_loss(y: f64, f: f64) -> f64 {
    let softplus = if f > 0.0 {
        f + (-f).exp().ln_1p()
    } else {
        f.exp().ln_1p()
    };
    softplus - y * f
}

fn mean_loss(y: &[f64], f: &[f64]) -> f64 {
    y.iter()
        .zip(f)
        .map(|(&y, &f)| logistic_loss(y, f))
        .sum::<f64>()
        / y.len() as f64
}

struct BinaryFit {
    initial: f64,
    trees: Vec<Tree<f64>>,
    loss: Vec<f64>,
}

fn fit_binary(
    x: &[SparseVector],
    y: &[f64],
    stages: usize,
    max_depth: usize,
    learning_rate: f64,
) -> BinaryFit {
    let prior = (y.iter().sum::<f64>() / y.len() as f64).clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let initial = (prior / (1.0 - prior)).ln();
    let mut f = vec![initial; x.len()];
    let mut loss = vec![mean_loss(y, &f)];
    let mut trees = Vec::with_capacity(stages);
    let params = GrowParams {
        max_depth: Some(max_depth),
        min_samples_split: 2,
        max_features: None,
    };
    for _ in 0..stages {
        let p: Vec<f64> = f.iter().map(|&fi| sigmoid(fi)).collect();
        let residual: Vec<f64> = y.iter().zip(&p).map(|(y, p)| y - p).collect();
        let criterion = SquaredError { targets: &residual };
        let tree = grow(
            x,
            (0..x.len()).collect(),
            &criterion,
            &params,
            None,
            |leaf| {
                let num: f64 = leaf.iter().map(|&i| residual[i]).sum();
                let den: f64 = leaf.iter().map(|&i| p[i] * (1.0 - p[i])).sum();
                if den.abs() < 1e-150 {
                    0.0
                } else {
                    num / den
                }
            },
        );
        for (fi, xi) in f.iter_mut().zip(x) {
            *fi += learning_rate * tree.leaf(xi);
        }
        loss.push(mean_loss(y, &f));
        trees.push(tree);
    }
    BinaryFit {
        initial,
        trees,
        loss,
    }
}

pub fn train_gradient_boosting(
    x: &[SparseVector],
    y: &[CoarseLabel],
    n_features: usize,
    spec: &ModelSpec,
) -> Result<TrainedModel, ModelError> {
    let (classes, targets) = prepare(x, y, n_features)?;
    let stages = spec.get_count("stages");
    let max_depth = spec.get_count("max_depth");
    let learning_rate = spec.get("learning_rate");

    let fits: Vec<BinaryFit> = (0..classes.len())
        .into_par_iter()
        .map(|c| {
            let yc: Vec<f64> = targets.iter().map(|&t| f64::from(t == c)).collect();
            fit_binary(x, &yc, stages, max_depth, learning_rate)
        })
        .collect();

    let mut model = GradientBoostingModel {
        learning_rate,
        initial: Vec::new(),
        trees: Vec::new(),
        loss_trace: Vec::new(),
    };
    for fit in fits {
        model.initial.push(fit.initial);
        model.trees.push(fit.trees);
        model.loss_trace.push(fit.loss);
    }
    Ok(TrainedModel {
        spec: spec.clone(),
        classes,
        n_features,
        params: ModelParams::GradientBoosting(model),
    })
}
