//! Binary decision trees over sparse vectors, shared by the forest and the
//! boosted ensembles.
//!
//! Split search only touches the non-zero entries of the samples in a node;
//! all samples with a zero in the candidate feature are handled as one block.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node<L> {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: L,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    pub fn leaf(&self, x: &SparseVector) -> &L {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x.get(*feature) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &L> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(value),
            Node::Split { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk<L>(nodes: &[Node<L>], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    /// Children always point forward, so traversal terminates.
    pub(super) fn is_well_formed(&self) -> bool {
        !self.nodes.is_empty()
            && self.nodes.iter().enumerate().all(|(i, n)| match n {
                Node::Split { left, right, .. } => {
                    let ok = |c: u32| (c as usize) > i && (c as usize) < self.nodes.len();
                    ok(*left) && ok(*right)
                }
                Node::Leaf { .. } => true,
            })
    }
}

/// Additive node cost; a split minimizes `cost(left) + cost(right)`.
pub(super) trait Criterion {
    type Stats: Clone;
    fn empty(&self) -> Self::Stats;
    fn add(&self, stats: &mut Self::Stats, sample: usize);
    fn merge(&self, stats: &mut Self::Stats, other: &Self::Stats);
    fn subtract(&self, total: &Self::Stats, part: &Self::Stats) -> Self::Stats;
    fn cost(&self, stats: &Self::Stats) -> f64;
    fn is_pure(&self, _stats: &Self::Stats) -> bool {
        false
    }
}

/// Weighted Gini impurity times node weight: `w - sum_c w_c^2 / w`.
pub(super) struct Gini<'a> {
    pub targets: &'a [usize],
    pub weights: &'a [f64],
    pub n_classes: usize,
}

impl Criterion for Gini<'_> {
    type Stats = Vec<f64>;

    fn empty(&self) -> Vec<f64> {
        vec![0.0; self.n_classes]
    }

    fn add(&self, stats: &mut Vec<f64>, sample: usize) {
        stats[self.targets[sample]] += self.weights[sample];
    }

    fn merge(&self, stats: &mut Vec<f64>, other: &Vec<f64>) {
        for (a, b) in stats.iter_mut().zip(other) {
            *a += b;
        }
    }

    fn subtract(&self, total: &Vec<f64>, part: &Vec<f64>) -> Vec<f64> {
        total.iter().zip(part).map(|(t, p)| t - p).collect()
    }

    fn cost(&self, stats: &Vec<f64>) -> f64 {
        let w: f64 = stats.iter().sum();
        if w <= 0.0 {
            return 0.0;
        }
        w - stats.iter().map(|c| c * c).sum::<f64>() / w
    }

    fn is_pure(&self, stats: &Vec<f64>) -> bool {
        stats.iter().filter(|&&c| c > 0.0).count() <= 1
    }
}

/// Squared error around the node mean, up to a constant: `-sum^2 / n`.
pub(super) struct SquaredError<'a> {
    pub targets: &'a [f64],
}

impl Criterion for SquaredError<'_> {
    type Stats = (f64, f64);

    fn empty(&self) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn add(&self, stats: &mut (f64, f64), sample: usize) {
        stats.0 += 1.0;
        stats.1 += self.targets[sample];
    }

    fn merge(&self, stats: &mut (f64, f64), other: &(f64, f64)) {
        stats.0 += other.0;
        stats.1 += other.1;
    }

    fn subtract(&self, total: &(f64, f64), part: &(f64, f64)) -> (f64, f64) {
        (total.0 - part.0, total.1 - part.1)
    }

    fn cost(&self, stats: &(f64, f64)) -> f64 {
        if stats.0 <= 0.0 {
            0.0
        } else {
            -stats.1 * stats.1 / stats.0
        }
    }
}

pub(super) struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Number of non-constant features to examine per split; `None` means all.
    pub max_features: Option<usize>,
}

struct Candidate {
    feature: u32,
    threshold: f64,
    cost: f64,
}

/// Grows a tree on `samples` (indices into `x`). `leaf` turns the samples that
/// reach a leaf into its stored value.
pub(super) fn grow<C, L>(
    x: &[SparseVector],
    samples: Vec<usize>,
    criterion: &C,
    params: &GrowParams,
    mut rng: Option<&mut ChaCha8Rng>,
    leaf: impl Fn(&[usize]) -> L,
) -> Tree<L>
where
    C: Criterion,
{
    let mut nodes: Vec<Option<Node<L>>> = vec![None];
    let mut stack = vec![(0usize, samples, 0usize)];
    while let Some((at, samples, depth)) = stack.pop() {
        let mut total = criterion.empty();
        for &s in &samples {
            criterion.add(&mut total, s);
        }
        let stop = samples.len() < params.min_samples_split
            || params.max_depth.is_some_and(|d| depth >= d)
            || criterion.is_pure(&total);
        let split = if stop {
            None
        } else {
            best_split(x, &samples, &total, criterion, params, rng.as_deref_mut())
        };
        match split {
            None => {
                nodes[at] = Some(Node::Leaf {
                    value: leaf(&samples),
                })
            }
            Some(c) => {
                let (l, r): (Vec<usize>, Vec<usize>) = samples
                    .iter()
                    .partition(|&&s| x[s].get(c.feature) <= c.threshold);
                let left = nodes.len();
                nodes.push(None);
                nodes.push(None);
                nodes[at] = Some(Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: left as u32,
                    right: left as u32 + 1,
                });
                stack.push((left + 1, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
        }
    }
    Tree {
        nodes: nodes
            .into_iter()
            .map(|n| n.expect("every allocated node is filled"))
            .collect(),
    }
}

fn best_split<C: Criterion>(
    x: &[SparseVector],
    samples: &[usize],
    total: &C::Stats,
    criterion: &C,
    params: &GrowParams,
    rng: Option<&mut ChaCha8Rng>,
) -> Option<Candidate> {
    let mut entries: Vec<(u32, f64, usize)> = samples
        .iter()
        .flat_map(|&s| x[s].iter().map(move |(f, v)| (f, v, s)))
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=entries.len() {
        if i == entries.len() || entries[i].0 != entries[start].0 {
            groups.push((start, i));
            start = i;
        }
    }

    let mut best: Option<Candidate> = None;
    let mut consider = |group: &[(u32, f64, usize)]| -> bool {
        match sweep(group, samples.len(), total, criterion) {
            None => false,
            Some(c) => {
                if best.as_ref().is_none_or(|b| c.cost < b.cost) {
                    best = Some(c);
                }
                true
            }
        }
    };
    match (params.max_features, rng) {
        (Some(max_features), Some(rng)) => {
            let mut found = 0;
            for i in 0..groups.len() {
                let j = rng.random_range(i..groups.len());
                groups.swap(i, j);
                let (a, b) = groups[i];
                if consider(&entries[a..b]) {
                    found += 1;
                    if found == max_features {
                        break;
                    }
                }
            }
        }
        _ => {
            for &(a, b) in &groups {
                consider(&entries[a..b]);
            }
        }
    }
    best
}

/// Best threshold for one feature, or `None` when the feature is constant
/// within the node. `group` holds the node's non-zero entries sorted by value.
fn sweep<C: Criterion>(
    group: &[(u32, f64, usize)],
    node_size: usize,
    total: &C::Stats,
    criterion: &C,
) -> Option<Candidate> {
    let feature = group[0].0;
    let mut nonzero = criterion.empty();
    for &(_, _, s) in group {
        criterion.add(&mut nonzero, s);
    }
    let zero_block = (group.len() < node_size).then(|| criterion.subtract(total, &nonzero));

    // (value, sample) with the zero block as `None`, in ascending value order.
    let split_at = group.partition_point(|e| e.1 < 0.0);
    let items: Vec<(f64, Option<usize>)> = group[..split_at]
        .iter()
        .map(|e| (e.1, Some(e.2)))
        .chain(zero_block.is_some().then_some((0.0, None)))
        .chain(group[split_at..].iter().map(|e| (e.1, Some(e.2))))
        .collect();
    if items.first()?.0 == items.last()?.0 {
        return None;
    }

    let mut left = criterion.empty();
    let mut best: Option<Candidate> = None;
    for (i, &(value, sample)) in items.iter().enumerate() {
        match sample {
            Some(s) => criterion.add(&mut left, s),
            None => criterion.merge(&mut left, zero_block.as_ref().expect("zero block exists")),
        }
        let Some(&(next, _)) = items.get(i + 1) else {
            break;
        };
        if next <= value {
            continue;
        }
        let right = criterion.subtract(total, &left);
        let cost = criterion.cost(&left) + criterion.cost(&right);
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            let mid = value + (next - value) / 2.0;
            let threshold = if mid < next { mid } else { value };
            best = Some(Candidate {
                feature,
                threshold,
                cost,
            });
        }
    }
    best
}
