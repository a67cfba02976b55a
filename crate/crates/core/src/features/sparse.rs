use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Sorted `(index, weight)` pairs with strictly increasing indices and no
/// stored zeros.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(u32, f64)>) -> Result<Self, FeatureError> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(FeatureError::InvalidVector(
                "indices must be strictly increasing".into(),
            ));
        }
        if let Some((i, w)) = entries.iter().find(|(_, w)| *w == 0.0 || !w.is_finite()) {
            return Err(FeatureError::InvalidVector(format!(
                "weight {w} at index {i} must be finite and non-zero"
            )));
        }
        Ok(Self { entries })
    }

    /// Sorts, sums repeated indices and drops zeros.
    pub fn from_unsorted(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|(i, _)| *i);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, w) in entries {
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc += w,
                _ => merged.push((i, w)),
            }
        }
        merged.retain(|(_, w)| *w != 0.0);
        Self { entries: merged }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i as u32, *w))
                .collect(),
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, w) in &self.entries {
            if (i as usize) < dim {
                out[i as usize] = w;
            }
        }
        out
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |(i, _)| *i)
            .map_or(0.0, |pos| self.entries[pos].1)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.entries.last().map(|(i, _)| *i)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (
            self.entries.iter().peekable(),
            other.entries.iter().peekable(),
        );
        let mut sum = 0.0;
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            match i.cmp(&j) {
                Ordering::Less => {
                    a.next();
                }
                Ordering::Greater => {
                    b.next();
                }
                Ordering::Equal => {
                    sum += x * y;
                    a.next();
                    b.next();
                }
            }
        }
        sum
    }

    pub fn scaled(&self, factor: f64) -> SparseVector {
        if factor == 0.0 {
            return SparseVector::new();
        }
        Self {
            entries: self.entries.iter().map(|&(i, w)| (i, w * factor)).collect(),
        }
    }
}

impl TryFrom<Vec<(u32, f64)>> for SparseVector {
    type Error = FeatureError;

    fn try_from(entries: Vec<(u32, f64)>) -> Result<Self, Self::Error> {
        Self::from_entries(entries)
    }
}

impl From<SparseVector> for Vec<(u32, f64)> {
    fn from(v: SparseVector) -> Self {
        v.entries
    }
}

/// Walks the union of indices of two vectors, yielding `(index, a_i, b_i)`.
fn union_walk<'a>(
    a: &'a SparseVector,
    b: &'a SparseVector,
) -> impl Iterator<Item = (u32, f64, f64)> + 'a {
    let mut a = a.entries.iter().peekable();
    let mut b = b.entries.iter().peekable();
    std::iter::from_fn(move || match (a.peek(), b.peek()) {
        (Some(&&(i, x)), Some(&&(j, y))) => match i.cmp(&j) {
            Ordering::Less => {
                a.next();
                Some((i, x, 0.0))
            }
            Ordering::Greater => {
                b.next();
                Some((j, 0.0, y))
            }
            Ordering::Equal => {
                a.next();
                b.next();
                Some((i, x, y))
            }
        },
        (Some(&&(i, x)), None) => {
            a.next();
            Some((i, x, 0.0))
        }
        (None, Some(&&(j, y))) => {
            b.next();
            Some((j, 0.0, y))
        }
        (None, None) => None,
    })
}

pub fn squared_distance(a: &SparseVector, b: &SparseVector) -> f64 {
    union_walk(a, b).map(|(_, x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean distance over the union of indices.
pub fn distance(a: &SparseVector, b: &SparseVector) -> f64 {
    squared_distance(a, b).sqrt()
}

/// `a + t * (b - a)`, component-wise.
pub fn lerp(a: &SparseVector, b: &SparseVector, t: f64) -> SparseVector {
    SparseVector {
        entries: union_walk(a, b)
            .map(|(i, x, y)| (i, x + t * (y - x)))
            .filter(|(_, w)| *w != 0.0)
            .collect(),
    }
}
