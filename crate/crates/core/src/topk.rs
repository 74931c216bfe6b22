// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bounded top-k selection under the crate-wide total order:
//! larger value first, ties broken by ascending index.

use crate::scalar::desc_then_index;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Keeps the `k` best `(index, value)` pairs seen so far, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    k: usize,
    items: Vec<(usize, f64)>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn cmp(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
        desc_then_index((a.1, a.0), (b.1, b.0))
    }

    #[inline]
    pub fn push(&mut self, index: usize, value: f64) {
        if self.k == 0 {
            return;
        }
        let item = (index, value);
        if self.items.len() == self.k {
            let worst = self.items[self.k - 1];
            if Self::cmp(&item, &worst) != Ordering::Less {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|x| Self::cmp(x, &item) == Ordering::Less);
        self.items.insert(pos, item);
    }

    /// Folds another collector in; the result is independent of merge order.
    pub fn merge(&mut self, other: &TopK) {
        for &(i, v) in &other.items {
            self.push(i, v);
        }
    }

    pub fn items(&self) -> &[(usize, f64)] {
        &self.items
    }

    pub fn into_items(self) -> Vec<(usize, f64)> {
        self.items
    }

    /// Sum of retained values, accumulated best-first.
    pub fn sum(&self) -> f64 {
        self.items.iter().map(|x| x.1).sum()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Top `k` entries of `values` as `(index, value)`, best first.
pub fn top_k(values: &[f64], k: usize) -> Vec<(usize, f64)> {
    let k = k.min(values.len());
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let by = |a: &usize, b: &usize| desc_then_index((values[*a], *a), (values[*b], *b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by);
        idx.truncate(k);
    }
    idx.sort_unstable_by(by);
    idx.into_iter().map(|i| (i, values[i])).collect()
}

/// All values sorted descending (ties by index).
pub fn sorted_desc(values: &[f64]) -> Vec<f64> {
    top_k(values, values.len()).into_iter().map(|x| x.1).collect()
}
