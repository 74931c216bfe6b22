// SPDX-License-Identifier: MIT OR Apache-2.0

//! Blocked row scans over the implicit score matrix of each head.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{HeadAggregation, HeadProjection, QkConfig};
use crate::stats::{mean, median};
use crate::topk::TopK;
use crate::{Error, Result, Scalar};

/// Everything one pass over a head's score rows yields.
///
/// Top lists hold `k + 1` entries so the self-excluded variants can be
/// derived without a second pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadScan {
    pub head: usize,
    pub row_means: Vec<f64>,
    /// Per query feature: largest pre-softmax scores `(key, s)`.
    pub pre_out: Vec<Vec<(usize, f64)>>,
    /// Per key feature: largest incoming pre-softmax scores `(query, s)`.
    pub pre_in: Vec<Vec<(usize, f64)>>,
    /// Per query feature: largest post-softmax weights `(key, a)`.
    pub post_out: Vec<Vec<(usize, f64)>>,
    /// Per key feature: largest incoming post-softmax weights `(query, a)`.
    pub post_in: Vec<Vec<(usize, f64)>>,
}

/// Row mean, top pre-softmax scores, top post-softmax weights.
type RowSummary = (f64, Vec<(usize, f64)>, Vec<(usize, f64)>);

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter() {
        z += (x - max).exp();
    }
    for x in row.iter_mut() {
        *x = (*x - max).exp() / z;
    }
}

fn row_top(row: &[f64], keep: usize) -> Vec<(usize, f64)> {
    let mut t = TopK::new(keep);
    for (j, &v) in row.iter().enumerate() {
        t.push(j, v);
    }
    t.into_items()
}

fn push_columns(heaps: &mut [TopK], start: usize, rows: &[Vec<f64>]) {
    heaps.par_iter_mut().enumerate().for_each(|(j, heap)| {
        for (r, row) in rows.iter().enumerate() {
            heap.push(start + r, row[j]);
        }
    });
}

/// Scans every score row of one head, `block_rows` rows at a time.
pub fn scan_head<T: Scalar>(p: &HeadProjection<T>, k: usize, block_rows: usize) -> HeadScan {
    let n = p.d_sae();
    let keep = (k + 1).min(n);
    let mut row_means = Vec::with_capacity(n);
    let mut pre_out = Vec::with_capacity(n);
    let mut post_out = Vec::with_capacity(n);
    let mut pre_cols: Vec<TopK> = (0..n).map(|_| TopK::new(keep)).collect();
    let mut post_cols: Vec<TopK> = (0..n).map(|_| TopK::new(keep)).collect();
    let block = block_rows.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + block).min(n);
        let scores: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0.0; n];
                p.score_row(i, &mut row);
                row
            })
            .collect();
        let weights: Vec<Vec<f64>> = scores
            .par_iter()
            .map(|row| {
                let mut w = row.clone();
                softmax_in_place(&mut w);
                w
            })
            .collect();
        let per_row: Vec<RowSummary> = scores
            .par_iter()
            .zip(&weights)
            .map(|(s, w)| {
                let sum: f64 = s.iter().sum();
                (sum / n as f64, row_top(s, keep), row_top(w, keep))
            })
            .collect();
        for (m, pre, post) in per_row {
            row_means.push(m);
            pre_out.push(pre);
            post_out.push(post);
        }
        push_columns(&mut pre_cols, start, &scores);
        push_columns(&mut post_cols, start, &weights);
        start = end;
    }
    HeadScan {
        head: p.head,
        row_means,
        pre_out,
        pre_in: pre_cols.into_iter().map(TopK::into_items).collect(),
        post_out,
        post_in: post_cols.into_iter().map(TopK::into_items).collect(),
    }
}

/// The first `k` entries of `list`, skipping index `own` when excluding self.
fn select(list: &[(usize, f64)], own: usize, k: usize, exclude_self: bool) -> Vec<(usize, f64)> {
    list.iter()
        .copied()
        .filter(|(j, _)| !exclude_self || *j != own)
        .take(k)
        .collect()
}

fn sum(list: &[(usize, f64)]) -> f64 {
    list.iter().map(|p| p.1).sum()
}

/// Scans every head of a layer, heads in order.
pub fn scan_layer<T: Scalar>(projections: &[HeadProjection<T>], cfg: &QkConfig) -> Result<Vec<HeadScan>> {
    if let Some(p) = projections.first() {
        if cfg.k == 0 || cfg.k >= p.d_sae() {
            return Err(Error::InvalidInput(format!(
                "k must lie in [1, d_sae), got k={} with d_sae={}",
                cfg.k,
                p.d_sae()
            )));
        }
    }
    Ok(projections
        .iter()
        .map(|p| scan_head(p, cfg.k, cfg.block_rows))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreHead {
    pub head: usize,
    /// Mean of `s_i.` over all keys, per query feature.
    pub row_means: Vec<f64>,
    pub head_sum: f64,
    pub top_q: Vec<Vec<(usize, f64)>>,
    pub topk_q_sum: Vec<f64>,
    pub top_in: Vec<Vec<(usize, f64)>>,
    pub topk_k_sum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreSoftmaxSummary {
    pub layer: usize,
    pub k: usize,
    pub heads: Vec<PreHead>,
    /// Head indices ordered by `|head_sum|`, largest first.
    pub magnitude_rank: Vec<usize>,
}

impl PreSoftmaxSummary {
    /// `w^Q`: per-feature sum over heads of the top-k outgoing scores.
    pub fn aggregate_q(&self) -> Vec<f64> {
        sum_over_heads(self.heads.iter().map(|h| h.topk_q_sum.as_slice()))
    }

    /// `w^K`: per-feature sum over heads of the top-k incoming scores.
    pub fn aggregate_k(&self) -> Vec<f64> {
        sum_over_heads(self.heads.iter().map(|h| h.topk_k_sum.as_slice()))
    }
}

pub(crate) fn sum_over_heads<'a>(heads: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for h in heads {
        if out.is_empty() {
            out = vec![0.0; h.len()];
        }
        for (o, v) in out.iter_mut().zip(h) {
            *o += v;
        }
    }
    out
}

pub(crate) fn magnitude_rank(head_sums: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..head_sums.len()).collect();
    order.sort_by(|&a, &b| head_sums[b].abs().total_cmp(&head_sums[a].abs()).then(a.cmp(&b)));
    order
}

pub fn summarize_pre(layer: usize, k: usize, scans: &[HeadScan]) -> PreSoftmaxSummary {
    let heads: Vec<PreHead> = scans
        .iter()
        .map(|s| {
            let top_q: Vec<_> = s.pre_out.iter().map(|l| select(l, 0, k, false)).collect();
            let top_in: Vec<_> = s.pre_in.iter().map(|l| select(l, 0, k, false)).collect();
            PreHead {
                head: s.head,
                head_sum: s.row_means.iter().sum(),
                row_means: s.row_means.clone(),
                topk_q_sum: top_q.iter().map(|l| sum(l)).collect(),
                topk_k_sum: top_in.iter().map(|l| sum(l)).collect(),
                top_q,
                top_in,
            }
        })
        .collect();
    let sums: Vec<f64> = heads.iter().map(|h| h.head_sum).collect();
    PreSoftmaxSummary {
        layer,
        k,
        magnitude_rank: magnitude_rank(&sums),
        heads,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHead {
    pub head: usize,
    pub top_q: Vec<Vec<(usize, f64)>>,
    pub top_q_sum: Vec<f64>,
    pub top_in: Vec<Vec<(usize, f64)>>,
    pub top_in_mean: Vec<f64>,
    pub query_specialist: Vec<bool>,
    pub key_hub: Vec<bool>,
}

/// Feature counts of one layer for one self-attention variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureCounts {
    pub query_any: usize,
    pub query_mean: f64,
    pub query_median: f64,
    pub key_any: usize,
    pub key_mean: f64,
    pub key_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostSoftmaxProfile {
    pub layer: usize,
    pub k: usize,
    pub tau_q: f64,
    pub tau_k: f64,
    pub exclude_self: bool,
    pub heads: Vec<PostHead>,
    pub query_specialist_any_head: Vec<bool>,
    pub key_hub_any_head: Vec<bool>,
    pub counts: FeatureCounts,
}

/// Counts over features of `stats[h][i] > tau` in any head and on the
/// mean/median across heads.
pub(crate) fn count_features(stats: &[&[f64]], tau: f64, agg: HeadAggregation) -> (usize, f64, f64) {
    let n = stats.first().map_or(0, |s| s.len());
    let per_feature = |i: usize| -> Vec<f64> { stats.iter().map(|h| h[i]).collect() };
    let any = (0..n).filter(|&i| stats.iter().any(|h| h[i] > tau)).count();
    match agg {
        HeadAggregation::FeatureStatistic => {
            let m = (0..n).filter(|&i| mean(&per_feature(i)) > tau).count();
            let md = (0..n)
                .filter(|&i| median(&per_feature(i)).is_some_and(|v| v > tau))
                .count();
            (any, m as f64, md as f64)
        }
        HeadAggregation::HeadCounts => {
            let per_head: Vec<f64> = stats
                .iter()
                .map(|h| h.iter().filter(|&&v| v > tau).count() as f64)
                .collect();
            (any, mean(&per_head), median(&per_head).unwrap_or(0.0))
        }
    }
}

pub fn summarize_post(layer: usize, cfg: &QkConfig, exclude_self: bool, scans: &[HeadScan]) -> PostSoftmaxProfile {
    let k = cfg.k;
    let heads: Vec<PostHead> = scans
        .iter()
        .map(|s| {
            let top_q: Vec<_> = s
                .post_out
                .iter()
                .enumerate()
                .map(|(i, l)| select(l, i, k, exclude_self))
                .collect();
            let top_in: Vec<_> = s
                .post_in
                .iter()
                .enumerate()
                .map(|(j, l)| select(l, j, k, exclude_self))
                .collect();
            let top_q_sum: Vec<f64> = top_q.iter().map(|l| sum(l)).collect();
            let top_in_mean: Vec<f64> = top_in.iter().map(|l| sum(l) / l.len().max(1) as f64).collect();
            PostHead {
                head: s.head,
                query_specialist: top_q_sum.iter().map(|&v| v > cfg.tau_q).collect(),
                key_hub: top_in_mean.iter().map(|&v| v > cfg.tau_k).collect(),
                top_q,
                top_q_sum,
                top_in,
                top_in_mean,
            }
        })
        .collect();
    let n = heads.first().map_or(0, |h| h.top_q_sum.len());
    let any = |f: fn(&PostHead) -> &Vec<bool>| -> Vec<bool> { (0..n).map(|i| heads.iter().any(|h| f(h)[i])).collect() };
    let q_stats: Vec<&[f64]> = heads.iter().map(|h| h.top_q_sum.as_slice()).collect();
    let k_stats: Vec<&[f64]> = heads.iter().map(|h| h.top_in_mean.as_slice()).collect();
    let (query_any, query_mean, query_median) = count_features(&q_stats, cfg.tau_q, cfg.aggregation);
    let (key_any, key_mean, key_median) = count_features(&k_stats, cfg.tau_k, cfg.aggregation);
    PostSoftmaxProfile {
        layer,
        k,
        tau_q: cfg.tau_q,
        tau_k: cfg.tau_k,
        exclude_self,
        query_specialist_any_head: any(|h| &h.query_specialist),
        key_hub_any_head: any(|h| &h.key_hub),
        heads,
        counts: FeatureCounts {
            query_any,
            query_mean,
            query_median,
            key_any,
            key_mean,
            key_median,
        },
    }
}

pub fn pre_softmax_summary<T: Scalar>(projections: &[HeadProjection<T>], cfg: &QkConfig) -> Result<PreSoftmaxSummary> {
    let layer = projections.first().map_or(0, |p| p.layer);
    Ok(summarize_pre(layer, cfg.k, &scan_layer(projections, cfg)?))
}

pub fn post_softmax_profile<T: Scalar>(
    projections: &[HeadProjection<T>],
    cfg: &QkConfig,
    exclude_self: bool,
) -> Result<PostSoftmaxProfile> {
    let layer = projections.first().map_or(0, |p| p.layer);
    Ok(summarize_post(layer, cfg, exclude_self, &scan_layer(projections, cfg)?))
}
