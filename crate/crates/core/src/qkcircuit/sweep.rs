// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-layer records, threshold sweeps and the resumable layer sweep.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scan::{count_features, scan_layer, sum_over_heads, summarize_post, summarize_pre, FeatureCounts, HeadScan};
use super::{project, HeadAggregation, QkConfig};
use crate::bundle::ModelBundle;
use crate::persist::{read_json, write_csv, write_json};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Query,
    Key,
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" | "q" => Ok(Side::Query),
            "key" | "k" => Ok(Side::Key),
            other => Err(Error::Config(format!("unknown side {other:?}, expected query or key"))),
        }
    }
}

/// Per-feature statistics of one head, without the top lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRecord {
    pub head: usize,
    pub head_sum: f64,
    pub row_means: Vec<f64>,
    pub topk_q_sum: Vec<f64>,
    pub topk_k_sum: Vec<f64>,
    pub top_q_sum: Vec<f64>,
    pub top_q_sum_no_self: Vec<f64>,
    pub top_in_mean: Vec<f64>,
    pub top_in_mean_no_self: Vec<f64>,
}

/// Compact per-layer result persisted by [`layer_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerQkRecord {
    pub layer: usize,
    pub k: usize,
    pub use_norm: bool,
    pub d_sae: usize,
    pub magnitude_rank: Vec<usize>,
    pub heads: Vec<HeadRecord>,
}

impl LayerQkRecord {
    pub fn from_scans(layer: usize, cfg: &QkConfig, scans: &[HeadScan]) -> Self {
        let pre = summarize_pre(layer, cfg.k, scans);
        let with_self = summarize_post(layer, cfg, false, scans);
        let no_self = summarize_post(layer, cfg, true, scans);
        let heads = pre
            .heads
            .into_iter()
            .zip(with_self.heads)
            .zip(no_self.heads)
            .map(|((p, a), b)| HeadRecord {
                head: p.head,
                head_sum: p.head_sum,
                row_means: p.row_means,
                topk_q_sum: p.topk_q_sum,
                topk_k_sum: p.topk_k_sum,
                top_q_sum: a.top_q_sum,
                top_q_sum_no_self: b.top_q_sum,
                top_in_mean: a.top_in_mean,
                top_in_mean_no_self: b.top_in_mean,
            })
            .collect::<Vec<_>>();
        Self {
            layer,
            k: cfg.k,
            use_norm: cfg.use_norm,
            d_sae: heads.first().map_or(0, |h| h.row_means.len()),
            magnitude_rank: pre.magnitude_rank,
            heads,
        }
    }

    pub fn aggregate_q(&self) -> Vec<f64> {
        sum_over_heads(self.heads.iter().map(|h| h.topk_q_sum.as_slice()))
    }

    pub fn aggregate_k(&self) -> Vec<f64> {
        sum_over_heads(self.heads.iter().map(|h| h.topk_k_sum.as_slice()))
    }

    /// Aggregate pre-softmax weights `w^Q` or `w^K`.
    pub fn aggregate(&self, side: Side) -> Vec<f64> {
        match side {
            Side::Query => self.aggregate_q(),
            Side::Key => self.aggregate_k(),
        }
    }

    fn stats(&self, side: Side, exclude_self: bool) -> Vec<&[f64]> {
        self.heads
            .iter()
            .map(|h| match (side, exclude_self) {
                (Side::Query, false) => h.top_q_sum.as_slice(),
                (Side::Query, true) => h.top_q_sum_no_self.as_slice(),
                (Side::Key, false) => h.top_in_mean.as_slice(),
                (Side::Key, true) => h.top_in_mean_no_self.as_slice(),
            })
            .collect()
    }

    /// Whether each feature exceeds `tau` in at least one head.
    pub fn any_head(&self, side: Side, tau: f64, exclude_self: bool) -> Vec<bool> {
        let stats = self.stats(side, exclude_self);
        (0..self.d_sae).map(|i| stats.iter().any(|h| h[i] > tau)).collect()
    }

    pub fn counts(&self, tau_q: f64, tau_k: f64, exclude_self: bool, agg: HeadAggregation) -> FeatureCounts {
        let (query_any, query_mean, query_median) = count_features(&self.stats(Side::Query, exclude_self), tau_q, agg);
        let (key_any, key_mean, key_median) = count_features(&self.stats(Side::Key, exclude_self), tau_k, agg);
        FeatureCounts {
            query_any,
            query_mean,
            query_median,
            key_any,
            key_mean,
            key_median,
        }
    }

    pub fn head_sums(&self) -> Vec<f64> {
        self.heads.iter().map(|h| h.head_sum).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    /// Any-head pass percentage averaged over layers.
    pub mean_pct: f64,
}

pub fn threshold_sweep(records: &[LayerQkRecord], taus: &[f64], side: Side, exclude_self: bool) -> Vec<SweepRow> {
    taus.iter()
        .map(|&tau| {
            let pcts: Vec<f64> = records
                .iter()
                .map(|r| {
                    let n = r.any_head(side, tau, exclude_self).iter().filter(|&&b| b).count();
                    100.0 * n as f64 / r.d_sae.max(1) as f64
                })
                .collect();
            SweepRow {
                tau,
                mean_pct: crate::stats::mean(&pcts),
            }
        })
        .collect()
}

pub fn record_path(dir: &Path, layer: usize) -> PathBuf {
    dir.join(format!("layer_{layer:03}.json"))
}

/// One layer, computed from scratch.
pub fn layer_record<T: Scalar>(bundle: &ModelBundle<T>, layer: usize, cfg: &QkConfig) -> Result<LayerQkRecord> {
    let proj = project(bundle, layer, cfg.use_norm)?;
    let scans = scan_layer(&proj, cfg)?;
    Ok(LayerQkRecord::from_scans(layer, cfg, &scans))
}

/// Records for `layers`, reusing matching records already in `out` and
/// persisting each new one before moving on.
pub fn layer_sweep<T: Scalar>(
    bundle: &ModelBundle<T>,
    cfg: &QkConfig,
    layers: Range<usize>,
    out: Option<&Path>,
) -> Result<Vec<LayerQkRecord>> {
    let last = bundle.arch.n_layers.saturating_sub(1);
    if layers.end > last || layers.start > layers.end {
        return Err(Error::Config(format!(
            "layer range {}..{} outside 0..{last} (the last layer has no following attention)",
            layers.start, layers.end
        )));
    }
    let stage = |layer: usize, e: Error| Error::Stage {
        stage: "qk".into(),
        layer: Some(layer),
        message: e.to_string(),
    };
    let mut records = Vec::new();
    for layer in layers {
        let cached = out
            .map(|d| record_path(d, layer))
            .filter(|p| p.exists())
            .and_then(|p| read_json::<LayerQkRecord>(&p).ok())
            .filter(|r| r.layer == layer && r.k == cfg.k && r.use_norm == cfg.use_norm);
        let record = match cached {
            Some(r) => r,
            None => {
                let r = layer_record(bundle, layer, cfg).map_err(|e| stage(layer, e))?;
                if let Some(d) = out {
                    write_json(&record_path(d, layer), &r)?;
                }
                r
            }
        };
        records.push(record);
    }
    if let Some(d) = out {
        write_tables(d, &records, cfg)?;
    }
    Ok(records)
}

#[derive(Serialize)]
struct LayerRow {
    layer: usize,
    self_attention: &'static str,
    query_any: usize,
    query_mean: f64,
    query_median: f64,
    key_any: usize,
    key_mean: f64,
    key_median: f64,
    d_sae: usize,
}

#[derive(Serialize)]
struct MagnitudeRow {
    layer: usize,
    rank: usize,
    head: usize,
    head_sum: f64,
}

#[derive(Serialize)]
struct FeatureRow {
    feature: usize,
    head: usize,
    row_mean: f64,
    topk_q_sum: f64,
    topk_k_sum: f64,
    top_q_sum: f64,
    top_q_sum_no_self: f64,
    top_in_mean: f64,
    top_in_mean_no_self: f64,
    query_specialist: bool,
    key_hub: bool,
}

/// Layer-aggregate counts, head magnitudes and per-layer feature tables.
pub fn write_tables(dir: &Path, records: &[LayerQkRecord], cfg: &QkConfig) -> Result<()> {
    let mut rows = Vec::new();
    for r in records {
        for (label, ex) in [("with", false), ("without", true)] {
            let c = r.counts(cfg.tau_q, cfg.tau_k, ex, cfg.aggregation);
            rows.push(LayerRow {
                layer: r.layer,
                self_attention: label,
                query_any: c.query_any,
                query_mean: c.query_mean,
                query_median: c.query_median,
                key_any: c.key_any,
                key_mean: c.key_mean,
                key_median: c.key_median,
                d_sae: r.d_sae,
            });
        }
    }
    write_csv(&dir.join("layers.csv"), rows)?;
    write_csv(
        &dir.join("head_magnitude.csv"),
        records.iter().flat_map(|r| {
            r.magnitude_rank.iter().enumerate().map(move |(rank, &h)| MagnitudeRow {
                layer: r.layer,
                rank,
                head: h,
                head_sum: r.heads[h].head_sum,
            })
        }),
    )?;
    for r in records {
        let rows = r.heads.iter().flat_map(|h| {
            (0..r.d_sae).map(move |i| FeatureRow {
                feature: i,
                head: h.head,
                row_mean: h.row_means[i],
                topk_q_sum: h.topk_q_sum[i],
                topk_k_sum: h.topk_k_sum[i],
                top_q_sum: h.top_q_sum[i],
                top_q_sum_no_self: h.top_q_sum_no_self[i],
                top_in_mean: h.top_in_mean[i],
                top_in_mean_no_self: h.top_in_mean_no_self[i],
                query_specialist: h.top_q_sum[i] > cfg.tau_q,
                key_hub: h.top_in_mean[i] > cfg.tau_k,
            })
        });
        write_csv(&dir.join(format!("layer_{:03}_features.csv", r.layer)), rows)?;
    }
    Ok(())
}

pub fn write_sweep_csv(path: &Path, side: Side, rows: &[SweepRow]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        side: Side,
        tau: f64,
        mean_pct: f64,
    }
    write_csv(
        path,
        rows.iter().map(|r| Row {
            side,
            tau: r.tau,
            mean_pct: r.mean_pct,
        }),
    )
}

/// Records previously written by [`layer_sweep`], in layer order.
pub fn read_records(dir: &Path) -> Result<Vec<LayerQkRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("layer_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn tiny() -> ModelBundle<f32> {
        generate(&SynthConfig::tiny(21)).unwrap()
    }

    #[test]
    fn sweep_is_monotone_and_total_at_zero() {
        let b = tiny();
        let recs = layer_sweep(&b, &QkConfig::default(), 0..3, None).unwrap();
        for side in [Side::Query, Side::Key] {
            let rows = threshold_sweep(&recs, &[0.0, 0.01, 0.1, 0.5, 0.95], side, false);
            assert_eq!(rows[0].mean_pct, 100.0);
            for w in rows.windows(2) {
                assert!(w[1].mean_pct <= w[0].mean_pct);
            }
        }
    }

    #[test]
    fn full_sweep_matches_single_layers_and_resumes() {
        let b = tiny();
        let cfg = QkConfig {
            block_rows: 16,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let recs = layer_sweep(&b, &cfg, 0..3, Some(dir.path())).unwrap();
        for r in &recs {
            assert_eq!(*r, layer_record(&b, r.layer, &QkConfig::default()).unwrap());
        }
        let path = record_path(dir.path(), 2);
        let before = std::fs::read(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        let again = layer_sweep(&b, &cfg, 0..3, Some(dir.path())).unwrap();
        assert_eq!(again, recs);
        assert_eq!(std::fs::read(&path).unwrap(), before);
        assert_eq!(read_records(dir.path()).unwrap(), recs);
        assert!(dir.path().join("layers.csv").exists());
        assert!(dir.path().join("layer_001_features.csv").exists());
    }

    #[test]
    fn range_must_leave_a_following_layer() {
        assert!(layer_sweep(&tiny(), &QkConfig::default(), 0..4, None).is_err());
    }

    #[test]
    fn worker_count_does_not_change_records() {
        let b = tiny();
        let one = crate::parallel::with_workers(Some(1), || layer_record(&b, 1, &QkConfig::default()))
            .unwrap()
            .unwrap();
        let four = crate::parallel::with_workers(Some(4), || layer_record(&b, 1, &QkConfig::default()))
            .unwrap()
            .unwrap();
        assert_eq!(one, four);
        let a = serde_json::to_string(&one).unwrap();
        assert_eq!(a, serde_json::to_string(&four).unwrap());
    }

    #[test]
    fn planted_hub_is_detected() {
        let cfg = SynthConfig::planted(5);
        let b: ModelBundle<f32> = generate(&cfg).unwrap();
        let hub = &cfg.planted_hub[0];
        let r = layer_record(&b, hub.layer, &QkConfig::default()).unwrap();
        assert!(r.any_head(Side::Key, 0.25, false)[hub.feature]);
    }
}
