// SPDX-License-Identifier: MIT OR Apache-2.0

//! Percentile-calibrated semantic classification and per-layer pass rates.
//!
//! A feature is semantic when its Levenshtein and cosine similarities are at
//! least the calibrated minimums and its top-100 entropy is at most the
//! calibrated maximum. Equality passes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionConfig, Direction};
use crate::bundle::{ArchSpec, ModelBundle};
use crate::metrics::{layer_metrics, MetricConfig, MetricVector};
use crate::stats::percentile;
use crate::{Error, Result, Scalar};

/// `(n_layers, d_model)` of architectures with published calibration
/// layers, and their decoder and encoder layers.
const KNOWN_CALIBRATION: [((usize, usize), (usize, usize)); 3] =
    [((26, 2304), (16, 3)), ((42, 3584), (27, 6)), ((32, 4096), (20, 5))];

pub fn default_calibration_layer(arch: &ArchSpec, direction: Direction) -> usize {
    let known = KNOWN_CALIBRATION
        .iter()
        .find(|(key, _)| *key == (arch.n_layers, arch.d_model))
        .map(|(_, layers)| *layers);
    let n = arch.n_layers as f64;
    let last = arch.n_layers.saturating_sub(1);
    match (direction, known) {
        (Direction::DecUnembed, Some((dec, _))) => dec,
        (Direction::EncEmbed, Some((_, enc))) => enc,
        (Direction::DecUnembed, None) => ((2.0 * n / 3.0).round() as usize).min(last),
        (Direction::EncEmbed, None) => ((n / 6.0).round() as usize).min(last),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub direction: Direction,
    pub calibration_layer: usize,
    pub leven_min: f64,
    pub cosine_min: f64,
    pub entropy100_max: f64,
    pub percentile: f64,
}

impl ThresholdSet {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        t.check()?;
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn check(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::Config(format!(
                "percentile must lie in (0, 100), got {}",
                self.percentile
            )));
        }
        if ![self.leven_min, self.cosine_min, self.entropy100_max]
            .iter()
            .all(|x| x.is_finite())
        {
            return Err(Error::Config("thresholds must be finite".into()));
        }
        Ok(())
    }
}

/// Fits thresholds on the metric table of the calibration layer.
///
/// Similarity minimums sit at the `percentile`-th percentile. The entropy
/// maximum sits at the mirrored `100 - percentile`-th, so a stricter
/// percentile tightens all three metrics. Non-finite values are excluded
/// from fitting.
pub fn calibrate(
    table: &[MetricVector],
    direction: Direction,
    calibration_layer: usize,
    pct: f64,
) -> Result<ThresholdSet> {
    if table.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "calibration needs at least 2 features, got {}",
            table.len()
        )));
    }
    let fit = |name: &str, get: fn(&MetricVector) -> f64, p: f64| -> Result<f64> {
        let finite: Vec<f64> = table.iter().map(get).filter(|x| x.is_finite()).collect();
        percentile(&finite, p)
            .ok_or_else(|| Error::InvalidInput(format!("no finite {name} values at the calibration layer")))
    };
    let t = ThresholdSet {
        direction,
        calibration_layer,
        leven_min: fit("leven_sim", |m| m.leven_sim, pct)?,
        cosine_min: fit("cosine_sim", |m| m.cosine_sim, pct)?,
        entropy100_max: fit("entropy_100", |m| m.entropy_100, 100.0 - pct)?,
        percentile: pct,
    };
    t.check()?;
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticLabel {
    pub layer: usize,
    pub feature: usize,
    pub passes_leven: bool,
    pub passes_cosine: bool,
    pub passes_entropy: bool,
    pub semantic: bool,
}

impl SemanticLabel {
    /// Whether the feature passes every metric in `subset`.
    pub fn passes(&self, subset: MetricSubset) -> bool {
        (!subset.leven() || self.passes_leven)
            && (!subset.cosine() || self.passes_cosine)
            && (!subset.entropy() || self.passes_entropy)
    }
}

pub fn label(m: &MetricVector, t: &ThresholdSet) -> SemanticLabel {
    let passes_leven = m.leven_sim.is_finite() && m.leven_sim >= t.leven_min;
    let passes_cosine = m.cosine_sim.is_finite() && m.cosine_sim >= t.cosine_min;
    let passes_entropy = m.entropy_100.is_finite() && m.entropy_100 <= t.entropy100_max;
    SemanticLabel {
        layer: m.layer,
        feature: m.feature,
        passes_leven,
        passes_cosine,
        passes_entropy,
        semantic: passes_leven && passes_cosine && passes_entropy,
    }
}

pub fn classify(table: &[MetricVector], t: &ThresholdSet) -> Vec<SemanticLabel> {
    table.par_iter().map(|m| label(m, t)).collect()
}

/// A subset of {leven, cosine, entropy} as a 3-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricSubset(pub u8);

impl MetricSubset {
    pub const NONE: Self = Self(0);
    pub const LEVEN: Self = Self(1);
    pub const COSINE: Self = Self(2);
    pub const ENTROPY: Self = Self(4);
    pub const ALL: Self = Self(7);

    /// All eight subsets in mask order.
    pub fn all_subsets() -> impl Iterator<Item = Self> {
        (0..8).map(Self)
    }

    pub fn leven(self) -> bool {
        self.0 & 1 != 0
    }
    pub fn cosine(self) -> bool {
        self.0 & 2 != 0
    }
    pub fn entropy(self) -> bool {
        self.0 & 4 != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// `"none"`, or member names joined by `+`.
    pub fn name(self) -> String {
        if self.is_empty() {
            return "none".into();
        }
        [
            (self.leven(), "leven"),
            (self.cosine(), "cosine"),
            (self.entropy(), "entropy"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect::<Vec<_>>()
        .join("+")
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Self::NONE);
        }
        let mut mask = 0;
        for part in s.split('+') {
            mask |= match part.trim() {
                "leven" => 1,
                "cosine" => 2,
                "entropy" => 4,
                "all" => 7,
                other => return Err(Error::Config(format!("unknown metric {other:?}"))),
            };
        }
        Ok(Self(mask))
    }
}

pub fn pass_rate(labels: &[SemanticLabel], subset: MetricSubset) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| l.passes(subset)).count() as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPassRates {
    pub layer: usize,
    pub n_features: usize,
    /// Pass rate per subset, indexed by subset mask.
    pub rates: [f64; 8],
}

impl LayerPassRates {
    pub fn from_labels(layer: usize, labels: &[SemanticLabel]) -> Self {
        let mut rates = [0.0; 8];
        for s in MetricSubset::all_subsets() {
            rates[s.0 as usize] = pass_rate(labels, s);
        }
        Self {
            layer,
            n_features: labels.len(),
            rates,
        }
    }

    pub fn joint(&self) -> f64 {
        self.rates[MetricSubset::ALL.0 as usize]
    }

    pub fn rate(&self, subset: MetricSubset) -> f64 {
        self.rates[subset.0 as usize]
    }
}

/// Labels and pass rates for every layer of a bundle.
#[derive(Debug, Clone)]
pub struct PassRateCurves {
    pub direction: Direction,
    pub layers: Vec<LayerPassRates>,
    pub labels: Vec<Vec<SemanticLabel>>,
}

pub fn pass_rate_curves<T: Scalar>(
    bundle: &ModelBundle<T>,
    direction: Direction,
    thresholds: &ThresholdSet,
    attr_cfg: &AttributionConfig,
    metric_cfg: &MetricConfig,
) -> Result<PassRateCurves> {
    let mut layers = Vec::new();
    let mut labels = Vec::new();
    for l in 0..bundle.n_layers() {
        let table = layer_metrics(bundle, l, direction, attr_cfg, metric_cfg)?;
        let ls = classify(&table, thresholds);
        layers.push(LayerPassRates::from_labels(l, &ls));
        labels.push(ls);
    }
    Ok(PassRateCurves {
        direction,
        layers,
        labels,
    })
}

/// The first layer where both directions' joint rates fall below `cutoff`.
pub fn phase_split(dec: &[f64], enc: &[f64], cutoff: f64) -> Option<usize> {
    dec.iter().zip(enc).position(|(&d, &e)| d < cutoff && e < cutoff)
}

pub const DEFAULT_PHASE_CUTOFF: f64 = 0.03;

/// Up to `n` semantic features drawn uniformly without replacement, sorted.
pub fn sample_features(labels: &[SemanticLabel], n: usize, seed: u64) -> Vec<usize> {
    let pool: Vec<usize> = labels.iter().filter(|l| l.semantic).map(|l| l.feature).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = pool.choose_multiple(&mut rng, n.min(pool.len())).copied().collect();
    picked.sort_unstable();
    picked
}

pub fn write_pass_rates_csv(path: &Path, curves: &[LayerPassRates]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["layer", "subset", "pass_rate", "n_features"])
        .map_err(|e| Error::csv(path, e))?;
    for row in curves {
        for s in MetricSubset::all_subsets() {
            w.write_record([
                row.layer.to_string(),
                s.name(),
                row.rate(s).to_string(),
                row.n_features.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pass_rates_csv(path: &Path) -> Result<Vec<LayerPassRates>> {
    #[derive(Deserialize)]
    struct Row {
        layer: usize,
        subset: String,
        pass_rate: f64,
        n_features: usize,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out: Vec<LayerPassRates> = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let s = MetricSubset::parse(&row.subset)?;
        let pos = match out.iter().position(|l| l.layer == row.layer) {
            Some(p) => p,
            None => {
                out.push(LayerPassRates {
                    layer: row.layer,
                    n_features: row.n_features,
                    rates: [0.0; 8],
                });
                out.len() - 1
            }
        };
        out[pos].rates[s.0 as usize] = row.pass_rate;
    }
    out.sort_by_key(|l| l.layer);
    Ok(out)
}

pub fn write_labels_csv(path: &Path, labels: &[SemanticLabel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for l in labels {
        w.serialize(l).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<SemanticLabel>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}
