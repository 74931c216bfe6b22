// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention-weight distributions of semantic, non-semantic and random
//! feature populations.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::persist::write_csv;
use crate::qkcircuit::{LayerQkRecord, Side};
use crate::semantics::SemanticLabel;
use crate::stats::{mean, percentile, percentile_sorted};
use crate::{Error, Result};

pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Semantic,
    NonSemantic,
    RandomBaseline,
}

impl Population {
    pub const ALL: [Population; 3] = [
        Population::Semantic,
        Population::NonSemantic,
        Population::RandomBaseline,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = if width > 0.0 {
            ((v - lo) / width).floor() as isize
        } else {
            0
        };
        counts[b.clamp(0, bins as isize - 1) as usize] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPlot {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub mean: f64,
}

/// Tukey box plot: whiskers reach the most extreme values within 1.5 IQR of the quartiles.
pub fn boxplot(values: &[f64]) -> Option<BoxPlot> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = percentile_sorted(&s, 25.0)?;
    let median = percentile_sorted(&s, 50.0)?;
    let q3 = percentile_sorted(&s, 75.0)?;
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let whisker_lo = s.iter().copied().find(|&v| v >= lo_fence).unwrap_or(q1);
    let whisker_hi = s.iter().rev().copied().find(|&v| v <= hi_fence).unwrap_or(q3);
    Some(BoxPlot {
        q1,
        median,
        q3,
        whisker_lo,
        whisker_hi,
        mean: mean(&s),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub layer: usize,
    pub side: Side,
    pub population: Population,
    pub n: usize,
    /// True when the population is empty; the statistics are then zero.
    pub absent: bool,
    pub mean: f64,
    pub median: f64,
    pub pct_above_p75: f64,
    pub histogram: Histogram,
    pub boxplot: Option<BoxPlot>,
}

/// Linear-interpolated 75th percentile of the pooled weights.
pub fn pooled_p75<'a>(layers: impl IntoIterator<Item = &'a [f64]>) -> Option<f64> {
    let pooled: Vec<f64> = layers.into_iter().flatten().copied().collect();
    percentile(&pooled, 75.0)
}

pub fn pct_above(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    100.0 * values.iter().filter(|&&v| v > threshold).count() as f64 / values.len() as f64
}

/// `n` distinct feature ids out of `0..n_features`, uniform, sorted.
pub fn random_baseline(n_features: usize, n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut ids = sample(&mut rng, n_features, n.min(n_features)).into_vec();
    ids.sort_unstable();
    ids
}

fn stats_for(
    layer: usize,
    side: Side,
    population: Population,
    values: &[f64],
    p75: f64,
    range: (f64, f64),
) -> PopulationStats {
    let bp = boxplot(values);
    PopulationStats {
        layer,
        side,
        population,
        n: values.len(),
        absent: values.is_empty(),
        mean: if values.is_empty() { 0.0 } else { mean(values) },
        median: bp.map_or(0.0, |b| b.median),
        pct_above_p75: pct_above(values, p75),
        histogram: histogram(values, range.0, range.1, HISTOGRAM_BINS),
        boxplot: bp,
    }
}

/// Statistics of the three populations in one layer.
///
/// `labels` and `weights` are both indexed by feature id.
pub fn compare(
    layer: usize,
    side: Side,
    labels: &[SemanticLabel],
    weights: &[f64],
    p75: f64,
    seed: u64,
) -> Result<Vec<PopulationStats>> {
    if labels.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "layer {layer}: {} labels for {} weights",
            labels.len(),
            weights.len()
        )));
    }
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if weights.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let semantic: Vec<f64> = labels
        .iter()
        .filter(|l| l.semantic)
        .map(|l| weights[l.feature])
        .collect();
    let non_semantic: Vec<f64> = labels
        .iter()
        .filter(|l| !l.semantic)
        .map(|l| weights[l.feature])
        .collect();
    let baseline: Vec<f64> = random_baseline(weights.len(), semantic.len(), seed, layer as u64)
        .into_iter()
        .map(|i| weights[i])
        .collect();
    Ok(vec![
        stats_for(layer, side, Population::Semantic, &semantic, p75, range),
        stats_for(layer, side, Population::NonSemantic, &non_semantic, p75, range),
        stats_for(layer, side, Population::RandomBaseline, &baseline, p75, range),
    ])
}

/// Which direction's labels apply at `layer`: encoder labels strictly
/// below the phase boundary, decoder labels elsewhere.
pub fn phase_of(layer: usize, boundary: Option<usize>) -> usize {
    match boundary {
        Some(b) if layer < b => 0,
        Some(_) => 1,
        None => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub side: Side,
    pub phase_boundary: Option<usize>,
    /// Pooled P75 per phase (one entry when single-phase).
    pub p75: Vec<f64>,
    pub layers: Vec<Vec<PopulationStats>>,
}

/// Runs [`compare`] for every record.
///
/// `dec_labels[l]` are the decoder-side labels of layer `l`; `enc_labels`
/// are used below `phase_boundary` when given.
pub fn analyze(
    records: &[LayerQkRecord],
    side: Side,
    dec_labels: &[Vec<SemanticLabel>],
    enc_labels: Option<&[Vec<SemanticLabel>]>,
    phase_boundary: Option<usize>,
    seed: u64,
) -> Result<PopulationReport> {
    let boundary = phase_boundary.filter(|_| enc_labels.is_some());
    let weights: Vec<Vec<f64>> = records.iter().map(|r| r.aggregate(side)).collect();
    let n_phases = if boundary.is_some() { 2 } else { 1 };
    let mut p75 = Vec::with_capacity(n_phases);
    for phase in 0..n_phases {
        let pooled = records
            .iter()
            .zip(&weights)
            .filter(|(r, _)| phase_of(r.layer, boundary) == phase)
            .map(|(_, w)| w.as_slice());
        // An empty phase keeps a NaN threshold, so nothing counts as above it.
        p75.push(pooled_p75(pooled).unwrap_or(f64::NAN));
    }
    let layers = records
        .par_iter()
        .zip(&weights)
        .map(|(r, w)| {
            let labels = match (boundary, enc_labels) {
                (Some(b), Some(enc)) if r.layer < b => enc.get(r.layer),
                _ => dec_labels.get(r.layer),
            }
            .ok_or_else(|| Error::InvalidInput(format!("no semantic labels for layer {}", r.layer)))?;
            let p = p75[phase_of(r.layer, boundary)];
            compare(r.layer, side, labels, w, p, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PopulationReport {
        side,
        phase_boundary: boundary,
        p75,
        layers,
    })
}

#[derive(Serialize)]
struct CrossLayerRow {
    layer: usize,
    side: Side,
    population: Population,
    n: usize,
    absent: bool,
    mean: f64,
    median: f64,
    pct_above_p75: f64,
}

#[derive(Serialize)]
struct LayerRow {
    population: Population,
    bin: usize,
    lo: f64,
    hi: f64,
    count: usize,
}

/// Cross-layer CSV plus one histogram CSV per layer.
pub fn write_report(dir: &Path, report: &PopulationReport) -> Result<()> {
    let tag = match report.side {
        Side::Query => "query",
        Side::Key => "key",
    };
    write_csv(
        &dir.join(format!("population_{tag}.csv")),
        report.layers.iter().flatten().map(|s| CrossLayerRow {
            layer: s.layer,
            side: s.side,
            population: s.population,
            n: s.n,
            absent: s.absent,
            mean: s.mean,
            median: s.median,
            pct_above_p75: s.pct_above_p75,
        }),
    )?;
    for layer in &report.layers {
        let Some(first) = layer.first() else { continue };
        let rows = layer.iter().flat_map(|s| {
            s.histogram
                .counts
                .iter()
                .enumerate()
                .map(move |(bin, &count)| LayerRow {
                    population: s.population,
                    bin,
                    lo: s.histogram.edges[bin],
                    hi: s.histogram.edges[bin + 1],
                    count,
                })
        });
        write_csv(
            &dir.join(format!("population_{tag}_layer_{:03}.csv", first.layer)),
            rows,
        )?;
    }
    Ok(())
}
