// SPDX-License-Identifier: MIT OR Apache-2.0

//! SVG figures rendered from a run's CSV artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::svg::{padded, range_of, Frame, Svg, PALETTE};
use crate::persist::write_atomic;
use crate::semantics::MetricSubset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    PassRate,
    HeadMagnitude,
    FeatureCounts,
    Density,
    CrossLayer,
}

impl PlotKind {
    pub const ALL: [PlotKind; 5] = [
        PlotKind::PassRate,
        PlotKind::HeadMagnitude,
        PlotKind::FeatureCounts,
        PlotKind::Density,
        PlotKind::CrossLayer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::PassRate => "pass_rate",
            PlotKind::HeadMagnitude => "head_magnitude",
            PlotKind::FeatureCounts => "feature_counts",
            PlotKind::Density => "density",
            PlotKind::CrossLayer => "cross_layer",
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = PlotKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!(
                "unknown figure kind {s:?}; expected one of {}",
                names.join(", ")
            ))
        })
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;

fn frame(x_range: (f64, f64), y_range: (f64, f64)) -> Frame {
    Frame {
        left: 70.0,
        top: 40.0,
        width: W - 150.0,
        height: H - 100.0,
        x_range,
        y_range,
    }
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize().map(|x| x.map_err(|e| Error::csv(path, e))).collect()
}

fn layer_range(layers: impl IntoIterator<Item = usize>) -> (f64, f64) {
    let v: Vec<f64> = layers.into_iter().map(|l| l as f64).collect();
    let (lo, hi) = range_of(&v);
    if lo > hi {
        return (0.0, 1.0);
    }
    (lo - 0.5, hi + 0.5)
}

#[derive(Debug, Clone, Deserialize)]
pub struct PassRateRow {
    pub layer: usize,
    pub subset: String,
    pub pass_rate: f64,
}

pub fn render_pass_rate(title: &str, rows: &[PassRateRow]) -> Result<String> {
    let mut svg = Svg::new(W, H);
    let f = frame(layer_range(rows.iter().map(|r| r.layer)), (0.0, 1.0));
    f.axes(&mut svg, "layer", "pass rate", true);
    svg.text(W / 2.0, 20.0, "middle", 14, title);
    let mut legend = Vec::new();
    for s in MetricSubset::all_subsets().skip(1) {
        let name = s.name();
        let mut pts: Vec<(usize, f64)> = rows
            .iter()
            .filter(|r| MetricSubset::parse(&r.subset).is_ok_and(|x| x == s))
            .map(|r| (r.layer, r.pass_rate))
            .collect();
        pts.sort_by_key(|p| p.0);
        let color = PALETTE[(s.0 as usize - 1) % PALETTE.len()];
        let points: Vec<(f64, f64)> = pts.iter().map(|&(l, r)| (f.x(l as f64), f.y(r))).collect();
        svg.polyline(&points, color, s.len() < 3 && s.len() > 1, &name);
        legend.push((name, color, s.len() == 2));
    }
    f.legend(&mut svg, &legend);
    Ok(svg.finish())
}

#[derive(Debug, Clone, Deserialize)]
pub struct MagnitudeRow {
    pub layer: usize,
    pub rank: usize,
    pub head: usize,
    pub head_sum: f64,
}

/// Stacked `|head_sum|` per layer, coloured by magnitude rank.
pub fn render_head_magnitude(rows: &[MagnitudeRow]) -> Result<String> {
    let mut by_layer: BTreeMap<usize, Vec<&MagnitudeRow>> = BTreeMap::new();
    for r in rows {
        by_layer.entry(r.layer).or_default().push(r);
    }
    let totals: Vec<f64> = by_layer
        .values()
        .map(|v| v.iter().map(|r| r.head_sum.abs()).sum())
        .collect();
    let top = totals.iter().copied().fold(0.0, f64::max);
    let mut svg = Svg::new(W, H);
    let f = frame(
        layer_range(by_layer.keys().copied()),
        (0.0, if top > 0.0 { top * 1.05 } else { 1.0 }),
    );
    f.axes(&mut svg, "layer", "sum over heads of |mean pre-softmax score|", true);
    svg.text(W / 2.0, 20.0, "middle", 14, "Head magnitude by rank");
    let bar = (f.x(1.0) - f.x(0.0)) * 0.7;
    for (layer, mut heads) in by_layer {
        heads.sort_by_key(|r| r.rank);
        let mut base = 0.0;
        for r in heads {
            let v = r.head_sum.abs();
            let (y_top, y_bot) = (f.y(base + v), f.y(base));
            svg.rect(
                f.x(layer as f64) - bar / 2.0,
                y_top,
                bar,
                y_bot - y_top,
                PALETTE[r.rank % PALETTE.len()],
            );
            base += v;
        }
    }
    Ok(svg.finish())
}

#[derive(Debug, Clone, Deserialize)]
pub struct CountRow {
    pub layer: usize,
    pub self_attention: String,
    pub query_any: f64,
    pub query_mean: f64,
    pub query_median: f64,
    pub key_any: f64,
    pub key_mean: f64,
    pub key_median: f64,
}

/// Mean/median counts on the left axis, any-head counts on the right.
pub fn render_feature_counts(side: &str, rows: &[CountRow]) -> Result<String> {
    let pick = |r: &CountRow| -> (f64, f64, f64) {
        if side == "query" {
            (r.query_any, r.query_mean, r.query_median)
        } else {
            (r.key_any, r.key_mean, r.key_median)
        }
    };
    let left: Vec<f64> = rows.iter().flat_map(|r| [pick(r).1, pick(r).2]).collect();
    let right: Vec<f64> = rows.iter().map(|r| pick(r).0).collect();
    let (_, lmax) = range_of(&left);
    let (_, rmax) = range_of(&right);
    let lr = (0.0, if lmax > 0.0 { lmax * 1.1 } else { 1.0 });
    let rr = (0.0, if rmax > 0.0 { rmax * 1.1 } else { 1.0 });
    let mut svg = Svg::new(W, H);
    let f = frame(layer_range(rows.iter().map(|r| r.layer)), lr);
    let fr = f.with_y(rr);
    f.axes(&mut svg, "layer", "mean / median count across heads", true);
    f.right_axis(&mut svg, rr, "any-head count");
    let title = if side == "query" {
        "Query specialists"
    } else {
        "Key hubs"
    };
    svg.text(W / 2.0, 20.0, "middle", 14, title);
    let mut legend = Vec::new();
    for (variant, dashed) in [("with", false), ("without", true)] {
        let mut sel: Vec<&CountRow> = rows.iter().filter(|r| r.self_attention == variant).collect();
        sel.sort_by_key(|r| r.layer);
        let series: [(&str, usize, &Frame, &str); 3] = [
            ("any head", 0, &fr, PALETTE[1]),
            ("mean", 1, &f, PALETTE[0]),
            ("median", 2, &f, PALETTE[2]),
        ];
        for (name, idx, fr, color) in series {
            let pts: Vec<(f64, f64)> = sel
                .iter()
                .map(|r| {
                    let v = pick(r);
                    let y = [v.0, v.1, v.2][idx];
                    (fr.x(r.layer as f64), fr.y(y))
                })
                .collect();
            let label = format!("{name} ({variant} self)");
            svg.polyline(&pts, color, dashed, &label);
            legend.push((label, color, dashed));
        }
    }
    f.legend(&mut svg, &legend);
    Ok(svg.finish())
}

#[derive(Debug, Clone, Deserialize)]
pub struct HistogramRow {
    pub population: String,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

const POPULATIONS: [&str; 3] = ["semantic", "non_semantic", "random_baseline"];

/// One small panel per layer with each population's normalized histogram.
pub fn render_density(side: &str, layers: &[(usize, Vec<HistogramRow>)]) -> Result<String> {
    let cols = 4usize;
    let rows_n = layers.len().div_ceil(cols).max(1);
    let (pw, ph) = (200.0, 140.0);
    let width = 40.0 + pw * cols as f64;
    let height = 60.0 + ph * rows_n as f64;
    let mut svg = Svg::new(width, height);
    svg.text(
        width / 2.0,
        20.0,
        "middle",
        14,
        &format!("Aggregate {side} weight density per layer"),
    );
    for (i, (layer, rows)) in layers.iter().enumerate() {
        let (cx, cy) = ((i % cols) as f64, (i / cols) as f64);
        let xr = padded(
            rows.iter().map(|r| r.lo).fold(f64::INFINITY, f64::min),
            rows.iter().map(|r| r.hi).fold(f64::NEG_INFINITY, f64::max),
        );
        let mut series = Vec::new();
        let mut ymax: f64 = 0.0;
        for p in POPULATIONS {
            let mut sel: Vec<&HistogramRow> = rows.iter().filter(|r| r.population == p).collect();
            sel.sort_by_key(|r| r.bin);
            let n: usize = sel.iter().map(|r| r.count).sum();
            let pts: Vec<(f64, f64)> = sel
                .iter()
                .map(|r| ((r.lo + r.hi) / 2.0, if n > 0 { r.count as f64 / n as f64 } else { 0.0 }))
                .collect();
            ymax = pts.iter().map(|p| p.1).fold(ymax, f64::max);
            series.push((p, pts, n));
        }
        let f = Frame {
            left: 30.0 + cx * pw,
            top: 40.0 + cy * ph,
            width: pw - 20.0,
            height: ph - 40.0,
            x_range: xr,
            y_range: (0.0, if ymax > 0.0 { ymax * 1.1 } else { 1.0 }),
        };
        for (x1, y1, x2, y2) in [
            (f.left, f.top + f.height, f.left + f.width, f.top + f.height),
            (f.left, f.top, f.left, f.top + f.height),
        ] {
            svg.line(x1, y1, x2, y2, "#333333");
        }
        svg.text(
            f.left + f.width / 2.0,
            f.top - 4.0,
            "middle",
            10,
            &format!("layer {layer}"),
        );
        for (j, (p, pts, n)) in series.into_iter().enumerate() {
            if n == 0 {
                continue;
            }
            let px: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (f.x(x), f.y(y))).collect();
            svg.polyline(&px, PALETTE[j], false, p);
        }
    }
    Ok(svg.finish())
}

#[derive(Debug, Clone, Deserialize)]
pub struct CrossLayerRow {
    pub layer: usize,
    pub population: String,
    pub absent: bool,
    pub mean: f64,
    pub median: f64,
    pub pct_above_p75: f64,
}

/// Mean (solid) and median (dashed) per population above, share above
/// the pooled P75 below.
pub fn render_cross_layer(side: &str, rows: &[CrossLayerRow]) -> Result<String> {
    let present: Vec<&CrossLayerRow> = rows.iter().filter(|r| !r.absent).collect();
    let vals: Vec<f64> = present.iter().flat_map(|r| [r.mean, r.median]).collect();
    let (lo, hi) = range_of(&vals);
    let xr = layer_range(rows.iter().map(|r| r.layer));
    let mut svg = Svg::new(W, H * 1.6);
    svg.text(
        W / 2.0,
        20.0,
        "middle",
        14,
        &format!("Aggregate {side} weight across layers"),
    );
    let top = Frame {
        height: 220.0,
        ..frame(xr, padded(lo, hi))
    };
    top.axes(&mut svg, "", "mean / median", true);
    let bottom = Frame {
        top: 330.0,
        height: 220.0,
        ..frame(xr, (0.0, 100.0))
    };
    bottom.axes(&mut svg, "layer", "% above pooled P75", true);
    let mut legend = Vec::new();
    for (j, p) in POPULATIONS.iter().enumerate() {
        let mut sel: Vec<&&CrossLayerRow> = present.iter().filter(|r| r.population == *p).collect();
        sel.sort_by_key(|r| r.layer);
        let color = PALETTE[j];
        let at = |f: &Frame, g: fn(&CrossLayerRow) -> f64| -> Vec<(f64, f64)> {
            sel.iter().map(|r| (f.x(r.layer as f64), f.y(g(r)))).collect()
        };
        svg.polyline(&at(&top, |r| r.mean), color, false, &format!("{p} mean"));
        svg.polyline(&at(&top, |r| r.median), color, true, &format!("{p} median"));
        svg.polyline(
            &at(&bottom, |r| r.pct_above_p75),
            color,
            false,
            &format!("{p} pct_above_p75"),
        );
        legend.push((p.to_string(), color, false));
    }
    top.legend(&mut svg, &legend);
    Ok(svg.finish())
}

fn emit(out: &Path, name: &str, svg: String, written: &mut Vec<PathBuf>) -> Result<()> {
    let p = out.join(name);
    write_atomic(&p, svg.as_bytes())?;
    written.push(p);
    Ok(())
}

fn layer_files(dir: &Path, prefix: &str) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for e in entries.filter_map(|e| e.ok()) {
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(rest) = name.strip_prefix(prefix).and_then(|r| r.strip_suffix(".csv")) {
            if let Ok(l) = rest.parse::<usize>() {
                out.push((l, e.path()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Renders one figure kind from the artifacts in `results` into `out`.
pub fn plot(results: &Path, kind: PlotKind, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    match kind {
        PlotKind::PassRate => {
            for (tag, title) in [
                ("dec", "Decoder-unembedding pass rates"),
                ("enc", "Encoder-embedding pass rates"),
            ] {
                let p = results.join("semantics").join(format!("{tag}_pass_rates.csv"));
                if p.exists() {
                    emit(
                        out,
                        &format!("pass_rate_{tag}.svg"),
                        render_pass_rate(title, &read_rows(&p)?)?,
                        &mut written,
                    )?;
                }
            }
        }
        PlotKind::HeadMagnitude => {
            let rows = read_rows(&results.join("qk").join("head_magnitude.csv"))?;
            emit(out, "head_magnitude.svg", render_head_magnitude(&rows)?, &mut written)?;
        }
        PlotKind::FeatureCounts => {
            let rows: Vec<CountRow> = read_rows(&results.join("qk").join("layers.csv"))?;
            for side in ["query", "key"] {
                emit(
                    out,
                    &format!("feature_counts_{side}.svg"),
                    render_feature_counts(side, &rows)?,
                    &mut written,
                )?;
            }
        }
        PlotKind::Density => {
            let dir = results.join("population");
            for side in ["query", "key"] {
                let layers = layer_files(&dir, &format!("population_{side}_layer_"))?
                    .into_iter()
                    .map(|(l, p)| Ok((l, read_rows(&p)?)))
                    .collect::<Result<Vec<_>>>()?;
                emit(
                    out,
                    &format!("density_{side}.svg"),
                    render_density(side, &layers)?,
                    &mut written,
                )?;
            }
        }
        PlotKind::CrossLayer => {
            for side in ["query", "key"] {
                let rows = read_rows(&results.join("population").join(format!("population_{side}.csv")))?;
                emit(
                    out,
                    &format!("cross_layer_{side}.svg"),
                    render_cross_layer(side, &rows)?,
                    &mut written,
                )?;
            }
        }
    }
    if written.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no inputs for {} under {}",
            kind.name(),
            results.display()
        )));
    }
    Ok(written)
}
