// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end experiment runs and their artifacts.
//!
//! Output layout under `out_dir`:
//!
//! | path | stage |
//! |---|---|
//! | `attr/{dir}_layer_NNN.csv` | top tokens per feature |
//! | `metrics/{dir}_layer_NNN.csv`, `metrics/{dir}_corr.csv` | 23 metrics, rank correlation at the calibration layer |
//! | `semantics/{dir}_thresholds.json`, `{dir}_labels_layer_NNN.csv`, `{dir}_pass_rates.csv`, `{dir}_samples.json` | classification |
//! | `qk/layer_NNN.json`, `qk/layers.csv`, `qk/head_magnitude.csv`, `qk/sweep_{side}.csv` | attention participation |
//! | `population/population_{side}.csv`, `population_{side}_layer_NNN.csv` | population comparison |
//! | `{stage}/summary.json` | headline numbers, merged into `results.json` |
//!
//! Each completed stage leaves `.done/{stage}.json` holding a fingerprint of
//! the configuration and bundle modification times; a later run skips the
//! stage while the fingerprint matches.

pub mod plot;
pub mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attribution::{batch_attribute, AttributionConfig, Direction};
use crate::bundle::{load_bundle, read_manifest, ArchSpec, ModelBundle, MANIFEST_FILE};
use crate::metrics::{
    layer_metrics, read_metrics_csv, spearman_matrix, write_correlation_csv, write_metrics_csv, MetricConfig,
};
use crate::persist::{read_json, write_atomic, write_csv, write_json};
use crate::population::{analyze, write_report};
use crate::qkcircuit::sweep::{read_records, write_sweep_csv, write_tables};
use crate::qkcircuit::{
    layer_sweep, threshold_sweep, HeadAggregation, QkConfig, Side, DEFAULT_KEY_TAUS, DEFAULT_QUERY_TAUS,
};
use crate::semantics::{
    calibrate, classify, default_calibration_layer, phase_split, read_labels_csv, sample_features, write_labels_csv,
    write_pass_rates_csv, LayerPassRates, MetricSubset, ThresholdSet, DEFAULT_PHASE_CUTOFF,
};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Attr,
    Metrics,
    Semantics,
    QkPre,
    QkPost,
    Population,
}

impl Stage {
    /// Every stage, in an order where dependencies come first.
    pub const ALL: [Stage; 6] = [
        Stage::Attr,
        Stage::Metrics,
        Stage::Semantics,
        Stage::QkPre,
        Stage::QkPost,
        Stage::Population,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Attr => "attr",
            Stage::Metrics => "metrics",
            Stage::Semantics => "semantics",
            Stage::QkPre => "qk_pre",
            Stage::QkPost => "qk_post",
            Stage::Population => "population",
        }
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Attr | Stage::QkPre => &[],
            Stage::Metrics => &[Stage::Attr],
            Stage::Semantics => &[Stage::Metrics],
            Stage::QkPost => &[Stage::QkPre],
            Stage::Population => &[Stage::Semantics, Stage::QkPre],
        }
    }

    fn dir(self) -> &'static str {
        match self {
            Stage::QkPre | Stage::QkPost => "qk",
            other => other.name(),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// `requested` plus everything it depends on, in execution order.
pub fn schedule(requested: &[Stage]) -> Vec<Stage> {
    fn add(s: Stage, set: &mut std::collections::BTreeSet<Stage>) {
        if set.insert(s) {
            for &d in s.dependencies() {
                add(d, set);
            }
        }
    }
    let mut set = std::collections::BTreeSet::new();
    for &s in requested {
        add(s, &mut set);
    }
    set.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub bundle: PathBuf,
    pub out_dir: PathBuf,
    pub experiments: Vec<Stage>,
    pub directions: Vec<Direction>,
    pub k: usize,
    pub tau_q: f64,
    pub tau_k: f64,
    pub percentile: f64,
    pub block_rows: usize,
    pub attr_block: usize,
    pub seed: u64,
    pub phase_boundary: Option<usize>,
    pub phase_cutoff: f64,
    pub calibration_layer_dec: Option<usize>,
    pub calibration_layer_enc: Option<usize>,
    pub sample_size: usize,
    pub workers: Option<usize>,
    pub aggregation: HeadAggregation,
    pub use_norm: bool,
    pub query_taus: Vec<f64>,
    pub key_taus: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            bundle: PathBuf::new(),
            out_dir: PathBuf::from("results"),
            experiments: Stage::ALL.to_vec(),
            directions: Direction::ALL.to_vec(),
            k: 10,
            tau_q: 0.95,
            tau_k: 0.25,
            percentile: 50.0,
            block_rows: 512,
            attr_block: crate::attribution::DEFAULT_BLOCK,
            seed: 0,
            phase_boundary: None,
            phase_cutoff: DEFAULT_PHASE_CUTOFF,
            calibration_layer_dec: None,
            calibration_layer_enc: None,
            sample_size: 20,
            workers: None,
            aggregation: HeadAggregation::FeatureStatistic,
            use_norm: true,
            query_taus: DEFAULT_QUERY_TAUS.to_vec(),
            key_taus: DEFAULT_KEY_TAUS.to_vec(),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.bundle.is_relative() {
            cfg.bundle = base.join(&cfg.bundle);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.bundle.as_os_str().is_empty() {
            return bad("`bundle` is required".into());
        }
        if self.directions.is_empty() {
            return bad("`directions` must not be empty".into());
        }
        if self.k < 2 {
            return bad(format!("`k` must be at least 2, got {}", self.k));
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return bad(format!("`percentile` must lie in (0, 100), got {}", self.percentile));
        }
        if self.block_rows == 0 || self.attr_block == 0 {
            return bad("block sizes must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("`workers` must be positive".into());
        }
        if [self.tau_q, self.tau_k, self.phase_cutoff]
            .iter()
            .any(|t| !t.is_finite())
        {
            return bad("thresholds must be finite".into());
        }
        Ok(())
    }

    pub fn qk(&self) -> QkConfig {
        QkConfig {
            k: self.k,
            tau_q: self.tau_q,
            tau_k: self.tau_k,
            block_rows: self.block_rows,
            use_norm: self.use_norm,
            aggregation: self.aggregation,
        }
    }

    pub fn attribution(&self) -> AttributionConfig {
        AttributionConfig {
            top_k: self.k,
            block_size: self.attr_block,
            ..Default::default()
        }
    }

    pub fn metrics(&self) -> MetricConfig {
        MetricConfig {
            k: self.k,
            ..Default::default()
        }
    }

    pub fn calibration_layer(&self, arch: &ArchSpec, direction: Direction) -> usize {
        let configured = match direction {
            Direction::DecUnembed => self.calibration_layer_dec,
            Direction::EncEmbed => self.calibration_layer_enc,
        };
        configured.unwrap_or_else(|| default_calibration_layer(arch, direction))
    }

    fn fingerprint(&self) -> Result<Value> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.workers = None;
        c.experiments.clear();
        let mut mtimes = BTreeMap::new();
        let manifest = read_manifest(&self.bundle)?;
        for name in [MANIFEST_FILE.to_string(), manifest.tensors, manifest.vocab] {
            let p = self.bundle.join(&name);
            let meta = std::fs::metadata(&p).map_err(|e| Error::io(&p, e))?;
            let t = meta
                .modified()
                .ok()
                .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
                .map_or(0, |d| d.as_nanos());
            mtimes.insert(name, t.to_string());
        }
        Ok(json!({ "config": c, "bundle_mtimes": mtimes }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub results: PathBuf,
}

pub const RESULTS_FILE: &str = "results.json";

fn marker(out: &Path, s: Stage) -> PathBuf {
    out.join(".done").join(format!("{}.json", s.name()))
}

fn stage_err(stage: Stage, layer: Option<usize>) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Stage { .. } => e,
        other if other.is_bundle_error() => other,
        other => Error::Stage {
            stage: stage.name().into(),
            layer,
            message: other.to_string(),
        },
    }
}

/// Runs the requested stages and writes `results.json`.
pub fn run(cfg: &RunConfig, force: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let workers = crate::parallel::resolve_workers(cfg.workers)?;
    crate::parallel::with_workers(workers, || run_inner(cfg, force))?
}

fn run_inner(cfg: &RunConfig, force: bool) -> Result<RunOutcome> {
    let manifest = read_manifest(&cfg.bundle).map_err(as_bundle_error)?;
    let arch = manifest.arch;
    let fingerprint = cfg.fingerprint()?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stages = schedule(&cfg.experiments);
    let mut bundle: Option<ModelBundle<f32>> = None;
    let mut executed: Vec<Stage> = Vec::new();
    let mut skipped = Vec::new();
    for &stage in &stages {
        let upstream_ran = stage.dependencies().iter().any(|d| executed.contains(d));
        let fresh = !force
            && !upstream_ran
            && read_json::<Value>(&marker(out, stage)).is_ok_and(|m| m == fingerprint)
            && out.join(stage.dir()).join(summary_name(stage)).exists();
        if fresh {
            skipped.push(stage);
            continue;
        }
        let _ = std::fs::remove_file(marker(out, stage));
        let dir = out.join(stage.dir());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let needs_weights = matches!(stage, Stage::Attr | Stage::Metrics | Stage::QkPre);
        if needs_weights && bundle.is_none() {
            bundle = Some(load_bundle::<f32>(&cfg.bundle).map_err(as_bundle_error)?);
        }
        let summary = match stage {
            Stage::Attr => stage_attr(cfg, bundle.as_ref().unwrap(), &dir),
            Stage::Metrics => stage_metrics(cfg, bundle.as_ref().unwrap(), &dir),
            Stage::Semantics => stage_semantics(cfg, &arch, out, &dir),
            Stage::QkPre => stage_qk_pre(cfg, bundle.as_ref().unwrap(), &dir),
            Stage::QkPost => stage_qk_post(cfg, &dir),
            Stage::Population => stage_population(cfg, &arch, out, &dir),
        }
        .map_err(stage_err(stage, None))?;
        write_json(&dir.join(summary_name(stage)), &summary)?;
        write_json(&marker(out, stage), &fingerprint)?;
        executed.push(stage);
    }
    let results = out.join(RESULTS_FILE);
    write_results(&results, &arch, out, &stages)?;
    Ok(RunOutcome {
        executed,
        skipped,
        results,
    })
}

/// Unreadable bundle files count as bundle errors, not stage failures.
fn as_bundle_error(e: Error) -> Error {
    match e {
        Error::Io { .. } | Error::Json { .. } => Error::Container(e.to_string()),
        e => e,
    }
}

fn summary_name(stage: Stage) -> String {
    match stage {
        Stage::QkPre => "summary_pre.json".into(),
        Stage::QkPost => "summary_post.json".into(),
        _ => "summary.json".into(),
    }
}

fn write_results(path: &Path, arch: &ArchSpec, out: &Path, stages: &[Stage]) -> Result<()> {
    let mut root = serde_json::Map::new();
    root.insert(
        "arch".into(),
        serde_json::to_value(arch).map_err(|e| Error::json(path, e))?,
    );
    for &s in stages {
        let p = out.join(s.dir()).join(summary_name(s));
        root.insert(s.name().into(), read_json::<Value>(&p)?);
    }
    write_json(path, &Value::Object(root))
}

fn layer_file(dir: &Path, prefix: &str, layer: usize) -> PathBuf {
    dir.join(format!("{prefix}_layer_{layer:03}.csv"))
}

fn stage_attr<T: Scalar>(cfg: &RunConfig, bundle: &ModelBundle<T>, dir: &Path) -> Result<Value> {
    #[derive(Serialize)]
    struct Row<'a> {
        feature: usize,
        rank: usize,
        token_id: usize,
        token: &'a str,
        score: f64,
    }
    let ac = cfg.attribution();
    for &d in &cfg.directions {
        for layer in 0..bundle.n_layers() {
            let d_sae = bundle.sae(layer)?.d_sae();
            let mut rows = Vec::new();
            for a in batch_attribute(bundle, layer, d, 0..d_sae, &ac).map_err(stage_err(Stage::Attr, Some(layer)))? {
                for (rank, &(token_id, score)) in a.top_k.iter().enumerate() {
                    rows.push(Row {
                        feature: a.feature,
                        rank,
                        token_id,
                        token: &bundle.vocab[token_id],
                        score,
                    });
                }
            }
            write_csv(&layer_file(dir, d.tag(), layer), rows)?;
        }
    }
    Ok(json!({ "directions": cfg.directions, "layers": bundle.n_layers(), "top_k": cfg.k }))
}

/// The three metrics used for classification.
const SELECTED: [&str; 3] = ["leven_sim", "cosine_sim", "entropy_100"];

fn stage_metrics<T: Scalar>(cfg: &RunConfig, bundle: &ModelBundle<T>, dir: &Path) -> Result<Value> {
    let (ac, mc) = (cfg.attribution(), cfg.metrics());
    let mut summary = serde_json::Map::new();
    for &d in &cfg.directions {
        let cal = cfg.calibration_layer(&bundle.arch, d);
        let mut selected_rho = Value::Null;
        let mut constant = Vec::new();
        for layer in 0..bundle.n_layers() {
            let table = layer_metrics(bundle, layer, d, &ac, &mc).map_err(stage_err(Stage::Metrics, Some(layer)))?;
            write_metrics_csv(&layer_file(dir, d.tag(), layer), &table)?;
            if layer == cal && table.len() >= 3 {
                let c = spearman_matrix(&table).map_err(stage_err(Stage::Metrics, Some(layer)))?;
                write_correlation_csv(&dir.join(format!("{}_corr.csv", d.tag())), &c)?;
                let idx = |n: &str| c.names.iter().position(|x| x == n).unwrap();
                let pairs = [(0, 1), (0, 2), (1, 2)];
                let mean_abs = pairs
                    .iter()
                    .map(|&(a, b)| c.rho[idx(SELECTED[a])][idx(SELECTED[b])].abs())
                    .sum::<f64>()
                    / 3.0;
                selected_rho = json!(mean_abs);
                constant = c.constant;
            }
        }
        summary.insert(
            d.tag().into(),
            json!({
                "calibration_layer": cal,
                "selected_mean_abs_rho": selected_rho,
                "constant_metrics": constant,
            }),
        );
    }
    Ok(Value::Object(summary))
}

fn stage_semantics(cfg: &RunConfig, arch: &ArchSpec, out: &Path, dir: &Path) -> Result<Value> {
    let metrics_dir = out.join(Stage::Metrics.dir());
    let mut summary = serde_json::Map::new();
    let mut joint: Vec<(Direction, Vec<f64>)> = Vec::new();
    for &d in &cfg.directions {
        let cal = cfg.calibration_layer(arch, d);
        if cal >= arch.n_layers {
            return Err(Error::Config(format!(
                "calibration layer {cal} out of range for {} layers",
                arch.n_layers
            )));
        }
        let tables: Vec<_> = (0..arch.n_layers)
            .map(|l| read_metrics_csv(&layer_file(&metrics_dir, d.tag(), l)))
            .collect::<Result<_>>()?;
        let t = calibrate(&tables[cal], d, cal, cfg.percentile).map_err(stage_err(Stage::Semantics, Some(cal)))?;
        t.write(&dir.join(format!("{}_thresholds.json", d.tag())))?;
        let mut rates = Vec::new();
        let mut samples = BTreeMap::new();
        for (layer, table) in tables.iter().enumerate() {
            let labels = classify(table, &t);
            write_labels_csv(&layer_file(dir, &format!("{}_labels", d.tag()), layer), &labels)?;
            samples.insert(
                layer.to_string(),
                sample_features(&labels, cfg.sample_size, cfg.seed ^ layer as u64),
            );
            rates.push(LayerPassRates::from_labels(layer, &labels));
        }
        write_pass_rates_csv(&dir.join(format!("{}_pass_rates.csv", d.tag())), &rates)?;
        write_json(&dir.join(format!("{}_samples.json", d.tag())), &samples)?;
        let j: Vec<f64> = rates.iter().map(|r| r.joint()).collect();
        let singles: BTreeMap<String, Vec<f64>> = [MetricSubset::LEVEN, MetricSubset::COSINE, MetricSubset::ENTROPY]
            .iter()
            .map(|&s| (s.name(), rates.iter().map(|r| r.rate(s)).collect()))
            .collect();
        summary.insert(
            d.tag().into(),
            json!({
                "thresholds": t,
                "joint_pass_rate": j,
                "single_pass_rate": singles,
                "average_joint_pass_rate": crate::stats::mean(&j),
            }),
        );
        joint.push((d, j));
    }
    let find = |d: Direction| joint.iter().find(|(x, _)| *x == d).map(|(_, j)| j);
    let split = match (find(Direction::DecUnembed), find(Direction::EncEmbed)) {
        (Some(dec), Some(enc)) => phase_split(dec, enc, cfg.phase_cutoff),
        _ => None,
    };
    summary.insert("phase_split".into(), json!(split));
    Ok(Value::Object(summary))
}

fn stage_qk_pre<T: Scalar>(cfg: &RunConfig, bundle: &ModelBundle<T>, dir: &Path) -> Result<Value> {
    let last = bundle.arch.n_layers.saturating_sub(1);
    let records = layer_sweep(bundle, &cfg.qk(), 0..last, Some(dir))?;
    let layers: Vec<Value> = records
        .iter()
        .map(|r| {
            json!({
                "layer": r.layer,
                "head_sums": r.head_sums(),
                "magnitude_rank": r.magnitude_rank,
                "mean_w_q": crate::stats::mean(&r.aggregate_q()),
                "mean_w_k": crate::stats::mean(&r.aggregate_k()),
            })
        })
        .collect();
    Ok(json!({ "k": cfg.k, "layers": layers }))
}

fn stage_qk_post(cfg: &RunConfig, dir: &Path) -> Result<Value> {
    let records = read_records(dir)?;
    let qk = cfg.qk();
    write_tables(dir, &records, &qk)?;
    let mut sweeps = serde_json::Map::new();
    for (side, taus) in [(Side::Query, &cfg.query_taus), (Side::Key, &cfg.key_taus)] {
        let tag = if side == Side::Query { "query" } else { "key" };
        let with = threshold_sweep(&records, taus, side, false);
        let without = threshold_sweep(&records, taus, side, true);
        write_sweep_csv(&dir.join(format!("sweep_{tag}.csv")), side, &with)?;
        write_sweep_csv(&dir.join(format!("sweep_{tag}_no_self.csv")), side, &without)?;
        sweeps.insert(tag.into(), json!({ "with_self": with, "without_self": without }));
    }
    let layers: Vec<Value> = records
        .iter()
        .map(|r| {
            json!({
                "layer": r.layer,
                "d_sae": r.d_sae,
                "with_self": r.counts(qk.tau_q, qk.tau_k, false, qk.aggregation),
                "without_self": r.counts(qk.tau_q, qk.tau_k, true, qk.aggregation),
            })
        })
        .collect();
    Ok(json!({ "tau_q": cfg.tau_q, "tau_k": cfg.tau_k, "layers": layers, "sweep": sweeps }))
}

fn stage_population(cfg: &RunConfig, arch: &ArchSpec, out: &Path, dir: &Path) -> Result<Value> {
    let records = read_records(&out.join(Stage::QkPre.dir()))?;
    let sem_dir = out.join(Stage::Semantics.dir());
    let read_all = |d: Direction| -> Result<Vec<Vec<_>>> {
        (0..arch.n_layers)
            .map(|l| read_labels_csv(&layer_file(&sem_dir, &format!("{}_labels", d.tag()), l)))
            .collect()
    };
    if !cfg.directions.contains(&Direction::DecUnembed) {
        return Err(Error::Config("population analysis needs the dec direction".into()));
    }
    let dec = read_all(Direction::DecUnembed)?;
    let enc = if cfg.directions.contains(&Direction::EncEmbed) {
        Some(read_all(Direction::EncEmbed)?)
    } else {
        None
    };
    let boundary = match cfg.phase_boundary {
        Some(b) => Some(b),
        None if !arch.tied_embeddings => {
            let s: Value = read_json(&sem_dir.join("summary.json"))?;
            s["phase_split"].as_u64().map(|b| b as usize)
        }
        None => None,
    };
    let mut summary = serde_json::Map::new();
    for side in [Side::Query, Side::Key] {
        let report = analyze(&records, side, &dec, enc.as_deref(), boundary, cfg.seed)?;
        write_report(dir, &report)?;
        let tag = if side == Side::Query { "query" } else { "key" };
        let rows: Vec<Value> = report
            .layers
            .iter()
            .flatten()
            .map(|s| {
                json!({
                    "layer": s.layer,
                    "population": s.population,
                    "n": s.n,
                    "absent": s.absent,
                    "mean": s.mean,
                    "median": s.median,
                    "pct_above_p75": s.pct_above_p75,
                })
            })
            .collect();
        summary.insert(tag.into(), json!({ "p75": report.p75, "layers": rows }));
        summary.insert("phase_boundary".into(), json!(report.phase_boundary));
    }
    Ok(Value::Object(summary))
}

/// Process exit code for an error: 2 configuration, 3 bundle, 4 stage failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        e if e.is_bundle_error() => 3,
        _ => 4,
    }
}

/// Writes a default config pointing at `bundle`, for `run --config`.
pub fn write_default_config(path: &Path, bundle: &Path, out_dir: &Path) -> Result<()> {
    let cfg = RunConfig {
        bundle: bundle.to_path_buf(),
        out_dir: out_dir.to_path_buf(),
        ..Default::default()
    };
    let text = serde_json::to_string_pretty(&cfg).map_err(|e| Error::json(path, e))?;
    write_atomic(path, (text + "\n").as_bytes())
}

pub fn read_thresholds(path: &Path) -> Result<ThresholdSet> {
    ThresholdSet::read(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_adds_dependencies_in_order() {
        assert_eq!(
            schedule(&[Stage::Population]),
            vec![
                Stage::Attr,
                Stage::Metrics,
                Stage::Semantics,
                Stage::QkPre,
                Stage::Population
            ]
        );
        assert_eq!(
            schedule(&[Stage::QkPost, Stage::QkPre]),
            vec![Stage::QkPre, Stage::QkPost]
        );
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: RunConfig = serde_json::from_str(r#"{"bundle": "b"}"#).unwrap();
        assert_eq!(cfg.experiments, Stage::ALL.to_vec());
        assert_eq!(cfg.k, 10);
        cfg.validate().unwrap();
        assert!(serde_json::from_str::<RunConfig>(r#"{"bundel": "b"}"#).is_err());
        let bad = RunConfig {
            percentile: 100.0,
            ..cfg.clone()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(RunConfig::default().validate().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Container("x".into())), 3);
        assert_eq!(
            exit_code(&Error::Stage {
                stage: "qk".into(),
                layer: Some(1),
                message: "m".into()
            }),
            4
        );
    }
}
