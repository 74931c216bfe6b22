// SPDX-License-Identifier: MIT OR Apache-2.0

//! The 23 candidate interpretability metrics computed from a feature's
//! logit attribution, and their rank-correlation analysis.

pub mod distribution;
pub mod spearman;
pub mod text;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{Direction, LogitAttribution};
use crate::bundle::ModelBundle;
use crate::tensor::Matrix;
use crate::topk::top_k;
use crate::{Error, Result, Scalar};

pub use spearman::CorrelationMatrix;

/// Metric names in column order.
pub const NAMES: [&str; 23] = [
    "cosine_sim",
    "leven_sim",
    "string_overlap",
    "entropy_10",
    "entropy_25",
    "entropy_50",
    "entropy_100",
    "entropy_full",
    "mass_k",
    "gini_k",
    "cv_k",
    "maxmin_ratio_k",
    "l2_norm",
    "prefix_div",
    "suffix_div",
    "len_mean",
    "len_std",
    "len_max",
    "case_consist",
    "whitespace",
    "mass_100",
    "gini_100",
    "cv_100",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    pub zero_norm_embedding: bool,
    pub no_positive_mass: bool,
    pub gini_shifted: bool,
    pub gini_degenerate: bool,
    pub cv_undefined: bool,
    pub ratio_undefined: bool,
}

impl MetricFlags {
    const LABELS: [&'static str; 6] = [
        "zero_norm_embedding",
        "no_positive_mass",
        "gini_shifted",
        "gini_degenerate",
        "cv_undefined",
        "ratio_undefined",
    ];

    fn bits(&self) -> [bool; 6] {
        [
            self.zero_norm_embedding,
            self.no_positive_mass,
            self.gini_shifted,
            self.gini_degenerate,
            self.cv_undefined,
            self.ratio_undefined,
        ]
    }

    pub fn any(&self) -> bool {
        self.bits().iter().any(|&b| b)
    }

    /// `|`-separated labels of the raised flags.
    pub fn labels(&self) -> String {
        Self::LABELS
            .iter()
            .zip(self.bits())
            .filter(|(_, b)| *b)
            .map(|(l, _)| *l)
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut f = Self::default();
        for label in s.split('|').filter(|l| !l.is_empty()) {
            match label {
                "zero_norm_embedding" => f.zero_norm_embedding = true,
                "no_positive_mass" => f.no_positive_mass = true,
                "gini_shifted" => f.gini_shifted = true,
                "gini_degenerate" => f.gini_degenerate = true,
                "cv_undefined" => f.cv_undefined = true,
                "ratio_undefined" => f.ratio_undefined = true,
                other => return Err(Error::InvalidInput(format!("unknown metric flag {other:?}"))),
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub layer: usize,
    pub feature: usize,
    pub k: usize,
    pub cosine_sim: f64,
    pub leven_sim: f64,
    pub string_overlap: f64,
    pub entropy_10: f64,
    pub entropy_25: f64,
    pub entropy_50: f64,
    pub entropy_100: f64,
    pub entropy_full: f64,
    pub mass_k: f64,
    pub gini_k: f64,
    pub cv_k: f64,
    pub maxmin_ratio_k: f64,
    pub l2_norm: f64,
    pub prefix_div: f64,
    pub suffix_div: f64,
    pub len_mean: f64,
    pub len_std: f64,
    pub len_max: f64,
    pub case_consist: f64,
    pub whitespace: f64,
    pub mass_100: f64,
    pub gini_100: f64,
    pub cv_100: f64,
    pub flags: MetricFlags,
}

impl MetricVector {
    /// Values in [`NAMES`] order.
    pub fn values(&self) -> [f64; 23] {
        [
            self.cosine_sim,
            self.leven_sim,
            self.string_overlap,
            self.entropy_10,
            self.entropy_25,
            self.entropy_50,
            self.entropy_100,
            self.entropy_full,
            self.mass_k,
            self.gini_k,
            self.cv_k,
            self.maxmin_ratio_k,
            self.l2_norm,
            self.prefix_div,
            self.suffix_div,
            self.len_mean,
            self.len_std,
            self.len_max,
            self.case_consist,
            self.whitespace,
            self.mass_100,
            self.gini_100,
            self.cv_100,
        ]
    }

    pub fn from_values(layer: usize, feature: usize, k: usize, v: [f64; 23], flags: MetricFlags) -> Self {
        Self {
            layer,
            feature,
            k,
            cosine_sim: v[0],
            leven_sim: v[1],
            string_overlap: v[2],
            entropy_10: v[3],
            entropy_25: v[4],
            entropy_50: v[5],
            entropy_100: v[6],
            entropy_full: v[7],
            mass_k: v[8],
            gini_k: v[9],
            cv_k: v[10],
            maxmin_ratio_k: v[11],
            l2_norm: v[12],
            prefix_div: v[13],
            suffix_div: v[14],
            len_mean: v[15],
            len_std: v[16],
            len_max: v[17],
            case_consist: v[18],
            whitespace: v[19],
            mass_100: v[20],
            gini_100: v[21],
            cv_100: v[22],
            flags,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        NAMES.iter().position(|n| *n == name).map(|i| self.values()[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub k: usize,
    pub temperature: f64,
    pub prefix_len: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            k: 10,
            temperature: 1.0,
            prefix_len: 3,
        }
    }
}

/// Token embedding lookup used by the cosine metric.
#[derive(Debug, Clone, Copy)]
pub enum Embeddings<'a, T> {
    /// One embedding per row (`W_E`, `[d_vocab, d_model]`).
    Rows(&'a Matrix<T>),
    /// One embedding per column (`W_U`, `[d_model, d_vocab]`).
    Columns(&'a Matrix<T>),
}

impl<'a, T: Scalar> Embeddings<'a, T> {
    /// Output-side embeddings for decoder attributions, input-side for encoder ones.
    pub fn for_direction(bundle: &'a ModelBundle<T>, direction: Direction) -> Self {
        match direction {
            Direction::DecUnembed => Embeddings::Columns(&bundle.w_u),
            Direction::EncEmbed => Embeddings::Rows(&bundle.w_e),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Embeddings::Rows(m) => m.rows(),
            Embeddings::Columns(m) => m.cols(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, token: usize) -> Vec<f64> {
        match self {
            Embeddings::Rows(m) => m.row(token).iter().map(|x| x.acc()).collect(),
            Embeddings::Columns(m) => (0..m.rows()).map(|r| m.get(r, token).acc()).collect(),
        }
    }
}

/// All 23 metrics for one attribution.
pub fn compute_all<T: Scalar>(
    attr: &LogitAttribution<T>,
    vocab: &[String],
    embeddings: &Embeddings<'_, T>,
    cfg: &MetricConfig,
) -> Result<MetricVector> {
    let scores = attr.scores_f64();
    let v = scores.len();
    if cfg.k < 2 || cfg.k > v {
        return Err(Error::InvalidInput(format!(
            "metric k must lie in [2, {v}], got {}",
            cfg.k
        )));
    }
    if vocab.len() != v || embeddings.len() != v {
        return Err(Error::InvalidInput(format!(
            "vocab ({}) and embeddings ({}) must cover all {v} scores",
            vocab.len(),
            embeddings.len()
        )));
    }
    if cfg.temperature.is_nan() || cfg.temperature <= 0.0 {
        return Err(Error::InvalidInput("temperature must be positive".into()));
    }
    let ranked = top_k(&scores, cfg.k.max(100).min(v));
    let top = |m: usize| -> Vec<f64> { ranked[..m.min(v)].iter().map(|p| p.1).collect() };
    let top_k_scores = top(cfg.k);
    let top_100 = top(100);
    let ids: Vec<usize> = ranked[..cfg.k].iter().map(|p| p.0).collect();
    let tokens: Vec<&str> = ids.iter().map(|&i| vocab[i].as_str()).collect();
    let vectors: Vec<Vec<f64>> = ids.iter().map(|&i| embeddings.vector(i)).collect();

    let mut flags = MetricFlags::default();
    let (cosine_sim, zero) = text::cosine_similarity(&vectors);
    flags.zero_norm_embedding = zero;

    let ent = |m: usize| distribution::entropy(&top(m), cfg.temperature);
    let mass_k = distribution::mass_concentration(&top_k_scores, &scores);
    flags.no_positive_mass = mass_k.is_none();
    let gini_k = distribution::gini(&top_k_scores);
    flags.gini_shifted = gini_k.shifted;
    flags.gini_degenerate = gini_k.degenerate;
    let cv_k = distribution::cv(&top_k_scores);
    flags.cv_undefined = cv_k.is_infinite();
    let ratio = distribution::maxmin_ratio(&top_k_scores);
    flags.ratio_undefined = ratio.is_infinite();
    let morph = text::morphology(&tokens, cfg.prefix_len);

    Ok(MetricVector {
        layer: attr.layer,
        feature: attr.feature,
        k: cfg.k,
        cosine_sim,
        leven_sim: text::levenshtein_similarity(&tokens),
        string_overlap: text::string_overlap(&tokens),
        entropy_10: ent(10),
        entropy_25: ent(25),
        entropy_50: ent(50),
        entropy_100: ent(100),
        entropy_full: distribution::entropy(&scores, cfg.temperature),
        mass_k: mass_k.unwrap_or(0.0),
        gini_k: gini_k.value,
        cv_k,
        maxmin_ratio_k: ratio,
        l2_norm: distribution::l2_norm(&scores),
        prefix_div: morph.prefix_div,
        suffix_div: morph.suffix_div,
        len_mean: morph.len_mean,
        len_std: morph.len_std,
        len_max: morph.len_max,
        case_consist: morph.case_consist,
        whitespace: morph.whitespace,
        mass_100: distribution::mass_concentration(&top_100, &scores).unwrap_or(0.0),
        gini_100: distribution::gini(&top_100).value,
        cv_100: distribution::cv(&top_100),
        flags,
    })
}

/// Metrics for every feature of a layer, in feature order.
pub fn layer_metrics<T: Scalar>(
    bundle: &ModelBundle<T>,
    layer: usize,
    direction: Direction,
    attr_cfg: &crate::attribution::AttributionConfig,
    cfg: &MetricConfig,
) -> Result<Vec<MetricVector>> {
    let d_sae = bundle.sae(layer)?.d_sae();
    let embeddings = Embeddings::for_direction(bundle, direction);
    let mut out = Vec::with_capacity(d_sae);
    let mut stream = crate::attribution::batch_attribute(bundle, layer, direction, 0..d_sae, attr_cfg)?;
    while let Some(block) = stream.next_block() {
        let metrics: Result<Vec<MetricVector>> = block
            .par_iter()
            .map(|a| compute_all(a, &bundle.vocab, &embeddings, cfg))
            .collect();
        out.extend(metrics?);
    }
    Ok(out)
}

/// Rank correlation over the 23 metrics of a feature population.
pub fn spearman_matrix(vectors: &[MetricVector]) -> Result<CorrelationMatrix> {
    let columns: Vec<Vec<f64>> = (0..NAMES.len())
        .map(|i| vectors.iter().map(|v| v.values()[i]).collect())
        .collect();
    spearman::spearman(&NAMES, &columns)
}

/// One row per feature: layer, feature, k, the 23 metrics, flags.
pub fn write_metrics_csv(path: &std::path::Path, vectors: &[MetricVector]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec!["layer", "feature", "k"];
    header.extend(NAMES);
    header.push("flags");
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for v in vectors {
        let mut rec = vec![v.layer.to_string(), v.feature.to_string(), v.k.to_string()];
        rec.extend(v.values().iter().map(|x| x.to_string()));
        rec.push(v.flags.labels());
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &std::path::Path) -> Result<Vec<MetricVector>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::csv(path, format!("missing column {name:?}")))
    };
    let (li, fi, ki) = (col("layer")?, col("feature")?, col("k")?);
    let metric_cols: Vec<usize> = NAMES.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let flag_col = headers.iter().position(|h| h == "flags");
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::csv(path, format!("column {}: {e}", &headers[i])))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::csv(path, format!("column {}: {e}", &headers[i])))
        };
        let mut values = [0.0; 23];
        for (slot, &c) in values.iter_mut().zip(&metric_cols) {
            *slot = num(c)?;
        }
        let flags = match flag_col {
            Some(c) => MetricFlags::parse(&rec[c])?,
            None => MetricFlags::default(),
        };
        out.push(MetricVector::from_values(int(li)?, int(fi)?, int(ki)?, values, flags));
    }
    Ok(out)
}

pub fn write_correlation_csv(path: &std::path::Path, c: &CorrelationMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec!["metric".to_string()];
    header.extend(c.names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (name, row) in c.names.iter().zip(&c.rho) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
