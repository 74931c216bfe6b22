// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weight-space logit attribution of SAE features.
//!
//! * decoder → unembedding: `FinalNorm(W_dec[i]) · W_U`, the tokens a feature
//!   promotes;
//! * encoder → embedding: `W_enc[:, i] · W_Eᵀ`, the input tokens that excite it.
//!
//! Every score is an `f64` dot product accumulated over `d_model` in
//! ascending order and then narrowed to the bundle scalar, so per-feature and
//! blocked computations agree bitwise.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{apply_norm, ModelBundle, NormKind};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::topk::top_k;

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_BLOCK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "dec")]
    DecUnembed,
    #[serde(rename = "enc")]
    EncEmbed,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::DecUnembed, Direction::EncEmbed];

    pub fn tag(self) -> &'static str {
        match self {
            Direction::DecUnembed => "dec",
            Direction::EncEmbed => "enc",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dec" | "dec_unembed" => Ok(Direction::DecUnembed),
            "enc" | "enc_embed" => Ok(Direction::EncEmbed),
            other => Err(Error::InvalidInput(format!("unknown direction `{other}`"))),
        }
    }
}

/// How the decoder row is normalized before the unembedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecNorm {
    /// Normalization with the learned final-norm scale.
    #[default]
    Full,
    /// Normalization only; the scale is treated as neutral.
    NoScale,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionConfig {
    pub top_k: usize,
    pub block_size: usize,
    pub dec_norm: DecNorm,
    /// Normalize encoder columns with the next layer's attention norm
    /// (the final norm on the last layer). Off by default.
    pub enc_norm: bool,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            block_size: DEFAULT_BLOCK,
            dec_norm: DecNorm::Full,
            enc_norm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitAttribution<T> {
    pub layer: usize,
    pub feature: usize,
    pub direction: Direction,
    /// One score per vocabulary entry.
    pub scores: Vec<T>,
    /// Best `(token id, score)` pairs, score descending then id ascending.
    pub top_k: Vec<(usize, f64)>,
}

impl<T: Scalar> LogitAttribution<T> {
    fn new(layer: usize, feature: usize, direction: Direction, acc: Vec<f64>, k: usize) -> Self {
        let scores: Vec<T> = acc.into_iter().map(T::from_acc).collect();
        let wide: Vec<f64> = scores.iter().map(|s| s.acc()).collect();
        let top_k = top_k(&wide, k);
        Self {
            layer,
            feature,
            direction,
            scores,
            top_k,
        }
    }

    pub fn scores_f64(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.acc()).collect()
    }

    pub fn top_ids(&self) -> Vec<usize> {
        self.top_k.iter().map(|x| x.0).collect()
    }
}

fn check_feature<T: Scalar>(bundle: &ModelBundle<T>, layer: usize, feature: usize) -> Result<()> {
    let sae = bundle.sae(layer)?;
    if feature >= sae.d_sae() {
        return Err(Error::OutOfRange {
            what: "feature",
            index: feature,
            len: sae.d_sae(),
        });
    }
    Ok(())
}

/// The vector that gets projected onto the vocabulary for one feature.
fn source_vector<T: Scalar>(
    bundle: &ModelBundle<T>,
    layer: usize,
    feature: usize,
    direction: Direction,
    cfg: &AttributionConfig,
) -> Vec<T> {
    let arch = &bundle.arch;
    match direction {
        Direction::DecUnembed => {
            let row = bundle.layers[layer].sae.w_dec.row(feature);
            match cfg.dec_norm {
                DecNorm::Full => apply_norm(row, &bundle.final_norm, arch.norm_kind, arch.norm_eps),
                DecNorm::NoScale => {
                    let neutral = match arch.norm_kind {
                        NormKind::RmsPlusOne => T::zero(),
                        _ => T::one(),
                    };
                    let scale = vec![neutral; arch.d_model];
                    apply_norm(row, &scale, arch.norm_kind, arch.norm_eps)
                }
                DecNorm::None => row.to_vec(),
            }
        }
        Direction::EncEmbed => {
            let col = bundle.layers[layer].sae.w_enc.column(feature);
            if cfg.enc_norm {
                let scale = bundle
                    .layers
                    .get(layer + 1)
                    .map(|l| l.attn_norm.as_slice())
                    .unwrap_or(&bundle.final_norm);
                apply_norm(&col, scale, arch.norm_kind, arch.norm_eps)
            } else {
                col
            }
        }
    }
}

/// Scores for a block of source vectors: one matrix product against `W_U`
/// (decoder side) or `W_Eᵀ` (encoder side).
fn block_scores<T: Scalar>(bundle: &ModelBundle<T>, direction: Direction, sources: &[Vec<T>]) -> Vec<Vec<f64>> {
    match direction {
        Direction::DecUnembed => sources.par_iter().map(|x| bundle.w_u.vec_mul_acc(x)).collect(),
        Direction::EncEmbed => sources.par_iter().map(|c| bundle.w_e.mul_vec_acc(c)).collect(),
    }
}

pub fn attribute<T: Scalar>(
    bundle: &ModelBundle<T>,
    layer: usize,
    feature: usize,
    direction: Direction,
    cfg: &AttributionConfig,
) -> Result<LogitAttribution<T>> {
    check_feature(bundle, layer, feature)?;
    let x = source_vector(bundle, layer, feature, direction, cfg);
    let acc = match direction {
        Direction::DecUnembed => bundle.w_u.vec_mul_acc(&x),
        Direction::EncEmbed => (0..bundle.arch.d_vocab).map(|v| dot(bundle.w_e.row(v), &x)).collect(),
    };
    Ok(LogitAttribution::new(layer, feature, direction, acc, cfg.top_k))
}

/// Logit lens on a decoder row.
pub fn dec_unembed<T: Scalar>(
    bundle: &ModelBundle<T>,
    layer: usize,
    feature: usize,
    cfg: &AttributionConfig,
) -> Result<LogitAttribution<T>> {
    attribute(bundle, layer, feature, Direction::DecUnembed, cfg)
}

/// Encoder column against every token embedding.
pub fn enc_embed<T: Scalar>(
    bundle: &ModelBundle<T>,
    layer: usize,
    feature: usize,
    cfg: &AttributionConfig,
) -> Result<LogitAttribution<T>> {
    attribute(bundle, layer, feature, Direction::EncEmbed, cfg)
}

/// Lazily computed attributions for a feature range, `block_size` features at a time.
pub struct AttributionStream<'a, T> {
    bundle: &'a ModelBundle<T>,
    layer: usize,
    direction: Direction,
    cfg: AttributionConfig,
    next: usize,
    end: usize,
    ready: std::vec::IntoIter<LogitAttribution<T>>,
}

impl<T: Scalar> AttributionStream<'_, T> {
    /// The remainder of the current block, or the next full block.
    pub fn next_block(&mut self) -> Option<Vec<LogitAttribution<T>>> {
        let first = self.next()?;
        let mut block = vec![first];
        block.extend(std::mem::take(&mut self.ready));
        Some(block)
    }
}

impl<T: Scalar> Iterator for AttributionStream<'_, T> {
    type Item = LogitAttribution<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(a) = self.ready.next() {
            return Some(a);
        }
        if self.next >= self.end {
            return None;
        }
        let stop = (self.next + self.cfg.block_size.max(1)).min(self.end);
        let features: Vec<usize> = (self.next..stop).collect();
        self.next = stop;
        let sources: Vec<Vec<T>> = features
            .iter()
            .map(|&f| source_vector(self.bundle, self.layer, f, self.direction, &self.cfg))
            .collect();
        let scores = block_scores(self.bundle, self.direction, &sources);
        let k = self.cfg.top_k;
        let (layer, direction) = (self.layer, self.direction);
        let block: Vec<LogitAttribution<T>> = features
            .into_par_iter()
            .zip(scores)
            .map(|(f, acc)| LogitAttribution::new(layer, f, direction, acc, k))
            .collect();
        self.ready = block.into_iter();
        self.ready.next()
    }
}

pub fn batch_attribute<'a, T: Scalar>(
    bundle: &'a ModelBundle<T>,
    layer: usize,
    direction: Direction,
    features: Range<usize>,
    cfg: &AttributionConfig,
) -> Result<AttributionStream<'a, T>> {
    let d_sae = bundle.sae(layer)?.d_sae();
    if features.end > d_sae || features.start > features.end {
        return Err(Error::OutOfRange {
            what: "feature",
            index: features.end,
            len: d_sae,
        });
    }
    Ok(AttributionStream {
        bundle,
        layer,
        direction,
        cfg: cfg.clone(),
        next: features.start,
        end: features.end,
        ready: Vec::new().into_iter(),
    })
}
