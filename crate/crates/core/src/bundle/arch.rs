// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NORM_EPS: f64 = 1e-6;

/// Normalization convention of the model family, declared in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `v / rms(v) * (1 + scale)` (Gemma-style).
    RmsPlusOne,
    /// `v / rms(v) * scale` (Llama-style).
    RmsPlain,
    Identity,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rms_plus_one" => Ok(Self::RmsPlusOne),
            "rms_plain" => Ok(Self::RmsPlain),
            "identity" => Ok(Self::Identity),
            other => Err(Error::InvalidInput(format!("unknown norm kind `{other}`"))),
        }
    }
}

/// Architecture constants of one model plus its per-layer SAE widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_vocab: usize,
    /// Query heads per layer. A bare number in the manifest applies to all layers.
    #[serde(deserialize_with = "per_layer")]
    pub n_heads: Vec<usize>,
    pub d_head: usize,
    /// SAE dictionary width per layer. A bare number applies to all layers.
    #[serde(deserialize_with = "per_layer")]
    pub d_sae: Vec<usize>,
    pub norm_kind: NormKind,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
    pub tied_embeddings: bool,
}

fn default_eps() -> f64 {
    DEFAULT_NORM_EPS
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PerLayer {
    Uniform(usize),
    List(Vec<usize>),
}

fn per_layer<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    Ok(match PerLayer::deserialize(d)? {
        // Expanded to n_layers in `ArchSpec::normalize`.
        PerLayer::Uniform(n) => vec![n],
        PerLayer::List(v) => v,
    })
}

impl ArchSpec {
    /// Uniform architecture: same head count and SAE width on every layer.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        n_layers: usize,
        d_model: usize,
        d_vocab: usize,
        n_heads: usize,
        d_head: usize,
        d_sae: usize,
        norm_kind: NormKind,
        tied_embeddings: bool,
    ) -> Self {
        Self {
            n_layers,
            d_model,
            d_vocab,
            n_heads: vec![n_heads; n_layers],
            d_head,
            d_sae: vec![d_sae; n_layers],
            norm_kind,
            norm_eps: DEFAULT_NORM_EPS,
            tied_embeddings,
        }
    }

    /// Expands single-valued per-layer fields and checks every invariant.
    pub fn normalize(mut self) -> Result<Self> {
        if self.n_layers == 0 {
            return Err(Error::InvalidArch("n_layers must be >= 1".into()));
        }
        for (name, v) in [("n_heads", &mut self.n_heads), ("d_sae", &mut self.d_sae)] {
            if v.len() == 1 && self.n_layers > 1 {
                *v = vec![v[0]; self.n_layers];
            }
            if v.len() != self.n_layers {
                return Err(Error::InvalidArch(format!(
                    "{name} has {} entries for {} layers",
                    v.len(),
                    self.n_layers
                )));
            }
            if v.contains(&0) {
                return Err(Error::InvalidArch(format!("{name} entries must be >= 1")));
            }
        }
        for (name, c) in [
            ("d_model", self.d_model),
            ("d_vocab", self.d_vocab),
            ("d_head", self.d_head),
        ] {
            if c == 0 {
                return Err(Error::InvalidArch(format!("{name} must be >= 1")));
            }
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return Err(Error::InvalidArch(format!(
                "norm_eps must be positive, got {}",
                self.norm_eps
            )));
        }
        Ok(self)
    }

    pub fn d_sae(&self, layer: usize) -> usize {
        self.d_sae[layer]
    }

    pub fn n_heads(&self, layer: usize) -> usize {
        self.n_heads[layer]
    }
}
