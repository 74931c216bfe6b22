// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk bundle format and the validated in-memory weights.
//!
//! A bundle directory holds `manifest.json`, one tensor container and a
//! vocabulary file (one JSON string per line, line number = token id).
//! Tensors are addressed through logical names mapped to container keys:
//!
//! | logical name     | shape                 |
//! |------------------|-----------------------|
//! | `W_E`            | `[d_vocab, d_model]`  |
//! | `W_U`            | `[d_model, d_vocab]`  |
//! | `final_norm`     | `[d_model]`           |
//! | `attn_norm.L`    | `[d_model]`           |
//! | `W_Q.L.h`        | `[d_model, d_head]`   |
//! | `W_K.L.h`        | `[d_model, d_head]`   |
//! | `sae.L.W_enc`    | `[d_model, d_sae]`    |
//! | `sae.L.b_enc`    | `[d_sae]`             |
//! | `sae.L.W_dec`    | `[d_sae, d_model]`    |
//! | `sae.L.b_dec`    | `[d_model]`           |
//!
//! Grouped-query models map several `W_K.L.h` names to the same key.

mod arch;
mod container;
mod norm;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use arch::{ArchSpec, NormKind, DEFAULT_NORM_EPS};
pub use container::{write_container, Container};
pub use norm::apply_norm;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";
const DEFAULT_TENSOR_FILE: &str = "model.safetensors";
const DEFAULT_VOCAB_FILE: &str = "vocab.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct SaeWeights<T> {
    /// `[d_model, d_sae]`; column `i` is feature `i`'s encoder vector.
    pub w_enc: Matrix<T>,
    pub b_enc: Vec<T>,
    /// `[d_sae, d_model]`; row `i` is feature `i`'s decoder vector.
    pub w_dec: Matrix<T>,
    pub b_dec: Vec<T>,
}

impl<T: Scalar> SaeWeights<T> {
    pub fn d_sae(&self) -> usize {
        self.w_dec.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub attn_norm: Vec<T>,
    /// One `[d_model, d_head]` projection per query head.
    pub w_q: Vec<Matrix<T>>,
    /// Key projection seen by each query head (shared under grouped-query attention).
    pub w_k: Vec<Matrix<T>>,
    pub sae: SaeWeights<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub arch: ArchSpec,
    /// `[d_vocab, d_model]`.
    pub w_e: Matrix<T>,
    /// `[d_model, d_vocab]`.
    pub w_u: Matrix<T>,
    pub final_norm: Vec<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub vocab: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub arch: ArchSpec,
    pub tensors: String,
    pub vocab: String,
    #[serde(default)]
    pub tensor_names: BTreeMap<String, String>,
}

impl Manifest {
    fn key<'a>(&'a self, logical: &'a str) -> &'a str {
        self.tensor_names.get(logical).map(String::as_str).unwrap_or(logical)
    }
}

impl<T: Scalar> ModelBundle<T> {
    pub fn n_layers(&self) -> usize {
        self.arch.n_layers
    }

    pub fn sae(&self, layer: usize) -> Result<&SaeWeights<T>> {
        self.layers.get(layer).map(|l| &l.sae).ok_or(Error::OutOfRange {
            what: "layer",
            index: layer,
            len: self.arch.n_layers,
        })
    }

    /// Checks every shape, finiteness and tie invariant.
    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        let check = |name: &str, actual: [usize; 2], expected: [usize; 2]| {
            if actual != expected {
                Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    expected: expected.to_vec(),
                    actual: actual.to_vec(),
                })
            } else {
                Ok(())
            }
        };
        let check_vec = |name: &str, v: &[T], n: usize| {
            if v.len() != n {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    expected: vec![n],
                    actual: vec![v.len()],
                });
            }
            match v.iter().position(|x| !x.is_finite()) {
                Some(index) => Err(Error::NonFinite {
                    name: name.to_string(),
                    index,
                }),
                None => Ok(()),
            }
        };
        let finite = |name: &str, m: &Matrix<T>| match m.first_non_finite() {
            Some(index) => Err(Error::NonFinite {
                name: name.to_string(),
                index,
            }),
            None => Ok(()),
        };
        check("W_E", self.w_e.shape(), [a.d_vocab, a.d_model])?;
        finite("W_E", &self.w_e)?;
        check("W_U", self.w_u.shape(), [a.d_model, a.d_vocab])?;
        finite("W_U", &self.w_u)?;
        check_vec("final_norm", &self.final_norm, a.d_model)?;
        if self.layers.len() != a.n_layers {
            return Err(Error::InvalidArch(format!(
                "{} layers present, {} declared",
                self.layers.len(),
                a.n_layers
            )));
        }
        for (l, lw) in self.layers.iter().enumerate() {
            check_vec(&format!("attn_norm.{l}"), &lw.attn_norm, a.d_model)?;
            if lw.w_q.len() != a.n_heads(l) || lw.w_k.len() != a.n_heads(l) {
                return Err(Error::InvalidArch(format!(
                    "layer {l}: expected {} heads",
                    a.n_heads(l)
                )));
            }
            for (h, (q, k)) in lw.w_q.iter().zip(&lw.w_k).enumerate() {
                check(&format!("W_Q.{l}.{h}"), q.shape(), [a.d_model, a.d_head])?;
                finite(&format!("W_Q.{l}.{h}"), q)?;
                check(&format!("W_K.{l}.{h}"), k.shape(), [a.d_model, a.d_head])?;
                finite(&format!("W_K.{l}.{h}"), k)?;
            }
            let s = &lw.sae;
            let d_sae = a.d_sae(l);
            check(&format!("sae.{l}.W_enc"), s.w_enc.shape(), [a.d_model, d_sae])?;
            finite(&format!("sae.{l}.W_enc"), &s.w_enc)?;
            check_vec(&format!("sae.{l}.b_enc"), &s.b_enc, d_sae)?;
            check(&format!("sae.{l}.W_dec"), s.w_dec.shape(), [d_sae, a.d_model])?;
            finite(&format!("sae.{l}.W_dec"), &s.w_dec)?;
            check_vec(&format!("sae.{l}.b_dec"), &s.b_dec, a.d_model)?;
        }
        if self.vocab.len() != a.d_vocab {
            return Err(Error::Vocab(format!(
                "{} entries for d_vocab {}",
                self.vocab.len(),
                a.d_vocab
            )));
        }
        if a.tied_embeddings {
            for v in 0..a.d_vocab {
                for m in 0..a.d_model {
                    let (e, u) = (self.w_e.get(v, m), self.w_u.get(m, v));
                    if e != u {
                        return Err(Error::TiedMismatch {
                            row: v,
                            col: m,
                            w_e: e.acc(),
                            w_u: u.acc(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Loads and validates the bundle in directory `dir`.
pub fn load_bundle<T: Scalar>(dir: &Path) -> Result<ModelBundle<T>> {
    let manifest = read_manifest(dir)?;
    let arch = manifest.arch.clone();
    let container = Container::open(&dir.join(&manifest.tensors))?;
    let matrix = |name: &str, rows: usize, cols: usize| -> Result<Matrix<T>> {
        let data = container.read::<T>(name, manifest.key(name), &[rows, cols])?;
        Matrix::from_vec(rows, cols, data)
    };
    let vector = |name: &str, n: usize| -> Result<Vec<T>> { container.read(name, manifest.key(name), &[n]) };

    let w_e = matrix("W_E", arch.d_vocab, arch.d_model)?;
    let w_u = matrix("W_U", arch.d_model, arch.d_vocab)?;
    let final_norm = vector("final_norm", arch.d_model)?;
    let mut layers = Vec::with_capacity(arch.n_layers);
    for l in 0..arch.n_layers {
        let d_sae = arch.d_sae(l);
        let heads = arch.n_heads(l);
        let w_q = (0..heads)
            .map(|h| matrix(&format!("W_Q.{l}.{h}"), arch.d_model, arch.d_head))
            .collect::<Result<Vec<_>>>()?;
        let w_k = (0..heads)
            .map(|h| matrix(&format!("W_K.{l}.{h}"), arch.d_model, arch.d_head))
            .collect::<Result<Vec<_>>>()?;
        layers.push(LayerWeights {
            attn_norm: vector(&format!("attn_norm.{l}"), arch.d_model)?,
            w_q,
            w_k,
            sae: SaeWeights {
                w_enc: matrix(&format!("sae.{l}.W_enc"), arch.d_model, d_sae)?,
                b_enc: vector(&format!("sae.{l}.b_enc"), d_sae)?,
                w_dec: matrix(&format!("sae.{l}.W_dec"), d_sae, arch.d_model)?,
                b_dec: vector(&format!("sae.{l}.b_dec"), arch.d_model)?,
            },
        });
    }
    let vocab = read_vocab(&dir.join(&manifest.vocab))?;
    let bundle = ModelBundle {
        arch,
        w_e,
        w_u,
        final_norm,
        layers,
        vocab,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    manifest.arch = manifest.arch.normalize()?;
    Ok(manifest)
}

pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let token: String = serde_json::from_str(&line).map_err(|e| Error::Vocab(format!("line {}: {e}", i + 1)))?;
        out.push(token);
    }
    Ok(out)
}

/// Writes `bundle` into `dir` with identity tensor-name mapping and F32 storage.
pub fn write_bundle<T: Scalar>(bundle: &ModelBundle<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    let mut push_m = |name: String, m: &Matrix<T>| {
        tensors.push((
            name,
            m.shape().to_vec(),
            m.as_slice().iter().map(|v| v.narrow()).collect(),
        ));
    };
    push_m("W_E".into(), &bundle.w_e);
    push_m("W_U".into(), &bundle.w_u);
    for (l, lw) in bundle.layers.iter().enumerate() {
        for (h, q) in lw.w_q.iter().enumerate() {
            push_m(format!("W_Q.{l}.{h}"), q);
        }
        for (h, k) in lw.w_k.iter().enumerate() {
            push_m(format!("W_K.{l}.{h}"), k);
        }
        push_m(format!("sae.{l}.W_enc"), &lw.sae.w_enc);
        push_m(format!("sae.{l}.W_dec"), &lw.sae.w_dec);
    }
    let mut push_v = |name: String, v: &[T]| {
        tensors.push((name, vec![v.len()], v.iter().map(|x| x.narrow()).collect()));
    };
    push_v("final_norm".into(), &bundle.final_norm);
    for (l, lw) in bundle.layers.iter().enumerate() {
        push_v(format!("attn_norm.{l}"), &lw.attn_norm);
        push_v(format!("sae.{l}.b_enc"), &lw.sae.b_enc);
        push_v(format!("sae.{l}.b_dec"), &lw.sae.b_dec);
    }
    let tensor_names = tensors.iter().map(|(k, _, _)| (k.clone(), k.clone())).collect();
    write_container(&dir.join(DEFAULT_TENSOR_FILE), &tensors)?;

    let vocab_path = dir.join(DEFAULT_VOCAB_FILE);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?);
    for t in &bundle.vocab {
        let line = serde_json::to_string(t).map_err(|e| Error::json(&vocab_path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&vocab_path, e))?;
    }
    f.flush().map_err(|e| Error::io(&vocab_path, e))?;

    let manifest = Manifest {
        arch: bundle.arch.clone(),
        tensors: DEFAULT_TENSOR_FILE.into(),
        vocab: DEFAULT_VOCAB_FILE.into(),
        tensor_names,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
