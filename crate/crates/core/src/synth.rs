// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic bundles with planted structure, plus brute-force forward-pass
//! oracles used to validate the weight-space analyses at desk scale.
//!
//! # Reproducibility
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)` (rand_chacha
//! 0.3). Uniforms are `rng.gen::<f64>()` (53-bit, `[0, 1)`); normals use
//! Box–Muller on `u1 = 1 - gen()`, `u2 = gen()`, emitting the cosine branch
//! first and the sine branch on the next draw. Tensors are filled row-major
//! in this order:
//!
//! 1. `W_U` (`d_model x d_vocab`); `W_E` independently if untied
//! 2. per layer: `W_Q` heads, `W_K` heads, `W_enc`, `b_enc`, `W_dec`, `b_dec`
//! 3. vocabulary strings (uniform draws only)
//!
//! Planted token families, decoder rows and hubs are deterministic functions
//! of the drawn weights and consume no randomness.
//!
//! Every Gaussian entry has standard deviation `1/sqrt(d_model)`. Norm
//! scales are neutral (zeros for `rms_plus_one`, ones otherwise).

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{self, apply_norm, ArchSpec, LayerWeights, ModelBundle, NormKind, SaeWeights};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::tensor::Matrix;

/// Correlation between a planted target token's unembedding and each of its
/// lexical variants.
const FAMILY_CORRELATION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSemantic {
    pub layer: usize,
    pub feature: usize,
    pub token: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedHub {
    pub layer: usize,
    pub feature: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub arch: ArchSpec,
    #[serde(default)]
    pub planted_semantic: Vec<PlantedSemantic>,
    #[serde(default)]
    pub planted_hub: Vec<PlantedHub>,
    /// Replaces `arch.norm_kind` when set.
    #[serde(default)]
    pub norm_kind: Option<NormKind>,
    /// Tokens per planted family: the target plus `family_size - 1` lexical
    /// variants whose unembeddings cluster around it. 1 disables families.
    #[serde(default = "default_family")]
    pub family_size: usize,
}

fn default_family() -> usize {
    10
}

impl SynthConfig {
    /// 4 layers, `d_model` 16, `d_vocab` 100, `d_sae` 64, 2 heads of width 8,
    /// Gemma-style norm with tied embeddings, nothing planted.
    pub fn tiny(seed: u64) -> Self {
        Self {
            seed,
            arch: ArchSpec::uniform(4, 16, 100, 2, 8, 64, NormKind::RmsPlusOne, true),
            planted_semantic: Vec::new(),
            planted_hub: Vec::new(),
            norm_kind: None,
            family_size: default_family(),
        }
    }

    /// Like [`tiny`](Self::tiny) but with identity norms, a 256-token
    /// vocabulary, 10 semantic features (gain 5) planted in layer 2 and a key
    /// hub planted in layer 1.
    pub fn planted(seed: u64) -> Self {
        let mut cfg = Self::tiny(seed);
        cfg.arch = ArchSpec::uniform(4, 16, 256, 2, 8, 64, NormKind::Identity, true);
        cfg.planted_semantic = (0..10)
            .map(|p| PlantedSemantic {
                layer: 2,
                feature: 3 + 6 * p,
                token: 5 + 25 * p,
                gain: 5.0,
            })
            .collect();
        cfg.planted_hub = vec![PlantedHub {
            layer: 1,
            feature: 7,
            gain: 50.0,
        }];
        cfg
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny(seed)),
            "planted" => Ok(Self::planted(seed)),
            other => Err(Error::Config(format!("unknown synth preset `{other}`"))),
        }
    }

    fn effective_arch(&self) -> Result<ArchSpec> {
        let mut arch = self.arch.clone().normalize()?;
        if let Some(kind) = self.norm_kind {
            arch.norm_kind = kind;
        }
        Ok(arch)
    }

    fn check(&self, arch: &ArchSpec) -> Result<()> {
        if self.family_size == 0 || self.family_size > arch.d_vocab {
            return Err(Error::Config(format!(
                "family_size {} outside 1..={}",
                self.family_size, arch.d_vocab
            )));
        }
        for p in &self.planted_semantic {
            if p.layer >= arch.n_layers || p.feature >= arch.d_sae(p.layer) {
                return Err(Error::Config(format!("planted feature {p:?} out of range")));
            }
            if p.token >= arch.d_vocab || !p.gain.is_finite() {
                return Err(Error::Config(format!("planted token/gain invalid in {p:?}")));
            }
        }
        for h in &self.planted_hub {
            if h.layer + 1 >= arch.n_layers || h.feature >= arch.d_sae(h.layer) {
                return Err(Error::Config(format!("planted hub {h:?} out of range")));
            }
            if !h.gain.is_finite() {
                return Err(Error::Config(format!("planted hub gain invalid in {h:?}")));
            }
        }
        Ok(())
    }
}

/// Seeded normal sampler (Box–Muller over ChaCha8).
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize, std: f64) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |_, _| T::from_acc(self.next_normal() * std))
    }

    fn vector<T: Scalar>(&mut self, n: usize, std: f64) -> Vec<T> {
        (0..n).map(|_| T::from_acc(self.next_normal() * std)).collect()
    }
}

fn neutral_scale<T: Scalar>(kind: NormKind, n: usize) -> Vec<T> {
    match kind {
        NormKind::RmsPlusOne => vec![T::zero(); n],
        _ => vec![T::one(); n],
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Builds a synthetic bundle. Deterministic for a fixed config.
pub fn generate<T: Scalar>(config: &SynthConfig) -> Result<ModelBundle<T>> {
    let arch = config.effective_arch()?;
    config.check(&arch)?;
    let std = 1.0 / (arch.d_model as f64).sqrt();
    let mut g = GaussianStream::new(config.seed);

    let mut w_u: Matrix<T> = g.matrix(arch.d_model, arch.d_vocab, std);
    let untied_e: Option<Matrix<T>> = (!arch.tied_embeddings).then(|| g.matrix(arch.d_vocab, arch.d_model, std));

    let mut layers = Vec::with_capacity(arch.n_layers);
    for l in 0..arch.n_layers {
        let d_sae = arch.d_sae(l);
        let w_q = (0..arch.n_heads(l))
            .map(|_| g.matrix(arch.d_model, arch.d_head, std))
            .collect();
        let w_k = (0..arch.n_heads(l))
            .map(|_| g.matrix(arch.d_model, arch.d_head, std))
            .collect();
        let sae = SaeWeights {
            w_enc: g.matrix(arch.d_model, d_sae, std),
            b_enc: g.vector(d_sae, std),
            w_dec: g.matrix(d_sae, arch.d_model, std),
            b_dec: g.vector(arch.d_model, std),
        };
        layers.push(LayerWeights {
            attn_norm: neutral_scale(arch.norm_kind, arch.d_model),
            w_q,
            w_k,
            sae,
        });
    }

    // Token families: variant columns of W_U are pulled toward the target's.
    let families: Vec<Vec<usize>> = config
        .planted_semantic
        .iter()
        .map(|p| (0..config.family_size).map(|o| (p.token + o) % arch.d_vocab).collect())
        .collect();
    // Variants keep the target's norm, so the target stays the strictly
    // best-aligned token of its family.
    let rho = FAMILY_CORRELATION;
    for fam in &families {
        let target: Vec<f64> = w_u.column(fam[0]).iter().map(|x| x.acc()).collect();
        let t_norm = target.iter().map(|x| x * x).sum::<f64>().sqrt();
        let t_hat = unit(&target);
        for &v in &fam[1..] {
            let noise: Vec<f64> = unit(&w_u.column(v).iter().map(|x| x.acc()).collect::<Vec<_>>());
            let mixed: Vec<f64> = t_hat
                .iter()
                .zip(&noise)
                .map(|(t, n)| rho * t + (1.0 - rho * rho).sqrt() * n)
                .collect();
            for (m, x) in unit(&mixed).iter().enumerate() {
                w_u.set(m, v, T::from_acc(x * t_norm));
            }
        }
    }
    let w_e = untied_e.unwrap_or_else(|| w_u.transpose());

    for p in &config.planted_semantic {
        let dir = unit(&w_u.column(p.token).iter().map(|x| x.acc()).collect::<Vec<_>>());
        let sae = &mut layers[p.layer].sae;
        for (m, d) in dir.iter().enumerate() {
            let v = T::from_acc(p.gain * d);
            sae.w_dec.set(p.feature, m, v);
            sae.w_enc.set(m, p.feature, v);
        }
    }

    for hub in &config.planted_hub {
        plant_hub(&arch, &mut layers, hub)?;
    }

    let vocab = synth_vocab(&mut g, arch.d_vocab, &families);
    let bundle = ModelBundle {
        final_norm: neutral_scale(arch.norm_kind, arch.d_model),
        arch,
        w_e,
        w_u,
        layers,
        vocab,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Points the hub's head-0 key projection at the mean query direction of the
/// other features of its layer, then multiplies the row by the gain.
fn plant_hub<T: Scalar>(arch: &ArchSpec, layers: &mut [LayerWeights<T>], hub: &PlantedHub) -> Result<()> {
    let next = &layers[hub.layer + 1];
    let (w_q, w_k) = (&next.w_q[0], &next.w_k[0]);
    let sae = &layers[hub.layer].sae;
    let mut mean_q = vec![0.0f64; arch.d_head];
    for i in (0..sae.d_sae()).filter(|&i| i != hub.feature) {
        let x = apply_norm(sae.w_dec.row(i), &next.attn_norm, arch.norm_kind, arch.norm_eps);
        for (acc, q) in mean_q.iter_mut().zip(w_q.vec_mul_acc(&x)) {
            *acc += q;
        }
    }
    let target = unit(&mean_q);

    // Minimum-norm x with x W_K = target: solve (W_K^T W_K) y = target, x = W_K y.
    let d = arch.d_head;
    let mut gram = vec![vec![0.0f64; d]; d];
    for (a, row) in gram.iter_mut().enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = (0..arch.d_model)
                .map(|m| w_k.get(m, a).acc() * w_k.get(m, b).acc())
                .sum();
        }
    }
    let y = solve(gram, target.clone()).ok_or_else(|| Error::Config("hub key projection is singular".into()))?;
    let x: Vec<f64> = (0..arch.d_model)
        .map(|m| (0..d).map(|a| w_k.get(m, a).acc() * y[a]).sum())
        .collect();

    let row: Vec<T> = x.iter().map(|v| T::from_acc(v * hub.gain)).collect();
    layers[hub.layer].sae.w_dec.row_mut(hub.feature).copy_from_slice(&row);
    Ok(())
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(r);
            for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *dst -= f * src;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn random_word(g: &mut GaussianStream) -> String {
    let len = 2 + g.below(6);
    (0..len).map(|_| LETTERS[g.below(26)] as char).collect()
}

fn title(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn variants(stem: &str) -> [String; 10] {
    [
        stem.to_string(),
        format!(" {stem}"),
        stem.to_uppercase(),
        title(stem),
        format!(" {}", title(stem)),
        format!("{stem}s"),
        format!(" {stem}s"),
        format!("{stem}ed"),
        format!(" {}", stem.to_uppercase()),
        format!("{stem}ing"),
    ]
}

fn synth_vocab(g: &mut GaussianStream, d_vocab: usize, families: &[Vec<usize>]) -> Vec<String> {
    let mut vocab: Vec<String> = (0..d_vocab)
        .map(|_| {
            let w = random_word(g);
            match g.below(4) {
                0 => format!(" {w}"),
                1 => title(&w),
                2 => format!(" {}", title(&w)),
                _ => w,
            }
        })
        .collect();
    for fam in families {
        let stem = random_word(g);
        for (slot, &tok) in fam.iter().enumerate() {
            vocab[tok] = variants(&stem)[slot % 10].clone();
        }
    }
    vocab
}

/// Generates and writes a bundle for `config` into `dir`.
pub fn write_bundle(config: &SynthConfig, dir: &Path) -> Result<()> {
    let bundle: ModelBundle<f32> = generate(config)?;
    bundle::write_bundle(&bundle, dir)
}

/// `z = ReLU(x W_enc + b_enc)`.
pub fn sae_encode<T: Scalar>(sae: &SaeWeights<T>, x: &[T]) -> Vec<T> {
    sae.w_enc
        .vec_mul_acc(x)
        .into_iter()
        .zip(&sae.b_enc)
        .map(|(v, b)| T::from_acc((v + b.acc()).max(0.0)))
        .collect()
}

/// `x_hat = z W_dec + b_dec`.
pub fn sae_decode<T: Scalar>(sae: &SaeWeights<T>, z: &[T]) -> Vec<T> {
    decode_acc(sae, z, true).into_iter().map(T::from_acc).collect()
}

fn decode_acc<T: Scalar>(sae: &SaeWeights<T>, z: &[T], bias: bool) -> Vec<f64> {
    let mut out = sae.w_dec.vec_mul_acc(z);
    if bias {
        for (o, b) in out.iter_mut().zip(&sae.b_dec) {
            *o += b.acc();
        }
    }
    out
}

fn check_pair_layer<T: Scalar>(bundle: &ModelBundle<T>, layer: usize) -> Result<()> {
    if layer + 1 >= bundle.arch.n_layers {
        return Err(Error::NoSubsequentLayer {
            layer,
            n_layers: bundle.arch.n_layers,
        });
    }
    Ok(())
}

/// Forward-pass pre-softmax score between two reconstructed residual vectors.
///
/// Decodes both activation vectors with layer `layer`'s SAE (adding `b_dec`
/// iff `include_bias`), optionally applies `attn_norm` of `layer + 1`, then
/// projects through that layer's head and returns `q . k / sqrt(d_head)`.
pub fn attention_score_oracle<T: Scalar>(
    bundle: &ModelBundle<T>,
    layer: usize,
    head: usize,
    z_query: &[T],
    z_key: &[T],
    include_bias: bool,
    use_norm: bool,
) -> Result<f64> {
    check_pair_layer(bundle, layer)?;
    let sae = &bundle.layers[layer].sae;
    let next = &bundle.layers[layer + 1];
    if head >= next.w_q.len() {
        return Err(Error::OutOfRange {
            what: "head",
            index: head,
            len: next.w_q.len(),
        });
    }
    for z in [z_query, z_key] {
        if z.len() != sae.d_sae() {
            return Err(Error::InvalidInput(format!(
                "activation length {} != d_sae {}",
                z.len(),
                sae.d_sae()
            )));
        }
    }
    let project = |z: &[T], w: &Matrix<T>| -> Vec<f64> {
        let x = decode_acc(sae, z, include_bias);
        let x: Vec<f64> = if use_norm {
            apply_norm(
                &x,
                &to_acc(&next.attn_norm),
                bundle.arch.norm_kind,
                bundle.arch.norm_eps,
            )
        } else {
            x
        };
        let mut out = vec![0.0; w.cols()];
        for (m, xm) in x.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += xm * w.get(m, c).acc();
            }
        }
        out
    };
    let q = project(z_query, &next.w_q[head]);
    let k = project(z_key, &next.w_k[head]);
    Ok(dot(&q, &k) / (bundle.arch.d_head as f64).sqrt())
}

fn to_acc<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.acc()).collect()
}

/// Per-head projections of one reconstructed residual vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    /// `q . k / sqrt(d_head)` (the token attending to itself).
    pub score: f64,
}

/// One residual vector passed through the SAE of `layer` and the heads of `layer + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub x_true: Vec<f64>,
    pub x_sae: Vec<f64>,
    pub x_error: Vec<f64>,
    pub z: Vec<f64>,
    pub heads: Vec<HeadTrace>,
}

/// Encodes `x_true`, reconstructs it and projects the reconstruction.
pub fn forward_trace<T: Scalar>(
    bundle: &ModelBundle<T>,
    layer: usize,
    x_true: &[T],
    use_norm: bool,
) -> Result<ForwardTrace> {
    check_pair_layer(bundle, layer)?;
    let sae = &bundle.layers[layer].sae;
    let next = &bundle.layers[layer + 1];
    let z = sae_encode(sae, x_true);
    let x_sae = decode_acc(sae, &z, true);
    let x_true: Vec<f64> = to_acc(x_true);
    let x_error: Vec<f64> = x_true.iter().zip(&x_sae).map(|(t, s)| t - s).collect();
    let x_in = if use_norm {
        apply_norm(
            &x_sae,
            &to_acc(&next.attn_norm),
            bundle.arch.norm_kind,
            bundle.arch.norm_eps,
        )
    } else {
        x_sae.clone()
    };
    let x_in: Vec<T> = x_in.iter().map(|&v| T::from_acc(v)).collect();
    let scale = (bundle.arch.d_head as f64).sqrt();
    let heads = next
        .w_q
        .iter()
        .zip(&next.w_k)
        .map(|(wq, wk)| {
            let q = wq.vec_mul_acc(&x_in);
            let k = wk.vec_mul_acc(&x_in);
            let score = dot(&q, &k) / scale;
            HeadTrace { q, k, score }
        })
        .collect();
    Ok(ForwardTrace {
        x_true,
        x_sae,
        x_error,
        z: to_acc(&z),
        heads,
    })
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn tiny() -> ModelBundle<f32> {
        generate(&SynthConfig::tiny(7)).unwrap()
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a: ModelBundle<f32> = generate(&SynthConfig::planted(3)).unwrap();
        let b: ModelBundle<f32> = generate(&SynthConfig::planted(3)).unwrap();
        assert_eq!(a, b);
        let c: ModelBundle<f32> = generate(&SynthConfig::planted(4)).unwrap();
        assert_ne!(a.w_u, c.w_u);
    }

    #[test]
    fn gaussian_stream_moments() {
        let mut g = GaussianStream::new(11);
        let xs: Vec<f64> = (0..20000).map(|_| g.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn rejects_out_of_range_plants() {
        let mut cfg = SynthConfig::tiny(1);
        cfg.planted_semantic.push(PlantedSemantic {
            layer: 0,
            feature: 64,
            token: 0,
            gain: 1.0,
        });
        assert!(generate::<f32>(&cfg).is_err());
        let mut cfg = SynthConfig::tiny(1);
        cfg.planted_hub.push(PlantedHub {
            layer: 3,
            feature: 0,
            gain: 1.0,
        });
        assert!(generate::<f32>(&cfg).is_err());
    }

    #[test]
    fn planted_decoder_row_follows_target_unembedding() {
        let cfg = SynthConfig::planted(5);
        let b: ModelBundle<f64> = generate(&cfg).unwrap();
        let p = &cfg.planted_semantic[0];
        let row = b.layers[p.layer].sae.w_dec.row(p.feature);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - p.gain).abs() < 1e-9);
        let col = b.w_u.column(p.token);
        let cn = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos = dot(row, &col) / (norm * cn);
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encode_zero_and_clamp() {
        let b = tiny();
        let mut sae = b.layers[0].sae.clone();
        sae.b_enc.iter_mut().for_each(|v| *v = 0.0);
        assert!(sae_encode(&sae, &[0.0; 16]).iter().all(|&z| z == 0.0));
        sae.b_enc.iter_mut().for_each(|v| *v = -1e9);
        let x: Vec<f32> = (0..16).map(|i| i as f32 - 8.0).collect();
        assert!(sae_encode(&sae, &x).iter().all(|&z| z == 0.0));
    }

    #[test]
    fn encode_decode_match_loop_oracles() {
        let b = tiny();
        let sae = &b.layers[1].sae;
        let mut g = GaussianStream::new(99);
        let x: Vec<f32> = (0..16).map(|_| g.next_normal() as f32).collect();
        let z = sae_encode(sae, &x);
        for i in 0..64 {
            let mut pre = sae.b_enc[i] as f64;
            for m in 0..16 {
                pre += x[m] as f64 * sae.w_enc.get(m, i) as f64;
            }
            let want = pre.max(0.0);
            assert!((z[i] as f64 - want).abs() <= 1e-6 * want.abs().max(1.0));
        }
        let zr: Vec<f32> = (0..64).map(|_| g.next_normal().max(0.0) as f32).collect();
        let xh = sae_decode(sae, &zr);
        for m in 0..16 {
            let mut want = sae.b_dec[m] as f64;
            for i in 0..64 {
                want += zr[i] as f64 * sae.w_dec.get(i, m) as f64;
            }
            assert!((xh[m] as f64 - want).abs() <= 1e-6 * want.abs().max(1.0));
        }
    }

    #[test]
    fn decode_zero_and_basis() {
        let b = tiny();
        let mut sae = b.layers[2].sae.clone();
        assert_eq!(sae_decode(&sae, &[0.0; 64]), sae.b_dec);
        sae.b_dec.iter_mut().for_each(|v| *v = 0.0);
        let mut z = vec![0.0f32; 64];
        z[9] = 1.0;
        assert_eq!(sae_decode(&sae, &z), sae.w_dec.row(9).to_vec());
    }

    #[test]
    fn oracle_zero_query_and_last_layer() {
        let b = tiny();
        let mut zk = vec![0.0f32; 64];
        zk[3] = 2.0;
        let s = attention_score_oracle(&b, 0, 1, &[0.0; 64], &zk, false, false).unwrap();
        assert_eq!(s, 0.0);
        assert!(matches!(
            attention_score_oracle(&b, 3, 0, &zk, &zk, false, false),
            Err(Error::NoSubsequentLayer { .. })
        ));
    }

    #[test]
    fn forward_trace_reconstruction_identity() {
        let b = tiny();
        let mut g = GaussianStream::new(5);
        let x: Vec<f32> = (0..16).map(|_| g.next_normal() as f32).collect();
        let t = forward_trace(&b, 1, &x, true).unwrap();
        for m in 0..16 {
            assert!((t.x_sae[m] + t.x_error[m] - t.x_true[m]).abs() < 1e-12);
        }
        assert_eq!(t.heads.len(), 2);
        assert_eq!(t.heads[0].q.len(), 8);
    }

    #[test]
    fn hub_key_projection_points_at_mean_query() {
        let cfg = SynthConfig::planted(5);
        let b: ModelBundle<f64> = generate(&cfg).unwrap();
        let hub = &cfg.planted_hub[0];
        let next = &b.layers[hub.layer + 1];
        let row = b.layers[hub.layer].sae.w_dec.row(hub.feature);
        let k = next.w_k[0].vec_mul_acc(row);
        let kn = k.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((kn - hub.gain).abs() < 1e-6 * hub.gain);
    }
}
