// SPDX-License-Identifier: MIT OR Apache-2.0

//! Out-of-context attention between SAE features.
//!
//! Decoder rows of layer `L` are normalized with the attention input norm of
//! layer `L + 1` and projected through that layer's query and key weights.
//! The scaled dot product `s_ij = q_i . k_j / sqrt(d_head)` then plays the role
//! of a pre-softmax attention score between features `i` and `j`.
//!
//! Score matrices are never materialized: rows are produced `block_rows` at a
//! time, so peak memory per head is about `2 * block_rows * d_sae * 8` bytes
//! for the score and weight buffers plus the two `d_sae x d_head` projections.

mod scan;
pub mod sweep;

use serde::{Deserialize, Serialize};

use crate::bundle::{apply_norm, ModelBundle};
use crate::scalar::dot;
use crate::tensor::Matrix;
use crate::{Error, Result, Scalar};

pub use scan::{
    post_softmax_profile, pre_softmax_summary, scan_layer, FeatureCounts, HeadScan, PostHead, PostSoftmaxProfile,
    PreHead, PreSoftmaxSummary,
};
pub use sweep::{layer_sweep, threshold_sweep, HeadRecord, LayerQkRecord, Side, SweepRow};

/// How the "mean/median across heads" counts are formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadAggregation {
    /// Average (or take the median of) each feature's per-head statistic,
    /// then count features above the threshold.
    #[default]
    FeatureStatistic,
    /// Count passing features per head, then average (or take the median
    /// of) the per-head counts.
    HeadCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QkConfig {
    pub k: usize,
    pub tau_q: f64,
    pub tau_k: f64,
    pub block_rows: usize,
    /// Apply the next layer's attention norm to each decoder row.
    pub use_norm: bool,
    pub aggregation: HeadAggregation,
}

impl Default for QkConfig {
    fn default() -> Self {
        Self {
            k: 10,
            tau_q: 0.95,
            tau_k: 0.25,
            block_rows: 512,
            use_norm: true,
            aggregation: HeadAggregation::FeatureStatistic,
        }
    }
}

pub const DEFAULT_QUERY_TAUS: [f64; 5] = [0.95, 0.90, 0.75, 0.50, 0.25];
pub const DEFAULT_KEY_TAUS: [f64; 5] = [0.50, 0.25, 0.10, 0.05, 0.01];

/// Query and key projections of every feature of `layer` under one head of `layer + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadProjection<T> {
    pub layer: usize,
    pub head: usize,
    pub d_head: usize,
    /// `[d_sae, d_head]`
    pub q: Matrix<T>,
    /// `[d_sae, d_head]`
    pub k: Matrix<T>,
}

impl<T: Scalar> HeadProjection<T> {
    pub fn d_sae(&self) -> usize {
        self.q.rows()
    }

    pub fn s_ij(&self, i: usize, j: usize) -> f64 {
        dot(self.q.row(i), self.k.row(j)) / (self.d_head as f64).sqrt()
    }

    /// Fills `out` with `s_i.`.
    pub fn score_row(&self, i: usize, out: &mut [f64]) {
        let scale = (self.d_head as f64).sqrt();
        let q = self.q.row(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(q, self.k.row(j)) / scale;
        }
    }
}

fn check_layer<T>(bundle: &ModelBundle<T>, layer: usize) -> Result<()> {
    if layer + 1 >= bundle.arch.n_layers {
        return Err(Error::NoSubsequentLayer {
            layer,
            n_layers: bundle.arch.n_layers,
        });
    }
    Ok(())
}

fn project_rows<T: Scalar>(
    bundle: &ModelBundle<T>,
    layer: usize,
    rows: &[Vec<T>],
    use_norm: bool,
) -> Vec<(Matrix<T>, Matrix<T>)> {
    let next = &bundle.layers[layer + 1];
    let inputs: Vec<Vec<T>> = rows
        .iter()
        .map(|r| {
            if use_norm {
                apply_norm(r, &next.attn_norm, bundle.arch.norm_kind, bundle.arch.norm_eps)
            } else {
                r.clone()
            }
        })
        .collect();
    let d_head = bundle.arch.d_head;
    next.w_q
        .iter()
        .zip(&next.w_k)
        .map(|(wq, wk)| {
            let mut q = Matrix::zeros(inputs.len(), d_head);
            let mut k = Matrix::zeros(inputs.len(), d_head);
            for (i, x) in inputs.iter().enumerate() {
                for (dst, v) in q.row_mut(i).iter_mut().zip(wq.vec_mul_acc(x)) {
                    *dst = T::from_acc(v);
                }
                for (dst, v) in k.row_mut(i).iter_mut().zip(wk.vec_mul_acc(x)) {
                    *dst = T::from_acc(v);
                }
            }
            (q, k)
        })
        .collect()
}

/// Projections of every decoder row of `layer` for each head of `layer + 1`.
pub fn project<T: Scalar>(bundle: &ModelBundle<T>, layer: usize, use_norm: bool) -> Result<Vec<HeadProjection<T>>> {
    check_layer(bundle, layer)?;
    let w_dec = &bundle.layers[layer].sae.w_dec;
    let rows: Vec<Vec<T>> = (0..w_dec.rows()).map(|r| w_dec.row(r).to_vec()).collect();
    Ok(project_rows(bundle, layer, &rows, use_norm)
        .into_iter()
        .enumerate()
        .map(|(head, (q, k))| HeadProjection {
            layer,
            head,
            d_head: bundle.arch.d_head,
            q,
            k,
        })
        .collect())
}

/// Per-head `(q_b, k_b)` of the decoder bias, projected without normalization.
pub fn bias_projection<T: Scalar>(bundle: &ModelBundle<T>, layer: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    check_layer(bundle, layer)?;
    let b = bundle.layers[layer].sae.b_dec.clone();
    Ok(project_rows(bundle, layer, &[b], false)
        .into_iter()
        .map(|(q, k)| {
            (
                q.row(0).iter().map(|x| x.acc()).collect(),
                k.row(0).iter().map(|x| x.acc()).collect(),
            )
        })
        .collect())
}

/// Forward-pass score reconstructed from feature scores:
/// `sum_ij z_i z_j s_ij`, plus the decoder-bias cross terms when `bias` is given.
pub fn decomposed_score<T: Scalar>(
    proj: &HeadProjection<T>,
    z_query: &[f64],
    z_key: &[f64],
    bias: Option<&(Vec<f64>, Vec<f64>)>,
) -> f64 {
    let active =
        |z: &[f64]| -> Vec<(usize, f64)> { z.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect() };
    let (aq, ak) = (active(z_query), active(z_key));
    let mut total = 0.0;
    for &(i, zi) in &aq {
        for &(j, zj) in &ak {
            total += zi * zj * proj.s_ij(i, j);
        }
    }
    if let Some((qb, kb)) = bias {
        let scale = (proj.d_head as f64).sqrt();
        let acc = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.acc()).collect() };
        for &(i, zi) in &aq {
            total += zi * dot(&acc(proj.q.row(i)), kb) / scale;
        }
        for &(j, zj) in &ak {
            total += zj * dot(qb, &acc(proj.k.row(j))) / scale;
        }
        total += dot(qb, kb) / scale;
    }
    total
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::bundle::NormKind;
    use crate::synth::{attention_score_oracle, generate, SynthConfig};

    fn identity_bundle(seed: u64) -> ModelBundle<f64> {
        let mut cfg = SynthConfig::tiny(seed);
        cfg.norm_kind = Some(NormKind::Identity);
        generate(&cfg).unwrap()
    }

    #[test]
    fn basis_and_zero_rows() {
        let mut b = identity_bundle(2);
        let row = b.layers[0].sae.w_dec.row_mut(5);
        row.iter_mut().for_each(|x| *x = 0.0);
        row[0] = 1.0;
        b.layers[0].sae.w_dec.row_mut(6).iter_mut().for_each(|x| *x = 0.0);
        let p = project(&b, 0, true).unwrap();
        for (h, hp) in p.iter().enumerate() {
            assert_eq!(hp.q.row(5), b.layers[1].w_q[h].row(0));
            assert_eq!(hp.k.row(5), b.layers[1].w_k[h].row(0));
            assert!(hp.q.row(6).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn projection_matches_loop_oracle() {
        let b: ModelBundle<f32> = generate(&SynthConfig::tiny(4)).unwrap();
        let p = project(&b, 1, true).unwrap();
        let next = &b.layers[2];
        for i in [0, 17, 63] {
            let row: Vec<f64> = b.layers[1].sae.w_dec.row(i).iter().map(|&x| x as f64).collect();
            let ms = row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64;
            let inv = 1.0 / (ms + b.arch.norm_eps).sqrt();
            let normed: Vec<f64> = row
                .iter()
                .zip(&next.attn_norm)
                .map(|(x, s)| x * inv * (1.0 + *s as f64))
                .collect();
            for h in 0..2 {
                for c in 0..b.arch.d_head {
                    let mut q = 0.0;
                    for (m, x) in normed.iter().enumerate() {
                        q += x * next.w_q[h].get(m, c) as f64;
                    }
                    let got = p[h].q.get(i, c) as f64;
                    assert!((got - q).abs() <= 1e-5 * q.abs().max(1.0), "{got} {q}");
                }
            }
        }
    }

    #[test]
    fn last_layer_has_no_heads() {
        let b = identity_bundle(1);
        assert!(matches!(project(&b, 3, true), Err(Error::NoSubsequentLayer { .. })));
    }

    #[test]
    fn scaled_dot_product() {
        let d_head = 16;
        let mut q = Matrix::<f64>::zeros(2, d_head);
        let mut k = Matrix::<f64>::zeros(2, d_head);
        q.row_mut(0).iter_mut().for_each(|x| *x = 1.0);
        k.row_mut(1).iter_mut().for_each(|x| *x = 1.0);
        q.set(1, 0, 1.0);
        k.set(0, 1, 1.0);
        let p = HeadProjection {
            layer: 0,
            head: 0,
            d_head,
            q,
            k,
        };
        assert_eq!(p.s_ij(0, 1), 4.0);
        assert_eq!(p.s_ij(1, 0), 0.0);
    }

    #[test]
    fn one_hot_scores_match_forward_oracle() {
        let b = identity_bundle(9);
        let p = project(&b, 0, true).unwrap();
        let n = b.arch.d_sae(0);
        for (i, j) in [(0, 0), (3, 40), (63, 1)] {
            let mut zq = vec![0.0; n];
            let mut zk = vec![0.0; n];
            zq[i] = 1.0;
            zk[j] = 1.0;
            for h in 0..2 {
                let want = attention_score_oracle(&b, 0, h, &zq, &zk, false, true).unwrap();
                let got = p[h].s_ij(i, j);
                assert!((got - want).abs() <= 1e-5 * want.abs().max(1e-12), "{got} {want}");
            }
        }
    }
}
