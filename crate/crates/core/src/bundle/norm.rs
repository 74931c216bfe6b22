// SPDX-License-Identifier: MIT OR Apache-2.0

use super::arch::NormKind;
use crate::scalar::Scalar;

/// Applies the model's normalization to a single residual-stream vector.
///
/// The mean square is accumulated in `f64`; `eps` keeps zero vectors finite.
pub fn apply_norm<T: Scalar>(v: &[T], scale: &[T], kind: NormKind, eps: f64) -> Vec<T> {
    debug_assert_eq!(v.len(), scale.len());
    if kind == NormKind::Identity {
        return v.to_vec();
    }
    let n = v.len().max(1) as f64;
    let ms = v.iter().map(|x| x.acc() * x.acc()).sum::<f64>() / n;
    let inv = 1.0 / (ms + eps).sqrt();
    v.iter()
        .zip(scale)
        .map(|(x, s)| {
            let g = match kind {
                NormKind::RmsPlusOne => 1.0 + s.acc(),
                _ => s.acc(),
            };
            T::from_acc(x.acc() * inv * g)
        })
        .collect()
}
