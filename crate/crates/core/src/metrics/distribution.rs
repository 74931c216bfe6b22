// SPDX-License-Identifier: MIT OR Apache-2.0

//! Concentration metrics over a feature's score vector.
//!
//! Functions taking `top` expect scores already sorted descending.

/// Shannon entropy (natural log) of the softmax over `top` at temperature `t`.
pub fn entropy(top: &[f64], temperature: f64) -> f64 {
    if top.is_empty() {
        return 0.0;
    }
    let max = top.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = top.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    let h: f64 = w.iter().map(|&x| x / z).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
    h.max(0.0)
}

/// Share of the total positive mass held by the top entries. `None` when
/// no score is positive.
pub fn mass_concentration(top: &[f64], all: &[f64]) -> Option<f64> {
    let positive: f64 = all.iter().filter(|&&s| s > 0.0).sum();
    if positive <= 0.0 {
        return None;
    }
    Some(top.iter().sum::<f64>() / positive)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gini {
    pub value: f64,
    /// Scores were shifted so the minimum is 0.
    pub shifted: bool,
    /// All (shifted) scores were zero.
    pub degenerate: bool,
}

/// Gini coefficient of the top scores, shifted to a zero minimum when any is negative.
pub fn gini(top: &[f64]) -> Gini {
    let mut s: Vec<f64> = top.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    let shifted = s.first().is_some_and(|&m| m < 0.0);
    if shifted {
        let m = s[0];
        s.iter_mut().for_each(|x| *x -= m);
    }
    let total: f64 = s.iter().sum();
    if k == 0 || total == 0.0 {
        return Gini {
            value: 0.0,
            shifted,
            degenerate: true,
        };
    }
    let weighted: f64 = s.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum();
    let kf = k as f64;
    Gini {
        value: 2.0 * weighted / (kf * total) - (kf + 1.0) / kf,
        shifted,
        degenerate: false,
    }
}

/// `sigma / mu` (population sigma); `+inf` when the mean is zero.
pub fn cv(top: &[f64]) -> f64 {
    let mu = crate::stats::mean(top);
    if mu == 0.0 {
        return f64::INFINITY;
    }
    crate::stats::std_dev(top) / mu
}

/// `s_1 / s_k`; `+inf` when `s_k` is zero.
pub fn maxmin_ratio(top: &[f64]) -> f64 {
    match (top.first(), top.last()) {
        (Some(&a), Some(&b)) if b != 0.0 => a / b,
        _ => f64::INFINITY,
    }
}

/// `||s||_2 / sqrt(V)`.
pub fn l2_norm(all: &[f64]) -> f64 {
    if all.is_empty() {
        return 0.0;
    }
    (all.iter().map(|s| s * s).sum::<f64>() / all.len() as f64).sqrt()
}
