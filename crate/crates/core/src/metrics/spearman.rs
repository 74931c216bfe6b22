// SPDX-License-Identifier: MIT OR Apache-2.0

//! Spearman rank correlation with average-rank ties.

/// 1-based ranks, ties sharing their average rank. `+inf` ranks above every
/// finite value.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let ma = crate::stats::mean(a);
    let mb = crate::stats::mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub rho: Vec<Vec<f64>>,
    /// Columns constant across all rows; their correlations are reported as 0.
    pub constant: Vec<String>,
}

/// Spearman correlation between the columns of `columns` (one slice per metric).
pub fn spearman(names: &[&str], columns: &[Vec<f64>]) -> crate::Result<CorrelationMatrix> {
    let n = columns.first().map_or(0, Vec::len);
    if n < 3 {
        return Err(crate::Error::InvalidInput(format!(
            "spearman correlation needs at least 3 rows, got {n}"
        )));
    }
    if columns.iter().any(|c| c.len() != n) || names.len() != columns.len() {
        return Err(crate::Error::InvalidInput("ragged metric columns".into()));
    }
    let ranks: Vec<Vec<f64>> = columns.iter().map(|c| average_ranks(c)).collect();
    let is_const: Vec<bool> = ranks.iter().map(|r| r.iter().all(|&x| x == r[0])).collect();
    let m = columns.len();
    let mut rho = vec![vec![0.0; m]; m];
    for i in 0..m {
        rho[i][i] = 1.0;
        for j in i + 1..m {
            if !is_const[i] && !is_const[j] {
                let r = pearson(&ranks[i], &ranks[j]);
                rho[i][j] = r;
                rho[j][i] = r;
            }
        }
    }
    Ok(CorrelationMatrix {
        names: names.iter().map(|s| s.to_string()).collect(),
        rho,
        constant: names
            .iter()
            .zip(&is_const)
            .filter(|(_, &c)| c)
            .map(|(s, _)| s.to_string())
            .collect(),
    })
}
