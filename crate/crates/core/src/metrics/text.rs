// SPDX-License-Identifier: MIT OR Apache-2.0

//! Metrics over the identities and spellings of a feature's top tokens.

use std::collections::{HashMap, HashSet};

/// Mean pairwise cosine similarity of the given embedding vectors.
///
/// Pairs involving a zero-norm vector contribute 0; the second element of
/// the result reports whether that happened.
pub fn cosine_similarity(vectors: &[Vec<f64>]) -> (f64, bool) {
    let k = vectors.len();
    if k < 2 {
        return (f64::NAN, false);
    }
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut zero_norm = false;
    let mut total = 0.0;
    for i in 0..k - 1 {
        for j in i + 1..k {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                zero_norm = true;
                continue;
            }
            let d: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            total += d / (norms[i] * norms[j]);
        }
    }
    (total * 2.0 / (k * (k - 1)) as f64, zero_norm)
}

/// `1 - lev(a, b) / max(|a|, |b|)` over Unicode scalar values; 1 for two empty strings.
pub fn levenshtein_pair(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

/// Mean pairwise normalized Levenshtein similarity.
pub fn levenshtein_similarity(tokens: &[&str]) -> f64 {
    let k = tokens.len();
    if k < 2 {
        return f64::NAN;
    }
    let mut total = 0.0;
    for i in 0..k - 1 {
        for j in i + 1..k {
            total += levenshtein_pair(tokens[i], tokens[j]);
        }
    }
    total * 2.0 / (k * (k - 1)) as f64
}

/// Keeps letters, digits and underscore, lowercased.
pub fn normalize_token(t: &str) -> String {
    t.chars()
        .filter(|c| c.is_alphanumeric() || *c == '_')
        .flat_map(char::to_lowercase)
        .collect()
}

/// `1 - |distinct normalized tokens| / k`.
pub fn string_overlap(tokens: &[&str]) -> f64 {
    if tokens.is_empty() {
        return f64::NAN;
    }
    let distinct: HashSet<String> = tokens.iter().map(|t| normalize_token(t)).collect();
    1.0 - distinct.len() as f64 / tokens.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseClass {
    Lower,
    Upper,
    Title,
    Mixed,
}

/// Case pattern over letters only; tokens without letters are `Mixed`.
pub fn case_class(t: &str) -> CaseClass {
    let letters: Vec<char> = t.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.is_empty() {
        return CaseClass::Mixed;
    }
    let cased: Vec<char> = letters
        .iter()
        .copied()
        .filter(|c| c.is_lowercase() || c.is_uppercase())
        .collect();
    if cased.is_empty() {
        return CaseClass::Mixed;
    }
    if cased.iter().all(|c| c.is_lowercase()) {
        CaseClass::Lower
    } else if cased.iter().all(|c| c.is_uppercase()) {
        CaseClass::Upper
    } else if cased[0].is_uppercase() && cased[1..].iter().all(|c| c.is_lowercase()) {
        CaseClass::Title
    } else {
        CaseClass::Mixed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Morphology {
    pub prefix_div: f64,
    pub suffix_div: f64,
    pub len_mean: f64,
    pub len_std: f64,
    pub len_max: f64,
    pub case_consist: f64,
    pub whitespace: f64,
}

/// Prefix/suffix diversity, character-length statistics, case consistency
/// and leading-whitespace fraction of the top tokens.
pub fn morphology(tokens: &[&str], prefix_len: usize) -> Morphology {
    let k = tokens.len() as f64;
    let chars: Vec<Vec<char>> = tokens.iter().map(|t| t.chars().collect()).collect();
    let prefixes: HashSet<String> = chars
        .iter()
        .map(|c| c[..prefix_len.min(c.len())].iter().collect())
        .collect();
    let suffixes: HashSet<String> = chars
        .iter()
        .map(|c| c[c.len().saturating_sub(prefix_len)..].iter().collect())
        .collect();
    let lens: Vec<f64> = chars.iter().map(|c| c.len() as f64).collect();
    let mut cases: HashMap<CaseClass, usize> = HashMap::new();
    for t in tokens {
        *cases.entry(case_class(t)).or_default() += 1;
    }
    let ws = tokens
        .iter()
        .filter(|t| t.chars().next().is_some_and(char::is_whitespace))
        .count();
    Morphology {
        prefix_div: prefixes.len() as f64 / k,
        suffix_div: suffixes.len() as f64 / k,
        len_mean: crate::stats::mean(&lens),
        len_std: crate::stats::std_dev(&lens),
        len_max: lens.iter().copied().fold(0.0, f64::max),
        case_consist: cases.values().copied().max().unwrap_or(0) as f64 / k,
        whitespace: ws as f64 / k,
    }
}
