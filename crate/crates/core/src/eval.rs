//! Weighted multi-reference BLEU (deltaBLEU style) and the tokenizer shared by
//! every text-matching component.
//!
//! Each reference carries a quality weight in `[0, 1]`. A hypothesis n-gram is
//! credited with the best `weight * clipped count` among the references that
//! contain it, while the denominator charges it at the case's maximum
//! reference weight. With unit weights and a single reference per case this
//! reduces to corpus BLEU with the closest-reference-length brevity penalty.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Characters split off into their own tokens: all ASCII punctuation plus the
/// Unicode General Punctuation ranges U+2010..=U+2027 and U+2030..=U+205E.
pub fn is_token_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || ('\u{2010}'..='\u{2027}').contains(&c)
        || ('\u{2030}'..='\u{205E}').contains(&c)
}

/// NFC-normalize, lowercase, isolate punctuation characters, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    let mut spaced = String::with_capacity(lowered.len() + 8);
    for c in lowered.chars() {
        if is_token_punctuation(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

/// `1` when the hypothesis corpus is longer than the reference corpus,
/// `exp(1 - ref/hyp)` otherwise.
pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> Result<f64> {
    if hyp_len == 0 || ref_len == 0 {
        return Err(Error::InvalidInput(format!(
            "brevity penalty needs positive lengths (hyp {hyp_len}, ref {ref_len})"
        )));
    }
    if hyp_len > ref_len {
        Ok(1.0)
    } else {
        Ok((1.0 - ref_len as f64 / hyp_len as f64).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedReference {
    pub tokens: Vec<String>,
    pub weight: f64,
}

/// All references for one case.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightedReferenceSet {
    pub references: Vec<WeightedReference>,
}

impl WeightedReferenceSet {
    pub fn new(references: Vec<WeightedReference>) -> Self {
        Self { references }
    }

    /// Unit-weight references built from raw text.
    pub fn unweighted<S: AsRef<str>>(texts: &[S]) -> Self {
        Self::new(
            texts
                .iter()
                .map(|t| WeightedReference {
                    tokens: tokenize(t.as_ref()),
                    weight: 1.0,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    #[default]
    Off,
    /// Replace zero numerators by `1e-9`.
    Eps,
}

pub const SMOOTHING_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_n: 4,
            smoothing: Smoothing::Off,
        }
    }
}

/// Corpus-level score record, in the column order dBLEU, BP, Ratio, Hyp_len, Ref_len.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dbleu: f64,
    pub bp: f64,
    pub ratio: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub precisions: Vec<f64>,
}

impl EvalReport {
    pub const HEADER: &'static str = "dBLEU\tBP\tRatio\tHyp_len\tRef_len";

    pub fn table_row(&self) -> String {
        format!(
            "{:.3}\t{:.3}\t{:.3}\t{}\t{}",
            self.dbleu, self.bp, self.ratio, self.hyp_len, self.ref_len
        )
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        *counts.entry(window).or_insert(0) += 1;
    }
    counts
}

/// Reference length closest to `hyp_len`; ties go to the shorter reference.
fn effective_ref_len(hyp_len: usize, refs: &[WeightedReference]) -> usize {
    refs.iter()
        .map(|r| r.tokens.len())
        .min_by_key(|&len| (len.abs_diff(hyp_len), len))
        .unwrap_or(0)
}

/// Permutation-invariant sum: terms are added in sorted order.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

pub fn delta_bleu(
    predictions: &[Vec<String>],
    references: &[WeightedReferenceSet],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if predictions.len() != references.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} reference sets",
            predictions.len(),
            references.len()
        )));
    }
    if cfg.max_n == 0 {
        return Err(Error::Config("max_n must be at least 1".into()));
    }
    for (i, set) in references.iter().enumerate() {
        if set.references.is_empty() {
            return Err(Error::InvalidInput(format!("case {i} has no references")));
        }
    }

    let max_n = cfg.max_n;
    let mut numerators = vec![Vec::with_capacity(predictions.len()); max_n];
    let mut denominators = vec![Vec::with_capacity(predictions.len()); max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, set) in predictions.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += effective_ref_len(hyp.len(), &set.references);

        let weights: Vec<f64> = set
            .references
            .iter()
            .map(|r| {
                if r.weight.is_nan() {
                    0.0
                } else {
                    r.weight.clamp(0.0, 1.0)
                }
            })
            .collect();
        let max_weight = weights.iter().copied().fold(0.0, f64::max);

        for n in 1..=max_n {
            let hyp_counts = ngram_counts(hyp, n);
            if hyp_counts.is_empty() {
                continue;
            }
            let ref_counts: Vec<_> = set
                .references
                .iter()
                .map(|r| ngram_counts(&r.tokens, n))
                .collect();

            let mut num_terms = Vec::with_capacity(hyp_counts.len());
            let mut den_terms = Vec::with_capacity(hyp_counts.len());
            for (gram, &count) in &hyp_counts {
                let best = ref_counts
                    .iter()
                    .zip(&weights)
                    .filter_map(|(rc, &w)| rc.get(gram).map(|&rcount| w * count.min(rcount) as f64))
                    .fold(0.0, f64::max);
                num_terms.push(best);
                den_terms.push(max_weight * count as f64);
            }
            numerators[n - 1].push(sorted_sum(num_terms));
            denominators[n - 1].push(sorted_sum(den_terms));
        }
    }

    let mut precisions = Vec::with_capacity(max_n);
    for (num, den) in numerators.into_iter().zip(denominators) {
        let mut num = sorted_sum(num);
        let den = sorted_sum(den);
        if num == 0.0 && den > 0.0 && cfg.smoothing == Smoothing::Eps {
            num = SMOOTHING_EPSILON;
        }
        precisions.push(if den > 0.0 { num / den } else { 0.0 });
    }

    let (bp, ratio) = if hyp_len == 0 || ref_len == 0 {
        (
            0.0,
            if ref_len == 0 {
                0.0
            } else {
                hyp_len as f64 / ref_len as f64
            },
        )
    } else {
        (
            brevity_penalty(hyp_len, ref_len)?,
            hyp_len as f64 / ref_len as f64,
        )
    };

    let dbleu = if bp == 0.0 || precisions.iter().any(|&p| p <= 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        (100.0 * bp * log_mean.exp()).min(100.0)
    };

    Ok(EvalReport {
        dbleu,
        bp,
        ratio,
        hyp_len,
        ref_len,
        precisions,
    })
}
