//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Scores every row, sorts the whole list, keeps the first k.
pub fn full_scan(
    query: &[f64],
    ids: &[String],
    rows: &[Vec<f64>],
    k: usize,
    cosine_metric: bool,
) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = ids
        .iter()
        .zip(rows)
        .map(|(id, r)| {
            (
                id.clone(),
                if cosine_metric {
                    cosine(query, r)
                } else {
                    euclidean(query, r)
                },
            )
        })
        .collect();
    all.sort_by(|a, b| {
        let primary = if cosine_metric {
            b.1.partial_cmp(&a.1)
        } else {
            a.1.partial_cmp(&b.1)
        };
        primary.unwrap().then_with(|| a.0.cmp(&b.0))
    });
    all.truncate(k);
    all
}

/// Sample covariance trace with an n-1 denominator.
pub fn total_variance(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    (0..dim)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .sum()
}

pub fn max_orthonormality_error(components: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in components.iter().enumerate() {
        for (j, b) in components.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(a, b) - target).abs());
        }
    }
    worst
}

fn count_ngram(tokens: &[String], gram: &[String]) -> usize {
    if tokens.len() < gram.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len())
        .filter(|&i| tokens[i..i + gram.len()] == *gram)
        .count()
}

/// Corpus BLEU-4 with one reference per case, computed by direct counting.
pub fn brute_force_bleu4(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (h, r) in hyps.iter().zip(refs) {
            if h.len() < n {
                continue;
            }
            let mut seen: Vec<&[String]> = Vec::new();
            for i in 0..=h.len() - n {
                let gram = &h[i..i + n];
                total += 1;
                if seen.contains(&gram) {
                    continue;
                }
                seen.push(gram);
                matched += count_ngram(h, gram).min(count_ngram(r, gram));
            }
        }
        if matched == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * (log_sum / 4.0).exp()
}

const VOCAB: [&str; 6] = ["it", "is", "hand", "eczema", "tinea", "."];

pub fn random_sentence(rng: &mut ChaCha8Rng, min_len: usize, max_len: usize) -> Vec<String> {
    let len = rng.gen_range(min_len..=max_len);
    (0..len)
        .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_owned())
        .collect()
}

/// (hypotheses, single references) with up to 10 cases of up to 20 tokens.
/// Most hypotheses are edited copies of their reference so that higher-order
/// n-grams actually match.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let cases = rng.gen_range(1..=10);
    let refs: Vec<Vec<String>> = (0..cases).map(|_| random_sentence(rng, 1, 20)).collect();
    let hyps = refs
        .iter()
        .map(|r| {
            if rng.gen_bool(0.25) {
                return random_sentence(rng, 0, 20);
            }
            let mut h = r.clone();
            for _ in 0..rng.gen_range(0..4) {
                if h.is_empty() {
                    break;
                }
                let i = rng.gen_range(0..h.len());
                match rng.gen_range(0..3) {
                    0 => {
                        h.remove(i);
                    }
                    1 => h[i] = VOCAB[rng.gen_range(0..VOCAB.len())].to_owned(),
                    _ => h.insert(i, VOCAB[rng.gen_range(0..VOCAB.len())].to_owned()),
                }
            }
            h.truncate(20);
            h
        })
        .collect();
    (hyps, refs)
}
