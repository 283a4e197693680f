use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Similarity, larger is closer.
    Cosine,
    /// Distance, smaller is closer.
    Euclidean,
}

impl Metric {
    /// Orders two scores so that the closer one comes first.
    pub fn closer_first(self, a: f64, b: f64) -> Ordering {
        match self {
            Metric::Cosine => b.total_cmp(&a),
            Metric::Euclidean => a.total_cmp(&b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
}

/// Reference vectors in f64 with their ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorSet {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl VectorSet {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::InvalidInput(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        if let Some(first) = rows.first() {
            let dim = first.len();
            if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: bad.len(),
                });
            }
        }
        Ok(Self { ids, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

impl From<&EmbeddingMatrix> for VectorSet {
    fn from(m: &EmbeddingMatrix) -> Self {
        Self {
            ids: m.ids().to_vec(),
            rows: (0..m.len())
                .map(|i| m.row(i).iter().map(|&x| x as f64).collect())
                .collect(),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exact top-`k` by full scan. Ties are broken by ascending id.
pub fn knn(
    query: &[f64],
    reference: &VectorSet,
    k: usize,
    metric: Metric,
) -> Result<Vec<Neighbor>> {
    if reference.is_empty() {
        return Err(Error::InvalidInput("empty reference set".into()));
    }
    if query.len() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            actual: query.len(),
        });
    }
    if k == 0 || k > reference.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} must be in 1..={}",
            reference.len()
        )));
    }

    let qn = norm(query);
    if metric == Metric::Cosine && qn == 0.0 {
        return Err(Error::InvalidInput(
            "cosine similarity of a zero query".into(),
        ));
    }
    let mut scored: Vec<(f64, usize)> = reference
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s = match metric {
                Metric::Cosine => {
                    let rn = norm(r);
                    if rn == 0.0 {
                        0.0
                    } else {
                        query.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / (qn * rn)
                    }
                }
                Metric::Euclidean => query
                    .iter()
                    .zip(r)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            };
            (s, i)
        })
        .collect();

    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        metric
            .closer_first(a.0, b.0)
            .then_with(|| reference.ids[a.1].cmp(&reference.ids[b.1]))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(scored
        .into_iter()
        .map(|(score, i)| Neighbor {
            id: reference.ids[i].clone(),
            score,
        })
        .collect())
}
