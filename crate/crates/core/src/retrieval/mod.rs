//! Nearest-neighbour classification in the learned joint space.
//!
//! Case images are projected with the image head and matched against either
//! projected reference images or projected label-text embeddings. Retrieval
//! uses cosine similarity in the raw joint space and Euclidean distance in
//! PCA space. Labels of all retrieved neighbours of all case images are pooled
//! and the most frequent one wins.

mod knn;
mod pca;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use knn::{knn, Metric, Neighbor, VectorSet};
pub use pca::{fit_pca, PcaModel};

use crate::corpus::Case;
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::store::{EmbeddingMatrix, VariantPolicy};
use crate::trainer::{JointEmbeddingModel, Pair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "image-image")]
    ImageImage,
    #[serde(rename = "image-text")]
    ImageText,
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image-image" | "image_image" => Ok(Modality::ImageImage),
            "image-text" | "image_text" => Ok(Modality::ImageText),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::ImageImage => "Image-Image",
            Modality::ImageText => "Image-Text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub modality: Modality,
    pub pca: bool,
    /// Upper bound; the fitted count is capped by the reference size and dim.
    pub pca_components: usize,
    pub use_augmented_variants: bool,
    /// Seed for query-side variant sampling.
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            modality: Modality::ImageImage,
            pca: false,
            pca_components: 50,
            use_augmented_variants: false,
            seed: 0,
        }
    }
}

impl RetrievalConfig {
    pub fn metric(&self) -> Metric {
        if self.pca {
            Metric::Euclidean
        } else {
            Metric::Cosine
        }
    }
}

/// Reference id -> label. Image ids map to their pair label; label-text ids
/// map to themselves.
pub fn label_map_from_pairs(pairs: &[Pair]) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for p in pairs {
        map.insert(p.image_id.clone(), p.label.clone());
        map.insert(p.label.clone(), p.label.clone());
    }
    map
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    /// Pooled neighbour counts per label.
    pub votes: BTreeMap<String, usize>,
}

/// Reference side prepared once and reused for every case.
pub struct Retriever<'a> {
    model: &'a JointEmbeddingModel,
    cfg: RetrievalConfig,
    pca: Option<PcaModel>,
    reference: VectorSet,
    labels: Vec<String>,
}

impl<'a> Retriever<'a> {
    pub fn new(
        model: &'a JointEmbeddingModel,
        reference_images: &EmbeddingMatrix,
        reference_texts: &EmbeddingMatrix,
        labels: &BTreeMap<String, String>,
        cfg: &RetrievalConfig,
    ) -> Result<Self> {
        if cfg.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let (matrix, is_image) = match cfg.modality {
            Modality::ImageImage => (reference_images, true),
            Modality::ImageText => (reference_texts, false),
        };
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut row_labels = Vec::new();
        for id in matrix.base_ids() {
            let Some(label) = labels.get(id) else {
                continue;
            };
            let raw = matrix.get(id)?;
            let projected = if is_image {
                model.project_image(raw)?
            } else {
                model.project_text(raw)?
            };
            ids.push(id.to_owned());
            rows.push(projected);
            row_labels.push(label.clone());
        }
        if ids.is_empty() {
            return Err(Error::InvalidInput(
                "reference set is empty after label lookup".into(),
            ));
        }

        let pca = if cfg.pca {
            let n = cfg.pca_components.min(rows.len()).min(model.out_dim());
            let fitted = fit_pca(&rows, n)?;
            rows = rows
                .iter()
                .map(|r| fitted.transform(r))
                .collect::<Result<_>>()?;
            Some(fitted)
        } else {
            None
        };

        Ok(Self {
            model,
            cfg: cfg.clone(),
            pca,
            reference: VectorSet::new(ids, rows)?,
            labels: row_labels,
        })
    }

    pub fn reference_len(&self) -> usize {
        self.reference.len()
    }

    pub fn pca(&self) -> Option<&PcaModel> {
        self.pca.as_ref()
    }

    fn query_vector(&self, features: &[f32]) -> Result<Vec<f64>> {
        let projected = self.model.project_image(features)?;
        match &self.pca {
            Some(p) => p.transform(&projected),
            None => Ok(projected),
        }
    }

    /// Neighbours of a single query image.
    pub fn neighbours(&self, features: &[f32]) -> Result<Vec<(Neighbor, &str)>> {
        let q = self.query_vector(features)?;
        let k = self.cfg.k.min(self.reference.len());
        let found = knn(&q, &self.reference, k, self.cfg.metric())?;
        Ok(found
            .into_iter()
            .map(|n| {
                let idx = self
                    .reference
                    .ids
                    .iter()
                    .position(|id| *id == n.id)
                    .expect("id from reference");
                (n, self.labels[idx].as_str())
            })
            .collect())
    }

    pub fn classify(&self, case: &Case, query_images: &EmbeddingMatrix) -> Result<Prediction> {
        if case.image_ids.is_empty() {
            return Err(Error::InvalidInput(format!(
                "case `{}` has no images",
                case.encounter_id
            )));
        }
        let mut pooled: Vec<(String, f64)> = Vec::new();
        for image_id in &case.image_ids {
            let policy = if self.cfg.use_augmented_variants {
                VariantPolicy::SampleVariant(derive_seed(
                    self.cfg.seed,
                    &["query-variant", &case.encounter_id, image_id],
                ))
            } else {
                VariantPolicy::BaseOnly
            };
            let features = query_images.get_vector(image_id, policy)?;
            for (n, label) in self.neighbours(features)? {
                pooled.push((label.to_owned(), n.score));
            }
        }
        Ok(pool_labels(&pooled, self.cfg.metric()))
    }
}

/// Most frequent label; ties go to the label with the closest single
/// neighbour, then to the lexicographically smallest label.
pub fn pool_labels(retrieved: &[(String, f64)], metric: Metric) -> Prediction {
    let mut stats: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (label, score) in retrieved {
        let entry = stats.entry(label.as_str()).or_insert((0, *score));
        entry.0 += 1;
        if metric.closer_first(*score, entry.1).is_lt() {
            entry.1 = *score;
        }
    }
    let winner = stats
        .iter()
        .min_by(|a, b| {
            b.1 .0
                .cmp(&a.1 .0)
                .then_with(|| metric.closer_first(a.1 .1, b.1 .1))
                .then_with(|| a.0.cmp(b.0))
        })
        .map(|(l, _)| l.to_string())
        .unwrap_or_default();
    Prediction {
        label: winner,
        votes: stats
            .into_iter()
            .map(|(l, (c, _))| (l.to_owned(), c))
            .collect(),
    }
}

pub fn classify_case(
    case: &Case,
    model: &JointEmbeddingModel,
    query_images: &EmbeddingMatrix,
    reference_images: &EmbeddingMatrix,
    reference_texts: &EmbeddingMatrix,
    labels: &BTreeMap<String, String>,
    cfg: &RetrievalConfig,
) -> Result<Prediction> {
    Retriever::new(model, reference_images, reference_texts, labels, cfg)?
        .classify(case, query_images)
}

pub fn matrix_rows(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    VectorSet::from(m).rows
}

/// Fits PCA on `embeddings` and returns every row's coordinates.
pub fn export_pca_coordinates(
    embeddings: &EmbeddingMatrix,
    n_components: usize,
) -> Result<Vec<(String, Vec<f64>)>> {
    if embeddings.len() < 2 {
        return Err(Error::InvalidInput(
            "PCA export needs at least two rows".into(),
        ));
    }
    let rows = matrix_rows(embeddings);
    if embeddings.len() < n_components {
        return Err(Error::InvalidInput(format!(
            "{} rows cannot give {n_components} components",
            embeddings.len()
        )));
    }
    let pca = fit_pca(&rows, n_components)?;
    embeddings
        .ids()
        .iter()
        .zip(&rows)
        .map(|(id, r)| Ok((id.clone(), pca.transform(r)?)))
        .collect()
}

pub fn write_coordinates_csv(path: impl AsRef<Path>, coords: &[(String, Vec<f64>)]) -> Result<()> {
    let path = path.as_ref();
    let n = coords.first().map_or(0, |c| c.1.len());
    let mut out = String::from("id");
    for i in 1..=n {
        out.push_str(&format!(",pc{i}"));
    }
    out.push('\n');
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for (id, c) in coords {
        let mut rec = vec![id.clone()];
        rec.extend(c.iter().map(|v| v.to_string()));
        writer
            .write_record(&rec)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let body = writer
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes())
        .and_then(|_| f.write_all(&body))
        .map_err(|e| Error::io(path, e))
}
