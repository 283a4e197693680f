//! Seeded synthetic data for demos and end-to-end tests.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{write_dataset, Case, ReferenceResponse};
use crate::error::{Error, Result};
use crate::experiment::{write_predictions, PredictionRecord};
use crate::seed::derived_rng;
use crate::store::EmbeddingMatrix;
use crate::trainer::{write_pairs, Pair};

pub const DEFAULT_LABELS: [&str; 3] = ["hand eczema", "psoriasis", "tinea corporis"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub labels: Vec<String>,
    pub per_class: usize,
    /// Images per class kept out of training and turned into cases.
    pub held_out_per_class: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    /// Distance of each class centroid from the origin.
    pub separation: f64,
    /// Per-coordinate standard deviation around the centroid.
    pub noise: f64,
    /// Augmented variants registered per image.
    pub variants_per_image: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
            per_class: 30,
            held_out_per_class: 15,
            image_dim: 16,
            text_dim: 12,
            separation: 4.0,
            noise: 0.5,
            variants_per_image: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    /// Every image, training and held out, plus variants.
    pub images: EmbeddingMatrix,
    /// One row per label, id = label.
    pub texts: EmbeddingMatrix,
    pub train_pairs: Vec<Pair>,
    pub held_out: Vec<Pair>,
    /// One single-image case per held-out image, answered `It is <label>.`.
    pub cases: Vec<Case>,
}

fn gaussian_vec(rng: &mut impl Rng, dim: usize, sd: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sd).expect("finite standard deviation");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

fn scaled_unit(v: Vec<f64>, len: f64) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm * len).collect()
}

pub fn separable_task(spec: &SyntheticSpec) -> SyntheticTask {
    assert!(
        spec.held_out_per_class <= spec.per_class,
        "held-out count exceeds class size"
    );
    let mut rng = derived_rng(spec.seed, &["synthetic"]);
    let mut image_rows: Vec<(String, Vec<f32>)> = Vec::new();
    let mut variant_of = std::collections::BTreeMap::new();
    let mut text_rows = Vec::new();
    let mut train_pairs = Vec::new();
    let mut held_out = Vec::new();

    for (c, label) in spec.labels.iter().enumerate() {
        let centroid = scaled_unit(gaussian_vec(&mut rng, spec.image_dim, 1.0), spec.separation);
        let text = gaussian_vec(&mut rng, spec.text_dim, 1.0);
        text_rows.push((
            label.clone(),
            text.iter().map(|&x| x as f32).collect::<Vec<f32>>(),
        ));
        for i in 0..spec.per_class {
            let id = format!("IMG_C{c}_{i:03}.jpg");
            let noise = gaussian_vec(&mut rng, spec.image_dim, spec.noise);
            let base: Vec<f64> = centroid.iter().zip(&noise).map(|(a, b)| a + b).collect();
            for v in 0..spec.variants_per_image {
                let jitter = gaussian_vec(&mut rng, spec.image_dim, spec.noise * 0.2);
                let vid = format!("{id}#aug{v}");
                image_rows.push((
                    vid.clone(),
                    base.iter()
                        .zip(&jitter)
                        .map(|(a, b)| (a + b) as f32)
                        .collect(),
                ));
                variant_of.insert(vid, id.clone());
            }
            image_rows.push((id.clone(), base.iter().map(|&x| x as f32).collect()));
            let pair = Pair::new(id, label.clone());
            if i < spec.held_out_per_class {
                held_out.push(pair);
            } else {
                train_pairs.push(pair);
            }
        }
    }
    image_rows.sort_by(|a, b| a.0.cmp(&b.0));

    let (ids, rows): (Vec<String>, Vec<Vec<f32>>) = image_rows.into_iter().unzip();
    let images = EmbeddingMatrix::with_variants(ids, spec.image_dim, rows.concat(), variant_of)
        .expect("synthetic images are well formed");
    let texts = EmbeddingMatrix::from_rows(spec.text_dim, text_rows)
        .expect("synthetic texts are well formed");
    let cases = held_out
        .iter()
        .enumerate()
        .map(|(i, p)| Case {
            encounter_id: format!("SYN{i:04}"),
            image_ids: vec![p.image_id.clone()],
            query_text: "Itchy patch for two weeks, what is it?".into(),
            language: "en".into(),
            responses: vec![ReferenceResponse::new(format!("It is {}.", p.label), 0, 0)],
            gold_label: Some(p.label.clone()),
        })
        .collect();
    SyntheticTask {
        images,
        texts,
        train_pairs,
        held_out,
        cases,
    }
}

/// Writes a complete experiment directory for `spec`: embedding manifests,
/// `pairs.csv`, `cases.jsonl` (validation split), `predictions.jsonl` holding
/// the gold labels, and `experiment.json`. Returns the config path.
pub fn write_experiment_fixture(dir: impl AsRef<Path>, spec: &SyntheticSpec) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let task = separable_task(spec);
    task.images.export(dir.join("images.json"))?;
    task.texts.export(dir.join("texts.json"))?;
    write_pairs(dir.join("pairs.csv"), &task.train_pairs)?;
    write_dataset(dir.join("cases.jsonl"), &task.cases)?;
    let preds: Vec<PredictionRecord> = task
        .cases
        .iter()
        .map(|c| PredictionRecord::new(&c.encounter_id, c.gold_label.clone().unwrap_or_default()))
        .collect();
    write_predictions(dir.join("predictions.jsonl"), &preds)?;
    let config = serde_json::json!({
        "seed": spec.seed,
        "output_dir": "out",
        "corpus": { "eval": "cases.jsonl", "eval_split": "validation", "pairs": "pairs.csv" },
        "embeddings": { "images": "images.json", "texts": "texts.json" },
        "train": { "batch_size": 9, "learning_rate": 0.01, "epochs": 20, "projection_dim": 8 },
        "retrieval": { "k": 5, "pca_components": 4 },
        "ablation": { "batch_sizes": [4, 8], "predictions": ["predictions.jsonl"] }
    });
    let path = dir.join("experiment.json");
    let text = serde_json::to_string_pretty(&config).expect("config serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

const WORDS: [&str; 16] = [
    "red", "itchy", "patch", "palm", "scaly", "ring", "spots", "weeks", "dry", "skin", "bump",
    "thigh", "rash", "blister", "crack", "peeling",
];

/// Random but well-formed cases, e.g. for file round-trips.
pub fn random_cases(n: usize, seed: u64) -> Vec<Case> {
    let mut rng = derived_rng(seed, &["random-cases"]);
    (0..n)
        .map(|i| {
            let sentence = |len: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                (0..len)
                    .map(|_| *WORDS.choose(rng).expect("non-empty"))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let n_images = rng.gen_range(1..=4);
            let n_responses = rng.gen_range(1..=5);
            let query_len = rng.gen_range(0..12);
            Case {
                encounter_id: format!("ENC{i:05}"),
                image_ids: (0..n_images)
                    .map(|k| format!("IMG_ENC{i:05}_{k:05}.jpg"))
                    .collect(),
                query_text: sentence(query_len, &mut rng),
                language: "en".into(),
                responses: (0..n_responses)
                    .map(|_| {
                        let len = rng.gen_range(1..8);
                        ReferenceResponse::new(
                            sentence(len, &mut rng),
                            rng.gen_range(0..4),
                            rng.gen_range(0..3),
                        )
                    })
                    .collect(),
                gold_label: rng.gen_bool(0.5).then(|| {
                    DEFAULT_LABELS
                        .choose(&mut rng)
                        .expect("non-empty")
                        .to_string()
                }),
            }
        })
        .collect()
}
