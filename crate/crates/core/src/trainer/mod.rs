//! Contrastive training of the image and label-text projection heads over
//! precomputed features.

mod gradcheck;
mod head;
mod loss;
mod model;
mod optim;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use gradcheck::{
    check_against, compare_gradients, grad_check, relative_error, GradCheckReport,
};
pub use head::{HeadActivation, ProjectionHead};
pub use loss::{clip_loss, ClipLoss};
pub use model::{
    initial_log_logit_scale, load_model, save_model, JointEmbeddingModel, ModelGradients,
    ModelHeader, MAX_LOGIT_SCALE, MODEL_FORMAT,
};
pub use optim::{AdamW, ParamGroup};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, derived_rng};
use crate::store::{EmbeddingMatrix, VariantPolicy};

pub const DEFAULT_PROJECTION_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub projection_dim: usize,
    /// Draw a random augmented variant of each image feature per step.
    pub variant_sampling: bool,
    /// Drop repeated labels within a batch so no positive is also a negative.
    pub dedup_labels_in_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            epochs: 20,
            seed: 0,
            projection_dim: DEFAULT_PROJECTION_DIM,
            variant_sampling: false,
            dedup_labels_in_batch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.projection_dim == 0 {
            return Err(Error::Config("projection_dim must be positive".into()));
        }
        Ok(())
    }
}

/// One training example: an image and the id of its label's text embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub image_id: String,
    pub label: String,
}

impl Pair {
    pub fn new(image_id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            label: label.into(),
        }
    }
}

/// Reads a CSV file with header `image_id,label`.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<Pair>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut pairs = Vec::new();
    for (i, rec) in reader.deserialize::<Pair>().enumerate() {
        // header is line 1
        let pair = rec.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[Pair]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for p in pairs {
        writer.serialize(p).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

/// Order in which pairs are visited in `epoch`. Depends only on the seed,
/// the epoch and the pair count, never on the batch size.
pub fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, &["shuffle", &epoch.to_string()]));
    order
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: JointEmbeddingModel,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub steps: u64,
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn train(
    config: &TrainConfig,
    image_feats: &EmbeddingMatrix,
    text_embeds: &EmbeddingMatrix,
    pairs: &[Pair],
) -> Result<TrainOutput> {
    config.validate()?;
    if config.batch_size > pairs.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} available pairs",
            config.batch_size,
            pairs.len()
        )));
    }
    for p in pairs {
        if !image_feats.contains(&p.image_id) {
            return Err(Error::UnknownId(p.image_id.clone()));
        }
        if !text_embeds.contains(&p.label) {
            return Err(Error::UnknownId(p.label.clone()));
        }
    }

    let mut model = JointEmbeddingModel::init(
        image_feats.dim(),
        text_embeds.dim(),
        config.projection_dim,
        config.seed,
    );
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let order = epoch_permutation(config.seed, epoch, pairs.len());
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;

        for chunk in order.chunks_exact(config.batch_size) {
            let mut members: Vec<usize> = chunk.to_vec();
            if config.dedup_labels_in_batch {
                let mut seen = HashSet::new();
                members.retain(|&i| seen.insert(pairs[i].label.as_str()));
                if members.len() < 2 {
                    continue;
                }
            }

            let mut images = Vec::with_capacity(members.len());
            let mut texts = Vec::with_capacity(members.len());
            for &i in &members {
                let pair = &pairs[i];
                let policy = if config.variant_sampling {
                    VariantPolicy::SampleVariant(derive_seed(
                        config.seed,
                        &["train-variant", &epoch.to_string(), &i.to_string()],
                    ))
                } else {
                    VariantPolicy::BaseOnly
                };
                images.push(to_f64(image_feats.get_vector(&pair.image_id, policy)?));
                texts.push(to_f64(text_embeds.get(&pair.label)?));
            }

            let (loss, grads) = model.batch_loss(&images, &texts)?;
            let mut lls = [model.log_logit_scale];
            opt.step(&mut [
                ParamGroup {
                    params: &mut model.image_head.weight,
                    grads: &grads.image_weight,
                    decay: true,
                },
                ParamGroup {
                    params: &mut model.image_head.bias,
                    grads: &grads.image_bias,
                    decay: false,
                },
                ParamGroup {
                    params: &mut model.text_head.weight,
                    grads: &grads.text_weight,
                    decay: true,
                },
                ParamGroup {
                    params: &mut model.text_head.bias,
                    grads: &grads.text_bias,
                    decay: false,
                },
                ParamGroup {
                    params: &mut lls,
                    grads: &[grads.log_logit_scale],
                    decay: false,
                },
            ]);
            model.log_logit_scale = lls[0];
            model.clamp_logit_scale();

            epoch_loss += loss;
            batches += 1;
        }

        if batches == 0 {
            return Err(Error::InvalidInput(format!(
                "epoch {epoch} produced no usable batch (label deduplication left fewer than 2 pairs)"
            )));
        }
        loss_trace.push(epoch_loss / batches as f64);
    }

    Ok(TrainOutput {
        model,
        loss_trace,
        steps: opt.steps_taken(),
    })
}

/// CSV with header `epoch,mean_loss`; epochs are numbered from 1.
pub fn write_loss_trace(path: impl AsRef<Path>, trace: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
