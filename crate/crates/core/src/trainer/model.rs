use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::head::ProjectionHead;
use super::loss::clip_loss;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::seed::derived_rng;

/// Upper bound on `exp(log_logit_scale)`.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

/// `ln(1 / 0.07)`.
pub fn initial_log_logit_scale() -> f64 {
    (1.0f64 / 0.07).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEmbeddingModel {
    pub image_head: ProjectionHead,
    pub text_head: ProjectionHead,
    pub log_logit_scale: f64,
}

/// Gradients laid out like [`JointEmbeddingModel::params_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub image_weight: Vec<f64>,
    pub image_bias: Vec<f64>,
    pub text_weight: Vec<f64>,
    pub text_bias: Vec<f64>,
    pub log_logit_scale: f64,
}

impl ModelGradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(
            self.image_weight.len()
                + self.image_bias.len()
                + self.text_weight.len()
                + self.text_bias.len()
                + 1,
        );
        v.extend_from_slice(&self.image_weight);
        v.extend_from_slice(&self.image_bias);
        v.extend_from_slice(&self.text_weight);
        v.extend_from_slice(&self.text_bias);
        v.push(self.log_logit_scale);
        v
    }
}

impl JointEmbeddingModel {
    pub fn init(image_dim: usize, text_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = derived_rng(seed, &["init"]);
        let image_head = ProjectionHead::init(image_dim, out_dim, &mut rng);
        let text_head = ProjectionHead::init(text_dim, out_dim, &mut rng);
        Self {
            image_head,
            text_head,
            log_logit_scale: initial_log_logit_scale(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.image_head.out_dim()
    }

    pub fn logit_scale(&self) -> f64 {
        self.log_logit_scale.exp().min(MAX_LOGIT_SCALE)
    }

    pub(crate) fn clamp_logit_scale(&mut self) {
        self.log_logit_scale = self.log_logit_scale.min(MAX_LOGIT_SCALE.ln());
    }

    pub fn param_count(&self) -> usize {
        self.image_head.param_count() + self.text_head.param_count() + 1
    }

    pub fn params_flat(&self) -> Vec<f64> {
        ModelGradients {
            image_weight: self.image_head.weight.clone(),
            image_bias: self.image_head.bias.clone(),
            text_weight: self.text_head.weight.clone(),
            text_bias: self.text_head.bias.clone(),
            log_logit_scale: self.log_logit_scale,
        }
        .flatten()
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let mut rest = params;
        for buf in [
            &mut self.image_head.weight,
            &mut self.image_head.bias,
            &mut self.text_head.weight,
            &mut self.text_head.bias,
        ] {
            let (head, tail) = rest.split_at(buf.len());
            buf.copy_from_slice(head);
            rest = tail;
        }
        self.log_logit_scale = rest[0];
        Ok(())
    }

    pub fn project_image(&self, features: &[f32]) -> Result<Vec<f64>> {
        self.image_head.project_f32(features)
    }

    pub fn project_text(&self, embedding: &[f32]) -> Result<Vec<f64>> {
        self.text_head.project_f32(embedding)
    }

    /// Contrastive loss of a batch of raw (image, text) inputs and its
    /// gradient with respect to every parameter.
    pub fn batch_loss(
        &self,
        images: &[Vec<f64>],
        texts: &[Vec<f64>],
    ) -> Result<(f64, ModelGradients)> {
        let image_act = images
            .iter()
            .map(|x| self.image_head.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let text_act = texts
            .iter()
            .map(|x| self.text_head.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let image_proj: Vec<Vec<f64>> = image_act.iter().map(|a| a.output.clone()).collect();
        let text_proj: Vec<Vec<f64>> = text_act.iter().map(|a| a.output.clone()).collect();

        let out = clip_loss(&image_proj, &text_proj, self.log_logit_scale)?;

        let mut grads = ModelGradients {
            image_weight: vec![0.0; self.image_head.weight.len()],
            image_bias: vec![0.0; self.image_head.bias.len()],
            text_weight: vec![0.0; self.text_head.weight.len()],
            text_bias: vec![0.0; self.text_head.bias.len()],
            log_logit_scale: out.grad_log_logit_scale,
        };
        for ((x, act), g) in images.iter().zip(&image_act).zip(&out.grad_image) {
            self.image_head
                .backward(x, act, g, &mut grads.image_weight, &mut grads.image_bias);
        }
        for ((x, act), g) in texts.iter().zip(&text_act).zip(&out.grad_text) {
            self.text_head
                .backward(x, act, g, &mut grads.text_weight, &mut grads.text_bias);
        }
        Ok((out.loss, grads))
    }

    pub fn loss(&self, images: &[Vec<f64>], texts: &[Vec<f64>]) -> Result<f64> {
        self.batch_loss(images, texts).map(|(l, _)| l)
    }
}

pub const MODEL_FORMAT: &str = "dermqa-joint-embedding/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub format: String,
    pub image_dim: usize,
    pub text_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
    pub param_count: usize,
    pub crc32: u32,
    pub config: Option<TrainConfig>,
}

/// Single-line JSON header, `\n`, then every parameter as little-endian f64
/// in [`JointEmbeddingModel::params_flat`] order.
pub fn save_model(
    path: impl AsRef<Path>,
    model: &JointEmbeddingModel,
    config: Option<&TrainConfig>,
) -> Result<()> {
    let path = path.as_ref();
    let params = model.params_flat();
    let mut blob = Vec::with_capacity(params.len() * 8);
    for p in &params {
        blob.extend_from_slice(&p.to_le_bytes());
    }
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        image_dim: model.image_head.in_dim(),
        text_dim: model.text_head.in_dim(),
        out_dim: model.out_dim(),
        seed: config.map_or(0, |c| c.seed),
        param_count: params.len(),
        crc32: crc32fast::hash(&blob),
        config: config.cloned(),
    };
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(&header).expect("header serializes");
    file.write_all(line.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .and_then(|_| file.write_all(&blob))
        .map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(JointEmbeddingModel, ModelHeader)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, 1, "missing model header"))?;
    let header: ModelHeader = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    if header.format != MODEL_FORMAT {
        return Err(Error::parse(
            path,
            1,
            format!("unsupported model format `{}`", header.format),
        ));
    }
    let blob = &bytes[split + 1..];
    if blob.len() != header.param_count * 8 {
        return Err(Error::InvalidInput(format!(
            "model blob has {} bytes, header implies {}",
            blob.len(),
            header.param_count * 8
        )));
    }
    let actual = crc32fast::hash(blob);
    if actual != header.crc32 {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            expected: header.crc32,
            actual,
        });
    }
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput(
            "model contains non-finite parameters".into(),
        ));
    }
    let (i, t, o) = (header.image_dim, header.text_dim, header.out_dim);
    let mut model = JointEmbeddingModel {
        image_head: ProjectionHead::from_parts(i, o, vec![0.0; i * o], vec![0.0; o])?,
        text_head: ProjectionHead::from_parts(t, o, vec![0.0; t * o], vec![0.0; o])?,
        log_logit_scale: 0.0,
    };
    model.set_params_flat(&params)?;
    Ok((model, header))
}
