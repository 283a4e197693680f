//! Central finite-difference verification of analytic gradients.

use super::model::JointEmbeddingModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// `|fd - analytic| / max(1e-12, |fd| + |analytic|)` per parameter.
    pub rel_errors: Vec<f64>,
    pub finite_difference: Vec<f64>,
}

pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / (fd.abs() + analytic.abs()).max(1e-12)
}

/// Compares `analytic` with central differences of `loss` around `params`.
pub fn compare_gradients<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidInput(format!(
            "eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: analytic.len(),
        });
    }
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite analytic gradient at index {i}"
        )));
    }

    let mut probe = params.to_vec();
    let mut rel_errors = Vec::with_capacity(params.len());
    let mut finite_difference = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = loss(&probe)?;
        probe[i] = orig - eps;
        let down = loss(&probe)?;
        probe[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        if !fd.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite finite difference at index {i}"
            )));
        }
        finite_difference.push(fd);
        rel_errors.push(relative_error(fd, analytic[i]));
    }
    let (worst_index, max_rel_error) =
        rel_errors
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, 0.0),
                |best, (i, e)| if e > best.1 { (i, e) } else { best },
            );
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        rel_errors,
        finite_difference,
    })
}

/// Checks [`JointEmbeddingModel::batch_loss`] end to end (projection heads,
/// normalization, contrastive loss and the logit scale) on a fixed batch.
pub fn grad_check(
    model: &JointEmbeddingModel,
    images: &[Vec<f64>],
    texts: &[Vec<f64>],
    eps: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.batch_loss(images, texts)?;
    let analytic = grads.flatten();
    check_against(model, images, texts, &analytic, eps)
}

/// Like [`grad_check`] but with a caller-supplied analytic gradient, for
/// fault injection.
pub fn check_against(
    model: &JointEmbeddingModel,
    images: &[Vec<f64>],
    texts: &[Vec<f64>],
    analytic: &[f64],
    eps: f64,
) -> Result<GradCheckReport> {
    let params = model.params_flat();
    let mut scratch = model.clone();
    compare_gradients(
        |p| {
            scratch.set_params_flat(p)?;
            scratch.loss(images, texts)
        },
        &params,
        analytic,
        eps,
    )
}
