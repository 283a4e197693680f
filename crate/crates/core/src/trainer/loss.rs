//! Symmetric contrastive loss over an image/text similarity matrix.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ClipLoss {
    pub loss: f64,
    /// Per-example losses `(row_ce_i + col_ce_i) / 2`; their mean is `loss`.
    pub per_example: Vec<f64>,
    pub grad_image: Vec<Vec<f64>>,
    pub grad_text: Vec<Vec<f64>>,
    pub grad_log_logit_scale: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `logits = exp(log_logit_scale) * image · textᵀ`; the loss averages the
/// row-wise and column-wise cross-entropies against the diagonal.
pub fn clip_loss(image: &[Vec<f64>], text: &[Vec<f64>], log_logit_scale: f64) -> Result<ClipLoss> {
    let n = image.len();
    if n == 0 {
        return Err(Error::InvalidInput("contrastive batch is empty".into()));
    }
    if text.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} image rows but {} text rows",
            text.len()
        )));
    }
    let dim = image[0].len();
    for row in image.iter().chain(text) {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "non-finite projection in contrastive batch".into(),
            ));
        }
    }
    if !log_logit_scale.is_finite() {
        return Err(Error::InvalidInput("non-finite logit scale".into()));
    }

    let scale = log_logit_scale.exp();
    let logits: Vec<Vec<f64>> = image
        .iter()
        .map(|a| {
            text.iter()
                .map(|b| scale * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                .collect()
        })
        .collect();

    let row_lse: Vec<f64> = logits
        .iter()
        .map(|r| log_sum_exp(r.iter().copied()))
        .collect();
    let col_lse: Vec<f64> = (0..n)
        .map(|j| log_sum_exp(logits.iter().map(move |r| r[j])))
        .collect();

    let per_example: Vec<f64> = (0..n)
        .map(|i| 0.5 * ((row_lse[i] - logits[i][i]) + (col_lse[i] - logits[i][i])))
        .collect();
    let loss = per_example.iter().sum::<f64>() / n as f64;

    // d loss / d logits = (softmax_row - I + softmax_col - I) / (2n)
    let inv = 1.0 / (2.0 * n as f64);
    let mut grad_logits = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 2.0 } else { 0.0 };
            let p_row = (logits[i][j] - row_lse[i]).exp();
            let p_col = (logits[i][j] - col_lse[j]).exp();
            grad_logits[i][j] = (p_row + p_col - target) * inv;
        }
    }

    let mut grad_image = vec![vec![0.0; dim]; n];
    let mut grad_text = vec![vec![0.0; dim]; n];
    let mut grad_log_logit_scale = 0.0;
    for i in 0..n {
        for j in 0..n {
            let g = grad_logits[i][j];
            grad_log_logit_scale += g * logits[i][j];
            let gs = g * scale;
            for k in 0..dim {
                grad_image[i][k] += gs * text[j][k];
                grad_text[j][k] += gs * image[i][k];
            }
        }
    }

    Ok(ClipLoss {
        loss,
        per_example,
        grad_image,
        grad_text,
        grad_log_logit_scale,
    })
}
