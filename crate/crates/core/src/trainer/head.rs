use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map followed by L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    in_dim: usize,
    out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

/// Forward-pass values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadActivation {
    pub output: Vec<f64>,
    norm: f64,
}

impl ProjectionHead {
    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidInput(
                "projection dims must be positive".into(),
            ));
        }
        if weight.len() != in_dim * out_dim {
            return Err(Error::DimensionMismatch {
                expected: in_dim * out_dim,
                actual: weight.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::DimensionMismatch {
                expected: out_dim,
                actual: bias.len(),
            });
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "projection parameters must be finite".into(),
            ));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    /// Weights uniform in `±1/sqrt(in_dim)`, zero bias.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn affine(&self, v: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    pub fn forward(&self, v: &[f64]) -> Result<HeadActivation> {
        if v.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "projection input must be finite".into(),
            ));
        }
        let mut z = self.affine(v);
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidInput(
                "projection is degenerate (zero vector)".into(),
            ));
        }
        z.iter_mut().for_each(|x| *x /= norm);
        Ok(HeadActivation { output: z, norm })
    }

    /// `normalize(W v + b)`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.forward(v).map(|a| a.output)
    }

    pub fn project_f32(&self, v: &[f32]) -> Result<Vec<f64>> {
        let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        self.project(&v)
    }

    /// Accumulates parameter gradients for one sample given `d loss / d output`.
    pub(crate) fn backward(
        &self,
        input: &[f64],
        act: &HeadActivation,
        grad_output: &[f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
    ) {
        let u = &act.output;
        let radial: f64 = u.iter().zip(grad_output).map(|(a, b)| a * b).sum();
        for o in 0..self.out_dim {
            let dz = (grad_output[o] - u[o] * radial) / act.norm;
            grad_bias[o] += dz;
            let row = &mut grad_weight[o * self.in_dim..(o + 1) * self.in_dim];
            for (g, x) in row.iter_mut().zip(input) {
                *g += dz * x;
            }
        }
    }
}
