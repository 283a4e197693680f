use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal rows, by descending explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt; returns `None` for a vector that is (numerically)
/// inside the span of `basis`.
fn orthonormalize_against(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let before = dot(&v, &v).sqrt();
    // two passes keep the result orthogonal to working precision
    for _ in 0..2 {
        for b in basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let norm = dot(&v, &v).sqrt();
    if norm <= 1e-10 * before.max(1.0) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// Flip so the entry of largest magnitude (first one on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Sorted `(eigenvalue, eigenvector)` pairs of a symmetric matrix, largest first.
fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Principal axes of `rows` (mean-centered). Sample variance uses `n - 1`.
///
/// When there are fewer rows than dimensions the decomposition runs on the
/// `n x n` Gram matrix and the remaining axes are completed with zero-variance
/// directions.
pub fn fit_pca(rows: &[Vec<f64>], n_components: usize) -> Result<PcaModel> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot fit PCA on zero rows".into()));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidInput("PCA rows have unequal lengths".into()));
    }
    if n_components == 0 || n_components > n.min(dim) {
        return Err(Error::InvalidInput(format!(
            "{n_components} components requested but at most {} are feasible ({n} rows, dim {dim})",
            n.min(dim)
        )));
    }

    let mut mean = vec![0.0; dim];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut raw_axes: Vec<Vec<f64>> = Vec::with_capacity(n_components);
    if dim <= n {
        let x = DMatrix::from_fn(n, dim, |i, j| centered[i][j]);
        let cov = x.transpose() * &x;
        raw_axes.extend(
            sorted_eigen(cov)
                .into_iter()
                .map(|(_, v)| v)
                .take(n_components),
        );
    } else {
        let x = DMatrix::from_fn(n, dim, |i, j| centered[i][j]);
        let gram = &x * x.transpose();
        let pairs = sorted_eigen(gram);
        let scale = pairs
            .first()
            .map_or(0.0, |p| p.0.abs())
            .max(f64::MIN_POSITIVE);
        for (lambda, u) in pairs.into_iter().take(n_components) {
            if lambda <= 1e-12 * scale {
                break;
            }
            let axis: Vec<f64> = (0..dim)
                .map(|j| (0..n).map(|i| centered[i][j] * u[i]).sum())
                .collect();
            raw_axes.push(axis);
        }
    }

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(n_components);
    for axis in raw_axes {
        if let Some(v) = orthonormalize_against(axis, &components) {
            components.push(v);
        }
    }
    // complete with standard basis directions (zero variance in the Gram case)
    let mut e = 0;
    while components.len() < n_components && e < dim {
        let mut basis = vec![0.0; dim];
        basis[e] = 1.0;
        if let Some(v) = orthonormalize_against(basis, &components) {
            components.push(v);
        }
        e += 1;
    }

    let denom = (n.max(2) - 1) as f64;
    let mut scored: Vec<(f64, Vec<f64>)> = components
        .into_iter()
        .map(|mut c| {
            fix_sign(&mut c);
            let var = centered.iter().map(|r| dot(r, &c).powi(2)).sum::<f64>() / denom;
            (var, c)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    Ok(PcaModel {
        mean,
        explained_variance: scored.iter().map(|s| s.0).collect(),
        components: scored.into_iter().map(|s| s.1).collect(),
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(self.components.iter().map(|c| dot(&centered, c)).collect())
    }
}
