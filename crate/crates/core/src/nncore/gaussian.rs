//! Diagonal Gaussians, the reparametrization trick, and both analytic KL
//! divergences, in single-vector and batched (with gradients) forms.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Smallest standard deviation an encoder may emit.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::dim("gaussian std", mean.len(), std.len()));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Invalid("gaussian mean must be finite".into()));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Invalid("gaussian std must be finite and positive".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

/// `mean + std ⊙ noise`.
pub fn reparameterize(g: &DiagonalGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.dim() {
        return Err(Error::dim("reparameterization noise", g.dim(), noise.len()));
    }
    Ok(g.mean
        .iter()
        .zip(&g.std)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

fn kl_std_terms(mean: ArrayView1<f64>, std: ArrayView1<f64>) -> f64 {
    mean.iter()
        .zip(std)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}

fn kl_pair_terms(
    ma: ArrayView1<f64>,
    sa: ArrayView1<f64>,
    mb: ArrayView1<f64>,
    sb: ArrayView1<f64>,
) -> f64 {
    let mut total = 0.0;
    for i in 0..ma.len() {
        let dm = ma[i] - mb[i];
        total += (sb[i] / sa[i]).ln() + (sa[i] * sa[i] + dm * dm) / (2.0 * sb[i] * sb[i]) - 0.5;
    }
    total
}

/// `KL(g ‖ N(0, I))`.
pub fn kl_to_standard_normal(g: &DiagonalGaussian) -> f64 {
    kl_std_terms(ArrayView1::from(&g.mean), ArrayView1::from(&g.std))
}

/// `KL(a ‖ b)` for diagonal Gaussians of equal dimension.
pub fn kl_between(a: &DiagonalGaussian, b: &DiagonalGaussian) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim("kl_between", a.dim(), b.dim()));
    }
    Ok(kl_pair_terms(
        ArrayView1::from(&a.mean),
        ArrayView1::from(&a.std),
        ArrayView1::from(&b.mean),
        ArrayView1::from(&b.std),
    ))
}

/// A batch of diagonal Gaussians, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBatch {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
}

impl GaussianBatch {
    pub fn rows(&self) -> usize {
        self.mean.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }

    pub fn row(&self, i: usize) -> DiagonalGaussian {
        DiagonalGaussian {
            mean: self.mean.row(i).to_vec(),
            std: self.std.row(i).to_vec(),
        }
    }

    pub fn from_rows(rows: &[DiagonalGaussian]) -> Result<Self> {
        let d = rows.first().map(DiagonalGaussian::dim).unwrap_or(0);
        let mut mean = Array2::zeros((rows.len(), d));
        let mut std = Array2::zeros((rows.len(), d));
        for (i, g) in rows.iter().enumerate() {
            if g.dim() != d {
                return Err(Error::dim("gaussian batch row", d, g.dim()));
            }
            mean.row_mut(i).assign(&ArrayView1::from(&g.mean));
            std.row_mut(i).assign(&ArrayView1::from(&g.std));
        }
        Ok(Self { mean, std })
    }

    /// Row-wise reparametrized samples.
    pub fn sample(&self, noise: &Array2<f64>) -> Array2<f64> {
        &self.mean + &(&self.std * noise)
    }
}

/// Gradient of a scalar with respect to a [`GaussianBatch`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrad {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
}

impl GaussianGrad {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            mean: Array2::zeros((rows, dim)),
            std: Array2::zeros((rows, dim)),
        }
    }
}

/// Batch mean of `KL(q_i ‖ N(0, I))` and its gradient.
pub fn kl_standard_normal_batch(g: &GaussianBatch) -> (f64, GaussianGrad) {
    let n = g.rows().max(1) as f64;
    let loss = (0..g.rows())
        .map(|i| kl_std_terms(g.mean.row(i), g.std.row(i)))
        .sum::<f64>()
        / n;
    let grad = GaussianGrad {
        mean: &g.mean / n,
        std: g.std.mapv(|s| (s - 1.0 / s) / n),
    };
    (loss, grad)
}

/// Batch mean of `KL(a_i ‖ b_i)` with gradients for both arguments.
pub fn kl_between_batch(
    a: &GaussianBatch,
    b: &GaussianBatch,
) -> Result<(f64, GaussianGrad, GaussianGrad)> {
    if a.mean.dim() != b.mean.dim() {
        return Err(Error::dim("kl_between_batch", a.dim(), b.dim()));
    }
    let (rows, d) = a.mean.dim();
    let n = rows.max(1) as f64;
    let mut ga = GaussianGrad::zeros(rows, d);
    let mut gb = GaussianGrad::zeros(rows, d);
    let mut loss = 0.0;
    for i in 0..rows {
        loss += kl_pair_terms(a.mean.row(i), a.std.row(i), b.mean.row(i), b.std.row(i));
        for j in 0..d {
            let (ma, sa, mb, sb) = (a.mean[[i, j]], a.std[[i, j]], b.mean[[i, j]], b.std[[i, j]]);
            let vb = sb * sb;
            let dm = ma - mb;
            ga.mean[[i, j]] = dm / vb / n;
            ga.std[[i, j]] = (sa / vb - 1.0 / sa) / n;
            gb.mean[[i, j]] = -dm / vb / n;
            gb.std[[i, j]] = (1.0 / sb - (sa * sa + dm * dm) / (vb * sb)) / n;
        }
    }
    Ok((loss / n, ga, gb))
}
