//! Reconstruction and matching losses.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::layers::Decoder;
use crate::datamodel::FeatureVector;
use crate::error::{Error, Result};

/// Mean squared error between `dec(z)` and `target`.
pub fn reconstruction_loss(dec: &Decoder, z: &[f64], target: &FeatureVector) -> Result<f64> {
    if target.dim() != dec.output_dim() {
        return Err(Error::dim("reconstruction target", dec.output_dim(), target.dim()));
    }
    let pred = dec.reconstruct(z)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Batch mean of the per-row MSE, with its gradient w.r.t. `pred`.
pub fn mse_batch(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let (rows, cols) = pred.dim();
    let scale = (rows.max(1) * cols.max(1)) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / scale;
    (loss, diff * (2.0 / scale))
}

/// Dot product of the two latents.
pub fn matching_score(z_v: &[f64], z_m: &[f64]) -> Result<f64> {
    if z_v.len() != z_m.len() {
        return Err(Error::dim("matching_score", z_v.len(), z_m.len()));
    }
    Ok(z_v.iter().zip(z_m).map(|(a, b)| a * b).sum())
}

/// Indices of the `n_hard` largest scores, ties broken by lower index.
fn hardest(scores: &[(f64, usize)], n_hard: usize) -> Vec<(f64, usize)> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    sorted.truncate(n_hard);
    sorted
}

/// Mean hinge `max(0, margin − pos + neg)` over the `n_hard` largest negatives.
pub fn margin_ranking_loss(
    pos_score: f64,
    neg_scores: &[f64],
    margin: f64,
    n_hard: usize,
) -> Result<f64> {
    if neg_scores.is_empty() {
        return Err(Error::Empty("negative scores"));
    }
    if !(margin > 0.0) || n_hard == 0 {
        return Err(Error::Invalid(format!(
            "margin {margin} must be positive and n_hard {n_hard} at least 1"
        )));
    }
    let indexed: Vec<(f64, usize)> = neg_scores.iter().cloned().zip(0..).collect();
    let top = hardest(&indexed, n_hard);
    Ok(top
        .iter()
        .map(|(s, _)| (margin - pos_score + s).max(0.0))
        .sum::<f64>()
        / top.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub margin: f64,
    pub n_hard: usize,
    /// Weight of the music-to-video direction; video-to-music has weight 1.
    pub m2v_weight: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            margin: 0.05,
            n_hard: 40,
            m2v_weight: 1.0,
        }
    }
}

/// Bidirectional in-batch hinge loss over a score matrix `S[i, j] = ⟨z_v_i,
/// z_m_j⟩` whose diagonal holds the positive pairs. Pairs sharing a clip id
/// are not used as each other's negatives. Rows without any negative
/// contribute zero. Per-row losses are multiplied by `weights` when given
/// and averaged over the batch. Returns the loss and `dL/dS`.
pub fn bidirectional_matching_loss(
    scores: &Array2<f64>,
    clip_ids: &[u32],
    weights: Option<&[f64]>,
    cfg: &MatchingConfig,
) -> Result<(f64, Array2<f64>)> {
    let n = scores.nrows();
    if scores.ncols() != n || clip_ids.len() != n {
        return Err(Error::dim("matching score matrix", n, scores.ncols()));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::dim("matching weights", n, w.len()));
        }
    }
    let mut grad = Array2::zeros((n, n));
    let mut loss = 0.0;
    let batch = n.max(1) as f64;
    let direction = |transpose: bool, dir_weight: f64, grad: &mut Array2<f64>| {
        if dir_weight == 0.0 {
            return 0.0;
        }
        let at = |i: usize, j: usize| if transpose { scores[[j, i]] } else { scores[[i, j]] };
        let mut total = 0.0;
        for i in 0..n {
            let negs: Vec<(f64, usize)> = (0..n)
                .filter(|&j| clip_ids[j] != clip_ids[i])
                .map(|j| (at(i, j), j))
                .collect();
            if negs.is_empty() {
                continue;
            }
            let w = weights.map_or(1.0, |w| w[i]) * dir_weight / batch;
            let pos = at(i, i);
            let top = hardest(&negs, cfg.n_hard);
            let k = top.len() as f64;
            for (s, j) in top {
                let h = cfg.margin - pos + s;
                if h > 0.0 {
                    total += w * h / k;
                    let (pi, pj, ni, nj) = if transpose { (i, i, j, i) } else { (i, i, i, j) };
                    grad[[pi, pj]] -= w / k;
                    grad[[ni, nj]] += w / k;
                }
            }
        }
        total
    };
    loss += direction(false, 1.0, &mut grad);
    loss += direction(true, cfg.m2v_weight, &mut grad);
    Ok((loss, grad))
}
