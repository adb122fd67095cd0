use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mean focal loss over two-class logits and its gradient with respect to
/// the logits.
///
/// Per point: `−α (1 − p_t)^γ log p_t`, with `p_t` the softmax probability of
/// the true class.
pub fn focal_loss(logits: ArrayView2<f64>, labels: &[bool], alpha: f64, gamma: f64) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    if n == 0 {
        return Err(Error::invalid("focal loss over an empty batch"));
    }
    if logits.ncols() != 2 || labels.len() != n {
        return Err(Error::invalid(format!(
            "focal loss expects N×2 logits and N labels, got {:?} and {}",
            logits.dim(),
            labels.len()
        )));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("logits contain non-finite values"));
    }

    let mut grad = Array2::zeros((n, 2));
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let y = usize::from(label);
        let (a, b) = (logits[[i, 0]], logits[[i, 1]]);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        let log_pt = logits[[i, y]] - lse;
        let pt = log_pt.exp();
        let q = 1.0 - pt;
        let q_gamma = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
        total += -alpha * q_gamma * log_pt;

        // dL/dp_t, then chain through softmax: dp_t/dz_j = p_t (δ_jy − p_j).
        let q_gamma_m1 = if gamma == 0.0 {
            0.0
        } else if q == 0.0 {
            if gamma > 1.0 {
                0.0
            } else if gamma == 1.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            q.powf(gamma - 1.0)
        };
        // p_t · dL/dp_t, written to stay finite as p_t → 0.
        let pt_dl_dpt = alpha * (gamma * q_gamma_m1 * log_pt * pt - q_gamma);
        for j in 0..2 {
            let pj = (logits[[i, j]] - lse).exp();
            let d = if j == y { 1.0 - pt } else { -pj };
            grad[[i, j]] = pt_dl_dpt * d / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Mean absolute error over the masked-in rows of `M × K × 3` offset arrays,
/// with subgradient 0 at exact zeros.
pub fn l1_offset_loss(pred: ArrayView3<f64>, gt: ArrayView3<f64>, mask: &[bool]) -> Result<(f64, Array3<f64>)> {
    if pred.dim() != gt.dim() {
        return Err(Error::invalid(format!(
            "offset shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if mask.len() != pred.dim().0 {
        return Err(Error::invalid("mask length does not match the number of points"));
    }
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::invalid("every point is masked out"));
    }
    let (_, k, c) = pred.dim();
    let count = (active * k * c) as f64;
    let mut grad = Array3::zeros(pred.raw_dim());
    let mut total = 0.0;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for u in 0..k {
            for d in 0..c {
                let diff = pred[[i, u, d]] - gt[[i, u, d]];
                total += diff.abs();
                grad[[i, u, d]] = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                } / count;
            }
        }
    }
    Ok((total / count, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub segmentation: f64,
    pub keypoints: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            segmentation: 2.5,
            keypoints: 1.0,
        }
    }
}

impl LossWeights {
    pub fn combine(&self, seg_loss: f64, kp_loss: f64) -> f64 {
        self.segmentation * seg_loss + self.keypoints * kp_loss
    }
}

/// `2.5 · seg_loss + 1.0 · kp_loss`.
pub fn total_loss(seg_loss: f64, kp_loss: f64) -> f64 {
    LossWeights::default().combine(seg_loss, kp_loss)
}
