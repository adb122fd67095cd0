//! Mean-shift mode seeking over 3D keypoint candidates.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::{Error, Result};

/// Above this many candidates, mean-shift is started from a strided subset.
pub const MAX_SEEDS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// Uniform weight within one bandwidth.
    Flat,
    /// `exp(−d² / 2h²)` over all candidates.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanShiftConfig {
    pub bandwidth: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub kernel: Kernel,
}

impl MeanShiftConfig {
    /// Flat kernel with bandwidth `0.05 · diameter`.
    pub fn for_diameter(diameter: f64) -> Self {
        let bandwidth = 0.05 * diameter;
        Self {
            bandwidth,
            max_iters: 100,
            tol: 1e-4 * bandwidth,
            kernel: Kernel::Flat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::invalid(format!("invalid mean-shift config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub point: Vec3,
    /// Candidates within one bandwidth of `point`.
    pub support: usize,
    pub iterations_used: usize,
}

/// Returns the mode with the largest support.
///
/// Mean-shift runs from every candidate (or a strided subset above
/// [`MAX_SEEDS`]); converged points closer than half a bandwidth to an earlier
/// mode are merged into it. Support ties go to the mode found from the lowest
/// seed.
pub fn mean_shift_mode(candidates: &[Vec3], config: &MeanShiftConfig) -> Result<ModeEstimate> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(Error::invalid("mean shift needs at least one candidate"));
    }
    if candidates.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("candidates contain non-finite coordinates"));
    }

    let n = candidates.len();
    let seeds: Vec<usize> = if n > MAX_SEEDS {
        (0..MAX_SEEDS).map(|i| i * n / MAX_SEEDS).collect()
    } else {
        (0..n).collect()
    };

    let mut modes: Vec<(Vec3, usize)> = Vec::new();
    for &s in &seeds {
        let (point, iters) = climb(candidates, candidates[s], config);
        let merged = modes.iter().any(|(m, _)| (m - point).norm() < 0.5 * config.bandwidth);
        if !merged {
            modes.push((point, iters));
        }
    }

    let mut best: Option<ModeEstimate> = None;
    for (point, iterations_used) in modes {
        let support = count_within(candidates, &point, config.bandwidth);
        if best.map_or(true, |b| support > b.support) {
            best = Some(ModeEstimate {
                point,
                support,
                iterations_used,
            });
        }
    }
    // At least one seed exists, so at least one mode exists.
    best.ok_or_else(|| Error::State("mean shift produced no mode".into()))
}

fn count_within(candidates: &[Vec3], center: &Vec3, radius: f64) -> usize {
    let r2 = radius * radius;
    candidates
        .iter()
        .filter(|c| (*c - center).norm_squared() <= r2)
        .count()
        .max(1)
}

/// Iterates the weighted-mean update from `start` until the shift drops below
/// `tol` or `max_iters` is reached.
pub fn climb(candidates: &[Vec3], start: Vec3, config: &MeanShiftConfig) -> (Vec3, usize) {
    let mut x = start;
    for it in 1..=config.max_iters {
        let next = shift_once(candidates, &x, config).unwrap_or(x);
        let step = (next - x).norm();
        x = next;
        if step < config.tol {
            return (x, it);
        }
    }
    (x, config.max_iters)
}

/// One mean-shift update; `None` when no candidate carries weight.
pub fn shift_once(candidates: &[Vec3], x: &Vec3, config: &MeanShiftConfig) -> Option<Vec3> {
    let h2 = config.bandwidth * config.bandwidth;
    let mut acc = Vec3::zeros();
    let mut total = 0.0;
    for c in candidates {
        let d2 = (c - x).norm_squared();
        let w = match config.kernel {
            Kernel::Flat => {
                if d2 <= h2 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * d2 / h2).exp(),
        };
        if w > 0.0 {
            acc += c * w;
            total += w;
        }
    }
    (total > 0.0).then(|| acc / total)
}
