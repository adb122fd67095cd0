//! Least-squares rigid pose recovery from keypoint correspondences and the
//! ADD / ADD-S pose-error metrics.

use nalgebra::{Matrix3, SVD};
use serde::{Deserialize, Serialize};

use crate::geometry::{centroid, Pose, Vec3};
use crate::{Error, Result};

/// Ratio of the second to the first singular value of the centered canonical
/// set below which the fit is rejected as degenerate.
pub const DEGENERACY_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub pose: Pose,
    /// Sum of squared distances `Σ ‖q_i − (R p_i + t)‖²` at the returned pose.
    pub residual: f64,
}

/// Proper rigid transform minimising `Σ ‖detected_i − (R canonical_i + t)‖²`.
///
/// Both sets are centered, the 3×3 cross-covariance is decomposed by SVD and
/// the rotation is `V diag(1, 1, det(V Uᵀ)) Uᵀ`, which excludes reflections.
pub fn fit_rigid(canonical: &[Vec3], detected: &[Vec3]) -> Result<FitResult> {
    if canonical.len() != detected.len() {
        return Err(Error::invalid(format!(
            "correspondence count mismatch: {} canonical vs {} detected",
            canonical.len(),
            detected.len()
        )));
    }
    if canonical.len() < 3 {
        return Err(Error::invalid("need at least 3 correspondences"));
    }
    if canonical
        .iter()
        .chain(detected)
        .any(|p| !p.iter().all(|v| v.is_finite()))
    {
        return Err(Error::invalid("correspondences contain non-finite coordinates"));
    }

    let c_src = centroid(canonical);
    let c_dst = centroid(detected);

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (p, q) in canonical.iter().zip(detected) {
        let a = p - c_src;
        let b = q - c_dst;
        scatter += a * a.transpose();
        cross += a * b.transpose();
    }

    // Singular values of the centered canonical matrix are the square roots
    // of the scatter eigenvalues.
    let mut sv: Vec<f64> = scatter
        .symmetric_eigenvalues()
        .iter()
        .map(|e| e.max(0.0).sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] < DEGENERACY_RATIO * sv[0] {
        return Err(Error::Degenerate(format!(
            "canonical keypoints are collinear or coincident (singular values {:e}, {:e})",
            sv[0], sv[1]
        )));
    }

    let svd = SVD::new(cross, true, true);
    let u = svd.u.ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let v = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?
        .transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = c_dst - rotation * c_src;
    let pose = Pose::from_parts(rotation, translation);

    Ok(FitResult {
        residual: lsf_residual(&pose, canonical, detected),
        pose,
    })
}

/// The least-squares objective at a given pose.
pub fn lsf_residual(pose: &Pose, canonical: &[Vec3], detected: &[Vec3]) -> f64 {
    canonical
        .iter()
        .zip(detected)
        .map(|(p, q)| (q - pose.transform_point(p)).norm_squared())
        .sum()
}

fn check_vertices(vertices: &[Vec3]) -> Result<()> {
    if vertices.is_empty() {
        return Err(Error::invalid("metric needs at least one vertex"));
    }
    Ok(())
}

/// Mean distance between corresponding vertices under the two poses.
pub fn add_metric(pred: &Pose, gt: &Pose, vertices: &[Vec3]) -> Result<f64> {
    check_vertices(vertices)?;
    let sum: f64 = vertices
        .iter()
        .map(|x| (pred.transform_point(x) - gt.transform_point(x)).norm())
        .sum();
    Ok(sum / vertices.len() as f64)
}

/// Mean distance from each predicted vertex to the closest ground-truth
/// vertex. Exact O(m²).
pub fn adds_metric(pred: &Pose, gt: &Pose, vertices: &[Vec3]) -> Result<f64> {
    check_vertices(vertices)?;
    let gt_pts: Vec<Vec3> = vertices.iter().map(|x| gt.transform_point(x)).collect();
    let sum: f64 = vertices
        .iter()
        .map(|x| {
            let p = pred.transform_point(x);
            gt_pts
                .iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(sum / vertices.len() as f64)
}

/// Fraction of `(add, diameter)` entries with `add < 0.1 · diameter`.
pub fn add_01d_accuracy(reports: &[(f64, f64)]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::invalid("accuracy over an empty report list"));
    }
    if let Some((_, d)) = reports.iter().find(|(_, d)| !(*d > 0.0)) {
        return Err(Error::invalid(format!("diameter must be positive, got {d}")));
    }
    let pass = reports.iter().filter(|(add, d)| add_01d_pass(*add, *d)).count();
    Ok(pass as f64 / reports.len() as f64)
}

#[inline]
pub fn add_01d_pass(add: f64, diameter: f64) -> bool {
    add < 0.1 * diameter
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub add: f64,
    pub adds: f64,
    pub add_01d_pass: bool,
    pub diameter: f64,
}

impl MetricReport {
    pub fn compute(pred: &Pose, gt: &Pose, vertices: &[Vec3], diameter: f64) -> Result<Self> {
        if !(diameter > 0.0) {
            return Err(Error::invalid(format!("diameter must be positive, got {diameter}")));
        }
        let add = add_metric(pred, gt, vertices)?;
        let adds = adds_metric(pred, gt, vertices)?;
        Ok(Self {
            add,
            adds,
            add_01d_pass: add_01d_pass(add, diameter),
            diameter,
        })
    }
}
