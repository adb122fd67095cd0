use ndarray::{ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use super::Networks;
use crate::clustering::{mean_shift_mode, MeanShiftConfig};
use crate::data::ObjectModel;
use crate::geometry::{KeypointSet, Pose, Vec3};
use crate::meta::{decode_segmentation, select_object_points, Episode, LatentRep, TargetSample};
use crate::nn::l1_offset_loss;
use crate::posefit::{fit_rigid, FitResult, MetricReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegMode {
    Predicted,
    GroundTruth,
}

impl std::str::FromStr for SegMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(SegMode::Predicted),
            "gt" | "ground_truth" => Ok(SegMode::GroundTruth),
            _ => Err(Error::invalid(format!(
                "unknown segmentation mode '{s}' (expected predicted or gt)"
            ))),
        }
    }
}

/// Pose estimate for one target with its metrics and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub pose: Pose,
    pub metrics: MetricReport,
    pub detected_keypoints: Vec<Vec3>,
    pub fit_residual: f64,
    pub num_object_points: usize,
    /// Fraction of seeds whose predicted label matches the ground truth.
    pub seg_accuracy: f64,
    /// Mean L1 offset error over the ground-truth object seeds.
    pub offset_l1: f64,
}

/// Mean-shift vote per keypoint over `position + offset` candidates, then a
/// rigid fit of the canonical keypoints to the detected ones.
pub fn vote_and_fit(
    positions: ArrayView2<f64>,
    offsets: ArrayView3<f64>,
    keypoints: &KeypointSet,
    diameter: f64,
    bandwidth_scale: f64,
) -> Result<(Vec<Vec3>, FitResult)> {
    let (m, k, _) = offsets.dim();
    if positions.dim() != (m, 3) || k != keypoints.len() {
        return Err(Error::invalid(format!(
            "positions {:?} and offsets {:?} do not match {} keypoints",
            positions.dim(),
            offsets.dim(),
            keypoints.len()
        )));
    }
    let mut config = MeanShiftConfig::for_diameter(diameter);
    config.bandwidth = bandwidth_scale * diameter;
    config.tol = 1e-4 * config.bandwidth;
    let mut detected = Vec::with_capacity(k);
    for u in 0..k {
        let candidates: Vec<Vec3> = (0..m)
            .map(|i| {
                Vec3::new(
                    positions[[i, 0]] + offsets[[i, u, 0]],
                    positions[[i, 1]] + offsets[[i, u, 1]],
                    positions[[i, 2]] + offsets[[i, u, 2]],
                )
            })
            .collect();
        detected.push(mean_shift_mode(&candidates, &config)?.point);
    }
    let fit = fit_rigid(keypoints.points(), &detected)?;
    Ok((detected, fit))
}

/// Inference with a precomputed latent, so one encoding can serve many
/// targets of the same object.
pub fn infer_pose_with_latent(
    nets: &Networks,
    latent: &LatentRep,
    object: &ObjectModel,
    target: &TargetSample,
    seg_mode: SegMode,
    bandwidth_scale: f64,
) -> Result<Inference> {
    let (_, predicted) = decode_segmentation(&nets.segmenter, target.features.view(), latent)?;
    let seg_accuracy =
        predicted.iter().zip(&target.gt_seg).filter(|(a, b)| a == b).count() as f64 / target.len().max(1) as f64;
    let obj = select_object_points(target, &predicted, seg_mode == SegMode::GroundTruth)?;
    let offsets = nets.decoder.decode(obj.features.view(), latent, &object.keypoints)?;
    let (detected, fit) = vote_and_fit(
        obj.positions.view(),
        offsets.view(),
        &object.keypoints,
        object.diameter,
        bandwidth_scale,
    )?;

    let offset_l1 = offset_error(nets, latent, object, target)?;
    let metrics = MetricReport::compute(&fit.pose, &target.gt_pose, &object.points, object.diameter)?;
    Ok(Inference {
        pose: fit.pose,
        metrics,
        detected_keypoints: detected,
        fit_residual: fit.residual,
        num_object_points: obj.indices.len(),
        seg_accuracy,
        offset_l1,
    })
}

/// Mean L1 offset error over the target's ground-truth object seeds; zero
/// when the target holds none.
pub(crate) fn offset_error(
    nets: &Networks,
    latent: &LatentRep,
    object: &ObjectModel,
    target: &TargetSample,
) -> Result<f64> {
    let gt_rows: Vec<usize> = (0..target.len()).filter(|&i| target.gt_seg[i]).collect();
    if gt_rows.is_empty() {
        return Ok(0.0);
    }
    let x = target.features.select(ndarray::Axis(0), &gt_rows);
    let gt = target.gt_offsets.select(ndarray::Axis(0), &gt_rows);
    let pred = nets.decoder.decode(x.view(), latent, &object.keypoints)?;
    Ok(l1_offset_loss(pred.view(), gt.view(), &vec![true; gt_rows.len()])?.0)
}

/// Encodes the episode's contexts and estimates the pose of `target`.
/// An empty segmentation surfaces as [`Error::EmptySelection`].
pub fn infer_pose(
    nets: &Networks,
    episode: &Episode,
    object: &ObjectModel,
    target: &TargetSample,
    seg_mode: SegMode,
    bandwidth_scale: f64,
) -> Result<Inference> {
    if episode.contexts.is_empty() {
        return Err(Error::invalid("episode has no context samples"));
    }
    if episode.object_id != object.object_id {
        return Err(Error::invalid("episode and object model disagree on the object id"));
    }
    let latent = nets.encode(&episode.contexts)?;
    infer_pose_with_latent(nets, &latent, object, target, seg_mode, bandwidth_scale)
}

/// The voting and fitting chain fed with ground-truth segmentation and
/// offsets in place of network outputs.
pub fn oracle_pose(object: &ObjectModel, target: &TargetSample, bandwidth_scale: f64) -> Result<(Pose, MetricReport)> {
    let rows: Vec<usize> = (0..target.len()).filter(|&i| target.gt_seg[i]).collect();
    if rows.is_empty() {
        return Err(Error::EmptySelection("target has no object seeds".into()));
    }
    let positions = target.seed_positions.select(ndarray::Axis(0), &rows);
    let offsets = target.gt_offsets.select(ndarray::Axis(0), &rows);
    let (_, fit) = vote_and_fit(
        positions.view(),
        offsets.view(),
        &object.keypoints,
        object.diameter,
        bandwidth_scale,
    )?;
    let metrics = MetricReport::compute(&fit.pose, &target.gt_pose, &object.points, object.diameter)?;
    Ok((fit.pose, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_object, render_scene, Family, SceneConfig};
    use ndarray::s;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn scenes(n: usize) -> (ObjectModel, Vec<TargetSample>) {
        let objs: Vec<ObjectModel> = (0..4)
            .map(|k| make_object(k, Family::ALL[k as usize + 1], k as u64).unwrap())
            .collect();
        let d: Vec<&ObjectModel> = objs[1..].iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = SceneConfig::default();
        let t = (0..n)
            .map(|_| render_scene(&objs[0], &d, &cfg, &mut rng, 0.0).unwrap().to_target())
            .collect();
        (objs[0].clone(), t)
    }

    #[test]
    fn oracle_recovers_pose_exactly() {
        let (obj, targets) = scenes(5);
        for t in &targets {
            let (pose, m) = oracle_pose(&obj, t, 0.05).unwrap();
            assert!(m.add < 1e-9);
            assert!(pose.rotation_angle_to(&t.gt_pose) < 1e-9);
        }
    }

    #[test]
    fn noisy_offsets_mostly_pass() {
        let (obj, targets) = scenes(20);
        let noise = Normal::new(0.0, 0.01 * obj.diameter).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pass = 0;
        let mut total = 0;
        for _ in 0..10 {
            for t in &targets {
                let mut noisy = t.clone();
                for i in 0..noisy.len() {
                    if noisy.gt_seg[i] {
                        noisy
                            .gt_offsets
                            .slice_mut(s![i, .., ..])
                            .mapv_inplace(|v| v + noise.sample(&mut rng));
                    }
                }
                let (_, m) = oracle_pose(&obj, &noisy, 0.05).unwrap();
                pass += usize::from(m.add_01d_pass);
                total += 1;
            }
        }
        assert_eq!(total, 200);
        assert!(pass as f64 >= 0.95 * total as f64, "{pass}/{total}");
    }

    #[test]
    fn vote_rejects_mismatched_shapes() {
        let (obj, targets) = scenes(1);
        let t = &targets[0];
        let bad = t.gt_offsets.slice(s![..10, ..3, ..]);
        assert!(vote_and_fit(
            t.seed_positions.slice(s![..10, ..]),
            bad,
            &obj.keypoints,
            obj.diameter,
            0.05
        )
        .is_err());
    }
}
