//! Multi-object point-cloud scenes with per-seed features and labels.

use nalgebra::{Matrix3, Rotation3, Unit};
use ndarray::{Array2, Array3};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::shapes::{flat_texture, random_unit, ObjectModel, TEXTURE_DIM};
use crate::geometry::{random_rotation, Pose, Vec3, NUM_KEYPOINTS};
use crate::meta::{ContextSample, TargetSample, FEATURE_DIM};
use crate::{Error, Result};

pub const MIN_OCCLUSION: f64 = 0.05;
pub const MAX_OCCLUSION: f64 = 0.20;

const PLANE_SHADE: f64 = 0.45;
const OCCLUDER_SHADE: f64 = 0.2;

/// Scene layout parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seeds: usize,
    pub object_seeds: usize,
    pub distractors: usize,
    pub seeds_per_distractor: usize,
    /// Largest rotation angle of the queried object away from its canonical
    /// orientation, in degrees. Distractors are rotated freely.
    pub max_rotation_deg: f64,
    pub center: [f64; 3],
    pub translation_jitter: f64,
    pub noise_sigma: f64,
    pub viewpoint_jitter: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seeds: 512,
            object_seeds: 128,
            distractors: 3,
            seeds_per_distractor: 64,
            max_rotation_deg: 15.0,
            center: [0.0, 0.0, 3.0],
            translation_jitter: 0.4,
            noise_sigma: 0.01,
            viewpoint_jitter: 0.1,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let used = self.object_seeds + self.distractors * self.seeds_per_distractor;
        if self.object_seeds == 0 || used > self.seeds {
            return Err(Error::invalid(format!(
                "seed budget: {} object + {}×{} distractor seeds do not fit in {}",
                self.object_seeds, self.distractors, self.seeds_per_distractor, self.seeds
            )));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(Error::invalid("max_rotation_deg must lie in [0, 180]"));
        }
        if !(self.noise_sigma >= 0.0 && self.translation_jitter >= 0.0 && self.viewpoint_jitter >= 0.0) {
            return Err(Error::invalid("noise and jitter scales must be non-negative"));
        }
        Ok(())
    }

    fn plane_seeds(&self) -> usize {
        self.seeds - self.object_seeds - self.distractors * self.seeds_per_distractor
    }
}

/// One rendered scene of a queried object.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub queried_object_id: u32,
    pub scene_index: u32,
    pub occluded: bool,
    pub gt_pose: Pose,
    pub viewpoint: Vec3,
    /// `M_t × 16`: position, normal, texture, viewpoint distance, noise.
    pub features: Array2<f64>,
    /// `M_t × 3`.
    pub positions: Array2<f64>,
    pub seg: Vec<bool>,
    /// `M_t × 9 × 3`; zero for background seeds.
    pub offsets: Array3<f64>,
    pub occlusion_fraction: f64,
}

impl SceneSample {
    pub fn len(&self) -> usize {
        self.seg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seg.is_empty()
    }

    pub fn object_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.seg[i]).collect()
    }

    pub fn position(&self, i: usize) -> Vec3 {
        Vec3::new(self.positions[[i, 0]], self.positions[[i, 1]], self.positions[[i, 2]])
    }

    pub fn to_context(&self) -> ContextSample {
        ContextSample {
            features: self.features.clone(),
            offsets: self.offsets.clone(),
            seg_labels: self.seg.clone(),
        }
    }

    pub fn to_target(&self) -> TargetSample {
        TargetSample {
            features: self.features.clone(),
            seed_positions: self.positions.clone(),
            gt_seg: self.seg.clone(),
            gt_offsets: self.offsets.clone(),
            gt_pose: self.gt_pose,
        }
    }
}

struct SeedRow {
    position: Vec3,
    normal: Vec3,
    texture: [f64; TEXTURE_DIM],
    object: bool,
}

/// Rotation about a uniformly random axis by an angle uniform in `[0, max]`.
fn bounded_rotation<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Matrix3<f64> {
    let axis = Unit::new_normalize(random_unit(rng));
    let angle = rng.random::<f64>() * max_angle;
    *Rotation3::from_axis_angle(&axis, angle).matrix()
}

fn object_rows<R: Rng + ?Sized>(
    obj: &ObjectModel,
    pose: &Pose,
    count: usize,
    rng: &mut R,
    object: bool,
) -> Vec<SeedRow> {
    let count = count.min(obj.points.len());
    let mut picked = index::sample(rng, obj.points.len(), count).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|j| SeedRow {
            position: pose.transform_point(&obj.points[j]),
            normal: pose.rotation() * obj.normals[j],
            texture: obj.texture[j],
            object,
        })
        .collect()
}

fn plane_shade(x: f64, y: f64) -> f64 {
    let cell = ((x * 4.0).floor() + (y * 4.0).floor()).rem_euclid(2.0);
    PLANE_SHADE + 0.1 * cell
}

fn feature_row(row: &SeedRow, viewpoint: &Vec3, noise: f64) -> [f64; FEATURE_DIM] {
    let mut f = [0.0; FEATURE_DIM];
    f[0..3].copy_from_slice(row.position.as_slice());
    f[3..6].copy_from_slice(row.normal.as_slice());
    f[6..6 + TEXTURE_DIM].copy_from_slice(&row.texture);
    f[14] = (row.position - viewpoint).norm();
    f[15] = noise;
    f
}

/// Renders one scene of `queried` among `distractors` and a ground plane.
///
/// A nonzero `occlusion_fraction` is applied through the spherical occluder
/// of [`apply_occlusion`].
pub fn render_scene<R: Rng + ?Sized>(
    queried: &ObjectModel,
    distractors: &[&ObjectModel],
    config: &SceneConfig,
    rng: &mut R,
    occlusion_fraction: f64,
) -> Result<SceneSample> {
    config.validate()?;
    if !(0.0..=MAX_OCCLUSION).contains(&occlusion_fraction) {
        return Err(Error::invalid(format!(
            "occlusion fraction {occlusion_fraction} outside [0, {MAX_OCCLUSION}]"
        )));
    }
    if distractors.len() != config.distractors {
        return Err(Error::invalid(format!(
            "expected {} distractors, got {}",
            config.distractors,
            distractors.len()
        )));
    }
    if distractors.iter().any(|d| d.object_id == queried.object_id) {
        return Err(Error::invalid("the queried object cannot be its own distractor"));
    }

    let center = Vec3::from(config.center);
    let translation = center + Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0) * config.translation_jitter);
    let rotation = bounded_rotation(rng, config.max_rotation_deg.to_radians());
    let gt_pose = Pose::new(rotation, translation)?;
    let viewpoint = Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0) * config.viewpoint_jitter);

    let mut rows = object_rows(queried, &gt_pose, config.object_seeds, rng, true);
    let r_q = queried.radius();
    for d in distractors {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let dist = r_q + d.radius() + rng.random_range(0.05..0.4);
        let t = translation + Vec3::new(dist * theta.cos(), dist * theta.sin(), rng.random_range(-0.2..=0.2));
        let pose = Pose::new(random_rotation(rng), t)?;
        rows.extend(object_rows(d, &pose, config.seeds_per_distractor, rng, false));
    }
    let plane_z = translation.z + r_q + 0.3;
    for _ in 0..config.plane_seeds() {
        let x = translation.x + rng.random_range(-1.5..=1.5);
        let y = translation.y + rng.random_range(-1.5..=1.5);
        rows.push(SeedRow {
            position: Vec3::new(x, y, plane_z),
            normal: Vec3::new(0.0, 0.0, -1.0),
            texture: flat_texture(plane_shade(x, y)),
            object: false,
        });
    }
    rows.shuffle(rng);

    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let kps = gt_pose.apply(queried.keypoints.points())?;
    let m = rows.len();
    let mut features = Array2::zeros((m, FEATURE_DIM));
    let mut positions = Array2::zeros((m, 3));
    let mut offsets = Array3::zeros((m, NUM_KEYPOINTS, 3));
    let mut seg = Vec::with_capacity(m);
    for (i, row) in rows.iter().enumerate() {
        let f = feature_row(row, &viewpoint, noise.sample(rng));
        for (c, v) in f.iter().enumerate() {
            features[[i, c]] = *v;
        }
        for c in 0..3 {
            positions[[i, c]] = row.position[c];
        }
        if row.object {
            for (u, kp) in kps.iter().enumerate() {
                let off = kp - row.position;
                for c in 0..3 {
                    offsets[[i, u, c]] = off[c];
                }
            }
        }
        seg.push(row.object);
    }

    let sample = SceneSample {
        queried_object_id: queried.object_id,
        scene_index: 0,
        occluded: false,
        gt_pose,
        viewpoint,
        features,
        positions,
        seg,
        offsets,
        occlusion_fraction: 0.0,
    };
    if occlusion_fraction > 0.0 {
        occlude(&sample, occlusion_fraction, config.noise_sigma, rng)
    } else {
        Ok(sample)
    }
}

/// Hides `fraction` of the queried object's seeds behind a spherical
/// occluder. Removed seeds are replaced by occluder-surface seeds labeled as
/// background, so the seed count is unchanged.
pub fn apply_occlusion<R: Rng + ?Sized>(
    sample: &SceneSample,
    fraction: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<SceneSample> {
    if !(MIN_OCCLUSION..=MAX_OCCLUSION).contains(&fraction) {
        return Err(Error::invalid(format!(
            "occlusion fraction {fraction} outside [{MIN_OCCLUSION}, {MAX_OCCLUSION}]"
        )));
    }
    occlude(sample, fraction, noise_sigma, rng)
}

/// Removed rows and the occluder radius for a ball around `anchor`.
pub(crate) fn occluded_ball(sample: &SceneSample, anchor: usize, count: usize) -> (Vec<usize>, f64) {
    let a = sample.position(anchor);
    let mut by_dist: Vec<(f64, usize)> = sample
        .object_rows()
        .into_iter()
        .map(|i| ((sample.position(i) - a).norm_squared(), i))
        .collect();
    by_dist.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    by_dist.truncate(count);
    let radius = by_dist.last().map_or(0.0, |(d, _)| d.sqrt());
    (by_dist.into_iter().map(|(_, i)| i).collect(), radius)
}

fn occlude<R: Rng + ?Sized>(sample: &SceneSample, fraction: f64, noise_sigma: f64, rng: &mut R) -> Result<SceneSample> {
    let object = sample.object_rows();
    if object.is_empty() {
        return Err(Error::invalid("scene has no queried-object seeds to occlude"));
    }
    let count = ((fraction * object.len() as f64).round() as usize).clamp(1, object.len());
    let anchor = object[rng.random_range(0..object.len())];
    let (removed, radius) = occluded_ball(sample, anchor, count);
    let center = sample.position(anchor);
    let shell = radius.max(0.02);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;

    let mut out = sample.clone();
    for &i in &removed {
        let mut d = random_unit(rng);
        if d.dot(&(sample.viewpoint - center)) < 0.0 {
            d = -d;
        }
        let row = SeedRow {
            position: center + d * shell,
            normal: d,
            texture: flat_texture(OCCLUDER_SHADE),
            object: false,
        };
        let f = feature_row(&row, &sample.viewpoint, noise.sample(rng));
        for (c, v) in f.iter().enumerate() {
            out.features[[i, c]] = *v;
        }
        for c in 0..3 {
            out.positions[[i, c]] = row.position[c];
        }
        out.offsets.slice_mut(ndarray::s![i, .., ..]).fill(0.0);
        out.seg[i] = false;
    }
    out.occluded = true;
    out.occlusion_fraction = removed.len() as f64 / object.len() as f64;
    Ok(out)
}
