//! Rigid poses, farthest point sampling, canonical keypoints and the KNN
//! keypoint graph.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Number of canonical keypoints per object: 8 FPS points plus the centroid.
pub const NUM_KEYPOINTS: usize = 9;

const ORTHO_TOL: f64 = 1e-9;

/// A proper rigid transform `x -> R x + t` from object to camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Pose {
    /// Builds a pose after checking that `rotation` is orthonormal with
    /// determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite entries"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho >= ORTHO_TOL {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max deviation {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() >= ORTHO_TOL {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub(crate) fn from_parts(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::from_parts(Matrix3::identity(), Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::from_parts(Matrix3::identity(), translation)
    }

    /// Rotation about a unit `axis` by `angle` radians followed by `translation`.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Result<Self> {
        let norm = axis.norm();
        if !(norm > 0.0) || !angle.is_finite() {
            return Err(Error::invalid("axis must be non-zero and angle finite"));
        }
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self::new(*rot.matrix(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies the pose row-wise to a point array.
    pub fn apply(&self, points: &[Vec3]) -> Result<Vec<Vec3>> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("points contain non-finite coordinates"));
        }
        Ok(points.iter().map(|p| self.transform_point(p)).collect())
    }

    /// `(Rᵀ, -Rᵀ t)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::from_parts(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Geodesic angle between the two rotations, in `[0, π]`.
    ///
    /// Uses `atan2(sin, cos)` of the relative rotation so that angles close to
    /// zero keep full precision.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let cos = (rel.trace() - 1.0) * 0.5;
        let sin = 0.5
            * Vec3::new(
                rel[(2, 1)] - rel[(1, 2)],
                rel[(0, 2)] - rel[(2, 0)],
                rel[(1, 0)] - rel[(0, 1)],
            )
            .norm();
        sin.atan2(cos)
    }

    /// Draws a rotation uniformly on SO(3) (Shoemake's subgroup construction)
    /// and a translation uniformly in the axis-aligned cube
    /// `center ± half_extent`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, center: Vec3, half_extent: f64) -> Self {
        let rotation = random_rotation(rng);
        let translation = center + Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0) * half_extent);
        Self::from_parts(rotation, translation)
    }
}

/// Geodesic angle between the rotations of two poses, in `[0, π]`.
pub fn rotation_angle_between(a: &Pose, b: &Pose) -> f64 {
    a.rotation_angle_to(b)
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    );
    *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
}

/// Greedy farthest point sampling starting from `start_index`.
///
/// Each new index maximises the minimum distance to the already selected
/// points; ties go to the lowest index.
pub fn farthest_point_sampling(points: &[Vec3], n: usize, start_index: usize) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::invalid("farthest point sampling on an empty cloud"));
    }
    if n == 0 || n > points.len() {
        return Err(Error::invalid(format!(
            "cannot sample {n} points from a cloud of {}",
            points.len()
        )));
    }
    if start_index >= points.len() {
        return Err(Error::invalid(format!(
            "start index {start_index} out of range for {} points",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::invalid("points contain non-finite coordinates"));
    }

    let mut selected = Vec::with_capacity(n);
    let mut min_dist = vec![f64::INFINITY; points.len()];
    let mut current = start_index;
    loop {
        selected.push(current);
        min_dist[current] = f64::NEG_INFINITY;
        if selected.len() == n {
            break;
        }
        let anchor = points[current];
        let mut best = usize::MAX;
        let mut best_dist = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if min_dist[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = (p - anchor).norm_squared();
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best_dist {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(selected)
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let sum: Vec3 = points.iter().sum();
    sum / points.len() as f64
}

/// Canonical keypoints of an object, in object coordinates.
///
/// The first eight are farthest-point samples of the model cloud, the last is
/// the object center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    points: Vec<Vec3>,
}

impl KeypointSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() != NUM_KEYPOINTS {
            return Err(Error::invalid(format!(
                "expected {NUM_KEYPOINTS} keypoints, got {}",
                points.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("keypoint {i} is not finite")));
            }
            if points[..i].iter().any(|q| (p - q).norm() == 0.0) {
                return Err(Error::invalid(format!("keypoint {i} duplicates an earlier keypoint")));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn center(&self) -> &Vec3 {
        &self.points[NUM_KEYPOINTS - 1]
    }
}

/// Picks the canonical keypoints for a model cloud: eight FPS points from a
/// seed-derived start index, then the centroid.
pub fn select_keypoints(model_points: &[Vec3], rng_seed: u64) -> Result<KeypointSet> {
    let n_fps = NUM_KEYPOINTS - 1;
    if model_points.len() < n_fps {
        return Err(Error::invalid(format!(
            "need at least {n_fps} model points, got {}",
            model_points.len()
        )));
    }
    let start = ChaCha8Rng::seed_from_u64(rng_seed).random_range(0..model_points.len());
    let idx = farthest_point_sampling(model_points, n_fps, start)?;
    let mut points: Vec<Vec3> = idx.iter().map(|&i| model_points[i]).collect();
    points.push(centroid(model_points));
    KeypointSet::new(points)
}

/// Neighbor lists over the keypoints; `neighbors[u]` starts with `u` itself
/// followed by its `k` nearest keypoints in increasing distance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointGraph {
    k: usize,
    neighbors: Vec<Vec<usize>>,
}

impl KeypointGraph {
    /// Graph from explicit neighbor lists. Every list must contain its own
    /// node and only valid indices.
    pub fn from_neighbors(k: usize, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (u, list) in neighbors.iter().enumerate() {
            if !list.contains(&u) {
                return Err(Error::invalid(format!("node {u} is missing its self-loop")));
            }
            if let Some(v) = list.iter().find(|&&v| v >= n) {
                return Err(Error::invalid(format!("node {u} lists out-of-range neighbor {v}")));
            }
        }
        Ok(Self { k, neighbors })
    }

    /// A graph where each node only sees itself.
    pub fn self_loops(num_nodes: usize) -> Self {
        Self {
            k: 0,
            neighbors: (0..num_nodes).map(|u| vec![u]).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u]
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

/// Connects every keypoint to itself and its `k` nearest keypoints; distance
/// ties go to the lowest index.
pub fn build_knn_graph(kps: &KeypointSet, k: usize) -> Result<KeypointGraph> {
    knn_graph(kps.points(), k)
}

pub(crate) fn knn_graph(points: &[Vec3], k: usize) -> Result<KeypointGraph> {
    let n = points.len();
    if k == 0 || k + 1 > n {
        return Err(Error::invalid(format!(
            "k must lie in [1, {}], got {k}",
            n.saturating_sub(1)
        )));
    }
    let neighbors = (0..n)
        .map(|u| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&v| v != u)
                .map(|v| ((points[u] - points[v]).norm_squared(), v))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            std::iter::once(u)
                .chain(others.iter().take(k).map(|&(_, v)| v))
                .collect()
        })
        .collect();
    Ok(KeypointGraph { k, neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    // Independent greedy FPS: recomputes every minimum distance from scratch.
    fn fps_oracle(points: &[Vec3], n: usize, start: usize) -> Vec<usize> {
        let mut chosen = vec![start];
        while chosen.len() < n {
            let mut best = None;
            for i in 0..points.len() {
                if chosen.contains(&i) {
                    continue;
                }
                let d = chosen
                    .iter()
                    .map(|&j| (points[i] - points[j]).norm())
                    .fold(f64::INFINITY, f64::min);
                match best {
                    Some((bd, _)) if d <= bd => {}
                    _ => best = Some((d, i)),
                }
            }
            chosen.push(best.unwrap().1);
        }
        chosen
    }

    #[test]
    fn fps_square_picks_diagonal() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ];
        assert_eq!(farthest_point_sampling(&pts, 2, 0).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_full_is_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_cloud(&mut rng, 40);
        let mut idx = farthest_point_sampling(&pts, 40, 7).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn fps_matches_oracle() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_cloud(&mut rng, 50);
            let start = (seed as usize * 11) % 50;
            assert_eq!(
                farthest_point_sampling(&pts, 8, start).unwrap(),
                fps_oracle(&pts, 8, start)
            );
        }
    }

    #[test]
    fn fps_rejects_bad_input() {
        let pts = vec![Vec3::zeros(); 3];
        assert!(farthest_point_sampling(&pts, 4, 0).is_err());
        assert!(farthest_point_sampling(&[], 1, 0).is_err());
        assert!(farthest_point_sampling(&pts, 2, 3).is_err());
    }

    #[test]
    fn fps_duplicates_still_permute() {
        let pts = vec![Vec3::zeros(); 5];
        let mut idx = farthest_point_sampling(&pts, 5, 2).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    fn cube_surface(steps: usize) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..=steps {
            for j in 0..=steps {
                let a = -1.0 + 2.0 * i as f64 / steps as f64;
                let b = -1.0 + 2.0 * j as f64 / steps as f64;
                for s in [-1.0, 1.0] {
                    pts.push(Vec3::new(s, a, b));
                    pts.push(Vec3::new(a, s, b));
                    pts.push(Vec3::new(a, b, s));
                }
            }
        }
        pts
    }

    #[test]
    fn keypoints_on_symmetric_cloud_center_at_origin() {
        let kps = select_keypoints(&cube_surface(6), 11).unwrap();
        assert!(kps.center().norm() < 1e-12);
    }

    #[test]
    fn keypoints_on_cube_hit_distinct_corners() {
        let corners: Vec<Vec3> = (0..8)
            .map(|c| {
                Vec3::new(
                    if c & 1 == 0 { -1.0 } else { 1.0 },
                    if c & 2 == 0 { -1.0 } else { 1.0 },
                    if c & 4 == 0 { -1.0 } else { 1.0 },
                )
            })
            .collect();
        // On denser grids greedy selection prefers edge midpoints, which are
        // equidistant from two corners.
        for seed in 0..20 {
            let kps = select_keypoints(&cube_surface(3), seed).unwrap();
            let mut assigned: Vec<usize> = kps.points()[..8]
                .iter()
                .map(|p| {
                    (0..8)
                        .min_by(|&a, &b| (p - corners[a]).norm().total_cmp(&(p - corners[b]).norm()))
                        .unwrap()
                })
                .collect();
            assigned.sort_unstable();
            assigned.dedup();
            assert_eq!(assigned.len(), 8, "seed {seed}");
        }
    }

    #[test]
    fn keypoints_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = random_cloud(&mut rng, 64);
        assert_eq!(select_keypoints(&pts, 5).unwrap(), select_keypoints(&pts, 5).unwrap());
        assert!(select_keypoints(&pts[..7], 5).is_err());
    }

    fn line_keypoints() -> KeypointSet {
        KeypointSet::new((0..9).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect()).unwrap()
    }

    #[test]
    fn knn_graph_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let kps = select_keypoints(&random_cloud(&mut rng, 64), 0).unwrap();
        let full = build_knn_graph(&kps, 8).unwrap();
        for u in 0..9 {
            let mut n = full.neighbors(u).to_vec();
            n.sort_unstable();
            assert_eq!(n, (0..9).collect::<Vec<_>>());
        }
        let g3 = build_knn_graph(&kps, 3).unwrap();
        for u in 0..9 {
            assert_eq!(g3.neighbors(u).len(), 4);
            assert_eq!(g3.neighbors(u)[0], u);
        }
        assert!(build_knn_graph(&kps, 0).is_err());
        assert!(build_knn_graph(&kps, 9).is_err());
    }

    #[test]
    fn knn_collinear_tie_break() {
        let g = build_knn_graph(&line_keypoints(), 1).unwrap();
        assert_eq!(g.neighbors(0), &[0, 1]);
        for u in 1..8 {
            assert_eq!(g.neighbors(u), &[u, u - 1]);
        }
        assert_eq!(g.neighbors(8), &[8, 7]);
    }

    #[test]
    fn knn_neighbors_are_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let kps = select_keypoints(&random_cloud(&mut rng, 80), 2).unwrap();
        let p = kps.points();
        for k in 1..=8 {
            let g = build_knn_graph(&kps, k).unwrap();
            for u in 0..9 {
                let nb = &g.neighbors(u)[1..];
                let worst = nb.iter().map(|&v| (p[u] - p[v]).norm()).fold(0.0, f64::max);
                for v in (0..9).filter(|v| *v != u && !nb.contains(v)) {
                    assert!((p[u] - p[v]).norm() >= worst);
                }
            }
        }
    }

    #[test]
    fn knn_symmetric_input_gives_equivariant_graph() {
        // Keypoints mirrored through the origin: node i <-> node (i + 4) % 8.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let half: Vec<Vec3> = (0..4)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(0.2..1.0)))
            .collect();
        let mut pts: Vec<Vec3> = half.clone();
        pts.extend(half.iter().map(|p| -p));
        pts.push(Vec3::zeros());
        let kps = KeypointSet::new(pts).unwrap();
        let perm = |i: usize| if i == 8 { 8 } else { (i + 4) % 8 };
        let g = build_knn_graph(&kps, 3).unwrap();
        // The center is equidistant from each mirrored pair, so its list
        // follows the index tie-break instead.
        for u in 0..8 {
            let mut a: Vec<usize> = g.neighbors(u).iter().map(|&v| perm(v)).collect();
            let mut b = g.neighbors(perm(u)).to_vec();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pose_basic_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts = random_cloud(&mut rng, 20);
        assert_eq!(Pose::identity().apply(&pts).unwrap(), pts);

        let t = Vec3::new(0.3, -1.0, 2.0);
        let moved = Pose::from_translation(t).apply(&pts).unwrap();
        for (a, b) in moved.iter().zip(&pts) {
            assert_eq!(*a, b + t);
        }

        let p = Pose::random(&mut rng, Vec3::zeros(), 2.0);
        let back = p.inverse().apply(&p.apply(&pts).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&pts) {
            assert!((a - b).amax() < 1e-12);
        }
        let id = p.compose(&p.inverse());
        assert!((id.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation().amax() < 1e-12);
        assert_eq!(rotation_angle_between(&p, &p), 0.0);

        let bad = Pose::from_translation(Vec3::new(f64::NAN, 0.0, 0.0));
        assert!(Pose::identity().apply(&[Vec3::new(f64::INFINITY, 0.0, 0.0)]).is_err());
        assert!(Pose::new(*bad.rotation(), *bad.translation()).is_err());
    }

    #[test]
    fn pose_new_rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        assert!(Pose::new(m, Vec3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 1.01, Vec3::zeros()).is_err());
    }

    #[test]
    fn rotation_angle_small_and_large() {
        let a = Pose::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 1e-11, Vec3::zeros()).unwrap();
        assert!((a.rotation_angle_to(&Pose::identity()) - 1e-11).abs() < 1e-20);
        let b = Pose::from_axis_angle(Vec3::z(), 3.0, Vec3::zeros()).unwrap();
        assert!((b.rotation_angle_to(&Pose::identity()) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_rotation_mean_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let id = Pose::identity();
        let mean: f64 = (0..n)
            .map(|_| Pose::random(&mut rng, Vec3::zeros(), 1.0).rotation_angle_to(&id))
            .sum::<f64>()
            / n as f64;
        let expected = std::f64::consts::FRAC_PI_2 + 2.0 / std::f64::consts::PI;
        assert!((mean - expected).abs() < 0.01, "mean angle {mean}");
    }

    proptest! {
        #[test]
        fn random_pose_is_valid(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Pose::random(&mut rng, Vec3::new(0.0, 0.0, 3.0), 1.0);
            prop_assert!(Pose::new(*p.rotation(), *p.translation()).is_ok());
        }

        #[test]
        fn compose_is_associative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Pose::random(&mut rng, Vec3::zeros(), 2.0);
            let b = Pose::random(&mut rng, Vec3::zeros(), 2.0);
            let c = Pose::random(&mut rng, Vec3::zeros(), 2.0);
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!((l.rotation() - r.rotation()).amax() < 1e-12);
            prop_assert!((l.translation() - r.translation()).amax() < 1e-12);
            let li = Pose::identity().compose(&a);
            prop_assert!((li.rotation() - a.rotation()).amax() < 1e-12);
        }

        #[test]
        fn fps_prefix_property(seed in any::<u64>(), m in 1usize..10, extra in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_cloud(&mut rng, 30);
            let short = farthest_point_sampling(&pts, m, 3).unwrap();
            let long = farthest_point_sampling(&pts, m + extra, 3).unwrap();
            prop_assert_eq!(&long[..m], &short[..]);
        }
    }
}
