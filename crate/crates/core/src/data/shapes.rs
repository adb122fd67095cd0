//! Parametric object families and surface sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{centroid, select_keypoints, KeypointSet, Vec3};
use crate::{Error, Result};

/// Points sampled on every object surface.
pub const MODEL_POINTS: usize = 256;
pub const TEXTURE_DIM: usize = 8;
pub const MIN_DIAMETER: f64 = 0.5;
pub const MAX_DIAMETER: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Box,
    Cylinder,
    Ellipsoid,
    Capsule,
    Lshape,
    Composite,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Box,
        Family::Cylinder,
        Family::Ellipsoid,
        Family::Capsule,
        Family::Lshape,
        Family::Composite,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Box => "box",
            Family::Cylinder => "cylinder",
            Family::Ellipsoid => "ellipsoid",
            Family::Capsule => "capsule",
            Family::Lshape => "lshape",
            Family::Composite => "composite",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown object family '{s}'")))
    }
}

/// Canonical object: surface cloud with normals, procedural texture and
/// keypoints, centered on its centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub object_id: u32,
    pub family: Family,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// `N × 8`, see [`texture_at`].
    pub texture: Vec<[f64; TEXTURE_DIM]>,
    pub keypoints: KeypointSet,
    pub diameter: f64,
}

impl ObjectModel {
    /// Completes a model from a sampled surface: texture, keypoints and the
    /// exact diameter.
    pub fn from_surface(
        object_id: u32,
        family: Family,
        points: Vec<Vec3>,
        normals: Vec<Vec3>,
        seed: u64,
    ) -> Result<Self> {
        if points.len() != normals.len() || points.len() < 8 {
            return Err(Error::invalid("surface needs at least 8 points with matching normals"));
        }
        let normals: Vec<Vec3> = normals.into_iter().map(|n| n.normalize()).collect();
        let texture = points.iter().map(|p| texture_at(object_id, p)).collect();
        let keypoints = select_keypoints(&points, seed)?;
        let diameter = diameter(&points);
        Ok(Self {
            object_id,
            family,
            points,
            normals,
            texture,
            keypoints,
            diameter,
        })
    }

    /// Radius of the smallest origin-centered ball holding the cloud.
    pub fn radius(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// Maximum pairwise distance, brute force.
pub fn diameter(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max((p - q).norm_squared());
        }
    }
    best.sqrt()
}

pub(crate) fn hash64(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Uniform in `[0, 1)` from a hash of `(object_id, slot)`.
fn unit_hash(object_id: u32, slot: u64) -> f64 {
    (hash64(((object_id as u64) << 8) ^ slot) >> 11) as f64 / (1u64 << 53) as f64
}

/// Object-specific base color in `[0.1, 0.9]³`.
pub fn object_color(object_id: u32) -> Vec3 {
    Vec3::from_fn(|k, _| 0.1 + 0.8 * unit_hash(object_id, k as u64))
}

/// Procedural texture of object `object_id` at canonical position `p`:
/// base color with a faint ripple (3), the canonical coordinates (3) and a
/// stripe pair along an object-specific direction (2).
pub fn texture_at(object_id: u32, p: &Vec3) -> [f64; TEXTURE_DIM] {
    let color = object_color(object_id);
    let dir = Vec3::from_fn(|k, _| unit_hash(object_id, 10 + k as u64) - 0.5).normalize();
    let phase = std::f64::consts::TAU * unit_hash(object_id, 20);
    let ripple = 0.05 * (6.0 * p.dot(&dir) + phase).sin();
    let stripe = std::f64::consts::TAU * 2.0 * p.dot(&dir) + phase;
    [
        color.x + ripple,
        color.y + ripple,
        color.z + ripple,
        p.x,
        p.y,
        p.z,
        stripe.sin(),
        stripe.cos(),
    ]
}

/// Texture of seeds that do not belong to any object model (plane, occluder).
pub fn flat_texture(shade: f64) -> [f64; TEXTURE_DIM] {
    [shade, shade, shade, 0.0, 0.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Cuboid {
        center: Vec3,
        half: Vec3,
    },
    /// Axis along z.
    Cylinder {
        center: Vec3,
        radius: f64,
        half_height: f64,
    },
    Ellipsoid {
        center: Vec3,
        radii: Vec3,
    },
    /// Axis along z; `half_length` is the half height of the straight part.
    Capsule {
        center: Vec3,
        radius: f64,
        half_length: f64,
    },
}

impl Primitive {
    fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Primitive::Cuboid { half, .. } => 8.0 * (half.x * half.y + half.y * half.z + half.x * half.z),
            Primitive::Cylinder {
                radius, half_height, ..
            } => 2.0 * PI * radius * 2.0 * half_height + 2.0 * PI * radius * radius,
            Primitive::Ellipsoid { radii, .. } => {
                // Knud Thomsen's approximation.
                let p = 1.6075;
                let (a, b, c) = (radii.x.powf(p), radii.y.powf(p), radii.z.powf(p));
                4.0 * PI * ((a * b + a * c + b * c) / 3.0).powf(1.0 / p)
            }
            Primitive::Capsule {
                radius, half_length, ..
            } => 2.0 * PI * radius * 2.0 * half_length + 4.0 * PI * radius * radius,
        }
    }

    fn contains(&self, p: &Vec3) -> bool {
        const EPS: f64 = 1e-9;
        match *self {
            Primitive::Cuboid { center, half } => {
                let d = p - center;
                d.x.abs() < half.x - EPS && d.y.abs() < half.y - EPS && d.z.abs() < half.z - EPS
            }
            Primitive::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let d = p - center;
                d.z.abs() < half_height - EPS && d.x.hypot(d.y) < radius - EPS
            }
            Primitive::Ellipsoid { center, radii } => {
                let d = (p - center).component_div(&radii);
                d.norm_squared() < 1.0 - EPS
            }
            Primitive::Capsule {
                center,
                radius,
                half_length,
            } => {
                let d = p - center;
                let z = d.z.clamp(-half_length, half_length);
                (d - Vec3::new(0.0, 0.0, z)).norm() < radius - EPS
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        use std::f64::consts::TAU;
        match *self {
            Primitive::Cuboid { center, half } => {
                let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (k, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = k;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut local = Vec3::from_fn(|k, _| rng.random_range(-1.0..=1.0) * half[k]);
                local[axis] = sign * half[axis];
                let mut n = Vec3::zeros();
                n[axis] = sign;
                (center + local, n)
            }
            Primitive::Cylinder {
                center,
                radius,
                half_height,
            } => {
                let lateral = TAU * radius * 2.0 * half_height;
                let cap = std::f64::consts::PI * radius * radius;
                let theta = rng.random::<f64>() * TAU;
                if rng.random::<f64>() * (lateral + 2.0 * cap) < lateral {
                    let z = rng.random_range(-half_height..=half_height);
                    let n = Vec3::new(theta.cos(), theta.sin(), 0.0);
                    (center + n * radius + Vec3::new(0.0, 0.0, z), n)
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let p = Vec3::new(r * theta.cos(), r * theta.sin(), sign * half_height);
                    (center + p, Vec3::new(0.0, 0.0, sign))
                }
            }
            Primitive::Ellipsoid { center, radii } => {
                let d = random_unit(rng);
                let p = d.component_mul(&radii);
                let n = d.component_div(&radii).normalize();
                (center + p, n)
            }
            Primitive::Capsule {
                center,
                radius,
                half_length,
            } => {
                let lateral = TAU * radius * 2.0 * half_length;
                let caps = 4.0 * std::f64::consts::PI * radius * radius;
                if rng.random::<f64>() * (lateral + caps) < lateral {
                    let theta = rng.random::<f64>() * TAU;
                    let z = rng.random_range(-half_length..=half_length);
                    let n = Vec3::new(theta.cos(), theta.sin(), 0.0);
                    (center + n * radius + Vec3::new(0.0, 0.0, z), n)
                } else {
                    let d = random_unit(rng);
                    let end = if d.z >= 0.0 { half_length } else { -half_length };
                    (center + Vec3::new(0.0, 0.0, end) + d * radius, d)
                }
            }
        }
    }
}

pub(crate) fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
        let n = v.norm_squared();
        if n > 1e-6 && n <= 1.0 {
            return v / n.sqrt();
        }
    }
}

/// Samples `count` points on the union of `parts`, area-weighted, keeping
/// only points not strictly inside another part.
fn sample_union<R: Rng + ?Sized>(parts: &[Primitive], count: usize, rng: &mut R) -> (Vec<Vec3>, Vec<Vec3>) {
    let areas: Vec<f64> = parts.iter().map(Primitive::area).collect();
    let total: f64 = areas.iter().sum();
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    while points.len() < count {
        let mut pick = rng.random::<f64>() * total;
        let mut idx = parts.len() - 1;
        for (k, a) in areas.iter().enumerate() {
            if pick < *a {
                idx = k;
                break;
            }
            pick -= a;
        }
        let (p, n) = parts[idx].sample(rng);
        if parts.iter().enumerate().any(|(j, q)| j != idx && q.contains(&p)) {
            continue;
        }
        points.push(p);
        normals.push(n);
    }
    (points, normals)
}

/// Box surface with its eight corners as the first samples.
pub fn box_surface<R: Rng + ?Sized>(extents: Vec3, count: usize, rng: &mut R) -> (Vec<Vec3>, Vec<Vec3>) {
    let half = extents / 2.0;
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for c in 0..8 {
        let s = Vec3::new(
            if c & 1 == 0 { -1.0 } else { 1.0 },
            if c & 2 == 0 { -1.0 } else { 1.0 },
            if c & 4 == 0 { -1.0 } else { 1.0 },
        );
        points.push(s.component_mul(&half));
        normals.push(s.normalize());
    }
    let (p, n) = sample_union(
        &[Primitive::Cuboid {
            center: Vec3::zeros(),
            half,
        }],
        count.saturating_sub(8),
        rng,
    );
    points.extend(p);
    normals.extend(n);
    (points, normals)
}

fn family_parts<R: Rng + ?Sized>(family: Family, rng: &mut R) -> Vec<Primitive> {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    match family {
        Family::Box => vec![Primitive::Cuboid {
            center: Vec3::zeros(),
            half: Vec3::new(u(0.15, 0.5), u(0.15, 0.5), u(0.15, 0.5)),
        }],
        Family::Cylinder => vec![Primitive::Cylinder {
            center: Vec3::zeros(),
            radius: u(0.12, 0.35),
            half_height: u(0.15, 0.5),
        }],
        Family::Ellipsoid => vec![Primitive::Ellipsoid {
            center: Vec3::zeros(),
            radii: Vec3::new(u(0.15, 0.5), u(0.15, 0.5), u(0.15, 0.5)),
        }],
        Family::Capsule => vec![Primitive::Capsule {
            center: Vec3::zeros(),
            radius: u(0.1, 0.25),
            half_length: u(0.15, 0.4),
        }],
        Family::Lshape => {
            let (lx, ly, lz) = (u(0.3, 0.5), u(0.1, 0.2), u(0.08, 0.15));
            let h = u(0.25, 0.45);
            vec![
                Primitive::Cuboid {
                    center: Vec3::zeros(),
                    half: Vec3::new(lx, ly, lz),
                },
                Primitive::Cuboid {
                    center: Vec3::new(lx - lz, 0.0, lz + h),
                    half: Vec3::new(lz, ly, h + 0.02),
                },
            ]
        }
        Family::Composite => {
            let r = u(0.1, 0.22);
            let hh = u(0.2, 0.4);
            let head = Vec3::new(u(0.15, 0.3), u(0.15, 0.3), u(0.1, 0.2));
            vec![
                Primitive::Cylinder {
                    center: Vec3::zeros(),
                    radius: r,
                    half_height: hh,
                },
                Primitive::Ellipsoid {
                    center: Vec3::new(0.0, 0.0, hh + 0.5 * head.z),
                    radii: head,
                },
            ]
        }
    }
}

/// Generates an object of the given family from `seed`.
///
/// The surface is rescaled so the diameter is uniform in
/// `[MIN_DIAMETER, MAX_DIAMETER]` and recentered on its centroid.
pub fn make_object(object_id: u32, family: Family, seed: u64) -> Result<ObjectModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut points, normals) = match family {
        Family::Box => {
            let extents = Vec3::new(
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
                rng.random_range(0.3..1.0),
            );
            box_surface(extents, MODEL_POINTS, &mut rng)
        }
        other => {
            let parts = family_parts(other, &mut rng);
            sample_union(&parts, MODEL_POINTS, &mut rng)
        }
    };
    let target = rng.random_range(MIN_DIAMETER..MAX_DIAMETER);
    let scale = target / diameter(&points);
    let c = centroid(&points);
    for p in &mut points {
        *p = (*p - c) * scale;
    }
    ObjectModel::from_surface(object_id, family, points, normals, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_diameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (p, n) = box_surface(Vec3::new(1.0, 1.0, 1.0), MODEL_POINTS, &mut rng);
        let obj = ObjectModel::from_surface(1, Family::Box, p, n, 0).unwrap();
        assert!((obj.diameter - 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn objects_are_deterministic_and_valid() {
        for (k, family) in Family::ALL.into_iter().enumerate() {
            let a = make_object(k as u32, family, 40 + k as u64).unwrap();
            let b = make_object(k as u32, family, 40 + k as u64).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.points.len(), MODEL_POINTS);
            assert!(a.normals.iter().all(|n| (n.norm() - 1.0).abs() < 1e-9));
            let mut brute = 0.0f64;
            for p in &a.points {
                for q in &a.points {
                    brute = brute.max((p - q).norm());
                }
            }
            assert!((a.diameter - brute).abs() < 1e-12);
            assert!(a.diameter >= MIN_DIAMETER - 1e-9 && a.diameter <= MAX_DIAMETER + 1e-9);
            assert!(centroid(&a.points).norm() < 1e-12);
            assert_eq!(a.keypoints, select_keypoints(&a.points, 40 + k as u64).unwrap());
        }
    }

    #[test]
    fn union_sampling_skips_interior_points() {
        let obj = make_object(3, Family::Lshape, 9).unwrap();
        assert_eq!(obj.points.len(), MODEL_POINTS);
        let obj = make_object(4, Family::Composite, 9).unwrap();
        assert_eq!(obj.points.len(), MODEL_POINTS);
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("sphere".parse::<Family>().is_err());
    }
}
