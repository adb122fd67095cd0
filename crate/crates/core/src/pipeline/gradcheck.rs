//! Finite-difference checks of every hand-written backward pass, on random
//! configurations with narrow layers so the full sweep stays fast.

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{task_gradient, Task};
use super::{DecoderKind, Networks, TrainConfig};
use crate::data::stream_seed;
use crate::geometry::{KeypointSet, Vec3, NUM_KEYPOINTS};
use crate::gnn::GnnDecoder;
use crate::meta::{
    decode_offsets_mlp_backward, decode_offsets_mlp_train, decode_segmentation_backward, decode_segmentation_train,
    encode_context_backward, encode_context_train, Aggregation, ContextSample, LatentGrad, LatentRep,
    ENCODER_INPUT_DIM, FEATURE_DIM,
};
use crate::nn::gradcheck::FD_STEP;
use crate::nn::{central_difference, fd_gradcheck, focal_loss, l1_offset_loss, max_relative_error, Activation, Mlp};
use crate::Result;

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub component: String,
    pub config: usize,
    pub max_rel_error: f64,
}

impl GradcheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

fn uniform2(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn uniform3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn context(rng: &mut ChaCha8Rng, m: usize) -> ContextSample {
    let seg_labels: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
    let mut offsets = uniform3(rng, (m, NUM_KEYPOINTS, 3));
    for (i, &s) in seg_labels.iter().enumerate() {
        if !s {
            offsets.index_axis_mut(ndarray::Axis(0), i).fill(0.0);
        }
    }
    ContextSample {
        features: uniform2(rng, (m, FEATURE_DIM)),
        offsets,
        seg_labels,
    }
}

fn latent(rng: &mut ChaCha8Rng, dz: usize) -> LatentRep {
    let z_kp = uniform2(rng, (NUM_KEYPOINTS, dz));
    let z_seg = Array1::from_iter(
        z_kp.columns()
            .into_iter()
            .map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b))),
    );
    LatentRep { z_kp, z_seg }
}

fn keypoints(rng: &mut ChaCha8Rng) -> KeypointSet {
    let pts = (0..NUM_KEYPOINTS)
        .map(|_| {
            Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            )
        })
        .collect();
    KeypointSet::new(pts).expect("random keypoints are distinct")
}

fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.random_bool(0.3)).collect()
}

fn check_encoder(rng: &mut ChaCha8Rng, mode: Aggregation) -> Result<f64> {
    let h = rng.random_range(4..=8);
    let mut enc = Mlp::new(&[ENCODER_INPUT_DIM, h, h, h], Activation::Relu, rng)?;
    let contexts: Vec<ContextSample> = (0..rng.random_range(1..=3))
        .map(|_| {
            let m = rng.random_range(2..=4);
            context(rng, m)
        })
        .collect();
    let w = LatentGrad {
        z_kp: uniform2(rng, (NUM_KEYPOINTS, h)),
        z_seg: Array1::from_shape_fn(h, |_| rng.random_range(-1.0..1.0)),
    };
    Ok(fd_gradcheck(&mut enc, |e: &Mlp| {
        let (lat, cache) = encode_context_train(e, &contexts, mode).expect("valid shapes");
        let g = encode_context_backward(e, &cache, &w).expect("valid shapes");
        (
            (&lat.z_kp * &w.z_kp).sum() + (&lat.z_seg * &w.z_seg).sum(),
            g.slices().concat(),
        )
    }))
}

fn check_segmenter(rng: &mut ChaCha8Rng) -> Result<f64> {
    let h = rng.random_range(4..=8);
    let mut seg = Mlp::new(&[FEATURE_DIM + h, h, h, h, 2], Activation::Linear, rng)?;
    let n = rng.random_range(3..=8);
    let x = uniform2(rng, (n, FEATURE_DIM));
    let lat = latent(rng, h);
    let y = labels(rng, n);
    let loss = |s: &Mlp, lat: &LatentRep| {
        let (logits, cache) = decode_segmentation_train(s, x.view(), lat).expect("valid shapes");
        let (l, g) = focal_loss(logits.view(), &y, 0.25, 2.0).expect("valid shapes");
        (l, cache, g)
    };
    let params = fd_gradcheck(&mut seg, |s: &Mlp| {
        let (l, cache, g) = loss(s, &lat);
        let (grads, _) = decode_segmentation_backward(s, &cache, g.view()).expect("valid shapes");
        (l, grads.slices().concat())
    });
    let (_, cache, g) = loss(&seg, &lat);
    let (_, gz) = decode_segmentation_backward(&seg, &cache, g.view())?;
    let numeric = central_difference(
        |z| {
            let lat = LatentRep {
                z_kp: lat.z_kp.clone(),
                z_seg: Array1::from_vec(z.to_vec()),
            };
            loss(&seg, &lat).0
        },
        lat.z_seg.as_slice().expect("contiguous"),
        FD_STEP,
    );
    Ok(params.max(max_relative_error(gz.as_slice().expect("contiguous"), &numeric)))
}

fn check_mlp_decoder(rng: &mut ChaCha8Rng) -> Result<f64> {
    let h = rng.random_range(4..=8);
    let mut dec = Mlp::new(&[FEATURE_DIM + h, h, h, h, h, h, 3], Activation::Linear, rng)?;
    let m = rng.random_range(1..=4);
    let x = uniform2(rng, (m, FEATURE_DIM));
    let lat = latent(rng, h);
    let gt = uniform3(rng, (m, NUM_KEYPOINTS, 3));
    let mask = vec![true; m];
    let loss = |d: &Mlp, lat: &LatentRep| {
        let (pred, cache) = decode_offsets_mlp_train(d, x.view(), lat).expect("valid shapes");
        let (l, g) = l1_offset_loss(pred.view(), gt.view(), &mask).expect("valid shapes");
        (l, cache, g)
    };
    let params = fd_gradcheck(&mut dec, |d: &Mlp| {
        let (l, cache, g) = loss(d, &lat);
        (
            l,
            decode_offsets_mlp_backward(d, &cache, &g)
                .expect("valid shapes")
                .0
                .slices()
                .concat(),
        )
    });
    let (_, cache, g) = loss(&dec, &lat);
    let (_, gz) = decode_offsets_mlp_backward(&dec, &cache, &g)?;
    let numeric = central_difference(
        |z| {
            let lat = LatentRep {
                z_kp: Array2::from_shape_vec(lat.z_kp.raw_dim(), z.to_vec()).expect("same size"),
                z_seg: lat.z_seg.clone(),
            };
            loss(&dec, &lat).0
        },
        lat.z_kp.as_slice().expect("contiguous"),
        FD_STEP,
    );
    Ok(params.max(max_relative_error(gz.as_slice().expect("contiguous"), &numeric)))
}

fn check_gnn(rng: &mut ChaCha8Rng, config: usize) -> Result<f64> {
    let h = rng.random_range(4..=8);
    let k = 1 + config % (NUM_KEYPOINTS - 1);
    let mut dec = GnnDecoder::with_dims(FEATURE_DIM, h, h, k, rng)?;
    let m = rng.random_range(1..=3);
    let x = uniform2(rng, (m, FEATURE_DIM));
    let lat = latent(rng, h);
    let kps = keypoints(rng);
    let gt = uniform3(rng, (m, NUM_KEYPOINTS, 3));
    let mask = vec![true; m];
    let loss = |d: &GnnDecoder, lat: &LatentRep| {
        let (pred, cache) = d.decode_train(x.view(), lat, &kps).expect("valid shapes");
        let (l, g) = l1_offset_loss(pred.view(), gt.view(), &mask).expect("valid shapes");
        (l, cache, g)
    };
    let params = fd_gradcheck(&mut dec, |d: &GnnDecoder| {
        let (l, cache, g) = loss(d, &lat);
        (l, d.backward(&cache, &g).expect("valid shapes").0.slices().concat())
    });
    let (_, cache, g) = loss(&dec, &lat);
    let (_, gz) = dec.backward(&cache, &g)?;
    let numeric = central_difference(
        |z| {
            let lat = LatentRep {
                z_kp: Array2::from_shape_vec(lat.z_kp.raw_dim(), z.to_vec()).expect("same size"),
                z_seg: lat.z_seg.clone(),
            };
            loss(&dec, &lat).0
        },
        lat.z_kp.as_slice().expect("contiguous"),
        FD_STEP,
    );
    Ok(params.max(max_relative_error(gz.as_slice().expect("contiguous"), &numeric)))
}

fn check_focal(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(2..=10);
    let logits = Array2::from_shape_fn((n, 2), |_| rng.random_range(-3.0..3.0));
    let y = labels(rng, n);
    let gamma = rng.random_range(0.0..3.0);
    let (_, g) = focal_loss(logits.view(), &y, 0.25, gamma)?;
    let numeric = central_difference(
        |v| {
            focal_loss(ArrayView2::from_shape((n, 2), v).expect("same size"), &y, 0.25, gamma)
                .expect("valid shapes")
                .0
        },
        logits.as_slice().expect("contiguous"),
        FD_STEP,
    );
    Ok(max_relative_error(g.as_slice().expect("contiguous"), &numeric))
}

fn check_l1(rng: &mut ChaCha8Rng) -> Result<f64> {
    let m = rng.random_range(1..=6);
    let pred = uniform3(rng, (m, NUM_KEYPOINTS, 3));
    let gt = uniform3(rng, (m, NUM_KEYPOINTS, 3));
    let mut mask: Vec<bool> = (0..m).map(|_| rng.random_bool(0.7)).collect();
    mask[0] = true;
    let (_, g) = l1_offset_loss(pred.view(), gt.view(), &mask)?;
    let dim = pred.raw_dim();
    let numeric = central_difference(
        |v| {
            l1_offset_loss(
                ArrayView3::from_shape(dim.clone(), v).expect("same size"),
                gt.view(),
                &mask,
            )
            .expect("valid shapes")
            .0
        },
        pred.as_slice().expect("contiguous"),
        FD_STEP,
    );
    Ok(max_relative_error(g.as_slice().expect("contiguous"), &numeric))
}

/// Whole training loss: encoder through aggregation, both heads and the
/// weighted loss sum.
fn check_composition(rng: &mut ChaCha8Rng, config: usize) -> Result<f64> {
    let cfg = TrainConfig {
        hidden: rng.random_range(4..=6),
        decoder: if config % 2 == 0 {
            DecoderKind::Gnn
        } else {
            DecoderKind::Mlp
        },
        aggregation: if config % 4 < 2 {
            Aggregation::Max
        } else {
            Aggregation::Mean
        },
        k_neighbors: 1 + config % 8,
        ..TrainConfig::default()
    };
    let mut nets = Networks::new(&cfg, rng)?;
    let n = rng.random_range(3..=6);
    let m = rng.random_range(1..=3);
    let task = Task {
        contexts: (0..2).map(|_| context(rng, 3)).collect(),
        seg_features: uniform2(rng, (n, FEATURE_DIM)),
        seg_labels: labels(rng, n),
        obj_features: uniform2(rng, (m, FEATURE_DIM)),
        obj_offsets: uniform3(rng, (m, NUM_KEYPOINTS, 3)),
        keypoints: keypoints(rng),
    };
    Ok(fd_gradcheck(&mut nets, |n: &Networks| {
        let (seg, kp, grads) = task_gradient(n, &task, &cfg).expect("valid shapes");
        (cfg.weights.combine(seg, kp), grads.concat())
    }))
}

/// Runs every check on `configs` random configurations each.
pub fn gradcheck_suite(configs: usize) -> Result<Vec<GradcheckEntry>> {
    type Check = fn(&mut ChaCha8Rng, usize) -> Result<f64>;
    let checks: [(&str, Check); 8] = [
        ("encoder/max", |r, _| check_encoder(r, Aggregation::Max)),
        ("encoder/mean", |r, _| check_encoder(r, Aggregation::Mean)),
        ("segmenter+focal", |r, _| check_segmenter(r)),
        ("mlp_decoder+l1", |r, _| check_mlp_decoder(r)),
        ("gnn_decoder+l1", check_gnn),
        ("focal", |r, _| check_focal(r)),
        ("l1", |r, _| check_l1(r)),
        ("full_loss", check_composition),
    ];
    let mut out = Vec::new();
    for (tag, (name, check)) in checks.iter().enumerate() {
        for config in 0..configs {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[tag as u64, config as u64, 0x9c]));
            out.push(GradcheckEntry {
                component: (*name).to_string(),
                config,
                max_rel_error: check(&mut rng, config)?,
            });
        }
    }
    Ok(out)
}
