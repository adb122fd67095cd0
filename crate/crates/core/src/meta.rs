//! Conditional neural process: context encoding, latent aggregation,
//! conditional segmentation and the plain MLP keypoint-offset decoder.
//!
//! Every forward function has a `*_train` variant that records what the
//! matching `*_backward` needs. Gradients with respect to the latent are
//! returned as a [`LatentGrad`] so the caller can push them back through
//! [`encode_context_backward`].

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::geometry::{KeypointSet, Pose, NUM_KEYPOINTS};
use crate::nn::{Mlp, MlpCache, MlpGrads};
use crate::{Error, Result};

/// Per-seed feature width produced by the scene generator.
pub const FEATURE_DIM: usize = 16;
/// Width of the latent representations (and of all hidden layers).
pub const LATENT_DIM: usize = 128;
/// Encoder input: features ⊕ offset to one keypoint ⊕ segmentation label.
pub const ENCODER_INPUT_DIM: usize = FEATURE_DIM + 3 + 1;

/// Labeled sample from one context image.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSample {
    /// `M_c × d_x`.
    pub features: Array2<f64>,
    /// `M_c × M_k × 3`; zero for background seeds.
    pub offsets: Array3<f64>,
    pub seg_labels: Vec<bool>,
}

/// Sample from one target image. The ground-truth fields are only used for
/// losses and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSample {
    /// `M_t × d_x`.
    pub features: Array2<f64>,
    /// `M_t × 3`, camera frame.
    pub seed_positions: Array2<f64>,
    pub gt_seg: Vec<bool>,
    /// `M_t × M_k × 3`.
    pub gt_offsets: Array3<f64>,
    pub gt_pose: Pose,
}

impl ContextSample {
    pub fn len(&self) -> usize {
        self.seg_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seg_labels.is_empty()
    }

    /// Keeps only the given seed rows.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            offsets: self.offsets.select(Axis(0), rows),
            seg_labels: rows.iter().map(|&r| self.seg_labels[r]).collect(),
        }
    }
}

impl TargetSample {
    pub fn len(&self) -> usize {
        self.gt_seg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt_seg.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            seed_positions: self.seed_positions.select(Axis(0), rows),
            gt_seg: rows.iter().map(|&r| self.gt_seg[r]).collect(),
            gt_offsets: self.gt_offsets.select(Axis(0), rows),
            gt_pose: self.gt_pose,
        }
    }
}

/// One task: labeled contexts and targets of a single queried object.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub object_id: u32,
    pub contexts: Vec<ContextSample>,
    pub targets: Vec<TargetSample>,
    pub keypoints: KeypointSet,
    pub diameter: f64,
}

/// Per-keypoint latents and the segmentation latent (`z_seg[j] = max_u z_kp[u][j]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRep {
    /// `M_k × d_z`.
    pub z_kp: Array2<f64>,
    pub z_seg: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrad {
    pub z_kp: Array2<f64>,
    pub z_seg: Array1<f64>,
}

impl LatentGrad {
    pub fn zeros(num_keypoints: usize, dim: usize) -> Self {
        Self {
            z_kp: Array2::zeros((num_keypoints, dim)),
            z_seg: Array1::zeros(dim),
        }
    }

    pub fn add_assign(&mut self, other: &LatentGrad) {
        self.z_kp += &other.z_kp;
        self.z_seg += &other.z_seg;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            other => Err(Error::invalid(format!("unknown aggregation '{other}'"))),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Max => "max",
            Self::Mean => "mean",
        })
    }
}

/// Elementwise max or mean over the rows of `embeddings`.
pub fn aggregate(embeddings: ArrayView2<f64>, mode: Aggregation) -> Result<Array1<f64>> {
    if embeddings.nrows() == 0 {
        return Err(Error::invalid("cannot aggregate zero embeddings"));
    }
    Ok(match mode {
        Aggregation::Max => column_argmax(embeddings).1,
        Aggregation::Mean => embeddings.mean_axis(Axis(0)).expect("non-empty"),
    })
}

/// Per-column maximum and the first row attaining it.
pub(crate) fn column_argmax(x: ArrayView2<f64>) -> (Vec<usize>, Array1<f64>) {
    let mut idx = vec![0usize; x.ncols()];
    let mut best = x.row(0).to_owned();
    for (r, row) in x.outer_iter().enumerate().skip(1) {
        for (j, &v) in row.iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                idx[j] = r;
            }
        }
    }
    (idx, best)
}

/// Builds encoder rows ordered by (context image, seed, keypoint).
fn encoder_rows(contexts: &[ContextSample]) -> Result<Array2<f64>> {
    let total: usize = contexts.iter().map(ContextSample::len).sum();
    let mut rows = Array2::zeros((total * NUM_KEYPOINTS, ENCODER_INPUT_DIM));
    let mut r = 0;
    for (c, ctx) in contexts.iter().enumerate() {
        let m = ctx.len();
        if ctx.features.dim() != (m, FEATURE_DIM) || ctx.offsets.dim() != (m, NUM_KEYPOINTS, 3) {
            return Err(Error::invalid(format!(
                "context {c} has features {:?} and offsets {:?}; expected ({m}, {FEATURE_DIM}) and ({m}, {NUM_KEYPOINTS}, 3)",
                ctx.features.dim(),
                ctx.offsets.dim()
            )));
        }
        for i in 0..m {
            let seg = if ctx.seg_labels[i] { 1.0 } else { 0.0 };
            for u in 0..NUM_KEYPOINTS {
                let mut row = rows.row_mut(r);
                row.slice_mut(s![..FEATURE_DIM]).assign(&ctx.features.row(i));
                row.slice_mut(s![FEATURE_DIM..FEATURE_DIM + 3])
                    .assign(&ctx.offsets.slice(s![i, u, ..]));
                row[FEATURE_DIM + 3] = seg;
                r += 1;
            }
        }
    }
    Ok(rows)
}

fn check_contexts(encoder: &Mlp, contexts: &[ContextSample]) -> Result<()> {
    if contexts.is_empty() {
        return Err(Error::invalid("at least one context sample is required"));
    }
    if contexts.iter().all(ContextSample::is_empty) {
        return Err(Error::invalid("context samples contain no seed points"));
    }
    if encoder.input_dim() != ENCODER_INPUT_DIM {
        return Err(Error::invalid(format!(
            "encoder input width {} != {ENCODER_INPUT_DIM}",
            encoder.input_dim()
        )));
    }
    Ok(())
}

/// Saved state of [`encode_context_train`].
#[derive(Debug, Clone)]
pub struct EncoderCache {
    mlp: MlpCache,
    mode: Aggregation,
    num_rows: usize,
    /// `[u][j]` → row (among rows for keypoint `u`) attaining the max.
    kp_argmax: Vec<Vec<usize>>,
    /// `[j]` → keypoint attaining the max.
    seg_argmax: Vec<usize>,
}

fn aggregate_embeddings(r: &Array2<f64>, mode: Aggregation) -> (LatentRep, Vec<Vec<usize>>, Vec<usize>) {
    let dz = r.ncols();
    let per_kp = r.nrows() / NUM_KEYPOINTS;
    let mut z_kp = Array2::zeros((NUM_KEYPOINTS, dz));
    let mut kp_argmax = Vec::with_capacity(NUM_KEYPOINTS);
    for u in 0..NUM_KEYPOINTS {
        let rows = r.slice(s![u..;NUM_KEYPOINTS, ..]);
        match mode {
            Aggregation::Max => {
                let (idx, best) = column_argmax(rows);
                z_kp.row_mut(u).assign(&best);
                kp_argmax.push(idx);
            }
            Aggregation::Mean => {
                z_kp.row_mut(u).assign(&(rows.sum_axis(Axis(0)) / per_kp as f64));
                kp_argmax.push(Vec::new());
            }
        }
    }
    let (seg_argmax, z_seg) = column_argmax(z_kp.view());
    (LatentRep { z_kp, z_seg }, kp_argmax, seg_argmax)
}

/// Encodes every (seed, keypoint) pair of every context and aggregates over
/// all context images and seeds jointly; `z_seg` is the max over keypoints.
pub fn encode_context(encoder: &Mlp, contexts: &[ContextSample], mode: Aggregation) -> Result<LatentRep> {
    check_contexts(encoder, contexts)?;
    let r = encoder.forward(encoder_rows(contexts)?.view())?;
    Ok(aggregate_embeddings(&r, mode).0)
}

pub fn encode_context_train(
    encoder: &Mlp,
    contexts: &[ContextSample],
    mode: Aggregation,
) -> Result<(LatentRep, EncoderCache)> {
    check_contexts(encoder, contexts)?;
    let (r, mlp) = encoder.forward_train(encoder_rows(contexts)?)?;
    let (latent, kp_argmax, seg_argmax) = aggregate_embeddings(&r, mode);
    Ok((
        latent,
        EncoderCache {
            mlp,
            mode,
            num_rows: r.nrows(),
            kp_argmax,
            seg_argmax,
        },
    ))
}

/// Routes latent gradients back through both aggregations and the encoder.
/// Max aggregation sends each coordinate's gradient to its first argmax.
pub fn encode_context_backward(encoder: &Mlp, cache: &EncoderCache, grad: &LatentGrad) -> Result<MlpGrads> {
    let dz = encoder.output_dim();
    let mut g_kp = grad.z_kp.clone();
    for (j, &u) in cache.seg_argmax.iter().enumerate() {
        g_kp[[u, j]] += grad.z_seg[j];
    }
    let per_kp = cache.num_rows / NUM_KEYPOINTS;
    let mut g_r = Array2::zeros((cache.num_rows, dz));
    for u in 0..NUM_KEYPOINTS {
        match cache.mode {
            Aggregation::Max => {
                for (j, &row) in cache.kp_argmax[u].iter().enumerate() {
                    g_r[[row * NUM_KEYPOINTS + u, j]] += g_kp[[u, j]];
                }
            }
            Aggregation::Mean => {
                let share = g_kp.row(u).mapv(|g| g / per_kp as f64);
                for row in 0..per_kp {
                    g_r.row_mut(row * NUM_KEYPOINTS + u).assign(&share);
                }
            }
        }
    }
    Ok(encoder.backward(&cache.mlp, g_r.view())?.0)
}

fn concat_latent(x: ArrayView2<f64>, z: ndarray::ArrayView1<f64>) -> Array2<f64> {
    let (n, dx) = x.dim();
    let mut rows = Array2::zeros((n, dx + z.len()));
    rows.slice_mut(s![.., ..dx]).assign(&x);
    rows.slice_mut(s![.., dx..]).assign(&z.broadcast((n, z.len())).unwrap());
    rows
}

fn check_decoder(net: &Mlp, features: &ArrayView2<f64>, latent: &LatentRep, what: &str) -> Result<()> {
    let expected = features.ncols() + latent.z_seg.len();
    if net.input_dim() != expected {
        return Err(Error::invalid(format!(
            "{what} input width {} != features {} + latent {}",
            net.input_dim(),
            features.ncols(),
            latent.z_seg.len()
        )));
    }
    Ok(())
}

/// Argmax over two logits; equal logits count as background.
pub fn predictions_from_logits(logits: ArrayView2<f64>) -> Vec<bool> {
    logits.outer_iter().map(|r| r[1] > r[0]).collect()
}

/// Per-point two-class logits `g_S(x_t,i ⊕ z_seg)` and the resulting masks.
pub fn decode_segmentation(
    seg_net: &Mlp,
    target_features: ArrayView2<f64>,
    latent: &LatentRep,
) -> Result<(Array2<f64>, Vec<bool>)> {
    check_decoder(seg_net, &target_features, latent, "segmentation decoder")?;
    let logits = seg_net.forward(concat_latent(target_features, latent.z_seg.view()).view())?;
    let pred = predictions_from_logits(logits.view());
    Ok((logits, pred))
}

pub fn decode_segmentation_train(
    seg_net: &Mlp,
    target_features: ArrayView2<f64>,
    latent: &LatentRep,
) -> Result<(Array2<f64>, MlpCache)> {
    check_decoder(seg_net, &target_features, latent, "segmentation decoder")?;
    seg_net.forward_train(concat_latent(target_features, latent.z_seg.view()))
}

/// Returns parameter gradients and `d loss / d z_seg`.
pub fn decode_segmentation_backward(
    seg_net: &Mlp,
    cache: &MlpCache,
    grad_logits: ArrayView2<f64>,
) -> Result<(MlpGrads, Array1<f64>)> {
    let (g, gx) = seg_net.backward(cache, grad_logits)?;
    let dz = seg_net.input_dim() - FEATURE_DIM;
    Ok((g, gx.slice(s![.., gx.ncols() - dz..]).sum_axis(Axis(0))))
}

/// Object-point subset of a target: features and camera-frame positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPoints {
    pub indices: Vec<usize>,
    pub features: Array2<f64>,
    pub positions: Array2<f64>,
}

/// Keeps the seeds marked as the queried object, either by `predictions` or
/// (when `use_gt` is set) by the target's ground-truth segmentation.
pub fn select_object_points(target: &TargetSample, predictions: &[bool], use_gt: bool) -> Result<ObjectPoints> {
    let mask = if use_gt { &target.gt_seg[..] } else { predictions };
    if mask.len() != target.len() {
        return Err(Error::invalid(format!(
            "mask has {} entries for {} seeds",
            mask.len(),
            target.len()
        )));
    }
    let indices: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    if indices.is_empty() {
        return Err(Error::EmptySelection(
            "no seed point was segmented as the queried object".into(),
        ));
    }
    Ok(ObjectPoints {
        features: target.features.select(Axis(0), &indices),
        positions: target.seed_positions.select(Axis(0), &indices),
        indices,
    })
}

/// Rows ordered by (point, keypoint): `x_obj,i ⊕ z_kp^u`.
fn offset_rows(x_obj: ArrayView2<f64>, latent: &LatentRep) -> Array2<f64> {
    let (m, dx) = x_obj.dim();
    let dz = latent.z_kp.ncols();
    let mut rows = Array2::zeros((m * NUM_KEYPOINTS, dx + dz));
    for i in 0..m {
        for u in 0..NUM_KEYPOINTS {
            let mut row = rows.row_mut(i * NUM_KEYPOINTS + u);
            row.slice_mut(s![..dx]).assign(&x_obj.row(i));
            row.slice_mut(s![dx..]).assign(&latent.z_kp.row(u));
        }
    }
    rows
}

fn check_mlp_decoder(decoder: &Mlp, x_obj: &ArrayView2<f64>, latent: &LatentRep) -> Result<()> {
    check_decoder(decoder, x_obj, latent, "keypoint decoder")?;
    if decoder.output_dim() != 3 {
        return Err(Error::invalid("keypoint decoder must output 3 values"));
    }
    Ok(())
}

/// `y_of,i^u = g_K(x_obj,i ⊕ z_kp^u)` for every object point and keypoint.
pub fn decode_offsets_mlp(decoder: &Mlp, x_obj: ArrayView2<f64>, latent: &LatentRep) -> Result<Array3<f64>> {
    check_mlp_decoder(decoder, &x_obj, latent)?;
    let out = decoder.forward(offset_rows(x_obj, latent).view())?;
    Ok(out
        .into_shape_with_order((x_obj.nrows(), NUM_KEYPOINTS, 3))
        .expect("row-major output"))
}

pub fn decode_offsets_mlp_train(
    decoder: &Mlp,
    x_obj: ArrayView2<f64>,
    latent: &LatentRep,
) -> Result<(Array3<f64>, MlpCache)> {
    check_mlp_decoder(decoder, &x_obj, latent)?;
    let (out, cache) = decoder.forward_train(offset_rows(x_obj, latent))?;
    let out = out
        .into_shape_with_order((x_obj.nrows(), NUM_KEYPOINTS, 3))
        .expect("row-major output");
    Ok((out, cache))
}

/// Returns parameter gradients and `d loss / d z_kp`.
pub fn decode_offsets_mlp_backward(
    decoder: &Mlp,
    cache: &MlpCache,
    grad_offsets: &Array3<f64>,
) -> Result<(MlpGrads, Array2<f64>)> {
    let m = grad_offsets.dim().0;
    let g = grad_offsets
        .view()
        .into_shape_with_order((m * NUM_KEYPOINTS, 3))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let (grads, gx) = decoder.backward(cache, g)?;
    let dz = decoder.input_dim() - FEATURE_DIM;
    let mut gz = Array2::zeros((NUM_KEYPOINTS, dz));
    for (r, row) in gx.outer_iter().enumerate() {
        let mut dst = gz.row_mut(r % NUM_KEYPOINTS);
        dst += &row.slice(s![FEATURE_DIM..]);
    }
    Ok((grads, gz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_context(rng: &mut ChaCha8Rng, m: usize) -> ContextSample {
        let seg_labels: Vec<bool> = (0..m).map(|_| rng.random_bool(0.4)).collect();
        let mut offsets = Array3::from_shape_fn((m, NUM_KEYPOINTS, 3), |_| rng.random_range(-1.0..1.0));
        for (i, &s) in seg_labels.iter().enumerate() {
            if !s {
                offsets.slice_mut(s![i, .., ..]).fill(0.0);
            }
        }
        ContextSample {
            features: Array2::from_shape_fn((m, FEATURE_DIM), |_| rng.random_range(-1.0..1.0)),
            offsets,
            seg_labels,
        }
    }

    fn encoder(rng: &mut ChaCha8Rng) -> Mlp {
        Mlp::new(&[ENCODER_INPUT_DIM, 32, 32, 24], Activation::Relu, rng).unwrap()
    }

    #[test]
    fn single_seed_latent_is_its_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = encoder(&mut rng);
        let ctx = random_context(&mut rng, 1);
        let lat = encode_context(&enc, &[ctx.clone()], Aggregation::Max).unwrap();
        let r = enc.forward(encoder_rows(&[ctx]).unwrap().view()).unwrap();
        assert_eq!(lat.z_kp, r);
    }

    #[test]
    fn duplicate_and_permuted_contexts_are_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = encoder(&mut rng);
        let a = random_context(&mut rng, 7);
        let b = random_context(&mut rng, 5);
        let base = encode_context(&enc, &[a.clone(), b.clone()], Aggregation::Max).unwrap();
        let dup = encode_context(&enc, &[a.clone(), b.clone(), a.clone()], Aggregation::Max).unwrap();
        assert_eq!(base, dup);
        let rev_rows: Vec<usize> = (0..7).rev().collect();
        let perm = encode_context(&enc, &[b.clone(), a.select(&rev_rows)], Aggregation::Max).unwrap();
        assert_eq!(base, perm);
        for j in 0..base.z_seg.len() {
            let m = base.z_kp.column(j).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            assert_eq!(base.z_seg[j], m);
        }
    }

    #[test]
    fn adding_context_never_decreases_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = encoder(&mut rng);
        let a = random_context(&mut rng, 6);
        let b = random_context(&mut rng, 6);
        let one = encode_context(&enc, &[a.clone()], Aggregation::Max).unwrap();
        let two = encode_context(&enc, &[a, b], Aggregation::Max).unwrap();
        assert!(two.z_kp.iter().zip(one.z_kp.iter()).all(|(x, y)| x >= y));
        assert!(two.z_seg.iter().zip(one.z_seg.iter()).all(|(x, y)| x >= y));
    }

    #[test]
    fn encode_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = encoder(&mut rng);
        assert!(encode_context(&enc, &[], Aggregation::Max).is_err());
        let wrong = Mlp::new(&[10, 8], Activation::Relu, &mut rng).unwrap();
        assert!(encode_context(&wrong, &[random_context(&mut rng, 2)], Aggregation::Max).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let x = array![[1.0, -2.0], [3.0, 0.0]];
        assert_eq!(aggregate(x.view(), Aggregation::Max).unwrap(), array![3.0, 0.0]);
        assert_eq!(aggregate(x.view(), Aggregation::Mean).unwrap(), array![2.0, -1.0]);
        let one = array![[0.5, 0.25]];
        assert_eq!(aggregate(one.view(), Aggregation::Max).unwrap(), array![0.5, 0.25]);
        assert_eq!(aggregate(one.view(), Aggregation::Mean).unwrap(), array![0.5, 0.25]);
        assert!(aggregate(Array2::<f64>::zeros((0, 2)).view(), Aggregation::Max).is_err());
    }

    fn latent(rng: &mut ChaCha8Rng, dz: usize) -> LatentRep {
        let z_kp = Array2::from_shape_fn((NUM_KEYPOINTS, dz), |_| rng.random_range(-1.0..1.0));
        let z_seg = z_kp.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
        LatentRep { z_kp, z_seg }
    }

    #[test]
    fn segmentation_is_pointwise_and_ties_go_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lat = latent(&mut rng, 8);
        let net = Mlp::new(&[FEATURE_DIM + 8, 16, 2], Activation::Linear, &mut rng).unwrap();
        let row = Array2::from_shape_fn((1, FEATURE_DIM), |_| rng.random_range(-1.0..1.0));
        let x = ndarray::concatenate(Axis(0), &[row.view(), row.view(), row.view()]).unwrap();
        let (logits, _) = decode_segmentation(&net, x.view(), &lat).unwrap();
        assert_eq!(logits.row(0), logits.row(2));

        let zero = Mlp::zeros(&[FEATURE_DIM + 8, 16, 2], Activation::Linear).unwrap();
        let (logits, pred) = decode_segmentation(&zero, x.view(), &lat).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        assert!(pred.iter().all(|&p| !p));
        let bad = Mlp::zeros(&[FEATURE_DIM, 2], Activation::Linear).unwrap();
        assert!(decode_segmentation(&bad, x.view(), &lat).is_err());
    }

    fn target(rng: &mut ChaCha8Rng, m: usize) -> TargetSample {
        TargetSample {
            features: Array2::from_shape_fn((m, FEATURE_DIM), |_| rng.random_range(-1.0..1.0)),
            seed_positions: Array2::from_shape_fn((m, 3), |_| rng.random_range(-1.0..1.0)),
            gt_seg: (0..m).map(|i| i % 3 == 0).collect(),
            gt_offsets: Array3::zeros((m, NUM_KEYPOINTS, 3)),
            gt_pose: Pose::identity(),
        }
    }

    #[test]
    fn select_object_points_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = target(&mut rng, 9);
        let all = select_object_points(&t, &[true; 9], false).unwrap();
        assert_eq!(all.features, t.features);
        assert_eq!(all.positions, t.seed_positions);
        assert!(matches!(
            select_object_points(&t, &[false; 9], false),
            Err(Error::EmptySelection(_))
        ));
        let gt = select_object_points(&t, &[false; 9], true).unwrap();
        assert_eq!(gt.indices, vec![0, 3, 6]);
    }

    #[test]
    fn mlp_offsets_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dz = 12;
        let lat = latent(&mut rng, dz);
        let dec = Mlp::new(&[FEATURE_DIM + dz, 20, 20, 3], Activation::Linear, &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, FEATURE_DIM), |_| rng.random_range(-1.0..1.0));
        let out = decode_offsets_mlp(&dec, x.view(), &lat).unwrap();
        for i in 0..5 {
            for u in 0..NUM_KEYPOINTS {
                let row = ndarray::concatenate(Axis(0), &[x.row(i), lat.z_kp.row(u)]).unwrap();
                let single = dec.forward(row.insert_axis(Axis(0)).view()).unwrap();
                for d in 0..3 {
                    assert!((out[[i, u, d]] - single[[0, d]]).abs() < 1e-12);
                }
            }
        }
        let zero = Mlp::zeros(&[FEATURE_DIM + dz, 20, 3], Activation::Linear).unwrap();
        assert!(decode_offsets_mlp(&zero, x.view(), &lat)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let dup = ndarray::concatenate(Axis(0), &[x.slice(s![0..1, ..]), x.slice(s![0..1, ..])]).unwrap();
        let o = decode_offsets_mlp(&dec, dup.view(), &lat).unwrap();
        assert_eq!(o.slice(s![0, .., ..]), o.slice(s![1, .., ..]));
    }
}
