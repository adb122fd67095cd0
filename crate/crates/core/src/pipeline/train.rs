use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Array2, Array3, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Checkpoint, KeypointDecoder, Networks, TrainConfig, CHECKPOINT_VERSION};
use crate::data::{partition_scenes, stream_seed, Dataset, Split};
use crate::geometry::KeypointSet;
use crate::meta::{
    decode_offsets_mlp_backward, decode_offsets_mlp_train, decode_segmentation_backward, decode_segmentation_train,
    encode_context_backward, encode_context_train, ContextSample, LatentGrad,
};
use crate::nn::{focal_loss, l1_offset_loss, AdamState, Parameters};
use crate::{Error, Result};

/// Losses of one training iteration, averaged over its objects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub segmentation: f64,
    pub offsets: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Vec<LossRecord>,
}

/// Subsampled training data of one object for one iteration.
#[derive(Debug, Clone)]
pub(crate) struct Task {
    pub contexts: Vec<ContextSample>,
    pub seg_features: Array2<f64>,
    pub seg_labels: Vec<bool>,
    pub obj_features: Array2<f64>,
    pub obj_offsets: Array3<f64>,
    pub keypoints: KeypointSet,
}

/// `count` sorted row indices out of `n` (all of them when `count ≥ n`).
pub(crate) fn subsample<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    let mut rows = index::sample(rng, n, count).into_vec();
    rows.sort_unstable();
    rows
}

pub(crate) fn build_task<R: Rng + ?Sized>(dataset: &Dataset, id: u32, cfg: &TrainConfig, rng: &mut R) -> Result<Task> {
    let object = dataset
        .object(id)
        .ok_or_else(|| Error::invalid(format!("object {id} is missing")))?;
    let all = dataset.scenes_of(id, false);
    if all.len() < cfg.scenes_per_object {
        return Err(Error::invalid(format!(
            "object {id} has {} scenes, the config asks for {}",
            all.len(),
            cfg.scenes_per_object
        )));
    }
    let scenes = &all[..cfg.scenes_per_object];
    let plan = partition_scenes(scenes.len(), None, rng)?;

    let contexts = plan
        .contexts
        .iter()
        .map(|&c| {
            let rows = subsample(scenes[c].len(), cfg.context_seeds, rng);
            scenes[c].to_context().select(&rows)
        })
        .collect();

    let picked = subsample(plan.targets.len(), cfg.targets_per_object, rng);
    let mut seg_x = Vec::new();
    let mut seg_y = Vec::new();
    let mut obj_x = Vec::new();
    let mut obj_off = Vec::new();
    for &t in &picked {
        let scene = scenes[plan.targets[t]];
        let rows = subsample(scene.len(), cfg.target_seeds, rng);
        seg_x.push(scene.features.select(Axis(0), &rows));
        seg_y.extend(rows.iter().map(|&r| scene.seg[r]));
        let object_rows = scene.object_rows();
        let chosen: Vec<usize> = subsample(object_rows.len(), cfg.object_points, rng)
            .into_iter()
            .map(|j| object_rows[j])
            .collect();
        obj_x.push(scene.features.select(Axis(0), &chosen));
        obj_off.push(scene.offsets.select(Axis(0), &chosen));
    }
    let cat2 = |v: Vec<Array2<f64>>| concatenate(Axis(0), &v.iter().map(|a| a.view()).collect::<Vec<_>>());
    let cat3 = |v: Vec<Array3<f64>>| concatenate(Axis(0), &v.iter().map(|a| a.view()).collect::<Vec<_>>());
    let shape = |e: ndarray::ShapeError| Error::invalid(e.to_string());
    let obj_features = cat2(obj_x).map_err(shape)?;
    if obj_features.nrows() == 0 {
        return Err(Error::invalid(format!(
            "object {id}: sampled targets hold no object seeds"
        )));
    }
    Ok(Task {
        contexts,
        seg_features: cat2(seg_x).map_err(shape)?,
        seg_labels: seg_y,
        obj_features,
        obj_offsets: cat3(obj_off).map_err(shape)?,
        keypoints: object.keypoints.clone(),
    })
}

/// Weighted loss of one task and its gradient, one vector per parameter slice.
pub(crate) fn task_gradient(nets: &Networks, task: &Task, cfg: &TrainConfig) -> Result<(f64, f64, Vec<Vec<f64>>)> {
    let (latent, enc_cache) = encode_context_train(&nets.encoder, &task.contexts, nets.aggregation)?;

    let (logits, seg_cache) = decode_segmentation_train(&nets.segmenter, task.seg_features.view(), &latent)?;
    let (seg_loss, mut g_logits) = focal_loss(logits.view(), &task.seg_labels, cfg.focal_alpha, cfg.focal_gamma)?;
    g_logits *= cfg.weights.segmentation;
    let (seg_grads, gz_seg) = decode_segmentation_backward(&nets.segmenter, &seg_cache, g_logits.view())?;

    let mask = vec![true; task.obj_features.nrows()];
    let (kp_loss, dec_grads, gz_kp) = match &nets.decoder {
        KeypointDecoder::Mlp(m) => {
            let (pred, cache) = decode_offsets_mlp_train(m, task.obj_features.view(), &latent)?;
            let (loss, mut g) = l1_offset_loss(pred.view(), task.obj_offsets.view(), &mask)?;
            g *= cfg.weights.keypoints;
            let (grads, gz) = decode_offsets_mlp_backward(m, &cache, &g)?;
            (
                loss,
                grads.slices().into_iter().map(<[f64]>::to_vec).collect::<Vec<_>>(),
                gz,
            )
        }
        KeypointDecoder::Gnn(d) => {
            let (pred, cache) = d.decode_train(task.obj_features.view(), &latent, &task.keypoints)?;
            let (loss, mut g) = l1_offset_loss(pred.view(), task.obj_offsets.view(), &mask)?;
            g *= cfg.weights.keypoints;
            let (grads, gz) = d.backward(&cache, &g)?;
            (
                loss,
                grads.slices().into_iter().map(<[f64]>::to_vec).collect::<Vec<_>>(),
                gz,
            )
        }
    };

    let enc_grads = encode_context_backward(
        &nets.encoder,
        &enc_cache,
        &LatentGrad {
            z_kp: gz_kp,
            z_seg: gz_seg,
        },
    )?;
    let mut grads: Vec<Vec<f64>> = enc_grads.slices().into_iter().map(<[f64]>::to_vec).collect();
    grads.extend(seg_grads.slices().into_iter().map(<[f64]>::to_vec));
    grads.extend(dec_grads);
    Ok((seg_loss, kp_loss, grads))
}

fn check_dataset(dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<u32>> {
    let ids = dataset.object_ids(Split::Train);
    if ids.is_empty() {
        return Err(Error::invalid("dataset has no training objects"));
    }
    for &id in &ids {
        let n = dataset.scenes_of(id, false).len();
        if n < cfg.scenes_per_object {
            return Err(Error::invalid(format!(
                "object {id} has {n} scenes, the config asks for {}",
                cfg.scenes_per_object
            )));
        }
    }
    Ok(ids)
}

/// One pass of the meta-training loop per iteration: sample objects, build
/// an episode for each, average the weighted losses and take an Adam step.
///
/// Every random draw comes from streams keyed by `(seed, iteration, slot)`,
/// so the trajectory does not depend on the number of worker threads.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, mut progress: impl FnMut(&LossRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ids = check_dataset(dataset, cfg)?;
    let mut nets = Networks::new(cfg, &mut ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, u64::MAX])))?;
    let mut adam = AdamState::for_params(cfg.adam, &nets.param_slices());
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 1..=cfg.iterations {
        let mut pick = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, it as u64, u64::MAX]));
        let chosen: Vec<u32> = if cfg.objects_per_iter <= ids.len() {
            index::sample(&mut pick, ids.len(), cfg.objects_per_iter)
                .into_iter()
                .map(|i| ids[i])
                .collect()
        } else {
            (0..cfg.objects_per_iter)
                .map(|_| ids[pick.random_range(0..ids.len())])
                .collect()
        };
        let results: Vec<Result<(f64, f64, Vec<Vec<f64>>)>> = chosen
            .par_iter()
            .enumerate()
            .map(|(slot, &id)| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, it as u64, slot as u64]));
                let task = build_task(dataset, id, cfg, &mut rng)?;
                task_gradient(&nets, &task, cfg)
            })
            .collect();

        let scale = 1.0 / chosen.len() as f64;
        let mut sum: Option<Vec<Vec<f64>>> = None;
        let (mut seg, mut kp) = (0.0, 0.0);
        for r in results {
            let (s, k, g) = r?;
            seg += s * scale;
            kp += k * scale;
            match &mut sum {
                None => {
                    sum = Some(
                        g.into_iter()
                            .map(|v| v.into_iter().map(|x| x * scale).collect())
                            .collect(),
                    )
                }
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        for (x, y) in a.iter_mut().zip(b) {
                            *x += y * scale;
                        }
                    }
                }
            }
        }
        let grads = sum.expect("at least one object per iteration");
        let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        adam.step(nets.param_slices_mut(), &refs)?;

        let record = LossRecord {
            iteration: it,
            total: cfg.weights.combine(seg, kp),
            segmentation: seg,
            offsets: kp,
        };
        progress(&record);
        trace.push(record);
    }

    let checkpoint = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        iteration: cfg.iterations,
        rng_seed: cfg.seed,
        dataset_seed: dataset.manifest.seed,
        train_object_ids: ids,
        networks: nets,
    };
    Ok(TrainOutcome { checkpoint, trace })
}

/// Two columns per line: iteration and total loss.
pub fn write_loss_trace(trace: &[LossRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# iteration loss").expect("write to memory");
    for r in trace {
        writeln!(out, "{} {:.17e}", r.iteration, r.total).expect("write to memory");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
