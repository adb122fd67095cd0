use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::infer::offset_error;
use super::train::subsample;
use super::{infer_pose_with_latent, Checkpoint, SegMode};
use crate::data::{stream_seed, Dataset, Family, SceneSample, Split};
use crate::{Error, Result};

/// Stream tag that keeps evaluation draws apart from training draws.
const EVAL_STREAM: u64 = 0xe7a1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub splits: Vec<Split>,
    pub occluded: bool,
    pub seg_mode: SegMode,
    /// Permit training objects; only meant for measuring the generalization gap.
    pub allow_train_objects: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            splits: vec![Split::Intra, Split::Cross],
            occluded: false,
            seg_mode: SegMode::Predicted,
            allow_train_objects: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRow {
    pub id: u32,
    pub family: Family,
    pub split: Split,
    pub targets: usize,
    /// Targets whose predicted segmentation was empty.
    pub failures: usize,
    pub l1: f64,
    /// Mean over targets with a pose; NaN when every target failed.
    pub add: f64,
    pub adds: f64,
    pub add_01d: f64,
}

/// Target-weighted means over a group of object rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub objects: usize,
    pub targets: usize,
    pub failures: usize,
    pub l1: f64,
    pub add: f64,
    pub adds: f64,
    pub add_01d: f64,
}

impl SummaryRow {
    pub fn from_rows<'a>(label: impl Into<String>, rows: impl IntoIterator<Item = &'a ObjectRow>) -> Self {
        let (mut objects, mut targets, mut failures) = (0, 0, 0);
        let (mut l1, mut add, mut adds, mut pass) = (0.0, 0.0, 0.0, 0.0);
        for r in rows {
            objects += 1;
            targets += r.targets;
            failures += r.failures;
            l1 += r.l1 * r.targets as f64;
            pass += r.add_01d * r.targets as f64;
            let posed = (r.targets - r.failures) as f64;
            if posed > 0.0 {
                add += r.add * posed;
                adds += r.adds * posed;
            }
        }
        let posed = (targets - failures) as f64;
        Self {
            label: label.into(),
            objects,
            targets,
            failures,
            l1: l1 / targets as f64,
            add: add / posed,
            adds: adds / posed,
            add_01d: pass / targets as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub occluded: bool,
    pub seg_mode: SegMode,
    pub objects: Vec<ObjectRow>,
    /// One row per (split, family) pair, split-major.
    pub families: Vec<SummaryRow>,
    pub splits: Vec<SummaryRow>,
    pub all: SummaryRow,
}

impl EvalReport {
    pub fn from_rows(objects: Vec<ObjectRow>, occluded: bool, seg_mode: SegMode) -> Self {
        let mut splits_seen: Vec<Split> = objects.iter().map(|r| r.split).collect();
        splits_seen.sort();
        splits_seen.dedup();
        let mut families = Vec::new();
        let mut splits = Vec::new();
        for &split in &splits_seen {
            let mut fams: Vec<Family> = objects.iter().filter(|r| r.split == split).map(|r| r.family).collect();
            fams.sort_by_key(|f| Family::ALL.iter().position(|g| g == f));
            fams.dedup();
            for fam in fams {
                families.push(SummaryRow::from_rows(
                    format!("{split}/{fam}"),
                    objects.iter().filter(|r| r.split == split && r.family == fam),
                ));
            }
            splits.push(SummaryRow::from_rows(
                split.name(),
                objects.iter().filter(|r| r.split == split),
            ));
        }
        let all = SummaryRow::from_rows("all", &objects);
        Self {
            occluded,
            seg_mode,
            objects,
            families,
            splits,
            all,
        }
    }

    pub fn split(&self, split: Split) -> Option<&SummaryRow> {
        self.splits.iter().find(|r| r.label == split.name())
    }

    /// One line per object: `id,family,split,l1,add,adds,add_0.1d,targets,failures`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,family,split,l1,add,adds,add_0.1d,targets,failures\n");
        for r in &self.objects {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.id, r.family, r.split, r.l1, r.add, r.adds, r.add_01d, r.targets, r.failures
            );
        }
        s
    }

    /// Table of ADD-0.1d accuracy (percent) and mean errors by family, split
    /// and overall.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "occluded: {}  segmentation: {}",
            if self.occluded { "yes" } else { "no" },
            match self.seg_mode {
                SegMode::Predicted => "predicted",
                SegMode::GroundTruth => "ground truth",
            }
        );
        let _ = writeln!(
            s,
            "{:<18} {:>7} {:>7} {:>8} {:>9} {:>9} {:>9} {:>9}",
            "group", "objects", "targets", "failures", "L1", "ADD", "ADD-S", "ADD-0.1d"
        );
        for r in self
            .families
            .iter()
            .chain(&self.splits)
            .chain(std::iter::once(&self.all))
        {
            let _ = writeln!(
                s,
                "{:<18} {:>7} {:>7} {:>8} {:>9.4} {:>9.4} {:>9.4} {:>8.1}%",
                r.label,
                r.objects,
                r.targets,
                r.failures,
                r.l1,
                r.add,
                r.adds,
                100.0 * r.add_01d
            );
        }
        s
    }

    /// Writes `<path>` as CSV and `<path>.txt` with the summary table.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let mut summary = path.as_os_str().to_owned();
        summary.push(".txt");
        let summary = Path::new(&summary);
        fs::write(summary, self.summary()).map_err(|e| Error::io(summary, e))
    }
}

fn evaluate_object(ckpt: &Checkpoint, dataset: &Dataset, id: u32, options: &EvalOptions) -> Result<ObjectRow> {
    let cfg = &ckpt.config;
    let entry = dataset.entry(id).expect("id comes from the manifest");
    let object = dataset
        .object(id)
        .ok_or_else(|| Error::invalid(format!("object {id} is missing")))?;
    let clean = dataset.scenes_of(id, false);
    if clean.len() <= cfg.eval_contexts {
        return Err(Error::invalid(format!(
            "object {id} has {} scenes; {} are needed for context and at least one for targets",
            clean.len(),
            cfg.eval_contexts
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[dataset.manifest.seed, id as u64, EVAL_STREAM]));
    let mut picked = index::sample(&mut rng, clean.len(), cfg.eval_contexts).into_vec();
    picked.sort_unstable();
    let contexts: Vec<_> = picked
        .iter()
        .map(|&c| {
            let rows = subsample(clean[c].len(), cfg.context_seeds, &mut rng);
            clean[c].to_context().select(&rows)
        })
        .collect();
    let latent = ckpt.networks.encode(&contexts)?;

    let occluded = options.occluded.then(|| dataset.scenes_of(id, true));
    let mut targets: Vec<&SceneSample> = Vec::new();
    for (i, scene) in clean.iter().enumerate() {
        if picked.contains(&i) {
            continue;
        }
        match &occluded {
            None => targets.push(scene),
            Some(occ) => {
                let variant = occ.iter().find(|s| s.scene_index == scene.scene_index).ok_or_else(|| {
                    Error::invalid(format!(
                        "object {id} scene {} has no occluded variant",
                        scene.scene_index
                    ))
                })?;
                targets.push(variant);
            }
        }
    }

    let (mut failures, mut passes) = (0, 0);
    let (mut l1, mut add, mut adds) = (0.0, 0.0, 0.0);
    for scene in &targets {
        let target = scene.to_target();
        match infer_pose_with_latent(
            &ckpt.networks,
            &latent,
            object,
            &target,
            options.seg_mode,
            cfg.bandwidth_scale,
        ) {
            Ok(inf) => {
                l1 += inf.offset_l1;
                add += inf.metrics.add;
                adds += inf.metrics.adds;
                passes += usize::from(inf.metrics.add_01d_pass);
            }
            Err(Error::EmptySelection(_)) => {
                failures += 1;
                l1 += offset_error(&ckpt.networks, &latent, object, &target)?;
            }
            Err(e) => return Err(e),
        }
    }
    let n = targets.len();
    let posed = (n - failures) as f64;
    Ok(ObjectRow {
        id,
        family: entry.family,
        split: entry.split,
        targets: n,
        failures,
        l1: l1 / n as f64,
        add: add / posed,
        adds: adds / posed,
        add_01d: passes as f64 / n as f64,
    })
}

/// Evaluates every object of the requested splits. Each object gets a fixed
/// set of context scenes drawn from its clean scenes; the remaining scenes
/// (or their occluded variants) are the targets.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, options: &EvalOptions) -> Result<EvalReport> {
    ckpt.config.validate()?;
    let mut splits = options.splits.clone();
    splits.sort();
    splits.dedup();
    let ids: Vec<u32> = splits.iter().flat_map(|&s| dataset.object_ids(s)).collect();
    if ids.is_empty() {
        return Err(Error::invalid("no objects in the requested splits"));
    }
    if !options.allow_train_objects {
        let same_data = dataset.manifest.seed == ckpt.dataset_seed;
        if let Some(id) = ids.iter().find(|id| {
            dataset.entry(**id).is_some_and(|e| e.split == Split::Train)
                || (same_data && ckpt.train_object_ids.contains(id))
        }) {
            return Err(Error::invalid(format!("object {id} was used for training")));
        }
    }
    let rows: Vec<ObjectRow> = ids
        .par_iter()
        .map(|&id| evaluate_object(ckpt, dataset, id, options))
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_rows(rows, options.occluded, options.seg_mode))
}
