//! Synthetic multi-category dataset: objects, scenes, episodes and storage.

mod io;
mod scene;
mod shapes;

pub use io::{read_dataset, write_dataset, FORMAT_VERSION, MANIFEST_FILE, RECORDS_FILE};
pub use scene::{apply_occlusion, render_scene, SceneConfig, SceneSample, MAX_OCCLUSION, MIN_OCCLUSION};
pub use shapes::{
    box_surface, diameter, flat_texture, make_object, object_color, texture_at, Family, ObjectModel, MAX_DIAMETER,
    MIN_DIAMETER, MODEL_POINTS, TEXTURE_DIM,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::meta::Episode;
use crate::{Error, Result};

/// Mixes a list of integers into one RNG seed.
pub fn stream_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5eed_u64, |acc, &p| shapes::hash64(acc ^ shapes::hash64(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Intra,
    Cross,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Intra => "intra",
            Split::Cross => "cross",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "intra" => Ok(Split::Intra),
            "cross" => Ok(Split::Cross),
            _ => Err(Error::invalid(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMode {
    None,
    Range,
}

impl std::str::FromStr for OcclusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(OcclusionMode::None),
            "range" => Ok(OcclusionMode::Range),
            _ => Err(Error::invalid(format!("unknown occlusion mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub train_families: Vec<Family>,
    pub objects_per_family: usize,
    /// Unseen objects of the training families.
    pub intra_objects: usize,
    /// Objects of the held-out families.
    pub cross_objects: usize,
    pub scenes_per_object: usize,
    /// With `Range`, every evaluation scene also gets an occluded variant.
    pub occlusion: OcclusionMode,
    pub scene: SceneConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            train_families: vec![Family::Box, Family::Cylinder, Family::Ellipsoid, Family::Capsule],
            objects_per_family: 8,
            intra_objects: 4,
            cross_objects: 4,
            scenes_per_object: 12,
            occlusion: OcclusionMode::Range,
            scene: SceneConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn held_out_families(&self) -> Vec<Family> {
        Family::ALL
            .into_iter()
            .filter(|f| !self.train_families.contains(f))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.train_families.is_empty() {
            return Err(Error::invalid("at least one training family is required"));
        }
        let mut sorted = self.train_families.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.train_families.len() {
            return Err(Error::invalid("training families must be distinct"));
        }
        if self.cross_objects > 0 && self.held_out_families().is_empty() {
            return Err(Error::invalid(
                "cross-category objects need at least one held-out family",
            ));
        }
        if self.scenes_per_object < 3 {
            return Err(Error::invalid("each object needs at least 3 scenes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: u32,
    pub family: Family,
    pub split: Split,
    pub seed: u64,
    pub diameter: f64,
    pub clean_scenes: usize,
    pub occluded_scenes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: GeneratorConfig,
    pub objects: Vec<ObjectEntry>,
    pub record_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub objects: Vec<ObjectModel>,
    pub scenes: Vec<SceneSample>,
}

impl Dataset {
    pub fn object(&self, id: u32) -> Option<&ObjectModel> {
        self.objects.iter().find(|o| o.object_id == id)
    }

    pub fn entry(&self, id: u32) -> Option<&ObjectEntry> {
        self.manifest.objects.iter().find(|o| o.id == id)
    }

    pub fn object_ids(&self, split: Split) -> Vec<u32> {
        self.manifest
            .objects
            .iter()
            .filter(|o| o.split == split)
            .map(|o| o.id)
            .collect()
    }

    /// Scenes of one object, clean or occluded, ordered by scene index.
    pub fn scenes_of(&self, id: u32, occluded: bool) -> Vec<&SceneSample> {
        let mut out: Vec<&SceneSample> = self
            .scenes
            .iter()
            .filter(|s| s.queried_object_id == id && s.occluded == occluded)
            .collect();
        out.sort_by_key(|s| s.scene_index);
        out
    }
}

/// Generates a full dataset as a pure function of `(seed, config)`.
pub fn generate_dataset(config: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let held_out = config.held_out_families();
    let mut plan: Vec<(Family, Split)> = Vec::new();
    for &f in &config.train_families {
        plan.extend(std::iter::repeat_n((f, Split::Train), config.objects_per_family));
    }
    for j in 0..config.intra_objects {
        plan.push((config.train_families[j % config.train_families.len()], Split::Intra));
    }
    for j in 0..config.cross_objects {
        plan.push((held_out[j % held_out.len()], Split::Cross));
    }

    let objects: Vec<ObjectModel> = plan
        .par_iter()
        .enumerate()
        .map(|(id, &(family, _))| make_object(id as u32, family, stream_seed(&[seed, id as u64, 0])))
        .collect::<Result<_>>()?;

    let need = config.scene.distractors;
    let pools: Vec<Vec<usize>> = plan
        .iter()
        .enumerate()
        .map(|(id, (_, split))| {
            let same: Vec<usize> = (0..plan.len()).filter(|&j| j != id && plan[j].1 == *split).collect();
            if same.len() >= need {
                same
            } else {
                (0..plan.len()).filter(|&j| j != id).collect()
            }
        })
        .collect();
    if pools.iter().any(|p| p.len() < need) {
        return Err(Error::invalid(format!(
            "not enough objects to place {need} distractors"
        )));
    }

    let occlude = config.occlusion == OcclusionMode::Range;
    let jobs: Vec<(usize, usize)> = (0..objects.len())
        .flat_map(|o| (0..config.scenes_per_object).map(move |s| (o, s)))
        .collect();
    let rendered: Vec<Vec<SceneSample>> = jobs
        .par_iter()
        .map(|&(o, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, o as u64, s as u64 + 1]));
            let mut pool = pools[o].clone();
            pool.shuffle(&mut rng);
            let distractors: Vec<&ObjectModel> = pool[..need].iter().map(|&j| &objects[j]).collect();
            let mut clean = render_scene(&objects[o], &distractors, &config.scene, &mut rng, 0.0)?;
            clean.scene_index = s as u32;
            let mut out = vec![clean];
            if occlude && plan[o].1 != Split::Train {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, o as u64, s as u64 + 1, 1]));
                let fraction = rng.random_range(MIN_OCCLUSION..=MAX_OCCLUSION);
                out.push(apply_occlusion(&out[0], fraction, config.scene.noise_sigma, &mut rng)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let scenes: Vec<SceneSample> = rendered.into_iter().flatten().collect();

    let entries = plan
        .iter()
        .enumerate()
        .map(|(id, &(family, split))| ObjectEntry {
            id: id as u32,
            family,
            split,
            seed: stream_seed(&[seed, id as u64, 0]),
            diameter: objects[id].diameter,
            clean_scenes: config.scenes_per_object,
            occluded_scenes: if occlude && split != Split::Train {
                config.scenes_per_object
            } else {
                0
            },
        })
        .collect();
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: FORMAT_VERSION,
            seed,
            config: config.clone(),
            objects: entries,
            record_count: scenes.len(),
        },
        objects,
        scenes,
    })
}

/// Scene indices of one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodePlan {
    pub contexts: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Splits `available` scenes into contexts and targets. Without an explicit
/// count the context size is uniform in `2..=8`; either way it is clamped to
/// `available − 1`.
pub fn partition_scenes<R: Rng + ?Sized>(
    available: usize,
    context_count: Option<usize>,
    rng: &mut R,
) -> Result<EpisodePlan> {
    if available < 3 {
        return Err(Error::invalid(format!(
            "an episode needs at least 3 scenes, got {available}"
        )));
    }
    let count = context_count.unwrap_or_else(|| rng.random_range(2..=8));
    if count == 0 {
        return Err(Error::invalid("context count must be positive"));
    }
    let count = count.min(available - 1);
    let mut order: Vec<usize> = (0..available).collect();
    order.shuffle(rng);
    let mut contexts = order[..count].to_vec();
    let mut targets = order[count..].to_vec();
    contexts.sort_unstable();
    targets.sort_unstable();
    Ok(EpisodePlan { contexts, targets })
}

/// Builds an episode of `object` from its scenes. Targets come from `target_pool`
/// when given (for occluded targets with clean contexts).
pub fn build_episode(
    object: &ObjectModel,
    scenes: &[&SceneSample],
    plan: &EpisodePlan,
    target_pool: Option<&[&SceneSample]>,
) -> Result<Episode> {
    let pool = target_pool.unwrap_or(scenes);
    let check = |idx: &[usize], n: usize| idx.iter().all(|&i| i < n);
    if !check(&plan.contexts, scenes.len()) || !check(&plan.targets, pool.len()) {
        return Err(Error::invalid("episode plan refers to missing scenes"));
    }
    Ok(Episode {
        object_id: object.object_id,
        contexts: plan.contexts.iter().map(|&i| scenes[i].to_context()).collect(),
        targets: plan.targets.iter().map(|&i| pool[i].to_target()).collect(),
        keypoints: object.keypoints.clone(),
        diameter: object.diameter,
    })
}

/// Draws a random training object and partitions its clean scenes.
pub fn sample_episode<R: Rng + ?Sized>(dataset: &Dataset, rng: &mut R) -> Result<Episode> {
    let ids = dataset.object_ids(Split::Train);
    if ids.is_empty() {
        return Err(Error::invalid("dataset has no training objects"));
    }
    let id = ids[rng.random_range(0..ids.len())];
    let object = dataset
        .object(id)
        .ok_or_else(|| Error::invalid(format!("object {id} missing from dataset")))?;
    let scenes = dataset.scenes_of(id, false);
    let plan = partition_scenes(scenes.len(), None, rng)?;
    build_episode(object, &scenes, &plan, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            objects_per_family: 2,
            intra_objects: 2,
            cross_objects: 2,
            scenes_per_object: 4,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn partition_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = partition_scenes(12, Some(4), &mut rng).unwrap();
        assert_eq!((p.contexts.len(), p.targets.len()), (4, 8));
        let p = partition_scenes(3, None, &mut rng).unwrap();
        assert_eq!((p.contexts.len(), p.targets.len()), (2, 1));
        let p = partition_scenes(3, Some(8), &mut rng).unwrap();
        assert_eq!((p.contexts.len(), p.targets.len()), (2, 1));
        assert!(partition_scenes(2, None, &mut rng).is_err());
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = partition_scenes(12, None, &mut rng).unwrap();
            assert!((2..=8).contains(&p.contexts.len()));
            let mut all: Vec<usize> = p.contexts.iter().chain(&p.targets).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn generation_is_deterministic_and_split_by_family() {
        let cfg = small_config();
        let a = generate_dataset(&cfg, 5).unwrap();
        let b = generate_dataset(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let train_families: Vec<Family> = a
            .manifest
            .objects
            .iter()
            .filter(|o| o.split == Split::Train)
            .map(|o| o.family)
            .collect();
        for o in a.manifest.objects.iter().filter(|o| o.split == Split::Cross) {
            assert!(!train_families.contains(&o.family));
        }
        for o in &a.manifest.objects {
            assert_eq!(a.scenes_of(o.id, false).len(), o.clean_scenes);
            assert_eq!(a.scenes_of(o.id, true).len(), o.occluded_scenes);
        }
        assert_eq!(a.scenes.len(), a.manifest.record_count);
        let c = generate_dataset(&cfg, 6).unwrap();
        assert_ne!(a.scenes[0].features, c.scenes[0].features);
    }

    #[test]
    fn episodes_come_from_training_objects() {
        let ds = generate_dataset(&small_config(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let ep = sample_episode(&ds, &mut rng).unwrap();
            assert_eq!(ds.entry(ep.object_id).unwrap().split, Split::Train);
            assert_eq!(ep.contexts.len() + ep.targets.len(), 4);
            assert_eq!(ep.diameter, ds.object(ep.object_id).unwrap().diameter);
        }
    }
}
