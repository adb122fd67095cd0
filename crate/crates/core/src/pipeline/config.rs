use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::meta::Aggregation;
use crate::nn::{AdamConfig, LossWeights};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Mlp,
    Gnn,
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecoderKind::Mlp => "mlp",
            DecoderKind::Gnn => "gnn",
        })
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(DecoderKind::Mlp),
            "gnn" => Ok(DecoderKind::Gnn),
            _ => Err(Error::invalid(format!("unknown decoder '{s}' (expected mlp or gnn)"))),
        }
    }
}

/// Training and inference settings. Read from a flat `key = value` file;
/// keys match the field names, with `lr`, `beta1`, `beta2`, `eps`,
/// `seg_weight` and `kp_weight` for the nested settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objects_per_iter: usize,
    pub scenes_per_object: usize,
    pub decoder: DecoderKind,
    pub aggregation: Aggregation,
    pub k_neighbors: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub iterations: usize,
    pub seed: u64,
    /// Width of every hidden layer and of the latent.
    pub hidden: usize,
    /// Seeds drawn from each context scene, in training and at test time.
    pub context_seeds: usize,
    /// Seeds per target scene that enter the segmentation loss.
    pub target_seeds: usize,
    /// Queried-object seeds per target scene that enter the offset loss.
    pub object_points: usize,
    pub targets_per_object: usize,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Context scenes per object at evaluation.
    pub eval_contexts: usize,
    /// Mean-shift bandwidth as a fraction of the object diameter.
    pub bandwidth_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objects_per_iter: 6,
            scenes_per_object: 12,
            decoder: DecoderKind::Gnn,
            aggregation: Aggregation::Max,
            k_neighbors: 8,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            iterations: 2000,
            seed: 0,
            hidden: 128,
            context_seeds: 32,
            target_seeds: 64,
            object_points: 8,
            targets_per_object: 2,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            eval_contexts: 4,
            bandwidth_scale: 0.05,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("cannot parse '{value}' for '{key}'")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weights.segmentation >= 0.0 && self.weights.keypoints >= 0.0)
            || self.weights.segmentation + self.weights.keypoints <= 0.0
        {
            return Err(Error::invalid("loss weights must be non-negative and not both zero"));
        }
        if !(1..=8).contains(&self.k_neighbors) {
            return Err(Error::invalid(format!(
                "k_neighbors must lie in [1, 8], got {}",
                self.k_neighbors
            )));
        }
        let counts = [
            ("objects_per_iter", self.objects_per_iter),
            ("hidden", self.hidden),
            ("context_seeds", self.context_seeds),
            ("target_seeds", self.target_seeds),
            ("object_points", self.object_points),
            ("targets_per_object", self.targets_per_object),
            ("eval_contexts", self.eval_contexts),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.scenes_per_object < 3 {
            return Err(Error::invalid("scenes_per_object must be at least 3"));
        }
        if !(self.adam.lr > 0.0 && self.bandwidth_scale > 0.0 && self.focal_alpha > 0.0 && self.focal_gamma >= 0.0) {
            return Err(Error::invalid("lr, bandwidth_scale and focal_alpha must be positive"));
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "objects_per_iter" => self.objects_per_iter = parse(key, value)?,
            "scenes_per_object" => self.scenes_per_object = parse(key, value)?,
            "decoder" => self.decoder = value.parse()?,
            "aggregation" => self.aggregation = value.parse()?,
            "k_neighbors" => self.k_neighbors = parse(key, value)?,
            "seg_weight" => self.weights.segmentation = parse(key, value)?,
            "kp_weight" => self.weights.keypoints = parse(key, value)?,
            "lr" => self.adam.lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "eps" => self.adam.eps = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "context_seeds" => self.context_seeds = parse(key, value)?,
            "target_seeds" => self.target_seeds = parse(key, value)?,
            "object_points" => self.object_points = parse(key, value)?,
            "targets_per_object" => self.targets_per_object = parse(key, value)?,
            "focal_alpha" => self.focal_alpha = parse(key, value)?,
            "focal_gamma" => self.focal_gamma = parse(key, value)?,
            "eval_contexts" => self.eval_contexts = parse(key, value)?,
            "bandwidth_scale" => self.bandwidth_scale = parse(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::invalid(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("objects_per_iter", self.objects_per_iter.to_string());
        put("scenes_per_object", self.scenes_per_object.to_string());
        put("decoder", self.decoder.to_string());
        put("aggregation", self.aggregation.to_string());
        put("k_neighbors", self.k_neighbors.to_string());
        put("seg_weight", self.weights.segmentation.to_string());
        put("kp_weight", self.weights.keypoints.to_string());
        put("lr", self.adam.lr.to_string());
        put("beta1", self.adam.beta1.to_string());
        put("beta2", self.adam.beta2.to_string());
        put("eps", self.adam.eps.to_string());
        put("iterations", self.iterations.to_string());
        put("seed", self.seed.to_string());
        put("hidden", self.hidden.to_string());
        put("context_seeds", self.context_seeds.to_string());
        put("target_seeds", self.target_seeds.to_string());
        put("object_points", self.object_points.to_string());
        put("targets_per_object", self.targets_per_object.to_string());
        put("focal_alpha", self.focal_alpha.to_string());
        put("focal_gamma", self.focal_gamma.to_string());
        put("eval_contexts", self.eval_contexts.to_string());
        put("bandwidth_scale", self.bandwidth_scale.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.decoder = DecoderKind::Mlp;
        cfg.aggregation = Aggregation::Mean;
        cfg.adam.lr = 3e-4;
        cfg.k_neighbors = 3;
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn kv_errors_name_the_line() {
        let err = TrainConfig::from_kv("# comment\n\nk_neighbors = 9\n").unwrap_err();
        assert!(err.to_string().contains("k_neighbors"));
        let err = TrainConfig::from_kv("iterations = 5\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(TrainConfig::from_kv("iterations\n").is_err());
        assert!(TrainConfig::from_kv("seg_weight = 0\nkp_weight = 0\n").is_err());
        assert!(TrainConfig::from_kv("seg_weight = 0\n").is_ok());
    }
}
