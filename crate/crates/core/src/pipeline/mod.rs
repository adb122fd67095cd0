//! Meta-training, pose inference, evaluation and checkpoints.

mod checkpoint;
mod config;
mod eval;
mod gradcheck;
mod infer;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{DecoderKind, TrainConfig};
pub use eval::{evaluate, EvalOptions, EvalReport, ObjectRow, SummaryRow};
pub use gradcheck::{gradcheck_suite, GradcheckEntry};
pub use infer::{infer_pose, infer_pose_with_latent, oracle_pose, vote_and_fit, Inference, SegMode};
pub use train::{train, write_loss_trace, LossRecord, TrainOutcome};

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::KeypointSet;
use crate::gnn::GnnDecoder;
use crate::meta::{
    decode_offsets_mlp, encode_context, Aggregation, ContextSample, LatentRep, ENCODER_INPUT_DIM, FEATURE_DIM,
};
use crate::nn::{Activation, Mlp, Parameters};
use crate::Result;

/// Offset decoder: pointwise MLP or the keypoint-graph decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KeypointDecoder {
    Mlp(Mlp),
    Gnn(GnnDecoder),
}

impl KeypointDecoder {
    pub fn kind(&self) -> DecoderKind {
        match self {
            KeypointDecoder::Mlp(_) => DecoderKind::Mlp,
            KeypointDecoder::Gnn(_) => DecoderKind::Gnn,
        }
    }

    /// Offsets `M_obj × M_k × 3`.
    pub fn decode(
        &self,
        x_obj: ArrayView2<f64>,
        latent: &LatentRep,
        kps: &KeypointSet,
    ) -> Result<ndarray::Array3<f64>> {
        match self {
            KeypointDecoder::Mlp(m) => decode_offsets_mlp(m, x_obj, latent),
            KeypointDecoder::Gnn(g) => g.decode(x_obj, latent, kps),
        }
    }
}

/// Everything that is trained: context encoder, segmentation decoder and
/// keypoint decoder, plus the aggregation used by the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub encoder: Mlp,
    pub segmenter: Mlp,
    pub decoder: KeypointDecoder,
    pub aggregation: Aggregation,
}

impl Networks {
    pub fn new<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let encoder = Mlp::new(&[ENCODER_INPUT_DIM, h, h, h], Activation::Relu, rng)?;
        let segmenter = Mlp::new(&[FEATURE_DIM + h, h, h, h, 2], Activation::Linear, rng)?;
        let decoder = match config.decoder {
            DecoderKind::Mlp => {
                KeypointDecoder::Mlp(Mlp::new(&[FEATURE_DIM + h, h, h, h, h, h, 3], Activation::Linear, rng)?)
            }
            DecoderKind::Gnn => {
                KeypointDecoder::Gnn(GnnDecoder::with_dims(FEATURE_DIM, h, h, config.k_neighbors, rng)?)
            }
        };
        Ok(Self {
            encoder,
            segmenter,
            decoder,
            aggregation: config.aggregation,
        })
    }

    pub fn encode(&self, contexts: &[ContextSample]) -> Result<LatentRep> {
        encode_context(&self.encoder, contexts, self.aggregation)
    }

    /// Number of parameter slices owned by the encoder and the segmenter.
    #[cfg(test)]
    pub(crate) fn slice_counts(&self) -> (usize, usize) {
        (self.encoder.param_slices().len(), self.segmenter.param_slices().len())
    }
}

impl Parameters for Networks {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.encoder.param_slices();
        v.extend(self.segmenter.param_slices());
        match &self.decoder {
            KeypointDecoder::Mlp(m) => v.extend(m.param_slices()),
            KeypointDecoder::Gnn(g) => v.extend(g.param_slices()),
        }
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.param_slices_mut();
        v.extend(self.segmenter.param_slices_mut());
        match &mut self.decoder {
            KeypointDecoder::Mlp(m) => v.extend(m.param_slices_mut()),
            KeypointDecoder::Gnn(g) => v.extend(g.param_slices_mut()),
        }
        v
    }
}
