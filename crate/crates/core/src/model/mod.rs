pub mod manifest;
pub mod objective;
pub mod params;

pub use manifest::ModelManifest;
pub use objective::{
    bias_weight, dbrf_loss, dbrf_objective, decode_a, decode_rm, decode_rm_batch, decode_x, discriminator_loss,
    discriminator_loss_grad, encode, encode_means, objective_with_weights, predict_head, predict_ideal, sample_fake, supervision_weights, tc_estimate,
    umi_terms, Batch, BatchNoise, Hyperparams, LatentBatch, LossBreakdown, TcMode, TermMask, TermWeights,
};
pub use params::{ArchConfig, ModelParams};
