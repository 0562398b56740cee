//! Neural building blocks: Gaussian encoders and decoders with hand-written
//! backward passes, analytic KL terms, reconstruction and matching losses,
//! the Adam optimizer and the checkpoint container.

mod checkpoint;
mod gaussian;
mod layers;
mod loss;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gaussian::{
    kl_between, kl_between_batch, kl_standard_normal_batch, kl_to_standard_normal, reparameterize,
    DiagonalGaussian, GaussianBatch, GaussianGrad, STD_FLOOR,
};
pub use layers::{encode, log_var_bounds, Decoder, EncoderTrace, GaussianEncoder, Linear};
pub use loss::{
    bidirectional_matching_loss, margin_ranking_loss, matching_score, mse_batch,
    reconstruction_loss, MatchingConfig,
};
pub use optim::{Adam, AdamConfig};
pub use params::{
    all_finite, flatten, param_count, param_hash, param_shapes, unflatten, zeroed, ParamVisitor,
    ParamVisitorMut, Parameterized,
};
