//! Local density models for token scores given their feature vector.

mod adamw;
mod gradcheck;
mod loss;
mod mlp;
mod train;

pub use adamw::{adamw_step, AdamState, TrainConfig};
pub use gradcheck::{gradcheck, GradCheck, GRADCHECK_FLOOR, GRADCHECK_STEP};
pub use loss::{
    gaussian_nll, sigmoid, soft_cross_entropy, softplus, CategoricalHeadOutput, GaussianHeadOutput,
};
pub use mlp::{gelu, gelu_grad, mlp_eval, mlp_forward, Activations, MlpParams, Mode};
pub use train::{
    predict_logdensity, train_dataset, train_predictor, Dataset, HeadKind, Observation, Predictor,
    TrainReport,
};
