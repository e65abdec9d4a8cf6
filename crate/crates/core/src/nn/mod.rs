//! Differentiable layers, the encoder-decoder network and its loss.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod params;
pub mod unet;

pub use layers::{InterpMode, Mode};
pub use loss::{add_regularizer_grad, data_term, training_loss, DEFAULT_LAMBDA};
pub use params::{Gradients, Param, ParamKind, ParameterStore};
pub use unet::{
    build_store, init_params, unet_backward, unet_forward, update_running_stats, ForwardCache, UNetConfig,
    UpsampleMode,
};
