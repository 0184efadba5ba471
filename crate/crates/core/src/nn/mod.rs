//! Differentiable building blocks on top of candle.

pub mod kernels;
pub mod layers;
pub mod mel;
pub mod params;
pub mod snake;

pub use layers::{Conv1d, ConvSpec, ConvTranspose1d, Ctx, LayerNorm, Linear};
pub use mel::MelTransform;
pub use params::{Init, ParamBuilder, ParamStore};
pub use snake::SnakeActivation;
