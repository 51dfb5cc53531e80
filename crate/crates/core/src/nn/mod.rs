//! Small neural-network toolkit on top of candle tensors: seeded parameter
//! stores, the handful of layers the generator and classifier need, the
//! two optimizers, and the checkpoint container.

mod container;
mod layers;
mod optim;
mod params;

pub use container::{read_container, write_container, Container};
pub use layers::{
    avg_pool, layer_norm, silu, upsample_nearest, Conv2d, Embedding, LayerNorm, Linear, Mlp,
    TransformerBlock,
};
pub use optim::{AdamW, NAdam, Optimizer};
pub use params::{ParamStore, TensorData, WeightSet};

use candle_core::Device;

/// All computation runs on the CPU.
pub const DEVICE: Device = Device::Cpu;
