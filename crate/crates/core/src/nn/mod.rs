//! Conditioned U-Net denoiser on a small tensor layer with hand-written
//! backward passes, Adam, and weight persistence.

pub mod layers;
mod optim;
mod params;
mod persist;
mod tensor;
mod train;
mod unet;

pub use optim::{adam_update, lr_for_epoch, Adam, AdamHeader};
pub use params::{kaiming_uniform, BufferId, Grads, ParamId, ParamSpec, ParamStore};
pub use persist::{decode_weights, encode_weights, load_weights, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use tensor::Tensor;
pub use train::{conditioning, frames_to_tensor, train, EpochStats, NetDenoiser, TrainConfig};
pub use unet::{masked_mse_grad, Descriptor, Embedding, ForwardCache, ResBlock, SkipMode, UNet, UNetSpec};
