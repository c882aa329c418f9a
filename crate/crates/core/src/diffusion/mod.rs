//! Latent diffusion at desk scale: codec, noise schedule, noise-predicting
//! networks, prompt encoder, training loops and checkpoints.

pub mod checkpoint;
pub mod codec;
pub(crate) mod nn;
pub mod prompt;
pub mod schedule;
pub mod tensor;
pub mod train;
pub mod unet;

pub use checkpoint::{load_image_model, load_text_model, save_image_model, save_text_model};
pub use codec::{decode, encode, LatentStats, LATENT_CHANNELS};
pub use prompt::{encode_prompt, PromptEmbedding, PromptEncoder, PROMPT_DIM};
pub use schedule::{add_noise, make_schedule, NoiseSchedule, Timestep};
pub use tensor::{Latent, Tensor};
pub use train::{
    measure_latent_stats, train_image_model, train_text_model, ImageModel, LossTrace, TextModel, TrainConfig,
};
pub use unet::{cfg_image, UNetArch, UNetModel};
