//! Vanilla VAE with a convolutional encoder and a CNN or SDN decoder.

mod checkpoint;
mod evaluate;
mod generate;
mod model;
mod objective;
pub mod observation;

pub use checkpoint::{Checkpoint, TrainingState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use evaluate::{bpd_mean_se, evaluate, threads_from_env, EvalOptions, EvalReport, THREADS_ENV};
pub use generate::{decode_images, interpolate, interpolation_latents, posterior_means, reconstruct, sample, PixelChoice};
pub use model::{DecoderKind, VaeConfig, VaeModel};
pub use objective::{draw_eps, elbo, elbo_graph, iwae_bound, mean, reparameterize, ElboOptions, ElboTerms, ElboVars, KlEstimator};
pub use observation::ObservationModel;
