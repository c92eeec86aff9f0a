//! Two-stage multimodal generative modeling on binary toy images.
//!
//! Stage 1 trains a joint variational autoencoder over all modalities; stage
//! 2 freezes it and fits per-modality flow posteriors so that any subset of
//! modalities can be inverted to the shared latent code. Subset posteriors
//! are combined as a product of experts and sampled with Hamiltonian Monte
//! Carlo. Everything runs on a small reverse-mode autodiff tape over dense
//! `f64` tensors.

pub mod ckpt;
pub mod config;
pub mod dist;
pub mod eval;
pub mod flow;
pub mod gradcheck;
pub mod hmc;
pub mod joint;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod projector;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod toy;
pub mod unimodal;
