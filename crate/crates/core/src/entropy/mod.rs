//! Entropy models for latents and hyperpriors, and the rate bookkeeping built on them.

pub mod gaussian;
pub mod gmm;
pub mod normal;
mod rate;
pub mod tables;

pub use gaussian::{latent_bin_pmf, latent_rate_bits, LatentRate};
pub use gmm::{joint_hyper_entropy_bits, mmse_peer_estimate, Component, HyperGmm, JointHyperModel, PairModel};
pub use rate::{expected_token_bits, peer_rate_estimate, total_code_rate, RateReport};
