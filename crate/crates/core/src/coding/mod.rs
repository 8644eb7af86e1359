//! Quantization, the range coder and the D-NTSC bitstream.

pub mod bitstream;
pub mod quant;
pub mod range;
pub mod symbols;

pub use bitstream::Bitstream;
pub use quant::{quantize, relax, IntGrid};
pub use symbols::{decode_hyper, decode_latent, encode_hyper, encode_latent, hyper_tables};
