//! Reparameterizable video super-resolution engine.
//!
//! The crate is organized around a small NCHW tensor core with explicit
//! forward/backward passes ([`tensor`]), the fusable RepConv block and its
//! exact merge algebra ([`repconv`]), the full network graph ([`network`]),
//! toy-scale training ([`trainer`]), grid/random architecture search
//! ([`nas`]), quality/latency metrics ([`metrics`]) and on-disk formats for
//! clips and weights ([`clip_io`]).

pub mod clip_io;
pub mod error;
pub mod metrics;
pub mod nas;
pub mod network;
pub mod repconv;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result, WeightFileError};
pub use tensor::{ConvParams, Scalar, Tensor4};
