//! Keypose action toolkit: token codec, decoding strategies, trajectory
//! metrics, synthetic pick-and-place data and one-shot imitation prompts.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod decoder;
pub mod geometry;
pub mod imitation;
pub mod metrics;
pub mod scenegen;
