//! Multi-agent trajectory prediction with heterogeneous edge-enhanced graph
//! attention: recurrent history encoders, an interaction graph encoder, and
//! a gated map channel feeding per-type recurrent decoders.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod heat;
pub mod map;
pub mod model;
pub mod params;
pub mod scene;
pub mod seq;
pub mod tensor;

pub use error::{Error, Result};
