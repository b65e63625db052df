//! Hierarchical attention over actor and context memory banks for
//! multi-actor video understanding, with a small reverse-mode autodiff core.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod ctf;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod hub;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Mask, ParamId, ParamStore, Tape, Var, Warning};
pub use tensor::{Shape, Tensor};
