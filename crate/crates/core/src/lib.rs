//! Multiview attribute perception on a small reverse-mode autodiff core,
//! plus the attribute-hallucination benchmark harness built around it.

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
mod codec;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod map;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod report;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
