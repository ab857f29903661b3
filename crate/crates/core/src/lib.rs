// `!(x > 0.0)` is the idiom used to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod autodiff;
pub mod backbone;
pub mod bbox;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod params;
pub mod rng;
pub mod synthdata;
pub mod tensor;
pub mod tracker;

pub use autodiff::{Graph, NodeId, OpKind};
pub use bbox::BBox;
pub use error::{Error, Result};
pub use tensor::Tensor;
