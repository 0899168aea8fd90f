//! Dense multi-scale sliding-window ConvNet inference, box regression and
//! greedy box accumulation, trainable at desk scale on synthetic data.

pub mod arch;
pub mod cost;
pub mod dense;
pub mod error;
pub mod image;
pub mod localize;
pub mod network;
pub mod tensor;
pub mod train;

pub use arch::{build_accurate, build_fast, build_toy, ArchKind, ArchSpec, LayerSpec, Stage, WeightStore};
pub use error::{Error, Result};
pub use localize::BBox;
pub use tensor::Tensor;
