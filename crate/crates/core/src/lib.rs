//! vxc-core: variable-rate recurrent image compression joined with
//! multi-view 3D voxel reconstruction, trainable end-to-end on CPU.
//!
//! The crate provides:
//! - a minimal dense tensor with reverse-mode autodiff ([`tape`]),
//! - the recurrence units used by the networks ([`cells`]),
//! - a stochastic straight-through binarizer with bit packing ([`binarizer`]),
//! - the iterative residual codec and its bitstream format ([`codec`]),
//! - the image-to-voxel reconstruction pipeline and metrics ([`recon3d`],
//!   [`metrics`]),
//! - three joint architectures: sequential, direct, implicit ([`joint`]),
//! - a procedural shape corpus generator ([`data`]),
//! - training, checkpointing, evaluation and benchmarking ([`train`]).

pub mod binarizer;
pub mod cells;
pub mod codec;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod joint;
pub(crate) mod kernels;
pub mod metrics;
pub mod params;
pub mod recon3d;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{Binding, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};
