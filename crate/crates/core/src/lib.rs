//! M-Net: volumetric segmentation of MRI slice sequences.
//!
//! Consecutive slices are treated as frames of a sequence. Each encoder and
//! decoder stage runs a pluggable sequential module over four-direction
//! scans of every frame, then Mesh-Cast re-casts the frame and channel axes
//! as sequence axes so the same module family also models inter-slice and
//! inter-channel structure. Training uses two phases: frame-shuffled
//! pseudo-sequences first, then ordered sequences.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks).

pub mod cross_scan;
pub mod data;
mod error;
pub mod losses;
pub mod mesh_cast;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seq;
pub mod targets;
pub mod train;

pub use error::{Error, Result};
pub use mnet_tensor::{Scalar, Tape, Tensor, TensorError};
pub use model::{MNet, MNetConfig};
pub use seq::{SeqConfig, SeqKind, SeqModule};
pub use mesh_cast::MeshCastMode;
pub use train::TrainConfig;

pub use mnet_tensor::{Tensor32, Tensor64};
pub use model::{MNet32, MNet64};
pub type SequenceSample32 = data::SequenceSample<f32>;
pub type SequenceSample64 = data::SequenceSample<f64>;
