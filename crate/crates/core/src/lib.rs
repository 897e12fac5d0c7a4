//! Pseudo-task augmentation: one shared model trained through several
//! linear decoders per task, with decoder-control policies, exact checks of
//! the underlying gradient dynamics, and a reproducible experiment harness.

pub mod checkpoint;
pub mod control;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod theory;
pub mod training;

pub use control::{ControlPolicy, PolicyFlags};
pub use error::{PtaError, Result};
pub use graph::{Graph, Mode, NodeId};
pub use model::{Decoder, ModelSpec, TaskHead, UnderlyingModel};
pub use tensor::Tensor;
pub use training::{JointModel, RunSpec};
