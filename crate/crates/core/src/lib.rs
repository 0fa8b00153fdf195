//! Multi-class segmentation with quadruple augmented pyramid networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: rank-4 tensors and a reverse-mode engine with the
//!   primitives the network needs (dilated/transposed convolution, pooling,
//!   bilinear resize, channel concat and softmax).
//! * [`dilation`]: receptive-field and coverage analysis of serial atrous
//!   stacks, with a brute-force 1D coverage simulator.
//! * [`model`]: the encoder-decoder backbone, the atrous skip paths and the
//!   pooling pyramids, switched by four ablation flags.
//! * [`training`]: focal loss, Adam, plateau schedule, early stopping and
//!   augmentation.
//! * [`metrics`]: confusion-matrix metrics.
//! * [`data`]: PGM/PPM/`.qat` I/O, manifests, splitting, synthetic phantoms
//!   and overlay rendering.

pub mod data;
pub mod dilation;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use metrics::{Averaging, ConfusionMatrix, MetricReport};
pub use model::{AblationFlags, Model, ModelConfig};
pub use tensor::{Graph, Shape, Tensor, Var};
pub use training::{EpochRecord, TrainConfig};
