//! Classification of variable-depth slice-stack volumes with 2D feature
//! extraction.
//!
//! The pipeline supports three ways of fusing a stack of slices:
//!
//! - **late fusion** — extract features per slice, then reduce across the
//!   slice axis with min/avg/max pooling into one fixed-size feature map;
//! - **early fusion** — collapse the stack into a single image first, either
//!   the slice mean or a rank-pooled dynamic image;
//! - **space-to-channel** — encode depth-separated slice triplets as the
//!   three channels of each extractor input, then pool the per-triplet
//!   features.
//!
//! A small trainable head (conv + two linear layers, sigmoid output) sits on
//! top, trained with balanced mini-batches, binary cross-entropy, Adam, L2,
//! dropout, and flip/rotation augmentation. Evaluation is ROC/auROC.
//!
//! Data-parallel inner loops (synthesis, per-slice extraction, batch
//! gradients) run on rayon under the default `parallel` feature and fall back
//! to sequential execution without it; outputs are identical either way.

pub mod adam;
pub mod augment;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod head;
pub mod par;
pub mod sampler;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use tensor::{normalize, read_tensor, write_tensor, Tensor};
pub use volume::{DatasetManifest, Label, ManifestEntry, Split, View, Volume};
