//! Gland segmentation toolkit for H&E histopathology images.
//!
//! The pipeline has three stages: preprocessing (stain deconvolution into the
//! hematoxylin component, optional unsharp masking), a dual-output
//! LinkNet-style encoder-decoder trained with composite BCE/Dice/Accuracy
//! losses, and post-processing (Otsu thresholding, morphology, hole filling,
//! connected components) followed by object-level evaluation metrics.
//!
//! Everything runs on the CPU on top of a small tape-based autodiff tensor
//! library in [`tensor`]; no external ML framework is involved.

pub mod losses;
pub mod mask;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod tensor;

pub use mask::{BinaryMask, LabeledMask, ProbabilityMap};
pub use tensor::Tensor;
