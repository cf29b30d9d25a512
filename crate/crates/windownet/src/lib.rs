//! Learnable intensity windowing for high-bit-depth grayscale image
//! classification: the window operation and its clamped-affine form, a
//! trainable multi-window layer, a small CNN training stack, ROC-AUC
//! evaluation, a synthetic benchmark generator, and the experiment harness
//! tying them together.

pub mod experiments;
pub mod imagepipe;
pub mod metrics;
pub mod multiwindow;
pub mod seeds;
pub mod synthlab;
pub mod tinynet;
pub mod windowing;
