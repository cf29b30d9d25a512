//! Intensity windowing and its clamped-affine reformulation.
//!
//! A window is the map `px -> min(max(px, L), U)` with `L = level - width/2`
//! and `U = level + width/2`. The same operation, up to a positive affine
//! rescaling of the output, can be written as `min(max(W*px + b, 0), U)` with
//! `W = U/width` and `b = -W*L`, which is the form a 1x1 convolution can
//! learn. This module holds both parameterizations, the conversions between
//! them, and the clamp subgradient used for training.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("window width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("window parameters produce non-finite affine coefficients (level={level}, width={width})")]
    NonFiniteAffine { level: f64, width: f64 },
    #[error("affine ceiling must be positive, got {0}")]
    NonPositiveCeiling(f64),
    #[error("affine window with zero weight is degenerate and cannot be inverted")]
    DegenerateWeight,
}

/// A window in raw pixel units: center (level) and range (width).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub level: f64,
    pub width: f64,
}

impl WindowSpec {
    pub fn new(level: f64, width: f64) -> Result<Self, WindowError> {
        if !(width > 0.0) {
            return Err(WindowError::NonPositiveWidth(width));
        }
        Ok(WindowSpec { level, width })
    }

    /// Lower display limit `L = level - width/2`.
    pub fn lower(&self) -> f64 {
        self.level - self.width / 2.0
    }

    /// Upper display limit `U = level + width/2`.
    pub fn upper(&self) -> f64 {
        self.level + self.width / 2.0
    }

    /// A recovered window has negative width when training flipped the
    /// channel's contrast. Such a spec is reported, not applied.
    pub fn is_inverted(&self) -> bool {
        self.width < 0.0
    }
}

/// The clamped affine form `px -> min(max(weight*px + bias, 0), ceiling)`.
///
/// The ceiling is fixed at construction and stays constant while weight and
/// bias train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineWindow {
    pub weight: f64,
    pub bias: f64,
    pub ceiling: f64,
}

impl AffineWindow {
    pub fn new(weight: f64, bias: f64, ceiling: f64) -> Result<Self, WindowError> {
        if !(ceiling > 0.0) {
            return Err(WindowError::NonPositiveCeiling(ceiling));
        }
        Ok(AffineWindow {
            weight,
            bias,
            ceiling,
        })
    }
}

/// `min(max(px, L), U)` for the given window.
pub fn apply_window(px: f64, w: &WindowSpec) -> f64 {
    px.max(w.lower()).min(w.upper())
}

/// Convert `(level, width)` to the trainable `(weight, bias, ceiling)` form.
///
/// `ceiling = U`, `weight = U/width`, `bias = -weight * L`.
pub fn to_affine(w: &WindowSpec) -> Result<AffineWindow, WindowError> {
    let ceiling = w.upper();
    let weight = ceiling / w.width;
    let bias = -weight * w.lower();
    if !weight.is_finite() || !bias.is_finite() || !(ceiling > 0.0) {
        return Err(WindowError::NonFiniteAffine {
            level: w.level,
            width: w.width,
        });
    }
    AffineWindow::new(weight, bias, ceiling)
}

/// Recover `(level, width)` from a trained affine window.
///
/// `width = ceiling/weight`, `level = -bias/weight + width/2`. A negative
/// weight yields a spec with negative width (an inverted window); a zero
/// weight is degenerate.
pub fn from_affine(a: &AffineWindow) -> Result<WindowSpec, WindowError> {
    if a.weight == 0.0 {
        return Err(WindowError::DegenerateWeight);
    }
    let width = a.ceiling / a.weight;
    let level = -a.bias / a.weight + width / 2.0;
    Ok(WindowSpec { level, width })
}

/// `min(max(weight*px + bias, 0), ceiling)`.
pub fn apply_affine(px: f64, a: &AffineWindow) -> f64 {
    (a.weight * px + a.bias).max(0.0).min(a.ceiling)
}

/// Which piece of the clamped affine map a pre-activation falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClampRegion {
    LowerSaturated,
    Linear,
    UpperSaturated,
}

/// Region of `weight*px + bias` relative to `[0, ceiling]`. Points exactly on
/// a kink count as saturated.
pub fn clamp_region(px: f64, a: &AffineWindow) -> ClampRegion {
    let z = a.weight * px + a.bias;
    if z <= 0.0 {
        ClampRegion::LowerSaturated
    } else if z >= a.ceiling {
        ClampRegion::UpperSaturated
    } else {
        ClampRegion::Linear
    }
}

/// Derivatives of `apply_affine` with respect to `(weight, bias, px)`.
///
/// Inside the open linear region these are `(px, 1, weight)`; in a saturated
/// region, and exactly on a kink, all three are zero.
pub fn affine_grad(px: f64, a: &AffineWindow) -> (f64, f64, f64) {
    match clamp_region(px, a) {
        ClampRegion::Linear => (px, 1.0, a.weight),
        _ => (0.0, 0.0, 0.0),
    }
}
