//! Image ingestion and the pre/post-processing around the windowing layer:
//! resize, bit-depth quantization, scaling to the (0, 255) range, and
//! channel normalization.

mod io;

pub use io::{load_image, save_image, write_pgm_u8};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipeError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: String, detail: String },
    #[error("unsupported format in {path}: {detail}")]
    UnsupportedFormat { path: String, detail: String },
    #[error("truncated pixel payload in {path}: expected {expected} bytes, file ends at byte offset {offset}")]
    TruncatedPayload {
        path: String,
        expected: usize,
        offset: usize,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Rank-3 pixel array (channels, height, width) with the bit depth the
/// values came from. A freshly ingested image holds values in
/// `[0, 2^bit_depth - 1]`; downstream transforms may leave any finite range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    bit_depth: u8,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        bit_depth: u8,
        data: Vec<f64>,
    ) -> Result<Self, PipeError> {
        if data.len() != channels * height * width {
            return Err(PipeError::Parameter(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if !matches!(bit_depth, 8 | 12 | 16) {
            return Err(PipeError::Parameter(format!(
                "bit depth must be 8, 12 or 16, got {bit_depth}"
            )));
        }
        Ok(ImageTensor {
            channels,
            height,
            width,
            bit_depth,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, bit_depth: u8) -> Self {
        ImageTensor::new(channels, height, width, bit_depth, vec![0.0; channels * height * width])
            .expect("valid shape")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    /// Nominal maximum for the declared bit depth, `2^bit_depth - 1`.
    pub fn nominal_max(&self) -> f64 {
        ((1u32 << self.bit_depth) - 1) as f64
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Replicate a single-channel image across `n` channels.
    pub fn replicate(&self, n: usize) -> Result<ImageTensor, PipeError> {
        if self.channels != 1 {
            return Err(PipeError::Parameter(format!(
                "replicate expects a single-channel image, got {}",
                self.channels
            )));
        }
        let mut data = Vec::with_capacity(n * self.data.len());
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        ImageTensor::new(n, self.height, self.width, self.bit_depth, data)
    }
}

/// Per-channel mean and standard deviation applied after division by 255.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormalizationSpec {
    pub fn new(mean: [f64; 3], std: [f64; 3]) -> Result<Self, PipeError> {
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(PipeError::Parameter(format!(
                "normalization std must be strictly positive, got {std:?}"
            )));
        }
        Ok(NormalizationSpec { mean, std })
    }

    /// The published ImageNet channel statistics.
    pub fn imagenet() -> Self {
        NormalizationSpec {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeFilter {
    Bilinear,
    Nearest,
}

/// Resize every channel to `h` x `w`.
///
/// Bilinear sampling uses half-pixel centers (corner alignment disabled):
/// `src = (dst + 0.5) * src_dim / dst_dim - 0.5`, with edge clamping. A
/// same-size resize returns the input values exactly.
pub fn resize(
    img: &ImageTensor,
    h: usize,
    w: usize,
    filter: ResizeFilter,
) -> Result<ImageTensor, PipeError> {
    if h == 0 || w == 0 {
        return Err(PipeError::Parameter(format!(
            "resize target must be at least 1x1, got {h}x{w}"
        )));
    }
    let (sh, sw) = (img.height, img.width);
    let mut out = ImageTensor::zeros(img.channels, h, w, img.bit_depth);
    let scale_y = sh as f64 / h as f64;
    let scale_x = sw as f64 / w as f64;
    for c in 0..img.channels {
        let src = img.channel(c);
        for dy in 0..h {
            for dx in 0..w {
                let v = match filter {
                    ResizeFilter::Bilinear => {
                        let sy = (dy as f64 + 0.5) * scale_y - 0.5;
                        let sx = (dx as f64 + 0.5) * scale_x - 0.5;
                        let y0 = sy.floor();
                        let x0 = sx.floor();
                        let ty = sy - y0;
                        let tx = sx - x0;
                        let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);
                        let y0i = clamp(y0, sh);
                        let y1i = clamp(y0 + 1.0, sh);
                        let x0i = clamp(x0, sw);
                        let x1i = clamp(x0 + 1.0, sw);
                        let p00 = src[y0i * sw + x0i];
                        let p01 = src[y0i * sw + x1i];
                        let p10 = src[y1i * sw + x0i];
                        let p11 = src[y1i * sw + x1i];
                        let top = p00 + (p01 - p00) * tx;
                        let bot = p10 + (p11 - p10) * tx;
                        top + (bot - top) * ty
                    }
                    ResizeFilter::Nearest => {
                        let sy = ((dy as f64 + 0.5) * scale_y).floor().max(0.0) as usize;
                        let sx = ((dx as f64 + 0.5) * scale_x).floor().max(0.0) as usize;
                        src[sy.min(sh - 1) * sw + sx.min(sw - 1)]
                    }
                };
                out.set(c, dy, dx, v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizeMode {
    /// `px' = round(px * (2^t - 1) / (2^s - 1))`, the common PNG-style map.
    RoundRescale,
    /// `px' = floor(px / 2^(s - t))`, hardware truncation.
    Shift,
}

/// Reduce the bit depth of all pixels. `target_bits` must not exceed the
/// image's declared depth.
pub fn quantize(
    img: &ImageTensor,
    target_bits: u8,
    mode: QuantizeMode,
) -> Result<ImageTensor, PipeError> {
    if target_bits > img.bit_depth {
        return Err(PipeError::Parameter(format!(
            "quantize target {target_bits} bits exceeds source depth {}",
            img.bit_depth
        )));
    }
    if !matches!(target_bits, 8 | 12 | 16) {
        return Err(PipeError::Parameter(format!(
            "quantize target must be 8, 12 or 16, got {target_bits}"
        )));
    }
    let mut out = img.clone();
    match mode {
        QuantizeMode::RoundRescale => {
            let factor =
                (((1u32 << target_bits) - 1) as f64) / (((1u32 << img.bit_depth) - 1) as f64);
            for v in out.data.iter_mut() {
                *v = (*v * factor).round();
            }
        }
        QuantizeMode::Shift => {
            let divisor = (1u64 << (img.bit_depth - target_bits)) as f64;
            for v in out.data.iter_mut() {
                *v = (*v / divisor).floor();
            }
        }
    }
    out.bit_depth = target_bits;
    Ok(out)
}

/// Multiply every pixel by `255 / source_max`. Bit-depth provenance is kept.
pub fn scale_to_255(img: &ImageTensor, source_max: f64) -> Result<ImageTensor, PipeError> {
    if !(source_max > 0.0) {
        return Err(PipeError::Parameter(format!(
            "source_max must be positive, got {source_max}"
        )));
    }
    let mut out = img.clone();
    let factor = 255.0 / source_max;
    for v in out.data.iter_mut() {
        *v *= factor;
    }
    Ok(out)
}

/// Per-channel `(px/255 - mean) / std` on a 3-channel image.
pub fn normalize(img: &ImageTensor, spec: &NormalizationSpec) -> Result<ImageTensor, PipeError> {
    if img.channels != 3 {
        return Err(PipeError::Parameter(format!(
            "normalize expects 3 channels, got {}",
            img.channels
        )));
    }
    let mut out = img.clone();
    let plane = img.height * img.width;
    for c in 0..3 {
        let mean = spec.mean[c];
        let inv_std = 1.0 / spec.std[c];
        for v in out.data[c * plane..(c + 1) * plane].iter_mut() {
            *v = (*v / 255.0 - mean) * inv_std;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageTensor::new(1, 8, 8, 12, vec![7.5; 64]).unwrap();
        let out = resize(&img, 5, 3, ResizeFilter::Bilinear).unwrap();
        assert!(out.data().iter().all(|&v| (v - 7.5).abs() < 1e-12));
    }

    #[test]
    fn resize_2x2_to_column_means() {
        let img = ImageTensor::new(1, 2, 2, 12, vec![0.0, 4095.0, 0.0, 4095.0]).unwrap();
        let out = resize(&img, 2, 1, ResizeFilter::Bilinear).unwrap();
        // Half-pixel centers: the single output column samples x = 0.5,
        // the midpoint of the two input columns.
        assert_eq!(out.get(0, 0, 0), 2047.5);
        assert_eq!(out.get(0, 1, 0), 2047.5);
    }

    #[test]
    fn resize_identity_is_exact() {
        let data: Vec<f64> = (0..36).map(|i| (i * 113 % 4096) as f64).collect();
        let img = ImageTensor::new(1, 6, 6, 12, data.clone()).unwrap();
        let out = resize(&img, 6, 6, ResizeFilter::Bilinear).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn resize_extrema_bounded() {
        let data: Vec<f64> = (0..64).map(|i| ((i * 829) % 4096) as f64).collect();
        let img = ImageTensor::new(1, 8, 8, 12, data.clone()).unwrap();
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = resize(&img, 13, 5, ResizeFilter::Bilinear).unwrap();
        for &v in out.data() {
            assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn resize_rejects_zero_target() {
        let img = ImageTensor::zeros(1, 4, 4, 8);
        assert!(resize(&img, 0, 4, ResizeFilter::Bilinear).is_err());
    }

    #[test]
    fn quantize_examples() {
        let img = ImageTensor::new(1, 1, 3, 12, vec![4095.0, 2048.0, 0.0]).unwrap();
        let rr = quantize(&img, 8, QuantizeMode::RoundRescale).unwrap();
        assert_eq!(rr.data(), &[255.0, 128.0, 0.0]);
        assert_eq!(rr.bit_depth(), 8);
        let sh = quantize(&img, 8, QuantizeMode::Shift).unwrap();
        assert_eq!(sh.data(), &[255.0, 128.0, 0.0]);
    }

    #[test]
    fn quantize_rejects_upscale() {
        let img = ImageTensor::zeros(1, 2, 2, 8);
        assert!(quantize(&img, 12, QuantizeMode::RoundRescale).is_err());
    }

    #[test]
    fn quantize_monotone_and_surjective() {
        let data: Vec<f64> = (0..4096).map(|i| i as f64).collect();
        let img = ImageTensor::new(1, 64, 64, 12, data).unwrap();
        let q = quantize(&img, 8, QuantizeMode::RoundRescale).unwrap();
        let mut seen = [false; 256];
        let mut prev = -1.0;
        for &v in q.data() {
            assert!(v >= prev);
            prev = v;
            seen[v as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn quantize_never_increases_distinct_values() {
        use std::collections::BTreeSet;
        let data: Vec<f64> = (0..4096).map(|i| ((i * 2654435761u64) % 4096) as f64).collect();
        let img = ImageTensor::new(1, 64, 64, 12, data).unwrap();
        let before: BTreeSet<u64> = img.data().iter().map(|&v| v as u64).collect();
        let q = quantize(&img, 8, QuantizeMode::RoundRescale).unwrap();
        let after: BTreeSet<u64> = q.data().iter().map(|&v| v as u64).collect();
        assert!(after.len() <= before.len());
        assert!(after.len() <= 256);
    }

    #[test]
    fn scale_examples() {
        let img = ImageTensor::new(1, 1, 2, 12, vec![4095.0, 0.0]).unwrap();
        let out = scale_to_255(&img, 4095.0).unwrap();
        assert_eq!(out.data(), &[255.0, 0.0]);
        assert_eq!(out.bit_depth(), 12);
        let win = ImageTensor::new(1, 1, 1, 12, vec![1750.0]).unwrap();
        assert_eq!(scale_to_255(&win, 1750.0).unwrap().data(), &[255.0]);
        assert!(scale_to_255(&img, 0.0).is_err());
    }

    #[test]
    fn normalize_centering() {
        let spec = NormalizationSpec::imagenet();
        let mut img = ImageTensor::zeros(3, 1, 1, 8);
        img.set(0, 0, 0, 255.0 * spec.mean[0]);
        let out = normalize(&img, &spec).unwrap();
        assert!(out.get(0, 0, 0).abs() < 1e-12);
        assert!((out.get(1, 0, 0) + spec.mean[1] / spec.std[1]).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_wrong_channel_count() {
        let img = ImageTensor::zeros(1, 2, 2, 8);
        assert!(normalize(&img, &NormalizationSpec::imagenet()).is_err());
    }

    #[test]
    fn normalize_inverts_analytically() {
        let spec = NormalizationSpec::imagenet();
        let data: Vec<f64> = (0..27).map(|i| (i * 31 % 256) as f64).collect();
        let img = ImageTensor::new(3, 3, 3, 8, data).unwrap();
        let out = normalize(&img, &spec).unwrap();
        // Independent algebraic inverse: px = (y*std + mean) * 255.
        for c in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    let recovered = (out.get(c, y, x) * spec.std[c] + spec.mean[c]) * 255.0;
                    assert!((recovered - img.get(c, y, x)).abs() < 1e-12 * 255.0);
                }
            }
        }
    }
}
