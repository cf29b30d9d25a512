//! The trainable windowing front-end: N parallel clamped affine windows over
//! a single-channel image, each channel scaled to the (0, 255) range, mixed
//! down to 3 channels by a 1x1 linear map, then normalized.
//!
//! Window weights and biases train; clamp ceilings are fixed at
//! construction. The ablation variant keeps the same shapes but disables
//! clamping, leaving plain affine channels.

use crate::imagepipe::{ImageTensor, NormalizationSpec, PipeError};
use crate::windowing::{self, AffineWindow, ClampRegion, WindowError, WindowSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("layer expects a single-channel input, got {0} channels")]
    ChannelMismatch(usize),
    #[error("gradient shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("cache image size {cache_h}x{cache_w} does not match gradient {h}x{w}")]
    CacheMismatch {
        cache_h: usize,
        cache_w: usize,
        h: usize,
        w: usize,
    },
    #[error("window {index} is degenerate: {source}")]
    DegenerateWindow { index: usize, source: WindowError },
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Pipe(#[from] PipeError),
}

/// The paper's 14 initial (level, width) windows, full-range window last.
pub fn default_init_windows() -> Vec<WindowSpec> {
    const PAIRS: [(f64, f64); 14] = [
        (100.0, 3000.0),
        (1250.0, 1000.0),
        (1500.0, 3000.0),
        (1750.0, 2000.0),
        (1750.0, 3000.0),
        (2000.0, 2000.0),
        (2250.0, 2000.0),
        (2250.0, 3000.0),
        (2500.0, 2000.0),
        (2500.0, 3000.0),
        (2750.0, 3000.0),
        (3250.0, 1000.0),
        (750.0, 3000.0),
        (2048.0, 4096.0),
    ];
    PAIRS
        .iter()
        .map(|&(level, width)| WindowSpec { level, width })
        .collect()
}

/// N parallel windows plus the N-to-3 channel mixer.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiWindowLayer {
    weights: Vec<f64>,
    biases: Vec<f64>,
    ceilings: Vec<f64>,
    mixer: Vec<f64>, // 3 x N, row-major
    mixer_bias: [f64; 3],
    clamped: bool,
}

/// Gradients matching a layer's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub d_weight: Vec<f64>,
    pub d_bias: Vec<f64>,
    pub d_mixer: Vec<f64>,
    pub d_mixer_bias: [f64; 3],
}

impl LayerGradients {
    pub fn zeros(n: usize) -> Self {
        LayerGradients {
            d_weight: vec![0.0; n],
            d_bias: vec![0.0; n],
            d_mixer: vec![0.0; 3 * n],
            d_mixer_bias: [0.0; 3],
        }
    }

    pub fn add(&mut self, other: &LayerGradients) {
        for (a, b) in self.d_weight.iter_mut().zip(&other.d_weight) {
            *a += b;
        }
        for (a, b) in self.d_bias.iter_mut().zip(&other.d_bias) {
            *a += b;
        }
        for (a, b) in self.d_mixer.iter_mut().zip(&other.d_mixer) {
            *a += b;
        }
        for c in 0..3 {
            self.d_mixer_bias[c] += other.d_mixer_bias[c];
        }
    }
}

/// Intermediate values from `forward` needed by `backward`.
pub struct ForwardCache {
    input: Vec<f64>,
    pre_clamp: Vec<f64>, // N x H x W
    scaled: Vec<f64>,    // N x H x W, post clamp and post 255/ceiling scale
    height: usize,
    width: usize,
    norm: NormalizationSpec,
}

impl MultiWindowLayer {
    /// Build a clamped layer from initial windows. Mixer weights are drawn
    /// uniform within +-sqrt(6/N); mixer bias starts at zero.
    pub fn from_windows(windows: &[WindowSpec], seed: u64) -> Result<Self, LayerError> {
        let n = windows.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut ceilings = Vec::with_capacity(n);
        for w in windows {
            let a = windowing::to_affine(w)?;
            weights.push(a.weight);
            biases.push(a.bias);
            ceilings.push(a.ceiling);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / n as f64).sqrt();
        let mixer = (0..3 * n).map(|_| rng.gen_range(-bound..bound)).collect();
        Ok(MultiWindowLayer {
            weights,
            biases,
            ceilings,
            mixer,
            mixer_bias: [0.0; 3],
            clamped: true,
        })
    }

    /// The "no windowing" ablation: same shapes, clamping disabled, window
    /// weights and biases drawn uniform within +-sqrt(6/fan_in) with
    /// fan_in = 1 for the channels and fan_in = n_in for the mixer. Channel
    /// scale divisors are fixed at the full 12-bit ceiling so the scale
    /// stage is present in both variants.
    pub fn plain_mixer_init(n_in: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chan_bound = 6.0f64.sqrt();
        let weights: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-chan_bound..chan_bound)).collect();
        let biases: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-chan_bound..chan_bound)).collect();
        let mix_bound = (6.0 / n_in as f64).sqrt();
        let mixer = (0..3 * n_in).map(|_| rng.gen_range(-mix_bound..mix_bound)).collect();
        MultiWindowLayer {
            weights,
            biases,
            ceilings: vec![4095.0; n_in],
            mixer,
            mixer_bias: [0.0; 3],
            clamped: false,
        }
    }

    /// Construct with explicit parameters (tests, checkpoint restore).
    pub fn from_parts(
        weights: Vec<f64>,
        biases: Vec<f64>,
        ceilings: Vec<f64>,
        mixer: Vec<f64>,
        mixer_bias: [f64; 3],
        clamped: bool,
    ) -> Result<Self, LayerError> {
        let n = weights.len();
        if biases.len() != n || ceilings.len() != n || mixer.len() != 3 * n || n == 0 {
            return Err(LayerError::ShapeMismatch {
                expected: n,
                got: biases.len().min(ceilings.len()),
            });
        }
        for (i, &c) in ceilings.iter().enumerate() {
            if !(c > 0.0) {
                return Err(LayerError::DegenerateWindow {
                    index: i,
                    source: WindowError::NonPositiveCeiling(c),
                });
            }
        }
        Ok(MultiWindowLayer {
            weights,
            biases,
            ceilings,
            mixer,
            mixer_bias,
            clamped,
        })
    }

    pub fn n_windows(&self) -> usize {
        self.weights.len()
    }

    pub fn is_clamped(&self) -> bool {
        self.clamped
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn ceilings(&self) -> &[f64] {
        &self.ceilings
    }

    pub fn mixer(&self) -> &[f64] {
        &self.mixer
    }

    pub fn mixer_bias(&self) -> &[f64; 3] {
        &self.mixer_bias
    }

    pub fn window(&self, i: usize) -> AffineWindow {
        AffineWindow {
            weight: self.weights[i],
            bias: self.biases[i],
            ceiling: self.ceilings[i],
        }
    }

    /// Trainable parameter slices in canonical order; ceilings are fixed and
    /// deliberately absent.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.weights.as_mut_slice(),
            self.biases.as_mut_slice(),
            self.mixer.as_mut_slice(),
            self.mixer_bias.as_mut_slice(),
        ]
    }

    pub fn grads_as_slices(grads: &LayerGradients) -> Vec<&[f64]> {
        vec![
            grads.d_weight.as_slice(),
            grads.d_bias.as_slice(),
            grads.d_mixer.as_slice(),
            grads.d_mixer_bias.as_slice(),
        ]
    }

    /// Window, scale, mix, normalize. Input is a single-channel image in raw
    /// pixel units; output is 3 x H x W.
    pub fn forward(
        &self,
        img: &ImageTensor,
        norm: &NormalizationSpec,
    ) -> Result<(ImageTensor, ForwardCache), LayerError> {
        if img.channels() != 1 {
            return Err(LayerError::ChannelMismatch(img.channels()));
        }
        let (h, w) = (img.height(), img.width());
        let plane = h * w;
        let n = self.n_windows();
        let input = img.channel(0).to_vec();

        let mut pre_clamp = vec![0.0; n * plane];
        let mut scaled = vec![0.0; n * plane];
        for i in 0..n {
            let (wi, bi, ci) = (self.weights[i], self.biases[i], self.ceilings[i]);
            let scale = 255.0 / ci;
            let z_plane = &mut pre_clamp[i * plane..(i + 1) * plane];
            let s_plane = &mut scaled[i * plane..(i + 1) * plane];
            for (p, &px) in input.iter().enumerate() {
                let z = wi * px + bi;
                z_plane[p] = z;
                let a = if self.clamped { z.max(0.0).min(ci) } else { z };
                s_plane[p] = a * scale;
            }
        }

        let mut out = vec![0.0; 3 * plane];
        for c in 0..3 {
            let row = &self.mixer[c * n..(c + 1) * n];
            let dst = &mut out[c * plane..(c + 1) * plane];
            dst.iter_mut().for_each(|v| *v = self.mixer_bias[c]);
            for (i, &m) in row.iter().enumerate() {
                let s_plane = &scaled[i * plane..(i + 1) * plane];
                for (v, &s) in dst.iter_mut().zip(s_plane) {
                    *v += m * s;
                }
            }
            let (mean, inv_std) = (norm.mean[c], 1.0 / norm.std[c]);
            for v in dst.iter_mut() {
                *v = (*v / 255.0 - mean) * inv_std;
            }
        }

        let out = ImageTensor::new(3, h, w, img.bit_depth(), out)?;
        Ok((
            out,
            ForwardCache {
                input,
                pre_clamp,
                scaled,
                height: h,
                width: w,
                norm: *norm,
            },
        ))
    }

    /// Reverse-mode derivatives of `forward`. `d_out` is 3 x H x W; returns
    /// parameter gradients and the input-pixel gradient (1 x H x W).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: &[f64],
    ) -> Result<(LayerGradients, Vec<f64>), LayerError> {
        let plane = cache.height * cache.width;
        if d_out.len() != 3 * plane {
            return Err(LayerError::ShapeMismatch {
                expected: 3 * plane,
                got: d_out.len(),
            });
        }
        let n = self.n_windows();
        if cache.pre_clamp.len() != n * plane {
            return Err(LayerError::CacheMismatch {
                cache_h: cache.height,
                cache_w: cache.width,
                h: cache.pre_clamp.len() / n.max(1) / cache.width.max(1),
                w: cache.width,
            });
        }

        // Through normalization: d_y = d_out / (255 * std_c).
        let mut d_y = vec![0.0; 3 * plane];
        let mut grads = LayerGradients::zeros(n);
        for c in 0..3 {
            let f = 1.0 / (255.0 * cache.norm.std[c]);
            let src = &d_out[c * plane..(c + 1) * plane];
            let dst = &mut d_y[c * plane..(c + 1) * plane];
            let mut bias_sum = 0.0;
            for (d, &g) in dst.iter_mut().zip(src) {
                *d = g * f;
                bias_sum += *d;
            }
            grads.d_mixer_bias[c] = bias_sum;
        }

        // Mixer gradients and the per-window upstream signal.
        let mut d_scaled = vec![0.0; n * plane];
        for c in 0..3 {
            let dy = &d_y[c * plane..(c + 1) * plane];
            for i in 0..n {
                let m = self.mixer[c * n + i];
                let s_plane = &cache.scaled[i * plane..(i + 1) * plane];
                let ds_plane = &mut d_scaled[i * plane..(i + 1) * plane];
                let mut mix_sum = 0.0;
                for p in 0..plane {
                    mix_sum += dy[p] * s_plane[p];
                    ds_plane[p] += m * dy[p];
                }
                grads.d_mixer[c * n + i] = mix_sum;
            }
        }

        // Through the scale and clamp back to window parameters.
        let mut d_input = vec![0.0; plane];
        for i in 0..n {
            let ci = self.ceilings[i];
            let scale = 255.0 / ci;
            let wi = self.weights[i];
            let z_plane = &cache.pre_clamp[i * plane..(i + 1) * plane];
            let ds_plane = &d_scaled[i * plane..(i + 1) * plane];
            let (mut dw, mut db) = (0.0, 0.0);
            for p in 0..plane {
                let open = !self.clamped || (z_plane[p] > 0.0 && z_plane[p] < ci);
                if open {
                    let dz = ds_plane[p] * scale;
                    dw += dz * cache.input[p];
                    db += dz;
                    d_input[p] += dz * wi;
                }
            }
            grads.d_weight[i] = dw;
            grads.d_bias[i] = db;
        }
        Ok((grads, d_input))
    }

    /// Recover each channel's (level, width) from its trained parameters.
    pub fn recover_windows(&self) -> Result<Vec<WindowSpec>, LayerError> {
        (0..self.n_windows())
            .map(|i| {
                windowing::from_affine(&self.window(i))
                    .map_err(|source| LayerError::DegenerateWindow { index: i, source })
            })
            .collect()
    }

    /// Clamp region of window `i` at pixel value `px`; always `Linear` for
    /// unclamped layers.
    pub fn region(&self, i: usize, px: f64) -> ClampRegion {
        if !self.clamped {
            return ClampRegion::Linear;
        }
        windowing::clamp_region(px, &self.window(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagepipe::ImageTensor;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn paper_init_list() {
        let windows = default_init_windows();
        assert_eq!(windows.len(), 14);
        assert_eq!((windows[0].level, windows[0].width), (100.0, 3000.0));
        assert_eq!((windows[13].level, windows[13].width), (2048.0, 4096.0));
    }

    /// Straight-line re-evaluation of the pipeline, independent of forward.
    fn reference_forward(
        layer: &MultiWindowLayer,
        img: &[f64],
        norm: &NormalizationSpec,
    ) -> Vec<Vec<f64>> {
        let n = layer.n_windows();
        let mut out = vec![vec![0.0; img.len()]; 3];
        for (p, &px) in img.iter().enumerate() {
            let mut s = vec![0.0; n];
            for i in 0..n {
                let z = layer.weights()[i] * px + layer.biases()[i];
                let a = if layer.is_clamped() {
                    z.max(0.0).min(layer.ceilings()[i])
                } else {
                    z
                };
                s[i] = a * 255.0 / layer.ceilings()[i];
            }
            for c in 0..3 {
                let mut y = layer.mixer_bias()[c];
                for i in 0..n {
                    y += layer.mixer()[c * n + i] * s[i];
                }
                out[c][p] = (y / 255.0 - norm.mean[c]) / norm.std[c];
            }
        }
        out
    }

    #[test]
    fn forward_identity_window_centers_to_zero() {
        let layer = MultiWindowLayer::from_parts(
            vec![1.0],
            vec![0.0],
            vec![4096.0],
            vec![1.0, 1.0, 1.0],
            [0.0; 3],
            true,
        )
        .unwrap();
        let norm = NormalizationSpec::imagenet();
        // Pixel chosen so the pre-normalization value is 255 * mean_0.
        let px = 4096.0 * norm.mean[0];
        let img = ImageTensor::new(1, 2, 2, 12, vec![px; 4]).unwrap();
        let (out, _) = layer.forward(&img, &norm).unwrap();
        assert!(out.get(0, 0, 0).abs() < 1e-12);
    }

    #[test]
    fn forward_lower_clamp_is_zero_before_mixing() {
        let spec = WindowSpec { level: 1250.0, width: 1000.0 };
        let layer = MultiWindowLayer::from_windows(&[spec], 1).unwrap();
        let norm = NormalizationSpec::imagenet();
        let img = ImageTensor::new(1, 1, 1, 12, vec![spec.lower()]).unwrap();
        let (_, cache) = layer.forward(&img, &norm).unwrap();
        assert_eq!(cache.scaled[0], 0.0);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let windows = [
                WindowSpec { level: rng.gen_range(500.0..3500.0), width: rng.gen_range(200.0..4000.0) },
                WindowSpec { level: rng.gen_range(500.0..3500.0), width: rng.gen_range(200.0..4000.0) },
            ];
            let layer = MultiWindowLayer::from_windows(&windows, trial).unwrap();
            let norm = NormalizationSpec::imagenet();
            let pixels: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..4095.0)).collect();
            let img = ImageTensor::new(1, 2, 2, 12, pixels.clone()).unwrap();
            let (out, _) = layer.forward(&img, &norm).unwrap();
            let reference = reference_forward(&layer, &pixels, &norm);
            for c in 0..3 {
                for p in 0..4 {
                    assert!(close(out.channel(c)[p], reference[c][p], 1e-12));
                }
            }
        }
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let layer = MultiWindowLayer::from_windows(&default_init_windows(), 3).unwrap();
        let norm = NormalizationSpec::imagenet();
        let img = ImageTensor::new(1, 2, 2, 12, vec![100.0, 2000.0, 3000.0, 4000.0]).unwrap();
        let (_, cache) = layer.forward(&img, &norm).unwrap();
        let (grads, d_img) = layer.backward(&cache, &vec![0.0; 12]).unwrap();
        assert!(grads.d_weight.iter().all(|&g| g == 0.0));
        assert!(grads.d_mixer.iter().all(|&g| g == 0.0));
        assert!(d_img.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_saturated_window_gets_no_gradient() {
        // Window far above the pixel range: every pixel saturates low.
        let windows = [WindowSpec { level: 3900.0, width: 100.0 }];
        let layer = MultiWindowLayer::from_windows(&windows, 5).unwrap();
        let norm = NormalizationSpec::imagenet();
        let img = ImageTensor::new(1, 2, 2, 12, vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let (_, cache) = layer.forward(&img, &norm).unwrap();
        let d_out: Vec<f64> = (0..12).map(|i| (i + 1) as f64).collect();
        let (grads, _) = layer.backward(&cache, &d_out).unwrap();
        assert_eq!(grads.d_weight[0], 0.0);
        assert_eq!(grads.d_bias[0], 0.0);
        // The mixer bias still sees gradient.
        assert!(grads.d_mixer_bias[0] != 0.0);
    }

    /// Finite-difference check of every layer parameter against the scalar
    /// loss sum(d_out * forward). Samples where a perturbation crosses a
    /// clamp kink are excluded by comparing region signatures.
    #[test]
    fn backward_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let norm = NormalizationSpec::imagenet();
        let mut configs_checked = 0;
        let mut trial = 0;
        while configs_checked < 30 {
            trial += 1;
            let windows = [
                WindowSpec { level: rng.gen_range(800.0..3200.0), width: rng.gen_range(300.0..3500.0) },
                WindowSpec { level: rng.gen_range(800.0..3200.0), width: rng.gen_range(300.0..3500.0) },
            ];
            let layer = MultiWindowLayer::from_windows(&windows, trial).unwrap();
            let pixels: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..4095.0)).collect();
            let img = ImageTensor::new(1, 2, 2, 12, pixels.clone()).unwrap();
            let d_out: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let (_, cache) = layer.forward(&img, &norm).unwrap();
            let (grads, d_img) = layer.backward(&cache, &d_out).unwrap();

            let loss = |l: &MultiWindowLayer, im: &[f64]| -> f64 {
                let t = ImageTensor::new(1, 2, 2, 12, im.to_vec()).unwrap();
                let (out, _) = l.forward(&t, &norm).unwrap();
                out.data().iter().zip(&d_out).map(|(o, g)| o * g).sum()
            };
            let regions = |l: &MultiWindowLayer, im: &[f64]| -> Vec<ClampRegion> {
                im.iter()
                    .flat_map(|&px| (0..2).map(move |i| l.region(i, px)).collect::<Vec<_>>())
                    .collect()
            };

            let mut ok = true;
            let mut check = |analytic: f64, plus: &MultiWindowLayer, minus: &MultiWindowLayer, h: f64| {
                if regions(plus, &pixels) != regions(minus, &pixels) {
                    return; // kink crossed; sample excluded
                }
                let fd = (loss(plus, &pixels) - loss(minus, &pixels)) / (2.0 * h);
                if !close(analytic, fd, 1e-5) {
                    ok = false;
                }
            };

            for i in 0..2 {
                let h = 1e-6 * layer.weights()[i].abs().max(1.0);
                let mut plus = layer.clone();
                plus.weights[i] += h;
                let mut minus = layer.clone();
                minus.weights[i] -= h;
                check(grads.d_weight[i], &plus, &minus, h);

                let h = 1e-3;
                let mut plus = layer.clone();
                plus.biases[i] += h;
                let mut minus = layer.clone();
                minus.biases[i] -= h;
                check(grads.d_bias[i], &plus, &minus, h);
            }
            for k in 0..6 {
                let h = 1e-6;
                let mut plus = layer.clone();
                plus.mixer[k] += h;
                let mut minus = layer.clone();
                minus.mixer[k] -= h;
                check(grads.d_mixer[k], &plus, &minus, h);
            }
            for c in 0..3 {
                let h = 1e-6;
                let mut plus = layer.clone();
                plus.mixer_bias[c] += h;
                let mut minus = layer.clone();
                minus.mixer_bias[c] -= h;
                check(grads.d_mixer_bias[c], &plus, &minus, h);
            }
            // Input-pixel gradients.
            for p in 0..4 {
                let h = 1e-3 * 4095.0;
                let mut plus = pixels.clone();
                plus[p] += h;
                let mut minus = pixels.clone();
                minus[p] -= h;
                if regions(&layer, &plus) != regions(&layer, &minus) {
                    continue;
                }
                let fd = (loss(&layer, &plus) - loss(&layer, &minus)) / (2.0 * h);
                if !close(d_img[p], fd, 1e-5) {
                    ok = false;
                }
            }
            assert!(ok, "gradient mismatch in trial {trial}");
            configs_checked += 1;
        }
    }

    #[test]
    fn recover_windows_round_trips_init() {
        let init = default_init_windows();
        let layer = MultiWindowLayer::from_windows(&init, 9).unwrap();
        let recovered = layer.recover_windows().unwrap();
        for (a, b) in init.iter().zip(&recovered) {
            assert!(close(a.level, b.level, 1e-9));
            assert!(close(a.width, b.width, 1e-9));
        }
    }

    #[test]
    fn recover_windows_hand_set_identity() {
        let layer = MultiWindowLayer::from_parts(
            vec![1.0],
            vec![0.0],
            vec![4096.0],
            vec![1.0; 3],
            [0.0; 3],
            true,
        )
        .unwrap();
        let w = &layer.recover_windows().unwrap()[0];
        assert_eq!((w.level, w.width), (2048.0, 4096.0));
    }

    #[test]
    fn recover_windows_zero_weight_names_channel() {
        let layer = MultiWindowLayer::from_parts(
            vec![1.0, 0.0],
            vec![0.0, 0.0],
            vec![4096.0, 4096.0],
            vec![0.1; 6],
            [0.0; 3],
            true,
        )
        .unwrap();
        match layer.recover_windows().unwrap_err() {
            LayerError::DegenerateWindow { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn plain_init_deterministic_and_bounded() {
        let a = MultiWindowLayer::plain_mixer_init(14, 77);
        let b = MultiWindowLayer::plain_mixer_init(14, 77);
        assert_eq!(a, b);
        assert!(!a.is_clamped());
        let chan_bound = 6.0f64.sqrt();
        assert!(a.weights().iter().all(|w| w.abs() <= chan_bound));
        let mix_bound = (6.0f64 / 14.0).sqrt();
        assert!(a.mixer().iter().all(|m| m.abs() <= mix_bound));
    }

    #[test]
    fn unclamped_forward_is_affine() {
        use rand::{Rng, SeedableRng};
        let layer = MultiWindowLayer::plain_mixer_init(4, 13);
        let norm = NormalizationSpec::imagenet();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..4095.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..4095.0)).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let fwd = |px: &[f64]| {
                let img = ImageTensor::new(1, 2, 2, 12, px.to_vec()).unwrap();
                let (_, cache) = layer.forward(&img, &norm).unwrap();
                cache.scaled.clone() // pre-normalization stage
            };
            let (fa, fb, fs, f0) = (fwd(&a), fwd(&b), fwd(&sum), fwd(&[0.0; 4]));
            for p in 0..fa.len() {
                assert!(close(fs[p], fa[p] + fb[p] - f0[p], 1e-9));
            }
        }
    }

    #[test]
    fn mixer_absorbs_per_channel_rescaling() {
        // Multiplying channel i's post-scale output by c and dividing mixer
        // column i by c leaves the mixed output unchanged.
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let windows = [
            WindowSpec { level: 1200.0, width: 900.0 },
            WindowSpec { level: 2600.0, width: 1800.0 },
        ];
        let layer = MultiWindowLayer::from_windows(&windows, 21).unwrap();
        let norm = NormalizationSpec::imagenet();
        let pixels: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..4095.0)).collect();
        let img = ImageTensor::new(1, 2, 2, 12, pixels.clone()).unwrap();
        let (out, cache) = layer.forward(&img, &norm).unwrap();

        let c_scale = 3.7;
        let n = layer.n_windows();
        for ch in 0..3 {
            for p in 0..pixels.len() {
                let mut y = layer.mixer_bias()[ch];
                for i in 0..n {
                    let s = cache.scaled[i * pixels.len() + p];
                    let (s, m) = if i == 0 {
                        (s * c_scale, layer.mixer()[ch * n + i] / c_scale)
                    } else {
                        (s, layer.mixer()[ch * n + i])
                    };
                    y += m * s;
                }
                let normalized = (y / 255.0 - norm.mean[ch]) / norm.std[ch];
                assert!(close(normalized, out.channel(ch)[p], 1e-9));
            }
        }
    }

    #[test]
    fn ceilings_never_exposed_as_trainable() {
        let mut layer = MultiWindowLayer::from_windows(&default_init_windows(), 1).unwrap();
        let before = layer.ceilings().to_vec();
        let n_params: usize = layer.params_mut().iter().map(|p| p.len()).sum();
        // windows (2*14) + mixer (3*14) + mixer bias (3)
        assert_eq!(n_params, 28 + 42 + 3);
        for slice in layer.params_mut() {
            for v in slice.iter_mut() {
                *v += 0.25;
            }
        }
        assert_eq!(layer.ceilings(), before.as_slice());
    }

    #[test]
    fn forward_rejects_multichannel_input() {
        let layer = MultiWindowLayer::from_windows(&default_init_windows(), 1).unwrap();
        let img = ImageTensor::zeros(3, 2, 2, 12);
        assert!(matches!(
            layer.forward(&img, &NormalizationSpec::imagenet()),
            Err(LayerError::ChannelMismatch(3))
        ));
    }
}
