//! A small convolutional classifier head: two 3x3 conv + ReLU + 2x2 average
//! pool stages, global average pooling, and a linear layer to C logits.
//! Forward and reverse passes are written out directly; the convolutions run
//! as shift-and-accumulate passes over whole rows so the inner loops stay
//! tight.

use super::TrainError;
use crate::seeds;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONV1_CH: usize = 8;
pub const CONV2_CH: usize = 16;
const K: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TinyBackbone {
    pub n_classes: usize,
    conv1_w: Vec<f64>, // [8][3][3][3]
    conv1_b: Vec<f64>,
    conv2_w: Vec<f64>, // [16][8][3][3]
    conv2_b: Vec<f64>,
    fc_w: Vec<f64>, // [C][16]
    fc_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGradients {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
}

impl BackboneGradients {
    pub fn zeros(n_classes: usize) -> Self {
        BackboneGradients {
            conv1_w: vec![0.0; CONV1_CH * 3 * K * K],
            conv1_b: vec![0.0; CONV1_CH],
            conv2_w: vec![0.0; CONV2_CH * CONV1_CH * K * K],
            conv2_b: vec![0.0; CONV2_CH],
            fc_w: vec![0.0; n_classes * CONV2_CH],
            fc_b: vec![0.0; n_classes],
        }
    }

    pub fn add(&mut self, other: &BackboneGradients) {
        let pairs: [(&mut Vec<f64>, &Vec<f64>); 6] = [
            (&mut self.conv1_w, &other.conv1_w),
            (&mut self.conv1_b, &other.conv1_b),
            (&mut self.conv2_w, &other.conv2_w),
            (&mut self.conv2_b, &other.conv2_b),
            (&mut self.fc_w, &other.fc_w),
            (&mut self.fc_b, &other.fc_b),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn as_slices(&self) -> Vec<&[f64]> {
        vec![
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc_w,
            &self.fc_b,
        ]
    }
}

/// Intermediate activations kept for the reverse pass.
pub struct BackboneCache {
    input: Vec<f64>, // 3 x H x W
    z1: Vec<f64>,    // pre-ReLU conv1
    p1: Vec<f64>,    // pooled
    z2: Vec<f64>,    // pre-ReLU conv2
    gap: Vec<f64>,   // 16
    h: usize,
    w: usize,
}

impl BackboneCache {
    /// Sign pattern of every ReLU pre-activation, for kink-exclusion in
    /// finite-difference tests.
    pub fn relu_signature(&self) -> Vec<bool> {
        self.z1.iter().chain(self.z2.iter()).map(|&z| z > 0.0).collect()
    }
}

impl TinyBackbone {
    /// Uniform init within +-sqrt(6/fan_in) for weights and +-1/sqrt(fan_in)
    /// for biases, the standard convention for rectifier layers.
    pub fn new(n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::TAG_NET_INIT, 0));
        let mut uniform = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let weight_bound = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        let bias_bound = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        TinyBackbone {
            n_classes,
            conv1_w: uniform(CONV1_CH * 3 * K * K, weight_bound(3 * K * K)),
            conv1_b: uniform(CONV1_CH, bias_bound(3 * K * K)),
            conv2_w: uniform(CONV2_CH * CONV1_CH * K * K, weight_bound(CONV1_CH * K * K)),
            conv2_b: uniform(CONV2_CH, bias_bound(CONV1_CH * K * K)),
            fc_w: uniform(n_classes * CONV2_CH, weight_bound(CONV2_CH)),
            fc_b: uniform(n_classes, bias_bound(CONV2_CH)),
        }
    }

    pub fn from_parts(
        n_classes: usize,
        conv1_w: Vec<f64>,
        conv1_b: Vec<f64>,
        conv2_w: Vec<f64>,
        conv2_b: Vec<f64>,
        fc_w: Vec<f64>,
        fc_b: Vec<f64>,
    ) -> Result<Self, TrainError> {
        let ok = conv1_w.len() == CONV1_CH * 3 * K * K
            && conv1_b.len() == CONV1_CH
            && conv2_w.len() == CONV2_CH * CONV1_CH * K * K
            && conv2_b.len() == CONV2_CH
            && fc_w.len() == n_classes * CONV2_CH
            && fc_b.len() == n_classes;
        if !ok {
            return Err(TrainError::Shape("backbone parameter shapes inconsistent".into()));
        }
        Ok(TinyBackbone {
            n_classes,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            fc_w,
            fc_b,
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.conv1_w.as_mut_slice(),
            self.conv1_b.as_mut_slice(),
            self.conv2_w.as_mut_slice(),
            self.conv2_b.as_mut_slice(),
            self.fc_w.as_mut_slice(),
            self.fc_b.as_mut_slice(),
        ]
    }

    pub fn params(&self) -> Vec<&[f64]> {
        vec![
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc_w,
            &self.fc_b,
        ]
    }

    /// Logits for one normalized 3 x H x W image.
    pub fn forward(&self, input: &[f64], h: usize, w: usize) -> Result<(Vec<f64>, BackboneCache), TrainError> {
        if input.len() != 3 * h * w {
            return Err(TrainError::Shape(format!(
                "backbone expects 3x{h}x{w} input, got {} values",
                input.len()
            )));
        }
        let mut z1 = vec![0.0; CONV1_CH * h * w];
        conv3x3_forward(input, 3, h, w, &self.conv1_w, &self.conv1_b, CONV1_CH, &mut z1);
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();

        let (h2, w2) = (h / 2, w / 2);
        let mut p1 = vec![0.0; CONV1_CH * h2 * w2];
        avgpool2_forward(&a1, CONV1_CH, h, w, &mut p1);

        let mut z2 = vec![0.0; CONV2_CH * h2 * w2];
        conv3x3_forward(&p1, CONV1_CH, h2, w2, &self.conv2_w, &self.conv2_b, CONV2_CH, &mut z2);
        let a2: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();

        let (h4, w4) = (h2 / 2, w2 / 2);
        let mut p2 = vec![0.0; CONV2_CH * h4 * w4];
        avgpool2_forward(&a2, CONV2_CH, h2, w2, &mut p2);

        let plane4 = h4 * w4;
        let mut gap = vec![0.0; CONV2_CH];
        for f in 0..CONV2_CH {
            gap[f] = p2[f * plane4..(f + 1) * plane4].iter().sum::<f64>() / plane4 as f64;
        }

        let mut logits = vec![0.0; self.n_classes];
        for k in 0..self.n_classes {
            let row = &self.fc_w[k * CONV2_CH..(k + 1) * CONV2_CH];
            logits[k] = self.fc_b[k] + row.iter().zip(&gap).map(|(a, b)| a * b).sum::<f64>();
        }

        Ok((
            logits,
            BackboneCache {
                input: input.to_vec(),
                z1,
                p1,
                z2,
                gap,
                h,
                w,
            },
        ))
    }

    /// Gradients of a scalar loss with upstream `d_logits`; also returns the
    /// gradient with respect to the input image.
    pub fn backward(
        &self,
        cache: &BackboneCache,
        d_logits: &[f64],
    ) -> Result<(BackboneGradients, Vec<f64>), TrainError> {
        if d_logits.len() != self.n_classes {
            return Err(TrainError::Shape(format!(
                "expected {} logit gradients, got {}",
                self.n_classes,
                d_logits.len()
            )));
        }
        let (h, w) = (cache.h, cache.w);
        let (h2, w2) = (h / 2, w / 2);
        let (h4, w4) = (h2 / 2, w2 / 2);
        let plane4 = h4 * w4;
        let mut grads = BackboneGradients::zeros(self.n_classes);

        // Linear head.
        let mut d_gap = vec![0.0; CONV2_CH];
        for k in 0..self.n_classes {
            grads.fc_b[k] = d_logits[k];
            for f in 0..CONV2_CH {
                grads.fc_w[k * CONV2_CH + f] = d_logits[k] * cache.gap[f];
                d_gap[f] += d_logits[k] * self.fc_w[k * CONV2_CH + f];
            }
        }

        // Global average pool.
        let mut d_p2 = vec![0.0; CONV2_CH * plane4];
        for f in 0..CONV2_CH {
            let g = d_gap[f] / plane4 as f64;
            for v in d_p2[f * plane4..(f + 1) * plane4].iter_mut() {
                *v = g;
            }
        }

        // Pool2 and ReLU2.
        let mut d_a2 = vec![0.0; CONV2_CH * h2 * w2];
        avgpool2_backward(&d_p2, CONV2_CH, h2, w2, &mut d_a2);
        let d_z2: Vec<f64> = d_a2
            .iter()
            .zip(&cache.z2)
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();

        // Conv2.
        conv3x3_backward_weights(&cache.p1, CONV1_CH, h2, w2, &d_z2, CONV2_CH, &mut grads.conv2_w);
        for o in 0..CONV2_CH {
            grads.conv2_b[o] = d_z2[o * h2 * w2..(o + 1) * h2 * w2].iter().sum();
        }
        let mut d_p1 = vec![0.0; CONV1_CH * h2 * w2];
        conv3x3_backward_input(&d_z2, CONV2_CH, h2, w2, &self.conv2_w, CONV1_CH, &mut d_p1);

        // Pool1 and ReLU1.
        let mut d_a1 = vec![0.0; CONV1_CH * h * w];
        avgpool2_backward(&d_p1, CONV1_CH, h, w, &mut d_a1);
        let d_z1: Vec<f64> = d_a1
            .iter()
            .zip(&cache.z1)
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();

        // Conv1.
        conv3x3_backward_weights(&cache.input, 3, h, w, &d_z1, CONV1_CH, &mut grads.conv1_w);
        for o in 0..CONV1_CH {
            grads.conv1_b[o] = d_z1[o * h * w..(o + 1) * h * w].iter().sum();
        }
        let mut d_input = vec![0.0; 3 * h * w];
        conv3x3_backward_input(&d_z1, CONV1_CH, h, w, &self.conv1_w, 3, &mut d_input);

        Ok((grads, d_input))
    }
}

/// Valid row/column ranges so that both `y` and `y + dy` stay in bounds.
#[inline]
fn shift_range(d: isize, len: usize) -> (usize, usize) {
    let start = if d < 0 { (-d) as usize } else { 0 };
    let end = if d > 0 { len - d as usize } else { len };
    (start, end)
}

/// out[o] = bias[o] + sum_i conv(in[i], w[o][i]), zero padding 1.
fn conv3x3_forward(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    out: &mut [f64],
) {
    let hw = h * w;
    for o in 0..out_ch {
        let out_plane = &mut out[o * hw..(o + 1) * hw];
        out_plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_ch {
            let in_plane = &input[i * hw..(i + 1) * hw];
            for ky in 0..K {
                let dy = ky as isize - 1;
                let (y0, y1) = shift_range(dy, h);
                for kx in 0..K {
                    let dx = kx as isize - 1;
                    let (x0, x1) = shift_range(dx, w);
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = weights[((o * in_ch + i) * K + ky) * K + kx];
                    for y in y0..y1 {
                        let src_off = ((y as isize + dy) as usize) * w + ((x0 as isize + dx) as usize);
                        let src = &in_plane[src_off..src_off + (x1 - x0)];
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// d_w[o][i][ky][kx] = sum over the valid region of d_out[o] * in[i] shifted.
fn conv3x3_backward_weights(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    d_out: &[f64],
    out_ch: usize,
    d_weights: &mut [f64],
) {
    let hw = h * w;
    for o in 0..out_ch {
        let d_plane = &d_out[o * hw..(o + 1) * hw];
        for i in 0..in_ch {
            let in_plane = &input[i * hw..(i + 1) * hw];
            for ky in 0..K {
                let dy = ky as isize - 1;
                let (y0, y1) = shift_range(dy, h);
                for kx in 0..K {
                    let dx = kx as isize - 1;
                    let (x0, x1) = shift_range(dx, w);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src_off = ((y as isize + dy) as usize) * w + ((x0 as isize + dx) as usize);
                        let src = &in_plane[src_off..src_off + (x1 - x0)];
                        let dst = &d_plane[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter().zip(src) {
                            acc += d * s;
                        }
                    }
                    d_weights[((o * in_ch + i) * K + ky) * K + kx] = acc;
                }
            }
        }
    }
}

/// d_in[i] += sum_o conv_transpose(d_out[o], w[o][i]).
fn conv3x3_backward_input(
    d_out: &[f64],
    out_ch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    in_ch: usize,
    d_input: &mut [f64],
) {
    let hw = h * w;
    for o in 0..out_ch {
        let d_plane = &d_out[o * hw..(o + 1) * hw];
        for i in 0..in_ch {
            let d_in_plane = &mut d_input[i * hw..(i + 1) * hw];
            for ky in 0..K {
                let dy = ky as isize - 1;
                let (y0, y1) = shift_range(dy, h);
                for kx in 0..K {
                    let dx = kx as isize - 1;
                    let (x0, x1) = shift_range(dx, w);
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = weights[((o * in_ch + i) * K + ky) * K + kx];
                    for y in y0..y1 {
                        let src_off = ((y as isize + dy) as usize) * w + ((x0 as isize + dx) as usize);
                        let dst = &mut d_in_plane[src_off..src_off + (x1 - x0)];
                        let src = &d_plane[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

fn avgpool2_forward(input: &[f64], ch: usize, h: usize, w: usize, out: &mut [f64]) {
    let (h2, w2) = (h / 2, w / 2);
    for c in 0..ch {
        let in_plane = &input[c * h * w..(c + 1) * h * w];
        let out_plane = &mut out[c * h2 * w2..(c + 1) * h2 * w2];
        for y in 0..h2 {
            for x in 0..w2 {
                let base = (2 * y) * w + 2 * x;
                out_plane[y * w2 + x] =
                    0.25 * (in_plane[base] + in_plane[base + 1] + in_plane[base + w] + in_plane[base + w + 1]);
            }
        }
    }
}

fn avgpool2_backward(d_out: &[f64], ch: usize, h: usize, w: usize, d_input: &mut [f64]) {
    let (h2, w2) = (h / 2, w / 2);
    for c in 0..ch {
        let d_out_plane = &d_out[c * h2 * w2..(c + 1) * h2 * w2];
        let d_in_plane = &mut d_input[c * h * w..(c + 1) * h * w];
        for y in 0..h2 {
            for x in 0..w2 {
                let g = 0.25 * d_out_plane[y * w2 + x];
                let base = (2 * y) * w + 2 * x;
                d_in_plane[base] += g;
                d_in_plane[base + 1] += g;
                d_in_plane[base + w] += g;
                d_in_plane[base + w + 1] += g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = TinyBackbone::new(14, 5);
        let b = TinyBackbone::new(14, 5);
        assert_eq!(a, b);
        let bound1 = (6.0 / 27.0f64).sqrt();
        assert!(a.conv1_w.iter().all(|w| w.abs() <= bound1));
        assert!(a.conv1_b.iter().all(|&b| b.abs() <= 1.0 / 27.0f64.sqrt()));
    }

    #[test]
    fn forward_shapes() {
        let net = TinyBackbone::new(14, 1);
        let input = vec![0.1; 3 * 8 * 8];
        let (logits, _) = net.forward(&input, 8, 8).unwrap();
        assert_eq!(logits.len(), 14);
    }

    #[test]
    fn conv_against_direct_convolution() {
        // Shift-and-accumulate must equal the textbook triple loop.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (in_ch, out_ch, h, w) = (2, 3, 5, 4);
        let input: Vec<f64> = (0..in_ch * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..out_ch * in_ch * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..out_ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut fast = vec![0.0; out_ch * h * w];
        conv3x3_forward(&input, in_ch, h, w, &weights, &bias, out_ch, &mut fast);
        for o in 0..out_ch {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for i in 0..in_ch {
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc += weights[((o * in_ch + i) * 3 + ky) * 3 + kx]
                                    * input[i * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                    let got = fast[o * h * w + y * w + x];
                    assert!((got - acc).abs() < 1e-12, "({o},{y},{x}): {got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn full_gradient_check_on_4x4() {
        // Every trainable scalar and every input pixel, against central
        // differences, excluding perturbations that flip a ReLU.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let net = TinyBackbone::new(2, 123);
        let (h, w) = (4, 4);
        let input: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d_logits: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let (_, cache) = net.forward(&input, h, w).unwrap();
        let (grads, d_input) = net.backward(&cache, &d_logits).unwrap();

        let loss = |n: &TinyBackbone, inp: &[f64]| -> (f64, Vec<bool>) {
            let (logits, cache) = n.forward(inp, h, w).unwrap();
            let l = logits.iter().zip(&d_logits).map(|(a, b)| a * b).sum();
            (l, cache.relu_signature())
        };

        let h_step = 1e-6;
        let analytic = grads.as_slices();
        let mut checked = 0;
        for (slice_idx, slice) in analytic.iter().enumerate() {
            for elem in 0..slice.len() {
                let mut plus = net.clone();
                plus.params_mut()[slice_idx][elem] += h_step;
                let mut minus = net.clone();
                minus.params_mut()[slice_idx][elem] -= h_step;
                let (lp, sig_p) = loss(&plus, &input);
                let (lm, sig_m) = loss(&minus, &input);
                if sig_p != sig_m {
                    continue;
                }
                let fd = (lp - lm) / (2.0 * h_step);
                let a = slice[elem];
                assert!(
                    (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-3),
                    "param slice {slice_idx} elem {elem}: analytic {a} vs fd {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked > 1000, "too few parameters checked: {checked}");

        for p in 0..input.len() {
            let mut plus = input.clone();
            plus[p] += h_step;
            let mut minus = input.clone();
            minus[p] -= h_step;
            let (lp, sig_p) = loss(&net, &plus);
            let (lm, sig_m) = loss(&net, &minus);
            if sig_p != sig_m {
                continue;
            }
            let fd = (lp - lm) / (2.0 * h_step);
            assert!(
                (d_input[p] - fd).abs() <= 1e-4 * d_input[p].abs().max(fd.abs()).max(1e-3),
                "input {p}: {} vs {fd}",
                d_input[p]
            );
        }
    }
}
