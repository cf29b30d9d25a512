//! Deterministic synthetic 12-bit image generator with planted,
//! window-discriminable signals.
//!
//! Each image is a smooth random background stretched over the full 12-bit
//! range plus Gaussian noise, rounded to integer gray values. For every
//! positive class label, an elliptical blob is planted whose pixels shift by
//! `contrast_delta`, but only where the pixel already lies inside that
//! class's intensity band. The shift is small against the full range, so a
//! matched window recovers it while bit-depth reduction or a mismatched
//! window attenuates or destroys it.

use crate::imagepipe::{self, ImageTensor, PipeError};
use crate::seeds;
use crate::windowing::WindowSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid band for class {class}: center {center} +- {halfwidth} leaves [0, 4095] or delta {delta} is negative")]
    InvalidBand {
        class: usize,
        center: f64,
        halfwidth: f64,
        delta: f64,
    },
    #[error("config needs one band per class: {bands} bands for {classes} classes")]
    BandCount { bands: usize, classes: usize },
    #[error("class index {0} out of range")]
    ClassIndex(usize),
    #[error("dataset manifest error in {path}: {detail}")]
    Manifest { path: String, detail: String },
    #[error("dataset i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Pipe(#[from] PipeError),
}

/// Intensity band carrying one class's signal, in raw 12-bit units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    pub center: f64,
    pub halfwidth: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub n_classes: usize,
    pub bands: Vec<BandSpec>,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Band centers spread over the usable range, one per class, disjoint.
pub fn default_bands(n_classes: usize) -> Vec<BandSpec> {
    (0..n_classes)
        .map(|k| BandSpec {
            center: 250.0 + 270.0 * k as f64,
            halfwidth: 100.0,
            delta: 8.0,
        })
        .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 2000,
            n_val: 500,
            n_test: 500,
            image_size: 64,
            n_classes: 14,
            bands: default_bands(14),
            noise_sigma: 2.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.bands.len() != self.n_classes {
            return Err(SynthError::BandCount {
                bands: self.bands.len(),
                classes: self.n_classes,
            });
        }
        for (class, b) in self.bands.iter().enumerate() {
            let ok = b.halfwidth > 0.0
                && b.center - b.halfwidth >= 0.0
                && b.center + b.halfwidth <= 4095.0
                && b.delta >= 0.0;
            if !ok {
                return Err(SynthError::InvalidBand {
                    class,
                    center: b.center,
                    halfwidth: b.halfwidth,
                    delta: b.delta,
                });
            }
        }
        Ok(())
    }

    pub fn n_total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("format".to_string(), "WNDS1".to_string()),
            ("n_train".to_string(), self.n_train.to_string()),
            ("n_val".to_string(), self.n_val.to_string()),
            ("n_test".to_string(), self.n_test.to_string()),
            ("image_size".to_string(), self.image_size.to_string()),
            ("n_classes".to_string(), self.n_classes.to_string()),
            ("noise_sigma".to_string(), self.noise_sigma.to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ];
        for (k, b) in self.bands.iter().enumerate() {
            kv.push((
                format!("band_{k}"),
                format!("{},{},{}", b.center, b.halfwidth, b.delta),
            ));
        }
        kv
    }
}

/// One image with its multi-label target vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: ImageTensor,
    pub labels: Vec<f64>,
}

/// Generated dataset, stored train / val / test contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub images: Vec<ImageTensor>,
    pub labels: Vec<f64>, // n_total x n_classes, row-major
}

impl SynthDataset {
    fn split(&self, start: usize, len: usize) -> (&[ImageTensor], &[f64]) {
        let c = self.config.n_classes;
        (
            &self.images[start..start + len],
            &self.labels[start * c..(start + len) * c],
        )
    }

    pub fn train(&self) -> (&[ImageTensor], &[f64]) {
        self.split(0, self.config.n_train)
    }

    pub fn val(&self) -> (&[ImageTensor], &[f64]) {
        self.split(self.config.n_train, self.config.n_val)
    }

    pub fn test(&self) -> (&[ImageTensor], &[f64]) {
        self.split(self.config.n_train + self.config.n_val, self.config.n_test)
    }

    pub fn sample(&self, index: usize) -> SynthSample {
        let c = self.config.n_classes;
        SynthSample {
            image: self.images[index].clone(),
            labels: self.labels[index * c..(index + 1) * c].to_vec(),
        }
    }
}

/// Generate the full dataset. Every sample derives its own RNG stream from
/// (seed, index), so the result is a pure function of the config.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let n = config.n_total();
    let c = config.n_classes;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n * c);
    for index in 0..n {
        let sample = generate_sample(config, index);
        images.push(sample.image);
        labels.extend(sample.labels);
    }
    Ok(SynthDataset {
        config: config.clone(),
        images,
        labels,
    })
}

const POSITIVE_RATE: f64 = 0.3;

fn generate_sample(config: &SynthConfig, index: usize) -> SynthSample {
    let size = config.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(
        config.seed,
        seeds::TAG_SAMPLE,
        index as u64,
    ));

    // Labels first, so the pixel stream is independent of band geometry.
    let labels: Vec<f64> = (0..config.n_classes)
        .map(|_| f64::from(rng.gen_bool(POSITIVE_RATE)))
        .collect();

    // Smooth background: a linear ramp with random orientation, stretched
    // so every image spans the full 12-bit range. Each intensity band then
    // occupies a strip of stable area whose placement varies image to
    // image, and the planted shift is the only in-band local structure.
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut pixels = vec![0.0f64; size * size];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in 0..size {
        for x in 0..size {
            let t = dx * x as f64 + dy * y as f64;
            pixels[y * size + x] = t;
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    let stretch = if hi > lo { 4095.0 / (hi - lo) } else { 0.0 };

    // Stretch to full range, add Gaussian noise, round to gray values.
    for v in pixels.iter_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *v = ((*v - lo) * stretch + config.noise_sigma * noise)
            .round()
            .clamp(0.0, 4095.0);
    }

    // One elliptical blob per positive class, centered on an in-band pixel
    // so the planted shift always has support.
    for (class, band) in config.bands.iter().enumerate() {
        if labels[class] == 0.0 {
            continue;
        }
        let rx = rng.gen_range(size as f64 / 5.0..size as f64 / 3.5);
        let ry = rng.gen_range(size as f64 / 5.0..size as f64 / 3.5);
        let inner_lo = band.center - band.halfwidth / 2.0;
        let inner_hi = band.center + band.halfwidth / 2.0;
        let candidates: Vec<usize> = pixels
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= inner_lo && v <= inner_hi)
            .map(|(i, _)| i)
            .collect();
        let center_idx = if candidates.is_empty() {
            // Fall back to the pixel closest in value to the band center.
            pixels
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (*a - band.center)
                        .abs()
                        .partial_cmp(&(*b - band.center).abs())
                        .unwrap()
                })
                .map(|(i, _)| i)
                .unwrap()
        } else {
            candidates[rng.gen_range(0..candidates.len())]
        };
        let (cy, cx) = (center_idx / size, center_idx % size);

        let lo_band = band.center - band.halfwidth;
        let hi_band = band.center + band.halfwidth;
        let y_min = (cy as f64 - ry).floor().max(0.0) as usize;
        let y_max = ((cy as f64 + ry).ceil() as usize).min(size - 1);
        let x_min = (cx as f64 - rx).floor().max(0.0) as usize;
        let x_max = ((cx as f64 + rx).ceil() as usize).min(size - 1);
        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let dy = (y as f64 - cy as f64) / ry;
                let dx = (x as f64 - cx as f64) / rx;
                if dy * dy + dx * dx > 1.0 {
                    continue;
                }
                let v = &mut pixels[y * size + x];
                if *v >= lo_band && *v <= hi_band {
                    *v = (*v + band.delta).min(4095.0);
                }
            }
        }
    }

    SynthSample {
        image: ImageTensor::new(1, size, size, 12, pixels).expect("valid shape"),
        labels,
    }
}

/// The window a correct grid search should rank highest for a class: the
/// band center with a 1.5x margin around the band.
pub fn oracle_best_window(config: &SynthConfig, class_index: usize) -> Result<WindowSpec, SynthError> {
    let band = config
        .bands
        .get(class_index)
        .ok_or(SynthError::ClassIndex(class_index))?;
    Ok(WindowSpec {
        level: band.center,
        width: 2.0 * band.halfwidth * 1.5,
    })
}

// ---------------------------------------------------------------------------
// Matched-filter detector
// ---------------------------------------------------------------------------

const PATCH: usize = 7;

/// Hand-coded matched-filter score for one class.
///
/// The detector is matched to the generator: it fits the image with the
/// same planar background family the ramps come from, passes both the
/// image and the fitted background through the class's oracle window, and
/// takes the windowed residual. Out-of-band pixels saturate in both and
/// cancel; in-band pixels keep `(px - background) * slope`. Pixels whose
/// residual matches the planted contrast amplitude (within 10%) are
/// counted over a blob-sized patch, and the score is the best patch count.
///
/// Matching on amplitude is what makes the detector bit-depth sensitive:
/// after 12-to-8-bit quantization the residual of a shifted pixel smears
/// over a full quantization step and mostly leaves the matched bin.
pub fn matched_filter_score(img: &ImageTensor, band: &BandSpec) -> f64 {
    let w = img.width();
    let h = img.height();
    // Bring any bit depth back to the raw 12-bit scale.
    let to_raw = 4095.0 / img.nominal_max();
    let raw: Vec<f64> = img.channel(0).iter().map(|&v| v * to_raw).collect();
    let background = fit_plane_background(&raw, h, w);

    let window = WindowSpec {
        level: band.center,
        width: 2.0 * band.halfwidth * 1.5,
    };
    let (lo, ww) = (window.lower(), window.width);
    let slope = 255.0 / ww;
    let apply = |v: f64| ((v - lo) * slope).clamp(0.0, 255.0);

    let band_lo = band.center - band.halfwidth;
    let band_hi = band.center + band.halfwidth;
    let delta_w = band.delta * slope;
    let (match_lo, match_hi) = (0.9 * delta_w, 1.1 * delta_w);

    let matches: Vec<f64> = (0..h * w)
        .map(|i| {
            let in_band = background[i] >= band_lo && background[i] <= band_hi;
            let r = apply(raw[i]) - apply(background[i]);
            if in_band && r >= match_lo && r <= match_hi {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    max_patch_sum(&matches, h, w, PATCH)
}

/// Least-squares plane fit `a*x + b*y + c`. The planted blobs cover a few
/// percent of the pixels, so their influence on the fit is negligible and
/// the residual isolates them.
fn fit_plane_background(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut normal = vec![0.0; 9];
    let mut rhs = vec![0.0; 3];
    for y in 0..h {
        for x in 0..w {
            let phi = [x as f64, y as f64, 1.0];
            let v = values[y * w + x];
            for i in 0..3 {
                rhs[i] += phi[i] * v;
                for j in 0..3 {
                    normal[i * 3 + j] += phi[i] * phi[j];
                }
            }
        }
    }
    let coef = solve_symmetric(&mut normal, &mut rhs, 3);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = coef[0] * x as f64 + coef[1] * y as f64 + coef[2];
        }
    }
    out
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
fn solve_symmetric(a: &mut [f64], b: &mut [f64], n: usize) -> Vec<f64> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        if diag.abs() < 1e-12 {
            continue;
        }
        for row in (col + 1)..n {
            let f = a[row * n + col] / diag;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc -= a[col * n + k] * x[k];
        }
        let diag = a[col * n + col];
        x[col] = if diag.abs() < 1e-12 { 0.0 } else { acc / diag };
    }
    x
}

fn max_patch_sum(values: &[f64], h: usize, w: usize, patch: usize) -> f64 {
    let integral = integral_image(values, h, w);
    let patch = patch.min(h).min(w);
    let mut best = 0.0f64;
    for y0 in 0..=(h - patch) {
        for x0 in 0..=(w - patch) {
            let s = rect_sum(&integral, w, y0, x0, y0 + patch - 1, x0 + patch - 1);
            best = best.max(s);
        }
    }
    best
}

fn integral_image(values: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut integral = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += values[y * w + x];
            integral[(y + 1) * (w + 1) + (x + 1)] = integral[y * (w + 1) + (x + 1)] + row;
        }
    }
    integral
}

fn rect_sum(integral: &[f64], w: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> f64 {
    let stride = w + 1;
    integral[(y1 + 1) * stride + (x1 + 1)] + integral[y0 * stride + x0]
        - integral[y0 * stride + (x1 + 1)]
        - integral[(y1 + 1) * stride + x0]
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Write the dataset as a directory of raw tensor containers plus
/// `labels.csv` (`index,class_0,...`) and `manifest.txt` (config + seed).
pub fn save_dataset(ds: &SynthDataset, dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut manifest = String::new();
    for (k, v) in ds.config.to_kv() {
        manifest.push_str(&format!("{k}={v}\n"));
    }
    fs::write(dir.join("manifest.txt"), manifest).map_err(|source| SynthError::Io {
        path: dir.join("manifest.txt").display().to_string(),
        source,
    })?;

    let c = ds.config.n_classes;
    let mut csv = String::from("index");
    for k in 0..c {
        csv.push_str(&format!(",class_{k}"));
    }
    csv.push('\n');
    for i in 0..ds.images.len() {
        csv.push_str(&i.to_string());
        for k in 0..c {
            csv.push_str(&format!(",{}", ds.labels[i * c + k] as u8));
        }
        csv.push('\n');
        imagepipe::save_image(&ds.images[i], &dir.join(format!("img_{i:05}.wnt")))?;
    }
    fs::write(dir.join("labels.csv"), csv).map_err(|source| SynthError::Io {
        path: dir.join("labels.csv").display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<SynthDataset, SynthError> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|source| SynthError::Io {
        path: manifest_path.display().to_string(),
        source,
    })?;
    let mut kv = Vec::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.push((k.to_string(), v.to_string()));
        }
    }
    let get = |key: &str| -> Result<&str, SynthError> {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| SynthError::Manifest {
                path: manifest_path.display().to_string(),
                detail: format!("missing key {key}"),
            })
    };
    let parse_err = |key: &str| SynthError::Manifest {
        path: manifest_path.display().to_string(),
        detail: format!("unparsable value for {key}"),
    };
    if get("format")? != "WNDS1" {
        return Err(SynthError::Manifest {
            path: manifest_path.display().to_string(),
            detail: "unknown dataset format tag".into(),
        });
    }
    let n_classes: usize = get("n_classes")?.parse().map_err(|_| parse_err("n_classes"))?;
    let mut bands = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let raw = get(&format!("band_{k}"))?;
        let parts: Vec<&str> = raw.split(',').collect();
        if parts.len() != 3 {
            return Err(parse_err(&format!("band_{k}")));
        }
        bands.push(BandSpec {
            center: parts[0].parse().map_err(|_| parse_err("band center"))?,
            halfwidth: parts[1].parse().map_err(|_| parse_err("band halfwidth"))?,
            delta: parts[2].parse().map_err(|_| parse_err("band delta"))?,
        });
    }
    let config = SynthConfig {
        n_train: get("n_train")?.parse().map_err(|_| parse_err("n_train"))?,
        n_val: get("n_val")?.parse().map_err(|_| parse_err("n_val"))?,
        n_test: get("n_test")?.parse().map_err(|_| parse_err("n_test"))?,
        image_size: get("image_size")?.parse().map_err(|_| parse_err("image_size"))?,
        n_classes,
        bands,
        noise_sigma: get("noise_sigma")?.parse().map_err(|_| parse_err("noise_sigma"))?,
        seed: get("seed")?.parse().map_err(|_| parse_err("seed"))?,
    };

    let labels_path = dir.join("labels.csv");
    let csv = fs::read_to_string(&labels_path).map_err(|source| SynthError::Io {
        path: labels_path.display().to_string(),
        source,
    })?;
    let n = config.n_total();
    let mut labels = vec![0.0; n * n_classes];
    for (row, line) in csv.lines().skip(1).enumerate() {
        let mut fields = line.split(',');
        let index: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SynthError::Manifest {
                path: labels_path.display().to_string(),
                detail: format!("bad index on row {row}"),
            })?;
        for k in 0..n_classes {
            let v: f64 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| SynthError::Manifest {
                    path: labels_path.display().to_string(),
                    detail: format!("bad label on row {row}"),
                })?;
            labels[index * n_classes + k] = v;
        }
    }

    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        images.push(imagepipe::load_image(&dir.join(format!("img_{i:05}.wnt")))?);
    }
    Ok(SynthDataset {
        config,
        images,
        labels,
    })
}
