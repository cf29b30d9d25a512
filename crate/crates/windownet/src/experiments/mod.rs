//! Experiment protocols: bit-depth comparison, fixed-window grid search,
//! and trainable multi-windowing against its ablations, each reproducible
//! bit-for-bit from (spec, seed) and persisted as CSV plus checkpoints.

mod bitdepth;
mod grid;
mod multiwin;
pub mod report;
pub mod specfile;

pub use bitdepth::run_bitdepth;
pub use grid::{build_grid, run_grid, top3_init_windows};
pub use multiwin::run_multiwindow;
pub use specfile::{ExperimentKind, ExperimentSpec};

use crate::imagepipe::{self, ImageTensor, NormalizationSpec, PipeError, QuantizeMode};
use crate::metrics::EvalResult;
use crate::synthlab::SynthError;
use crate::tinynet::TrainError;
use crate::windowing::{self, WindowSpec};
use thiserror::Error;

/// The 14 CheXpert finding labels, in the paper's alphabetical order.
pub const CHEXPERT_CLASSES: [&str; 14] = [
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "enlarged cardiomediastinum",
    "fracture",
    "lung lesion",
    "lung opacity",
    "no finding",
    "pleural effusion",
    "pleural other",
    "pneumonia",
    "pneumothorax",
    "support devices",
];

/// Class display names for an n-class dataset: the CheXpert labels when they
/// fit, generic names otherwise.
pub fn class_names(n: usize) -> Vec<String> {
    if n <= CHEXPERT_CLASSES.len() {
        CHEXPERT_CLASSES[..n].iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("class_{i}")).collect()
    }
}

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("experiment spec error: {0}")]
    Spec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Pipe(#[from] PipeError),
    #[error(transparent)]
    Window(#[from] windowing::WindowError),
    #[error(transparent)]
    Layer(#[from] crate::multiwindow::LayerError),
    #[error(transparent)]
    Checkpoint(#[from] crate::tinynet::CheckpointError),
}

/// Outcome of one training run within an experiment.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub label: String,
    /// Fixed window used for preprocessing, when the run had one.
    pub window: Option<WindowSpec>,
    pub test_eval: EvalResult,
    pub val_eval: EvalResult,
    pub best_val_auc: f64,
    pub epochs_run: usize,
    pub fingerprint: String,
    pub wall_time_s: f64,
}

/// Recovered (level, width) pairs per epoch for one trainable arm.
#[derive(Debug, Clone)]
pub struct RecoveredTrace {
    pub arm: String,
    /// (epoch, windows); epoch 0 is the initialization.
    pub per_epoch: Vec<(usize, Vec<WindowSpec>)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub n_classes: usize,
    pub runs: Vec<RunResult>,
    pub recovered: Vec<RecoveredTrace>,
}

/// FNV-1a hash of canonical key=value text, as 16 hex digits.
pub fn fingerprint(kv: &[(String, String)]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for (k, v) in kv {
        for b in k.bytes().chain([b'=']).chain(v.bytes()).chain([b'\n']) {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    format!("{hash:016x}")
}

/// The full-range "no windowing" baseline window.
pub fn full_range_window() -> WindowSpec {
    WindowSpec {
        level: 2048.0,
        width: 4096.0,
    }
}

/// Fixed-window preprocessing: clamped affine window, scale to (0, 255) by
/// the window ceiling, replicate to 3 channels, normalize.
pub fn preprocess_fixed_window(
    img: &ImageTensor,
    window: &WindowSpec,
    norm: &NormalizationSpec,
) -> Result<ImageTensor, ExpError> {
    let affine = windowing::to_affine(window)?;
    let mut windowed = img.clone();
    for v in windowed.data_mut().iter_mut() {
        *v = windowing::apply_affine(*v, &affine);
    }
    let scaled = imagepipe::scale_to_255(&windowed, affine.ceiling)?;
    let three = scaled.replicate(3)?;
    Ok(imagepipe::normalize(&three, norm)?)
}

/// 8-bit baseline preprocessing: quantize to 8 bits (values land on the
/// (0, 255) scale directly), replicate to 3 channels, normalize.
pub fn preprocess_8bit(
    img: &ImageTensor,
    mode: QuantizeMode,
    norm: &NormalizationSpec,
) -> Result<ImageTensor, ExpError> {
    let q = imagepipe::quantize(img, 8, mode)?;
    let three = q.replicate(3)?;
    Ok(imagepipe::normalize(&three, norm)?)
}

pub(crate) fn preprocess_all(
    images: &[ImageTensor],
    f: impl Fn(&ImageTensor) -> Result<ImageTensor, ExpError> + Sync,
) -> Result<Vec<ImageTensor>, ExpError> {
    use rayon::prelude::*;
    images.par_iter().map(&f).collect()
}

/// Descriptor of how raw dataset images were turned into model input, kept
/// in the checkpoint so evaluation can reproduce the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preprocess {
    /// Raw single-channel pixels; the model's windowing layer does the rest.
    Raw,
    /// Fixed window, scale to (0, 255), replicate, normalize.
    Window(WindowSpec),
    /// Quantize to 8 bits, replicate, normalize.
    EightBit(QuantizeMode),
}

impl Preprocess {
    pub fn describe(&self) -> String {
        match self {
            Preprocess::Raw => "raw".to_string(),
            Preprocess::Window(w) => format!("window:{}:{}", w.level, w.width),
            Preprocess::EightBit(QuantizeMode::RoundRescale) => "8bit:round-rescale".to_string(),
            Preprocess::EightBit(QuantizeMode::Shift) => "8bit:shift".to_string(),
        }
    }

    pub fn parse(s: &str) -> Result<Self, ExpError> {
        if s == "raw" {
            return Ok(Preprocess::Raw);
        }
        if let Some(rest) = s.strip_prefix("window:") {
            let (l, w) = rest
                .split_once(':')
                .ok_or_else(|| ExpError::Spec(format!("bad preprocess descriptor {s:?}")))?;
            return Ok(Preprocess::Window(WindowSpec {
                level: l
                    .parse()
                    .map_err(|_| ExpError::Spec(format!("bad preprocess level in {s:?}")))?,
                width: w
                    .parse()
                    .map_err(|_| ExpError::Spec(format!("bad preprocess width in {s:?}")))?,
            }));
        }
        match s {
            "8bit:round-rescale" => Ok(Preprocess::EightBit(QuantizeMode::RoundRescale)),
            "8bit:shift" => Ok(Preprocess::EightBit(QuantizeMode::Shift)),
            other => Err(ExpError::Spec(format!("unknown preprocess descriptor {other:?}"))),
        }
    }

    /// Apply to a whole set of raw images.
    pub fn apply(&self, images: &[ImageTensor], norm: &NormalizationSpec) -> Result<Vec<ImageTensor>, ExpError> {
        match self {
            Preprocess::Raw => Ok(images.to_vec()),
            Preprocess::Window(w) => {
                preprocess_all(images, |img| preprocess_fixed_window(img, w, norm))
            }
            Preprocess::EightBit(mode) => {
                preprocess_all(images, |img| preprocess_8bit(img, *mode, norm))
            }
        }
    }
}

/// Train one model, select by validation AUC, evaluate the selected model on
/// validation and test, and persist the trainer checkpoint.
#[allow(clippy::too_many_arguments)]
pub(crate) fn train_and_evaluate(
    model: crate::tinynet::Model,
    spec: &ExperimentSpec,
    label: &str,
    preprocess: Preprocess,
    dataset_fingerprint: &str,
    train_set: (&[ImageTensor], &[f64]),
    val_set: (&[ImageTensor], &[f64]),
    test_set: (&[ImageTensor], &[f64]),
    mut on_epoch: impl FnMut(&crate::tinynet::EpochStats, &crate::tinynet::Model),
) -> Result<RunResult, ExpError> {
    use crate::tinynet::{evaluate_model, Trainer};
    let started = std::time::Instant::now();
    let mut trainer = Trainer::new(model, spec.train.clone())?;
    let summary = trainer.fit(
        train_set.0,
        train_set.1,
        val_set.0,
        val_set.1,
        &mut on_epoch,
    )?;
    let best = trainer.best_model();
    let (_, val_eval) = evaluate_model(&best, val_set.0, val_set.1)?;
    let (_, test_eval) = evaluate_model(&best, test_set.0, test_set.1)?;

    std::fs::create_dir_all(&spec.out_dir).map_err(|source| ExpError::Io {
        path: spec.out_dir.display().to_string(),
        source,
    })?;
    let ck_path = spec.out_dir.join(format!("{label}.wnck"));
    let mut checkpoint = trainer.to_checkpoint();
    checkpoint
        .config
        .push(("preprocess".to_string(), preprocess.describe()));
    checkpoint.save(&ck_path)?;

    let mut kv = spec.to_kv();
    kv.push(("run".to_string(), label.to_string()));
    kv.push(("dataset_fp".to_string(), dataset_fingerprint.to_string()));
    let window = match preprocess {
        Preprocess::Window(w) => Some(w),
        _ => None,
    };
    Ok(RunResult {
        label: label.to_string(),
        window,
        test_eval,
        val_eval,
        best_val_auc: summary.best_val_auc,
        epochs_run: summary.epochs_run,
        fingerprint: fingerprint(&kv),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// A backbone-only run on images preprocessed with one fixed window.
pub(crate) fn fixed_window_run(
    dataset: &crate::synthlab::SynthDataset,
    window: &WindowSpec,
    spec: &ExperimentSpec,
    label: &str,
    dataset_fingerprint: &str,
) -> Result<RunResult, ExpError> {
    use crate::tinynet::{Model, TinyBackbone};
    let norm = NormalizationSpec::imagenet();
    let prep = |imgs: &[ImageTensor]| {
        preprocess_all(imgs, |img| preprocess_fixed_window(img, window, &norm))
    };
    let (train_i, train_l) = dataset.train();
    let (val_i, val_l) = dataset.val();
    let (test_i, test_l) = dataset.test();
    let train_p = prep(train_i)?;
    let val_p = prep(val_i)?;
    let test_p = prep(test_i)?;
    let model = Model {
        layer: None,
        backbone: TinyBackbone::new(dataset.config.n_classes, spec.train.seed),
        norm,
    };
    train_and_evaluate(
        model,
        spec,
        label,
        Preprocess::Window(*window),
        dataset_fingerprint,
        (&train_p, train_l),
        (&val_p, val_l),
        (&test_p, test_l),
        |_, _| {},
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chexpert_order_is_alphabetical() {
        let mut sorted = CHEXPERT_CLASSES.to_vec();
        sorted.sort();
        assert_eq!(sorted, CHEXPERT_CLASSES.to_vec());
        assert_eq!(CHEXPERT_CLASSES[0], "atelectasis");
        assert_eq!(CHEXPERT_CLASSES[13], "support devices");
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let kv = vec![("a".to_string(), "1".to_string())];
        let kv2 = vec![("a".to_string(), "2".to_string())];
        assert_eq!(fingerprint(&kv), fingerprint(&kv));
        assert_ne!(fingerprint(&kv), fingerprint(&kv2));
        assert_eq!(fingerprint(&kv).len(), 16);
    }

    #[test]
    fn identity_window_preprocessing_is_plain_scaling() {
        let norm = NormalizationSpec::imagenet();
        let img = ImageTensor::new(1, 1, 2, 12, vec![0.0, 4095.0]).unwrap();
        let out = preprocess_fixed_window(&img, &full_range_window(), &norm).unwrap();
        // Full-range window: px * 255/4096, then normalize.
        for c in 0..3 {
            let expected0 = (0.0 / 255.0 - norm.mean[c]) / norm.std[c];
            let expected1 = ((4095.0 * 255.0 / 4096.0) / 255.0 - norm.mean[c]) / norm.std[c];
            assert!((out.get(c, 0, 0) - expected0).abs() < 1e-12);
            assert!((out.get(c, 0, 1) - expected1).abs() < 1e-12);
        }
    }

    #[test]
    fn narrow_window_saturates_out_of_band_pixels() {
        let norm = NormalizationSpec::imagenet();
        let w = WindowSpec { level: 2000.0, width: 200.0 };
        let img = ImageTensor::new(1, 1, 3, 12, vec![100.0, 2000.0, 3900.0]).unwrap();
        let out = preprocess_fixed_window(&img, &w, &norm).unwrap();
        let denorm = |v: f64, c: usize| (v * norm.std[c] + norm.mean[c]) * 255.0;
        assert!(denorm(out.get(0, 0, 0), 0).abs() < 1e-9);
        assert!((denorm(out.get(0, 0, 1), 0) - 127.5).abs() < 1e-9);
        assert!((denorm(out.get(0, 0, 2), 0) - 255.0).abs() < 1e-9);
    }
}
