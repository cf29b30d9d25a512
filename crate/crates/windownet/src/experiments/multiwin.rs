//! Trainable multi-windowing against its ablations: the windowing model,
//! the same architecture without clamping, and the 8-bit baseline, with a
//! per-epoch recovered-window trace for the windowing arm.

use super::{
    fingerprint, preprocess_8bit, preprocess_all, ExpError, ExperimentResult, ExperimentSpec,
    RecoveredTrace,
};
use crate::imagepipe::{ImageTensor, NormalizationSpec};
use crate::multiwindow::MultiWindowLayer;
use crate::seeds;
use crate::synthlab;
use crate::tinynet::{Model, TinyBackbone};

pub fn run_multiwindow(spec: &ExperimentSpec) -> Result<ExperimentResult, ExpError> {
    spec.validate()?;
    let dataset = synthlab::load_dataset(&spec.dataset)?;
    let dataset_fp = fingerprint(&dataset.config.to_kv());
    let norm = NormalizationSpec::imagenet();
    let c = dataset.config.n_classes;
    let n_windows = spec.init_windows.len();
    let (train_i, train_l) = dataset.train();
    let (val_i, val_l) = dataset.val();
    let (test_i, test_l) = dataset.test();

    // Arm (a): clamped windows, the paper's initialization.
    let layer = MultiWindowLayer::from_windows(
        &spec.init_windows,
        seeds::derive(spec.train.seed, seeds::TAG_LAYER_INIT, 0),
    )?;
    let mut per_epoch = vec![(0usize, layer.recover_windows()?)];
    let model = Model {
        layer: Some(layer),
        backbone: TinyBackbone::new(c, spec.train.seed),
        norm,
    };
    let run_windownet = super::train_and_evaluate(
        model,
        spec,
        "windownet",
        super::Preprocess::Raw,
        &dataset_fp,
        (train_i, train_l),
        (val_i, val_l),
        (test_i, test_l),
        |stats, model| {
            if let Some(layer) = &model.layer {
                if let Ok(windows) = layer.recover_windows() {
                    per_epoch.push((stats.epoch + 1, windows));
                }
            }
        },
    )?;

    // Arm (b): identical shapes, clamping disabled, default initialization.
    let plain = MultiWindowLayer::plain_mixer_init(
        n_windows,
        seeds::derive(spec.train.seed, seeds::TAG_LAYER_INIT, 1),
    );
    let model = Model {
        layer: Some(plain),
        backbone: TinyBackbone::new(c, spec.train.seed),
        norm,
    };
    let run_plain = super::train_and_evaluate(
        model,
        spec,
        "no_windowing",
        super::Preprocess::Raw,
        &dataset_fp,
        (train_i, train_l),
        (val_i, val_l),
        (test_i, test_l),
        |_, _| {},
    )?;

    // Arm (c): the 8-bit baseline without any windowing layer.
    let prep8 = |imgs: &[ImageTensor]| {
        preprocess_all(imgs, |img| preprocess_8bit(img, spec.quantize_mode, &norm))
    };
    let train_p = prep8(train_i)?;
    let val_p = prep8(val_i)?;
    let test_p = prep8(test_i)?;
    let model = Model {
        layer: None,
        backbone: TinyBackbone::new(c, spec.train.seed),
        norm,
    };
    let run_8bit = super::train_and_evaluate(
        model,
        spec,
        "baseline_8bit",
        super::Preprocess::EightBit(spec.quantize_mode),
        &dataset_fp,
        (&train_p, train_l),
        (&val_p, val_l),
        (&test_p, test_l),
        |_, _| {},
    )?;

    Ok(ExperimentResult {
        kind: super::ExperimentKind::Multiwindow,
        seed: spec.train.seed,
        dataset_fingerprint: dataset_fp,
        n_classes: c,
        runs: vec![run_windownet, run_plain, run_8bit],
        recovered: vec![RecoveredTrace {
            arm: "windownet".to_string(),
            per_epoch,
        }],
    })
}
