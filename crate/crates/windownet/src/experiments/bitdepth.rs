//! Bit-depth comparison: the same backbone trained once on 8-bit-quantized
//! images and once on 12-bit images, both without windowing. The 12-bit arm
//! is literally the full-range-window pipeline, so a grid search's baseline
//! run reproduces it exactly under the same seed.

use super::{
    fingerprint, fixed_window_run, full_range_window, preprocess_8bit, preprocess_all, ExpError,
    ExperimentResult, ExperimentSpec,
};
use crate::imagepipe::{ImageTensor, NormalizationSpec};
use crate::synthlab;
use crate::tinynet::{Model, TinyBackbone};

pub fn run_bitdepth(spec: &ExperimentSpec) -> Result<ExperimentResult, ExpError> {
    spec.validate()?;
    let dataset = synthlab::load_dataset(&spec.dataset)?;
    let dataset_fp = fingerprint(&dataset.config.to_kv());
    let norm = NormalizationSpec::imagenet();

    // Low-bit arm: quantize, train on the quantized (0, 255) values.
    let prep8 = |imgs: &[ImageTensor]| {
        preprocess_all(imgs, |img| preprocess_8bit(img, spec.quantize_mode, &norm))
    };
    let (train_i, train_l) = dataset.train();
    let (val_i, val_l) = dataset.val();
    let (test_i, test_l) = dataset.test();
    let train_p = prep8(train_i)?;
    let val_p = prep8(val_i)?;
    let test_p = prep8(test_i)?;
    let model = Model {
        layer: None,
        backbone: TinyBackbone::new(dataset.config.n_classes, spec.train.seed),
        norm,
    };
    let label8 = format!("bitdepth_{}bit", spec.bit_target);
    let run8 = super::train_and_evaluate(
        model,
        spec,
        &label8,
        super::Preprocess::EightBit(spec.quantize_mode),
        &dataset_fp,
        (&train_p, train_l),
        (&val_p, val_l),
        (&test_p, test_l),
        |_, _| {},
    )?;

    // Full-depth arm: identity (full-range) window, scaled to (0, 255).
    let run12 = fixed_window_run(
        &dataset,
        &full_range_window(),
        spec,
        "bitdepth_12bit",
        &dataset_fp,
    )?;

    Ok(ExperimentResult {
        kind: super::ExperimentKind::Bitdepth,
        seed: spec.train.seed,
        dataset_fingerprint: dataset_fp,
        n_classes: dataset.config.n_classes,
        runs: vec![run8, run12],
        recovered: Vec::new(),
    })
}
