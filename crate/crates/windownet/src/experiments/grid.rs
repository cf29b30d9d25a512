//! Fixed-window grid search: train the baseline model once per grid window
//! plus the full-range baseline, rank windows per class by validation AUC.

use super::specfile::{paper_grid_levels, paper_grid_widths};
use super::{
    fingerprint, fixed_window_run, full_range_window, ExpError, ExperimentResult, ExperimentSpec,
};
use crate::synthlab;
use crate::windowing::WindowSpec;

/// The grid: levels x widths, with the full-range baseline appended last.
pub fn build_grid(spec: &ExperimentSpec) -> Vec<WindowSpec> {
    let (levels, widths) = if spec.full_grid {
        (paper_grid_levels(), paper_grid_widths())
    } else {
        (spec.grid_levels.clone(), spec.grid_widths.clone())
    };
    let mut grid = Vec::with_capacity(levels.len() * widths.len() + 1);
    for &level in &levels {
        for &width in &widths {
            grid.push(WindowSpec { level, width });
        }
    }
    grid.push(full_range_window());
    grid
}

pub fn run_grid(spec: &ExperimentSpec) -> Result<ExperimentResult, ExpError> {
    spec.validate()?;
    let dataset = synthlab::load_dataset(&spec.dataset)?;
    let dataset_fp = fingerprint(&dataset.config.to_kv());
    let grid = build_grid(spec);

    let mut runs = Vec::with_capacity(grid.len());
    for window in &grid {
        let label = format!("grid_l{}_w{}", window.level, window.width);
        runs.push(fixed_window_run(&dataset, window, spec, &label, &dataset_fp)?);
    }

    Ok(ExperimentResult {
        kind: super::ExperimentKind::Grid,
        seed: spec.train.seed,
        dataset_fingerprint: dataset_fp,
        n_classes: dataset.config.n_classes,
        runs,
        recovered: Vec::new(),
    })
}

/// The class-wise top-3 selection: per class take the three grid windows
/// with the highest validation AUC, union them, deduplicate, and append the
/// full-range window.
pub fn top3_init_windows(result: &ExperimentResult) -> Vec<WindowSpec> {
    let mut chosen: Vec<WindowSpec> = Vec::new();
    let mut push_unique = |w: WindowSpec| {
        if !chosen
            .iter()
            .any(|c| c.level == w.level && c.width == w.width)
        {
            chosen.push(w);
        }
    };
    for class in 0..result.n_classes {
        let mut ranked: Vec<(f64, WindowSpec)> = result
            .runs
            .iter()
            .filter_map(|r| {
                let w = r.window?;
                r.val_eval.per_class_auc[class].map(|a| (a, w))
            })
            .collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (_, w) in ranked.into_iter().take(3) {
            push_unique(w);
        }
    }
    push_unique(full_range_window());
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EvalResult;
    use std::path::PathBuf;

    #[test]
    fn default_grid_is_subsampled_plus_baseline() {
        let spec = ExperimentSpec::new(
            super::super::ExperimentKind::Grid,
            PathBuf::from("/nonexistent"),
            PathBuf::from("/tmp"),
        );
        let grid = build_grid(&spec);
        assert_eq!(grid.len(), 3 * 2 + 1);
        assert_eq!(grid.last().unwrap().width, 4096.0);
    }

    #[test]
    fn full_grid_is_76_runs() {
        let mut spec = ExperimentSpec::new(
            super::super::ExperimentKind::Grid,
            PathBuf::from("/nonexistent"),
            PathBuf::from("/tmp"),
        );
        spec.full_grid = true;
        assert_eq!(build_grid(&spec).len(), 76);
    }

    fn fake_run(label: &str, window: WindowSpec, val_aucs: Vec<Option<f64>>) -> super::super::RunResult {
        let n = val_aucs.len();
        let eval = EvalResult {
            per_class_auc: val_aucs,
            mean_auc: 0.5,
            counts: vec![(1, 1); n],
        };
        super::super::RunResult {
            label: label.to_string(),
            window: Some(window),
            test_eval: eval.clone(),
            val_eval: eval,
            best_val_auc: 0.5,
            epochs_run: 1,
            fingerprint: "0".into(),
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn top3_selection_unions_and_appends_full_range() {
        let w1 = WindowSpec { level: 1000.0, width: 2000.0 };
        let w2 = WindowSpec { level: 2000.0, width: 2000.0 };
        let w3 = WindowSpec { level: 3000.0, width: 2000.0 };
        let result = super::super::ExperimentResult {
            kind: super::super::ExperimentKind::Grid,
            seed: 0,
            dataset_fingerprint: "0".into(),
            n_classes: 2,
            runs: vec![
                fake_run("a", w1, vec![Some(0.9), Some(0.6)]),
                fake_run("b", w2, vec![Some(0.8), Some(0.9)]),
                fake_run("c", w3, vec![Some(0.7), Some(0.8)]),
            ],
            recovered: Vec::new(),
        };
        let init = top3_init_windows(&result);
        // All three windows make a top-3 for some class; baseline appended.
        assert_eq!(init.len(), 4);
        assert_eq!(init.last().unwrap().width, 4096.0);
    }
}
