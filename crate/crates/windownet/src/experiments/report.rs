//! Result persistence: per-run AUC tables, grid summaries, recovered-window
//! traces, a deterministic manifest, and a human-readable summary.

use super::{class_names, ExpError, ExperimentKind, ExperimentResult};
use std::fs;
use std::path::{Path, PathBuf};

fn write(path: &Path, content: &str) -> Result<(), ExpError> {
    fs::write(path, content).map_err(|source| ExpError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Write every CSV, the manifest, and the summary for an experiment.
/// All CSVs and the manifest are pure functions of the result, so re-running
/// the same experiment re-creates them byte for byte; wall times go only to
/// the summary.
pub fn write_experiment(result: &ExperimentResult, out_dir: &Path) -> Result<Vec<PathBuf>, ExpError> {
    fs::create_dir_all(out_dir).map_err(|source| ExpError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let names = class_names(result.n_classes);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut written = Vec::new();

    for run in &result.runs {
        let path = out_dir.join(format!("{}_auc.csv", run.label));
        write(&path, &run.test_eval.to_csv(&name_refs))?;
        written.push(path);
    }

    if result.kind == ExperimentKind::Grid {
        let mut combined = String::from("level,width,class,val_auc,test_auc\n");
        for run in &result.runs {
            let w = run.window.expect("grid runs carry their window");
            for (i, name) in names.iter().enumerate() {
                let val = fmt_opt(run.val_eval.per_class_auc[i]);
                let test = fmt_opt(run.test_eval.per_class_auc[i]);
                combined.push_str(&format!("{},{},{name},{val},{test}\n", w.level, w.width));
            }
            combined.push_str(&format!(
                "{},{},mean,{},{}\n",
                w.level, w.width, run.val_eval.mean_auc, run.test_eval.mean_auc
            ));
        }
        let path = out_dir.join("grid_aucs.csv");
        write(&path, &combined)?;
        written.push(path);

        let mut best = String::from("class,best_level,best_width,best_val_auc,test_auc\n");
        for (i, name) in names.iter().enumerate() {
            let top = result
                .runs
                .iter()
                .filter_map(|r| r.val_eval.per_class_auc[i].map(|a| (r, a)))
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap());
            match top {
                Some((run, auc)) => {
                    let w = run.window.expect("grid runs carry their window");
                    best.push_str(&format!(
                        "{name},{},{},{auc},{}\n",
                        w.level,
                        w.width,
                        fmt_opt(run.test_eval.per_class_auc[i])
                    ));
                }
                None => best.push_str(&format!("{name},undefined,undefined,undefined,undefined\n")),
            }
        }
        let path = out_dir.join("grid_best.csv");
        write(&path, &best)?;
        written.push(path);
    }

    for trace in &result.recovered {
        let mut csv = String::from("epoch,window,level,width\n");
        for (epoch, windows) in &trace.per_epoch {
            for (i, w) in windows.iter().enumerate() {
                csv.push_str(&format!("{epoch},{i},{},{}\n", w.level, w.width));
            }
        }
        let path = out_dir.join(format!("recovered_windows_{}.csv", trace.arm));
        write(&path, &csv)?;
        written.push(path);
    }

    let mut manifest = format!(
        "kind={}\nseed={}\ndataset_fingerprint={}\nn_classes={}\n",
        result.kind.as_str(),
        result.seed,
        result.dataset_fingerprint,
        result.n_classes
    );
    for run in &result.runs {
        manifest.push_str(&format!("run.{}={}\n", run.label, run.fingerprint));
    }
    let path = out_dir.join("manifest.txt");
    write(&path, &manifest)?;
    written.push(path);

    let path = out_dir.join("summary.txt");
    write(&path, &summary_text(result, &names))?;
    written.push(path);
    Ok(written)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "undefined".to_string(),
    }
}

fn summary_text(result: &ExperimentResult, names: &[String]) -> String {
    let mut s = format!(
        "{} experiment, seed {}, dataset {}\n\n",
        result.kind.as_str(),
        result.seed,
        result.dataset_fingerprint
    );
    for run in &result.runs {
        s.push_str(&format!(
            "{}: test mean AUC {:.4}, best val AUC {:.4}, {} epochs, {:.1}s\n",
            run.label, run.test_eval.mean_auc, run.best_val_auc, run.epochs_run, run.wall_time_s
        ));
        let undefined: Vec<&str> = run
            .test_eval
            .per_class_auc
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(i, _)| names[i].as_str())
            .collect();
        if !undefined.is_empty() {
            s.push_str(&format!(
                "  warning: AUC undefined (single-class test split) for: {}\n",
                undefined.join(", ")
            ));
        }
    }
    s
}
