//! Experiment specification: kind, dataset, output directory, training
//! recipe, and kind-specific parameters, with a human-readable
//! key=value/section file format.

use super::ExpError;
use crate::imagepipe::QuantizeMode;
use crate::multiwindow::default_init_windows;
use crate::tinynet::TrainConfig;
use crate::windowing::WindowSpec;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Bitdepth,
    Grid,
    Multiwindow,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Bitdepth => "bitdepth",
            ExperimentKind::Grid => "grid",
            ExperimentKind::Multiwindow => "multiwindow",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ExpError> {
        match s {
            "bitdepth" => Ok(ExperimentKind::Bitdepth),
            "grid" => Ok(ExperimentKind::Grid),
            "multiwindow" => Ok(ExperimentKind::Multiwindow),
            other => Err(ExpError::Spec(format!(
                "unknown experiment kind {other:?} (expected bitdepth, grid or multiwindow)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    /// Bit-depth arm target (bitdepth kind).
    pub bit_target: u8,
    pub quantize_mode: QuantizeMode,
    /// Grid kind: desk-scale subsample by default, the paper's 76-run grid
    /// behind `full_grid`.
    pub grid_levels: Vec<f64>,
    pub grid_widths: Vec<f64>,
    pub full_grid: bool,
    /// Multiwindow kind: initial windows, the paper's 14 by default.
    pub init_windows: Vec<WindowSpec>,
}

/// Desk-scale default grid: 3 levels x 2 widths.
pub fn default_grid_levels() -> Vec<f64> {
    vec![1000.0, 2000.0, 3000.0]
}

pub fn default_grid_widths() -> Vec<f64> {
    vec![2000.0, 3000.0]
}

/// The paper's grid: level 100 plus 250..=3500 step 250, five widths.
pub fn paper_grid_levels() -> Vec<f64> {
    let mut levels = vec![100.0];
    let mut l = 250.0;
    while l <= 3500.0 {
        levels.push(l);
        l += 250.0;
    }
    levels
}

pub fn paper_grid_widths() -> Vec<f64> {
    vec![500.0, 1000.0, 1500.0, 2000.0, 3000.0]
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, dataset: PathBuf, out_dir: PathBuf) -> Self {
        ExperimentSpec {
            kind,
            dataset,
            out_dir,
            train: TrainConfig::default(),
            bit_target: 8,
            quantize_mode: QuantizeMode::RoundRescale,
            grid_levels: default_grid_levels(),
            grid_widths: default_grid_widths(),
            full_grid: false,
            init_windows: default_init_windows(),
        }
    }

    pub fn validate(&self) -> Result<(), ExpError> {
        if !self.dataset.exists() {
            return Err(ExpError::Spec(format!(
                "dataset path {} does not exist",
                self.dataset.display()
            )));
        }
        if self.kind == ExperimentKind::Grid && (self.grid_levels.is_empty() || self.grid_widths.is_empty())
        {
            return Err(ExpError::Spec("grid experiment with an empty grid".into()));
        }
        if self.kind == ExperimentKind::Multiwindow && self.init_windows.is_empty() {
            return Err(ExpError::Spec("multiwindow experiment with no initial windows".into()));
        }
        self.train
            .validate()
            .map_err(|e| ExpError::Spec(e.to_string()))?;
        Ok(())
    }

    /// Canonical key=value form, used for both the manifest and the config
    /// fingerprint.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("kind".to_string(), self.kind.as_str().to_string()),
            ("dataset".to_string(), self.dataset.display().to_string()),
            ("bit_target".to_string(), self.bit_target.to_string()),
            (
                "quantize_mode".to_string(),
                match self.quantize_mode {
                    QuantizeMode::RoundRescale => "round-rescale".to_string(),
                    QuantizeMode::Shift => "shift".to_string(),
                },
            ),
            ("full_grid".to_string(), self.full_grid.to_string()),
            ("grid_levels".to_string(), join_f64(&self.grid_levels)),
            ("grid_widths".to_string(), join_f64(&self.grid_widths)),
            (
                "init_windows".to_string(),
                self.init_windows
                    .iter()
                    .map(|w| format!("{}:{}", w.level, w.width))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ];
        for (k, v) in self.train.to_kv() {
            kv.push((format!("train.{k}"), v));
        }
        kv
    }

    /// Parse the spec file format: top-level `key=value` lines plus a
    /// `[train]` section; `#` starts a comment.
    pub fn parse(text: &str, out_dir: PathBuf) -> Result<Self, ExpError> {
        let mut kind = None;
        let mut dataset = None;
        let mut top = Vec::new();
        let mut train_kv = Vec::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                if section != "train" && section != "grid" && section != "multiwindow" {
                    return Err(ExpError::Spec(format!(
                        "unknown section [{section}] on line {}",
                        lineno + 1
                    )));
                }
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ExpError::Spec(format!("line {} is not key=value: {raw:?}", lineno + 1))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            match (section.as_str(), k.as_str()) {
                ("", "kind") => kind = Some(ExperimentKind::parse(&v)?),
                ("", "dataset") => dataset = Some(PathBuf::from(v)),
                ("train", _) => train_kv.push((k, v)),
                _ => top.push((k, v)),
            }
        }
        let kind = kind.ok_or_else(|| ExpError::Spec("spec file is missing kind=".into()))?;
        let dataset = dataset.ok_or_else(|| ExpError::Spec("spec file is missing dataset=".into()))?;
        let mut spec = ExperimentSpec::new(kind, dataset, out_dir);
        spec.train = TrainConfig::from_kv(&train_kv).map_err(|e| ExpError::Spec(e.to_string()))?;
        for (k, v) in top {
            spec.set_param(&k, &v)?;
        }
        Ok(spec)
    }

    /// Apply one kind-specific parameter (also used for CLI flag overrides).
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<(), ExpError> {
        let bad = |what: &str| ExpError::Spec(format!("cannot parse {what}={value}"));
        match key {
            "bit_target" => self.bit_target = value.parse().map_err(|_| bad(key))?,
            "quantize_mode" => {
                self.quantize_mode = match value {
                    "round-rescale" => QuantizeMode::RoundRescale,
                    "shift" => QuantizeMode::Shift,
                    _ => return Err(bad(key)),
                }
            }
            "full_grid" => self.full_grid = value.parse().map_err(|_| bad(key))?,
            "levels" | "grid_levels" => self.grid_levels = parse_f64_list(value).ok_or_else(|| bad(key))?,
            "widths" | "grid_widths" => self.grid_widths = parse_f64_list(value).ok_or_else(|| bad(key))?,
            "init_windows" => {
                let mut windows = Vec::new();
                for part in value.split(',') {
                    let (l, w) = part
                        .split_once(':')
                        .ok_or_else(|| ExpError::Spec(format!("window {part:?} is not level:width")))?;
                    windows.push(WindowSpec {
                        level: l.trim().parse().map_err(|_| bad(key))?,
                        width: w.trim().parse().map_err(|_| bad(key))?,
                    });
                }
                self.init_windows = windows;
            }
            other => {
                return Err(ExpError::Spec(format!("unknown spec key {other:?}")));
            }
        }
        Ok(())
    }
}

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_f64_list(s: &str) -> Option<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<Vec<f64>>>()
        .filter(|v: &Vec<f64>| !v.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trips_core_fields() {
        let text = "\
kind=grid
dataset=/tmp/ds
levels=1000,2000   # desk subsample
widths=2000,3000

[train]
learning_rate=0.001
max_epochs=7
seed=9
";
        let spec = ExperimentSpec::parse(text, PathBuf::from("/tmp/out")).unwrap();
        assert_eq!(spec.kind, ExperimentKind::Grid);
        assert_eq!(spec.grid_levels, vec![1000.0, 2000.0]);
        assert_eq!(spec.train.learning_rate, 0.001);
        assert_eq!(spec.train.max_epochs, 7);
        assert_eq!(spec.train.seed, 9);
        // Untouched fields keep defaults.
        assert_eq!(spec.train.batch_size, 32);
        assert_eq!(spec.init_windows.len(), 14);
    }

    #[test]
    fn missing_kind_is_an_error() {
        assert!(ExperimentSpec::parse("dataset=/x\n", PathBuf::from("/tmp")).is_err());
    }

    #[test]
    fn unknown_key_is_an_error() {
        let text = "kind=grid\ndataset=/x\nbogus=1\n";
        assert!(ExperimentSpec::parse(text, PathBuf::from("/tmp")).is_err());
    }

    #[test]
    fn paper_grid_has_75_windows() {
        assert_eq!(paper_grid_levels().len() * paper_grid_widths().len(), 75);
    }

    #[test]
    fn init_windows_parse() {
        let mut spec = ExperimentSpec::new(
            ExperimentKind::Multiwindow,
            PathBuf::from("/x"),
            PathBuf::from("/y"),
        );
        spec.set_param("init_windows", "100:3000,2048:4096").unwrap();
        assert_eq!(spec.init_windows.len(), 2);
        assert_eq!(spec.init_windows[1].width, 4096.0);
    }
}
