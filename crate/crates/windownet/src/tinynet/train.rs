//! The training loop: batched AdamW over the windowing layer (when present)
//! and the backbone, with plateau learning-rate decay, early stopping, and
//! best-validation-AUC model selection.
//!
//! Determinism: every shuffle derives from (seed, epoch), per-sample work is
//! parallel but reduced in index order, so identical (config, data) runs are
//! bit-identical and a resumed run continues exactly where it left off.

use super::backbone::{BackboneGradients, TinyBackbone, CONV1_CH, CONV2_CH};
use super::checkpoint::{Checkpoint, CheckpointError, NamedArray};
use super::loss::bce_with_logits;
use super::optim::{adamw_step, AdamHyper, AdamState};
use super::schedule::{EarlyStopTracker, PlateauAction, PlateauTracker, StopAction};
use super::TrainError;
use crate::imagepipe::{ImageTensor, NormalizationSpec};
use crate::metrics::{self, EvalResult};
use crate::multiwindow::{LayerGradients, MultiWindowLayer};
use crate::seeds;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// The full training recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lr_decay_factor: f64,
    pub plateau_patience_lr: usize,
    pub stop_patience: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            lr_decay_factor: 10.0,
            plateau_patience_lr: 3,
            stop_patience: 5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            max_epochs: 100,
        }
    }
}

impl TrainConfig {
    /// Checks the positivity invariants; returns advisory warnings.
    pub fn validate(&self) -> Result<Vec<String>, TrainError> {
        if !(self.learning_rate > 0.0)
            || self.batch_size == 0
            || !(self.lr_decay_factor > 0.0)
            || self.plateau_patience_lr == 0
            || self.stop_patience == 0
            || self.weight_decay < 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
            || self.max_epochs == 0
        {
            return Err(TrainError::Config(format!("invalid training config: {self:?}")));
        }
        let mut warnings = Vec::new();
        if self.plateau_patience_lr >= self.stop_patience {
            warnings.push(format!(
                "plateau patience {} is not below stop patience {}; the learning rate will never decay before stopping",
                self.plateau_patience_lr, self.stop_patience
            ));
        }
        Ok(warnings)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("learning_rate".into(), self.learning_rate.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr_decay_factor".into(), self.lr_decay_factor.to_string()),
            ("plateau_patience_lr".into(), self.plateau_patience_lr.to_string()),
            ("stop_patience".into(), self.stop_patience.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("beta1".into(), self.beta1.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("epsilon".into(), self.epsilon.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
        ]
    }

    pub fn from_kv(kv: &[(String, String)]) -> Result<Self, TrainError> {
        let mut cfg = TrainConfig::default();
        let lookup = |key: &str| kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        macro_rules! parse_into {
            ($field:ident) => {
                if let Some(v) = lookup(stringify!($field)) {
                    cfg.$field = v.parse().map_err(|_| {
                        TrainError::Config(format!(
                            "cannot parse {}={v}",
                            stringify!($field)
                        ))
                    })?;
                }
            };
        }
        parse_into!(learning_rate);
        parse_into!(batch_size);
        parse_into!(lr_decay_factor);
        parse_into!(plateau_patience_lr);
        parse_into!(stop_patience);
        parse_into!(weight_decay);
        parse_into!(beta1);
        parse_into!(beta2);
        parse_into!(epsilon);
        parse_into!(seed);
        parse_into!(max_epochs);
        Ok(cfg)
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

/// Classifier = optional windowing front-end + backbone. Without the
/// front-end the model consumes already-normalized 3-channel images; with it
/// the model consumes raw single-channel pixels.
#[derive(Clone)]
pub struct Model {
    pub layer: Option<MultiWindowLayer>,
    pub backbone: TinyBackbone,
    pub norm: NormalizationSpec,
}

pub struct ModelGradients {
    pub layer: Option<LayerGradients>,
    pub net: BackboneGradients,
}

impl ModelGradients {
    fn zeros(model: &Model) -> Self {
        ModelGradients {
            layer: model
                .layer
                .as_ref()
                .map(|l| LayerGradients::zeros(l.n_windows())),
            net: BackboneGradients::zeros(model.backbone.n_classes),
        }
    }

    fn add(&mut self, other: &ModelGradients) {
        if let (Some(a), Some(b)) = (self.layer.as_mut(), other.layer.as_ref()) {
            a.add(b);
        }
        self.net.add(&other.net);
    }

    pub fn as_slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        if let Some(l) = &self.layer {
            v.extend(MultiWindowLayer::grads_as_slices(l));
        }
        v.extend(self.net.as_slices());
        v
    }
}

impl Model {
    pub fn n_classes(&self) -> usize {
        self.backbone.n_classes
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        if let Some(layer) = self.layer.as_mut() {
            v.extend(layer.params_mut());
        }
        v.extend(self.backbone.params_mut());
        v
    }

    pub fn param_snapshot(&mut self) -> Vec<Vec<f64>> {
        self.params_mut().iter().map(|s| s.to_vec()).collect()
    }

    pub fn restore_params(&mut self, snapshot: &[Vec<f64>]) -> Result<(), TrainError> {
        let mut slices = self.params_mut();
        if slices.len() != snapshot.len() {
            return Err(TrainError::Shape(format!(
                "snapshot has {} slices, model has {}",
                snapshot.len(),
                slices.len()
            )));
        }
        for (dst, src) in slices.iter_mut().zip(snapshot) {
            if dst.len() != src.len() {
                return Err(TrainError::Shape("snapshot slice length mismatch".into()));
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn param_shapes(&mut self) -> Vec<usize> {
        self.params_mut().iter().map(|s| s.len()).collect()
    }

    /// Logits for one image (no gradient bookkeeping).
    pub fn forward_logits(&self, img: &ImageTensor) -> Result<Vec<f64>, TrainError> {
        match &self.layer {
            Some(layer) => {
                let (out, _) = layer.forward(img, &self.norm)?;
                let (logits, _) = self
                    .backbone
                    .forward(out.data(), out.height(), out.width())?;
                Ok(logits)
            }
            None => {
                let (logits, _) = self
                    .backbone
                    .forward(img.data(), img.height(), img.width())?;
                Ok(logits)
            }
        }
    }

    /// Mean BCE loss over a batch plus exact reverse-mode gradients for
    /// every trainable parameter. Per-sample passes run in parallel and are
    /// reduced in index order.
    pub fn forward_backward_batch(
        &self,
        images: &[&ImageTensor],
        labels: &[f64],
    ) -> Result<(f64, ModelGradients), TrainError> {
        let b = images.len();
        let c = self.backbone.n_classes;
        if labels.len() != b * c {
            return Err(TrainError::Shape(format!(
                "batch of {b} images needs {b}x{c} labels, got {}",
                labels.len()
            )));
        }

        enum Cache {
            Windowed(crate::multiwindow::ForwardCache, super::backbone::BackboneCache),
            Plain(super::backbone::BackboneCache),
        }

        let forwards: Vec<Result<(Vec<f64>, Cache), TrainError>> = images
            .par_iter()
            .map(|img| match &self.layer {
                Some(layer) => {
                    let (out, lcache) = layer.forward(img, &self.norm)?;
                    let (logits, ncache) =
                        self.backbone.forward(out.data(), out.height(), out.width())?;
                    Ok((logits, Cache::Windowed(lcache, ncache)))
                }
                None => {
                    let (logits, ncache) =
                        self.backbone.forward(img.data(), img.height(), img.width())?;
                    Ok((logits, Cache::Plain(ncache)))
                }
            })
            .collect();

        let mut logits = Vec::with_capacity(b * c);
        let mut caches = Vec::with_capacity(b);
        for f in forwards {
            let (l, cache) = f?;
            logits.extend_from_slice(&l);
            caches.push(cache);
        }

        let (loss, d_logits) = bce_with_logits(&logits, labels, b, c)?;

        let per_sample: Vec<Result<ModelGradients, TrainError>> = caches
            .par_iter()
            .enumerate()
            .map(|(i, cache)| {
                let d_row = &d_logits[i * c..(i + 1) * c];
                match cache {
                    Cache::Windowed(lcache, ncache) => {
                        let (net, d_net_input) = self.backbone.backward(ncache, d_row)?;
                        let layer = self.layer.as_ref().expect("windowed cache implies layer");
                        let (lgrads, _d_img) = layer.backward(lcache, &d_net_input)?;
                        Ok(ModelGradients {
                            layer: Some(lgrads),
                            net,
                        })
                    }
                    Cache::Plain(ncache) => {
                        let (net, _d_img) = self.backbone.backward(ncache, d_row)?;
                        Ok(ModelGradients { layer: None, net })
                    }
                }
            })
            .collect();

        let mut total = ModelGradients::zeros(self);
        for g in per_sample {
            total.add(&g?);
        }
        Ok((loss, total))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mean_auc: f64,
    pub lr: f64,
    pub lr_decayed: bool,
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best_epoch: Option<usize>,
    pub best_val_auc: f64,
    pub history: Vec<EpochStats>,
}

/// Owns the model, optimizer state, schedulers, and best-model bookkeeping.
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    opt: AdamState,
    hyper: AdamHyper,
    lr: f64,
    plateau: PlateauTracker,
    stop: EarlyStopTracker,
    epoch: usize,
    best_auc: f64,
    best_epoch: Option<usize>,
    best_params: Option<Vec<Vec<f64>>>,
}

impl Trainer {
    pub fn new(mut model: Model, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let shapes = model.param_shapes();
        Ok(Trainer {
            opt: AdamState::new(&shapes),
            hyper: cfg.hyper(),
            lr: cfg.learning_rate,
            plateau: PlateauTracker::new(cfg.plateau_patience_lr),
            stop: EarlyStopTracker::new(cfg.stop_patience),
            epoch: 0,
            best_auc: f64::NEG_INFINITY,
            best_epoch: None,
            best_params: None,
            model,
            cfg,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn epochs_completed(&self) -> usize {
        self.epoch
    }

    pub fn best_val_auc(&self) -> f64 {
        self.best_auc
    }

    /// One pass over the training set in (seed, epoch)-derived shuffle
    /// order; returns the mean train loss over batches.
    pub fn train_epoch(
        &mut self,
        images: &[ImageTensor],
        labels: &[f64],
    ) -> Result<f64, TrainError> {
        let n = images.len();
        let c = self.model.backbone.n_classes;
        if labels.len() != n * c {
            return Err(TrainError::Shape(format!(
                "training set of {n} images needs {n}x{c} labels, got {}",
                labels.len()
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(
            self.cfg.seed,
            seeds::TAG_SHUFFLE,
            self.epoch as u64,
        ));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch_images: Vec<&ImageTensor> = chunk.iter().map(|&i| &images[i]).collect();
            let batch_labels: Vec<f64> = chunk
                .iter()
                .flat_map(|&i| labels[i * c..(i + 1) * c].iter().copied())
                .collect();
            let (loss, grads) = self
                .model
                .forward_backward_batch(&batch_images, &batch_labels)?;
            let grad_slices = grads.as_slices();
            let mut param_slices = self.model.params_mut();
            adamw_step(&mut param_slices, &grad_slices, &mut self.opt, self.lr, &self.hyper)?;
            loss_sum += loss;
            batches += 1;
        }
        Ok(loss_sum / batches.max(1) as f64)
    }

    /// Loss and per-class AUC over a labeled set, in input order.
    pub fn evaluate(
        &self,
        images: &[ImageTensor],
        labels: &[f64],
    ) -> Result<(f64, EvalResult), TrainError> {
        evaluate_model(&self.model, images, labels)
    }

    /// Full training loop. `on_epoch` fires after each epoch with the stats
    /// and the current model (before any learning-rate decay is applied to
    /// the next epoch).
    pub fn fit(
        &mut self,
        train_images: &[ImageTensor],
        train_labels: &[f64],
        val_images: &[ImageTensor],
        val_labels: &[f64],
        mut on_epoch: impl FnMut(&EpochStats, &Model),
    ) -> Result<FitSummary, TrainError> {
        let mut history = Vec::new();
        let mut stopped_early = false;
        while self.epoch < self.cfg.max_epochs {
            let train_loss = self.train_epoch(train_images, train_labels)?;
            let (val_loss, eval) = self.evaluate(val_images, val_labels)?;
            let epoch = self.epoch;
            self.epoch += 1;

            if eval.mean_auc > self.best_auc {
                self.best_auc = eval.mean_auc;
                self.best_epoch = Some(epoch);
                self.best_params = Some(self.model.param_snapshot());
            }

            let decayed = self.plateau.observe(val_loss) == PlateauAction::Decay;
            if decayed {
                self.lr /= self.cfg.lr_decay_factor;
            }
            let stats = EpochStats {
                epoch,
                train_loss,
                val_loss,
                val_mean_auc: eval.mean_auc,
                lr: self.lr,
                lr_decayed: decayed,
            };
            on_epoch(&stats, &self.model);
            history.push(stats);

            if self.stop.observe(val_loss) == StopAction::Stop {
                stopped_early = true;
                break;
            }
        }
        Ok(FitSummary {
            epochs_run: self.epoch,
            stopped_early,
            best_epoch: self.best_epoch,
            best_val_auc: self.best_auc,
            history,
        })
    }

    /// The model at the highest-validation-AUC epoch (the current model when
    /// no epoch has been selected yet).
    pub fn best_model(&self) -> Model {
        let mut model = self.model.clone();
        if let Some(best) = &self.best_params {
            model.restore_params(best).expect("snapshot matches model");
        }
        model
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut config = self.cfg.to_kv();
        let model = &self.model;
        config.push(("n_classes".into(), model.backbone.n_classes.to_string()));
        config.push(("has_layer".into(), model.layer.is_some().to_string()));
        if let Some(layer) = &model.layer {
            config.push(("n_windows".into(), layer.n_windows().to_string()));
            config.push(("clamped".into(), layer.is_clamped().to_string()));
        }
        for c in 0..3 {
            config.push((format!("norm_mean_{c}"), model.norm.mean[c].to_string()));
            config.push((format!("norm_std_{c}"), model.norm.std[c].to_string()));
        }

        let mut arrays = Vec::new();
        if let Some(layer) = &model.layer {
            let n = layer.n_windows();
            arrays.push(NamedArray::vector("layer.win_weight", layer.weights().to_vec()));
            arrays.push(NamedArray::vector("layer.win_bias", layer.biases().to_vec()));
            arrays.push(NamedArray::vector("layer.ceiling", layer.ceilings().to_vec()));
            arrays.push(NamedArray::with_dims("layer.mixer", vec![3, n], layer.mixer().to_vec()));
            arrays.push(NamedArray::vector("layer.mixer_bias", layer.mixer_bias().to_vec()));
        }
        let net = &model.backbone;
        let c = net.n_classes;
        let net_params = net.params();
        let net_dims: Vec<(&str, Vec<usize>)> = vec![
            ("net.conv1_w", vec![CONV1_CH, 3, 3, 3]),
            ("net.conv1_b", vec![CONV1_CH]),
            ("net.conv2_w", vec![CONV2_CH, CONV1_CH, 3, 3]),
            ("net.conv2_b", vec![CONV2_CH]),
            ("net.fc_w", vec![c, CONV2_CH]),
            ("net.fc_b", vec![c]),
        ];
        for ((name, dims), data) in net_dims.into_iter().zip(net_params) {
            arrays.push(NamedArray::with_dims(name, dims, data.to_vec()));
        }
        for (k, m) in self.opt.m.iter().enumerate() {
            arrays.push(NamedArray::vector(&format!("opt.m.{k}"), m.clone()));
        }
        for (k, v) in self.opt.v.iter().enumerate() {
            arrays.push(NamedArray::vector(&format!("opt.v.{k}"), v.clone()));
        }
        let (plateau_best, plateau_stale) = self.plateau.state();
        let (stop_best, stop_stale) = self.stop.state();
        arrays.push(NamedArray::vector(
            "state",
            vec![
                self.epoch as f64,
                self.opt.t as f64,
                self.lr,
                self.best_auc,
                plateau_best,
                plateau_stale as f64,
                stop_best,
                stop_stale as f64,
                self.best_epoch.map(|e| e as f64).unwrap_or(-1.0),
            ],
        ));
        if let Some(best) = &self.best_params {
            for (k, p) in best.iter().enumerate() {
                arrays.push(NamedArray::vector(&format!("best.{k}"), p.clone()));
            }
        }
        Checkpoint { config, arrays }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Trainer, TrainError> {
        let cfg = TrainConfig::from_kv(&ck.config)?;
        let get = |key: &str| -> Result<&str, TrainError> {
            ck.config_value(key)
                .ok_or_else(|| TrainError::Config(format!("checkpoint config missing {key}")))
        };
        let n_classes: usize = get("n_classes")?
            .parse()
            .map_err(|_| TrainError::Config("bad n_classes".into()))?;
        let has_layer: bool = get("has_layer")?
            .parse()
            .map_err(|_| TrainError::Config("bad has_layer".into()))?;
        let mut norm = NormalizationSpec::imagenet();
        for c in 0..3 {
            norm.mean[c] = get(&format!("norm_mean_{c}"))?
                .parse()
                .map_err(|_| TrainError::Config("bad norm mean".into()))?;
            norm.std[c] = get(&format!("norm_std_{c}"))?
                .parse()
                .map_err(|_| TrainError::Config("bad norm std".into()))?;
        }

        let arr = |name: &str| -> Result<Vec<f64>, CheckpointError> {
            Ok(ck.array(name)?.data.clone())
        };
        let layer = if has_layer {
            let clamped: bool = get("clamped")?
                .parse()
                .map_err(|_| TrainError::Config("bad clamped flag".into()))?;
            let mixer_bias_v = arr("layer.mixer_bias")?;
            let mixer_bias: [f64; 3] = mixer_bias_v
                .as_slice()
                .try_into()
                .map_err(|_| TrainError::Config("mixer bias must have 3 entries".into()))?;
            Some(MultiWindowLayer::from_parts(
                arr("layer.win_weight")?,
                arr("layer.win_bias")?,
                arr("layer.ceiling")?,
                arr("layer.mixer")?,
                mixer_bias,
                clamped,
            )?)
        } else {
            None
        };
        let backbone = TinyBackbone::from_parts(
            n_classes,
            arr("net.conv1_w")?,
            arr("net.conv1_b")?,
            arr("net.conv2_w")?,
            arr("net.conv2_b")?,
            arr("net.fc_w")?,
            arr("net.fc_b")?,
        )?;
        let mut model = Model {
            layer,
            backbone,
            norm,
        };

        let n_slices = model.param_shapes().len();
        let mut opt = AdamState::new(&model.param_shapes());
        for k in 0..n_slices {
            opt.m[k] = arr(&format!("opt.m.{k}"))?;
            opt.v[k] = arr(&format!("opt.v.{k}"))?;
        }
        let state = arr("state")?;
        if state.len() != 9 {
            return Err(TrainError::Config(format!(
                "state array must have 9 entries, got {}",
                state.len()
            )));
        }
        opt.t = state[1] as u64;
        let best_params = if ck.has_array("best.0") {
            let mut best = Vec::with_capacity(n_slices);
            for k in 0..n_slices {
                best.push(arr(&format!("best.{k}"))?);
            }
            Some(best)
        } else {
            None
        };
        Ok(Trainer {
            hyper: cfg.hyper(),
            lr: state[2],
            plateau: PlateauTracker::restore(cfg.plateau_patience_lr, state[4], state[5] as usize),
            stop: EarlyStopTracker::restore(cfg.stop_patience, state[6], state[7] as usize),
            epoch: state[0] as usize,
            best_auc: state[3],
            best_epoch: if state[8] < 0.0 { None } else { Some(state[8] as usize) },
            best_params,
            opt,
            model,
            cfg,
        })
    }
}

/// Loss and AUC of a model over a labeled set (parallel forward, ordered).
pub fn evaluate_model(
    model: &Model,
    images: &[ImageTensor],
    labels: &[f64],
) -> Result<(f64, EvalResult), TrainError> {
    let n = images.len();
    let c = model.backbone.n_classes;
    if labels.len() != n * c {
        return Err(TrainError::Shape(format!(
            "evaluation set of {n} images needs {n}x{c} labels, got {}",
            labels.len()
        )));
    }
    let rows: Vec<Result<Vec<f64>, TrainError>> =
        images.par_iter().map(|img| model.forward_logits(img)).collect();
    let mut logits = Vec::with_capacity(n * c);
    for row in rows {
        logits.extend_from_slice(&row?);
    }
    let (loss, _) = bce_with_logits(&logits, labels, n, c)?;
    let eval = metrics::evaluate(&logits, labels, n, c)?;
    Ok((loss, eval))
}
