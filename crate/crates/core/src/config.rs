//! Flat `key = value` run configuration.
//!
//! One key per line, `#` comments, unknown keys rejected. Defaults follow
//! the reference protocol: 2560-sample windows, 10 classes, learning rate
//! 0.00005, batch 64, 5 folds, IoU threshold 0.7, 256-sample minimum event.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::AdamConfig;
use crate::pipeline::SynthConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: String,
    pub out_dir: String,

    pub model_input_len: usize,
    pub model_num_classes: usize,
    pub model_base_filters: usize,
    pub model_heads: usize,
    pub model_dropout: f64,
    pub model_dilations: [usize; 5],
    pub model_ln_eps: f64,

    pub pipeline_target_fs: f64,
    pub pipeline_highpass_hz: f64,
    pub pipeline_filter: bool,
    pub pipeline_window_len: usize,
    pub pipeline_window_stride: usize,

    pub loss_lambda: f64,
    pub loss_cce_sum: bool,

    pub opt_lr: f64,
    pub opt_beta1: f64,
    pub opt_beta2: f64,
    pub opt_eps: f64,
    pub opt_decay_gamma: f64,

    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_fold: usize,
    pub train_folds: usize,

    pub post_min_len: usize,
    pub metrics_iou_thresh: f64,

    pub synth_classes: usize,
    pub synth_records: usize,
    pub synth_record_len: usize,
    pub synth_fs: f64,
    pub synth_min_event: usize,
    pub synth_max_event: usize,
    pub synth_short_fraction: f64,
    pub synth_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_dir: std::env::var("TEMPOFUSE_DATA_DIR").unwrap_or_else(|_| ".".into()),
            out_dir: "out".into(),

            model_input_len: 2560,
            model_num_classes: 10,
            model_base_filters: 64,
            model_heads: 4,
            model_dropout: 0.2,
            model_dilations: [1, 2, 4, 8, 16],
            model_ln_eps: 1e-5,

            pipeline_target_fs: 256.0,
            pipeline_highpass_hz: 0.5,
            pipeline_filter: true,
            pipeline_window_len: 2560,
            pipeline_window_stride: 2560,

            loss_lambda: 1.0,
            loss_cce_sum: false,

            opt_lr: 0.00005,
            opt_beta1: 0.9,
            opt_beta2: 0.999,
            opt_eps: 1e-8,
            opt_decay_gamma: 0.99,

            train_epochs: 50,
            train_batch_size: 64,
            train_fold: 0,
            train_folds: 5,

            post_min_len: 256,
            metrics_iou_thresh: 0.7,

            synth_classes: 4,
            synth_records: 64,
            synth_record_len: 2560,
            synth_fs: 256.0,
            synth_min_event: 256,
            synth_max_event: 1024,
            synth_short_fraction: 0.0,
            synth_noise: 0.05,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean for {key}: {value:?}"))),
    }
}

impl RunConfig {
    /// Apply one `key = value` assignment. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "data_dir" => self.data_dir = v.to_string(),
            "out_dir" => self.out_dir = v.to_string(),

            "model.input_len" => self.model_input_len = parse(key, v)?,
            "model.num_classes" => self.model_num_classes = parse(key, v)?,
            "model.base_filters" => self.model_base_filters = parse(key, v)?,
            "model.heads" => self.model_heads = parse(key, v)?,
            "model.dropout" => self.model_dropout = parse(key, v)?,
            "model.dilations" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 5 {
                    return Err(Error::Config(format!(
                        "model.dilations needs exactly 5 comma-separated values, got {v:?}"
                    )));
                }
                for (slot, p) in self.model_dilations.iter_mut().zip(parts) {
                    *slot = parse("model.dilations", p)?;
                }
            }
            "model.ln_eps" => self.model_ln_eps = parse(key, v)?,

            "pipeline.target_fs" => self.pipeline_target_fs = parse(key, v)?,
            "pipeline.highpass_hz" => self.pipeline_highpass_hz = parse(key, v)?,
            "pipeline.filter" => self.pipeline_filter = parse_bool(key, v)?,
            "pipeline.window_len" => self.pipeline_window_len = parse(key, v)?,
            "pipeline.window_stride" => self.pipeline_window_stride = parse(key, v)?,

            "loss.lambda" => self.loss_lambda = parse(key, v)?,
            "loss.cce_sum" => self.loss_cce_sum = parse_bool(key, v)?,

            "opt.lr" => self.opt_lr = parse(key, v)?,
            "opt.beta1" => self.opt_beta1 = parse(key, v)?,
            "opt.beta2" => self.opt_beta2 = parse(key, v)?,
            "opt.eps" => self.opt_eps = parse(key, v)?,
            "opt.decay_gamma" => self.opt_decay_gamma = parse(key, v)?,

            "train.epochs" => self.train_epochs = parse(key, v)?,
            "train.batch_size" => self.train_batch_size = parse(key, v)?,
            "train.fold" => self.train_fold = parse(key, v)?,
            "train.folds" => self.train_folds = parse(key, v)?,

            "post.min_len" => self.post_min_len = parse(key, v)?,
            "metrics.iou_thresh" => self.metrics_iou_thresh = parse(key, v)?,

            "synth.classes" => self.synth_classes = parse(key, v)?,
            "synth.records" => self.synth_records = parse(key, v)?,
            "synth.record_len" => self.synth_record_len = parse(key, v)?,
            "synth.fs" => self.synth_fs = parse(key, v)?,
            "synth.min_event" => self.synth_min_event = parse(key, v)?,
            "synth.max_event" => self.synth_max_event = parse(key, v)?,
            "synth.short_fraction" => self.synth_short_fraction = parse(key, v)?,
            "synth.noise" => self.synth_noise = parse(key, v)?,

            other => return Err(Error::Config(format!("unknown config key: {other}"))),
        }
        Ok(())
    }

    /// Parse a whole config document (`key = value` lines, `#` comments).
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`, got {line:?}", ln + 1)));
            };
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", ln + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Apply one `--set key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(Error::Config(format!("override must be key=value, got {assignment:?}")));
        };
        self.set(key, value)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_len: self.model_input_len,
            num_classes: self.model_num_classes,
            base_filters: self.model_base_filters,
            heads: self.model_heads,
            dropout: self.model_dropout,
            dilations: self.model_dilations,
            ln_eps: self.model_ln_eps,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.opt_lr,
            beta1: self.opt_beta1,
            beta2: self.opt_beta2,
            eps: self.opt_eps,
            decay_gamma: self.opt_decay_gamma,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            lambda: self.loss_lambda,
            cce_sum: self.loss_cce_sum,
            adam: self.adam_config(),
            seed: self.seed,
            min_len: self.post_min_len,
            iou_thresh: self.metrics_iou_thresh,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_classes: self.synth_classes,
            num_records: self.synth_records,
            record_len: self.synth_record_len,
            fs: self.synth_fs,
            min_event_len: self.synth_min_event,
            max_event_len: self.synth_max_event,
            short_event_fraction: self.synth_short_fraction,
            noise: self.synth_noise,
            seed: self.seed,
        }
    }
}
