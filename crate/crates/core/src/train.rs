//! Training loop and evaluation driver.
//!
//! One process owns the model; batch samples run in parallel with a private
//! tape each, and their gradient maps merge by summation in sample order, so
//! a fixed seed reproduces checkpoints byte for byte regardless of thread
//! count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::{class_weights, compound_loss_opts, one_hot, ClassWeights};
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::model::{argmax_labels, forward, init_params, ForwardOptions, ModelConfig, ModelParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::pipeline::Dataset;
use crate::postprocess::{extract_events, merge_short};
use crate::tensor::{Gradients, Shape, Tape, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    /// Raw-sum cross-entropy instead of the default per-step mean.
    pub cce_sum: bool,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Postprocess minimum event length used for the validation metric.
    pub min_len: usize,
    pub iou_thresh: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            lambda: 1.0,
            cce_sum: false,
            adam: AdamConfig::default(),
            seed: 0,
            min_len: 256,
            iou_thresh: 0.7,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_duration_f1: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_params: ModelParams,
    pub best_epoch: Option<usize>,
    pub logs: Vec<EpochLog>,
    pub weights: ClassWeights,
}

fn example_tensor(ds: &Dataset, idx: usize) -> Result<Tensor> {
    Tensor::new(Shape::d2(ds.window_len, 1), ds.examples[idx].x.clone())
}

fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the packed coordinates
    let mut z = base ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Forward + loss + backward for one window.
#[allow(clippy::too_many_arguments)]
fn sample_step(
    ds: &Dataset,
    idx: usize,
    params: &ModelParams,
    model_cfg: &ModelConfig,
    weights: &ClassWeights,
    lambda: f64,
    cce_sum: bool,
    dropout_seed: u64,
) -> Result<(f64, Gradients)> {
    let x = example_tensor(ds, idx)?;
    let labels: Vec<usize> = ds.examples[idx].labels.iter().map(|&l| l as usize).collect();
    let truth = one_hot(&labels, ds.num_classes)?;
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let opts = ForwardOptions { training: true, attach_mha: true };
    let acts = forward(&mut tape, &x, params, model_cfg, opts, &mut rng)?;
    let loss = compound_loss_opts(&mut tape, &acts.probs, &truth, weights, lambda, cce_sum)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss on window {idx}")));
    }
    let grads = tape.backward(&loss)?;
    Ok((value, grads))
}

/// Predicted events for one window: forward → argmax → short-event merge.
pub fn predict_events(
    ds: &Dataset,
    idx: usize,
    params: &ModelParams,
    model_cfg: &ModelConfig,
    min_len: usize,
) -> Result<Vec<crate::postprocess::Event>> {
    let x = example_tensor(ds, idx)?;
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let acts = forward(&mut tape, &x, params, model_cfg, ForwardOptions::default(), &mut rng)?;
    let labels: Vec<u16> = argmax_labels(&acts.probs).iter().map(|&c| c as u16).collect();
    merge_short(&extract_events(&labels), min_len)
}

/// Score a slice of the dataset against its labels.
pub fn evaluate(
    ds: &Dataset,
    indices: &[usize],
    params: &ModelParams,
    model_cfg: &ModelConfig,
    min_len: usize,
    iou_thresh: f64,
) -> Result<MetricsReport> {
    let per_window: Vec<_> = indices
        .par_iter()
        .map(|&idx| {
            let pred = predict_events(ds, idx, params, model_cfg, min_len)?;
            let truth = extract_events(&ds.examples[idx].labels);
            Ok((pred, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = MetricsAccumulator::new(iou_thresh);
    for (pred, truth) in &per_window {
        acc.add_window(pred, truth);
    }
    Ok(acc.finish())
}

/// Full training run over the given split. `on_epoch` observes each epoch
/// log and the parameters as of that epoch (checkpoint hook).
pub fn train(
    ds: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ModelParams),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    if model_cfg.input_len != ds.window_len {
        return Err(Error::Config(format!(
            "model input_len {} != dataset window_len {}",
            model_cfg.input_len, ds.window_len
        )));
    }
    if model_cfg.num_classes != ds.num_classes {
        return Err(Error::Config(format!(
            "model num_classes {} != dataset num_classes {}",
            model_cfg.num_classes, ds.num_classes
        )));
    }
    if train_idx.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be ≥ 1".into()));
    }

    let weights = class_weights(&ds.label_counts(train_idx))?;
    let mut params = init_params(model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(cfg.adam, params.set());

    let mut best_params = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order = train_idx.to_vec();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 0x51));
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<(f64, Gradients)> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &idx)| {
                    let drop_seed = derive_seed(
                        cfg.seed,
                        (epoch as u64) << 24 | (batch_no as u64),
                        pos as u64,
                    );
                    sample_step(ds, idx, &params, model_cfg, &weights, cfg.lambda, cfg.cce_sum, drop_seed)
                })
                .collect::<Result<Vec<_>>>()?;

            let mut merged = Gradients::default();
            for (value, grads) in &results {
                loss_sum += value;
                merged.merge_sum(grads)?;
            }
            merged.scale(1.0 / batch.len() as f64);
            seen += batch.len();
            adam_step(params.set_mut(), &merged, &mut adam, epoch)?;
        }

        let val_f1 = if val_idx.is_empty() {
            0.0
        } else {
            evaluate(ds, val_idx, &params, model_cfg, cfg.min_len, cfg.iou_thresh)?
                .macro_duration
                .f1
        };
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_params = params.clone();
            best_epoch = Some(epoch);
        }
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_duration_f1: val_f1,
            lr: adam.lr_at_epoch(epoch),
        };
        on_epoch(&log, &params);
        logs.push(log);
    }

    if cfg.epochs == 0 {
        best_params = params.clone();
    }
    Ok(TrainOutcome { params, best_params, best_epoch, logs, weights })
}
