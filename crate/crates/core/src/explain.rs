//! Gradient-weighted time-step attribution.
//!
//! The score is the mean pre-softmax logit of the target class over the
//! target span. Its gradient with respect to the final transposed
//! convolution's activations is average-pooled over time into per-filter
//! weights; the weighted, ReLU-rectified filter sum becomes the heatmap,
//! linearly resampled to the input length and min-max normalized to [0, 1].

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{forward, ForwardOptions, ModelConfig, ModelParams};
use crate::tensor::{Tape, Tensor};

/// Per-time-step attribution in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub values: Vec<f64>,
    pub target_class: u16,
    pub target_span: (usize, usize),
}

/// Linear-interpolation resampling of a value curve to `n_out` points.
fn resample_linear(values: &[f64], n_out: usize) -> Vec<f64> {
    let n_in = values.len();
    if n_in == n_out {
        return values.to_vec();
    }
    if n_in == 1 {
        return vec![values[0]; n_out];
    }
    let scale = (n_in - 1) as f64 / (n_out - 1).max(1) as f64;
    (0..n_out)
        .map(|i| {
            let p = i as f64 * scale;
            let lo = p.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            let frac = p - lo as f64;
            values[lo] * (1.0 - frac) + values[hi] * frac
        })
        .collect()
}

fn min_max_normalize(values: &mut [f64]) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min < 1e-300 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in values.iter_mut() {
        *v = (*v - min) / (max - min);
    }
}

pub fn gradcam(
    x: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    target_class: u16,
    target_span: (usize, usize),
) -> Result<Heatmap> {
    let (t0, t1) = target_span;
    if t0 >= t1 || t1 > cfg.input_len {
        return Err(Error::contract(
            "gradcam",
            format!("empty or out-of-range span [{t0}, {t1}) for input_len {}", cfg.input_len),
        ));
    }
    if (target_class as usize) >= cfg.num_classes {
        return Err(Error::contract(
            "gradcam",
            format!("class {target_class} out of range for {} classes", cfg.num_classes),
        ));
    }
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let acts = forward(&mut tape, x, params, cfg, ForwardOptions::default(), &mut rng)?;
    let score = tape.span_channel_mean(&acts.logits, t0, t1, target_class as usize)?;
    tape.backward(&score)?;
    let grad = tape
        .grad_of(&acts.cam_source)
        .ok_or_else(|| Error::Numeric("gradcam: no gradient reached the attribution layer".into()))?;

    let rows = acts.cam_source.shape().rows();
    let cols = acts.cam_source.shape().cols();
    let gd = grad.data();
    let ad = acts.cam_source.data();

    // per-filter weight: global average pool of the gradient over time
    let mut weight = vec![0.0; cols];
    for t in 0..rows {
        for c in 0..cols {
            weight[c] += gd[t * cols + c];
        }
    }
    for w in weight.iter_mut() {
        *w /= rows as f64;
    }

    let raw: Vec<f64> = (0..rows)
        .map(|t| {
            let s: f64 = (0..cols).map(|c| weight[c] * ad[t * cols + c]).sum();
            s.max(0.0)
        })
        .collect();

    let mut values = resample_linear(&raw, cfg.input_len);
    min_max_normalize(&mut values);
    Ok(Heatmap { values, target_class, target_span })
}

/// CSV layout: one JSON-style comment header, then `sample_index,value`
/// rows (gnuplot treats `#` lines as comments).
pub fn write_heatmap_csv(map: &Heatmap, w: &mut impl Write) -> Result<()> {
    writeln!(
        w,
        "# {{\"target_class\": {}, \"span\": [{}, {}]}}",
        map.target_class, map.target_span.0, map.target_span.1
    )?;
    writeln!(w, "sample_index,value")?;
    for (i, v) in map.values.iter().enumerate() {
        writeln!(w, "{i},{v:.9}")?;
    }
    Ok(())
}
