//! Signal preprocessing, windowing, fold assignment, and the synthetic
//! multi-rhythm generator used for desk-scale experiments.
//!
//! The preprocessing chain is fixed: resample → baseline filter → window →
//! per-window z-score.

pub mod filter;
pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use filter::Butterworth3HighPass;

/// Raw 1D signal with sampling rate and optional per-sample labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalRecord {
    pub samples: Vec<f64>,
    pub fs: f64,
    pub labels: Option<Vec<u16>>,
    pub record_id: String,
}

impl SignalRecord {
    pub fn validate(&self) -> Result<()> {
        if self.fs <= 0.0 {
            return Err(Error::Data(format!("record {}: fs must be > 0", self.record_id)));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.samples.len() {
                return Err(Error::Data(format!(
                    "record {}: {} labels for {} samples",
                    self.record_id,
                    l.len(),
                    self.samples.len()
                )));
            }
        }
        Ok(())
    }
}

/// One normalized training window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedExample {
    pub x: Vec<f64>,
    pub labels: Vec<u16>,
    pub record_id: String,
    pub start: usize,
}

/// A windowed dataset plus the label-space size.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub window_len: usize,
    pub num_classes: usize,
    pub examples: Vec<WindowedExample>,
}

impl Dataset {
    /// Per-class sample counts over the given example indices.
    pub fn label_counts(&self, indices: &[usize]) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_classes];
        for &i in indices {
            for &l in &self.examples[i].labels {
                counts[l as usize] += 1;
            }
        }
        counts
    }
}

// ── resampling ───────────────────────────────────────────────────────

/// Linear-interpolation resampling; labels follow by nearest neighbor.
pub fn resample(rec: &SignalRecord, target_fs: f64) -> Result<SignalRecord> {
    rec.validate()?;
    if target_fs <= 0.0 {
        return Err(Error::Config(format!("target_fs must be > 0, got {target_fs}")));
    }
    if rec.samples.is_empty() {
        return Err(Error::Data(format!("record {}: empty record", rec.record_id)));
    }
    if (rec.fs - target_fs).abs() < f64::EPSILON * rec.fs.max(target_fs) {
        return Ok(rec.clone());
    }
    let n_in = rec.samples.len();
    let n_out = ((n_in as f64) * target_fs / rec.fs).round() as usize;
    if n_out == 0 {
        return Err(Error::Data(format!("record {}: resamples to zero length", rec.record_id)));
    }
    let ratio = rec.fs / target_fs;
    let mut samples = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let p = i as f64 * ratio;
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        let frac = p - lo as f64;
        let lo = lo.min(n_in - 1);
        samples.push(rec.samples[lo] * (1.0 - frac) + rec.samples[hi] * frac);
    }
    let labels = rec.labels.as_ref().map(|l| {
        (0..n_out)
            .map(|i| {
                let p = (i as f64 * ratio).round() as usize;
                l[p.min(n_in - 1)]
            })
            .collect()
    });
    Ok(SignalRecord { samples, fs: target_fs, labels, record_id: rec.record_id.clone() })
}

// ── baseline filter ──────────────────────────────────────────────────

/// Zero-phase third-order Butterworth high-pass. Returns the filtered
/// record and whether the input was shorter than the 3 s warm-up (filtered
/// anyway, flagged for the caller).
pub fn baseline_filter(rec: &SignalRecord, cutoff_hz: f64) -> Result<(SignalRecord, bool)> {
    rec.validate()?;
    if rec.samples.is_empty() {
        return Err(Error::Data(format!("record {}: empty record", rec.record_id)));
    }
    let short = (rec.samples.len() as f64) < 3.0 * rec.fs;
    let hp = Butterworth3HighPass::new(cutoff_hz, rec.fs);
    let samples = hp.filtfilt(&rec.samples);
    Ok((
        SignalRecord {
            samples,
            fs: rec.fs,
            labels: rec.labels.clone(),
            record_id: rec.record_id.clone(),
        },
        short,
    ))
}

// ── normalization ────────────────────────────────────────────────────

/// Z-score with population statistics; constant segments map to zeros.
pub fn zscore(x: &[f64]) -> Vec<f64> {
    if x.len() < 2 {
        return vec![0.0; x.len()];
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

// ── windowing ────────────────────────────────────────────────────────

/// Cut a labeled record into z-scored windows. The trailing partial window
/// is dropped; an entirely too-short record yields an empty list.
pub fn window(rec: &SignalRecord, len: usize, stride: usize) -> Result<Vec<WindowedExample>> {
    rec.validate()?;
    if len == 0 || stride == 0 {
        return Err(Error::Config("window len and stride must be ≥ 1".into()));
    }
    let labels = rec
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data(format!("record {}: windowing needs labels", rec.record_id)))?;
    let mut out = Vec::new();
    if rec.samples.len() < len {
        return Ok(out);
    }
    let mut start = 0;
    while start + len <= rec.samples.len() {
        out.push(WindowedExample {
            x: zscore(&rec.samples[start..start + len]),
            labels: labels[start..start + len].to_vec(),
            record_id: rec.record_id.clone(),
            start,
        });
        start += stride;
    }
    Ok(out)
}

/// Fixed preprocessing chain: resample → (optional) baseline filter →
/// window → per-window z-score.
pub fn preprocess_record(
    rec: &SignalRecord,
    target_fs: f64,
    highpass_hz: Option<f64>,
    window_len: usize,
    stride: usize,
) -> Result<Vec<WindowedExample>> {
    let resampled = resample(rec, target_fs)?;
    let filtered = match highpass_hz {
        Some(fc) => baseline_filter(&resampled, fc)?.0,
        None => resampled,
    };
    window(&filtered, window_len, stride)
}

// ── k-fold assignment ────────────────────────────────────────────────

/// Seeded shuffle + round-robin fold assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, held_out_fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != held_out_fold).collect()
    }
}

pub fn kfold(n_examples: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("kfold needs K ≥ 2, got {k}")));
    }
    if n_examples < k {
        return Err(Error::Config(format!("kfold needs ≥ {k} examples, got {n_examples}")));
    }
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut assignments = vec![0usize; n_examples];
    for (pos, &idx) in order.iter().enumerate() {
        assignments[idx] = pos % k;
    }
    Ok(FoldPlan { k, assignments, seed })
}

// ── synthetic multi-rhythm generator ─────────────────────────────────

/// Knobs for the synthetic dataset.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub num_records: usize,
    pub record_len: usize,
    pub fs: f64,
    pub min_event_len: usize,
    pub max_event_len: usize,
    /// Fraction of events deliberately shorter than `min_event_len`
    /// (postprocess-rule fodder); 0 keeps every event at full length.
    pub short_event_fraction: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 4,
            num_records: 64,
            record_len: 2560,
            fs: 256.0,
            min_event_len: 256,
            max_event_len: 1024,
            short_event_fraction: 0.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

/// Value of one waveform family at sample `i`. Families differ in shape,
/// rate, amplitude, and baseline, and every family completes at least one
/// full signature cycle inside a minimum-length event.
fn family_value(class: usize, i: usize, fs: f64, jitter: f64) -> f64 {
    let t = i as f64 / fs;
    let g = 1.0 + 0.15 * (class / 4) as f64; // rate growth for classes ≥ 4
    let base = 0.6 * (class as f64) - 0.9;
    match class % 4 {
        // spike train: narrow periodic bumps over a soft carrier
        0 => {
            let rate = 5.0 * g;
            let phase = (t * rate).fract();
            let spike = (-((phase - 0.5) * 9.0).powi(2)).exp() * 2.2;
            base + spike + 0.2 * (2.0 * std::f64::consts::PI * 0.9 * t).sin()
        }
        // irregular oscillation: slow sine with phase jitter
        1 => {
            let f = 4.0 * g;
            base + 0.9 * (2.0 * std::f64::consts::PI * f * t + jitter).sin()
        }
        // sawtooth flutter
        2 => {
            let f = 7.0 * g;
            base + 1.2 * (2.0 * ((t * f).fract()) - 1.0)
        }
        // fast high-amplitude sine
        _ => {
            let f = 12.0 * g;
            base + 1.6 * (2.0 * std::f64::consts::PI * f * t).sin()
        }
    }
}

/// Piecewise multi-class records with per-sample labels. Event classes are
/// drawn from a balanced shuffled bag (adjacent repeats avoided), so the
/// label histogram tracks a uniform mix.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SignalRecord>> {
    if cfg.num_classes < 2 {
        return Err(Error::Config("synth needs ≥ 2 classes".into()));
    }
    if cfg.min_event_len == 0 || cfg.max_event_len < cfg.min_event_len {
        return Err(Error::Config("synth event length range is empty".into()));
    }
    if cfg.record_len < cfg.min_event_len {
        return Err(Error::Config("record_len shorter than one event".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.num_records);
    let mut bag: Vec<usize> = Vec::new();

    for r in 0..cfg.num_records {
        let mut samples = Vec::with_capacity(cfg.record_len);
        let mut labels: Vec<u16> = Vec::with_capacity(cfg.record_len);
        let mut prev_class = usize::MAX;
        while samples.len() < cfg.record_len {
            if bag.is_empty() {
                bag = (0..cfg.num_classes).collect();
                for i in (1..bag.len()).rev() {
                    let j = rng.random_range(0..=i);
                    bag.swap(i, j);
                }
            }
            // avoid an adjacent repeat when the bag allows it
            if bag.last() == Some(&prev_class) && bag.len() > 1 {
                let last = bag.len() - 1;
                bag.swap(last, last - 1);
            }
            let class = bag.pop().expect("refilled above");
            prev_class = class;

            let short = cfg.short_event_fraction > 0.0 && rng.random::<f64>() < cfg.short_event_fraction;
            let mut len = if short {
                rng.random_range((cfg.min_event_len / 4).max(1)..cfg.min_event_len)
            } else {
                rng.random_range(cfg.min_event_len..=cfg.max_event_len)
            };
            let remaining = cfg.record_len - samples.len();
            if len > remaining || remaining - len < cfg.min_event_len {
                len = remaining;
            }

            let jitter = rng.random_range(0.0..std::f64::consts::TAU);
            let start = samples.len();
            for i in 0..len {
                let clean = family_value(class, start + i, cfg.fs, jitter);
                let noise = cfg.noise * (rng.random::<f64>() * 2.0 - 1.0);
                samples.push(clean + noise);
                labels.push(class as u16);
            }
        }
        records.push(SignalRecord {
            samples,
            fs: cfg.fs,
            labels: Some(labels),
            record_id: format!("synth-{r:04}"),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests;
