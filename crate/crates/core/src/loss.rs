//! Compound class-weighted Dice + categorical cross-entropy loss.
//!
//! Class weights are inversely proportional to class frequency in the
//! training split, so rarer classes weigh more. Both loss terms are built
//! from tape primitives, so gradients come from the same reverse sweep as
//! the network.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tape, Tensor};

/// Smoothing constant added to the weighted-Dice numerator and denominator.
pub const DICE_SMOOTH: f64 = 1e-6;

/// Per-class loss weights, constant over time steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    w: Vec<f64>,
}

impl ClassWeights {
    /// Uniform weights (every class 1.0).
    pub fn uniform(n_classes: usize) -> ClassWeights {
        ClassWeights { w: vec![1.0; n_classes] }
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn num_classes(&self) -> usize {
        self.w.len()
    }
}

/// Weight per class from training-split label counts:
/// `w_j = x_tot / (n · x_j)` with `n` the class count. Classes with zero
/// count get weight 0, which drops them from the Dice sums.
pub fn class_weights(label_counts: &[u64]) -> Result<ClassWeights> {
    let n = label_counts.len();
    if n == 0 {
        return Err(Error::Config("class_weights: no classes".into()));
    }
    let x_tot: u64 = label_counts.iter().sum();
    if x_tot == 0 {
        return Err(Error::Config("class_weights: all label counts are zero".into()));
    }
    let w = label_counts
        .iter()
        .map(|&xj| if xj == 0 { 0.0 } else { x_tot as f64 / (n as f64 * xj as f64) })
        .collect();
    Ok(ClassWeights { w })
}

fn check_pair(op: &'static str, pred: &Tensor, truth: &Tensor) -> Result<(usize, usize)> {
    if pred.shape().rank() != 2 {
        return Err(Error::contract(op, format!("pred must be rank 2, got {}", pred.shape())));
    }
    if pred.shape() != truth.shape() {
        return Err(Error::shape(op, "numel", pred.numel(), truth.numel()));
    }
    Ok((pred.shape().rows(), pred.shape().cols()))
}

/// Categorical cross-entropy of a row-stochastic prediction against one-hot
/// truth. Reduced by the mean over time steps unless `sum_reduction` is set,
/// which restores the raw sum.
pub fn cce(tape: &mut Tape, pred: &Tensor, truth: &Tensor, sum_reduction: bool) -> Result<Tensor> {
    let (rows, _) = check_pair("cce", pred, truth)?;
    let logp = tape.log_clamped(pred);
    let picked = tape.mul(&logp, &truth.detach())?;
    let total = tape.sum_all(&picked);
    let scale = if sum_reduction { -1.0 } else { -1.0 / rows as f64 };
    Ok(tape.affine(&total, scale, 0.0))
}

/// Class-weighted soft Dice loss:
/// `1 − (2·ΣΣ w_j y p + s) / (ΣΣ (y + p)·w_j + s)`.
pub fn weighted_dice(tape: &mut Tape, pred: &Tensor, truth: &Tensor, w: &ClassWeights) -> Result<Tensor> {
    let (rows, cols) = check_pair("weighted_dice", pred, truth)?;
    if w.num_classes() != cols {
        return Err(Error::shape("weighted_dice", "classes", cols, w.num_classes()));
    }
    let td = truth.data();
    // constants: w_j·y_ij and the broadcast w_j row; Σ w_j y_ij folds into the
    // denominator's constant term
    let mut wy = vec![0.0; rows * cols];
    let mut wb = vec![0.0; rows * cols];
    let mut sum_wy = 0.0;
    for t in 0..rows {
        for c in 0..cols {
            let wv = w.w[c];
            wy[t * cols + c] = wv * td[t * cols + c];
            wb[t * cols + c] = wv;
            sum_wy += wv * td[t * cols + c];
        }
    }
    let wy = Tensor::new(Shape::d2(rows, cols), wy)?;
    let wb = Tensor::new(Shape::d2(rows, cols), wb)?;

    let overlap = tape.mul(pred, &wy)?;
    let overlap = tape.sum_all(&overlap);
    let num = tape.affine(&overlap, 2.0, DICE_SMOOTH);

    let wp = tape.mul(pred, &wb)?;
    let wp = tape.sum_all(&wp);
    let den = tape.affine(&wp, 1.0, sum_wy + DICE_SMOOTH);

    let ratio = tape.div_scalar(&num, &den)?;
    Ok(tape.affine(&ratio, -1.0, 1.0))
}

/// `CCE + lambda · L_WDice`, with mean-reduced cross-entropy.
pub fn compound_loss(
    tape: &mut Tape,
    pred: &Tensor,
    truth: &Tensor,
    w: &ClassWeights,
    lambda: f64,
) -> Result<Tensor> {
    compound_loss_opts(tape, pred, truth, w, lambda, false)
}

/// As [`compound_loss`]; `cce_sum` restores the raw-sum cross-entropy.
pub fn compound_loss_opts(
    tape: &mut Tape,
    pred: &Tensor,
    truth: &Tensor,
    w: &ClassWeights,
    lambda: f64,
    cce_sum: bool,
) -> Result<Tensor> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("loss lambda must be ≥ 0, got {lambda}")));
    }
    let ce = cce(tape, pred, truth, cce_sum)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let dice = weighted_dice(tape, pred, truth, w)?;
    let dice = tape.affine(&dice, lambda, 0.0);
    tape.add(&ce, &dice)
}

/// One-hot encode per-sample class ids into an `(n × classes)` tensor.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * n_classes];
    for (t, &c) in labels.iter().enumerate() {
        if c >= n_classes {
            return Err(Error::Data(format!("label {c} out of range for {n_classes} classes")));
        }
        data[t * n_classes + c] = 1.0;
    }
    Tensor::new(Shape::d2(labels.len(), n_classes), data)
}
