//! End-to-end gradient verification: tape gradients of the compound loss
//! against central finite differences through the whole network.
//!
//! Runs on the reduced-width configuration by default; the probed parameter
//! list deliberately spans every block type (TCN convolutions, fusion
//! pointwise mixes, attention projections, bridge chains, transposed
//! convolutions, normalization, head).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::{class_weights, compound_loss, one_hot, ClassWeights};
use crate::model::{forward, init_params, ForwardOptions, ModelConfig, ModelParams};
use crate::params::ParamSet;
use crate::tensor::{Shape, Tape, Tensor};

// Step small enough that ReLU/pool units do not change state across the
// probe span; Richardson extrapolation below removes the h² truncation the
// layer-norm curvature would otherwise leave.
const FD_STEP: f64 = 1e-6;

// Denominator floor: coordinates with near-zero gradient are held to an
// absolute tolerance of tol·1e-4 instead of a meaningless ratio against
// finite-difference noise.
const REL_FLOOR: f64 = 1e-4;

/// Parameter paths probed by the suite, one coordinate each.
const PROBED_PATHS: &[&str] = &[
    "enc.0.tcn.conv1.w",
    "enc.0.tif.conv1.w",
    "enc.1.tcn.conv2.w",
    "enc.1.tif.point.w",
    "enc.2.tcn.norm1.g",
    "enc.2.tif.conv2.w",
    "enc.3.tcn.proj.w",
    "enc.3.tcn.conv1.b",
    "enc.4.tcn.conv2.w",
    "enc.4.tif.conv3.w",
    "bridge.p0.c3.w",
    "bridge.p1.c0.w",
    "bridge.p3.c0.b",
    "up.0.w",
    "up.2.w",
    "up.5.w",
    "up.1.b",
    "mha.0.h0.wq",
    "mha.1.h1.wk",
    "mha.2.h0.wv",
    "mha.3.h2.wv",
    "mha.4.wo",
    "dec.0.tcn.conv1.w",
    "dec.1.tif.conv2.w",
    "dec.2.tif.point.w",
    "dec.4.tcn.norm2.b",
    "head.w",
    "head.b",
];

#[derive(Clone, Debug)]
pub struct GradcheckEntry {
    pub path: String,
    pub coord: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn loss_for(
    set: &ParamSet,
    cfg: &ModelConfig,
    x: &Tensor,
    truth: &Tensor,
    weights: &ClassWeights,
) -> Result<(Tape, Tensor)> {
    let mut tape = Tape::new();
    let params = ModelParams::from_set(set.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let acts = forward(&mut tape, x, &params, cfg, ForwardOptions::default(), &mut rng)?;
    let loss = compound_loss(&mut tape, &acts.probs, truth, weights, 1.0)?;
    Ok((tape, loss))
}

/// Run the suite: one analytic backward pass, then two forwards per probed
/// coordinate for the central difference.
pub fn run(cfg: &ModelConfig, seed: u64) -> Result<GradcheckReport> {
    cfg.validate()?;
    let params = init_params(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let x = Tensor::new(
        Shape::d2(cfg.input_len, 1),
        (0..cfg.input_len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let labels: Vec<usize> = (0..cfg.input_len).map(|_| rng.random_range(0..cfg.num_classes)).collect();
    let truth = one_hot(&labels, cfg.num_classes)?;
    let mut counts = vec![0u64; cfg.num_classes];
    for &l in &labels {
        counts[l] += 1;
    }
    let weights = class_weights(&counts)?;

    let (mut tape, loss) = loss_for(params.set(), cfg, &x, &truth, &weights)?;
    let grads = tape.backward(&loss)?;

    let mut entries = Vec::with_capacity(PROBED_PATHS.len());
    let mut max_rel_err: f64 = 0.0;
    for path in PROBED_PATHS {
        let tensor = params.set().get(path)?;
        let coord = rng.random_range(0..tensor.numel());
        let analytic = grads.get(path).expect("registered param").data()[coord];

        // Richardson-extrapolated central difference: cancels the h² term,
        // which otherwise dominates through the layer-norm 1/σ curvature.
        let eval = |delta: f64| -> Result<f64> {
            let shifted = params.set().perturbed(path, coord, delta)?;
            Ok(loss_for(&shifted, cfg, &x, &truth, &weights)?.1.item())
        };
        let d_h = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
        let d_h2 = (eval(FD_STEP / 2.0)? - eval(-FD_STEP / 2.0)?) / FD_STEP;
        let fd = (4.0 * d_h2 - d_h) / 3.0;

        let err = rel_err(analytic, fd);
        max_rel_err = max_rel_err.max(err);
        entries.push(GradcheckEntry { path: path.to_string(), coord, analytic, fd, rel_err: err });
    }
    Ok(GradcheckReport { entries, max_rel_err })
}
