//! The local-global temporal fusion network.
//!
//! A five-stage encoder of TCN blocks with multiscale fusion (each followed
//! by stride-2 max pooling, plus one extra pooling), a bridge of parallel
//! dilated-convolution chains, and a five-stage decoder in which each
//! transposed-convolution output is fused additively with multihead
//! self-attention over the matching-scale encoder activation before passing
//! through another TCN block. A kernel-3 convolution and per-step softmax
//! produce one class distribution per input sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{ConvSpec, Shape, Tape, Tensor};

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct ModelConfig {
    pub input_len: usize,
    pub num_classes: usize,
    pub base_filters: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Per-stage dilation schedule, shared by encoder and decoder blocks.
    pub dilations: [usize; 5],
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 2560,
            num_classes: 10,
            base_filters: 64,
            heads: 4,
            dropout: 0.2,
            dilations: [1, 2, 4, 8, 16],
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Narrow configuration for gradient suites and desk-scale training.
    pub fn reduced() -> ModelConfig {
        ModelConfig {
            input_len: 256,
            num_classes: 4,
            base_filters: 4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || !self.input_len.is_multiple_of(64) {
            return Err(Error::Config(format!(
                "input_len must be a positive multiple of 64 (six halvings), got {}",
                self.input_len
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be ≥ 2, got {}", self.num_classes)));
        }
        if self.heads == 0 || self.base_filters == 0 {
            return Err(Error::Config("heads and base_filters must be ≥ 1".into()));
        }
        if !self.base_filters.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "base_filters ({}) must be divisible by heads ({}) at every skip scale",
                self.base_filters, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.dilations.contains(&0) {
            return Err(Error::Config("dilations must all be ≥ 1".into()));
        }
        if self.ln_eps <= 0.0 {
            return Err(Error::Config("ln_eps must be > 0".into()));
        }
        Ok(())
    }

    /// Filter count of encoder stage `i` (0-based): doubles per stage.
    fn stage_filters(&self, i: usize) -> usize {
        self.base_filters << i
    }
}

/// Channel/dilation layout of one TCN block with its fusion path.
#[derive(Clone, Copy, Debug)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub filters: usize,
    pub dilation: usize,
}

/// Complete weight set for one model plus its configuration.
#[derive(Clone, Debug)]
pub struct ModelParams {
    set: ParamSet,
}

impl ModelParams {
    pub fn set(&self) -> &ParamSet {
        &self.set
    }

    pub fn set_mut(&mut self) -> &mut ParamSet {
        &mut self.set
    }

    pub fn from_set(set: ParamSet) -> ModelParams {
        ModelParams { set }
    }

    pub fn total_scalars(&self) -> usize {
        self.set.total_scalars()
    }
}

// ── parameter paths ──────────────────────────────────────────────────

struct BlockPaths {
    prefix: String,
}

impl BlockPaths {
    fn new(prefix: impl Into<String>) -> BlockPaths {
        BlockPaths { prefix: prefix.into() }
    }

    fn p(&self, rest: &str) -> String {
        format!("{}.{rest}", self.prefix)
    }
}

const TCN_KERNEL: usize = 3;
const TIF_KERNEL: usize = 10;

/// Scalar parameter count of the default configuration, frozen as a golden
/// value (also derivable by summing the layer shapes by hand).
pub const PARAM_COUNT_DEFAULT: usize = 127_856_074;

/// Uniform init with fan-in scaling: `U(−√(1/fan_in), √(1/fan_in))`.
fn conv_init(rng: &mut ChaCha8Rng, k: usize, cin: usize, cout: usize) -> Tensor {
    let bound = (1.0 / (k * cin) as f64).sqrt();
    let data = (0..k * cin * cout).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(Shape::d3(k, cin, cout), data).expect("sized data")
}

fn mat_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (1.0 / rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(Shape::d2(rows, cols), data).expect("sized data")
}

pub(crate) fn init_block(set: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, spec: BlockSpec) -> Result<()> {
    let bp = BlockPaths::new(prefix);
    let (cin, f) = (spec.in_channels, spec.filters);
    set.push(bp.p("tcn.conv1.w"), conv_init(rng, TCN_KERNEL, cin, f))?;
    set.push(bp.p("tcn.conv1.b"), Tensor::zeros(Shape::d1(f)))?;
    set.push(bp.p("tcn.norm1.g"), Tensor::new(Shape::d1(f), vec![1.0; f])?)?;
    set.push(bp.p("tcn.norm1.b"), Tensor::zeros(Shape::d1(f)))?;
    set.push(bp.p("tcn.conv2.w"), conv_init(rng, TCN_KERNEL, f, f))?;
    set.push(bp.p("tcn.conv2.b"), Tensor::zeros(Shape::d1(f)))?;
    set.push(bp.p("tcn.norm2.g"), Tensor::new(Shape::d1(f), vec![1.0; f])?)?;
    set.push(bp.p("tcn.norm2.b"), Tensor::zeros(Shape::d1(f)))?;
    if cin != f {
        set.push(bp.p("tcn.proj.w"), conv_init(rng, 1, cin, f))?;
        set.push(bp.p("tcn.proj.b"), Tensor::zeros(Shape::d1(f)))?;
    }
    set.push(bp.p("tif.conv1.w"), conv_init(rng, TIF_KERNEL, cin, f))?;
    set.push(bp.p("tif.conv1.b"), Tensor::zeros(Shape::d1(f)))?;
    set.push(bp.p("tif.conv2.w"), conv_init(rng, TIF_KERNEL, f, f))?;
    set.push(bp.p("tif.conv2.b"), Tensor::zeros(Shape::d1(f)))?;
    set.push(bp.p("tif.conv3.w"), conv_init(rng, TIF_KERNEL, f, f))?;
    set.push(bp.p("tif.conv3.b"), Tensor::zeros(Shape::d1(f)))?;
    set.push(bp.p("tif.point.w"), conv_init(rng, 1, 2 * f, f))?;
    set.push(bp.p("tif.point.b"), Tensor::zeros(Shape::d1(f)))?;
    Ok(())
}

/// Dilation chains of the bridge paths.
const BRIDGE_PATHS: [&[usize]; 4] = [&[1, 2, 4, 8], &[1, 2, 4], &[1, 2], &[1]];
const BRIDGE_KERNEL: usize = 2;

fn up_channels(cfg: &ModelConfig) -> [(usize, usize); 6] {
    let b = cfg.base_filters;
    [
        (16 * b, 16 * b),
        (16 * b, 8 * b),
        (8 * b, 4 * b),
        (4 * b, 2 * b),
        (2 * b, b),
        (b, b),
    ]
}

/// Seeded parameter initialization: conv weights fan-in-scaled uniform,
/// layer-norm gain 1 / bias 0, attention projections fan-in-scaled uniform.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut set = ParamSet::new();

    for i in 0..5 {
        let spec = BlockSpec {
            in_channels: if i == 0 { 1 } else { cfg.stage_filters(i - 1) },
            filters: cfg.stage_filters(i),
            dilation: cfg.dilations[i],
        };
        init_block(&mut set, rng, &format!("enc.{i}"), spec)?;
    }

    let bc = 16 * cfg.base_filters;
    for (p, rates) in BRIDGE_PATHS.iter().enumerate() {
        for j in 0..rates.len() {
            set.push(format!("bridge.p{p}.c{j}.w"), conv_init(rng, BRIDGE_KERNEL, bc, bc))?;
            set.push(format!("bridge.p{p}.c{j}.b"), Tensor::zeros(Shape::d1(bc)))?;
        }
    }

    for (i, (cin, cout)) in up_channels(cfg).into_iter().enumerate() {
        set.push(format!("up.{i}.w"), conv_init(rng, 2, cin, cout))?;
        set.push(format!("up.{i}.b"), Tensor::zeros(Shape::d1(cout)))?;
    }

    for i in 0..5 {
        let d = up_channels(cfg)[i].1;
        let dk = d / cfg.heads;
        for h in 0..cfg.heads {
            set.push(format!("mha.{i}.h{h}.wq"), mat_init(rng, d, dk))?;
            set.push(format!("mha.{i}.h{h}.wk"), mat_init(rng, d, dk))?;
            set.push(format!("mha.{i}.h{h}.wv"), mat_init(rng, d, dk))?;
        }
        set.push(format!("mha.{i}.wo"), mat_init(rng, d, d))?;
    }

    for i in 0..5 {
        let f = cfg.stage_filters(4 - i);
        let spec = BlockSpec { in_channels: f, filters: f, dilation: cfg.dilations[i] };
        init_block(&mut set, rng, &format!("dec.{i}"), spec)?;
    }

    set.push("head.w", conv_init(rng, TCN_KERNEL, cfg.base_filters, cfg.num_classes))?;
    set.push("head.b", Tensor::zeros(Shape::d1(cfg.num_classes)))?;

    Ok(ModelParams { set })
}

// ── forward pieces ───────────────────────────────────────────────────

fn bind(tape: &mut Tape, params: &ParamSet, path: &str) -> Result<Tensor> {
    tape.param(path, params.get(path)?)
}

/// One TCN block with its multiscale fusion path. The TCN side runs two
/// causal conv → layer-norm → ReLU → dropout stages plus a residual (1×1
/// projection on channel change); the fusion side chains three kernel-10
/// centered convolutions and pointwise-mixes the second and third. The two
/// sides are summed.
#[allow(clippy::too_many_arguments)]
pub fn tcn_tif_block<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Tensor,
    params: &ParamSet,
    prefix: &str,
    spec: BlockSpec,
    dropout: f64,
    ln_eps: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    if x.shape().cols() != spec.in_channels {
        return Err(Error::shape("tcn_tif_block", "channels", spec.in_channels, x.shape().cols()));
    }
    let bp = BlockPaths::new(prefix);
    let f = spec.filters;
    let causal = ConvSpec::causal(TCN_KERNEL, spec.dilation, f);

    let w1 = bind(tape, params, &bp.p("tcn.conv1.w"))?;
    let b1 = bind(tape, params, &bp.p("tcn.conv1.b"))?;
    let g1 = bind(tape, params, &bp.p("tcn.norm1.g"))?;
    let n1 = bind(tape, params, &bp.p("tcn.norm1.b"))?;
    let w2 = bind(tape, params, &bp.p("tcn.conv2.w"))?;
    let b2 = bind(tape, params, &bp.p("tcn.conv2.b"))?;
    let g2 = bind(tape, params, &bp.p("tcn.norm2.g"))?;
    let n2 = bind(tape, params, &bp.p("tcn.norm2.b"))?;

    let mut h = tape.conv1d(x, &w1, &b1, &causal)?;
    h = tape.layer_norm(&h, &g1, &n1, ln_eps)?;
    h = tape.relu(&h);
    if training {
        h = tape.dropout(&h, dropout, rng)?;
    }
    h = tape.conv1d(&h, &w2, &b2, &causal)?;
    h = tape.layer_norm(&h, &g2, &n2, ln_eps)?;
    h = tape.relu(&h);
    if training {
        h = tape.dropout(&h, dropout, rng)?;
    }

    let residual = if spec.in_channels == f {
        x.clone()
    } else {
        let pw = bind(tape, params, &bp.p("tcn.proj.w"))?;
        let pb = bind(tape, params, &bp.p("tcn.proj.b"))?;
        tape.conv1d(x, &pw, &pb, &ConvSpec::causal(1, 1, f))?
    };
    let tcn = tape.add(&h, &residual)?;

    let same = ConvSpec::same(TIF_KERNEL, f);
    let t1w = bind(tape, params, &bp.p("tif.conv1.w"))?;
    let t1b = bind(tape, params, &bp.p("tif.conv1.b"))?;
    let t2w = bind(tape, params, &bp.p("tif.conv2.w"))?;
    let t2b = bind(tape, params, &bp.p("tif.conv2.b"))?;
    let t3w = bind(tape, params, &bp.p("tif.conv3.w"))?;
    let t3b = bind(tape, params, &bp.p("tif.conv3.b"))?;
    let pw = bind(tape, params, &bp.p("tif.point.w"))?;
    let pb = bind(tape, params, &bp.p("tif.point.b"))?;

    let c1 = tape.conv1d(x, &t1w, &t1b, &same)?;
    let c2 = tape.conv1d(&c1, &t2w, &t2b, &same)?;
    let c3 = tape.conv1d(&c2, &t3w, &t3b, &same)?;
    let cat = tape.concat_channels(&[&c2, &c3])?;
    let tif = tape.conv1d(&cat, &pw, &pb, &ConvSpec::same(1, f))?;

    tape.add(&tcn, &tif)
}

/// Multihead self-attention with Q = K = V = `x`, plus the per-head
/// attention matrices (each row sums to 1).
pub fn mha_with_attention(
    tape: &mut Tape,
    x: &Tensor,
    params: &ParamSet,
    prefix: &str,
    heads: usize,
) -> Result<(Tensor, Vec<Tensor>)> {
    let d = x.shape().cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("mha: width {d} not divisible by {heads} heads")));
    }
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    let mut attns = Vec::with_capacity(heads);
    for h in 0..heads {
        let wq = bind(tape, params, &format!("{prefix}.h{h}.wq"))?;
        let wk = bind(tape, params, &format!("{prefix}.h{h}.wk"))?;
        let wv = bind(tape, params, &format!("{prefix}.h{h}.wv"))?;
        let q = tape.matmul(x, &wq)?;
        let k = tape.matmul(x, &wk)?;
        let v = tape.matmul(x, &wv)?;
        let scores = tape.matmul_nt(&q, &k)?;
        let scores = tape.affine(&scores, scale, 0.0);
        let attn = tape.softmax_channels(&scores)?;
        outputs.push(tape.matmul(&attn, &v)?);
        attns.push(attn);
    }
    let refs: Vec<&Tensor> = outputs.iter().collect();
    let cat = tape.concat_channels(&refs)?;
    let wo = bind(tape, params, &format!("{prefix}.wo"))?;
    Ok((tape.matmul(&cat, &wo)?, attns))
}

pub fn mha(tape: &mut Tape, x: &Tensor, params: &ParamSet, prefix: &str, heads: usize) -> Result<Tensor> {
    Ok(mha_with_attention(tape, x, params, prefix, heads)?.0)
}

/// Bridge: the encoder tail plus four parallel chains of causal kernel-2
/// dilated convolutions (rates 1·2·4·8, 1·2·4, 1·2, 1) summed residually.
pub fn bridge(tape: &mut Tape, x: &Tensor, params: &ParamSet, channels: usize) -> Result<Tensor> {
    if x.shape().cols() != channels {
        return Err(Error::shape("bridge", "channels", channels, x.shape().cols()));
    }
    let mut out = x.clone();
    for (p, rates) in BRIDGE_PATHS.iter().enumerate() {
        let mut h = x.clone();
        for (j, &rate) in rates.iter().enumerate() {
            if j > 0 {
                h = tape.relu(&h);
            }
            let w = bind(tape, params, &format!("bridge.p{p}.c{j}.w"))?;
            let b = bind(tape, params, &format!("bridge.p{p}.c{j}.b"))?;
            h = tape.conv1d(&h, &w, &b, &ConvSpec::causal(BRIDGE_KERNEL, rate, channels))?;
        }
        out = tape.add(&out, &h)?;
    }
    Ok(out)
}

/// Forward-pass switches.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    pub training: bool,
    /// When false the attention skip fusion is skipped entirely (test hook
    /// for verifying the fusion is purely additive).
    pub attach_mha: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions { training: false, attach_mha: true }
    }
}

/// Everything a caller may need after one forward pass.
pub struct Activations {
    /// Row-stochastic `(time × classes)` output.
    pub probs: Tensor,
    /// Pre-softmax `(time × classes)` scores.
    pub logits: Tensor,
    /// Output of the final transposed convolution (the attribution target).
    pub cam_source: Tensor,
    /// Named output shape of every layer, in execution order.
    pub layer_shapes: Vec<(String, Shape)>,
}

/// Full forward pass, recording on `tape`.
pub fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<Activations> {
    cfg.validate()?;
    if x.shape().rank() != 2 || x.shape().cols() != 1 {
        return Err(Error::shape("forward", "channels", 1, x.shape().cols()));
    }
    if x.shape().rows() != cfg.input_len {
        return Err(Error::shape("forward", "time", cfg.input_len, x.shape().rows()));
    }
    if !x.is_finite() {
        return Err(Error::Numeric("forward: non-finite values in input".into()));
    }
    let set = &params.set;
    let mut shapes: Vec<(String, Shape)> = vec![("input".into(), x.shape())];

    // encoder: 5 × (block, pool), keeping each pooled activation for the skips
    let mut h = x.clone();
    let mut skips: Vec<Tensor> = Vec::with_capacity(5);
    for i in 0..5 {
        let spec = BlockSpec {
            in_channels: if i == 0 { 1 } else { cfg.stage_filters(i - 1) },
            filters: cfg.stage_filters(i),
            dilation: cfg.dilations[i],
        };
        h = tcn_tif_block(
            tape,
            &h,
            set,
            &format!("enc.{i}"),
            spec,
            cfg.dropout,
            cfg.ln_eps,
            opts.training,
            rng,
        )?;
        shapes.push((format!("enc.block{}", i + 1), h.shape()));
        let (pooled, _) = tape.max_pool2(&h)?;
        h = pooled;
        shapes.push((format!("enc.pool{}", i + 1), h.shape()));
        skips.push(h.clone());
    }
    let (tail, _) = tape.max_pool2(&h)?;
    h = tail;
    shapes.push(("enc.pool6".into(), h.shape()));

    h = bridge(tape, &h, set, 16 * cfg.base_filters)?;
    shapes.push(("bridge".into(), h.shape()));

    // decoder: 5 × (transposed conv + ReLU, attention fusion, block)
    for i in 0..5 {
        let w = bind(tape, set, &format!("up.{i}.w"))?;
        let b = bind(tape, set, &format!("up.{i}.b"))?;
        h = tape.conv1d_transpose(&h, &w, &b, 2)?;
        h = tape.relu(&h);
        shapes.push((format!("dec.up{}", i + 1), h.shape()));

        if opts.attach_mha {
            let skip = &skips[4 - i];
            let m = mha(tape, skip, set, &format!("mha.{i}"), cfg.heads)?;
            h = tape.add(&h, &m)?;
        }
        shapes.push((format!("dec.fuse{}", i + 1), h.shape()));

        let f = cfg.stage_filters(4 - i);
        let spec = BlockSpec { in_channels: f, filters: f, dilation: cfg.dilations[i] };
        h = tcn_tif_block(
            tape,
            &h,
            set,
            &format!("dec.{i}"),
            spec,
            cfg.dropout,
            cfg.ln_eps,
            opts.training,
            rng,
        )?;
        shapes.push((format!("dec.block{}", i + 1), h.shape()));
    }

    let w = bind(tape, set, "up.5.w")?;
    let b = bind(tape, set, "up.5.b")?;
    h = tape.conv1d_transpose(&h, &w, &b, 2)?;
    h = tape.relu(&h);
    shapes.push(("dec.up6".into(), h.shape()));
    let cam_source = h.clone();

    let hw = bind(tape, set, "head.w")?;
    let hb = bind(tape, set, "head.b")?;
    let logits = tape.conv1d(&h, &hw, &hb, &ConvSpec::causal(TCN_KERNEL, 1, cfg.num_classes))?;
    shapes.push(("head".into(), logits.shape()));
    let probs = tape.softmax_channels(&logits)?;

    Ok(Activations { probs, logits, cam_source, layer_shapes: shapes })
}

/// Inference-mode forward pass (no dropout; attention fusion as usual).
pub fn infer_forward(tape: &mut Tape, x: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Activations> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    forward(tape, x, params, cfg, ForwardOptions::default(), &mut rng)
}

/// Per-sample argmax over the class axis.
pub fn argmax_labels(probs: &Tensor) -> Vec<usize> {
    let cols = probs.shape().cols();
    let rows = probs.shape().rows();
    let d = probs.data();
    (0..rows)
        .map(|t| {
            let row = &d[t * cols..(t + 1) * cols];
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
