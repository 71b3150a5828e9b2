//! Operation tape and reverse-mode gradients.
//!
//! Every layer primitive is a method on [`Tape`]: it computes the forward
//! value and records a node holding whatever the backward pass will need.
//! Nodes are appended in execution order, so node ids are already a
//! topological order and the backward pass is a single reverse sweep that
//! visits each node exactly once.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, PaddingMode, Shape, Tensor};

/// Index of a node on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId(usize);

/// Input captured by an op: the node to route gradient to (if any) plus the
/// forward values, which backward may need even for detached inputs.
#[derive(Clone)]
struct SavedIn {
    id: Option<NodeId>,
    data: Arc<Vec<f64>>,
}

impl SavedIn {
    fn of(t: &Tensor) -> SavedIn {
        SavedIn { id: t.node(), data: t.storage() }
    }
}

enum Op {
    Leaf,
    Conv1d {
        x: SavedIn,
        w: SavedIn,
        b_id: Option<NodeId>,
        spec: ConvSpec,
        in_rows: usize,
        in_cols: usize,
    },
    ConvT1d {
        x: SavedIn,
        w: SavedIn,
        b_id: Option<NodeId>,
        stride: usize,
        in_rows: usize,
        in_cols: usize,
    },
    MaxPool2 {
        x_id: Option<NodeId>,
        // flat input index chosen per output element
        choice: Vec<u32>,
        in_numel: usize,
    },
    LayerNorm {
        x_id: Option<NodeId>,
        gain: SavedIn,
        b_id: Option<NodeId>,
        xhat: Arc<Vec<f64>>,
        inv_std: Vec<f64>,
        cols: usize,
    },
    Relu {
        x_id: Option<NodeId>,
        out: Arc<Vec<f64>>,
    },
    SoftmaxCh {
        x_id: Option<NodeId>,
        out: Arc<Vec<f64>>,
        cols: usize,
    },
    Dropout {
        x_id: Option<NodeId>,
        // mask values are 0 or 1/(1−rate); out = x ⊙ mask
        mask: Arc<Vec<f64>>,
    },
    Add {
        a_id: Option<NodeId>,
        b_id: Option<NodeId>,
    },
    Mul {
        a: SavedIn,
        b: SavedIn,
    },
    Concat {
        parts: Vec<(Option<NodeId>, usize)>,
        rows: usize,
    },
    Matmul {
        a: SavedIn,
        b: SavedIn,
        m: usize,
        k: usize,
        n: usize,
    },
    MatmulNt {
        a: SavedIn,
        b: SavedIn,
        m: usize,
        k: usize,
        n: usize,
    },
    Affine {
        x_id: Option<NodeId>,
        a: f64,
    },
    LogClamped {
        x_id: Option<NodeId>,
        x: Arc<Vec<f64>>,
    },
    SumAll {
        x_id: Option<NodeId>,
        n: usize,
    },
    DivScalar {
        num: SavedIn,
        den: SavedIn,
    },
    SpanChannelMean {
        x_id: Option<NodeId>,
        t0: usize,
        t1: usize,
        channel: usize,
        rows: usize,
        cols: usize,
    },
}

struct Node {
    op: Op,
    out_shape: Shape,
}

/// Lower clamp applied to probabilities before `log`.
pub const LOG_CLAMP_LO: f64 = 1e-12;

/// Gradients keyed by parameter path, as returned by [`Tape::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: HashMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.map.get(path)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Sum another gradient map into this one. Paths are independent, so the
    /// result does not depend on map iteration order; callers that merge many
    /// maps must still do so in a fixed sequence for bit-level determinism.
    pub fn merge_sum(&mut self, other: &Gradients) -> Result<()> {
        for (path, g) in &other.map {
            match self.map.get_mut(path) {
                Some(mine) => {
                    if mine.shape() != g.shape() {
                        return Err(Error::shape("Gradients::merge_sum", "numel", mine.numel(), g.numel()));
                    }
                    let sum: Vec<f64> =
                        mine.data().iter().zip(g.data().iter()).map(|(a, b)| a + b).collect();
                    *mine = Tensor::new(mine.shape(), sum)?;
                }
                None => {
                    self.map.insert(path.clone(), g.detach());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.map.values_mut() {
            let scaled: Vec<f64> = g.data().iter().map(|v| v * c).collect();
            *g = Tensor::new(g.shape(), scaled).expect("shape unchanged");
        }
    }

    pub fn has_non_finite(&self) -> Option<&str> {
        self.map
            .iter()
            .find(|(_, g)| !g.is_finite())
            .map(|(path, _)| path.as_str())
    }
}

/// Records ops for one forward pass; [`Tape::backward`] replays them in
/// reverse. One tape per training step; tapes are not shared across threads.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
    node_grads: Vec<Option<Vec<f64>>>,
    ran_backward: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new(), params: Vec::new(), node_grads: Vec::new(), ran_backward: false }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op, out_shape: Shape, data: Vec<f64>) -> Tensor {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, out_shape });
        Tensor::from_op(out_shape, data, id)
    }

    /// Register a named parameter leaf. Its gradient appears in the backward
    /// result under `path` (zeros if the loss never reaches it).
    pub fn param(&mut self, path: &str, t: &Tensor) -> Result<Tensor> {
        if self.params.iter().any(|(p, _)| p == path) {
            return Err(Error::contract("Tape::param", format!("path registered twice: {path}")));
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op: Op::Leaf, out_shape: t.shape() });
        self.params.push((path.to_string(), id));
        Ok(t.with_node(id))
    }

    /// Register an anonymous gradient-tracked leaf (an input whose gradient
    /// is queried with [`Tape::grad_of`] rather than by path).
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op: Op::Leaf, out_shape: t.shape() });
        t.with_node(id)
    }

    // ── convolution ──────────────────────────────────────────────────

    /// Dilated 1D convolution. `x` is `(time × in_channels)`, `w` is
    /// `(kernel × in_channels × out_channels)`, `b` is `(out_channels)`.
    pub fn conv1d(&mut self, x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
        spec.validate()?;
        let (rows, cols) = require_rank2("conv1d", x)?;
        if w.shape().rank() != 3 {
            return Err(Error::contract("conv1d", format!("weight must be rank 3, got {}", w.shape())));
        }
        let wshape = w.shape();
        let wd = wshape.dims();
        if wd[0] != spec.kernel_size {
            return Err(Error::shape("conv1d", "kernel", spec.kernel_size, wd[0]));
        }
        if wd[1] != cols {
            return Err(Error::shape("conv1d", "in_channels", wd[1], cols));
        }
        if wd[2] != spec.out_channels {
            return Err(Error::shape("conv1d", "out_channels", spec.out_channels, wd[2]));
        }
        if b.numel() != spec.out_channels {
            return Err(Error::shape("conv1d", "bias", spec.out_channels, b.numel()));
        }
        let out_rows = spec.out_len(rows);
        if out_rows == 0 {
            return Err(Error::contract("conv1d", format!("input too short for kernel: {rows} samples")));
        }
        let cout = spec.out_channels;
        let mut out = vec![0.0; out_rows * cout];
        let xd = x.data();
        let wdat = w.data();
        let bd = b.data();
        for t in 0..out_rows {
            let orow = &mut out[t * cout..(t + 1) * cout];
            orow.copy_from_slice(bd);
            for i in 0..spec.kernel_size {
                let Some(src) = tap_index(spec, rows, t, i) else { continue };
                let xrow = &xd[src * cols..(src + 1) * cols];
                for (ci, &xv) in xrow.iter().enumerate() {
                    let wrow = &wdat[(i * cols + ci) * cout..(i * cols + ci + 1) * cout];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let op = Op::Conv1d {
            x: SavedIn::of(x),
            w: SavedIn::of(w),
            b_id: b.node(),
            spec: *spec,
            in_rows: rows,
            in_cols: cols,
        };
        Ok(self.push(op, Shape::d2(out_rows, cout), out))
    }

    /// Transposed convolution with `stride == kernel_size`: every input step
    /// emits `kernel_size` consecutive output steps scaled by the kernel.
    pub fn conv1d_transpose(&mut self, x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
        let (rows, cols) = require_rank2("conv1d_transpose", x)?;
        if w.shape().rank() != 3 {
            return Err(Error::contract(
                "conv1d_transpose",
                format!("weight must be rank 3, got {}", w.shape()),
            ));
        }
        let wshape = w.shape();
        let wd = wshape.dims();
        let (k, cout) = (wd[0], wd[2]);
        if k != stride {
            return Err(Error::Unsupported(format!(
                "conv1d_transpose requires stride = kernel_size (got stride {stride}, kernel {k})"
            )));
        }
        if wd[1] != cols {
            return Err(Error::shape("conv1d_transpose", "in_channels", wd[1], cols));
        }
        if b.numel() != cout {
            return Err(Error::shape("conv1d_transpose", "bias", cout, b.numel()));
        }
        let out_rows = rows * stride;
        let mut out = vec![0.0; out_rows * cout];
        let xd = x.data();
        let wdat = w.data();
        let bd = b.data();
        for t in 0..rows {
            let xrow = &xd[t * cols..(t + 1) * cols];
            for j in 0..k {
                let orow = &mut out[(t * stride + j) * cout..(t * stride + j + 1) * cout];
                orow.copy_from_slice(bd);
                for (ci, &xv) in xrow.iter().enumerate() {
                    let wrow = &wdat[(j * cols + ci) * cout..(j * cols + ci + 1) * cout];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let op = Op::ConvT1d {
            x: SavedIn::of(x),
            w: SavedIn::of(w),
            b_id: b.node(),
            stride,
            in_rows: rows,
            in_cols: cols,
        };
        Ok(self.push(op, Shape::d2(out_rows, cout), out))
    }

    // ── pooling, normalization, activations ──────────────────────────

    /// Stride-2 max pooling over time. Odd inputs replicate the final sample;
    /// the returned flag reports whether that padding happened.
    pub fn max_pool2(&mut self, x: &Tensor) -> Result<(Tensor, bool)> {
        let (rows, cols) = require_rank2("max_pool2", x)?;
        let padded = rows % 2 == 1;
        let out_rows = rows.div_ceil(2);
        let xd = x.data();
        let mut out = vec![0.0; out_rows * cols];
        let mut choice = vec![0u32; out_rows * cols];
        for t in 0..out_rows {
            let t0 = 2 * t;
            let t1 = (2 * t + 1).min(rows - 1);
            for c in 0..cols {
                let a = xd[t0 * cols + c];
                let b = xd[t1 * cols + c];
                // ties keep the earlier sample
                let (v, src) = if b > a { (b, t1) } else { (a, t0) };
                out[t * cols + c] = v;
                choice[t * cols + c] = (src * cols + c) as u32;
            }
        }
        let op = Op::MaxPool2 { x_id: x.node(), choice, in_numel: rows * cols };
        Ok((self.push(op, Shape::d2(out_rows, cols), out), padded))
    }

    /// Per-time-step layer normalization over channels, then affine.
    pub fn layer_norm(&mut self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (rows, cols) = require_rank2("layer_norm", x)?;
        if gain.numel() != cols {
            return Err(Error::shape("layer_norm", "gain", cols, gain.numel()));
        }
        if bias.numel() != cols {
            return Err(Error::shape("layer_norm", "bias", cols, bias.numel()));
        }
        if eps <= 0.0 {
            return Err(Error::contract("layer_norm", "eps must be > 0"));
        }
        let xd = x.data();
        let gd = gain.data();
        let bd = bias.data();
        let mut out = vec![0.0; rows * cols];
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let n = cols as f64;
        for t in 0..rows {
            let row = &xd[t * cols..(t + 1) * cols];
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[t] = is;
            for c in 0..cols {
                let xh = (row[c] - mean) * is;
                xhat[t * cols + c] = xh;
                out[t * cols + c] = gd[c] * xh + bd[c];
            }
        }
        let op = Op::LayerNorm {
            x_id: x.node(),
            gain: SavedIn::of(gain),
            b_id: bias.node(),
            xhat: Arc::new(xhat),
            inv_std,
            cols,
        };
        Ok(self.push(op, Shape::d2(rows, cols), out))
    }

    pub fn relu(&mut self, x: &Tensor) -> Tensor {
        let out: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = x.shape();
        let id = NodeId(self.nodes.len());
        let out_arc = Arc::new(out);
        self.nodes.push(Node {
            op: Op::Relu { x_id: x.node(), out: Arc::clone(&out_arc) },
            out_shape: shape,
        });
        Tensor::from_arc(shape, out_arc, id)
    }

    /// Row softmax over the channel axis; each output row sums to 1.
    pub fn softmax_channels(&mut self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = require_rank2("softmax_channels", x)?;
        let xd = x.data();
        let mut out = vec![0.0; rows * cols];
        for t in 0..rows {
            let row = &xd[t * cols..(t + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[t * cols..(t + 1) * cols];
            let mut sum = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                let e = (v - max).exp();
                *o = e;
                sum += e;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let shape = Shape::d2(rows, cols);
        let id = NodeId(self.nodes.len());
        let out_arc = Arc::new(out);
        self.nodes.push(Node {
            op: Op::SoftmaxCh { x_id: x.node(), out: Arc::clone(&out_arc), cols },
            out_shape: shape,
        });
        Ok(Tensor::from_arc(shape, out_arc, id))
    }

    /// Inverted dropout: surviving units scale by 1/(1−rate) so the
    /// expectation is preserved. `rate == 0` returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: &Tensor, rate: f64, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if rate == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let out: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let op = Op::Dropout { x_id: x.node(), mask: Arc::new(mask) };
        Ok(self.push(op, x.shape(), out))
    }

    // ── arithmetic ───────────────────────────────────────────────────

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape("add", "numel", a.numel(), b.numel()));
        }
        let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        Ok(self.push(Op::Add { a_id: a.node(), b_id: b.node() }, a.shape(), out))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::shape("mul", "numel", a.numel(), b.numel()));
        }
        let out: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        Ok(self.push(Op::Mul { a: SavedIn::of(a), b: SavedIn::of(b) }, a.shape(), out))
    }

    /// Concatenate rank-2 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat_channels", "no inputs"));
        }
        let (rows, _) = require_rank2("concat_channels", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = require_rank2("concat_channels", p)?;
            if r != rows {
                return Err(Error::shape("concat_channels", "time", rows, r));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        for t in 0..rows {
            let mut off = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                out[t * total + off..t * total + off + w]
                    .copy_from_slice(&p.data()[t * w..(t + 1) * w]);
                off += w;
            }
        }
        let op = Op::Concat {
            parts: parts.iter().zip(&widths).map(|(p, &w)| (p.node(), w)).collect(),
            rows,
        };
        Ok(self.push(op, Shape::d2(rows, total), out))
    }

    /// Matrix product `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = require_rank2("matmul", a)?;
        let (kb, n) = require_rank2("matmul", b)?;
        if k != kb {
            return Err(Error::shape("matmul", "inner", k, kb));
        }
        let ad = a.data();
        let bd = b.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for l in 0..k {
                let av = ad[i * k + l];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[l * n..(l + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let op = Op::Matmul { a: SavedIn::of(a), b: SavedIn::of(b), m, k, n };
        Ok(self.push(op, Shape::d2(m, n), out))
    }

    /// Matrix product against a transposed right operand: `a (m×k) · bᵀ` with
    /// `b (n×k)`. This is the attention-score shape `Q·Kᵀ`.
    pub fn matmul_nt(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = require_rank2("matmul_nt", a)?;
        let (n, kb) = require_rank2("matmul_nt", b)?;
        if k != kb {
            return Err(Error::shape("matmul_nt", "inner", k, kb));
        }
        let ad = a.data();
        let bd = b.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bd[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        let op = Op::MatmulNt { a: SavedIn::of(a), b: SavedIn::of(b), m, k, n };
        Ok(self.push(op, Shape::d2(m, n), out))
    }

    /// `a·x + c` elementwise.
    pub fn affine(&mut self, x: &Tensor, a: f64, c: f64) -> Tensor {
        let out: Vec<f64> = x.data().iter().map(|&v| a * v + c).collect();
        self.push(Op::Affine { x_id: x.node(), a }, x.shape(), out)
    }

    /// `ln(clamp(x, 1e−12, 1))`; gradient is zero in the clamped regions.
    pub fn log_clamped(&mut self, x: &Tensor) -> Tensor {
        let out: Vec<f64> = x.data().iter().map(|&v| v.clamp(LOG_CLAMP_LO, 1.0).ln()).collect();
        let op = Op::LogClamped { x_id: x.node(), x: x.storage() };
        self.push(op, x.shape(), out)
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum_all(&mut self, x: &Tensor) -> Tensor {
        let s = x.data().iter().sum::<f64>();
        self.push(Op::SumAll { x_id: x.node(), n: x.numel() }, Shape::d1(1), vec![s])
    }

    /// Scalar division `num / den`.
    pub fn div_scalar(&mut self, num: &Tensor, den: &Tensor) -> Result<Tensor> {
        if !num.is_scalar() || !den.is_scalar() {
            return Err(Error::contract("div_scalar", "both operands must be scalar"));
        }
        let out = num.item() / den.item();
        let op = Op::DivScalar { num: SavedIn::of(num), den: SavedIn::of(den) };
        Ok(self.push(op, Shape::d1(1), vec![out]))
    }

    /// Mean of one channel over the half-open time span `[t0, t1)`, as a scalar.
    pub fn span_channel_mean(&mut self, x: &Tensor, t0: usize, t1: usize, channel: usize) -> Result<Tensor> {
        let (rows, cols) = require_rank2("span_channel_mean", x)?;
        if t0 >= t1 || t1 > rows {
            return Err(Error::contract(
                "span_channel_mean",
                format!("empty or out-of-range span [{t0}, {t1}) for {rows} rows"),
            ));
        }
        if channel >= cols {
            return Err(Error::shape("span_channel_mean", "channel", cols, channel));
        }
        let xd = x.data();
        let sum: f64 = (t0..t1).map(|t| xd[t * cols + channel]).sum();
        let mean = sum / (t1 - t0) as f64;
        let op = Op::SpanChannelMean { x_id: x.node(), t0, t1, channel, rows, cols };
        Ok(self.push(op, Shape::d1(1), vec![mean]))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// registered parameter; parameters the loss never reaches get zeros.
    pub fn backward(&mut self, loss: &Tensor) -> Result<Gradients> {
        if self.ran_backward {
            return Err(Error::contract("backward", "backward already ran on this tape"));
        }
        if !loss.is_scalar() {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got {} elements", loss.numel()),
            ));
        }
        let Some(NodeId(root)) = loss.node() else {
            return Err(Error::contract("backward", "loss is detached from this tape"));
        };
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[root] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let (below, at) = grads.split_at_mut(i);
            let Some(g) = at[0].as_deref() else { continue };
            backward_op(&self.nodes[i].op, g, below);
        }

        self.node_grads = grads;
        self.ran_backward = true;

        let mut map = HashMap::with_capacity(self.params.len());
        for (path, NodeId(id)) in &self.params {
            let shape = self.nodes[*id].out_shape;
            let g = match &self.node_grads[*id] {
                Some(g) => Tensor::new(shape, g.clone())?,
                None => Tensor::zeros(shape),
            };
            map.insert(path.clone(), g);
        }
        Ok(Gradients { map })
    }

    /// Gradient of the loss with respect to a tensor produced on this tape.
    /// Only valid after [`Tape::backward`]; `None` if no gradient flowed.
    pub fn grad_of(&self, t: &Tensor) -> Option<Tensor> {
        let NodeId(id) = t.node()?;
        let g = self.node_grads.get(id)?.as_ref()?;
        Some(Tensor::new(t.shape(), g.clone()).expect("grad shape matches tensor"))
    }
}

impl Tensor {
    fn from_arc(shape: Shape, data: Arc<Vec<f64>>, node: NodeId) -> Tensor {
        Tensor { shape, data, node: Some(node) }
    }
}

fn require_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().rank() != 2 {
        return Err(Error::contract(op, format!("expected rank-2 tensor, got {}", t.shape())));
    }
    Ok((t.shape().rows(), t.shape().cols()))
}

/// Input tap read by output step `t`, kernel position `i`; `None` when the
/// tap lands in the (zero) padding.
fn tap_index(spec: &ConvSpec, in_rows: usize, t: usize, i: usize) -> Option<usize> {
    let src = match spec.padding {
        PaddingMode::CausalLeft => t as isize - (spec.dilation * i) as isize,
        PaddingMode::SameCentered => {
            let pad_left = ((spec.kernel_size - 1) * spec.dilation) / 2;
            t as isize + (spec.dilation * i) as isize - pad_left as isize
        }
        PaddingMode::None => (t * spec.stride + spec.dilation * i) as isize,
    };
    (src >= 0 && (src as usize) < in_rows).then_some(src as usize)
}

fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut [f64] {
    slot.get_or_insert_with(|| vec![0.0; len])
}

fn backward_op(op: &Op, g: &[f64], below: &mut [Option<Vec<f64>>]) {
    match op {
        Op::Leaf => {}

        Op::Conv1d { x, w, b_id, spec, in_rows, in_cols } => {
            let (rows, cols, cout) = (*in_rows, *in_cols, spec.out_channels);
            let out_rows = g.len() / cout;
            let xd = &x.data;
            let wd = &w.data;
            // dx
            if let Some(NodeId(id)) = x.id {
                let dx = acc(&mut below[id], rows * cols);
                for t in 0..out_rows {
                    let grow = &g[t * cout..(t + 1) * cout];
                    for i in 0..spec.kernel_size {
                        let Some(src) = tap_index(spec, rows, t, i) else { continue };
                        for ci in 0..cols {
                            let wrow = &wd[(i * cols + ci) * cout..(i * cols + ci + 1) * cout];
                            dx[src * cols + ci] +=
                                grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
            // dw
            if let Some(NodeId(id)) = w.id {
                let dw = acc(&mut below[id], spec.kernel_size * cols * cout);
                for t in 0..out_rows {
                    let grow = &g[t * cout..(t + 1) * cout];
                    for i in 0..spec.kernel_size {
                        let Some(src) = tap_index(spec, rows, t, i) else { continue };
                        let xrow = &xd[src * cols..(src + 1) * cols];
                        for (ci, &xv) in xrow.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let drow = &mut dw[(i * cols + ci) * cout..(i * cols + ci + 1) * cout];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
            }
            // db: column sums of g
            if let Some(NodeId(id)) = *b_id {
                let db = acc(&mut below[id], cout);
                for t in 0..out_rows {
                    for (d, gv) in db.iter_mut().zip(&g[t * cout..(t + 1) * cout]) {
                        *d += gv;
                    }
                }
            }
        }

        Op::ConvT1d { x, w, b_id, stride, in_rows, in_cols } => {
            let (rows, cols) = (*in_rows, *in_cols);
            let k = *stride;
            let cout = w.data.len() / (k * cols);
            let xd = &x.data;
            let wd = &w.data;
            if let Some(NodeId(id)) = x.id {
                let dx = acc(&mut below[id], rows * cols);
                for t in 0..rows {
                    for j in 0..k {
                        let grow = &g[(t * k + j) * cout..(t * k + j + 1) * cout];
                        for ci in 0..cols {
                            let wrow = &wd[(j * cols + ci) * cout..(j * cols + ci + 1) * cout];
                            dx[t * cols + ci] +=
                                grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
            if let Some(NodeId(id)) = w.id {
                let dw = acc(&mut below[id], k * cols * cout);
                for t in 0..rows {
                    let xrow = &xd[t * cols..(t + 1) * cols];
                    for j in 0..k {
                        let grow = &g[(t * k + j) * cout..(t * k + j + 1) * cout];
                        for (ci, &xv) in xrow.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let drow = &mut dw[(j * cols + ci) * cout..(j * cols + ci + 1) * cout];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
            }
            if let Some(NodeId(id)) = *b_id {
                let db = acc(&mut below[id], cout);
                for step in 0..rows * k {
                    for (d, gv) in db.iter_mut().zip(&g[step * cout..(step + 1) * cout]) {
                        *d += gv;
                    }
                }
            }
        }

        Op::MaxPool2 { x_id, choice, in_numel } => {
            if let Some(NodeId(id)) = *x_id {
                let dx = acc(&mut below[id], *in_numel);
                for (gv, &src) in g.iter().zip(choice) {
                    dx[src as usize] += gv;
                }
            }
        }

        Op::LayerNorm { x_id, gain, b_id, xhat, inv_std, cols } => {
            let cols = *cols;
            let rows = g.len() / cols;
            let gd = &gain.data;
            if let Some(NodeId(id)) = gain.id {
                let dgain = acc(&mut below[id], cols);
                for t in 0..rows {
                    for c in 0..cols {
                        dgain[c] += g[t * cols + c] * xhat[t * cols + c];
                    }
                }
            }
            if let Some(NodeId(id)) = *b_id {
                let dbias = acc(&mut below[id], cols);
                for t in 0..rows {
                    for (d, gv) in dbias.iter_mut().zip(&g[t * cols..(t + 1) * cols]) {
                        *d += gv;
                    }
                }
            }
            if let Some(NodeId(id)) = *x_id {
                let dx = acc(&mut below[id], rows * cols);
                let n = cols as f64;
                for t in 0..rows {
                    let grow = &g[t * cols..(t + 1) * cols];
                    let xh = &xhat[t * cols..(t + 1) * cols];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for c in 0..cols {
                        let dxh = grow[c] * gd[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[c];
                    }
                    let m1 = sum_dxh / n;
                    let m2 = sum_dxh_xh / n;
                    let is = inv_std[t];
                    for c in 0..cols {
                        let dxh = grow[c] * gd[c];
                        dx[t * cols + c] += is * (dxh - m1 - xh[c] * m2);
                    }
                }
            }
        }

        Op::Relu { x_id, out } => {
            if let Some(NodeId(id)) = *x_id {
                let dx = acc(&mut below[id], out.len());
                for (d, (gv, ov)) in dx.iter_mut().zip(g.iter().zip(out.iter())) {
                    if *ov > 0.0 {
                        *d += gv;
                    }
                }
            }
        }

        Op::SoftmaxCh { x_id, out, cols } => {
            if let Some(NodeId(id)) = *x_id {
                let cols = *cols;
                let rows = g.len() / cols;
                let dx = acc(&mut below[id], rows * cols);
                for t in 0..rows {
                    let grow = &g[t * cols..(t + 1) * cols];
                    let orow = &out[t * cols..(t + 1) * cols];
                    let dot: f64 = grow.iter().zip(orow).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[t * cols + c] += orow[c] * (grow[c] - dot);
                    }
                }
            }
        }

        Op::Dropout { x_id, mask } => {
            if let Some(NodeId(id)) = *x_id {
                let dx = acc(&mut below[id], mask.len());
                for (d, (gv, mv)) in dx.iter_mut().zip(g.iter().zip(mask.iter())) {
                    *d += gv * mv;
                }
            }
        }

        Op::Add { a_id, b_id } => {
            for id in [a_id, b_id].into_iter().flatten() {
                let NodeId(id) = *id;
                let dx = acc(&mut below[id], g.len());
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += gv;
                }
            }
        }

        Op::Mul { a, b } => {
            if let Some(NodeId(id)) = a.id {
                let da = acc(&mut below[id], g.len());
                for (d, (gv, bv)) in da.iter_mut().zip(g.iter().zip(b.data.iter())) {
                    *d += gv * bv;
                }
            }
            if let Some(NodeId(id)) = b.id {
                let db = acc(&mut below[id], g.len());
                for (d, (gv, av)) in db.iter_mut().zip(g.iter().zip(a.data.iter())) {
                    *d += gv * av;
                }
            }
        }

        Op::Concat { parts, rows } => {
            let total: usize = parts.iter().map(|(_, w)| w).sum();
            let mut off = 0;
            for (id, w) in parts {
                if let Some(NodeId(id)) = id {
                    let dx = acc(&mut below[*id], rows * w);
                    for t in 0..*rows {
                        for c in 0..*w {
                            dx[t * w + c] += g[t * total + off + c];
                        }
                    }
                }
                off += w;
            }
        }

        Op::Matmul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            // da = g · bᵀ
            if let Some(NodeId(id)) = a.id {
                let da = acc(&mut below[id], m * k);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for l in 0..k {
                        let brow = &b.data[l * n..(l + 1) * n];
                        da[i * k + l] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            // db = aᵀ · g
            if let Some(NodeId(id)) = b.id {
                let db = acc(&mut below[id], k * n);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for l in 0..k {
                        let av = a.data[i * k + l];
                        if av == 0.0 {
                            continue;
                        }
                        let drow = &mut db[l * n..(l + 1) * n];
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
            }
        }

        Op::MatmulNt { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            // da = g · b
            if let Some(NodeId(id)) = a.id {
                let da = acc(&mut below[id], m * k);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let drow = &mut da[i * k..(i + 1) * k];
                    for (j, gv) in grow.iter().enumerate() {
                        if *gv == 0.0 {
                            continue;
                        }
                        let brow = &b.data[j * k..(j + 1) * k];
                        for (d, bv) in drow.iter_mut().zip(brow) {
                            *d += gv * bv;
                        }
                    }
                }
            }
            // db = gᵀ · a
            if let Some(NodeId(id)) = b.id {
                let db = acc(&mut below[id], n * k);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let arow = &a.data[i * k..(i + 1) * k];
                    for (j, gv) in grow.iter().enumerate() {
                        if *gv == 0.0 {
                            continue;
                        }
                        let drow = &mut db[j * k..(j + 1) * k];
                        for (d, av) in drow.iter_mut().zip(arow) {
                            *d += gv * av;
                        }
                    }
                }
            }
        }

        Op::Affine { x_id, a } => {
            if let Some(NodeId(id)) = *x_id {
                let dx = acc(&mut below[id], g.len());
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += a * gv;
                }
            }
        }

        Op::LogClamped { x_id, x } => {
            if let Some(NodeId(id)) = *x_id {
                let dx = acc(&mut below[id], x.len());
                for (d, (gv, &xv)) in dx.iter_mut().zip(g.iter().zip(x.iter())) {
                    if (LOG_CLAMP_LO..=1.0).contains(&xv) {
                        *d += gv / xv;
                    }
                }
            }
        }

        Op::SumAll { x_id, n } => {
            if let Some(NodeId(id)) = *x_id {
                let dx = acc(&mut below[id], *n);
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
        }

        Op::DivScalar { num, den } => {
            let nv = num.data[0];
            let dv = den.data[0];
            if let Some(NodeId(id)) = num.id {
                acc(&mut below[id], 1)[0] += g[0] / dv;
            }
            if let Some(NodeId(id)) = den.id {
                acc(&mut below[id], 1)[0] += -g[0] * nv / (dv * dv);
            }
        }

        Op::SpanChannelMean { x_id, t0, t1, channel, rows, cols } => {
            if let Some(NodeId(id)) = *x_id {
                let span = (*t1 - *t0) as f64;
                let dx = acc(&mut below[id], rows * cols);
                for t in *t0..*t1 {
                    dx[t * cols + channel] += g[0] / span;
                }
            }
        }
    }
}
