//! Dense float64 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is a flat, time-major array of `f64` with rank ≤ 3. Rank-2
//! tensors are `(time × channels)` signals, rank-1 tensors hold per-channel
//! parameters (biases, layer-norm gains), and rank-3 tensors hold convolution
//! weights `(kernel × in_channels × out_channels)`. All layer primitives live
//! on [`Tape`](tape::Tape); running them through a tape records the operations
//! needed for the backward pass.

mod tape;
#[cfg(test)]
mod tests;

pub use tape::{Gradients, NodeId, Tape};

use std::sync::Arc;

use crate::error::{Error, Result};

/// Shape of a tensor: up to three dimensions, all ≥ 1.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    dims: [usize; 3],
    rank: u8,
}

impl Shape {
    pub fn d1(n: usize) -> Shape {
        Shape { dims: [n, 1, 1], rank: 1 }
    }

    /// Rank-2 shape: `(time × channels)` for signals, `(rows × cols)` for matrices.
    pub fn d2(rows: usize, cols: usize) -> Shape {
        Shape { dims: [rows, cols, 1], rank: 2 }
    }

    /// Rank-3 shape, used for conv weights `(kernel × in_channels × out_channels)`.
    pub fn d3(a: usize, b: usize, c: usize) -> Shape {
        Shape { dims: [a, b, c], rank: 3 }
    }

    pub fn rank(&self) -> usize {
        self.rank as usize
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank as usize]
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// Row count of a rank-2 tensor (the time axis for signals).
    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    /// Column count of a rank-2 tensor (the channel axis for signals).
    pub fn cols(&self) -> usize {
        self.dims[1]
    }

    fn valid(&self) -> bool {
        self.rank >= 1 && self.rank <= 3 && self.dims().iter().all(|&d| d >= 1)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let dims: Vec<String> = self.dims().iter().map(|d| d.to_string()).collect();
        write!(f, "({})", dims.join("×"))
    }
}

/// Immutable dense tensor. Cloning is cheap (shared storage).
///
/// `node` is set when the tensor was produced by (or registered on) a tape;
/// a tensor detached from any tape never accumulates gradient.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Tensor> {
        if !shape.valid() {
            return Err(Error::contract("Tensor::new", format!("invalid shape {shape}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::shape("Tensor::new", "numel", shape.numel(), data.len()));
        }
        Ok(Tensor { shape, data: Arc::new(data), node: None })
    }

    pub fn zeros(shape: Shape) -> Tensor {
        Tensor { shape, data: Arc::new(vec![0.0; shape.numel()]), node: None }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: Shape::d1(1), data: Arc::new(vec![v]), node: None }
    }

    /// Rank-2 tensor from a `time × channels` f64 vector (time-major).
    pub fn signal(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(Shape::d2(rows, cols), data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Copy of this tensor with no tape association.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape, data: Arc::clone(&self.data), node: None }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn from_op(shape: Shape, data: Vec<f64>, node: NodeId) -> Tensor {
        Tensor { shape, data: Arc::new(data), node: Some(node) }
    }

    pub(crate) fn with_node(&self, node: NodeId) -> Tensor {
        Tensor { shape: self.shape, data: Arc::clone(&self.data), node: Some(node) }
    }

    pub(crate) fn storage(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }
}

/// Padding behavior of [`conv1d`](Tape::conv1d).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PaddingMode {
    /// Zero-pad `(k−1)·d` samples on the left only; output at time `t` reads
    /// taps `x[t − d·i]`, so it depends only on inputs at times ≤ `t` and the
    /// time length is preserved. Requires stride 1.
    CausalLeft,
    /// Length-preserving centered padding (`⌊(k−1)/2⌋` left, rest right);
    /// taps run forward: `x[t + d·i − pad_left]`. Requires stride 1.
    SameCentered,
    /// No padding; output length `(len − (k−1)·d − 1)/stride + 1`.
    None,
}

/// Static description of a 1D convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub dilation: usize,
    pub stride: usize,
    pub padding: PaddingMode,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Causal dilated conv, stride 1 (the TCN/bridge building block).
    pub fn causal(kernel_size: usize, dilation: usize, out_channels: usize) -> ConvSpec {
        ConvSpec { kernel_size, dilation, stride: 1, padding: PaddingMode::CausalLeft, out_channels }
    }

    /// Centered length-preserving conv, stride 1, dilation 1 (the TIF kernels).
    pub fn same(kernel_size: usize, out_channels: usize) -> ConvSpec {
        ConvSpec { kernel_size, dilation: 1, stride: 1, padding: PaddingMode::SameCentered, out_channels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size < 1 || self.dilation < 1 || self.stride < 1 {
            return Err(Error::contract(
                "ConvSpec",
                format!(
                    "kernel_size, dilation, stride must all be ≥ 1 (got {}, {}, {})",
                    self.kernel_size, self.dilation, self.stride
                ),
            ));
        }
        if self.padding != PaddingMode::None && self.stride != 1 {
            return Err(Error::contract("ConvSpec", "padded convolutions require stride 1"));
        }
        Ok(())
    }

    /// Output time length for an input of length `len`.
    pub fn out_len(&self, len: usize) -> usize {
        match self.padding {
            PaddingMode::CausalLeft | PaddingMode::SameCentered => len,
            PaddingMode::None => {
                let span = (self.kernel_size - 1) * self.dilation + 1;
                if len < span {
                    0
                } else {
                    (len - span) / self.stride + 1
                }
            }
        }
    }
}
