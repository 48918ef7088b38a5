//! Reverse-mode differentiation over a per-example tape.
//!
//! A [`Graph`] records every operation of one forward pass as a node.
//! Parameters live outside the graph in a [`ParamStore`] and are referenced
//! by id, so many graphs can share one store. [`Graph::backward`] walks the
//! tape in reverse and returns gradients for every node and parameter.
//!
//! The op set is exactly what the codec needs: 1-D convolution with same
//! padding, leaky ReLU, residual additions, sub-pixel and repeat
//! upsampling, softmax quantization pieces, spectral magnitudes, the
//! LSP -> LPC map and the analysis/synthesis filters.

mod conv;
mod optim;
mod params;
mod tensor;

use std::f64::consts::LN_2;
use std::sync::Arc;

use thiserror::Error;

use crate::lpc::{lsp_to_lpc_jacobian, lsp_to_lpc_unchecked};

pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient")]
    NonFiniteGradient,
}

fn shape_err<T>(msg: impl Into<String>) -> Result<T, GraphError> {
    Err(GraphError::Shape(msg.into()))
}

/// Handle to a node of one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Precomputed DFT basis for magnitude spectra of fixed-length frames.
#[derive(Debug, Clone)]
pub struct SpectrumBasis {
    pub frame_len: usize,
    pub bins: usize,
    /// Analysis window folded together with the amplitude scale.
    window: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl SpectrumBasis {
    /// Hann-windowed DFT of `frame_len` samples, scaled by `1 / sum(window)`
    /// so that a full-scale sinusoid peaks near 0.5.
    pub fn hann(frame_len: usize) -> Self {
        let bins = frame_len / 2 + 1;
        let hann = crate::signal::hann(frame_len);
        let norm: f64 = hann.iter().sum();
        let window = hann.iter().map(|w| w / norm).collect();
        let mut cos = Vec::with_capacity(bins * frame_len);
        let mut sin = Vec::with_capacity(bins * frame_len);
        for k in 0..bins {
            for t in 0..frame_len {
                // Reduce the phase index first to keep the argument small.
                let ph = 2.0 * std::f64::consts::PI * ((k * t) % frame_len) as f64 / frame_len as f64;
                cos.push(ph.cos());
                sin.push(ph.sin());
            }
        }
        Self { frame_len, bins, window, cos, sin }
    }

    /// Magnitudes `|X_k|` with a tiny floor inside the square root.
    pub fn magnitudes(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.frame_len;
        let xw: Vec<f64> = x.iter().zip(&self.window).map(|(a, w)| a * w).collect();
        let mut re = vec![0.0; self.bins];
        let mut im = vec![0.0; self.bins];
        let mut mag = vec![0.0; self.bins];
        for k in 0..self.bins {
            let c = &self.cos[k * n..(k + 1) * n];
            let s = &self.sin[k * n..(k + 1) * n];
            re[k] = xw.iter().zip(c).map(|(a, b)| a * b).sum();
            im[k] = -xw.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
            mag[k] = (re[k] * re[k] + im[k] * im[k] + MAG_FLOOR).sqrt();
        }
        (re, im, mag)
    }
}

const MAG_FLOOR: f64 = 1e-12;

/// Constant matrix applied as `y = M x`.
#[derive(Debug, Clone)]
pub struct ConstMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Conv1d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    LeakyRelu { x: NodeId, slope: f64 },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    SumAll(NodeId),
    SubpixelUpsample(NodeId),
    RepeatUpsample(NodeId),
    Reshape(NodeId),
    DiffEncode(NodeId),
    CumSum(NodeId),
    SqDist { h: NodeId, b: NodeId },
    SoftmaxNeg { d: NodeId, alpha: f64 },
    RowDot { a: NodeId, b: NodeId },
    SqrtPenalty(NodeId),
    ColSum(NodeId),
    Entropy { counts: NodeId, total: f64 },
    Mse(NodeId, NodeId),
    Spectrum { x: NodeId, basis: Arc<SpectrumBasis>, re: Vec<f64>, im: Vec<f64> },
    MatVec { x: NodeId, m: Arc<ConstMatrix> },
    WeightedSum(Vec<(NodeId, f64)>),
    LspToLpc(NodeId),
    LspStabilize { w: NodeId, perm: Vec<usize>, pass: Vec<bool> },
    FirResidual { a: NodeId, context: Vec<f64> },
    IirSynth { e: NodeId, a: NodeId, memory: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn node(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.index()).and_then(|g| g.as_deref())
    }

    /// Moves the parameter gradients out, dropping per-node buffers.
    pub fn into_params(self) -> Vec<Option<Vec<f64>>> {
        self.params
    }
}

/// Tape of one forward computation.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

/// Same-padding geometry: output width and left pad for a strided conv.
pub fn same_padding(width: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = width.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(width);
    (out, total / 2)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value: Some(value) });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match (&self.nodes[id.0].value, &self.nodes[id.0].op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.get(*p),
            _ => unreachable!("node without value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node { op: Op::Param(id), value: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Cross-correlation of a `(width, in)` input with a `(kernel, in, out)`
    /// weight under same padding.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId, GraphError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let ws = wv.shape();
        if ws.len() != 3 || xv.shape().len() != 2 {
            return shape_err(format!("conv1d expects (W,C) input and (K,I,O) weight, got {:?} and {ws:?}", xv.shape()));
        }
        let (k, cin, cout) = (ws[0], ws[1], ws[2]);
        if xv.channels() != cin || bv.len() != cout || stride == 0 {
            return shape_err(format!(
                "conv1d input channels {} vs kernel {cin}, bias {} vs {cout}",
                xv.channels(),
                bv.len()
            ));
        }
        let width = xv.width();
        let (out_w, pad) = same_padding(width, k, stride);
        let dims = conv::ConvDims { width, cin, cout, k, stride, pad, out_w };
        let out = conv::forward(&dims, xv.data(), wv.data(), bv.data());
        let t = Tensor::new(vec![out_w, cout], out)?;
        Ok(self.push(Op::Conv1d { x, w, b, stride, pad }, t))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let v = self.value(x);
        let data = v.data().iter().map(|&z| if z > 0.0 { z } else { slope * z }).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(Op::LeakyRelu { x, slope }, t)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return shape_err(format!("elementwise op on {:?} and {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(op, t))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|z| z * k).collect()).expect("same shape");
        self.push(Op::Scale(x, k), t)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    /// `(W, 2k) -> (2W, k)` with `out[2t + j, c] = in[t, 2c + j]`.
    pub fn subpixel_upsample(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let v = self.value(x);
        let (w, c2) = (v.width(), v.channels());
        if v.shape().len() != 2 || c2 % 2 != 0 {
            return shape_err(format!("sub-pixel upsampling needs an even channel count, got {:?}", v.shape()));
        }
        let k = c2 / 2;
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for t in 0..w {
            for c in 0..k {
                for j in 0..2 {
                    out[(2 * t + j) * k + c] = src[t * c2 + 2 * c + j];
                }
            }
        }
        let t = Tensor::new(vec![2 * w, k], out)?;
        Ok(self.push(Op::SubpixelUpsample(x), t))
    }

    /// Nearest-neighbour doubling of the width: `(W, C) -> (2W, C)`.
    pub fn repeat_upsample(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return shape_err(format!("repeat upsampling needs (W,C), got {:?}", v.shape()));
        }
        let (w, c) = (v.width(), v.channels());
        let src = v.data();
        let mut out = Vec::with_capacity(2 * src.len());
        for t in 0..w {
            let row = &src[t * c..(t + 1) * c];
            out.extend_from_slice(row);
            out.extend_from_slice(row);
        }
        let t = Tensor::new(vec![2 * w, c], out)?;
        Ok(self.push(Op::RepeatUpsample(x), t))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, GraphError> {
        let t = Tensor::new(shape, self.value(x).data().to_vec())?;
        Ok(self.push(Op::Reshape(x), t))
    }

    /// First differences with the leading element passed through.
    pub fn diff_encode(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let t = Tensor::vector(crate::quant::differential_encode(v.data()));
        self.push(Op::DiffEncode(x), t)
    }

    pub fn cumsum(&mut self, x: NodeId) -> NodeId {
        let t = Tensor::vector(crate::quant::differential_decode(self.value(x).data()));
        self.push(Op::CumSum(x), t)
    }

    /// `(h_i - b_j)^2` for a shared `(J)` codebook or a per-row `(I, J)` one.
    pub fn sq_dist(&mut self, h: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (hv, bv) = (self.value(h), self.value(b));
        let rows = hv.len();
        let cols = *bv.shape().last().unwrap_or(&0);
        let per_row = bv.shape().len() == 2;
        if per_row && bv.shape()[0] != rows {
            return shape_err(format!("per-row codebook {:?} for {rows} values", bv.shape()));
        }
        let mut out = Vec::with_capacity(rows * cols);
        for (i, &x) in hv.data().iter().enumerate() {
            let book = if per_row { &bv.data()[i * cols..(i + 1) * cols] } else { bv.data() };
            out.extend(book.iter().map(|&c| (x - c) * (x - c)));
        }
        let t = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(Op::SqDist { h, b }, t))
    }

    /// Row-wise `softmax(-alpha D)`.
    pub fn softmax_neg(&mut self, d: NodeId, alpha: f64) -> NodeId {
        let dv = self.value(d);
        let m = crate::quant::Matrix { rows: dv.width(), cols: dv.channels(), data: dv.data().to_vec() };
        let a = crate::quant::soft_assign(&m, alpha).matrix;
        let t = Tensor::new(vec![a.rows, a.cols], a.data).expect("same shape");
        self.push(Op::SoftmaxNeg { d, alpha }, t)
    }

    /// `out_i = sum_j A_ij b_j` (or `b_ij` for a per-row codebook).
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (rows, cols) = (av.width(), av.channels());
        let per_row = bv.shape().len() == 2;
        if *bv.shape().last().unwrap_or(&0) != cols || (per_row && bv.shape()[0] != rows) {
            return shape_err(format!("row_dot {:?} with {:?}", av.shape(), bv.shape()));
        }
        let out = (0..rows)
            .map(|i| {
                let book = if per_row { &bv.data()[i * cols..(i + 1) * cols] } else { bv.data() };
                av.data()[i * cols..(i + 1) * cols].iter().zip(book).map(|(p, c)| p * c).sum()
            })
            .collect();
        Ok(self.push(Op::RowDot { a, b }, Tensor::vector(out)))
    }

    /// `sum_ij (sqrt(A_ij) - 1) / I`.
    pub fn sqrt_penalty(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let rows = av.width() as f64;
        let v = av.data().iter().map(|p| p.sqrt() - 1.0).sum::<f64>() / rows;
        self.push(Op::SqrtPenalty(a), Tensor::scalar(v))
    }

    /// Column sums of an `(I, J)` matrix.
    pub fn col_sum(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let cols = av.channels();
        let mut out = vec![0.0; cols];
        for row in av.data().chunks(cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        self.push(Op::ColSum(a), Tensor::vector(out))
    }

    /// Entropy in bits of `counts / total`.
    pub fn entropy(&mut self, counts: NodeId, total: f64) -> NodeId {
        let v = crate::quant::entropy_of_counts(self.value(counts).data(), total);
        self.push(Op::Entropy { counts, total }, Tensor::scalar(v))
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() || av.is_empty() {
            return shape_err(format!("mse on {:?} and {:?}", av.shape(), bv.shape()));
        }
        let v = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / av.len() as f64;
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(v)))
    }

    /// Windowed DFT magnitudes of a frame.
    pub fn spectrum(&mut self, x: NodeId, basis: Arc<SpectrumBasis>) -> Result<NodeId, GraphError> {
        let xv = self.value(x);
        if xv.len() != basis.frame_len {
            return shape_err(format!("spectrum of {} samples with a {}-point basis", xv.len(), basis.frame_len));
        }
        let (re, im, mag) = basis.magnitudes(xv.data());
        Ok(self.push(Op::Spectrum { x, basis, re, im }, Tensor::vector(mag)))
    }

    pub fn mat_vec(&mut self, x: NodeId, m: Arc<ConstMatrix>) -> Result<NodeId, GraphError> {
        let xv = self.value(x);
        if xv.len() != m.cols {
            return shape_err(format!("matrix with {} columns applied to {} values", m.cols, xv.len()));
        }
        let out = m.data.chunks(m.cols).map(|row| row.iter().zip(xv.data()).map(|(a, b)| a * b).sum()).collect();
        Ok(self.push(Op::MatVec { x, m }, Tensor::vector(out)))
    }

    /// `sum_k w_k s_k` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(NodeId, f64)>) -> Result<NodeId, GraphError> {
        let mut acc = 0.0;
        for &(n, w) in &terms {
            let v = self.value(n);
            if !v.is_scalar() {
                return shape_err(format!("weighted_sum term of shape {:?}", v.shape()));
            }
            acc += w * v.item();
        }
        Ok(self.push(Op::WeightedSum(terms), Tensor::scalar(acc)))
    }

    /// Prediction coefficients from line spectral frequencies.
    pub fn lsp_to_lpc(&mut self, w: NodeId) -> NodeId {
        let a = lsp_to_lpc_unchecked(self.value(w).data());
        self.push(Op::LspToLpc(w), Tensor::vector(a))
    }

    /// Sorts frequencies and enforces `min_gap` spacing inside `(0, pi)`.
    ///
    /// The gradient is routed through the sorting permutation and blocked
    /// for entries that the spacing rule moved.
    pub fn lsp_stabilize(&mut self, w: NodeId, min_gap: f64) -> NodeId {
        let (out, perm, pass) = stabilize_lsp(self.value(w).data(), min_gap);
        self.push(Op::LspStabilize { w, perm, pass }, Tensor::vector(out))
    }

    /// `e(t) = s(t) - sum_i a_i s(t - i)`; the first `p` context samples are memory.
    pub fn fir_residual(&mut self, a: NodeId, context: Vec<f64>) -> Result<NodeId, GraphError> {
        let av = self.value(a).data().to_vec();
        if context.len() < av.len() {
            return shape_err("FIR context shorter than the filter memory");
        }
        let e = crate::lpc::fir_residual(&context, &av);
        Ok(self.push(Op::FirResidual { a, context }, Tensor::vector(e)))
    }

    /// `y(t) = e(t) + sum_i a_i y(t - i)` with `memory` as the previous outputs.
    pub fn iir_synth(&mut self, e: NodeId, a: NodeId, memory: Vec<f64>) -> Result<NodeId, GraphError> {
        let av = self.value(a).data();
        if memory.len() != av.len() {
            return shape_err("synthesis memory must match the filter order");
        }
        let coeffs = crate::lpc::LpcCoeffs { a: av.to_vec(), gain_error: 0.0 };
        let (y, _) = crate::lpc::synthesize(self.value(e).data(), &coeffs, &memory);
        Ok(self.push(Op::IirSynth { e, a, memory }, Tensor::vector(y)))
    }

    /// Backpropagates from a scalar loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GraphError> {
        let v = self.value(loss);
        if !v.is_scalar() {
            return Err(GraphError::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(self.backward_seeded(&[(loss, vec![1.0])]))
    }

    /// Backpropagates arbitrary upstream gradients into several nodes.
    pub fn backward_seeded(&self, seeds: &[(NodeId, Vec<f64>)]) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut params: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];
        for (id, g) in seeds {
            let slot = accumulate(&mut grads[id.0], g.len());
            for (s, v) in slot.iter_mut().zip(g) {
                *s += v;
            }
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }
        Gradients { nodes: grads, params }
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut [Option<Vec<f64>>],
    ) {
        let len_of = |n: NodeId| self.value(n).len();
        macro_rules! slot {
            ($n:expr) => {{
                let n: NodeId = $n;
                let len = len_of(n);
                accumulate(&mut grads[n.0], len)
            }};
        }
        match &self.nodes[idx].op {
            Op::Input => {}
            Op::Param(p) => {
                let slot = accumulate(&mut params[p.index()], g.len());
                for (s, v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (k, cin, cout) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let dims = conv::ConvDims { width: xv.width(), cin, cout, k, stride: *stride, pad: *pad, out_w: g.len() / cout };
                let (dx, dw, db) = conv::backward(&dims, xv.data(), wv.data(), g);
                add_into(slot!(*x), &dx);
                add_into(slot!(*w), &dw);
                add_into(slot!(*b), &db);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data().to_vec();
                let s = slot!(*x);
                for ((d, gv), z) in s.iter_mut().zip(g).zip(xv) {
                    *d += if z > 0.0 { *gv } else { slope * gv };
                }
            }
            Op::Add(a, b) => {
                add_into(slot!(*a), g);
                add_into(slot!(*b), g);
            }
            Op::Sub(a, b) => {
                add_into(slot!(*a), g);
                let s = slot!(*b);
                for (d, v) in s.iter_mut().zip(g) {
                    *d -= v;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                let s = slot!(*a);
                for ((d, gv), y) in s.iter_mut().zip(g).zip(&bv) {
                    *d += gv * y;
                }
                let s = slot!(*b);
                for ((d, gv), x) in s.iter_mut().zip(g).zip(&av) {
                    *d += gv * x;
                }
            }
            Op::Scale(x, k) => {
                let s = slot!(*x);
                for (d, v) in s.iter_mut().zip(g) {
                    *d += k * v;
                }
            }
            Op::SumAll(x) => {
                let s = slot!(*x);
                s.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::SubpixelUpsample(x) => {
                let xv = self.value(*x);
                let (w, c2) = (xv.width(), xv.channels());
                let k = c2 / 2;
                let s = slot!(*x);
                for t in 0..w {
                    for c in 0..k {
                        for j in 0..2 {
                            s[t * c2 + 2 * c + j] += g[(2 * t + j) * k + c];
                        }
                    }
                }
            }
            Op::RepeatUpsample(x) => {
                let c = self.value(*x).channels();
                let s = slot!(*x);
                for (t, pair) in g.chunks(2 * c).enumerate() {
                    for ch in 0..c {
                        s[t * c + ch] += pair[ch] + pair[c + ch];
                    }
                }
            }
            Op::Reshape(x) => add_into(slot!(*x), g),
            Op::DiffEncode(x) => {
                let s = slot!(*x);
                let n = g.len();
                for i in 0..n {
                    s[i] += g[i] - if i + 1 < n { g[i + 1] } else { 0.0 };
                }
            }
            Op::CumSum(x) => {
                let s = slot!(*x);
                let mut acc = 0.0;
                for i in (0..g.len()).rev() {
                    acc += g[i];
                    s[i] += acc;
                }
            }
            Op::SqDist { h, b } => {
                let (hv, bv) = (self.value(*h).data().to_vec(), self.value(*b));
                let per_row = bv.shape().len() == 2;
                let cols = *bv.shape().last().unwrap();
                let bd = bv.data().to_vec();
                let mut dh = vec![0.0; hv.len()];
                let mut db = vec![0.0; bd.len()];
                for (i, &x) in hv.iter().enumerate() {
                    let base = if per_row { i * cols } else { 0 };
                    for j in 0..cols {
                        let diff = 2.0 * (x - bd[base + j]) * g[i * cols + j];
                        dh[i] += diff;
                        db[base + j] -= diff;
                    }
                }
                add_into(slot!(*h), &dh);
                add_into(slot!(*b), &db);
            }
            Op::SoftmaxNeg { d, alpha } => {
                let a = self.nodes[idx].value.as_ref().expect("softmax value");
                let cols = a.channels();
                let s = slot!(*d);
                for (i, row) in a.data().chunks(cols).enumerate() {
                    let gr = &g[i * cols..(i + 1) * cols];
                    let dot: f64 = row.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..cols {
                        s[i * cols + j] += -alpha * row[j] * (gr[j] - dot);
                    }
                }
            }
            Op::RowDot { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let cols = av.channels();
                let per_row = bv.shape().len() == 2;
                let (ad, bd) = (av.data().to_vec(), bv.data().to_vec());
                let mut da = vec![0.0; ad.len()];
                let mut db = vec![0.0; bd.len()];
                for (i, gi) in g.iter().enumerate() {
                    let base = if per_row { i * cols } else { 0 };
                    for j in 0..cols {
                        da[i * cols + j] += gi * bd[base + j];
                        db[base + j] += gi * ad[i * cols + j];
                    }
                }
                add_into(slot!(*a), &da);
                add_into(slot!(*b), &db);
            }
            Op::SqrtPenalty(a) => {
                let av = self.value(*a);
                let rows = av.width() as f64;
                let vals = av.data().to_vec();
                let s = slot!(*a);
                for (d, p) in s.iter_mut().zip(vals) {
                    if p > 0.0 {
                        *d += g[0] / (2.0 * p.sqrt() * rows);
                    }
                }
            }
            Op::ColSum(a) => {
                let cols = g.len();
                let s = slot!(*a);
                for (i, d) in s.iter_mut().enumerate() {
                    *d += g[i % cols];
                }
            }
            Op::Entropy { counts, total } => {
                let c = self.value(*counts).data().to_vec();
                let s = slot!(*counts);
                for (d, v) in s.iter_mut().zip(entropy_grad(&c, *total)) {
                    *d += g[0] * v;
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                let n = av.len() as f64;
                let diff: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| 2.0 * (x - y) / n * g[0]).collect();
                add_into(slot!(*a), &diff);
                let s = slot!(*b);
                for (d, v) in s.iter_mut().zip(&diff) {
                    *d -= v;
                }
            }
            Op::Spectrum { x, basis, re, im } => {
                let mag = self.nodes[idx].value.as_ref().expect("spectrum value").data();
                let n = basis.frame_len;
                let mut dxw = vec![0.0; n];
                for k in 0..basis.bins {
                    let dre = g[k] * re[k] / mag[k];
                    let dim = g[k] * im[k] / mag[k];
                    let c = &basis.cos[k * n..(k + 1) * n];
                    let sn = &basis.sin[k * n..(k + 1) * n];
                    for t in 0..n {
                        dxw[t] += dre * c[t] - dim * sn[t];
                    }
                }
                let s = slot!(*x);
                for ((d, v), w) in s.iter_mut().zip(dxw).zip(&basis.window) {
                    *d += v * w;
                }
            }
            Op::MatVec { x, m } => {
                let s = slot!(*x);
                for (row, gi) in m.data.chunks(m.cols).zip(g) {
                    for (d, v) in s.iter_mut().zip(row) {
                        *d += gi * v;
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for &(n, w) in terms {
                    slot!(n)[0] += w * g[0];
                }
            }
            Op::LspToLpc(w) => {
                let wv = self.value(*w).data().to_vec();
                let p = wv.len();
                let jac = lsp_to_lpc_jacobian(&wv);
                let s = slot!(*w);
                for i in 0..p {
                    for k in 0..p {
                        s[k] += g[i] * jac[i * p + k];
                    }
                }
            }
            Op::LspStabilize { w, perm, pass } => {
                let s = slot!(*w);
                for (k, (&src, &ok)) in perm.iter().zip(pass).enumerate() {
                    if ok {
                        s[src] += g[k];
                    }
                }
            }
            Op::FirResidual { a, context } => {
                let p = len_of(*a);
                let s = slot!(*a);
                for (t, gt) in g.iter().enumerate() {
                    for (i, d) in s.iter_mut().enumerate() {
                        *d -= gt * context[p + t - 1 - i];
                    }
                }
            }
            Op::IirSynth { e, a, memory } => {
                let av = self.value(*a).data().to_vec();
                let y = self.nodes[idx].value.as_ref().expect("synthesis value").data();
                let p = av.len();
                let n = g.len();
                // Adjoint recursion runs backwards in time.
                let mut lam = vec![0.0; n];
                for t in (0..n).rev() {
                    let mut acc = g[t];
                    for (i, ai) in av.iter().enumerate() {
                        if t + 1 + i < n {
                            acc += ai * lam[t + 1 + i];
                        }
                    }
                    lam[t] = acc;
                }
                let past = |t: usize, i: usize| {
                    let back = t as isize - 1 - i as isize;
                    if back >= 0 {
                        y[back as usize]
                    } else {
                        memory[(p as isize + back) as usize]
                    }
                };
                let mut da = vec![0.0; p];
                for t in 0..n {
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += lam[t] * past(t, i);
                    }
                }
                add_into(slot!(*e), &lam);
                add_into(slot!(*a), &da);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Smallest probability used when differentiating the entropy.
const ENTROPY_FLOOR: f64 = 1e-12;

/// `d/dc_j` of `-sum p log2 p` with `p = c / total` and fixed `total`.
pub fn entropy_grad(counts: &[f64], total: f64) -> Vec<f64> {
    counts
        .iter()
        .map(|&c| {
            let p = (c / total).max(ENTROPY_FLOOR);
            -(p.log2() + 1.0 / LN_2) / total
        })
        .collect()
}

/// Sort + spacing rule shared by the graph op and the hard decoder path.
///
/// Returns the stabilized values, the source index of each output and
/// whether the output kept its sorted input value.
pub fn stabilize_lsp(w: &[f64], min_gap: f64) -> (Vec<f64>, Vec<usize>, Vec<bool>) {
    let p = w.len();
    let mut perm: Vec<usize> = (0..p).collect();
    perm.sort_by(|&i, &j| w[i].total_cmp(&w[j]).then(i.cmp(&j)));
    let sorted: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
    let mut out = sorted.clone();
    let pi = std::f64::consts::PI;
    for k in 0..p {
        let lo = if k == 0 { min_gap } else { out[k - 1] + min_gap };
        let hi = pi - min_gap * (p - k) as f64;
        out[k] = out[k].max(lo).min(hi.max(lo));
    }
    let pass = out.iter().zip(&sorted).map(|(o, s)| o == s).collect();
    (out, perm, pass)
}

#[cfg(test)]
mod tests;
