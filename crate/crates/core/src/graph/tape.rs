use std::borrow::Cow;

use super::matrix::{gemm, Op as G};
use super::{Gradients, ParameterSet, RealMatrix};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
    /// Tanh approximation of GELU.
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh()),
        }
    }

    /// Derivative given the input `x` and the output `y = apply(x)`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Gelu => {
                let u = GELU_C * (x + 0.044_715 * x * x * x);
                let th = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044_715 * x * x);
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// User-supplied differentiable operation.
///
/// The forward value is computed by the caller and handed to
/// [`Tape::custom`]; the tape only asks for vector-Jacobian products.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;

    /// Gradients w.r.t. each input (same order as recorded), given the
    /// upstream gradient of the output. `None` means "no gradient".
    fn backward(
        &self,
        inputs: &[&RealMatrix],
        output: &RealMatrix,
        grad_output: &RealMatrix,
    ) -> Vec<Option<RealMatrix>>;
}

struct LstmCache {
    /// Activated gates per step, `(i, f, g, o)` blocks of width `hidden`.
    gates: Vec<f64>,
    /// Cell state per step.
    cells: Vec<f64>,
}

enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Log(Var, f64),
    AffineCols(Var, Vec<f64>),
    Delta(Var, usize),
    Window(Var, usize),
    Concat(Vec<Var>),
    Lstm {
        x: Var,
        wx: Var,
        wh: Var,
        b: Var,
        reverse: bool,
        cache: LstmCache,
    },
    Cosine {
        a: Var,
        b: Var,
        eps: f64,
    },
    Mse(Var, Var),
    SumSquares(Var),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: RealMatrix,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node<'a> {
    value: Cow<'a, RealMatrix>,
    op: Op,
    needs_grad: bool,
}

/// Wengert list for one forward pass. Parameters and constants are borrowed,
/// so a tape is cheap to build per utterance.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &RealMatrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'a, RealMatrix>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: RealMatrix) -> Result<Var> {
        value.ensure_finite("constant")?;
        Ok(self.push(Cow::Owned(value), Op::Leaf, false))
    }

    pub fn constant_ref(&mut self, value: &'a RealMatrix) -> Result<Var> {
        value.ensure_finite("constant")?;
        Ok(self.push(Cow::Borrowed(value), Op::Leaf, false))
    }

    /// Input whose gradient is wanted (retrieve with [`Backward::grad`]).
    pub fn variable(&mut self, value: RealMatrix) -> Result<Var> {
        value.ensure_finite("variable")?;
        Ok(self.push(Cow::Owned(value), Op::Leaf, true))
    }

    /// Trainable parameter: its gradient is reported under `name`.
    pub fn param(&mut self, params: &'a ParameterSet, name: &str) -> Result<Var> {
        let value = params.get(name)?;
        Ok(self.push(Cow::Borrowed(value), Op::Param(name.to_string()), true))
    }

    /// Parameter value treated as a frozen constant.
    pub fn frozen(&mut self, params: &'a ParameterSet, name: &str) -> Result<Var> {
        let value = params.get(name)?;
        Ok(self.push(Cow::Borrowed(value), Op::Leaf, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(dim_err("matmul", va.shape(), vb.shape()));
        }
        let out = va.matmul(vb)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b), ng))
    }

    /// `x + b` with the `1 x D` row `b` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(dim_err("add_row", vx.shape(), vb.shape()));
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(vb.as_slice()) {
                *o += bv;
            }
        }
        let ng = self.needs(&[x, b]);
        Ok(self.push(Cow::Owned(out), Op::AddRow(x, b), ng))
    }

    fn elementwise(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<RealMatrix> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err(what, va.shape(), vb.shape()));
        }
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(RealMatrix::from_vec_unchecked(va.rows(), va.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * k);
        let ng = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Scale(x, k), ng))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        if act == Activation::Identity {
            return Ok(x);
        }
        let out = self.value(x).map(|v| act.apply(v));
        let ng = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Act(x, act), ng))
    }

    /// `act(x W + b)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
        let h = self.matmul(x, w)?;
        let h = self.add_row(h, b)?;
        self.activation(h, act)
    }

    /// `ln(x + eps)`; requires `x + eps > 0` everywhere.
    pub fn log(&mut self, x: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        if let Some(bad) = vx.as_slice().iter().find(|v| **v + eps <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {}", bad + eps)));
        }
        let out = vx.map(|v| (v + eps).ln());
        let ng = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Log(x, eps), ng))
    }

    /// `x[:, j] * scale[j] + shift[j]` with constant per-column coefficients.
    pub fn affine_cols(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let vx = self.value(x);
        if scale.len() != vx.cols() || shift.len() != vx.cols() {
            return Err(Error::Dimension(format!(
                "affine_cols: {} columns, {} scales, {} shifts",
                vx.cols(),
                scale.len(),
                shift.len()
            )));
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for ((o, s), t) in out.row_mut(r).iter_mut().zip(scale).zip(shift) {
                *o = *o * s + t;
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::AffineCols(x, scale.to_vec()), ng))
    }

    /// Regression deltas over time (rows) with edge replication.
    pub fn delta(&mut self, x: Var, window: usize) -> Result<Var> {
        let out = delta_matrix(self.value(x), window);
        let ng = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Delta(x, window), ng))
    }

    /// Stack `width` (odd) neighbouring rows around each row, edge-replicated.
    pub fn window(&mut self, x: Var, width: usize) -> Result<Var> {
        if width.is_multiple_of(2) {
            return Err(Error::Config(format!("context window must be odd, got {width}")));
        }
        if width == 1 {
            return Ok(x);
        }
        let out = window_matrix(self.value(x), width);
        let ng = self.needs(&[x]);
        Ok(self.push(Cow::Owned(out), Op::Window(x, width), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&RealMatrix> = parts.iter().map(|v| self.value(*v)).collect();
        let out = RealMatrix::hcat(&vals)?;
        let ng = self.needs(parts);
        Ok(self.push(Cow::Owned(out), Op::Concat(parts.to_vec()), ng))
    }

    /// One LSTM direction over a `T x Din` sequence.
    ///
    /// `wx: Din x 4H`, `wh: H x 4H`, `b: 1 x 4H`, gate blocks ordered
    /// (input, forget, cell, output). Zero initial state. With `reverse`,
    /// the recurrence runs from the last row to the first; output row `t`
    /// is always the hidden state at time `t`.
    pub fn lstm(&mut self, x: Var, wx: Var, wh: Var, b: Var, reverse: bool) -> Result<Var> {
        let (vx, vwx, vwh, vb) = (self.value(x), self.value(wx), self.value(wh), self.value(b));
        let t_len = vx.rows();
        if t_len == 0 {
            return Err(Error::EmptySequence("lstm input has no frames".into()));
        }
        let hidden = vwh.rows();
        let g4 = 4 * hidden;
        if vwh.cols() != g4 || vwx.cols() != g4 || vwx.rows() != vx.cols() || vb.shape() != (1, g4) {
            return Err(Error::Dimension(format!(
                "lstm: x {:?}, wx {:?}, wh {:?}, b {:?}",
                vx.shape(),
                vwx.shape(),
                vwh.shape(),
                vb.shape()
            )));
        }
        let mut pre = vec![0.0; t_len * g4];
        for r in 0..t_len {
            pre[r * g4..(r + 1) * g4].copy_from_slice(vb.as_slice());
        }
        gemm(G::N, G::N, t_len, vx.cols(), g4, vx.as_slice(), vwx.as_slice(), 1.0, &mut pre);

        let mut gates = vec![0.0; t_len * g4];
        let mut cells = vec![0.0; t_len * hidden];
        let mut out = vec![0.0; t_len * hidden];
        let mut h_prev = vec![0.0; hidden];
        let mut c_prev = vec![0.0; hidden];
        let whs = vwh.as_slice();
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let g = &mut pre[t * g4..(t + 1) * g4];
            for (k, hk) in h_prev.iter().enumerate() {
                if *hk != 0.0 {
                    let wrow = &whs[k * g4..(k + 1) * g4];
                    for (gj, wj) in g.iter_mut().zip(wrow) {
                        *gj += hk * wj;
                    }
                }
            }
            let act = &mut gates[t * g4..(t + 1) * g4];
            for j in 0..hidden {
                let i_g = sigmoid(g[j]);
                let f_g = sigmoid(g[hidden + j]);
                let c_g = g[2 * hidden + j].tanh();
                let o_g = sigmoid(g[3 * hidden + j]);
                act[j] = i_g;
                act[hidden + j] = f_g;
                act[2 * hidden + j] = c_g;
                act[3 * hidden + j] = o_g;
                let c = f_g * c_prev[j] + i_g * c_g;
                cells[t * hidden + j] = c;
                let h = o_g * c.tanh();
                out[t * hidden + j] = h;
                c_prev[j] = c;
                h_prev[j] = h;
            }
        }
        let out = RealMatrix::from_vec_unchecked(t_len, hidden, out);
        out.ensure_finite("lstm output")?;
        let ng = self.needs(&[x, wx, wh, b]);
        Ok(self.push(
            Cow::Owned(out),
            Op::Lstm {
                x,
                wx,
                wh,
                b,
                reverse,
                cache: LstmCache { gates, cells },
            },
            ng,
        ))
    }

    /// Mean over rows of `1 - cos(a_t, b_t)` with `eps` added to the norm
    /// product. Returns a `1 x 1` value.
    pub fn cosine_distance(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err("cosine_distance", va.shape(), vb.shape()));
        }
        if va.rows() == 0 {
            return Err(Error::EmptySequence("cosine distance over zero frames".into()));
        }
        let total: f64 = (0..va.rows())
            .map(|r| 1.0 - cosine_similarity(va.row(r), vb.row(r), eps))
            .sum();
        let out = RealMatrix::scalar(total / va.rows() as f64);
        let ng = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Cosine { a, b, eps }, ng))
    }

    /// Mean of squared differences over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err("mse", va.shape(), vb.shape()));
        }
        let n = va.len().max(1) as f64;
        let s: f64 = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(RealMatrix::scalar(s / n)), Op::Mse(a, b), ng))
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).as_slice().iter().map(|v| v * v).sum();
        let ng = self.needs(&[x]);
        Ok(self.push(Cow::Owned(RealMatrix::scalar(s)), Op::SumSquares(x), ng))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        if labels.len() != vl.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                vl.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= vl.cols()) {
            return Err(Error::Dimension(format!(
                "label {bad} out of range for {} classes",
                vl.cols()
            )));
        }
        let mut probs = RealMatrix::zeros(vl.rows(), vl.cols());
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = vl.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - m).exp() / z;
            }
            loss -= row[label] - m - z.ln();
        }
        let n = labels.len().max(1) as f64;
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Cow::Owned(RealMatrix::scalar(loss / n)),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Record a caller-computed value produced by `op` from `inputs`.
    pub fn custom(&mut self, inputs: &[Var], output: RealMatrix, op: Box<dyn CustomOp>) -> Result<Var> {
        output.ensure_finite(op.name())?;
        let ng = self.needs(inputs);
        Ok(self.push(
            Cow::Owned(output),
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            ng,
        ))
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Backward> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("loss is {}", lv.as_slice()[0])));
        }
        let mut grads: Vec<Option<RealMatrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(RealMatrix::scalar(1.0));
        let mut params = Gradients::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }
        Ok(Backward { grads, params })
    }

    fn propagate(
        &self,
        node: &Node<'_>,
        g: &RealMatrix,
        grads: &mut [Option<RealMatrix>],
        params: &mut Gradients,
    ) {
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let send = |grads: &mut [Option<RealMatrix>], v: Var, d: RealMatrix| match &mut grads[v.0] {
            Some(slot) => slot.add_assign(&d),
            None => grads[v.0] = Some(d),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(name) => params.add(name, g.clone()),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if wants(*a) {
                    let mut d = vec![0.0; m * k];
                    gemm(G::N, G::T, m, n, k, g.as_slice(), vb.as_slice(), 0.0, &mut d);
                    send(grads, *a, RealMatrix::from_vec_unchecked(m, k, d));
                }
                if wants(*b) {
                    let mut d = vec![0.0; k * n];
                    gemm(G::T, G::N, k, m, n, va.as_slice(), g.as_slice(), 0.0, &mut d);
                    send(grads, *b, RealMatrix::from_vec_unchecked(k, n, d));
                }
            }
            Op::AddRow(x, b) => {
                if wants(*x) {
                    send(grads, *x, g.clone());
                }
                if wants(*b) {
                    send(grads, *b, RealMatrix::from_vec_unchecked(1, g.cols(), g.column_sums()));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    send(grads, *a, g.clone());
                }
                if wants(*b) {
                    send(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    send(grads, *a, g.clone());
                }
                if wants(*b) {
                    send(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    send(grads, *a, zip_map(g, vb, |x, y| x * y));
                }
                if wants(*b) {
                    send(grads, *b, zip_map(g, va, |x, y| x * y));
                }
            }
            Op::Scale(x, k) => send(grads, *x, g.map(|v| v * k)),
            Op::Act(x, act) => {
                let vx = self.value(*x);
                let y = &node.value;
                let data = g
                    .as_slice()
                    .iter()
                    .zip(vx.as_slice().iter().zip(y.as_slice()))
                    .map(|(gi, (xi, yi))| gi * act.derivative(*xi, *yi))
                    .collect();
                send(grads, *x, RealMatrix::from_vec_unchecked(g.rows(), g.cols(), data));
            }
            Op::Log(x, eps) => {
                let vx = self.value(*x);
                send(grads, *x, zip_map(g, vx, |gi, xi| gi / (xi + eps)));
            }
            Op::AffineCols(x, scale) => {
                let mut d = g.clone();
                for r in 0..d.rows() {
                    for (v, s) in d.row_mut(r).iter_mut().zip(scale) {
                        *v *= s;
                    }
                }
                send(grads, *x, d);
            }
            Op::Delta(x, window) => send(grads, *x, delta_transpose(g, *window)),
            Op::Window(x, width) => {
                let cols = self.value(*x).cols();
                send(grads, *x, window_transpose(g, *width, cols));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if wants(*p) {
                        send(grads, *p, g.slice_cols(start, start + w));
                    }
                    start += w;
                }
            }
            Op::Lstm {
                x,
                wx,
                wh,
                b,
                reverse,
                cache,
            } => {
                let d = self.lstm_backward(node, g, *x, *wx, *wh, *reverse, cache);
                let [dx, dwx, dwh, db] = d;
                if wants(*x) {
                    send(grads, *x, dx);
                }
                if wants(*wx) {
                    send(grads, *wx, dwx);
                }
                if wants(*wh) {
                    send(grads, *wh, dwh);
                }
                if wants(*b) {
                    send(grads, *b, db);
                }
            }
            Op::Cosine { a, b, eps } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = g.as_slice()[0] / va.rows() as f64;
                let (mut da, mut db) = (RealMatrix::zeros(va.rows(), va.cols()), RealMatrix::zeros(vb.rows(), vb.cols()));
                for r in 0..va.rows() {
                    cosine_grad(va.row(r), vb.row(r), *eps, -scale, da.row_mut(r), db.row_mut(r));
                }
                if wants(*a) {
                    send(grads, *a, da);
                }
                if wants(*b) {
                    send(grads, *b, db);
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.as_slice()[0] / va.len().max(1) as f64;
                let d = zip_map(va, vb, |x, y| k * (x - y));
                if wants(*b) {
                    send(grads, *b, d.map(|v| -v));
                }
                if wants(*a) {
                    send(grads, *a, d);
                }
            }
            Op::SumSquares(x) => {
                let k = 2.0 * g.as_slice()[0];
                send(grads, *x, self.value(*x).map(|v| k * v));
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let k = g.as_slice()[0] / labels.len().max(1) as f64;
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    let row = d.row_mut(r);
                    row[l] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= k);
                }
                send(grads, *logits, d);
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&RealMatrix> = inputs.iter().map(|v| self.value(*v)).collect();
                let ds = op.backward(&vals, &node.value, g);
                for (v, d) in inputs.iter().zip(ds) {
                    if let Some(d) = d {
                        if wants(*v) {
                            send(grads, *v, d);
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_backward(
        &self,
        node: &Node<'_>,
        g: &RealMatrix,
        x: Var,
        wx: Var,
        wh: Var,
        reverse: bool,
        cache: &LstmCache,
    ) -> [RealMatrix; 4] {
        let (vx, vwx, vwh) = (self.value(x), self.value(wx), self.value(wh));
        let t_len = vx.rows();
        let hidden = vwh.rows();
        let g4 = 4 * hidden;
        let h_all = node.value.as_slice();
        let whs = vwh.as_slice();

        let mut dgates = vec![0.0; t_len * g4];
        // Previous hidden state per time step, in time order (zeros at start).
        let mut h_prev_all = vec![0.0; t_len * hidden];
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];

        for step in (0..t_len).rev() {
            let t = if reverse { t_len - 1 - step } else { step };
            let prev_t = if step == 0 {
                None
            } else if reverse {
                Some(t + 1)
            } else {
                Some(t - 1)
            };
            if let Some(p) = prev_t {
                h_prev_all[t * hidden..(t + 1) * hidden].copy_from_slice(&h_all[p * hidden..(p + 1) * hidden]);
            }
            let act = &cache.gates[t * g4..(t + 1) * g4];
            let cells = &cache.cells[t * hidden..(t + 1) * hidden];
            let dg = &mut dgates[t * g4..(t + 1) * g4];
            for j in 0..hidden {
                let (i_g, f_g, c_g, o_g) = (act[j], act[hidden + j], act[2 * hidden + j], act[3 * hidden + j]);
                let c = cells[j];
                let c_prev = prev_t.map_or(0.0, |p| cache.cells[p * hidden + j]);
                let tc = c.tanh();
                let dh = g.as_slice()[t * hidden + j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
                let d_i = dc * c_g;
                let d_c = dc * i_g;
                let d_f = dc * c_prev;
                dc_next[j] = dc * f_g;
                dg[j] = d_i * i_g * (1.0 - i_g);
                dg[hidden + j] = d_f * f_g * (1.0 - f_g);
                dg[2 * hidden + j] = d_c * (1.0 - c_g * c_g);
                dg[3 * hidden + j] = d_o * o_g * (1.0 - o_g);
            }
            // dh_prev = dgates . wh^T
            for (k, dhk) in dh_next.iter_mut().enumerate() {
                let wrow = &whs[k * g4..(k + 1) * g4];
                *dhk = wrow.iter().zip(dg.iter()).map(|(w, d)| w * d).sum();
            }
        }

        let din = vx.cols();
        let mut dx = vec![0.0; t_len * din];
        gemm(G::N, G::T, t_len, g4, din, &dgates, vwx.as_slice(), 0.0, &mut dx);
        let mut dwx = vec![0.0; din * g4];
        gemm(G::T, G::N, din, t_len, g4, vx.as_slice(), &dgates, 0.0, &mut dwx);
        let mut dwh = vec![0.0; hidden * g4];
        gemm(G::T, G::N, hidden, t_len, g4, &h_prev_all, &dgates, 0.0, &mut dwh);
        let dgm = RealMatrix::from_vec_unchecked(t_len, g4, dgates);
        let db = RealMatrix::from_vec_unchecked(1, g4, dgm.column_sums());
        [
            RealMatrix::from_vec_unchecked(t_len, din, dx),
            RealMatrix::from_vec_unchecked(din, g4, dwx),
            RealMatrix::from_vec_unchecked(hidden, g4, dwh),
            db,
        ]
    }
}

/// Result of [`Tape::backward`].
pub struct Backward {
    grads: Vec<Option<RealMatrix>>,
    params: Gradients,
}

impl Backward {
    /// Gradient of the loss w.r.t. a tracked node (`variable`, `param`, or
    /// any intermediate that lies on a gradient path).
    pub fn grad(&self, v: Var) -> Option<&RealMatrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param_grads(&self) -> &Gradients {
        &self.params
    }

    pub fn into_param_grads(self) -> Gradients {
        self.params
    }
}

impl RealMatrix {
    pub(crate) fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols()];
        for r in 0..self.rows() {
            for (acc, v) in s.iter_mut().zip(self.row(r)) {
                *acc += v;
            }
        }
        s
    }
}

fn zip_map(a: &RealMatrix, b: &RealMatrix, f: impl Fn(f64, f64) -> f64) -> RealMatrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| f(*x, *y)).collect();
    RealMatrix::from_vec_unchecked(a.rows(), a.cols(), data)
}

/// `a.b / (|a||b| + eps)`.
pub fn cosine_similarity(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt() + eps)
}

/// Accumulate `k * d cos / d a` into `da` and `k * d cos / d b` into `db`.
fn cosine_grad(a: &[f64], b: &[f64], eps: f64, k: f64, da: &mut [f64], db: &mut [f64]) {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    let n = na * nb + eps;
    // d/da [ab / (|a||b| + eps)] = b/n - ab |b| a / (|a| n^2)
    let ca = if na > 0.0 { ab * nb / (na * n * n) } else { 0.0 };
    let cb = if nb > 0.0 { ab * na / (nb * n * n) } else { 0.0 };
    for i in 0..a.len() {
        da[i] += k * (b[i] / n - ca * a[i]);
        db[i] += k * (a[i] / n - cb * b[i]);
    }
}

fn clamp_index(t: isize, len: usize) -> usize {
    t.clamp(0, len as isize - 1) as usize
}

/// Regression deltas `sum_n n (x[t+n] - x[t-n]) / (2 sum_n n^2)` with
/// edge frames replicated.
pub fn delta_matrix(x: &RealMatrix, window: usize) -> RealMatrix {
    let (t_len, d) = x.shape();
    let mut out = RealMatrix::zeros(t_len, d);
    if t_len == 0 || window == 0 {
        return out;
    }
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    for t in 0..t_len {
        for n in 1..=window {
            let fwd = x.row(clamp_index(t as isize + n as isize, t_len));
            let bwd = x.row(clamp_index(t as isize - n as isize, t_len));
            let w = n as f64 / denom;
            for ((o, f), b) in out.row_mut(t).iter_mut().zip(fwd).zip(bwd) {
                *o += w * (f - b);
            }
        }
    }
    out
}

fn delta_transpose(g: &RealMatrix, window: usize) -> RealMatrix {
    let (t_len, d) = g.shape();
    let mut out = RealMatrix::zeros(t_len, d);
    if window == 0 {
        return out;
    }
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    for t in 0..t_len {
        for n in 1..=window {
            let w = n as f64 / denom;
            let fwd = clamp_index(t as isize + n as isize, t_len);
            let bwd = clamp_index(t as isize - n as isize, t_len);
            for j in 0..d {
                let gv = w * g.get(t, j);
                out.as_mut_slice()[fwd * d + j] += gv;
                out.as_mut_slice()[bwd * d + j] -= gv;
            }
        }
    }
    out
}

/// Rows `t - r ..= t + r` (edge-replicated) concatenated, `r = width / 2`.
pub fn window_matrix(x: &RealMatrix, width: usize) -> RealMatrix {
    let (t_len, d) = x.shape();
    let r = (width / 2) as isize;
    let mut data = Vec::with_capacity(t_len * d * width);
    for t in 0..t_len as isize {
        for j in -r..=r {
            data.extend_from_slice(x.row(clamp_index(t + j, t_len)));
        }
    }
    RealMatrix::from_vec_unchecked(t_len, d * width, data)
}

fn window_transpose(g: &RealMatrix, width: usize, d: usize) -> RealMatrix {
    let t_len = g.rows();
    let r = (width / 2) as isize;
    let mut out = RealMatrix::zeros(t_len, d);
    for t in 0..t_len as isize {
        let row = g.row(t as usize);
        for (slot, j) in (-r..=r).enumerate() {
            let src = clamp_index(t + j, t_len);
            for (o, v) in out.row_mut(src).iter_mut().zip(&row[slot * d..(slot + 1) * d]) {
                *o += v;
            }
        }
    }
    out
}
