//! Eager reverse-mode tape.
//!
//! Every op computes its value when it is recorded; [`Graph::backward`]
//! walks the tape in reverse (the tape order is a topological order) and
//! accumulates gradients into trainable leaves. Nodes that do not depend on
//! any trainable leaf are never visited.
//!
//! Tensors are batch-major: the leading dimension is the row/batch axis and
//! most ops treat the remaining dimensions as one flattened feature axis.

use crate::error::{Error, Result};
use crate::nn::tensor::gemm;
use crate::nn::{Grads, ParamId, ParamStore, Tensor};

/// Probabilities fed to log-losses are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        a: Var,
        scale: f64,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LogProb(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    GatherRows {
        a: Var,
        idx: Vec<usize>,
    },
    Reshape(Var),
    SoftmaxRows(Var),
    SegmentSoftmax {
        a: Var,
        seg: Vec<usize>,
    },
    SegmentWeightedSum {
        w: Var,
        f: Var,
        seg: Vec<usize>,
    },
    RowDot(Var, Var),
    PickCols {
        a: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Lstm(Box<LstmCache>),
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<f64>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    StepwiseL2 {
        a: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct LstmCache {
    x: Var,
    h: Var,
    c: Var,
    w_ih: Var,
    w_hh: Var,
    b: Var,
    /// Activated gates `[i, f, g, o]`, `[n, 4H]`.
    gates: Vec<f64>,
    /// `tanh(c')`, `[n, H]`.
    tanh_c: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward pass: gradients of trainable leaves and parameters.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a leaf or parameter node; zero-sized `None`
    /// when the node does not influence the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

fn col_sums(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A free input that receives a gradient (used for input-gradient checks).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bind a trainable parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bind a parameter as a constant; no gradient is collected for it.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    /// Copy of `v`'s value with no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.value(x), self.value(w));
        if ws.shape().len() != 2 || xs.cols() != ws.shape()[0] {
            return Err(Error::shape("linear", xs.shape(), ws.shape()));
        }
        let (n, i, o) = (xs.rows(), ws.shape()[0], ws.shape()[1]);
        let mut out = vec![0.0; n * o];
        if let Some(b) = b {
            let bs = self.value(b);
            if bs.len() != o {
                return Err(Error::shape("linear bias", ws.shape(), bs.shape()));
            }
            for r in 0..n {
                out[r * o..(r + 1) * o].copy_from_slice(bs.data());
            }
        }
        gemm(n, i, o, xs.data(), false, ws.data(), false, &mut out, 1.0);
        let t = Tensor::new(&[n, o], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(t, Op::Linear { x, w, b }, &inputs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape(), ta.data().iter().map(|x| f(*x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = self.map(a, |x| scale * x + shift);
        self.push(t, Op::Affine { a, scale }, &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.map(a, |x| if x > 0.0 { x } else { slope * x });
        self.push(t, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    /// `ln(clamp(a, ε, 1-ε))`, for probabilities.
    pub fn log_prob(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.clamp(PROB_EPS, 1.0 - PROB_EPS).ln());
        self.push(t, Op::LogProb(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != n {
                return Err(Error::shape(
                    "concat_cols",
                    self.value(parts[0]).shape(),
                    t.shape(),
                ));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..n {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let t = Tensor::new(&[n, total], out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, c) = (ta.rows(), ta.cols());
        if start + len > c {
            return Err(Error::shape("slice_cols", ta.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&ta.data()[r * c + start..r * c + start + len]);
        }
        let t = Tensor::new(&[n, len], out)?;
        Ok(self.push(t, Op::SliceCols { a, start }, &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(Error::shape("concat_rows", &first, t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let mut shape = first;
        shape[0] = rows;
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (n, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= n {
                return Err(Error::shape("gather_rows", ta.shape(), &[i]));
            }
            out.extend_from_slice(&ta.data()[i * c..(i + 1) * c]);
        }
        let mut shape = ta.shape().to_vec();
        if shape.len() == 1 {
            shape.push(1);
        }
        shape[0] = idx.len();
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.data().iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let (n, c) = (ta.rows(), ta.cols());
        if c == 0 {
            return Err(Error::invalid("softmax over an empty row"));
        }
        let mut out = ta.data().to_vec();
        for r in 0..n {
            softmax_in_place(&mut out[r * c..(r + 1) * c]);
        }
        let t = Tensor::new(&[n, c], out)?;
        Ok(self.push(t, Op::SoftmaxRows(a), &[a]))
    }

    /// Softmax of a column of scores within consecutive segments of the given
    /// lengths. Empty segments are allowed.
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if ta.cols() != 1 || seg.iter().sum::<usize>() != ta.rows() {
            return Err(Error::shape("segment_softmax", ta.shape(), seg));
        }
        let mut out = ta.data().to_vec();
        let mut off = 0;
        for &len in seg {
            if len > 0 {
                softmax_in_place(&mut out[off..off + len]);
            }
            off += len;
        }
        let t = Tensor::new(&[ta.rows(), 1], out)?;
        Ok(self.push(
            t,
            Op::SegmentSoftmax {
                a,
                seg: seg.to_vec(),
            },
            &[a],
        ))
    }

    /// `out[s] = Σ_{j ∈ s} w[j] · f[j]`; empty segments give zero rows.
    pub fn segment_weighted_sum(&mut self, w: Var, f: Var, seg: &[usize]) -> Result<Var> {
        let (tw, tf) = (self.value(w), self.value(f));
        if tw.cols() != 1 || tw.rows() != tf.rows() || seg.iter().sum::<usize>() != tw.rows() {
            return Err(Error::shape("segment_weighted_sum", tw.shape(), tf.shape()));
        }
        let c = tf.cols();
        let mut out = vec![0.0; seg.len() * c];
        let mut j = 0;
        for (s, &len) in seg.iter().enumerate() {
            let dst = &mut out[s * c..(s + 1) * c];
            for _ in 0..len {
                let wj = tw.data()[j];
                for (d, v) in dst.iter_mut().zip(&tf.data()[j * c..(j + 1) * c]) {
                    *d += wj * v;
                }
                j += 1;
            }
        }
        let t = Tensor::new(&[seg.len(), c], out)?;
        Ok(self.push(
            t,
            Op::SegmentWeightedSum {
                w,
                f,
                seg: seg.to_vec(),
            },
            &[w, f],
        ))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, c) = (ta.rows(), ta.cols());
        let out = (0..n)
            .map(|r| {
                ta.row_slice(r)
                    .iter()
                    .zip(tb.row_slice(r))
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let _ = c;
        let t = Tensor::new(&[n, 1], out)?;
        Ok(self.push(t, Op::RowDot(a, b), &[a, b]))
    }

    /// `out[r] = a[r, idx[r]]`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (n, c) = (ta.rows(), ta.cols());
        if idx.len() != n || idx.iter().any(|&i| i >= c) {
            return Err(Error::shape("pick_cols", ta.shape(), &[idx.len()]));
        }
        let out = idx
            .iter()
            .enumerate()
            .map(|(r, &i)| ta.data()[r * c + i])
            .collect();
        let t = Tensor::new(&[n, 1], out)?;
        Ok(self.push(
            t,
            Op::PickCols {
                a,
                idx: idx.to_vec(),
            },
            &[a],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// One LSTM step with gate order `[i, f, g, o]`.
    ///
    /// Shapes: `x [n, I]`, `h, c [n, H]`, `w_ih [I, 4H]`, `w_hh [H, 4H]`,
    /// `b [4H]`. Returns `[n, 2H]` holding `[h', c']`; see [`Graph::lstm_step`].
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<Var> {
        let (tx, th, tc) = (self.value(x), self.value(h), self.value(c));
        let (twi, twh, tb) = (self.value(w_ih), self.value(w_hh), self.value(b));
        let n = tx.rows();
        let hid = th.cols();
        let inp = tx.cols();
        if twi.shape() != [inp, 4 * hid] {
            return Err(Error::shape("lstm w_ih", tx.shape(), twi.shape()));
        }
        if twh.shape() != [hid, 4 * hid] || tb.len() != 4 * hid {
            return Err(Error::shape("lstm w_hh", th.shape(), twh.shape()));
        }
        if th.rows() != n || tc.shape() != th.shape() {
            return Err(Error::shape("lstm state", th.shape(), tc.shape()));
        }
        let g4 = 4 * hid;
        let mut z = vec![0.0; n * g4];
        for r in 0..n {
            z[r * g4..(r + 1) * g4].copy_from_slice(tb.data());
        }
        gemm(n, inp, g4, tx.data(), false, twi.data(), false, &mut z, 1.0);
        gemm(n, hid, g4, th.data(), false, twh.data(), false, &mut z, 1.0);
        let mut out = vec![0.0; n * 2 * hid];
        let mut tanh_c = vec![0.0; n * hid];
        for r in 0..n {
            let zr = &mut z[r * g4..(r + 1) * g4];
            for k in 0..hid {
                zr[k] = sigmoid(zr[k]);
                zr[hid + k] = sigmoid(zr[hid + k]);
                zr[2 * hid + k] = zr[2 * hid + k].tanh();
                zr[3 * hid + k] = sigmoid(zr[3 * hid + k]);
            }
            let cprev = &tc.data()[r * hid..(r + 1) * hid];
            for k in 0..hid {
                let cn = zr[hid + k] * cprev[k] + zr[k] * zr[2 * hid + k];
                let tcn = cn.tanh();
                tanh_c[r * hid + k] = tcn;
                out[r * 2 * hid + k] = zr[3 * hid + k] * tcn;
                out[r * 2 * hid + hid + k] = cn;
            }
        }
        let t = Tensor::new(&[n, 2 * hid], out)?;
        let cache = LstmCache {
            x,
            h,
            c,
            w_ih,
            w_hh,
            b,
            gates: z,
            tanh_c,
        };
        Ok(self.push(t, Op::Lstm(Box::new(cache)), &[x, h, c, w_ih, w_hh, b]))
    }

    /// LSTM step returning `(h', c')` as separate vars.
    pub fn lstm_step(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<(Var, Var)> {
        let hid = self.value(h).cols();
        let hc = self.lstm_cell(x, h, c, w_ih, w_hh, b)?;
        Ok((self.slice_cols(hc, 0, hid)?, self.slice_cols(hc, hid, hid)?))
    }

    /// 3×3 convolution, stride 1, zero "same" padding. `x [n, H, W, C]`,
    /// `w [9C, O]` with row index `(ky * 3 + kx) * C + c`, `b [O]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let s = tx.shape();
        if s.len() != 4 {
            return Err(Error::shape("conv3x3 input", s, &[0, 0, 0, 0]));
        }
        let (n, hh, ww, cin) = (s[0], s[1], s[2], s[3]);
        if tw.shape().len() != 2 || tw.shape()[0] != 9 * cin {
            return Err(Error::shape("conv3x3 weight", s, tw.shape()));
        }
        let cout = tw.shape()[1];
        if tb.len() != cout {
            return Err(Error::shape("conv3x3 bias", tw.shape(), tb.shape()));
        }
        let k = 9 * cin;
        let pix = n * hh * ww;
        let mut cols = vec![0.0; pix * k];
        let xd = tx.data();
        for bi in 0..n {
            for y in 0..hh {
                for xx in 0..ww {
                    let row = &mut cols[((bi * hh + y) * ww + xx) * k..][..k];
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= hh as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= ww as isize {
                                continue;
                            }
                            let src = ((bi * hh + sy as usize) * ww + sx as usize) * cin;
                            row[(ky * 3 + kx) * cin..][..cin].copy_from_slice(&xd[src..src + cin]);
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; pix * cout];
        for p in 0..pix {
            out[p * cout..(p + 1) * cout].copy_from_slice(tb.data());
        }
        gemm(pix, k, cout, &cols, false, tw.data(), false, &mut out, 1.0);
        let t = Tensor::new(&[n, hh, ww, cout], out)?;
        Ok(self.push(t, Op::Conv3x3 { x, w, b, cols }, &[x, w, b]))
    }

    /// 2×2 max-pool with stride 2 over `[n, H, W, C]`.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 4 || !s[1].is_multiple_of(2) || !s[2].is_multiple_of(2) {
            return Err(Error::shape("max_pool2", s, &[0, 2, 2, 0]));
        }
        let (n, hh, ww, c) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (hh / 2, ww / 2);
        let mut out = vec![0.0; n * oh * ow * c];
        let mut argmax = vec![0usize; out.len()];
        let xd = tx.data();
        for bi in 0..n {
            for y in 0..oh {
                for xx in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = 0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = ((bi * hh + 2 * y + dy) * ww + 2 * xx + dx) * c + ch;
                                if xd[i] > best {
                                    best = xd[i];
                                    best_i = i;
                                }
                            }
                        }
                        let o = ((bi * oh + y) * ow + xx) * c + ch;
                        out[o] = best;
                        argmax[o] = best_i;
                    }
                }
            }
        }
        let t = Tensor::new(&[n, oh, ow, c], out)?;
        Ok(self.push(t, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// Per-row mean over steps of the Euclidean distance between 2D points:
    /// `a, b [n, 2T]` → `[n, 1]`.
    pub fn stepwise_l2(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("stepwise_l2", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, c) = (ta.rows(), ta.cols());
        if c % 2 != 0 || c == 0 {
            return Err(Error::shape("stepwise_l2", ta.shape(), &[2]));
        }
        let steps = c / 2;
        let out = (0..n)
            .map(|r| {
                let (ra, rb) = (ta.row_slice(r), tb.row_slice(r));
                (0..steps)
                    .map(|t| (ra[2 * t] - rb[2 * t]).hypot(ra[2 * t + 1] - rb[2 * t + 1]))
                    .sum::<f64>()
                    / steps as f64
            })
            .collect();
        let t = Tensor::new(&[n, 1], out)?;
        Ok(self.push(t, Op::StepwiseL2 { a, b }, &[a, b]))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(Error::shape("backward root", rt.shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::full(rt.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let keep = matches!(node.op, Op::Leaf | Op::Param(_));
            let g = if keep {
                match &grads[i] {
                    Some(g) => g.clone(),
                    None => continue,
                }
            } else {
                match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_data(&self, grads: &mut [Option<Tensor>], v: Var, data: Vec<f64>) {
        let shape = self.value(v).shape().to_vec();
        self.acc(grads, v, Tensor::new(&shape, data).expect("grad shape"));
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, i, o) = (tx.rows(), tw.shape()[0], tw.shape()[1]);
                if self.ng(*x) {
                    let mut dx = vec![0.0; n * i];
                    gemm(n, o, i, gd, false, tw.data(), true, &mut dx, 0.0);
                    self.acc_data(grads, *x, dx);
                }
                if self.ng(*w) {
                    let mut dw = vec![0.0; i * o];
                    gemm(i, n, o, tx.data(), true, gd, false, &mut dw, 0.0);
                    self.acc_data(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        self.acc_data(grads, *b, col_sums(n, o, gd));
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    self.acc_data(grads, *b, gd.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc_data(
                        grads,
                        *a,
                        gd.iter().zip(tb.data()).map(|(x, y)| x * y).collect(),
                    );
                }
                if self.ng(*b) {
                    self.acc_data(
                        grads,
                        *b,
                        gd.iter().zip(ta.data()).map(|(x, y)| x * y).collect(),
                    );
                }
            }
            Op::Affine { a, scale } => {
                self.acc_data(grads, *a, gd.iter().map(|x| x * scale).collect());
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let d = gd
                    .iter()
                    .zip(ta.data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.acc_data(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let ta = self.value(*a);
                let d = gd
                    .iter()
                    .zip(ta.data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { gv * slope })
                    .collect();
                self.acc_data(grads, *a, d);
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.acc_data(
                    grads,
                    *a,
                    gd.iter().zip(y).map(|(gv, y)| gv * (1.0 - y * y)).collect(),
                );
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.acc_data(
                    grads,
                    *a,
                    gd.iter().zip(y).map(|(gv, y)| gv * y * (1.0 - y)).collect(),
                );
            }
            Op::LogProb(a) => {
                let ta = self.value(*a);
                let d = gd
                    .iter()
                    .zip(ta.data())
                    .map(|(gv, x)| {
                        if *x < PROB_EPS || *x > 1.0 - PROB_EPS {
                            0.0
                        } else {
                            gv / x
                        }
                    })
                    .collect();
                self.acc_data(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let total = g.cols();
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.ng(*p) {
                        let mut d = Vec::with_capacity(n * w);
                        for r in 0..n {
                            d.extend_from_slice(&gd[r * total + off..r * total + off + w]);
                        }
                        self.acc_data(grads, *p, d);
                    }
                    off += w;
                }
            }
            Op::SliceCols { a, start } => {
                let ta = self.value(*a);
                let (n, c) = (ta.rows(), ta.cols());
                let len = g.cols();
                let mut d = vec![0.0; n * c];
                for r in 0..n {
                    d[r * c + start..r * c + start + len]
                        .copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                self.acc_data(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.ng(*p) {
                        self.acc_data(grads, *p, gd[off..off + len].to_vec());
                    }
                    off += len;
                }
            }
            Op::GatherRows { a, idx } => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut d = vec![0.0; ta.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for (dst, src) in d[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&gd[r * c..(r + 1) * c])
                    {
                        *dst += src;
                    }
                }
                self.acc_data(grads, *a, d);
            }
            Op::Reshape(a) => {
                self.acc_data(grads, *a, gd.to_vec());
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let (n, c) = (node.value.rows(), node.value.cols());
                let mut d = vec![0.0; n * c];
                for r in 0..n {
                    let (yr, gr) = (&y[r * c..(r + 1) * c], &gd[r * c..(r + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        d[r * c + k] = yr[k] * (gr[k] - dot);
                    }
                }
                self.acc_data(grads, *a, d);
            }
            Op::SegmentSoftmax { a, seg } => {
                let y = node.value.data();
                let mut d = vec![0.0; y.len()];
                let mut off = 0;
                for &len in seg {
                    let (yr, gr) = (&y[off..off + len], &gd[off..off + len]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..len {
                        d[off + k] = yr[k] * (gr[k] - dot);
                    }
                    off += len;
                }
                self.acc_data(grads, *a, d);
            }
            Op::SegmentWeightedSum { w, f, seg } => {
                let (tw, tf) = (self.value(*w), self.value(*f));
                let c = tf.cols();
                let mut dw = vec![0.0; tw.len()];
                let mut df = vec![0.0; tf.len()];
                let mut j = 0;
                for (s, &len) in seg.iter().enumerate() {
                    let gs = &gd[s * c..(s + 1) * c];
                    for _ in 0..len {
                        let fj = &tf.data()[j * c..(j + 1) * c];
                        dw[j] = fj.iter().zip(gs).map(|(a, b)| a * b).sum();
                        let wj = tw.data()[j];
                        for (dst, gv) in df[j * c..(j + 1) * c].iter_mut().zip(gs) {
                            *dst = wj * gv;
                        }
                        j += 1;
                    }
                }
                if self.ng(*w) {
                    self.acc_data(grads, *w, dw);
                }
                if self.ng(*f) {
                    self.acc_data(grads, *f, df);
                }
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = ta.cols();
                if self.ng(*a) {
                    let d = (0..ta.len()).map(|k| gd[k / c] * tb.data()[k]).collect();
                    self.acc_data(grads, *a, d);
                }
                if self.ng(*b) {
                    let d = (0..tb.len()).map(|k| gd[k / c] * ta.data()[k]).collect();
                    self.acc_data(grads, *b, d);
                }
            }
            Op::PickCols { a, idx } => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut d = vec![0.0; ta.len()];
                for (r, &i) in idx.iter().enumerate() {
                    d[r * c + i] = gd[r];
                }
                self.acc_data(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.acc_data(grads, *a, vec![gd[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.acc_data(grads, *a, vec![gd[0] / n.max(1) as f64; n]);
            }
            Op::Lstm(cache) => self.backprop_lstm(cache, gd, grads),
            Op::Conv3x3 { x, w, b, cols } => {
                let tx = self.value(*x);
                let tw = self.value(*w);
                let s = tx.shape();
                let (n, hh, ww, cin) = (s[0], s[1], s[2], s[3]);
                let cout = tw.shape()[1];
                let k = 9 * cin;
                let pix = n * hh * ww;
                if self.ng(*w) {
                    let mut dw = vec![0.0; k * cout];
                    gemm(k, pix, cout, cols, true, gd, false, &mut dw, 0.0);
                    self.acc_data(grads, *w, dw);
                }
                if self.ng(*b) {
                    self.acc_data(grads, *b, col_sums(pix, cout, gd));
                }
                if self.ng(*x) {
                    let mut dcols = vec![0.0; pix * k];
                    gemm(pix, cout, k, gd, false, tw.data(), true, &mut dcols, 0.0);
                    let mut dx = vec![0.0; tx.len()];
                    for bi in 0..n {
                        for y in 0..hh {
                            for xx in 0..ww {
                                let row = &dcols[((bi * hh + y) * ww + xx) * k..][..k];
                                for ky in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    if sy < 0 || sy >= hh as isize {
                                        continue;
                                    }
                                    for kx in 0..3 {
                                        let sx = xx as isize + kx as isize - 1;
                                        if sx < 0 || sx >= ww as isize {
                                            continue;
                                        }
                                        let dst =
                                            ((bi * hh + sy as usize) * ww + sx as usize) * cin;
                                        let src = &row[(ky * 3 + kx) * cin..][..cin];
                                        for (d, s) in dx[dst..dst + cin].iter_mut().zip(src) {
                                            *d += s;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.acc_data(grads, *x, dx);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut d = vec![0.0; self.value(*x).len()];
                for (o, &i) in argmax.iter().enumerate() {
                    d[i] += gd[o];
                }
                self.acc_data(grads, *x, d);
            }
            Op::StepwiseL2 { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, c) = (ta.rows(), ta.cols());
                let steps = c / 2;
                let mut da = vec![0.0; n * c];
                for r in 0..n {
                    let (ra, rb) = (ta.row_slice(r), tb.row_slice(r));
                    for t in 0..steps {
                        let (dx, dy) = (ra[2 * t] - rb[2 * t], ra[2 * t + 1] - rb[2 * t + 1]);
                        let dist = dx.hypot(dy);
                        if dist > 0.0 {
                            let s = gd[r] / (steps as f64 * dist);
                            da[r * c + 2 * t] = s * dx;
                            da[r * c + 2 * t + 1] = s * dy;
                        }
                    }
                }
                if self.ng(*b) {
                    self.acc_data(grads, *b, da.iter().map(|v| -v).collect());
                }
                if self.ng(*a) {
                    self.acc_data(grads, *a, da);
                }
            }
        }
        Ok(())
    }

    fn backprop_lstm(&self, cache: &LstmCache, gd: &[f64], grads: &mut [Option<Tensor>]) {
        let tx = self.value(cache.x);
        let th = self.value(cache.h);
        let tc = self.value(cache.c);
        let n = tx.rows();
        let inp = tx.cols();
        let hid = th.cols();
        let g4 = 4 * hid;
        let mut dz = vec![0.0; n * g4];
        let mut dc_prev = vec![0.0; n * hid];
        for r in 0..n {
            let gates = &cache.gates[r * g4..(r + 1) * g4];
            let tcn = &cache.tanh_c[r * hid..(r + 1) * hid];
            let cprev = &tc.data()[r * hid..(r + 1) * hid];
            let dh = &gd[r * 2 * hid..r * 2 * hid + hid];
            let dc_ext = &gd[r * 2 * hid + hid..(r + 1) * 2 * hid];
            let dzr = &mut dz[r * g4..(r + 1) * g4];
            for k in 0..hid {
                let (i, f, gg, o) = (
                    gates[k],
                    gates[hid + k],
                    gates[2 * hid + k],
                    gates[3 * hid + k],
                );
                let d_o = dh[k] * tcn[k];
                let dc = dc_ext[k] + dh[k] * o * (1.0 - tcn[k] * tcn[k]);
                dzr[k] = dc * gg * i * (1.0 - i);
                dzr[hid + k] = dc * cprev[k] * f * (1.0 - f);
                dzr[2 * hid + k] = dc * i * (1.0 - gg * gg);
                dzr[3 * hid + k] = d_o * o * (1.0 - o);
                dc_prev[r * hid + k] = dc * f;
            }
        }
        let twi = self.value(cache.w_ih);
        let twh = self.value(cache.w_hh);
        if self.ng(cache.x) {
            let mut dx = vec![0.0; n * inp];
            gemm(n, g4, inp, &dz, false, twi.data(), true, &mut dx, 0.0);
            self.acc_data(grads, cache.x, dx);
        }
        if self.ng(cache.h) {
            let mut dh = vec![0.0; n * hid];
            gemm(n, g4, hid, &dz, false, twh.data(), true, &mut dh, 0.0);
            self.acc_data(grads, cache.h, dh);
        }
        if self.ng(cache.c) {
            self.acc_data(grads, cache.c, dc_prev);
        }
        if self.ng(cache.w_ih) {
            let mut dw = vec![0.0; inp * g4];
            gemm(inp, n, g4, tx.data(), true, &dz, false, &mut dw, 0.0);
            self.acc_data(grads, cache.w_ih, dw);
        }
        if self.ng(cache.w_hh) {
            let mut dw = vec![0.0; hid * g4];
            gemm(hid, n, g4, th.data(), true, &dz, false, &mut dw, 0.0);
            self.acc_data(grads, cache.w_hh, dw);
        }
        if self.ng(cache.b) {
            self.acc_data(grads, cache.b, col_sums(n, g4, &dz));
        }
    }

    /// Collect parameter gradients from a backward pass.
    pub fn param_grads(&self, grads: &Gradients) -> Grads {
        let mut out = Grads::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = grads.grads.get(i).and_then(Option::as_ref) {
                    out.accumulate(id, g);
                }
            }
        }
        out
    }
}
