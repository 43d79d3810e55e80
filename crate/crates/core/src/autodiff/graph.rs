use std::sync::Arc;

use num_complex::Complex;

use super::kernels::{self, ConvGeom, GruTrace, GruWeights, LstmTrace, LstmWeights};
use super::params::{Gradients, ParamId, ParamStore};
use super::Tensor;
use crate::dsp::{SpectralSequence, Stft};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Elu(Var),
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Gather { x: Var, index: Vec<usize> },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Deconv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Depthwise { x: Var, w: Var, b: Var, geom: ConvGeom },
    Gru { x: Var, wih: Var, whh: Var, b: Var, trace: Box<GruTrace<T>> },
    ConvLstm { x: Var, wx: Var, wh: Var, b: Var, geom: ConvGeom, trace: Box<LstmTrace<T>> },
    ComplexGain { m: Var },
    ComplexMulConst { g: Var, y: Arc<SpectralSequence<T>> },
    Istft { x: Var, stft: Arc<Stft<T>>, offset: usize },
    LogMse { a: Var, b: Var },
    WeightedSum { xs: Vec<Var>, weights: Vec<T> },
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Option<Tensor<T>>,
    requires_grad: bool,
}

/// Smallest loss argument inside the logarithm of [`Graph::logmse`].
pub const LOSS_EPSILON: f64 = 1e-12;

/// Single-use computation tape. Parameters are read from a borrowed store.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

fn ensure_finite<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what: what.to_string() })
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("every non-parameter node stores its value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { op, value: Some(value), requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients are tracked only if `requires_grad`.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: Some(value), requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { op: Op::Param(id), value: None, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("add of {:?} and {:?}", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(Op::Add(a, b), out, &[a, b]))
    }

    /// Exponential linear unit with unit slope parameter.
    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v.exp_m1() });
        self.push(Op::Elu(x), out, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), out, &[x]))
    }

    /// Columns `start..start+width` of a `[rows, cols]` tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || start + width > s[1] {
            return shape_err(format!("slice {start}+{width} of {s:?}"));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + width]);
        }
        let out = Tensor::from_vec(&[rows, width], data)?;
        Ok(self.push(Op::SliceCols { x, start }, out, &[x]))
    }

    /// Joins `[rows, w_i]` tensors along columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat of nothing".into());
        };
        let rows = self.shape(first)[0];
        let mut width = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != 2 || s[0] != rows {
                return shape_err(format!("concat member {s:?} with {rows} rows"));
            }
            width += s[1];
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &x in xs {
                let w = self.shape(x)[1];
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::from_vec(&[rows, width], data)?;
        Ok(self.push(Op::ConcatCols(xs.to_vec()), out, xs))
    }

    /// `out[i] = x[index[i]]` (flat indices), reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return shape_err(format!("gather index {bad} out of {}", src.len()));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let out = Tensor::from_vec(shape, data)?;
        Ok(self.push(Op::Gather { x, index }, out, &[x]))
    }

    fn conv_shapes(&self, x: Var, w: Var, b: Var, what: &str) -> Result<(usize, usize, usize, usize, usize)> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[2] || bs != [ws[2]] {
            return shape_err(format!("{what}: input {xs:?}, kernel {ws:?}, bias {bs:?}"));
        }
        Ok((xs[0], xs[1], xs[2], ws[0], ws[2]))
    }

    /// Frequency-axis convolution of `[frames, len, cin]` with `[taps, cin, cout]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (frames, len, cin, taps, cout) = self.conv_shapes(x, w, b, "conv")?;
        let geom = ConvGeom::same(len, taps, stride);
        let mut out = Tensor::zeros(&[frames, geom.len_out, cout]);
        {
            let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
            let od = out.data_mut();
            for t in 0..frames {
                let o = &mut od[t * geom.len_out * cout..(t + 1) * geom.len_out * cout];
                for j in 0..geom.len_out {
                    o[j * cout..(j + 1) * cout].copy_from_slice(bd);
                }
                kernels::conv_frame(&geom, &xd[t * len * cin..(t + 1) * len * cin], wd, cin, cout, o);
            }
        }
        Ok(self.push(Op::Conv { x, w, b, geom }, out, &[x, w, b]))
    }

    /// Transposed convolution doubling (for stride 2) the frequency length;
    /// the kernel is `[taps, cin, cout]` in this op's own channel order.
    pub fn deconv(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (frames, len, cin, taps, cout) = self.conv_shapes(x, w, b, "deconv")?;
        let big = len * stride;
        let geom = ConvGeom::same(big, taps, stride);
        let mut out = Tensor::zeros(&[frames, big, cout]);
        {
            let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
            let od = out.data_mut();
            for t in 0..frames {
                let o = &mut od[t * big * cout..(t + 1) * big * cout];
                for p in 0..big {
                    o[p * cout..(p + 1) * cout].copy_from_slice(bd);
                }
                kernels::deconv_frame(&geom, &xd[t * len * cin..(t + 1) * len * cin], wd, cin, cout, o);
            }
        }
        Ok(self.push(Op::Deconv { x, w, b, geom }, out, &[x, w, b]))
    }

    /// Per-channel convolution with kernel `[taps, c]` and bias `[c]`.
    pub fn depthwise(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 2 || ws[1] != xs[2] || bs != [xs[2]] {
            return shape_err(format!("depthwise: input {xs:?}, kernel {ws:?}, bias {bs:?}"));
        }
        let (frames, len, c, taps) = (xs[0], xs[1], xs[2], ws[0]);
        let geom = ConvGeom::same(len, taps, 1);
        let mut out = Tensor::zeros(&[frames, len, c]);
        {
            let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
            let od = out.data_mut();
            for t in 0..frames {
                let o = &mut od[t * len * c..(t + 1) * len * c];
                for j in 0..len {
                    o[j * c..(j + 1) * c].copy_from_slice(bd);
                }
                kernels::depthwise_frame(&geom, &xd[t * len * c..(t + 1) * len * c], wd, c, o);
            }
        }
        Ok(self.push(Op::Depthwise { x, w, b, geom }, out, &[x, w, b]))
    }

    /// GRU over `[frames, din]`, returning `[frames, hidden]`.
    pub fn gru(&mut self, x: Var, wih: Var, whh: Var, b: Var, h0: Option<&[T]>) -> Result<Var> {
        let (xs, is, hs, bs) = (self.shape(x), self.shape(wih), self.shape(whh), self.shape(b));
        if xs.len() != 2 || is.len() != 2 || is[0] != xs[1] || is[1] % 3 != 0 {
            return shape_err(format!("gru: input {xs:?}, wih {is:?}"));
        }
        let h = is[1] / 3;
        if hs != [h, 3 * h] || bs != [3 * h] || h0.is_some_and(|s| s.len() != h) {
            return shape_err(format!("gru: whh {hs:?}, bias {bs:?} for hidden {h}"));
        }
        let frames = xs[0];
        let w = GruWeights {
            wih: self.value(wih).data(),
            whh: self.value(whh).data(),
            b: self.value(b).data(),
            din: xs[1],
            hidden: h,
        };
        let zero = vec![T::zero(); h];
        let trace = kernels::gru_forward(&w, self.value(x).data(), frames, h0.unwrap_or(&zero));
        let out = Tensor::from_vec(&[frames, h], trace.outputs(h).to_vec())?;
        if let Some(step) = out.data().chunks(h).position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { what: format!("gru state at step {step}") });
        }
        Ok(self.push(Op::Gru { x, wih, whh, b, trace: Box::new(trace) }, out, &[x, wih, whh, b]))
    }

    /// Final GRU state of a node created by [`Graph::gru`].
    pub fn gru_final_state(&self, v: Var) -> Option<Vec<T>> {
        match &self.nodes[v.0].op {
            Op::Gru { trace, .. } => {
                let h = self.shape(v)[1];
                Some(trace.final_state(h).to_vec())
            }
            _ => None,
        }
    }

    /// ConvLSTM over `[frames, len, cin]` with kernels `wx [taps, cin, 4f]`,
    /// `wh [taps, f, 4f]`; returns hidden states `[frames, len, f]`.
    pub fn convlstm(&mut self, x: Var, wx: Var, wh: Var, b: Var, state: Option<(&[T], &[T])>) -> Result<Var> {
        let (xs, ws, hs, bs) = (self.shape(x), self.shape(wx), self.shape(wh), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[2] || ws[2] % 4 != 0 {
            return shape_err(format!("convlstm: input {xs:?}, wx {ws:?}"));
        }
        let f = ws[2] / 4;
        if hs != [ws[0], f, 4 * f] || bs != [4 * f] {
            return shape_err(format!("convlstm: wh {hs:?}, bias {bs:?}"));
        }
        let (frames, len, cin) = (xs[0], xs[1], xs[2]);
        let geom = ConvGeom::same(len, ws[0], 1);
        if state.is_some_and(|(h, c)| h.len() != len * f || c.len() != len * f) {
            return shape_err("convlstm: initial state size".into());
        }
        let w = LstmWeights {
            wx: self.value(wx).data(),
            wh: self.value(wh).data(),
            b: self.value(b).data(),
            cin,
            filters: f,
            geom,
        };
        let zero = vec![T::zero(); len * f];
        let (h0, c0) = state.unwrap_or((&zero, &zero));
        let trace = kernels::convlstm_forward(&w, self.value(x).data(), frames, h0, c0);
        let out = Tensor::from_vec(&[frames, len, f], trace.outputs(len * f).to_vec())?;
        ensure_finite(&out, "convlstm state")?;
        Ok(self.push(Op::ConvLstm { x, wx, wh, b, geom, trace: Box::new(trace) }, out, &[x, wx, wh, b]))
    }

    pub fn convlstm_final_state(&self, v: Var) -> Option<(Vec<T>, Vec<T>)> {
        match &self.nodes[v.0].op {
            Op::ConvLstm { trace, .. } => {
                let s = self.shape(v);
                let (h, c) = trace.final_state(s[1] * s[2]);
                Some((h.to_vec(), c.to_vec()))
            }
            _ => None,
        }
    }

    /// Effective complex gain `tanh(|M|)·M/|M|` of the first `bins` entries of
    /// a `[frames, len, 2]` mask; zero when `|M|` is below the mask epsilon.
    pub fn complex_gain(&mut self, m: Var, bins: usize) -> Result<Var> {
        let s = self.shape(m).to_vec();
        if s.len() != 3 || s[2] != 2 || s[1] < bins {
            return shape_err(format!("complex gain of {s:?} for {bins} bins"));
        }
        let (frames, len) = (s[0], s[1]);
        let md = self.value(m).data();
        let mut out = Tensor::zeros(&[frames, bins, 2]);
        let od = out.data_mut();
        for t in 0..frames {
            for k in 0..bins {
                let i = (t * len + k) * 2;
                let g = crate::dsp::mask_gain(Complex::new(md[i], md[i + 1]));
                let o = (t * bins + k) * 2;
                od[o] = g.re;
                od[o + 1] = g.im;
            }
        }
        Ok(self.push(Op::ComplexGain { m }, out, &[m]))
    }

    /// Elementwise complex product of `[frames, bins, 2]` with a fixed spectrum.
    pub fn complex_mul_const(&mut self, g: Var, y: Arc<SpectralSequence<T>>) -> Result<Var> {
        let s = self.shape(g);
        if s != [y.frames(), y.bins(), 2] {
            return shape_err(format!("complex product of {s:?} with {}×{} spectrum", y.frames(), y.bins()));
        }
        let gd = self.value(g).data();
        let mut out = Tensor::zeros(s);
        let od = out.data_mut();
        for (i, yv) in y.as_slice().iter().enumerate() {
            let p = Complex::new(gd[2 * i], gd[2 * i + 1]) * yv;
            od[2 * i] = p.re;
            od[2 * i + 1] = p.im;
        }
        Ok(self.push(Op::ComplexMulConst { g, y }, out, &[g]))
    }

    /// Overlap-add resynthesis of `[frames, bins, 2]`, keeping `len` samples
    /// starting at `offset` of the synthesized signal.
    pub fn istft(&mut self, x: Var, stft: Arc<Stft<T>>, offset: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        let bins = stft.params().bins();
        if s.len() != 3 || s[1] != bins || s[2] != 2 {
            return shape_err(format!("istft input {s:?}"));
        }
        let frames = s[0];
        let spec = SpectralSequence::from_vec(
            frames,
            bins,
            self.value(x).data().chunks(2).map(|c| Complex::new(c[0], c[1])).collect(),
        )?;
        let full = stft.synthesize(&spec)?;
        if offset + len > full.len() {
            return shape_err(format!("istft crop {offset}+{len} of {} samples", full.len()));
        }
        let out = Tensor::from_vec(&[len], full[offset..offset + len].to_vec())?;
        Ok(self.push(Op::Istft { x, stft, offset }, out, &[x]))
    }

    /// `10·log10(Σ (a − b)² + ε)`.
    pub fn logmse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("logmse of {:?} and {:?}", self.shape(a), self.shape(b)));
        }
        let sum = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        let loss = T::of(10.0) * (sum + T::of(LOSS_EPSILON)).log10();
        Ok(self.push(Op::LogMse { a, b }, Tensor::scalar(loss), &[a, b]))
    }

    /// `Σ_i w_i · x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, xs: &[Var], weights: &[T]) -> Result<Var> {
        if xs.len() != weights.len() || xs.iter().any(|&x| self.value(x).len() != 1) {
            return shape_err("weighted sum needs one weight per scalar input".into());
        }
        let v = xs.iter().zip(weights).fold(T::zero(), |acc, (&x, &w)| acc + w * self.value(x).item());
        Ok(self.push(Op::WeightedSum { xs: xs.to_vec(), weights: weights.to_vec() }, Tensor::scalar(v), xs))
    }

    /// Gradient of a node after [`Graph::backward`], if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Reverse pass from a scalar `loss`; returns gradients for every
    /// registered parameter (zero where unused).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return shape_err(format!("backward from non-scalar of shape {:?}", self.shape(loss)));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Tensor::from_vec(self.shape(loss), vec![T::one()])?;
        self.grads[loss.0] = Some(seed);
        let mut out = Gradients::zeros_like(self.params);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => out.get_mut(*id).add_assign(&g),
                _ => self.backprop_node(i, &g)?,
            }
            self.grads[i] = Some(g);
        }
        Ok(out)
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn zeros_for(&self, v: Var) -> Option<Tensor<T>> {
        self.wants(v).then(|| Tensor::zeros(self.shape(v)))
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor<T>) -> Result<()> {
        let mut updates: Vec<(Var, Tensor<T>)> = Vec::new();
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        updates.push((v, g.clone()));
                    }
                }
            }
            Op::Elu(x) => {
                let out = node.value.as_ref().expect("value");
                let mut d = g.clone();
                for (dv, &o) in d.data_mut().iter_mut().zip(out.data()) {
                    if o <= T::zero() {
                        *dv = *dv * (o + T::one());
                    }
                }
                updates.push((*x, d));
            }
            Op::Reshape(x) => {
                updates.push((*x, g.clone().reshape(self.shape(*x))?));
            }
            Op::SliceCols { x, start } => {
                let mut d = Tensor::zeros(self.shape(*x));
                let cols = self.shape(*x)[1];
                let w = g.shape()[1];
                for (r, row) in g.data().chunks(w).enumerate() {
                    d.data_mut()[r * cols + start..r * cols + start + w].copy_from_slice(row);
                }
                updates.push((*x, d));
            }
            Op::ConcatCols(xs) => {
                let total = g.shape()[1];
                let mut col = 0;
                for &x in xs {
                    let w = self.shape(x)[1];
                    if self.wants(x) {
                        let data = g.data().chunks(total).flat_map(|row| row[col..col + w].iter().copied()).collect();
                        updates.push((x, Tensor::from_vec(self.shape(x), data)?));
                    }
                    col += w;
                }
            }
            Op::Gather { x, index } => {
                let mut d = Tensor::zeros(self.shape(*x));
                let dd = d.data_mut();
                for (&k, &gv) in index.iter().zip(g.data()) {
                    dd[k] = dd[k] + gv;
                }
                updates.push((*x, d));
            }
            Op::Conv { x, w, b, geom } => {
                let (mut dx, mut dw) = (self.zeros_for(*x), self.zeros_for(*w));
                let s = self.shape(*x);
                let (frames, len, cin) = (s[0], s[1], s[2]);
                let cout = self.shape(*w)[2];
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                let lo = geom.len_out;
                for t in 0..frames {
                    kernels::conv_frame_backward(
                        geom,
                        &xd[t * len * cin..(t + 1) * len * cin],
                        wd,
                        cin,
                        cout,
                        &g.data()[t * lo * cout..(t + 1) * lo * cout],
                        dx.as_mut().map(|d| &mut d.data_mut()[t * len * cin..(t + 1) * len * cin]),
                        dw.as_mut().map(|d| d.data_mut()),
                    );
                }
                self.push_bias_grad(&mut updates, *b, g, cout);
                updates.extend(dx.map(|d| (*x, d)));
                updates.extend(dw.map(|d| (*w, d)));
            }
            Op::Deconv { x, w, b, geom } => {
                let (mut dx, mut dw) = (self.zeros_for(*x), self.zeros_for(*w));
                let s = self.shape(*x);
                let (frames, len, cin) = (s[0], s[1], s[2]);
                let cout = self.shape(*w)[2];
                let big = geom.len_in;
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                for t in 0..frames {
                    kernels::deconv_frame_backward(
                        geom,
                        &xd[t * len * cin..(t + 1) * len * cin],
                        wd,
                        cin,
                        cout,
                        &g.data()[t * big * cout..(t + 1) * big * cout],
                        dx.as_mut().map(|d| &mut d.data_mut()[t * len * cin..(t + 1) * len * cin]),
                        dw.as_mut().map(|d| d.data_mut()),
                    );
                }
                self.push_bias_grad(&mut updates, *b, g, cout);
                updates.extend(dx.map(|d| (*x, d)));
                updates.extend(dw.map(|d| (*w, d)));
            }
            Op::Depthwise { x, w, b, geom } => {
                let (mut dx, mut dw) = (self.zeros_for(*x), self.zeros_for(*w));
                let s = self.shape(*x);
                let (frames, len, c) = (s[0], s[1], s[2]);
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                for t in 0..frames {
                    let r = t * len * c..(t + 1) * len * c;
                    kernels::depthwise_frame_backward(
                        geom,
                        &xd[r.clone()],
                        wd,
                        c,
                        &g.data()[r.clone()],
                        dx.as_mut().map(|d| &mut d.data_mut()[r.clone()]),
                        dw.as_mut().map(|d| d.data_mut()),
                    );
                }
                self.push_bias_grad(&mut updates, *b, g, c);
                updates.extend(dx.map(|d| (*x, d)));
                updates.extend(dw.map(|d| (*w, d)));
            }
            Op::Gru { x, wih, whh, b, trace } => {
                let (mut dx, mut dwih, mut dwhh, mut db) =
                    (self.zeros_for(*x), self.zeros_for(*wih), self.zeros_for(*whh), self.zeros_for(*b));
                let xs = self.shape(*x);
                let h = self.shape(*whh)[0];
                let w = GruWeights {
                    wih: self.value(*wih).data(),
                    whh: self.value(*whh).data(),
                    b: self.value(*b).data(),
                    din: xs[1],
                    hidden: h,
                };
                kernels::gru_backward(
                    &w,
                    self.value(*x).data(),
                    xs[0],
                    trace,
                    g.data(),
                    dx.as_mut().map(|d| d.data_mut()),
                    dwih.as_mut().map(|d| d.data_mut()),
                    dwhh.as_mut().map(|d| d.data_mut()),
                    db.as_mut().map(|d| d.data_mut()),
                );
                updates.extend(dx.map(|d| (*x, d)));
                updates.extend(dwih.map(|d| (*wih, d)));
                updates.extend(dwhh.map(|d| (*whh, d)));
                updates.extend(db.map(|d| (*b, d)));
            }
            Op::ConvLstm { x, wx, wh, b, geom, trace } => {
                let (mut dx, mut dwx, mut dwh, mut db) =
                    (self.zeros_for(*x), self.zeros_for(*wx), self.zeros_for(*wh), self.zeros_for(*b));
                let xs = self.shape(*x);
                let w = LstmWeights {
                    wx: self.value(*wx).data(),
                    wh: self.value(*wh).data(),
                    b: self.value(*b).data(),
                    cin: xs[2],
                    filters: self.shape(*wh)[1],
                    geom: *geom,
                };
                kernels::convlstm_backward(
                    &w,
                    self.value(*x).data(),
                    xs[0],
                    trace,
                    g.data(),
                    dx.as_mut().map(|d| d.data_mut()),
                    dwx.as_mut().map(|d| d.data_mut()),
                    dwh.as_mut().map(|d| d.data_mut()),
                    db.as_mut().map(|d| d.data_mut()),
                );
                updates.extend(dx.map(|d| (*x, d)));
                updates.extend(dwx.map(|d| (*wx, d)));
                updates.extend(dwh.map(|d| (*wh, d)));
                updates.extend(db.map(|d| (*b, d)));
            }
            Op::ComplexGain { m } => {
                let s = self.shape(*m);
                let (frames, len) = (s[0], s[1]);
                let bins = g.shape()[1];
                let md = self.value(*m).data();
                let mut d = Tensor::zeros(s);
                let dd = d.data_mut();
                for t in 0..frames {
                    for k in 0..bins {
                        let i = (t * len + k) * 2;
                        let o = (t * bins + k) * 2;
                        let (a, c) = gain_jacobian_vjp(md[i], md[i + 1], g.data()[o], g.data()[o + 1]);
                        dd[i] = a;
                        dd[i + 1] = c;
                    }
                }
                updates.push((*m, d));
            }
            Op::ComplexMulConst { g: gv, y } => {
                let mut d = Tensor::zeros(g.shape());
                let dd = d.data_mut();
                for (i, yv) in y.as_slice().iter().enumerate() {
                    // conj(y) · upstream, in real-pair form
                    let p = Complex::new(g.data()[2 * i], g.data()[2 * i + 1]) * yv.conj();
                    dd[2 * i] = p.re;
                    dd[2 * i + 1] = p.im;
                }
                updates.push((*gv, d));
            }
            Op::Istft { x, stft, offset } => {
                let frames = self.shape(*x)[0];
                updates.push((*x, istft_vjp(stft, frames, *offset, g.data())?));
            }
            Op::LogMse { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let sum = ad.iter().zip(bd).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
                let c = g.item() * T::of(20.0 / std::f64::consts::LN_10) / (sum + T::of(LOSS_EPSILON));
                let diff: Vec<T> = ad.iter().zip(bd).map(|(&x, &y)| c * (x - y)).collect();
                if self.wants(*a) {
                    updates.push((*a, Tensor::from_vec(self.shape(*a), diff.clone())?));
                }
                if self.wants(*b) {
                    updates.push((*b, Tensor::from_vec(self.shape(*b), diff.iter().map(|&v| -v).collect())?));
                }
            }
            Op::WeightedSum { xs, weights } => {
                for (&x, &w) in xs.iter().zip(weights) {
                    if self.wants(x) {
                        updates.push((x, Tensor::from_vec(self.shape(x), vec![w * g.item()])?));
                    }
                }
            }
        }
        for (v, d) in updates {
            if self.wants(v) {
                self.accumulate(v, d);
            }
        }
        Ok(())
    }

    fn push_bias_grad(&self, updates: &mut Vec<(Var, Tensor<T>)>, b: Var, g: &Tensor<T>, c: usize) {
        if !self.wants(b) {
            return;
        }
        let mut db = vec![T::zero(); c];
        for row in g.data().chunks(c) {
            for (acc, &v) in db.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        updates.push((b, Tensor::from_vec(&[c], db).expect("bias shape")));
    }
}

/// Vector-Jacobian product of `G = φ(|M|)·M`, `φ(r) = tanh(r)/r`.
///
/// Below the mask epsilon the continuous limit (identity Jacobian) is used so
/// that a zero mask still receives a gradient.
fn gain_jacobian_vjp<T: Scalar>(mr: T, mi: T, gr: T, gi: T) -> (T, T) {
    let r = (mr * mr + mi * mi).sqrt();
    if r < T::of(crate::dsp::MASK_EPSILON) {
        return (gr, gi);
    }
    let phi = r.tanh() / r;
    // φ'(r)/r, with a series for small r to avoid cancellation
    let dphi_over_r = if r < T::of(1e-4) {
        T::of(-2.0 / 3.0) + T::of(0.8) * r * r
    } else {
        let sech2 = T::one() - r.tanh() * r.tanh();
        (sech2 * r - r.tanh()) / (r * r * r)
    };
    let dot = mr * gr + mi * gi;
    (phi * gr + dphi_over_r * dot * mr, phi * gi + dphi_over_r * dot * mi)
}

fn istft_vjp<T: Scalar>(stft: &Stft<T>, frames: usize, offset: usize, g: &[T]) -> Result<Tensor<T>> {
    let p = stft.params();
    let (n_t, shift, k, bins) = (p.frame_len, p.frame_shift, p.dft_size, p.bins());
    let window = stft.window();
    let mut full = vec![T::zero(); p.synthesis_len(frames)];
    full[offset..offset + g.len()].copy_from_slice(g);
    let fft = rustfft::FftPlanner::<T>::new().plan_fft_forward(k);
    let mut out = Tensor::zeros(&[frames, bins, 2]);
    let scale = T::one() / T::of(k as f64);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); k];
    for f in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
        for n in 0..n_t {
            buf[n].re = full[f * shift + n] * window[n];
        }
        fft.process(&mut buf);
        let od = &mut out.data_mut()[f * bins * 2..(f + 1) * bins * 2];
        for b in 0..bins {
            let interior = b != 0 && 2 * b != k;
            let c = if interior { scale + scale } else { scale };
            od[2 * b] = c * buf[b].re;
            od[2 * b + 1] = if interior { c * buf[b].im } else { T::zero() };
        }
    }
    Ok(out)
}
