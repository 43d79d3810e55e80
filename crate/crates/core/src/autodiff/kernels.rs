//! Slice-level kernels for frequency-axis convolutions and recurrent cells.
//!
//! Layouts are row-major: a frame is `[len, channels]`, a conv kernel is
//! `[taps, cin, cout]`, a sequence is `[frames, ...]`.

use crate::scalar::Scalar;

/// Geometry of a "same"-padded strided convolution from `len_in` to `len_out`.
///
/// Even tap counts pad one more sample on the left than on the right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub taps: usize,
    pub stride: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn same(len_in: usize, taps: usize, stride: usize) -> Self {
        let len_out = len_in.div_ceil(stride);
        let total = ((len_out - 1) * stride + taps).saturating_sub(len_in);
        Self { taps, stride, len_in, len_out, pad_left: total.div_ceil(2) }
    }

    /// Input position read by output `j` at tap `n`, if inside the signal.
    #[inline]
    pub fn source(&self, j: usize, n: usize) -> Option<usize> {
        let p = (j * self.stride + n).checked_sub(self.pad_left)?;
        (p < self.len_in).then_some(p)
    }
}

#[inline]
fn matvec_acc<T: Scalar>(out: &mut [T], x: &[T], w: &[T]) {
    let cout = out.len();
    for (ci, &xv) in x.iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        let row = &w[ci * cout..(ci + 1) * cout];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o = *o + xv * wv;
        }
    }
}

#[inline]
fn matvec_t_acc<T: Scalar>(dx: &mut [T], dout: &[T], w: &[T]) {
    let cout = dout.len();
    for (ci, d) in dx.iter_mut().enumerate() {
        let row = &w[ci * cout..(ci + 1) * cout];
        let mut acc = T::zero();
        for (&g, &wv) in dout.iter().zip(row) {
            acc = acc + g * wv;
        }
        *d = *d + acc;
    }
}

#[inline]
fn outer_acc<T: Scalar>(dw: &mut [T], x: &[T], dout: &[T]) {
    let cout = dout.len();
    for (ci, &xv) in x.iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        let row = &mut dw[ci * cout..(ci + 1) * cout];
        for (r, &g) in row.iter_mut().zip(dout) {
            *r = *r + xv * g;
        }
    }
}

/// `out[j] += Σ_n x[src(j,n)] · W[n]` for one frame; `out` holds bias already.
pub fn conv_frame<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], cin: usize, cout: usize, out: &mut [T]) {
    for j in 0..g.len_out {
        let o = &mut out[j * cout..(j + 1) * cout];
        for n in 0..g.taps {
            if let Some(p) = g.source(j, n) {
                matvec_acc(o, &x[p * cin..(p + 1) * cin], &w[n * cin * cout..(n + 1) * cin * cout]);
            }
        }
    }
}

pub fn conv_frame_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    cin: usize,
    cout: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
) {
    let mut dw = dw;
    for j in 0..g.len_out {
        let d = &dout[j * cout..(j + 1) * cout];
        for n in 0..g.taps {
            if let Some(p) = g.source(j, n) {
                let wn = &w[n * cin * cout..(n + 1) * cin * cout];
                if let Some(dx) = dx.as_deref_mut() {
                    matvec_t_acc(&mut dx[p * cin..(p + 1) * cin], d, wn);
                }
                if let Some(dw) = dw.as_deref_mut() {
                    outer_acc(&mut dw[n * cin * cout..(n + 1) * cin * cout], &x[p * cin..(p + 1) * cin], d);
                }
            }
        }
    }
}

/// Transposed convolution: scatters each of the `g.len_out` input positions
/// into the `g.len_in` output positions. The adjoint of [`conv_frame`].
pub fn deconv_frame<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], cin: usize, cout: usize, out: &mut [T]) {
    for j in 0..g.len_out {
        let xj = &x[j * cin..(j + 1) * cin];
        for n in 0..g.taps {
            if let Some(p) = g.source(j, n) {
                matvec_acc(&mut out[p * cout..(p + 1) * cout], xj, &w[n * cin * cout..(n + 1) * cin * cout]);
            }
        }
    }
}

pub fn deconv_frame_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    cin: usize,
    cout: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    for j in 0..g.len_out {
        for n in 0..g.taps {
            if let Some(p) = g.source(j, n) {
                let d = &dout[p * cout..(p + 1) * cout];
                let wn = &w[n * cin * cout..(n + 1) * cin * cout];
                if let Some(dx) = dx.as_deref_mut() {
                    matvec_t_acc(&mut dx[j * cin..(j + 1) * cin], d, wn);
                }
                if let Some(dw) = dw.as_deref_mut() {
                    outer_acc(&mut dw[n * cin * cout..(n + 1) * cin * cout], &x[j * cin..(j + 1) * cin], d);
                }
            }
        }
    }
}

/// Per-channel convolution, kernel `[taps, c]`, stride 1.
pub fn depthwise_frame<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], c: usize, out: &mut [T]) {
    for j in 0..g.len_out {
        for n in 0..g.taps {
            if let Some(p) = g.source(j, n) {
                for ch in 0..c {
                    out[j * c + ch] = out[j * c + ch] + x[p * c + ch] * w[n * c + ch];
                }
            }
        }
    }
}

pub fn depthwise_frame_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    c: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    for j in 0..g.len_out {
        for n in 0..g.taps {
            if let Some(p) = g.source(j, n) {
                for ch in 0..c {
                    let d = dout[j * c + ch];
                    if let Some(dx) = dx.as_deref_mut() {
                        dx[p * c + ch] = dx[p * c + ch] + d * w[n * c + ch];
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[n * c + ch] = dw[n * c + ch] + d * x[p * c + ch];
                    }
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// GRU parameters: `wih [din, 3h]`, `whh [h, 3h]`, `b [3h]`, gates ordered
/// update, reset, candidate.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights<'a, T> {
    pub wih: &'a [T],
    pub whh: &'a [T],
    pub b: &'a [T],
    pub din: usize,
    pub hidden: usize,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct GruTrace<T> {
    pub z: Vec<T>,
    pub r: Vec<T>,
    pub n: Vec<T>,
    /// Recurrent candidate term `h_{t-1} · Whh_n` before the reset gate.
    pub u: Vec<T>,
    /// States `h_0 .. h_T`, `(frames + 1) × hidden`.
    pub h: Vec<T>,
}

impl<T: Scalar> GruTrace<T> {
    pub fn outputs(&self, hidden: usize) -> &[T] {
        &self.h[hidden..]
    }

    pub fn final_state(&self, hidden: usize) -> &[T] {
        &self.h[self.h.len() - hidden..]
    }
}

/// Runs `z = σ(x Wz + h Uz + bz)`, `r = σ(x Wr + h Ur + br)`,
/// `n = tanh(x Wn + bn + r ⊙ (h Un))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
pub fn gru_forward<T: Scalar>(w: &GruWeights<'_, T>, x: &[T], frames: usize, h0: &[T]) -> GruTrace<T> {
    let h = w.hidden;
    let mut tr = GruTrace {
        z: vec![T::zero(); frames * h],
        r: vec![T::zero(); frames * h],
        n: vec![T::zero(); frames * h],
        u: vec![T::zero(); frames * h],
        h: Vec::with_capacity((frames + 1) * h),
    };
    tr.h.extend_from_slice(h0);
    let mut a = vec![T::zero(); 3 * h];
    let mut rec = vec![T::zero(); 3 * h];
    for t in 0..frames {
        a.copy_from_slice(w.b);
        matvec_acc(&mut a, &x[t * w.din..(t + 1) * w.din], w.wih);
        rec.iter_mut().for_each(|v| *v = T::zero());
        let hp: Vec<T> = tr.h[t * h..(t + 1) * h].to_vec();
        matvec_acc(&mut rec, &hp, w.whh);
        for k in 0..h {
            let z = sigmoid(a[k] + rec[k]);
            let r = sigmoid(a[h + k] + rec[h + k]);
            let u = rec[2 * h + k];
            let n = (a[2 * h + k] + r * u).tanh();
            tr.z[t * h + k] = z;
            tr.r[t * h + k] = r;
            tr.n[t * h + k] = n;
            tr.u[t * h + k] = u;
            tr.h.push((T::one() - z) * n + z * hp[k]);
        }
    }
    tr
}

/// Back-propagates `dh_out` (`frames × hidden`) through the recurrence.
/// Returns the gradient with respect to the initial state.
#[allow(clippy::too_many_arguments)]
pub fn gru_backward<T: Scalar>(
    w: &GruWeights<'_, T>,
    x: &[T],
    frames: usize,
    tr: &GruTrace<T>,
    dh_out: &[T],
    mut dx: Option<&mut [T]>,
    mut dwih: Option<&mut [T]>,
    mut dwhh: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) -> Vec<T> {
    let h = w.hidden;
    let mut dh = vec![T::zero(); h];
    let mut da = vec![T::zero(); 3 * h];
    let mut dg = vec![T::zero(); 3 * h];
    for t in (0..frames).rev() {
        let hp = &tr.h[t * h..(t + 1) * h];
        let mut dh_prev = vec![T::zero(); h];
        for k in 0..h {
            let i = t * h + k;
            let g = dh[k] + dh_out[i];
            let (z, r, n, u) = (tr.z[i], tr.r[i], tr.n[i], tr.u[i]);
            let dn = g * (T::one() - z);
            let dz = g * (hp[k] - n);
            dh_prev[k] = g * z;
            let dan = dn * (T::one() - n * n);
            let dr = dan * u;
            let daz = dz * z * (T::one() - z);
            let dar = dr * r * (T::one() - r);
            da[k] = daz;
            da[h + k] = dar;
            da[2 * h + k] = dan;
            dg[k] = daz;
            dg[h + k] = dar;
            dg[2 * h + k] = dan * r;
        }
        let xt = &x[t * w.din..(t + 1) * w.din];
        if let Some(dx) = dx.as_deref_mut() {
            matvec_t_acc(&mut dx[t * w.din..(t + 1) * w.din], &da, w.wih);
        }
        if let Some(dw) = dwih.as_deref_mut() {
            outer_acc(dw, xt, &da);
        }
        if let Some(db) = db.as_deref_mut() {
            for (b, &d) in db.iter_mut().zip(&da) {
                *b = *b + d;
            }
        }
        if let Some(dw) = dwhh.as_deref_mut() {
            outer_acc(dw, hp, &dg);
        }
        matvec_t_acc(&mut dh_prev, &dg, w.whh);
        dh = dh_prev;
    }
    dh
}

/// ConvLSTM parameters: `wx [taps, cin, 4f]`, `wh [taps, f, 4f]`, `b [4f]`,
/// gates ordered input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a, T> {
    pub wx: &'a [T],
    pub wh: &'a [T],
    pub b: &'a [T],
    pub cin: usize,
    pub filters: usize,
    pub geom: ConvGeom,
}

#[derive(Debug, Clone, Default)]
pub struct LstmTrace<T> {
    /// Activated gates per frame, `frames × len × 4f`.
    pub gates: Vec<T>,
    /// Cell states `c_0 .. c_T`.
    pub c: Vec<T>,
    /// Hidden states `h_0 .. h_T`.
    pub h: Vec<T>,
}

impl<T: Scalar> LstmTrace<T> {
    pub fn outputs(&self, per_frame: usize) -> &[T] {
        &self.h[per_frame..]
    }

    pub fn final_state(&self, per_frame: usize) -> (&[T], &[T]) {
        (&self.h[self.h.len() - per_frame..], &self.c[self.c.len() - per_frame..])
    }
}

pub fn convlstm_forward<T: Scalar>(
    w: &LstmWeights<'_, T>,
    x: &[T],
    frames: usize,
    h0: &[T],
    c0: &[T],
) -> LstmTrace<T> {
    let len = w.geom.len_in;
    let f = w.filters;
    let per = len * f;
    let hg = ConvGeom::same(len, w.geom.taps, 1);
    let mut tr = LstmTrace {
        gates: vec![T::zero(); frames * len * 4 * f],
        c: Vec::with_capacity((frames + 1) * per),
        h: Vec::with_capacity((frames + 1) * per),
    };
    tr.c.extend_from_slice(c0);
    tr.h.extend_from_slice(h0);
    for t in 0..frames {
        let pre = &mut tr.gates[t * len * 4 * f..(t + 1) * len * 4 * f];
        for j in 0..len {
            pre[j * 4 * f..(j + 1) * 4 * f].copy_from_slice(w.b);
        }
        conv_frame(&w.geom, &x[t * len * w.cin..(t + 1) * len * w.cin], w.wx, w.cin, 4 * f, pre);
        conv_frame(&hg, &tr.h[t * per..(t + 1) * per], w.wh, f, 4 * f, pre);
        for j in 0..len {
            let gj = &mut pre[j * 4 * f..(j + 1) * 4 * f];
            for k in 0..f {
                let i = sigmoid(gj[k]);
                let fg = sigmoid(gj[f + k]);
                let g = gj[2 * f + k].tanh();
                let o = sigmoid(gj[3 * f + k]);
                gj[k] = i;
                gj[f + k] = fg;
                gj[2 * f + k] = g;
                gj[3 * f + k] = o;
                let c = fg * tr.c[t * per + j * f + k] + i * g;
                tr.c.push(c);
                tr.h.push(o * c.tanh());
            }
        }
    }
    tr
}

/// Returns the gradients with respect to `(h0, c0)`.
#[allow(clippy::too_many_arguments)]
pub fn convlstm_backward<T: Scalar>(
    w: &LstmWeights<'_, T>,
    x: &[T],
    frames: usize,
    tr: &LstmTrace<T>,
    dh_out: &[T],
    mut dx: Option<&mut [T]>,
    mut dwx: Option<&mut [T]>,
    mut dwh: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) -> (Vec<T>, Vec<T>) {
    let len = w.geom.len_in;
    let f = w.filters;
    let per = len * f;
    let hg = ConvGeom::same(len, w.geom.taps, 1);
    let mut dh = vec![T::zero(); per];
    let mut dc = vec![T::zero(); per];
    let mut dpre = vec![T::zero(); len * 4 * f];
    for t in (0..frames).rev() {
        let gates = &tr.gates[t * len * 4 * f..(t + 1) * len * 4 * f];
        let mut dc_prev = vec![T::zero(); per];
        for j in 0..len {
            for k in 0..f {
                let s = j * f + k;
                let gi = j * 4 * f;
                let (i, fg, g, o) = (gates[gi + k], gates[gi + f + k], gates[gi + 2 * f + k], gates[gi + 3 * f + k]);
                let c = tr.c[(t + 1) * per + s];
                let cp = tr.c[t * per + s];
                let tc = c.tanh();
                let dht = dh[s] + dh_out[t * per + s];
                let do_ = dht * tc;
                let dct = dc[s] + dht * o * (T::one() - tc * tc);
                dc_prev[s] = dct * fg;
                dpre[gi + k] = dct * g * i * (T::one() - i);
                dpre[gi + f + k] = dct * cp * fg * (T::one() - fg);
                dpre[gi + 2 * f + k] = dct * i * (T::one() - g * g);
                dpre[gi + 3 * f + k] = do_ * o * (T::one() - o);
            }
        }
        if let Some(db) = db.as_deref_mut() {
            for j in 0..len {
                for (b, &d) in db.iter_mut().zip(&dpre[j * 4 * f..(j + 1) * 4 * f]) {
                    *b = *b + d;
                }
            }
        }
        let xt = &x[t * len * w.cin..(t + 1) * len * w.cin];
        conv_frame_backward(
            &w.geom,
            xt,
            w.wx,
            w.cin,
            4 * f,
            &dpre,
            dx.as_deref_mut().map(|d| &mut d[t * len * w.cin..(t + 1) * len * w.cin]),
            dwx.as_deref_mut(),
        );
        let mut dh_prev = vec![T::zero(); per];
        conv_frame_backward(
            &hg,
            &tr.h[t * per..(t + 1) * per],
            w.wh,
            f,
            4 * f,
            &dpre,
            Some(&mut dh_prev),
            dwh.as_deref_mut(),
        );
        dh = dh_prev;
        dc = dc_prev;
    }
    (dh, dc)
}
