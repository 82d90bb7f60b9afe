//! Neural network layers with explicit forward caches and hand-written
//! backward passes, all in f64.
//!
//! Batched activations are stored row-major with example-major rows: a
//! token matrix holding `n` examples of `t` tokens each has shape
//! `[n * t, d]`, example `e` owning rows `e*t .. (e+1)*t`. Attention never
//! crosses example boundaries.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use super::params::{seg_slice_mut, view2_mut, ParamLayout, ParamStore, SegId};
use crate::rng::SplitMix64;

/// Initialization draws are rounded through f32 so that a freshly
/// initialized model survives the f32 checkpoint payload bit-exactly.
fn f32_exact(x: f64) -> f64 {
    x as f32 as f64
}

fn fill_normal(store: &mut ParamStore, id: SegId, std: f64, rng: &mut SplitMix64) {
    for v in store.slice_mut(id) {
        *v = f32_exact(rng.next_normal() * std);
    }
}

fn fill_const(store: &mut ParamStore, id: SegId, value: f64) {
    for v in store.slice_mut(id) {
        *v = value;
    }
}

fn add_colsum_into(target: &mut [f64], m: &ArrayView2<'_, f64>) {
    for row in m.rows() {
        for (t, &v) in target.iter_mut().zip(row.iter()) {
            *t += v;
        }
    }
}

/// Row-wise softmax in place, numerically stable.
fn softmax_rows(mut m: ArrayViewMut2<'_, f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Backward through a row-wise softmax: `ds = a * (da - sum(a * da))`.
fn softmax_backward(attn: &Array2<f64>, d_attn: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(attn.dim());
    for ((mut o, a), da) in out
        .rows_mut()
        .into_iter()
        .zip(attn.rows())
        .zip(d_attn.rows())
    {
        let dot: f64 = a.iter().zip(da.iter()).map(|(&x, &y)| x * y).sum();
        for ((o, &x), &y) in o.iter_mut().zip(a.iter()).zip(da.iter()) {
            *o = x * (y - dot);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// Affine map `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: SegId,
    pub bias: SegId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn register(layout: &mut ParamLayout, name: &str, in_dim: usize, out_dim: usize) -> Self {
        LinearLayer {
            weight: layout.register(format!("{name}.weight"), vec![in_dim, out_dim]),
            bias: layout.register(format!("{name}.bias"), vec![out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn init_glorot(&self, store: &mut ParamStore, rng: &mut SplitMix64) {
        let std = (2.0 / (self.in_dim + self.out_dim) as f64).sqrt();
        fill_normal(store, self.weight, std, rng);
        fill_const(store, self.bias, 0.0);
    }

    pub fn init_normal(&self, store: &mut ParamStore, std: f64, rng: &mut SplitMix64) {
        fill_normal(store, self.weight, std, rng);
        fill_const(store, self.bias, 0.0);
    }

    pub fn forward(&self, p: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&p.view2(self.weight));
        let b = p.slice(self.bias);
        for mut row in y.rows_mut() {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &self,
        p: &ParamStore,
        x: &Array2<f64>,
        d_out: &Array2<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        {
            let dw_new = x.t().dot(d_out);
            let mut dw = view2_mut(grads, &p.layout, self.weight);
            dw += &dw_new;
        }
        add_colsum_into(seg_slice_mut(grads, &p.layout, self.bias), &d_out.view());
        d_out.dot(&p.view2(self.weight).t())
    }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 3x3 stride-2 pad-1 convolution over channels-last planes, with optional
/// fused ReLU. Kernel stored as `[3, 3, in_c, out_c]`, matching the im2col
/// patch order `(ky, kx, channel)`.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: SegId,
    pub bias: SegId,
    pub in_c: usize,
    pub out_c: usize,
    pub relu: bool,
}

pub struct ConvCache {
    im2col: Array2<f64>,
    /// Output after the optional ReLU; used for the ReLU mask.
    output: Array2<f64>,
}

pub fn conv_out_side(side: usize) -> usize {
    (side - 1) / 2 + 1
}

impl ConvLayer {
    pub fn register(
        layout: &mut ParamLayout,
        name: &str,
        in_c: usize,
        out_c: usize,
        relu: bool,
    ) -> Self {
        ConvLayer {
            weight: layout.register(format!("{name}.weight"), vec![3, 3, in_c, out_c]),
            bias: layout.register(format!("{name}.bias"), vec![out_c]),
            in_c,
            out_c,
            relu,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SplitMix64) {
        let fan_in = 9 * self.in_c;
        let fan_out = 9 * self.out_c;
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        fill_normal(store, self.weight, std, rng);
        fill_const(store, self.bias, 0.0);
    }

    fn im2col(&self, input: &Array2<f64>, n: usize, h: usize, w: usize) -> Array2<f64> {
        let (oh, ow) = (conv_out_side(h), conv_out_side(w));
        let k = 9 * self.in_c;
        let mut m = Array2::zeros((n * oh * ow, k));
        for e in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = e * oh * ow + oy * ow + ox;
                    let mut dst = m.row_mut(row);
                    for ky in 0..3usize {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src_row = e * h * w + iy as usize * w + ix as usize;
                            let base = (ky * 3 + kx) * self.in_c;
                            for c in 0..self.in_c {
                                dst[base + c] = input[(src_row, c)];
                            }
                        }
                    }
                }
            }
        }
        m
    }

    /// `input`: `[n*h*w, in_c]` channels-last planes. Returns
    /// `[n*oh*ow, out_c]`.
    pub fn forward(
        &self,
        p: &ParamStore,
        input: &Array2<f64>,
        n: usize,
        h: usize,
        w: usize,
    ) -> (Array2<f64>, ConvCache) {
        let im2col = self.im2col(input, n, h, w);
        let mut out = im2col.dot(&p.view2(self.weight));
        let b = p.slice(self.bias);
        for mut row in out.rows_mut() {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        if self.relu {
            out.mapv_inplace(|v| v.max(0.0));
        }
        let cache = ConvCache {
            im2col,
            output: out.clone(),
        };
        (out, cache)
    }

    /// Returns the input gradient as `[n*h*w, in_c]` when `compute_dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &ParamStore,
        cache: &ConvCache,
        d_out: &Array2<f64>,
        n: usize,
        h: usize,
        w: usize,
        grads: &mut [f64],
        compute_dx: bool,
    ) -> Option<Array2<f64>> {
        let mut d_pre = d_out.clone();
        if self.relu {
            for (d, &o) in d_pre.iter_mut().zip(cache.output.iter()) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        {
            let dw_new = cache.im2col.t().dot(&d_pre);
            let mut dw = view2_mut(grads, &p.layout, self.weight);
            dw += &dw_new;
        }
        add_colsum_into(seg_slice_mut(grads, &p.layout, self.bias), &d_pre.view());
        if !compute_dx {
            return None;
        }
        let d_im2col = d_pre.dot(&p.view2(self.weight).t());
        let (oh, ow) = (conv_out_side(h), conv_out_side(w));
        let mut dx = Array2::zeros((n * h * w, self.in_c));
        for e in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = e * oh * ow + oy * ow + ox;
                    let src = d_im2col.row(row);
                    for ky in 0..3usize {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let dst_row = e * h * w + iy as usize * w + ix as usize;
                            let base = (ky * 3 + kx) * self.in_c;
                            for c in 0..self.in_c {
                                dx[(dst_row, c)] += src[base + c];
                            }
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    pub gain: SegId,
    pub bias: SegId,
    pub dim: usize,
}

pub struct LnCache {
    xhat: Array2<f64>,
    rstd: Vec<f64>,
}

impl LayerNormLayer {
    pub fn register(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        LayerNormLayer {
            gain: layout.register(format!("{name}.gain"), vec![dim]),
            bias: layout.register(format!("{name}.bias"), vec![dim]),
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore) {
        fill_const(store, self.gain, 1.0);
        fill_const(store, self.bias, 0.0);
    }

    pub fn forward(&self, p: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let d = self.dim as f64;
        let g = p.slice(self.gain);
        let b = p.slice(self.bias);
        let mut xhat = Array2::zeros(x.dim());
        let mut out = Array2::zeros(x.dim());
        let mut rstd = Vec::with_capacity(x.nrows());
        for ((row, mut xh), mut o) in x
            .rows()
            .into_iter()
            .zip(xhat.rows_mut())
            .zip(out.rows_mut())
        {
            let mean = row.sum() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xh[j] = h;
                o[j] = h * g[j] + b[j];
            }
        }
        (out, LnCache { xhat, rstd })
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        cache: &LnCache,
        d_out: &Array2<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        let d = self.dim as f64;
        let g = p.slice(self.gain);
        let mut dx = Array2::zeros(d_out.dim());
        {
            let dgain = seg_slice_mut(grads, &p.layout, self.gain);
            for (dy, xh) in d_out.rows().into_iter().zip(cache.xhat.rows()) {
                for (j, (&dyv, &xhv)) in dy.iter().zip(xh.iter()).enumerate() {
                    dgain[j] += dyv * xhv;
                }
            }
        }
        add_colsum_into(seg_slice_mut(grads, &p.layout, self.bias), &d_out.view());
        for (i, ((dy, xh), mut dxr)) in d_out
            .rows()
            .into_iter()
            .zip(cache.xhat.rows())
            .zip(dx.rows_mut())
            .enumerate()
        {
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for (j, &dyv) in dy.iter().enumerate() {
                let dxh = dyv * g[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xh[j];
            }
            mean_dxhat /= d;
            mean_dxhat_xhat /= d;
            let r = cache.rstd[i];
            for (j, &dyv) in dy.iter().enumerate() {
                let dxh = dyv * g[j];
                dxr[j] = r * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

/// Multi-head scaled dot-product attention with per-head contiguous column
/// slices of the d-dimensional projections.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub wq: SegId,
    pub wk: SegId,
    pub wv: SegId,
    pub wo: SegId,
    pub bq: SegId,
    pub bk: SegId,
    pub bv: SegId,
    pub bo: SegId,
    pub dim: usize,
    pub num_heads: usize,
}

pub struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax outputs, indexed `[example * num_heads + head]`.
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    nq: usize,
    nk: usize,
}

impl AttentionLayer {
    pub fn register(layout: &mut ParamLayout, name: &str, dim: usize, num_heads: usize) -> Self {
        AttentionLayer {
            wq: layout.register(format!("{name}.wq"), vec![dim, dim]),
            wk: layout.register(format!("{name}.wk"), vec![dim, dim]),
            wv: layout.register(format!("{name}.wv"), vec![dim, dim]),
            wo: layout.register(format!("{name}.wo"), vec![dim, dim]),
            bq: layout.register(format!("{name}.bq"), vec![dim]),
            bk: layout.register(format!("{name}.bk"), vec![dim]),
            bv: layout.register(format!("{name}.bv"), vec![dim]),
            bo: layout.register(format!("{name}.bo"), vec![dim]),
            dim,
            num_heads,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SplitMix64) {
        let std = (2.0 / (2 * self.dim) as f64).sqrt();
        for id in [self.wq, self.wk, self.wv, self.wo] {
            fill_normal(store, id, std, rng);
        }
        for id in [self.bq, self.bk, self.bv, self.bo] {
            fill_const(store, id, 0.0);
        }
    }

    fn project(&self, p: &ParamStore, x: &Array2<f64>, w: SegId, b: SegId) -> Array2<f64> {
        let mut y = x.dot(&p.view2(w));
        let bias = p.slice(b);
        for mut row in y.rows_mut() {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        y
    }

    /// `q_in`: `[n*nq, d]`, `kv_in`: `[n*nk, d]`. Attention runs within each
    /// example independently.
    pub fn forward(
        &self,
        p: &ParamStore,
        q_in: &Array2<f64>,
        kv_in: &Array2<f64>,
        n: usize,
    ) -> (Array2<f64>, AttnCache) {
        let nq = q_in.nrows() / n;
        let nk = kv_in.nrows() / n;
        let dh = self.dim / self.num_heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = self.project(p, q_in, self.wq, self.bq);
        let k = self.project(p, kv_in, self.wk, self.bk);
        let v = self.project(p, kv_in, self.wv, self.bv);

        let mut ctx = Array2::zeros((n * nq, self.dim));
        let mut attn = Vec::with_capacity(n * self.num_heads);
        for e in 0..n {
            let q_rows = q.slice(ndarray::s![e * nq..(e + 1) * nq, ..]);
            let k_rows = k.slice(ndarray::s![e * nk..(e + 1) * nk, ..]);
            let v_rows = v.slice(ndarray::s![e * nk..(e + 1) * nk, ..]);
            for head in 0..self.num_heads {
                let cols = head * dh..(head + 1) * dh;
                let qh = q_rows.slice(ndarray::s![.., cols.clone()]);
                let kh = k_rows.slice(ndarray::s![.., cols.clone()]);
                let vh = v_rows.slice(ndarray::s![.., cols.clone()]);
                let mut scores = qh.dot(&kh.t());
                scores.mapv_inplace(|s| s * scale);
                softmax_rows(scores.view_mut());
                let ctx_h = scores.dot(&vh);
                ctx.slice_mut(ndarray::s![e * nq..(e + 1) * nq, cols])
                    .assign(&ctx_h);
                attn.push(scores);
            }
        }
        let out = self.project(p, &ctx, self.wo, self.bo);
        let cache = AttnCache {
            q,
            k,
            v,
            attn,
            ctx,
            nq,
            nk,
        };
        (out, cache)
    }

    /// Returns `(d_q_in, d_kv_in)`. For self-attention the caller passes the
    /// same array twice and sums the two gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &ParamStore,
        q_in: &Array2<f64>,
        kv_in: &Array2<f64>,
        cache: &AttnCache,
        d_out: &Array2<f64>,
        n: usize,
        grads: &mut [f64],
    ) -> (Array2<f64>, Array2<f64>) {
        let (nq, nk) = (cache.nq, cache.nk);
        let dh = self.dim / self.num_heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // Output projection.
        {
            let dwo_new = cache.ctx.t().dot(d_out);
            let mut dwo = view2_mut(grads, &p.layout, self.wo);
            dwo += &dwo_new;
        }
        add_colsum_into(seg_slice_mut(grads, &p.layout, self.bo), &d_out.view());
        let d_ctx = d_out.dot(&p.view2(self.wo).t());

        let mut dq = Array2::zeros((n * nq, self.dim));
        let mut dk = Array2::zeros((n * nk, self.dim));
        let mut dv = Array2::zeros((n * nk, self.dim));
        for e in 0..n {
            for head in 0..self.num_heads {
                let cols = head * dh..(head + 1) * dh;
                let a = &cache.attn[e * self.num_heads + head];
                let d_ctx_h = d_ctx
                    .slice(ndarray::s![e * nq..(e + 1) * nq, cols.clone()])
                    .to_owned();
                let vh = cache
                    .v
                    .slice(ndarray::s![e * nk..(e + 1) * nk, cols.clone()]);
                let qh = cache
                    .q
                    .slice(ndarray::s![e * nq..(e + 1) * nq, cols.clone()]);
                let kh = cache
                    .k
                    .slice(ndarray::s![e * nk..(e + 1) * nk, cols.clone()]);

                let d_attn = d_ctx_h.dot(&vh.t());
                let d_scores = softmax_backward(a, &d_attn);

                let dqh = d_scores.dot(&kh).mapv(|x| x * scale);
                let dkh = d_scores.t().dot(&qh).mapv(|x| x * scale);
                let dvh = a.t().dot(&d_ctx_h);

                dq.slice_mut(ndarray::s![e * nq..(e + 1) * nq, cols.clone()])
                    .assign(&dqh);
                dk.slice_mut(ndarray::s![e * nk..(e + 1) * nk, cols.clone()])
                    .assign(&dkh);
                dv.slice_mut(ndarray::s![e * nk..(e + 1) * nk, cols])
                    .assign(&dvh);
            }
        }

        {
            let dwq_new = q_in.t().dot(&dq);
            let mut dwq = view2_mut(grads, &p.layout, self.wq);
            dwq += &dwq_new;
        }
        add_colsum_into(seg_slice_mut(grads, &p.layout, self.bq), &dq.view());
        {
            let dwk_new = kv_in.t().dot(&dk);
            let mut dwk = view2_mut(grads, &p.layout, self.wk);
            dwk += &dwk_new;
        }
        add_colsum_into(seg_slice_mut(grads, &p.layout, self.bk), &dk.view());
        {
            let dwv_new = kv_in.t().dot(&dv);
            let mut dwv = view2_mut(grads, &p.layout, self.wv);
            dwv += &dwv_new;
        }
        add_colsum_into(seg_slice_mut(grads, &p.layout, self.bv), &dv.view());

        let d_q_in = dq.dot(&p.view2(self.wq).t());
        let d_kv_in = dk.dot(&p.view2(self.wk).t()) + dv.dot(&p.view2(self.wv).t());
        (d_q_in, d_kv_in)
    }
}

// ---------------------------------------------------------------------------
// Feed-forward block
// ---------------------------------------------------------------------------

/// Two-layer feed-forward block with ReLU: `lin2(relu(lin1(x)))`.
#[derive(Debug, Clone)]
pub struct FfnLayer {
    pub lin1: LinearLayer,
    pub lin2: LinearLayer,
}

pub struct FfnCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
}

impl FfnLayer {
    pub fn register(layout: &mut ParamLayout, name: &str, dim: usize, hidden: usize) -> Self {
        FfnLayer {
            lin1: LinearLayer::register(layout, &format!("{name}.lin1"), dim, hidden),
            lin2: LinearLayer::register(layout, &format!("{name}.lin2"), hidden, dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SplitMix64) {
        self.lin1.init_glorot(store, rng);
        self.lin2.init_glorot(store, rng);
    }

    pub fn forward(&self, p: &ParamStore, x: &Array2<f64>) -> (Array2<f64>, FfnCache) {
        let mut hidden = self.lin1.forward(p, x);
        hidden.mapv_inplace(|v| v.max(0.0));
        let out = self.lin2.forward(p, &hidden);
        (
            out,
            FfnCache {
                input: x.clone(),
                hidden,
            },
        )
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        cache: &FfnCache,
        d_out: &Array2<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        let mut d_hidden = self.lin2.backward(p, &cache.hidden, d_out, grads);
        for (d, &h) in d_hidden.iter_mut().zip(cache.hidden.iter()) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        self.lin1.backward(p, &cache.input, &d_hidden, grads)
    }
}

// ---------------------------------------------------------------------------
// Gradient checks
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamLayout;

    /// Loss functional: weighted sum of outputs with fixed coefficients,
    /// which makes d_out analytic and exercises every output element.
    fn coeffs(rows: usize, cols: usize, rng: &mut SplitMix64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.next_normal())
    }

    fn weighted_sum(y: &Array2<f64>, c: &Array2<f64>) -> f64 {
        y.iter().zip(c.iter()).map(|(&a, &b)| a * b).sum()
    }

    fn check_param_gradients(
        store: &ParamStore,
        analytic: &[f64],
        mut loss_fn: impl FnMut(&ParamStore) -> f64,
        tol: f64,
    ) {
        let mut probe = store.clone();
        let h = 1e-6;
        let n = store.data.len();
        let stride = (n / 60).max(1);
        for i in (0..n).step_by(stride) {
            let orig = probe.data[i];
            probe.data[i] = orig + h;
            let up = loss_fn(&probe);
            probe.data[i] = orig - h;
            let down = loss_fn(&probe);
            probe.data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[i];
            // Both below FD noise (e.g. the dead key-projection bias, which
            // softmax shift-invariance zeroes exactly): treat as matching.
            if a.abs().max(fd.abs()) < 1e-7 {
                continue;
            }
            let denom = a.abs().max(fd.abs());
            assert!(
                ((a - fd) / denom).abs() < tol,
                "param {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn linear_gradients_match_fd() {
        let mut layout = ParamLayout::default();
        let lin = LinearLayer::register(&mut layout, "lin", 5, 4);
        let mut store = ParamStore::zeros(layout);
        let mut rng = SplitMix64::new(1);
        lin.init_glorot(&mut store, &mut rng);
        let x = Array2::from_shape_fn((3, 5), |_| rng.next_normal());
        let c = coeffs(3, 4, &mut rng);

        let y = lin.forward(&store, &x);
        let mut grads = vec![0.0; store.data.len()];
        let dx = lin.backward(&store, &x, &c, &mut grads);
        let _ = y;

        check_param_gradients(&store, &grads, |p| weighted_sum(&lin.forward(p, &x), &c), 1e-6);

        // Input gradient via FD.
        let h = 1e-6;
        let mut xp = x.clone();
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let orig = xp[(i, j)];
                xp[(i, j)] = orig + h;
                let up = weighted_sum(&lin.forward(&store, &xp), &c);
                xp[(i, j)] = orig - h;
                let down = weighted_sum(&lin.forward(&store, &xp), &c);
                xp[(i, j)] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((dx[(i, j)] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn conv_gradients_match_fd() {
        let (n, h, w, in_c, out_c) = (2, 5, 6, 2, 3);
        let mut layout = ParamLayout::default();
        let conv = ConvLayer::register(&mut layout, "conv", in_c, out_c, true);
        let mut store = ParamStore::zeros(layout);
        let mut rng = SplitMix64::new(7);
        conv.init(&mut store, &mut rng);
        // Offset inputs away from ReLU kinks.
        let x = Array2::from_shape_fn((n * h * w, in_c), |_| rng.next_normal() + 0.5);
        let (oh, ow) = (conv_out_side(h), conv_out_side(w));
        let c = coeffs(n * oh * ow, out_c, &mut rng);

        let (_, cache) = conv.forward(&store, &x, n, h, w);
        let mut grads = vec![0.0; store.data.len()];
        let dx = conv
            .backward(&store, &cache, &c, n, h, w, &mut grads, true)
            .unwrap();

        check_param_gradients(
            &store,
            &grads,
            |p| weighted_sum(&conv.forward(p, &x, n, h, w).0, &c),
            1e-5,
        );

        let step = 1e-6;
        let mut xp = x.clone();
        for i in (0..x.nrows()).step_by(7) {
            for j in 0..in_c {
                let orig = xp[(i, j)];
                xp[(i, j)] = orig + step;
                let up = weighted_sum(&conv.forward(&store, &xp, n, h, w).0, &c);
                xp[(i, j)] = orig - step;
                let down = weighted_sum(&conv.forward(&store, &xp, n, h, w).0, &c);
                xp[(i, j)] = orig;
                let fd = (up - down) / (2.0 * step);
                assert!(
                    (dx[(i, j)] - fd).abs() < 1e-5,
                    "dx[{i},{j}] {} vs {fd}",
                    dx[(i, j)]
                );
            }
        }
    }

    #[test]
    fn conv_output_shape_halves_per_stride() {
        assert_eq!(conv_out_side(64), 32);
        assert_eq!(conv_out_side(8), 4);
        assert_eq!(conv_out_side(2), 1);
        assert_eq!(conv_out_side(5), 3);
    }

    #[test]
    fn layernorm_gradients_match_fd() {
        let mut layout = ParamLayout::default();
        let ln = LayerNormLayer::register(&mut layout, "ln", 6);
        let mut store = ParamStore::zeros(layout);
        let mut rng = SplitMix64::new(3);
        ln.init(&mut store);
        // Non-trivial gains.
        for v in store.slice_mut(ln.gain) {
            *v = 1.0 + 0.3 * rng.next_normal();
        }
        let x = Array2::from_shape_fn((4, 6), |_| 2.0 * rng.next_normal());
        let c = coeffs(4, 6, &mut rng);

        let (_, cache) = ln.forward(&store, &x);
        let mut grads = vec![0.0; store.data.len()];
        let dx = ln.backward(&store, &cache, &c, &mut grads);

        check_param_gradients(&store, &grads, |p| weighted_sum(&ln.forward(p, &x).0, &c), 1e-6);

        let h = 1e-6;
        let mut xp = x.clone();
        for i in 0..4 {
            for j in 0..6 {
                let orig = xp[(i, j)];
                xp[(i, j)] = orig + h;
                let up = weighted_sum(&ln.forward(&store, &xp).0, &c);
                xp[(i, j)] = orig - h;
                let down = weighted_sum(&ln.forward(&store, &xp).0, &c);
                xp[(i, j)] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((dx[(i, j)] - fd).abs() < 1e-6, "{} vs {fd}", dx[(i, j)]);
            }
        }
    }

    #[test]
    fn attention_gradients_match_fd() {
        let (n, nq, nk, d, heads) = (2, 3, 4, 8, 2);
        let mut layout = ParamLayout::default();
        let attn = AttentionLayer::register(&mut layout, "attn", d, heads);
        let mut store = ParamStore::zeros(layout);
        let mut rng = SplitMix64::new(11);
        attn.init(&mut store, &mut rng);
        let q_in = Array2::from_shape_fn((n * nq, d), |_| rng.next_normal());
        let kv_in = Array2::from_shape_fn((n * nk, d), |_| rng.next_normal());
        let c = coeffs(n * nq, d, &mut rng);

        let (_, cache) = attn.forward(&store, &q_in, &kv_in, n);
        let mut grads = vec![0.0; store.data.len()];
        let (dq_in, dkv_in) = attn.backward(&store, &q_in, &kv_in, &cache, &c, n, &mut grads);

        check_param_gradients(
            &store,
            &grads,
            |p| weighted_sum(&attn.forward(p, &q_in, &kv_in, n).0, &c),
            1e-5,
        );

        let h = 1e-6;
        let mut qp = q_in.clone();
        for i in (0..q_in.nrows()).step_by(2) {
            for j in (0..d).step_by(3) {
                let orig = qp[(i, j)];
                qp[(i, j)] = orig + h;
                let up = weighted_sum(&attn.forward(&store, &qp, &kv_in, n).0, &c);
                qp[(i, j)] = orig - h;
                let down = weighted_sum(&attn.forward(&store, &qp, &kv_in, n).0, &c);
                qp[(i, j)] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((dq_in[(i, j)] - fd).abs() < 1e-6);
            }
        }
        let mut kp = kv_in.clone();
        for i in (0..kv_in.nrows()).step_by(2) {
            for j in (0..d).step_by(3) {
                let orig = kp[(i, j)];
                kp[(i, j)] = orig + h;
                let up = weighted_sum(&attn.forward(&store, &q_in, &kp, n).0, &c);
                kp[(i, j)] = orig - h;
                let down = weighted_sum(&attn.forward(&store, &q_in, &kp, n).0, &c);
                kp[(i, j)] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((dkv_in[(i, j)] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn attention_does_not_mix_examples() {
        let (n, nq, nk, d, heads) = (2, 2, 3, 4, 2);
        let mut layout = ParamLayout::default();
        let attn = AttentionLayer::register(&mut layout, "attn", d, heads);
        let mut store = ParamStore::zeros(layout);
        let mut rng = SplitMix64::new(5);
        attn.init(&mut store, &mut rng);
        let q_in = Array2::from_shape_fn((n * nq, d), |_| rng.next_normal());
        let mut kv_in = Array2::from_shape_fn((n * nk, d), |_| rng.next_normal());

        let (out1, _) = attn.forward(&store, &q_in, &kv_in, n);
        // Perturb example 1's keys/values; example 0 outputs must not move.
        for i in nk..2 * nk {
            for j in 0..d {
                kv_in[(i, j)] += 1.0;
            }
        }
        let (out2, _) = attn.forward(&store, &q_in, &kv_in, n);
        for i in 0..nq {
            for j in 0..d {
                assert_eq!(out1[(i, j)], out2[(i, j)]);
            }
        }
    }

    #[test]
    fn ffn_gradients_match_fd() {
        let mut layout = ParamLayout::default();
        let ffn = FfnLayer::register(&mut layout, "ffn", 5, 9);
        let mut store = ParamStore::zeros(layout);
        let mut rng = SplitMix64::new(13);
        ffn.init(&mut store, &mut rng);
        let x = Array2::from_shape_fn((3, 5), |_| rng.next_normal() + 0.3);
        let c = coeffs(3, 5, &mut rng);

        let (_, cache) = ffn.forward(&store, &x);
        let mut grads = vec![0.0; store.data.len()];
        let dx = ffn.backward(&store, &cache, &c, &mut grads);

        check_param_gradients(&store, &grads, |p| weighted_sum(&ffn.forward(p, &x).0, &c), 1e-5);

        let h = 1e-6;
        let mut xp = x.clone();
        for i in 0..3 {
            for j in 0..5 {
                let orig = xp[(i, j)];
                xp[(i, j)] = orig + h;
                let up = weighted_sum(&ffn.forward(&store, &xp).0, &c);
                xp[(i, j)] = orig - h;
                let down = weighted_sum(&ffn.forward(&store, &xp).0, &c);
                xp[(i, j)] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((dx[(i, j)] - fd).abs() < 1e-6);
            }
        }
    }

    use crate::rng::SplitMix64;
}
