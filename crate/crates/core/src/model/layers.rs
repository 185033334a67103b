//! Forward and reverse-mode kernels for the layer types used by the
//! classifier. Activations are `[C, H, W]` row-major slices.
//!
//! Every `*_backward` takes the upstream gradient of the layer output,
//! accumulates parameter gradients into the provided buffers and returns
//! the gradient with respect to the layer input.

use crate::stats::sigmoid;

/// Shape of a `[C, H, W]` activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chw {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Chw {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Valid output range along one axis for kernel offset `d` (in `-p..=p`).
#[inline]
fn valid(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

/// Square odd kernel, stride 1, zero "same" padding. `weight` is
/// `[c_out, c_in, k, k]`, `bias` is `[c_out]`.
pub fn conv2d_forward(x: &[f64], s: Chw, weight: &[f64], bias: &[f64], c_out: usize, k: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), s.len());
    debug_assert_eq!(weight.len(), c_out * s.c * k * k);
    let p = (k / 2) as isize;
    let (h, w) = (s.h, s.w);
    let mut out = vec![0.0; c_out * h * w];
    for o in 0..c_out {
        let out_plane = &mut out[o * h * w..(o + 1) * h * w];
        out_plane.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..s.c {
            let in_plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = valid(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = valid(w, dx);
                    let wv = weight[((o * s.c + c) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let src_row = (y as isize + dy) as usize * w;
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        let src = &in_plane[(src_row as isize + x0 as isize + dx) as usize..][..x1 - x0];
                        for (d, &sv) in dst.iter_mut().zip(src) {
                            *d += wv * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    s: Chw,
    weight: &[f64],
    c_out: usize,
    k: usize,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let p = (k / 2) as isize;
    let (h, w) = (s.h, s.w);
    let mut grad_in = vec![0.0; s.len()];
    for o in 0..c_out {
        let g_plane = &grad_out[o * h * w..(o + 1) * h * w];
        grad_b[o] += g_plane.iter().sum::<f64>();
        for c in 0..s.c {
            let in_plane = &x[c * h * w..(c + 1) * h * w];
            let gi_plane = &mut grad_in[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = valid(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = valid(w, dx);
                    let wi = ((o * s.c + c) * k + ky) * k + kx;
                    let wv = weight[wi];
                    let mut gw = 0.0;
                    for y in y0..y1 {
                        let src_off = ((y as isize + dy) as usize * w) as isize + x0 as isize + dx;
                        let g = &g_plane[y * w + x0..y * w + x1];
                        let src = &in_plane[src_off as usize..][..x1 - x0];
                        let gi = &mut gi_plane[src_off as usize..][..x1 - x0];
                        for ((&gv, &sv), giv) in g.iter().zip(src).zip(gi.iter_mut()) {
                            gw += gv * sv;
                            *giv += gv * wv;
                        }
                    }
                    grad_w[wi] += gw;
                }
            }
        }
    }
    grad_in
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU given its pre-activation input.
pub fn relu_backward(pre: &[f64], grad_out: &[f64]) -> Vec<f64> {
    pre.iter().zip(grad_out).map(|(&p, &g)| if p > 0.0 { g } else { 0.0 }).collect()
}

/// 2x2 max-pool, stride 2. Returns the pooled map and, per output element,
/// the flat input index of the maximum (first in scan order on ties).
pub fn maxpool2_forward(x: &[f64], s: Chw) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(s.c * oh * ow);
    let mut arg = Vec::with_capacity(s.c * oh * ow);
    for c in 0..s.c {
        let base = c * s.h * s.w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * s.w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * s.w + 2 * xx + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(argmax: &[usize], input_len: usize, grad_out: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&i, &v) in argmax.iter().zip(grad_out) {
        g[i] += v;
    }
    g
}

/// Intermediates of squeeze-excite channel attention.
#[derive(Debug, Clone)]
pub struct ChannelAttnCache {
    pub squeezed: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub gate: Vec<f64>,
}

/// Channel attention: global average pool, `FC(C->r)`, ReLU, `FC(r->C)`,
/// sigmoid gate, per-channel scaling. `w1` is `[r, C]`, `w2` is `[C, r]`.
pub fn channel_attn_forward(
    x: &[f64],
    s: Chw,
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
) -> (Vec<f64>, ChannelAttnCache) {
    let r = b1.len();
    let plane = s.plane();
    let squeezed: Vec<f64> =
        (0..s.c).map(|c| x[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64).collect();
    let hidden_pre: Vec<f64> =
        (0..r).map(|j| b1[j] + (0..s.c).map(|c| w1[j * s.c + c] * squeezed[c]).sum::<f64>()).collect();
    let hidden = relu_forward(&hidden_pre);
    let gate: Vec<f64> =
        (0..s.c).map(|c| sigmoid(b2[c] + (0..r).map(|j| w2[c * r + j] * hidden[j]).sum::<f64>())).collect();
    let mut out = x.to_vec();
    for c in 0..s.c {
        out[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v *= gate[c]);
    }
    (out, ChannelAttnCache { squeezed, hidden_pre, hidden, gate })
}

/// Returns the input gradient; parameter gradients go to
/// `[gw1, gb1, gw2, gb2]`.
#[allow(clippy::too_many_arguments)]
pub fn channel_attn_backward(
    x: &[f64],
    s: Chw,
    w1: &[f64],
    w2: &[f64],
    cache: &ChannelAttnCache,
    grad_out: &[f64],
    gw1: &mut [f64],
    gb1: &mut [f64],
    gw2: &mut [f64],
    gb2: &mut [f64],
) -> Vec<f64> {
    let r = cache.hidden.len();
    let plane = s.plane();
    let mut grad_in = vec![0.0; s.len()];
    let mut dz2 = vec![0.0; s.c];
    for c in 0..s.c {
        let range = c * plane..(c + 1) * plane;
        let g = &grad_out[range.clone()];
        let dgate: f64 = g.iter().zip(&x[range.clone()]).map(|(a, b)| a * b).sum();
        let gt = cache.gate[c];
        dz2[c] = dgate * gt * (1.0 - gt);
        for (gi, &gv) in grad_in[range].iter_mut().zip(g) {
            *gi = gv * gt;
        }
    }
    let mut dh = vec![0.0; r];
    for c in 0..s.c {
        gb2[c] += dz2[c];
        for j in 0..r {
            gw2[c * r + j] += dz2[c] * cache.hidden[j];
            dh[j] += w2[c * r + j] * dz2[c];
        }
    }
    let dz1 = relu_backward(&cache.hidden_pre, &dh);
    let mut ds = vec![0.0; s.c];
    for j in 0..r {
        gb1[j] += dz1[j];
        for c in 0..s.c {
            gw1[j * s.c + c] += dz1[j] * cache.squeezed[c];
            ds[c] += w1[j * s.c + c] * dz1[j];
        }
    }
    for c in 0..s.c {
        let add = ds[c] / plane as f64;
        grad_in[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += add);
    }
    grad_in
}

/// Spatial attention: a 1-channel sigmoid map from a 1x1 convolution over
/// channels, multiplied into every channel. Returns output and the map.
pub fn spatial_attn_forward(x: &[f64], s: Chw, w: &[f64], b: f64) -> (Vec<f64>, Vec<f64>) {
    let plane = s.plane();
    let gate: Vec<f64> =
        (0..plane).map(|i| sigmoid(b + (0..s.c).map(|c| w[c] * x[c * plane + i]).sum::<f64>())).collect();
    let out = x.iter().enumerate().map(|(k, &v)| v * gate[k % plane]).collect();
    (out, gate)
}

pub fn spatial_attn_backward(
    x: &[f64],
    s: Chw,
    w: &[f64],
    gate: &[f64],
    grad_out: &[f64],
    gw: &mut [f64],
    gb: &mut f64,
) -> Vec<f64> {
    let plane = s.plane();
    let mut dz = vec![0.0; plane];
    for i in 0..plane {
        let dm: f64 = (0..s.c).map(|c| grad_out[c * plane + i] * x[c * plane + i]).sum();
        dz[i] = dm * gate[i] * (1.0 - gate[i]);
    }
    *gb += dz.iter().sum::<f64>();
    let mut grad_in = vec![0.0; s.len()];
    for c in 0..s.c {
        let mut acc = 0.0;
        for i in 0..plane {
            let k = c * plane + i;
            acc += dz[i] * x[k];
            grad_in[k] = grad_out[k] * gate[i] + dz[i] * w[c];
        }
        gw[c] += acc;
    }
    grad_in
}

/// `y = W x + b` with `W` as `[n_out, n_in]`.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

pub fn dense_backward(x: &[f64], w: &[f64], grad_out: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
    let n_in = x.len();
    let mut grad_in = vec![0.0; n_in];
    for (o, &g) in grad_out.iter().enumerate() {
        gb[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            gw[o * n_in + i] += g * x[i];
            grad_in[i] += g * row[i];
        }
    }
    grad_in
}
