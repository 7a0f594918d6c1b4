//! Layers with hand-written backward passes. Every `forward` returns the
//! cache its `backward` needs; inference uses the same arithmetic and simply
//! drops the cache.

use rand::Rng;

use super::tensor::{Grads, ParamSet, Tensor};

#[inline]
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds views of `a` (m×k), `b` (k×n)
    // and `c` (m×n, row-major); all callers pass slices of exactly those sizes.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2D convolution with square kernel, zero padding chosen to keep
/// `H_out = H_in / stride`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
}

pub struct ConvCache {
    cols: Vec<f32>,
    in_shape: (usize, usize, usize),
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        let fan_in = (cin * k * k) as f32;
        let weight = ps.add_uniform(vec![cout, cin, k, k], (6.0 / fan_in).sqrt(), rng);
        let bias = ps.add_uniform(vec![cout], 0.0, rng);
        Self {
            weight,
            bias,
            cin,
            cout,
            k,
            stride,
            dilation,
            pad: dilation * (k - 1) / 2,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.k - 1) + 1;
        (
            (h + 2 * self.pad - span) / self.stride + 1,
            (w + 2 * self.pad - span) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn im2col(&self, x: &Tensor, ho: usize, wo: usize) -> Vec<f32> {
        let kk = self.k * self.k;
        let hw = ho * wo;
        let mut cols = vec![0.0f32; self.cin * kk * hw];
        let (s, d, p) = (self.stride as isize, self.dilation as isize, self.pad as isize);
        for ci in 0..self.cin {
            let plane = x.plane(ci);
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * kk + ki * self.k + kj) * hw;
                    for oy in 0..ho {
                        let iy = oy as isize * s - p + ki as isize * d;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                        let off = kj as isize * d - p;
                        if s == 1 {
                            let lo = (-off).max(0) as usize;
                            let hi = ((x.w as isize - off).min(wo as isize)).max(0) as usize;
                            if lo < hi {
                                let a = (lo as isize + off) as usize;
                                dst[lo..hi].copy_from_slice(&src[a..a + hi - lo]);
                            }
                        } else {
                            for (ox, v) in dst.iter_mut().enumerate() {
                                let ix = ox as isize * s + off;
                                if ix >= 0 && ix < x.w as isize {
                                    *v = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], in_shape: (usize, usize, usize), ho: usize, wo: usize) -> Tensor {
        let (c, h, w) = in_shape;
        let kk = self.k * self.k;
        let hw = ho * wo;
        let mut dx = Tensor::zeros(c, h, w);
        let (s, d, p) = (self.stride as isize, self.dilation as isize, self.pad as isize);
        for ci in 0..c {
            let plane = &mut dx.data[ci * h * w..(ci + 1) * h * w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * kk + ki * self.k + kj) * hw;
                    for oy in 0..ho {
                        let iy = oy as isize * s - p + ki as isize * d;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                        let off = kj as isize * d - p;
                        for (ox, v) in src.iter().enumerate() {
                            let ix = ox as isize * s + off;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += *v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> (Tensor, ConvCache) {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (ho, wo) = self.out_hw(x.h, x.w);
        let cols = if self.is_pointwise() {
            x.data.clone()
        } else {
            self.im2col(x, ho, wo)
        };
        let hw = ho * wo;
        let kdim = self.cin * self.k * self.k;
        let mut out = Tensor::zeros(self.cout, ho, wo);
        let bias = &ps.values[self.bias];
        for (co, b) in bias.iter().enumerate() {
            out.data[co * hw..(co + 1) * hw].fill(*b);
        }
        gemm(
            self.cout,
            kdim,
            hw,
            &ps.values[self.weight],
            (kdim as isize, 1),
            &cols,
            (hw as isize, 1),
            1.0,
            &mut out.data,
        );
        (
            out,
            ConvCache {
                cols,
                in_shape: x.shape(),
            },
        )
    }

    /// Accumulates parameter gradients; returns the input gradient if asked.
    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &ConvCache,
        dout: &Tensor,
        grads: &mut Grads,
        need_dx: bool,
    ) -> Option<Tensor> {
        let hw = dout.h * dout.w;
        let kdim = self.cin * self.k * self.k;
        {
            let db = &mut grads.0[self.bias];
            for (co, g) in db.iter_mut().enumerate() {
                *g += dout.data[co * hw..(co + 1) * hw].iter().sum::<f32>();
            }
        }
        gemm(
            self.cout,
            hw,
            kdim,
            &dout.data,
            (hw as isize, 1),
            &cache.cols,
            (1, hw as isize),
            1.0,
            &mut grads.0[self.weight],
        );
        if !need_dx {
            return None;
        }
        let mut dcols = vec![0.0f32; kdim * hw];
        gemm(
            kdim,
            self.cout,
            hw,
            &ps.values[self.weight],
            (1, kdim as isize),
            &dout.data,
            (hw as isize, 1),
            0.0,
            &mut dcols,
        );
        if self.is_pointwise() {
            let (c, h, w) = cache.in_shape;
            return Some(Tensor::from_vec(c, h, w, dcols));
        }
        Some(self.col2im(&dcols, cache.in_shape, dout.h, dout.w))
    }
}

/// Convolution followed by ReLU.
#[derive(Clone, Debug)]
pub struct ConvRelu {
    pub conv: Conv2d,
}

pub struct ConvReluCache {
    conv: ConvCache,
    out: Tensor,
}

impl ConvRelu {
    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> (Tensor, ConvReluCache) {
        let (mut out, conv) = self.conv.forward(ps, x);
        for v in &mut out.data {
            *v = v.max(0.0);
        }
        let cache = ConvReluCache {
            conv,
            out: out.clone(),
        };
        (out, cache)
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &ConvReluCache,
        dout: &Tensor,
        grads: &mut Grads,
        need_dx: bool,
    ) -> Option<Tensor> {
        let mut d = dout.clone();
        for (g, o) in d.data.iter_mut().zip(&cache.out.data) {
            if *o <= 0.0 {
                *g = 0.0;
            }
        }
        self.conv.backward(ps, &cache.conv, &d, grads, need_dx)
    }
}

/// 2×2 max pooling, stride 2. Returns the argmax index of every output.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (ho, wo) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, ho, wo);
    let mut idx = vec![0u32; x.c * ho * wo];
    for c in 0..x.c {
        let base = c * x.h * x.w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * x.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * x.w + 2 * ox + dx;
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                let o = (c * ho + oy) * wo + ox;
                out.data[o] = x.data[best];
                idx[o] = best as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward(dout: &Tensor, idx: &[u32], in_shape: (usize, usize, usize)) -> Tensor {
    let (c, h, w) = in_shape;
    let mut dx = Tensor::zeros(c, h, w);
    for (g, i) in dout.data.iter().zip(idx) {
        dx.data[*i as usize] += *g;
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = &mut out.data[c * h2 * w2..(c + 1) * h2 * w2];
        for y in 0..h2 {
            let srow = &src[(y / 2) * x.w..(y / 2 + 1) * x.w];
            for (xx, v) in dst[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                *v = srow[xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dout: &Tensor) -> Tensor {
    let (h, w) = (dout.h / 2, dout.w / 2);
    let mut dx = Tensor::zeros(dout.c, h, w);
    for c in 0..dout.c {
        let src = dout.plane(c);
        let dst = &mut dx.data[c * h * w..(c + 1) * h * w];
        for y in 0..dout.h {
            for x in 0..dout.w {
                dst[(y / 2) * w + x / 2] += src[y * dout.w + x];
            }
        }
    }
    dx
}

/// Channel attention: global average pool, bottleneck MLP, sigmoid gate.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub channels: usize,
    pub hidden: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

pub struct SeCache {
    x: Tensor,
    pooled: Vec<f32>,
    hidden: Vec<f32>,
    gate: Vec<f32>,
}

impl SqueezeExcite {
    pub fn new(ps: &mut ParamSet, rng: &mut impl Rng, channels: usize, reduction: usize) -> Self {
        let hidden = (channels / reduction).max(1);
        let w1 = ps.add_uniform(vec![hidden, channels], (6.0 / channels as f32).sqrt(), rng);
        let b1 = ps.add_uniform(vec![hidden], 0.0, rng);
        let w2 = ps.add_uniform(vec![channels, hidden], (6.0 / hidden as f32).sqrt(), rng);
        let b2 = ps.add_uniform(vec![channels], 0.0, rng);
        Self {
            channels,
            hidden,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Tensor) -> (Tensor, SeCache) {
        let n = (x.h * x.w) as f32;
        let pooled: Vec<f32> = (0..x.c).map(|c| x.plane(c).iter().sum::<f32>() / n).collect();
        let (w1, b1, w2, b2) = (
            &ps.values[self.w1],
            &ps.values[self.b1],
            &ps.values[self.w2],
            &ps.values[self.b2],
        );
        let hidden: Vec<f32> = (0..self.hidden)
            .map(|j| {
                let s: f32 = (0..self.channels).map(|c| w1[j * self.channels + c] * pooled[c]).sum();
                (s + b1[j]).max(0.0)
            })
            .collect();
        let gate: Vec<f32> = (0..self.channels)
            .map(|c| {
                let s: f32 = (0..self.hidden).map(|j| w2[c * self.hidden + j] * hidden[j]).sum();
                1.0 / (1.0 + (-(s + b2[c])).exp())
            })
            .collect();
        let mut out = x.clone();
        let hw = x.h * x.w;
        for (c, g) in gate.iter().enumerate() {
            for v in &mut out.data[c * hw..(c + 1) * hw] {
                *v *= g;
            }
        }
        (
            out,
            SeCache {
                x: x.clone(),
                pooled,
                hidden,
                gate,
            },
        )
    }

    pub fn backward(&self, ps: &ParamSet, cache: &SeCache, dout: &Tensor, grads: &mut Grads) -> Tensor {
        let hw = dout.h * dout.w;
        let (ch, hid) = (self.channels, self.hidden);
        let mut dx = dout.clone();
        let mut dpre2 = vec![0.0f32; ch];
        for c in 0..ch {
            let g = cache.gate[c];
            let mut dgate = 0.0f32;
            for i in c * hw..(c + 1) * hw {
                dgate += dout.data[i] * cache.x.data[i];
                dx.data[i] *= g;
            }
            dpre2[c] = dgate * g * (1.0 - g);
        }
        let w2 = &ps.values[self.w2];
        let mut dhidden = vec![0.0f32; hid];
        for c in 0..ch {
            grads.0[self.b2][c] += dpre2[c];
            for j in 0..hid {
                grads.0[self.w2][c * hid + j] += dpre2[c] * cache.hidden[j];
                dhidden[j] += w2[c * hid + j] * dpre2[c];
            }
        }
        let w1 = &ps.values[self.w1];
        let mut dpooled = vec![0.0f32; ch];
        for j in 0..hid {
            if cache.hidden[j] <= 0.0 {
                continue;
            }
            grads.0[self.b1][j] += dhidden[j];
            for c in 0..ch {
                grads.0[self.w1][j * ch + c] += dhidden[j] * cache.pooled[c];
                dpooled[c] += w1[j * ch + c] * dhidden[j];
            }
        }
        for (c, dp) in dpooled.iter().enumerate() {
            let add = dp / hw as f32;
            for v in &mut dx.data[c * hw..(c + 1) * hw] {
                *v += add;
            }
        }
        dx
    }
}
