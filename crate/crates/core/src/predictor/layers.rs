//! Feature-map tensors and the per-layer forward / adjoint kernels.

/// Channel-major `c x h x w` feature map.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Splits a channel-concatenated gradient back into its two parts.
    pub fn split_channels(self, first: usize) -> (Tensor, Tensor) {
        let n = self.h * self.w;
        let mut data = self.data;
        let second = data.split_off(first * n);
        (
            Tensor {
                c: first,
                h: self.h,
                w: self.w,
                data,
            },
            Tensor {
                c: self.c - first,
                h: self.h,
                w: self.w,
                data: second,
            },
        )
    }
}

/// Edge-duplication padding by `pad` pixels on every side.
pub(crate) fn pad_edge(x: &Tensor, pad: usize) -> Tensor {
    if pad == 0 {
        return x.clone();
    }
    let (hp, wp) = (x.h + 2 * pad, x.w + 2 * pad);
    let mut out = Tensor::zeros(x.c, hp, wp);
    for ch in 0..x.c {
        let src = x.plane(ch);
        let dst = &mut out.data[ch * hp * wp..(ch + 1) * hp * wp];
        for i in 0..hp {
            let si = (i as isize - pad as isize).clamp(0, x.h as isize - 1) as usize;
            for j in 0..wp {
                let sj = (j as isize - pad as isize).clamp(0, x.w as isize - 1) as usize;
                dst[i * wp + j] = src[si * x.w + sj];
            }
        }
    }
    out
}

/// Adjoint of [`pad_edge`]: folds the border back onto the edge pixels.
fn unpad_edge_adjoint(xp: &Tensor, pad: usize, h: usize, w: usize) -> Tensor {
    if pad == 0 {
        return xp.clone();
    }
    let mut out = Tensor::zeros(xp.c, h, w);
    for ch in 0..xp.c {
        let src = xp.plane(ch);
        let dst = &mut out.data[ch * h * w..(ch + 1) * h * w];
        for i in 0..xp.h {
            let di = (i as isize - pad as isize).clamp(0, h as isize - 1) as usize;
            for j in 0..xp.w {
                let dj = (j as isize - pad as isize).clamp(0, w as isize - 1) as usize;
                dst[di * w + dj] += src[i * xp.w + j];
            }
        }
    }
    out
}

/// Square convolution with `k x k` kernels (k odd) and edge-duplication
/// padding so the output keeps the input size. Weights are laid out as
/// `[cout][cin][k][k]`.
pub(crate) fn conv_forward(x: &Tensor, weight: &[f64], bias: &[f64], k: usize) -> (Tensor, Tensor) {
    let cout = bias.len();
    let cin = x.c;
    debug_assert_eq!(weight.len(), cout * cin * k * k);
    let pad = k / 2;
    let xp = pad_edge(x, pad);
    let (h, w, wp) = (x.h, x.w, xp.w);
    let mut out = Tensor::zeros(cout, h, w);
    for o in 0..cout {
        let out_o = &mut out.data[o * h * w..(o + 1) * h * w];
        out_o.fill(bias[o]);
        for ci in 0..cin {
            let xc = xp.plane(ci);
            for di in 0..k {
                for dj in 0..k {
                    let wv = weight[((o * cin + ci) * k + di) * k + dj];
                    for i in 0..h {
                        let row_in = &xc[(i + di) * wp + dj..(i + di) * wp + dj + w];
                        let row_out = &mut out_o[i * w..(i + 1) * w];
                        for (ro, ri) in row_out.iter_mut().zip(row_in) {
                            *ro += wv * ri;
                        }
                    }
                }
            }
        }
    }
    (out, xp)
}

/// Adjoint of [`conv_forward`]. Accumulates into `dweight` / `dbias` and
/// returns the gradient with respect to the unpadded input.
pub(crate) fn conv_backward(
    xp: &Tensor,
    weight: &[f64],
    dout: &Tensor,
    k: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Tensor {
    let cout = dout.c;
    let cin = xp.c;
    let pad = k / 2;
    let (h, w, wp) = (dout.h, dout.w, xp.w);
    let mut dxp = Tensor::zeros(cin, xp.h, xp.w);
    for o in 0..cout {
        let d_o = dout.plane(o);
        dbias[o] += d_o.iter().sum::<f64>();
        for ci in 0..cin {
            let xc = xp.plane(ci);
            let dxc_start = ci * xp.h * wp;
            for di in 0..k {
                for dj in 0..k {
                    let widx = ((o * cin + ci) * k + di) * k + dj;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for i in 0..h {
                        let start = (i + di) * wp + dj;
                        let row_in = &xc[start..start + w];
                        let row_d = &d_o[i * w..(i + 1) * w];
                        let row_dx = &mut dxp.data[dxc_start + start..dxc_start + start + w];
                        for ((dx, &g), &xv) in row_dx.iter_mut().zip(row_d).zip(row_in) {
                            acc += g * xv;
                            *dx += wv * g;
                        }
                    }
                    dweight[widx] += acc;
                }
            }
        }
    }
    unpad_edge_adjoint(&dxp, pad, h, w)
}

pub(crate) fn relu_inplace(x: &mut Tensor) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` where the ReLU output `y` was not positive.
pub(crate) fn relu_backward(y: &Tensor, grad: &mut Tensor) {
    for (g, &v) in grad.data.iter_mut().zip(&y.data) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling. Ties go to the first maximum in row-major window order,
/// i.e. the smallest linear index. Returns the argmax input index per output.
pub(crate) fn maxpool_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    let mut arg = vec![0usize; x.c * h2 * w2];
    for ch in 0..x.c {
        let base = ch * x.h * x.w;
        for i in 0..h2 {
            for j in 0..w2 {
                let mut best = base + (2 * i) * x.w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * x.w + 2 * j + dj;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                let o = (ch * h2 + i) * w2 + j;
                out.data[o] = x.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(dout: &Tensor, arg: &[usize], in_h: usize, in_w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dout.c, in_h, in_w);
    for (&g, &idx) in dout.data.iter().zip(arg) {
        dx.data[idx] += g;
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub(crate) fn upsample_forward(x: &Tensor) -> Tensor {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for ch in 0..x.c {
        for i in 0..h2 {
            for j in 0..w2 {
                out.data[(ch * h2 + i) * w2 + j] = x.data[(ch * x.h + i / 2) * x.w + j / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(dout: &Tensor) -> Tensor {
    let (h, w) = (dout.h / 2, dout.w / 2);
    let mut dx = Tensor::zeros(dout.c, h, w);
    for ch in 0..dout.c {
        for i in 0..dout.h {
            for j in 0..dout.w {
                dx.data[(ch * h + i / 2) * w + j / 2] += dout.data[(ch * dout.h + i) * dout.w + j];
            }
        }
    }
    dx
}
