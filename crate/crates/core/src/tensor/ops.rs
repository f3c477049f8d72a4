//! Dense kernels behind the tape operations. All loops accumulate in `f64`.

use super::Tensor;
use crate::error::{Error, Result};

/// Output extent of a 1-D convolution axis.
pub(crate) fn conv_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * padding;
    if padded < span {
        return Err(Error::Shape(format!(
            "dilated kernel span {span} exceeds padded input {padded}"
        )));
    }
    Ok((padded - span) / stride + 1)
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
    dilation: usize,
    oh: usize,
    ow: usize,
) -> Tensor {
    let (n, cin, h, wd) = x.dims();
    let (cout, _, kh, kw) = w.dims();
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for ni in 0..n {
        for co in 0..cout {
            let bias = b.data()[co];
            out.plane_mut(ni, co).fill(bias);
        }
        for co in 0..cout {
            for ci in 0..cin {
                let xp = x.plane(ni, ci);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.at(co, ci, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        let off_y = ky * dilation;
                        let off_x = kx * dilation;
                        let op = out.plane_mut(ni, co);
                        for oy in 0..oh {
                            let iy = (oy * stride + off_y) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xp[iy as usize * wd..iy as usize * wd + wd];
                            let orow = &mut op[oy * ow..oy * ow + ow];
                            if stride == 1 {
                                // ix = ox + off_x - padding stays in [0, wd)
                                let shift = off_x as isize - padding as isize;
                                let lo = (-shift).max(0) as usize;
                                let hi = (wd as isize - shift).clamp(0, ow as isize) as usize;
                                for ox in lo..hi {
                                    orow[ox] += wv * xrow[(ox as isize + shift) as usize];
                                }
                            } else {
                                for ox in 0..ow {
                                    let ix = (ox * stride + off_x) as isize - padding as isize;
                                    if ix >= 0 && ix < wd as isize {
                                        orow[ox] += wv * xrow[ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Tensor,
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad: &Tensor,
    stride: usize,
    padding: usize,
    dilation: usize,
    need_dx: bool,
    need_dw: bool,
) -> ConvGrads {
    let (n, cin, h, wd) = x.dims();
    let (cout, _, kh, kw) = w.dims();
    let (_, _, oh, ow) = grad.dims();

    let mut dx = need_dx.then(|| Tensor::zeros(*x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(*w.shape()));
    let mut db = Tensor::zeros([1, cout, 1, 1]);

    for ni in 0..n {
        for co in 0..cout {
            let gp = grad.plane(ni, co);
            db.data_mut()[co] += gp.iter().sum::<f64>();
            for ci in 0..cin {
                let xp = x.plane(ni, ci);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.at(co, ci, ky, kx);
                        let off_y = ky * dilation;
                        let off_x = kx * dilation;
                        let mut wsum = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * stride + off_y) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let grow = &gp[oy * ow..oy * ow + ow];
                            let xrow = &xp[iy as usize * wd..iy as usize * wd + wd];
                            if stride == 1 {
                                let shift = off_x as isize - padding as isize;
                                let lo = (-shift).max(0) as usize;
                                let hi = (wd as isize - shift).clamp(0, ow as isize) as usize;
                                if need_dw {
                                    for ox in lo..hi {
                                        wsum += grow[ox] * xrow[(ox as isize + shift) as usize];
                                    }
                                }
                                if let Some(dxp) = dx.as_mut() {
                                    let drow = &mut dxp.plane_mut(ni, ci)
                                        [iy as usize * wd..iy as usize * wd + wd];
                                    for ox in lo..hi {
                                        drow[(ox as isize + shift) as usize] += wv * grow[ox];
                                    }
                                }
                            } else {
                                for ox in 0..ow {
                                    let ix = (ox * stride + off_x) as isize - padding as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    if need_dw {
                                        wsum += grow[ox] * xrow[ix as usize];
                                    }
                                    if let Some(dxp) = dx.as_mut() {
                                        let i = dxp.idx(ni, ci, iy as usize, ix as usize);
                                        dxp.data_mut()[i] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                        if let Some(dwp) = dw.as_mut() {
                            let i = dwp.idx(co, ci, ky, kx);
                            dwp.data_mut()[i] += wsum;
                        }
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and the flat
/// index (into the input data) of each selected element; ties resolve to the
/// first element in scan order.
pub(crate) fn maxpool2x2_forward(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (n, c, h, w) = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = vec![0u32; out.numel()];
    let mut o = 0;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let xp = x.plane(ni, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * 2, ox * 2);
                    let mut best = xp[y0 * w + x0];
                    let mut arg = y0 * w + x0;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (y0 + dy) * w + (x0 + dx);
                        if xp[i] > best {
                            best = xp[i];
                            arg = i;
                        }
                    }
                    out.data_mut()[o] = best;
                    argmax[o] = (base + arg) as u32;
                    o += 1;
                }
            }
        }
    }
    (out, argmax)
}

/// Per-axis bilinear resampling table for upsampling by an integer factor
/// with the half-pixel-center (align-corners-false) convention.
/// Entry `o` gives `(i0, i1, w0, w1)` with `w0 + w1 = 1`.
pub(crate) fn bilinear_axis_table(n_in: usize, scale: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..n_in * scale)
        .map(|o| {
            let src = (o as f64 + 0.5) / scale as f64 - 0.5;
            let floor = src.floor();
            let t = src - floor;
            let i0 = (floor as isize).clamp(0, n_in as isize - 1) as usize;
            let i1 = (floor as isize + 1).clamp(0, n_in as isize - 1) as usize;
            (i0, i1, 1.0 - t, t)
        })
        .collect()
}

pub(crate) fn bilinear_upsample_forward(x: &Tensor, scale: usize) -> Tensor {
    let (n, c, h, w) = x.dims();
    let ty = bilinear_axis_table(h, scale);
    let tx = bilinear_axis_table(w, scale);
    let mut out = Tensor::zeros([n, c, h * scale, w * scale]);
    for ni in 0..n {
        for ci in 0..c {
            let xp = x.plane(ni, ci);
            let op = out.plane_mut(ni, ci);
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let r0 = &xp[y0 * w..y0 * w + w];
                let r1 = &xp[y1 * w..y1 * w + w];
                let orow = &mut op[oy * w * scale..(oy + 1) * w * scale];
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    orow[ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1])
                        + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
                }
            }
        }
    }
    out
}

pub(crate) fn bilinear_upsample_backward(grad: &Tensor, in_shape: &super::Shape, scale: usize) -> Tensor {
    let [n, c, h, w] = *in_shape;
    let ty = bilinear_axis_table(h, scale);
    let tx = bilinear_axis_table(w, scale);
    let mut dx = Tensor::zeros(*in_shape);
    for ni in 0..n {
        for ci in 0..c {
            let gp = grad.plane(ni, ci);
            let dp = dx.plane_mut(ni, ci);
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let grow = &gp[oy * w * scale..(oy + 1) * w * scale];
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let g = grow[ox];
                    dp[y0 * w + x0] += g * wy0 * wx0;
                    dp[y0 * w + x1] += g * wy0 * wx1;
                    dp[y1 * w + x0] += g * wy1 * wx0;
                    dp[y1 * w + x1] += g * wy1 * wx1;
                }
            }
        }
    }
    dx
}

/// Per-channel batch statistics over `(batch, height, width)`.
pub(crate) fn batch_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = x.dims();
    let m = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut sum = 0.0;
        for ni in 0..n {
            sum += x.plane(ni, ci).iter().sum::<f64>();
        }
        mean[ci] = sum / m;
        let mut sq = 0.0;
        for ni in 0..n {
            for &v in x.plane(ni, ci) {
                let d = v - mean[ci];
                sq += d * d;
            }
        }
        var[ci] = sq / m;
    }
    (mean, var)
}
