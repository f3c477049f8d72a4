//! Edge and distance ground truth derived from a binary region mask.
//!
//! Conventions: Sobel runs with replicate border padding (an all-ones mask
//! has no edges); the distance transform treats positions outside the image
//! as background, uses the exact Euclidean metric, and normalizes by the
//! maximum foreground distance.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Region, edge and normalized distance maps for one sample, all `(1,1,H,W)`.
#[derive(Clone, Debug)]
pub struct MultiTaskTargets {
    pub region: Tensor,
    pub edge: Tensor,
    pub distance: Tensor,
}

impl MultiTaskTargets {
    /// Derive edge and distance maps from a binary region mask.
    pub fn from_region(region: Tensor) -> Result<Self> {
        let edge = sobel_edge(&region)?;
        let distance = distance_map(&region)?;
        Ok(MultiTaskTargets { region, edge, distance })
    }
}

fn check_binary_mask(region: &Tensor) -> Result<(usize, usize)> {
    let (n, c, h, w) = region.dims();
    if n != 1 || c != 1 {
        return Err(Error::Shape(format!(
            "region mask must be (1, 1, H, W), got {:?}",
            region.shape()
        )));
    }
    if !region.is_binary() {
        return Err(Error::Argument("region mask must be binary (0/1)".into()));
    }
    Ok((h, w))
}

/// Binary edge map: 1 where the Sobel gradient magnitude of the region mask
/// is strictly positive, computed with replicate border padding.
pub fn sobel_edge(region: &Tensor) -> Result<Tensor> {
    let (h, w) = check_binary_mask(region)?;
    const GX: [[i64; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
    const GY: [[i64; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];

    let sample = |y: isize, x: isize| -> i64 {
        let yc = y.clamp(0, h as isize - 1) as usize;
        let xc = x.clamp(0, w as isize - 1) as usize;
        region.at(0, 0, yc, xc) as i64
    };

    let mut edge = Tensor::zeros([1, 1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0i64, 0i64);
            for ky in 0..3 {
                for kx in 0..3 {
                    let v = sample(y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                    gx += GX[ky][kx] * v;
                    gy += GY[ky][kx] * v;
                }
            }
            if gx * gx + gy * gy > 0 {
                edge.set(0, 0, y, x, 1.0);
            }
        }
    }
    Ok(edge)
}

/// Exact squared Euclidean distance to the nearest `false` cell, with cells
/// outside the grid counting as `false`. Felzenszwalb-Huttenlocher lower
/// envelope, run on a grid padded by one background ring.
fn edt_squared_padded(mask: &Tensor, h: usize, w: usize) -> Vec<f64> {
    const INF: f64 = 1e30;
    let (ph, pw) = (h + 2, w + 2);
    let mut f = vec![0.0f64; ph * pw];
    for y in 0..h {
        for x in 0..w {
            if mask.at(0, 0, y, x) == 1.0 {
                f[(y + 1) * pw + (x + 1)] = INF;
            }
        }
    }

    // 1-D squared distance transform of a sampled function.
    fn dt_1d(f: &[f64], d: &mut [f64]) {
        let n = f.len();
        let mut v = vec![0usize; n];
        let mut z = vec![0.0f64; n + 1];
        let mut k = 0usize;
        v[0] = 0;
        z[0] = -INF_1D;
        z[1] = INF_1D;
        for q in 1..n {
            let mut s;
            loop {
                let p = v[k];
                s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                    / (2.0 * q as f64 - 2.0 * p as f64);
                if s > z[k] {
                    break;
                }
                k -= 1;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = INF_1D;
        }
        k = 0;
        for q in 0..n {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let p = v[k] as f64;
            d[q] = (q as f64 - p) * (q as f64 - p) + f[v[k]];
        }
    }
    const INF_1D: f64 = 1e30;

    // Columns first, then rows.
    let mut col_in = vec![0.0f64; ph];
    let mut col_out = vec![0.0f64; ph];
    for x in 0..pw {
        for y in 0..ph {
            col_in[y] = f[y * pw + x];
        }
        dt_1d(&col_in, &mut col_out);
        for y in 0..ph {
            f[y * pw + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0f64; pw];
    for y in 0..ph {
        dt_1d(&f[y * pw..(y + 1) * pw].to_vec(), &mut row_out);
        f[y * pw..(y + 1) * pw].copy_from_slice(&row_out);
    }

    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = f[(y + 1) * pw + (x + 1)];
        }
    }
    out
}

/// Normalized Euclidean distance map: for foreground pixels the distance to
/// the nearest background pixel (out-of-image counts as background) divided
/// by the maximum over the foreground; background pixels are 0; an empty
/// region yields all zeros.
pub fn distance_map(region: &Tensor) -> Result<Tensor> {
    let (h, w) = check_binary_mask(region)?;
    let d2 = edt_squared_padded(region, h, w);

    let mut max_d2 = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            if region.at(0, 0, y, x) == 1.0 {
                max_d2 = max_d2.max(d2[y * w + x]);
            }
        }
    }
    let mut out = Tensor::zeros([1, 1, h, w]);
    if max_d2 == 0.0 {
        return Ok(out);
    }
    let max_d = max_d2.sqrt();
    for y in 0..h {
        for x in 0..w {
            if region.at(0, 0, y, x) == 1.0 {
                out.set(0, 0, y, x, d2[y * w + x].sqrt() / max_d);
            }
        }
    }
    Ok(out)
}
