//! Shifted 2-D DFT, power-spectrum cutoff search, and low/high-frequency
//! image decomposition.
//!
//! Conventions, fixed so every test oracle can reproduce them:
//!
//! - The forward transform is unnormalized; the inverse carries the
//!   `1/(H·W)` factor. Parseval then reads
//!   `Σ_spatial |x|² = (1/(H·W)) Σ_freq |X|²`.
//! - "Shifted" means the spectrum is circularly rotated so the DC bin sits
//!   at `(⌊H/2⌋, ⌊W/2⌋)`. For even extents this equals the classic
//!   `(−1)^(x+y)` spatial premultiply; the rotation form also behaves as a
//!   pure permutation for odd extents.
//! - Cutoff radii accumulate power over whole shells `u² + v² ≤ ρ`, summed
//!   across channels, scanning achievable integer radii in increasing order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Per-channel 2-D complex spectrum with the DC bin at the spatial center.
#[derive(Clone, Debug)]
pub struct ComplexSpectrum {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<Complex<f64>>,
}

impl ComplexSpectrum {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn at(&self, c: usize, row: usize, col: usize) -> Complex<f64> {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// Row/column index of the DC bin.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// Total power `T = Σ |X(u,v)|²` over all channels and bins.
    pub fn total_power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Power-spectrum ratio `r ∈ [0, 1]` controlling the low-pass cutoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerSpectrumRatio(f64);

impl PowerSpectrumRatio {
    pub fn new(r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) || r.is_nan() {
            return Err(Error::Argument(format!(
                "power spectrum ratio must lie in [0, 1], got {r}"
            )));
        }
        Ok(PowerSpectrumRatio(r))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Binary low-pass mask: bin `(u, v)` measured from the spectrum center is
/// selected iff `u² + v² ≤ r²`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMask {
    height: usize,
    width: usize,
    r2: u32,
    data: Vec<bool>,
}

impl FrequencyMask {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn radius_squared(&self) -> u32 {
        self.r2
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True when every selected bin of `self` is also selected by `other`.
    pub fn subset_of(&self, other: &FrequencyMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Result of splitting an image into complementary frequency components.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub low: Tensor,
    pub high: Tensor,
    pub mask: FrequencyMask,
}

fn check_image(image: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = image.dims();
    if n != 1 {
        return Err(Error::Argument(format!(
            "spectral ops take one image at a time (batch 1), got batch {n}"
        )));
    }
    if !image.all_finite() {
        return Err(Error::Argument("image contains non-finite values".into()));
    }
    Ok((c, h, w))
}

/// 1-D FFT along rows, then columns, in place on a row-major buffer.
fn fft2d_in_place(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut col = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Circularly rotate a plane so index `(0, 0)` moves to `(dy, dx)`.
fn rotate_plane(buf: &[Complex<f64>], h: usize, w: usize, dy: usize, dx: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::default(); h * w];
    for y in 0..h {
        let ty = (y + dy) % h;
        for x in 0..w {
            let tx = (x + dx) % w;
            out[ty * w + tx] = buf[y * w + x];
        }
    }
    out
}

/// Forward DFT of a `(1, C, H, W)` image with the DC bin relocated to
/// `(⌊H/2⌋, ⌊W/2⌋)` per channel.
pub fn dft2d_shifted(image: &Tensor) -> Result<ComplexSpectrum> {
    let (c, h, w) = check_image(image)?;
    let mut data = Vec::with_capacity(c * h * w);
    for ci in 0..c {
        let mut buf: Vec<Complex<f64>> =
            image.plane(0, ci).iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft2d_in_place(&mut buf, h, w, false);
        data.extend(rotate_plane(&buf, h, w, h / 2, w / 2));
    }
    Ok(ComplexSpectrum { channels: c, height: h, width: w, data })
}

/// Inverse of [`dft2d_shifted`], carrying the `1/(H·W)` normalization.
///
/// The imaginary residue of the inverse transform must stay below `1e-6`
/// in magnitude; it is checked and discarded.
pub fn idft2d_shifted(spec: &ComplexSpectrum) -> Result<Tensor> {
    let (c, h, w) = spec.dims();
    let norm = 1.0 / (h * w) as f64;
    let mut out = Tensor::zeros([1, c, h, w]);
    for ci in 0..c {
        let plane = &spec.data[ci * h * w..(ci + 1) * h * w];
        // Undo the center shift, then inverse transform.
        let mut buf = rotate_plane(plane, h, w, h - h / 2, w - w / 2);
        fft2d_in_place(&mut buf, h, w, true);
        let dst = out.plane_mut(0, ci);
        for (d, z) in dst.iter_mut().zip(&buf) {
            let im = z.im * norm;
            if im.abs() >= 1e-6 {
                return Err(Error::Residue(format!(
                    "inverse transform left imaginary part {im:.3e}"
                )));
            }
            *d = z.re * norm;
        }
    }
    Ok(out)
}

/// Largest integer `ρ` such that the power inside the shell `u² + v² ≤ ρ`
/// is at most `r · T`; `0` when even the DC shell exceeds the budget, so the
/// low component always keeps the image mean.
pub fn cutoff_radius(spec: &ComplexSpectrum, r: PowerSpectrumRatio) -> Result<u32> {
    let (c, h, w) = spec.dims();
    let (cy, cx) = spec.center();
    let mut bins: Vec<(u32, f64)> = Vec::with_capacity(c * h * w);
    for ci in 0..c {
        for row in 0..h {
            let u = row as i64 - cy as i64;
            for col in 0..w {
                let v = col as i64 - cx as i64;
                let r2 = (u * u + v * v) as u32;
                bins.push((r2, spec.at(ci, row, col).norm_sqr()));
            }
        }
    }
    bins.sort_by_key(|&(r2, _)| r2);

    let mut cumulative = 0.0;
    let mut partials: Vec<(u32, f64)> = Vec::new();
    for i in 0..bins.len() {
        cumulative += bins[i].1;
        if i + 1 == bins.len() || bins[i + 1].0 != bins[i].0 {
            partials.push((bins[i].0, cumulative));
        }
    }
    let total = cumulative;
    if total == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }

    let mut best = None;
    for &(r2, p) in &partials {
        if p / total <= r.get() {
            best = Some(r2);
        } else {
            break;
        }
    }
    Ok(best.unwrap_or(0))
}

/// Binary mask selecting bins with centered `u² + v² ≤ r2`.
pub fn build_low_mask(height: usize, width: usize, r2: u32) -> FrequencyMask {
    let (cy, cx) = (height / 2, width / 2);
    let mut data = vec![false; height * width];
    for row in 0..height {
        let u = row as i64 - cy as i64;
        for col in 0..width {
            let v = col as i64 - cx as i64;
            data[row * width + col] = (u * u + v * v) as u32 <= r2;
        }
    }
    FrequencyMask { height, width, r2, data }
}

/// Split an image into complementary low/high-frequency components using the
/// power-ratio cutoff. `low + high` reproduces the input to within 1e-6.
pub fn decompose(image: &Tensor, r: PowerSpectrumRatio) -> Result<Decomposition> {
    let spec = dft2d_shifted(image)?;
    let r2 = cutoff_radius(&spec, r)?;
    let (_, h, w) = spec.dims();
    let mask = build_low_mask(h, w, r2);
    let (low, high) = split_with_mask(&spec, &mask)?;
    Ok(Decomposition { low, high, mask })
}

/// Decompose with an externally chosen mask (shared-mask linearity checks,
/// cached masks).
pub fn decompose_with_mask(image: &Tensor, mask: &FrequencyMask) -> Result<(Tensor, Tensor)> {
    let spec = dft2d_shifted(image)?;
    split_with_mask(&spec, mask)
}

fn split_with_mask(spec: &ComplexSpectrum, mask: &FrequencyMask) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = spec.dims();
    if mask.dims() != (h, w) {
        return Err(Error::Shape(format!(
            "mask dims {:?} do not match spectrum ({h}, {w})",
            mask.dims()
        )));
    }
    let zero = Complex::new(0.0, 0.0);
    let mut low_spec = ComplexSpectrum { channels: c, height: h, width: w, data: vec![zero; c * h * w] };
    let mut high_spec = low_spec.clone();
    for ci in 0..c {
        for row in 0..h {
            for col in 0..w {
                let i = (ci * h + row) * w + col;
                if mask.contains(row, col) {
                    low_spec.data[i] = spec.data[i];
                } else {
                    high_spec.data[i] = spec.data[i];
                }
            }
        }
    }
    Ok((idft2d_shifted(&low_spec)?, idft2d_shifted(&high_spec)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut r = rng::rng_from(seed);
        Tensor::from_fn([1, c, h, w], |_, _, _, _| rng::uniform(&mut r))
    }

    /// Direct O(N^4) DFT with the same shift convention, for oracle checks.
    fn naive_dft(image: &Tensor, c: usize, h: usize, w: usize) -> Vec<Complex<f64>> {
        let (cy, cx) = (h / 2, w / 2);
        let mut out = vec![Complex::new(0.0, 0.0); c * h * w];
        for ci in 0..c {
            for row in 0..h {
                for col in 0..w {
                    // Centered bin (row, col) holds unshifted frequency
                    // (row - cy mod h, col - cx mod w).
                    let ku = (row + h - cy) % h;
                    let kv = (col + w - cx) % w;
                    let mut acc = Complex::new(0.0, 0.0);
                    for y in 0..h {
                        for x in 0..w {
                            let phase = -std::f64::consts::TAU
                                * (ku as f64 * y as f64 / h as f64
                                    + kv as f64 * x as f64 / w as f64);
                            acc += Complex::new(phase.cos(), phase.sin())
                                * image.at(0, ci, y, x);
                        }
                    }
                    out[(ci * h + row) * w + col] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn constant_image_concentrates_at_dc() {
        let img = Tensor::full([1, 1, 2, 2], 1.0);
        let spec = dft2d_shifted(&img).unwrap();
        for row in 0..2 {
            for col in 0..2 {
                let z = spec.at(0, row, col);
                if (row, col) == (1, 1) {
                    assert!((z.re - 4.0).abs() < 1e-12 && z.im.abs() < 1e-12);
                } else {
                    assert!(z.norm() < 1e-12, "bin ({row},{col}) = {z}");
                }
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut img = Tensor::zeros([1, 1, 4, 4]);
        img.set(0, 0, 0, 0, 1.0);
        let spec = dft2d_shifted(&img).unwrap();
        for row in 0..4 {
            for col in 0..4 {
                assert!((spec.at(0, row, col).norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_naive_dft_and_parseval() {
        let img = random_image(1, 8, 8, 41);
        let spec = dft2d_shifted(&img).unwrap();
        let oracle = naive_dft(&img, 1, 8, 8);
        for (i, &z) in oracle.iter().enumerate() {
            assert!((spec.data[i] - z).norm() < 1e-9, "bin {i}: {} vs {z}", spec.data[i]);
        }
        let spatial: f64 = img.data().iter().map(|v| v * v).sum();
        let freq = spec.total_power() / 64.0;
        assert!((spatial - freq).abs() / spatial < 1e-6, "Parseval: {spatial} vs {freq}");
    }

    #[test]
    fn round_trip_identity() {
        for &(c, h, w) in &[(1usize, 5usize, 7usize), (3, 16, 16), (3, 64, 64)] {
            let img = random_image(c, h, w, 7 + h as u64);
            let back = idft2d_shifted(&dft2d_shifted(&img).unwrap()).unwrap();
            assert!(img.max_abs_diff(&back) < 1e-6);
        }
    }

    #[test]
    fn cutoff_degenerate_rules() {
        // Constant image: all power at DC, so P(0)/T = 1 > 0.5 -> radius 0.
        let img = Tensor::full([1, 1, 8, 8], 0.7);
        let spec = dft2d_shifted(&img).unwrap();
        assert_eq!(cutoff_radius(&spec, PowerSpectrumRatio::new(0.5).unwrap()).unwrap(), 0);

        // r = 1 always covers every bin.
        let img = random_image(1, 8, 8, 3);
        let spec = dft2d_shifted(&img).unwrap();
        let r2 = cutoff_radius(&spec, PowerSpectrumRatio::new(1.0).unwrap()).unwrap();
        assert!(r2 >= 4 * 4 + 4 * 4);

        // Zero image has no spectrum to cut.
        let spec = dft2d_shifted(&Tensor::zeros([1, 1, 4, 4])).unwrap();
        assert!(matches!(
            cutoff_radius(&spec, PowerSpectrumRatio::new(0.5).unwrap()),
            Err(Error::DegenerateSpectrum)
        ));
    }

    #[test]
    fn cutoff_matches_sort_and_scan_oracle() {
        for seed in 0..10 {
            let img = random_image(2, 8, 8, 100 + seed);
            let spec = dft2d_shifted(&img).unwrap();
            let r = PowerSpectrumRatio::new(0.5).unwrap();
            let got = cutoff_radius(&spec, r).unwrap();

            // Oracle: sort all bins by centered radius, accumulate power.
            let mut bins: Vec<(u32, f64)> = Vec::new();
            for c in 0..2 {
                for row in 0..8 {
                    for col in 0..8 {
                        let (u, v) = (row as i64 - 4, col as i64 - 4);
                        bins.push(((u * u + v * v) as u32, spec.at(c, row, col).norm_sqr()));
                    }
                }
            }
            bins.sort_by_key(|b| b.0);
            let total: f64 = {
                let mut t = 0.0;
                for b in &bins {
                    t += b.1;
                }
                t
            };
            let mut cum = 0.0;
            let mut expect = 0;
            for i in 0..bins.len() {
                cum += bins[i].1;
                let shell_end = i + 1 == bins.len() || bins[i + 1].0 != bins[i].0;
                if shell_end && cum / total <= r.get() {
                    expect = bins[i].0;
                }
            }
            assert_eq!(got, expect, "seed {seed}");
        }
    }

    #[test]
    fn mask_shapes_and_monotonicity() {
        let m0 = build_low_mask(8, 8, 0);
        assert_eq!(m0.ones(), 1);
        assert!(m0.contains(4, 4));

        // For H = W = 4 the corner radius bounds every bin's radius.
        let m_all = build_low_mask(4, 4, (2 * 2 + 2 * 2) as u32);
        assert_eq!(m_all.ones(), 16);
        for row in 0..4 {
            for col in 0..4 {
                let (u, v) = (row as i64 - 2, col as i64 - 2);
                assert!(((u * u + v * v) as u32) <= 8);
            }
        }

        assert!(build_low_mask(8, 8, 2).subset_of(&build_low_mask(8, 8, 5)));
    }

    #[test]
    fn decompose_partitions_and_all_pass() {
        let img = random_image(3, 16, 16, 9);
        let d = decompose(&img, PowerSpectrumRatio::new(0.5).unwrap()).unwrap();
        let mut sum = d.low.clone();
        for (s, h) in sum.data_mut().iter_mut().zip(d.high.data()) {
            *s += h;
        }
        assert!(img.max_abs_diff(&sum) < 1e-6);

        let d1 = decompose(&img, PowerSpectrumRatio::new(1.0).unwrap()).unwrap();
        assert!(img.max_abs_diff(&d1.low) < 1e-6);
        assert!(d1.high.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn decompose_matches_naive_pipeline() {
        // Oracle: naive DFT -> mask -> naive inverse DFT.
        let img = random_image(1, 16, 16, 55);
        let r = PowerSpectrumRatio::new(0.5).unwrap();
        let d = decompose(&img, r).unwrap();

        let (h, w) = (16usize, 16usize);
        let spec = naive_dft(&img, 1, h, w);
        let mut low_oracle = Tensor::zeros([1, 1, h, w]);
        let (cy, cx) = (h / 2, w / 2);
        for y in 0..h {
            for x in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for row in 0..h {
                    for col in 0..w {
                        if !d.mask.contains(row, col) {
                            continue;
                        }
                        let ku = (row + h - cy) % h;
                        let kv = (col + w - cx) % w;
                        let phase = std::f64::consts::TAU
                            * (ku as f64 * y as f64 / h as f64 + kv as f64 * x as f64 / w as f64);
                        acc += Complex::new(phase.cos(), phase.sin()) * spec[row * w + col];
                    }
                }
                low_oracle.set(0, 0, y, x, acc.re / (h * w) as f64);
            }
        }
        assert!(d.low.max_abs_diff(&low_oracle) < 1e-5);
    }

    #[test]
    fn decompose_is_linear_under_shared_mask() {
        let img = random_image(2, 12, 12, 77);
        let d = decompose(&img, PowerSpectrumRatio::new(0.4).unwrap()).unwrap();
        let mut scaled = img.clone();
        for v in scaled.data_mut() {
            *v *= 2.5;
        }
        let (low_s, _) = decompose_with_mask(&scaled, &d.mask).unwrap();
        let mut expect = d.low.clone();
        for v in expect.data_mut() {
            *v *= 2.5;
        }
        assert!(low_s.max_abs_diff(&expect) < 1e-6);
    }

    #[test]
    fn ratio_validation() {
        assert!(PowerSpectrumRatio::new(-0.1).is_err());
        assert!(PowerSpectrumRatio::new(1.1).is_err());
        assert!(PowerSpectrumRatio::new(0.0).is_ok());
        assert!(PowerSpectrumRatio::new(1.0).is_ok());
    }
}
