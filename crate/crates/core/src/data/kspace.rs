//! k-space truncation: the LR image keeps only the central block of the HR
//! image's spectrum.
//!
//! Along each axis of length `n` reduced to `m = n / s`, the kept bins are the
//! frequencies `−m/2 … m/2 − 1`. The output's Nyquist bin `−m/2` receives
//! `½ (X[−m/2] + X[+m/2])`, so a real input yields a real output. The `1/s` per
//! axis amplitude factor keeps constants unchanged. The axes are processed
//! one after the other (rows, then columns) and the real part is returned.

use crate::tensor::{Real, Tensor};
use crate::{Error, Result};
use num_complex::Complex;
use rustfft::FftPlanner;

type C64 = Complex<f64>;

/// Keeps the central `m` of `n` bins, including the half-weighted Nyquist rule.
fn truncate_spectrum(spec: &[C64], m: usize) -> Vec<C64> {
    let n = spec.len();
    let mut out = vec![C64::default(); m];
    let half = m / 2;
    out[..half].copy_from_slice(&spec[..half]);
    for k in 1..half {
        out[m - k] = spec[n - k];
    }
    if m % 2 == 1 {
        out[half] = spec[half];
        if half > 0 {
            out[m - half] = spec[n - half];
        }
    } else if m == n {
        out[half] = spec[half];
    } else {
        out[half] = (spec[n - half] + spec[half]) * 0.5;
    }
    out
}

/// Zero-pads `m` bins to `n`, splitting the Nyquist bin equally between `±m/2`.
fn pad_spectrum(spec: &[C64], n: usize) -> Vec<C64> {
    let m = spec.len();
    let mut out = vec![C64::default(); n];
    let half = m / 2;
    out[..half].copy_from_slice(&spec[..half]);
    for k in 1..half {
        out[n - k] = spec[m - k];
    }
    if m % 2 == 1 {
        out[half] = spec[half];
        if half > 0 {
            out[n - half] = spec[m - half];
        }
    } else if m == n {
        out[half] = spec[half];
    } else {
        out[half] = spec[half] * 0.5;
        out[n - half] = spec[half] * 0.5;
    }
    out
}

/// Resamples every line along one axis of a `[planes, h, w]` complex buffer.
fn resample_axis(
    data: &[C64],
    (planes, h, w): (usize, usize, usize),
    along_rows: bool,
    to: usize,
    planner: &mut FftPlanner<f64>,
) -> (Vec<C64>, (usize, usize, usize)) {
    let n = if along_rows { w } else { h };
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(to);
    let (oh, ow) = if along_rows { (h, to) } else { (to, w) };
    let mut out = vec![C64::default(); planes * oh * ow];
    let scale = 1.0 / n as f64;
    let lines = if along_rows { h } else { w };
    let mut line = vec![C64::default(); n];
    for p in 0..planes {
        for i in 0..lines {
            for (j, v) in line.iter_mut().enumerate() {
                *v = if along_rows { data[(p * h + i) * w + j] } else { data[(p * h + j) * w + i] };
            }
            fwd.process(&mut line);
            let mut spec = if to <= n { truncate_spectrum(&line, to) } else { pad_spectrum(&line, to) };
            inv.process(&mut spec);
            // both transforms are unnormalised; dividing by the source length keeps constants fixed
            for (j, v) in spec.iter().enumerate() {
                let idx = if along_rows { (p * oh + i) * ow + j } else { (p * oh + j) * ow + i };
                out[idx] = v * scale;
            }
        }
    }
    (out, (planes, oh, ow))
}

fn resample<T: Real>(img: &Tensor<T>, oh: usize, ow: usize) -> Result<(Tensor<T>, f64)> {
    let (b, c, h, w) = img.dims4()?;
    let data: Vec<C64> = img.data().iter().map(|v| C64::new(v.as_f64(), 0.0)).collect();
    let mut planner = FftPlanner::new();
    let (rows, dims) = resample_axis(&data, (b * c, h, w), true, ow, &mut planner);
    let (both, _) = resample_axis(&rows, dims, false, oh, &mut planner);
    let residue = both.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    let out = Tensor::new(&[b, c, oh, ow], both.iter().map(|v| T::of(v.re)).collect())?;
    Ok((out, residue))
}

fn check_scale(h: usize, w: usize, s: usize, op: &'static str) -> Result<()> {
    if s == 0 || !h.is_multiple_of(s) || !w.is_multiple_of(s) {
        return Err(Error::shape(op, format!("{h}×{w} is not divisible by scale {s}")));
    }
    Ok(())
}

/// Low-resolution image `[B, C, H/s, W/s]` from the central k-space block of `hr`.
pub fn kspace_truncate<T: Real>(hr: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    kspace_truncate_with_residue(hr, s).map(|(t, _)| t)
}

/// As [`kspace_truncate`], also returning the largest discarded imaginary part.
pub fn kspace_truncate_with_residue<T: Real>(hr: &Tensor<T>, s: usize) -> Result<(Tensor<T>, f64)> {
    let (_, _, h, w) = hr.dims4()?;
    check_scale(h, w, s, "kspace_truncate")?;
    resample(hr, h / s, w / s)
}

/// Zero-filled k-space interpolation `[B, C, h, w] → [B, C, s·h, s·w]`.
///
/// Inverts [`kspace_truncate`] exactly for signals without energy at or beyond
/// the LR Nyquist frequency.
pub fn kspace_upsample<T: Real>(lr: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (_, _, h, w) = lr.dims4()?;
    if s == 0 {
        return Err(Error::shape("kspace_upsample", "scale must be positive"));
    }
    resample(lr, h * s, w * s).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Direct O(n²) DFT truncation of one axis to an even length `m`.
    fn naive_truncate_1d(x: &[f64], m: usize) -> Vec<f64> {
        let n = x.len() as isize;
        let dft = |k: isize| -> C64 {
            x.iter().enumerate().map(|(j, &v)| C64::from_polar(v, -2.0 * PI * (k * j as isize) as f64 / n as f64)).sum()
        };
        let half = (m / 2) as isize;
        let mut bins: Vec<(isize, C64)> = (-half + 1..half).map(|k| (k, dft(k))).collect();
        bins.push((-half, (dft(-half) + dft(half)) * 0.5));
        (0..m)
            .map(|j| {
                let s: C64 = bins.iter().map(|&(k, v)| v * C64::from_polar(1.0, 2.0 * PI * (k * j as isize) as f64 / m as f64)).sum();
                s.re / n as f64
            })
            .collect()
    }

    fn cosine(h: usize, w: usize, fy: f64, fx: f64) -> Tensor<f64> {
        Tensor::from_fn(&[1, 1, h, w], |i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            (2.0 * PI * (fy * y / h as f64 + fx * x / w as f64)).cos()
        })
    }

    #[test]
    fn constants_are_preserved() {
        let hr = Tensor::<f64>::full(&[1, 1, 8, 12], 0.7);
        let lr = kspace_truncate(&hr, 2).unwrap();
        assert_eq!(lr.shape(), &[1, 1, 4, 6]);
        assert!(lr.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn in_band_cosine_is_resampled_exactly() {
        let hr = cosine(16, 16, 3.0, -2.0);
        let (lr, residue) = kspace_truncate_with_residue(&hr, 2).unwrap();
        assert!(residue < 1e-9);
        for y in 0..8 {
            for x in 0..8 {
                assert!((lr.at4(0, 0, y, x) - hr.at4(0, 0, 2 * y, 2 * x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn out_of_band_cosine_is_removed() {
        let lr = kspace_truncate(&cosine(16, 16, 5.0, 0.0), 2).unwrap();
        assert!(lr.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn matches_the_direct_dft_on_rows() {
        let hr = Tensor::<f64>::from_fn(&[1, 1, 1, 12], |i| ((i * 7 % 5) as f64 * 0.3).sin());
        let (lr, _) = resample(&hr, 1, 3).unwrap();
        // odd m: no Nyquist bin, plain central band
        assert_eq!(lr.shape(), &[1, 1, 1, 3]);
        let n = hr.data().len();
        let dft = |k: isize| -> C64 {
            hr.data().iter().enumerate().map(|(j, &v)| C64::from_polar(v, -2.0 * PI * (k * j as isize) as f64 / n as f64)).sum()
        };
        for j in 0..3 {
            let s: C64 = (-1..=1).map(|k: isize| dft(k) * C64::from_polar(1.0, 2.0 * PI * (k * j as isize) as f64 / 3.0)).sum();
            assert!((lr.data()[j] - s.re / n as f64).abs() < 1e-12);
        }
        let (even, _) = resample(&hr, 1, 6).unwrap();
        let want6 = naive_truncate_1d(hr.data(), 6);
        for (got, want) in even.data().iter().zip(&want6) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nyquist_bin_is_half_weighted() {
        // a cosine exactly at the LR Nyquist frequency keeps half its amplitude
        let (lr, _) = resample(&cosine(1, 16, 0.0, 4.0), 1, 8).unwrap();
        for x in 0..8 {
            let sign = if x % 2 == 0 { 1.0 } else { -1.0 };
            assert!((lr.data()[x] - 0.5 * sign).abs() < 1e-12);
        }
    }

    #[test]
    fn upsampling_inverts_truncation_in_band() {
        let hr = Tensor::<f64>::from_fn(&[1, 1, 16, 16], |i| {
            let (y, x) = ((i / 16) as f64, (i % 16) as f64);
            0.4 + 0.2 * (2.0 * PI * (2.0 * y + x) / 16.0).cos() + 0.1 * (2.0 * PI * 3.0 * x / 16.0).sin()
        });
        let back = kspace_upsample(&kspace_truncate(&hr, 2).unwrap(), 2).unwrap();
        assert!(back.max_abs_diff(&hr) < 1e-9);
    }

    #[test]
    fn equal_length_resampling_is_the_identity() {
        for n in [5, 6] {
            let x = Tensor::<f64>::from_fn(&[1, 1, n, n], |i| ((i * 11 % 7) as f64 * 0.4).cos());
            assert!(resample(&x, n, n).unwrap().0.max_abs_diff(&x) < 1e-12);
        }
        let odd = Tensor::<f64>::from_fn(&[1, 1, 1, 3], |i| [0.2, 0.9, -0.4][i]);
        let round = resample(&resample(&odd, 1, 9).unwrap().0, 1, 3).unwrap().0;
        assert!(round.max_abs_diff(&odd) < 1e-12);
    }

    #[test]
    fn indivisible_sizes_are_rejected() {
        assert!(kspace_truncate(&Tensor::<f64>::zeros(&[1, 1, 6, 6]), 4).is_err());
    }
}
