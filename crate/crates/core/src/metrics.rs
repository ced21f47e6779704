//! Image quality metrics: PSNR, SSIM and error maps, plus CSV/JSON reports.

use crate::tensor::{Real, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;
/// Side of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Default error-map saturation level.
pub const ERROR_MAP_CAP: f64 = 0.2;

fn check_same<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `10 · log10(range² / MSE)` in dB, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, data_range: f64) -> Result<f64> {
    check_same(a, b, "psnr")?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable windowed mean over every fully covered position.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = win.iter().enumerate().map(|(k, c)| c * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = win.iter().enumerate().map(|(k, c)| c * rows[(y + k) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term over the valid window positions.
///
/// The contrast-structure term `(2σ_ab + C2) / (σ_a² + σ_b² + C2)` is the part
/// of SSIM that ignores the means, so it is unchanged when both images are
/// offset by the same constant.
pub fn ssim_components<T: Real>(a: &Tensor<T>, b: &Tensor<T>, data_range: f64) -> Result<(f64, f64)> {
    check_same(a, b, "ssim")?;
    let (n, c, h, w) = a.dims4()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape("ssim", format!("{h}×{w} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window")));
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let win = gaussian_window();
    let (mut total, mut total_cs, mut count) = (0.0, 0.0, 0usize);
    for p in 0..n * c {
        let pa: Vec<f64> = a.data()[p * h * w..(p + 1) * h * w].iter().map(|v| v.as_f64()).collect();
        let pb: Vec<f64> = b.data()[p * h * w..(p + 1) * h * w].iter().map(|v| v.as_f64()).collect();
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(&pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter_valid(&pa, h, w, &win);
        let mu_b = filter_valid(&pb, h, w, &win);
        let aa = filter_valid(&prod(|x, _| x * x), h, w, &win);
        let bb = filter_valid(&prod(|_, y| y * y), h, w, &win);
        let ab = filter_valid(&prod(|x, y| x * y), h, w, &win);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            let cs = (2.0 * cov + c2) / (va + vb + c2);
            total += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * cs;
            total_cs += cs;
        }
        count += mu_a.len();
    }
    Ok((total / count as f64, total_cs / count as f64))
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5).
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>, data_range: f64) -> Result<f64> {
    if a.shape() == b.shape() && a.data() == b.data() {
        // identical inputs: every local term is exactly one
        a.dims4()?;
        let (_, _, h, w) = a.dims4()?;
        if h < SSIM_WINDOW || w < SSIM_WINDOW {
            return Err(Error::shape("ssim", format!("{h}×{w} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window")));
        }
        return Ok(1.0);
    }
    ssim_components(a, b, data_range).map(|(s, _)| s)
}

/// `clamp(|sr − hr| / cap, 0, 1)`: brighter means larger error.
pub fn error_map<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>, cap: f64) -> Result<Tensor<T>> {
    check_same(sr, hr, "error_map")?;
    if cap.is_nan() || cap <= 0.0 {
        return Err(Error::Config("error map cap must be positive".into()));
    }
    let data = sr.data().iter().zip(hr.data()).map(|(&s, &h)| T::of(((s - h).abs().as_f64() / cap).clamp(0.0, 1.0))).collect();
    Tensor::new(sr.shape(), data)
}

/// One evaluated image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub image_id: String,
    pub scale: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub config_hash: String,
}

impl MetricRecord {
    pub fn evaluate<T: Real>(image_id: impl Into<String>, scale: usize, config_hash: impl Into<String>, sr: &Tensor<T>, hr: &Tensor<T>) -> Result<Self> {
        Ok(MetricRecord { image_id: image_id.into(), scale, psnr_db: psnr(sr, hr, 1.0)?, ssim: ssim(sr, hr, 1.0)?, config_hash: config_hash.into() })
    }
}

/// Mean PSNR and SSIM of a set of records; `(0, 0)` when empty.
pub fn mean_scores(records: &[MetricRecord]) -> (f64, f64) {
    if records.is_empty() {
        return (0.0, 0.0);
    }
    let n = records.len() as f64;
    (records.iter().map(|r| r.psnr_db).sum::<f64>() / n, records.iter().map(|r| r.ssim).sum::<f64>() / n)
}

pub fn write_csv(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_string_pretty(records)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[1, 1, h, w], |i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            0.5 + 0.3 * (y * 0.21).sin() * (x * 0.17).cos()
        })
    }

    /// Per-window brute-force SSIM without separable filtering.
    fn ssim_brute(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let (_, _, h, w) = a.dims4().unwrap();
        let win = gaussian_window();
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let g = win[dy] * win[dx];
                        let (p, q) = (a.at4(0, 0, y + dy, x + dx), b.at4(0, 0, y + dy, x + dx));
                        ma += g * p;
                        mb += g * q;
                        aa += g * p * p;
                        bb += g * q * q;
                        ab += g * p * q;
                    }
                }
                let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_closed_form_and_cap() {
        let a = smooth(8, 8);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert!(psnr(&a, &a.map(|v| v + 0.2), 1.0).unwrap() < 20.0);
    }

    #[test]
    fn ssim_identical_is_exactly_one() {
        let a = smooth(16, 20);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        assert!(ssim(&Tensor::<f64>::zeros(&[1, 1, 10, 20]), &Tensor::zeros(&[1, 1, 10, 20]), 1.0).is_err());
    }

    #[test]
    fn ssim_matches_brute_force_windows() {
        let a = smooth(17, 23);
        let b = Tensor::from_fn(&[1, 1, 17, 23], |i| (i * 31 % 17) as f64 / 17.0);
        let inv = a.map(|v| 1.0 - v);
        for other in [&b, &inv] {
            let fast = ssim(&a, other, 1.0).unwrap();
            assert!((fast - ssim_brute(&a, other)).abs() < 1e-12);
            assert!((fast - ssim(other, &a, 1.0).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn ssim_matches_frozen_reference_values() {
        // gaussian-weighted SSIM, population covariance, range 1, computed independently
        let a = smooth(17, 23);
        let b = Tensor::from_fn(&[1, 1, 17, 23], |i| (i * 31 % 17) as f64 / 17.0);
        let c = Tensor::from_fn(&[1, 1, 17, 23], |i| a.data()[i] + 0.1 * (i as f64 * 0.5).cos());
        let cases = [(b, 0.03188502520263067), (a.map(|v| 1.0 - v), -0.6378193336919011), (c, 0.5856121743487707)];
        for (other, want) in cases {
            assert!((ssim(&a, &other, 1.0).unwrap() - want).abs() < 1e-6);
        }
    }

    #[test]
    fn offset_lowers_luminance_term_only() {
        let a = smooth(24, 24);
        let b = a.map(|v| v + 0.2);
        let (s, cs) = ssim_components(&a, &b, 1.0).unwrap();
        assert!(s < 1.0 && s > 0.5);
        assert!((cs - 1.0).abs() < 1e-9);
        let noisy = Tensor::from_fn(&[1, 1, 24, 24], |i| a.data()[i] + 0.05 * ((i * 13 % 7) as f64 / 7.0));
        let (_, cs1) = ssim_components(&a, &noisy, 1.0).unwrap();
        let (_, cs2) = ssim_components(&a.map(|v| v + 0.3), &noisy.map(|v| v + 0.3), 1.0).unwrap();
        assert!((cs1 - cs2).abs() < 1e-9);
    }

    #[test]
    fn error_map_saturates_at_cap() {
        let hr = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let mut sr = hr.clone();
        sr.data_mut()[4] = 0.2;
        sr.data_mut()[0] = 0.05;
        let m = error_map(&sr, &hr, ERROR_MAP_CAP).unwrap();
        assert_eq!(m.data()[4], 1.0);
        assert!((m.data()[0] - 0.25).abs() < 1e-12);
        assert!(error_map(&hr, &hr, ERROR_MAP_CAP).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![MetricRecord { image_id: "p0".into(), scale: 4, psnr_db: 31.5, ssim: 0.9, config_hash: "abc".into() }];
        write_csv(dir.path().join("m.csv"), &recs).unwrap();
        let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert!(text.starts_with("image_id,scale,psnr_db,ssim,config_hash"));
        write_json(dir.path().join("m.json"), &recs).unwrap();
        let back: Vec<MetricRecord> = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
        assert_eq!(back, recs);
        assert_eq!(mean_scores(&recs), (31.5, 0.9));
    }
}
