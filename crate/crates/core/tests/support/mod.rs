//! Brute-force reference implementations shared by the oracle and acceptance suites.

// each including test target uses a different subset
#![allow(dead_code)]
// explicit index loops keep the oracles easy to check by eye
#![allow(clippy::needless_range_loop)]

use ecfnet::tensor::Tensor;
use std::f64::consts::PI;

/// Six nested loops in input-channel, row, column tap order.
pub fn conv_direct(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, kh, kw) = w.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let data = out.data_mut();
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at4(bi, ci, iy as usize, ix as usize) * w.at4(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    data[((bi * cout + co) * oh + oy) * ow + ox] = acc + b.data()[co];
                }
            }
        }
    }
    out
}

/// Neumaier-compensated sum.
pub fn compensated(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + c
}

/// `exp(−2πi·k·j/n)` with the phase reduced exactly before the trig call.
pub fn twiddle(k: i64, j: i64, n: i64, sign: f64) -> (f64, f64) {
    let phase = 2.0 * PI * (k * j).rem_euclid(n) as f64 / n as f64;
    (phase.cos(), sign * phase.sin())
}

/// Truncation of one axis by direct DFT with compensated sums. Even lengths
/// half-weight the Nyquist bin; odd lengths keep a symmetric band.
pub fn truncate_line(x: &[(f64, f64)], m: usize) -> Vec<(f64, f64)> {
    let n = x.len() as i64;
    let dft = |k: i64| {
        let re = compensated(x.iter().enumerate().map(|(j, &(a, b))| {
            let (c, s) = twiddle(k, j as i64, n, -1.0);
            a * c - b * s
        }));
        let im = compensated(x.iter().enumerate().map(|(j, &(a, b))| {
            let (c, s) = twiddle(k, j as i64, n, -1.0);
            a * s + b * c
        }));
        (re, im)
    };
    let half = (m / 2) as i64;
    let bins: Vec<(i64, (f64, f64))> = if m % 2 == 1 {
        (-half..=half).map(|k| (k, dft(k))).collect()
    } else {
        let mut b: Vec<_> = (-half + 1..half).map(|k| (k, dft(k))).collect();
        let (lo, hi) = (dft(-half), dft(half));
        b.push((-half, ((lo.0 + hi.0) * 0.5, (lo.1 + hi.1) * 0.5)));
        b
    };
    (0..m as i64)
        .map(|j| {
            let re = compensated(bins.iter().map(|&(k, (a, b))| {
                let (c, s) = twiddle(k, j, m as i64, 1.0);
                a * c - b * s
            }));
            let im = compensated(bins.iter().map(|&(k, (a, b))| {
                let (c, s) = twiddle(k, j, m as i64, 1.0);
                a * s + b * c
            }));
            (re / n as f64, im / n as f64)
        })
        .collect()
}

pub fn truncate_oracle(img: &Tensor<f64>, s: usize) -> Tensor<f64> {
    let (_, _, h, w) = img.dims4().unwrap();
    let (oh, ow) = (h / s, w / s);
    let rows: Vec<Vec<(f64, f64)>> =
        (0..h).map(|y| truncate_line(&(0..w).map(|x| (img.at4(0, 0, y, x), 0.0)).collect::<Vec<_>>(), ow)).collect();
    let mut out = Tensor::zeros(&[1, 1, oh, ow]);
    for x in 0..ow {
        let col = truncate_line(&(0..h).map(|y| rows[y][x]).collect::<Vec<_>>(), oh);
        for (y, v) in col.into_iter().enumerate() {
            out.data_mut()[y * ow + x] = v.0;
        }
    }
    out
}

pub fn cosine(h: usize, w: usize, fy: f64, fx: f64, phase: f64) -> Tensor<f64> {
    Tensor::from_fn(&[1, 1, h, w], |i| (2.0 * PI * (fy * (i / w) as f64 / h as f64 + fx * (i % w) as f64 / w as f64) + phase).cos())
}

/// Plain per-window SSIM with explicit Gaussian weights, averaged over valid windows.
pub fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (_, _, h, w) = a.dims4().unwrap();
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let k = g[dy] * g[dx] / norm;
                    let (va, vb) = (a.at4(0, 0, y + dy, x + dx), b.at4(0, 0, y + dy, x + dx));
                    ma += k * va;
                    mb += k * vb;
                    saa += k * va * va;
                    sbb += k * vb * vb;
                    sab += k * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
