//! Two-contrast ellipse phantoms standing in for registered T1/T2 slices.

use crate::rng::substream;
use crate::tensor::Tensor;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// One tissue class with its intensity in each contrast.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tissue {
    /// Intensity in the target (HR/LR) contrast.
    pub t2: f64,
    /// Intensity in the reference contrast.
    pub t1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    /// Images are `size × size`.
    pub size: usize,
    /// Total ellipse count, the outer head outline included.
    pub ellipses: usize,
    /// Tissue of the head outline.
    pub head: Tissue,
    /// Tissues drawn for the inner ellipses.
    pub tissues: Vec<Tissue>,
    /// Semi-axis range of inner ellipses as fractions of the image size.
    pub axis_range: (f64, f64),
    /// Head semi-axes as fractions of the image size.
    pub head_axes: (f64, f64),
    /// Gaussian blur standard deviation in pixels; 0 disables it.
    pub smoothing: f64,
    /// Standard deviation of additive Gaussian noise; 0 disables it.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            size: 64,
            ellipses: 8,
            head: Tissue { t2: 0.35, t1: 0.65 },
            tissues: vec![
                // fluid: bright in t2, dark in t1
                Tissue { t2: 0.95, t1: 0.15 },
                // grey-matter-like
                Tissue { t2: 0.6, t1: 0.45 },
                // fat-like: dark in t2, bright in t1
                Tissue { t2: 0.2, t1: 0.9 },
                Tissue { t2: 0.8, t1: 0.3 },
            ],
            axis_range: (0.05, 0.22),
            head_axes: (0.42, 0.36),
            smoothing: 0.8,
            noise: 0.005,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ellipses == 0 {
            return Err(Error::Config("phantom needs at least one ellipse".into()));
        }
        if self.size == 0 {
            return Err(Error::Config("phantom size must be positive".into()));
        }
        if self.ellipses > 1 && self.tissues.is_empty() {
            return Err(Error::Config("inner ellipses need at least one tissue".into()));
        }
        let all = std::iter::once(&self.head).chain(&self.tissues);
        if all.clone().any(|t| !(0.0..=1.0).contains(&t.t1) || !(0.0..=1.0).contains(&t.t2)) {
            return Err(Error::Config("tissue intensities must lie in [0, 1]".into()));
        }
        let list: Vec<&Tissue> = all.collect();
        let reversed = list.iter().enumerate().any(|(i, a)| list[i + 1..].iter().any(|b| (a.t2 - b.t2) * (a.t1 - b.t1) < 0.0));
        if !reversed {
            return Err(Error::Config("some pair of tissues must swap brightness order between the contrasts".into()));
        }
        let (lo, hi) = self.axis_range;
        if !(lo > 0.0 && lo <= hi) || self.head_axes.0 <= 0.0 || self.head_axes.1 <= 0.0 {
            return Err(Error::Config("ellipse axes must be positive with min ≤ max".into()));
        }
        if self.smoothing < 0.0 || self.noise < 0.0 {
            return Err(Error::Config("smoothing and noise must be non-negative".into()));
        }
        Ok(())
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
    angle: f64,
    tissue: Tissue,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }
}

fn gaussian_blur(img: &mut [f64], n: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let at = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = kernel.iter().enumerate().map(|(j, k)| k * img[y * n + at(x as isize + j as isize - radius)]).sum();
        }
    }
    for y in 0..n {
        for x in 0..n {
            img[y * n + x] = kernel.iter().enumerate().map(|(j, k)| k * tmp[at(y as isize + j as isize - radius) * n + x]).sum();
        }
    }
}

/// Co-registered `(t2, t1)` images `[1, 1, size, size]` in `[0, 1]`.
///
/// Geometry is shared; only tissue intensities differ between the two
/// contrasts. Noise is drawn independently for each contrast.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Tensor<f64>, Tensor<f64>)> {
    spec.validate()?;
    let n = spec.size;
    let nf = n as f64;
    let mut rng = substream(spec.seed, "phantom/geometry");
    let mut shapes = vec![Ellipse {
        cy: nf / 2.0 + rng.gen_range(-0.03..0.03) * nf,
        cx: nf / 2.0 + rng.gen_range(-0.03..0.03) * nf,
        ay: spec.head_axes.0 * nf,
        ax: spec.head_axes.1 * nf,
        angle: rng.gen_range(-0.2..0.2),
        tissue: spec.head,
    }];
    let (lo, hi) = spec.axis_range;
    for _ in 1..spec.ellipses {
        let head = &shapes[0];
        // centre inside the inner part of the head outline
        let r = rng.gen_range(0.0f64..0.6).sqrt();
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        shapes.push(Ellipse {
            cy: head.cy + r * head.ay * t.sin(),
            cx: head.cx + r * head.ax * t.cos(),
            ay: rng.gen_range(lo..=hi) * nf,
            ax: rng.gen_range(lo..=hi) * nf,
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            tissue: spec.tissues[rng.gen_range(0..spec.tissues.len())],
        });
    }
    let mut t2 = vec![0.0; n * n];
    let mut t1 = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            // later ellipses are painted over earlier ones
            if let Some(e) = shapes.iter().rev().find(|e| e.contains(py, px)) {
                t2[y * n + x] = e.tissue.t2;
                t1[y * n + x] = e.tissue.t1;
            }
        }
    }
    gaussian_blur(&mut t2, n, spec.smoothing);
    gaussian_blur(&mut t1, n, spec.smoothing);
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
        let mut r2 = substream(spec.seed, "phantom/noise/t2");
        let mut r1 = substream(spec.seed, "phantom/noise/t1");
        t2.iter_mut().for_each(|v| *v += normal.sample(&mut r2));
        t1.iter_mut().for_each(|v| *v += normal.sample(&mut r1));
    }
    let clamp = |v: Vec<f64>| Tensor::new(&[1, 1, n, n], v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect());
    Ok((clamp(t2)?, clamp(t1)?))
}
