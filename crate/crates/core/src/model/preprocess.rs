use crate::operators::sobel_edge_map;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Keys cubic convolution kernel with `a = −0.5`.
pub fn keys_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Taps and weights of one output sample: source position `i / scale`, periodic boundary.
fn taps(i: usize, n: usize, scale: usize) -> [(usize, f64); 4] {
    let i0 = i / scale;
    let t = (i % scale) as f64 / scale as f64;
    let mut out = [(0, 0.0); 4];
    for (j, o) in out.iter_mut().enumerate() {
        let offset = j as isize - 1;
        let src = (i0 as isize + offset).rem_euclid(n as isize) as usize;
        *o = (src, keys_kernel(t - offset as f64));
    }
    out
}

/// Bicubic upsampling of `[B, C, h, w]` by an integer factor.
///
/// Output pixel `i` samples the input at `i / scale`, so every `scale`-th output
/// pixel reproduces an input pixel exactly. Samples past the border wrap around,
/// matching the periodic model behind k-space truncation.
pub fn bicubic_upsample<T: Real>(x: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if scale == 0 {
        return Err(Error::shape("bicubic_upsample", "scale must be positive"));
    }
    if scale == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h * scale, w * scale);
    let row_taps: Vec<_> = (0..ho).map(|i| taps(i, h, scale)).collect();
    let col_taps: Vec<_> = (0..wo).map(|i| taps(i, w, scale)).collect();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut rows = vec![0.0f64; ho * w];
    for plane in x.data().chunks(h * w) {
        for (yo, tp) in row_taps.iter().enumerate() {
            for xi in 0..w {
                rows[yo * w + xi] = tp.iter().map(|&(y, wt)| wt * plane[y * w + xi].as_f64()).sum();
            }
        }
        for yo in 0..ho {
            let r = &rows[yo * w..(yo + 1) * w];
            out.extend(col_taps.iter().map(|tp| T::of(tp.iter().map(|&(xi, wt)| wt * r[xi]).sum())));
        }
    }
    Tensor::new(&[b, c, ho, wo], out)
}

/// Interpolates the LR image to the reference size and extracts its edge map.
///
/// Returns `(lr_up, edge)`, both `[B, 1, H, W]`.
pub fn preprocess<T: Real>(lr: &Tensor<T>, reference: &Tensor<T>, scale: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, c, h, w) = lr.dims4()?;
    let (rb, rc, rh, rw) = reference.dims4()?;
    if c != 1 || rc != 1 || b != rb {
        return Err(Error::shape("preprocess", format!("expected matching single-channel batches, got {:?} and {:?}", lr.shape(), reference.shape())));
    }
    if rh != h * scale || rw != w * scale {
        return Err(Error::shape("preprocess", format!("reference {rh}×{rw} is not {scale}× the LR size {h}×{w}")));
    }
    let lr_up = bicubic_upsample(lr, scale)?;
    let edge = sobel_edge_map(&lr_up)?;
    Ok((lr_up, edge))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_interpolates_and_partitions_unity() {
        assert_eq!(keys_kernel(0.0), 1.0);
        assert_eq!(keys_kernel(1.0), 0.0);
        assert_eq!(keys_kernel(2.0), 0.0);
        for t in [0.1, 0.25, 0.5, 0.9] {
            let s: f64 = (-1..=2).map(|j| keys_kernel(t - j as f64)).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scale_one_is_identity() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 3, 5], |i| i as f32 * 0.1);
        assert_eq!(bicubic_upsample(&x, 1).unwrap(), x);
    }

    #[test]
    fn grid_points_are_reproduced() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 6], |i| ((i * 37) % 11) as f64 / 11.0);
        let up = bicubic_upsample(&x, 4).unwrap();
        for y in 0..4 {
            for xx in 0..6 {
                assert!((up.at4(0, 0, 4 * y, 4 * xx) - x.at4(0, 0, y, xx)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_stays_constant_with_no_edges() {
        let lr = Tensor::<f64>::full(&[2, 1, 4, 4], 0.3);
        let (up, edge) = preprocess(&lr, &Tensor::zeros(&[2, 1, 8, 8]), 2).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(edge.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_ramp_is_exact_in_the_interior() {
        let lr = Tensor::<f64>::from_fn(&[1, 1, 1, 8], |i| i as f64);
        let up = bicubic_upsample(&lr, 2).unwrap();
        for x in 2..12 {
            assert!((up.at4(0, 0, 0, x) - x as f64 / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let lr = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        assert!(preprocess(&lr, &Tensor::zeros(&[1, 1, 12, 12]), 2).is_err());
    }
}
