use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Largest gradient magnitude a unit-range image can produce: `|Gx| = |Gy| = 4`.
pub const SOBEL_MAX_RESPONSE: f64 = 4.0 * std::f64::consts::SQRT_2;


/// Sobel gradient magnitude of `[B, 1, H, W]` images in `[0, 1]`.
///
/// Borders replicate the edge pixel. The magnitude is divided by
/// [`SOBEL_MAX_RESPONSE`] and clamped so edge maps stay in `[0, 1]`.
pub fn sobel_edge_map<T: Real>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = img.dims4()?;
    if c != 1 {
        return Err(Error::shape("sobel_edge_map", format!("expected one channel, got {c}")));
    }
    let scale = T::of(1.0 / SOBEL_MAX_RESPONSE);
    let mut out = Vec::with_capacity(img.numel());
    for plane in img.data().chunks(h * w) {
        let at = |y: isize, x: isize| {
            let yy = y.clamp(0, h as isize - 1) as usize;
            let xx = x.clamp(0, w as isize - 1) as usize;
            plane[yy * w + xx]
        };
        for y in 0..h as isize {
            for x in 0..w as isize {
                // each side summed in the same order so flat regions cancel exactly
                let two = T::of(2.0);
                let side = |a: T, b: T, c: T| a + two * b + c;
                let gx = side(at(y - 1, x + 1), at(y, x + 1), at(y + 1, x + 1)) - side(at(y - 1, x - 1), at(y, x - 1), at(y + 1, x - 1));
                let gy = side(at(y + 1, x - 1), at(y + 1, x), at(y + 1, x + 1)) - side(at(y - 1, x - 1), at(y - 1, x), at(y - 1, x + 1));
                let mag = (gx * gx + gy * gy).sqrt() * scale;
                out.push(mag.max(T::zero()).min(T::one()));
            }
        }
    }
    Tensor::new(&[b, 1, h, w], out)
}
