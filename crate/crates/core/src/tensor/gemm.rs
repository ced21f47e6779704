use super::Real;

const MR: usize = 4;
const NR: usize = 16;

/// Row-major `c[m×n] (+)= a[m×k] · b[k×n]`.
///
/// Every output accumulates its `k` products strictly in index order starting
/// from zero (or from the existing value when `accumulate` is set), with no
/// fused multiply-add. Results are therefore bit-identical to a naive triple
/// loop with the same summation order.
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::zero());
    }
    if k == 0 {
        return;
    }

    let m_main = m - m % MR;
    let n_main = n - n % NR;
    let mut i = 0;
    while i < m_main {
        let mut j = 0;
        while j < n_main {
            block::<T, NR>(k, n, a, b, c, i, j);
            j += NR;
        }
        if n - j >= NR / 2 {
            block::<T, { NR / 2 }>(k, n, a, b, c, i, j);
            j += NR / 2;
        }
        if j < n {
            for r in i..i + MR {
                row_tail(k, n, a, b, c, r, j);
            }
        }
        i += MR;
    }
    for r in m_main..m {
        row_tail(k, n, a, b, c, r, 0);
    }
}

#[inline(always)]
fn block<T: Real, const W: usize>(k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], i: usize, j: usize) {
    let mut acc = [[T::zero(); W]; MR];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + W]);
    }
    for p in 0..k {
        let brow: &[T; W] = b[p * n + j..p * n + j + W].try_into().unwrap();
        for (r, row) in acc.iter_mut().enumerate() {
            let av = a[(i + r) * k + p];
            for q in 0..W {
                row[q] += av * brow[q];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[(i + r) * n + j..(i + r) * n + j + W].copy_from_slice(row);
    }
}

fn row_tail<T: Real>(k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], r: usize, j0: usize) {
    let width = n - j0;
    if width == 0 {
        return;
    }
    let out = &mut c[r * n + j0..r * n + n];
    for p in 0..k {
        let av = a[r * k + p];
        let brow = &b[p * n + j0..p * n + n];
        for (o, &bv) in out.iter_mut().zip(brow) {
            *o += av * bv;
        }
    }
}

/// Row-major transpose of an `rows × cols` matrix.
pub(crate) fn transpose<T: Real>(rows: usize, cols: usize, src: &[T]) -> Vec<T> {
    let mut dst = vec![T::zero(); rows * cols];
    const TB: usize = 32;
    for i0 in (0..rows).step_by(TB) {
        for j0 in (0..cols).step_by(TB) {
            for i in i0..(i0 + TB).min(rows) {
                for j in j0..(j0 + TB).min(cols) {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
    dst
}
