use crate::tensor::gemm::{gemm, transpose};
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// `(batch, m, k, n)` of a possibly batched product.
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    let dims = match (a, b) {
        (&[m, k], &[k2, n]) => (1, m, k, k2, n),
        (&[ba, m, k], &[bb, k2, n]) if ba == bb => (ba, m, k, k2, n),
        (&[ba, _, _], &[bb, _, _]) => {
            return Err(Error::shape("matmul", format!("batch dimension {ba} vs {bb}")));
        }
        _ => return Err(Error::shape("matmul", format!("expected two 2-D or two 3-D operands, got {a:?} and {b:?}"))),
    };
    let (batch, m, k, k2, n) = dims;
    if k != k2 {
        return Err(Error::shape("matmul", format!("inner dimension {k} vs {k2}")));
    }
    Ok((batch, m, k, n))
}

/// Numerically stable in-place softmax over each contiguous row of length `len`.
pub(crate) fn softmax_rows<T: Real>(data: &mut [T], len: usize) {
    for row in data.chunks_mut(len) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let total = T::exp_shifted(row, max);
        let inv = T::one() / total;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Query rows processed together, so a block of weights stays in cache.
const ROW_BLOCK: usize = 16;

fn attention_dims(q: &[usize], k: &[usize], v: &[usize]) -> Result<(usize, usize, usize, usize, usize)> {
    match (q, k, v) {
        (&[n, l, d], &[n2, s, d2], &[n3, s2, e]) if n == n2 && n == n3 && d == d2 && s == s2 => Ok((n, l, s, d, e)),
        _ => Err(Error::shape(
            "attention",
            format!("incompatible query {q:?}, key {k:?}, value {v:?} (expected [N,L,D], [N,S,D], [N,S,E])"),
        )),
    }
}

fn probs<T: Real>(q: &[T], k: &[T], n: usize, l: usize, s: usize, d: usize, scale: T) -> Vec<T> {
    let mut p = vec![T::zero(); n * l * s];
    for b in 0..n {
        let kt = transpose(s, d, &k[b * s * d..(b + 1) * s * d]);
        let dst = &mut p[b * l * s..(b + 1) * l * s];
        gemm(l, d, s, &q[b * l * d..(b + 1) * l * d], &kt, dst, false);
        dst.iter_mut().for_each(|v| *v *= scale);
        softmax_rows(dst, s);
    }
    p
}

/// Attention weights `softmax(scale · Q Kᵀ)` for `q: [N, L, D]`, `k: [N, S, D]`.
pub(crate) fn attention_probs<T: Real>(q: &Tensor<T>, k: &Tensor<T>, scale: T) -> Result<Tensor<T>> {
    let (n, l, s, d, _) = attention_dims(q.shape(), k.shape(), k.shape())?;
    Ok(Tensor::from_parts(vec![n, l, s], probs(q.data(), k.data(), n, l, s, d, scale)))
}

impl<T: Real> Tape<T> {
    /// Matrix product of `[M, K] × [K, N]`, or per batch index for `[B, M, K] × [B, K, N]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (value, (batch, m, k, n)) = {
            let (av, bv) = (self.value(a), self.value(b));
            let dims = matmul_dims(av.shape(), bv.shape())?;
            let (batch, m, k, n) = dims;
            let mut out = vec![T::zero(); batch * m * n];
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av.data()[i * m * k..(i + 1) * m * k],
                    &bv.data()[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
            let shape = if av.ndim() == 2 { vec![m, n] } else { vec![batch, m, n] };
            (Tensor::from_parts(shape, out), dims)
        };
        Ok(self.record(
            "matmul",
            value,
            &[a, b],
            Box::new(move |inputs, _out, g| {
                let (ad, bd) = (inputs[0].data(), inputs[1].data());
                let mut ga = vec![T::zero(); ad.len()];
                let mut gb = vec![T::zero(); bd.len()];
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let bt = transpose(k, n, &bd[i * k * n..(i + 1) * k * n]);
                    gemm(m, n, k, gi, &bt, &mut ga[i * m * k..(i + 1) * m * k], false);
                    let at = transpose(m, k, &ad[i * m * k..(i + 1) * m * k]);
                    gemm(k, m, n, &at, gi, &mut gb[i * k * n..(i + 1) * k * n], false);
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Scaled dot-product attention `softmax(scale · Q Kᵀ) V`, batched over the leading axis.
    ///
    /// `q: [N, L, D]`, `k: [N, S, D]`, `v: [N, S, E]` → `[N, L, E]`. Equivalent to
    /// composing `matmul`, `scale`, `softmax` and `matmul`, but keeps only the
    /// `[N, L, S]` weight matrix for the backward pass.
    pub fn attention(&self, q: Var, k: Var, v: Var, scale: T) -> Result<Var> {
        let (value, p, (n, l, s, d, e)) = {
            let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
            let dims = attention_dims(qv.shape(), kv.shape(), vv.shape())?;
            let (n, l, s, d, e) = dims;
            let mut p = vec![T::zero(); n * l * s];
            let mut out = vec![T::zero(); n * l * e];
            for b in 0..n {
                let kt = transpose(s, d, &kv.data()[b * s * d..(b + 1) * s * d]);
                let vb = &vv.data()[b * s * e..(b + 1) * s * e];
                for r0 in (0..l).step_by(ROW_BLOCK) {
                    let rows = ROW_BLOCK.min(l - r0);
                    let pr = &mut p[(b * l + r0) * s..(b * l + r0 + rows) * s];
                    gemm(rows, d, s, &qv.data()[(b * l + r0) * d..(b * l + r0 + rows) * d], &kt, pr, false);
                    pr.iter_mut().for_each(|v| *v *= scale);
                    softmax_rows(pr, s);
                    gemm(rows, s, e, pr, vb, &mut out[(b * l + r0) * e..(b * l + r0 + rows) * e], false);
                }
            }
            (Tensor::from_parts(vec![n, l, e], out), p, dims)
        };
        Ok(self.record(
            "attention",
            value,
            &[q, k, v],
            Box::new(move |inputs, _out, g| {
                let (qd, kd, vd) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
                let mut gq = vec![T::zero(); qd.len()];
                let mut gk = vec![T::zero(); kd.len()];
                let mut gv = vec![T::zero(); vd.len()];
                let mut ds = vec![T::zero(); ROW_BLOCK * s];
                let mut gvt = vec![T::zero(); e * s];
                let mut gkt = vec![T::zero(); d * s];
                for b in 0..n {
                    let vt = transpose(s, e, &vd[b * s * e..(b + 1) * s * e]);
                    let kb = &kd[b * s * d..(b + 1) * s * d];
                    // Vᵀ and Kᵀ gradients are accumulated transposed, one row block at a time
                    for r0 in (0..l).step_by(ROW_BLOCK) {
                        let rows = ROW_BLOCK.min(l - r0);
                        let pb = &p[(b * l + r0) * s..(b * l + r0 + rows) * s];
                        let gb = &g[(b * l + r0) * e..(b * l + r0 + rows) * e];
                        let qb = &qd[(b * l + r0) * d..(b * l + r0 + rows) * d];
                        let gt = transpose(rows, e, gb);
                        gemm(e, rows, s, &gt, pb, &mut gvt, r0 > 0);
                        let dsb = &mut ds[..rows * s];
                        gemm(rows, e, s, gb, &vt, dsb, false);
                        // softmax backward, folded with the logit scale
                        for (drow, prow) in dsb.chunks_mut(s).zip(pb.chunks(s)) {
                            let dot: T = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                            for (dv, &pv) in drow.iter_mut().zip(prow) {
                                *dv = pv * (*dv - dot) * scale;
                            }
                        }
                        gemm(rows, s, d, dsb, kb, &mut gq[(b * l + r0) * d..(b * l + r0 + rows) * d], false);
                        let qt = transpose(rows, d, qb);
                        gemm(d, rows, s, &qt, dsb, &mut gkt, r0 > 0);
                    }
                    gv[b * s * e..(b + 1) * s * e].copy_from_slice(&transpose(e, s, &gvt));
                    gk[b * s * d..(b + 1) * s * d].copy_from_slice(&transpose(d, s, &gkt));
                }
                vec![Some(gq), Some(gk), Some(gv)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_product() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = tape.constant(Tensor::new(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        let y = tape.matmul(a, p).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn identity_product() {
        let tape = Tape::<f64>::new();
        let eye = tape.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let x = Tensor::from_fn(&[3, 5], |i| i as f64 * 0.3 - 1.0);
        let xv = tape.constant(x.clone());
        let y = tape.matmul(eye, xv).unwrap();
        assert_eq!(*tape.value(y), x);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones(&[2, 3]));
        let b = tape.constant(Tensor::ones(&[2, 3]));
        assert!(tape.matmul(a, b).unwrap_err().to_string().contains("inner dimension"));
    }

    #[test]
    fn single_key_attention_returns_value() {
        let tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::from_fn(&[1, 3, 2], |i| i as f64));
        let k = tape.constant(Tensor::from_fn(&[1, 1, 2], |i| i as f64 - 5.0));
        let v = tape.constant(Tensor::new(&[1, 1, 2], vec![7.0, -3.0]).unwrap());
        let y = tape.attention(q, k, v, 0.5).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0, -3.0, 7.0, -3.0, 7.0, -3.0]);
    }
}
