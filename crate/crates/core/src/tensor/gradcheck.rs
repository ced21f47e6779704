//! Central finite-difference verification of tape gradients (64-bit only).
//!
//! The relative error of one entry is `|a − n| / max(|a|, |n|, floor)` where `a`
//! is the analytic and `n` the numeric derivative, and `floor` is 1% of the
//! largest numeric derivative magnitude in the checked set (at least `1e-10`).
//! The floor keeps entries that are tiny compared to the rest of the gradient
//! from turning finite-difference round-off into spurious failures.

use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Outcome of one gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub checked: usize,
    /// Largest numeric derivative magnitude among the checked entries.
    pub scale: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error between analytic and numeric derivatives; see the module docs.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (0.01 * scale).max(1e-10);
    analytic.iter().zip(numeric).enumerate().fold((0.0, 0), |(worst, wi), (i, (&a, &n))| {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if err > worst {
            (err, i)
        } else {
            (worst, wi)
        }
    })
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = f(&tape, xv)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::Tape(format!("gradcheck needs a scalar function, got shape {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Analytic gradient of a scalar function at `x`.
pub fn analytic_grad<F>(f: &F, x: &Tensor<f64>) -> Result<Tensor<f64>>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let xv = tape.param(x);
    let out = f(&tape, xv)?;
    tape.backward(out)?;
    tape.grad(xv).ok_or_else(|| Error::Tape("input received no gradient".into()))
}

/// Central difference `(f(x + h·e_i) − f(x − h·e_i)) / 2h` at the given flat indices.
pub fn numeric_grad<F>(f: &F, x: &Tensor<f64>, indices: &[usize], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + step;
            let up = eval(f, &probe)?;
            probe.data_mut()[i] = orig - step;
            let down = eval(f, &probe)?;
            probe.data_mut()[i] = orig;
            Ok((up - down) / (2.0 * step))
        })
        .collect()
}

/// Checks every entry of the gradient of `f` at `x`.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, step: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    gradcheck_at(f, x, &all, step, tol)
}

/// Checks the gradient of `f` at `x` on a subset of flat indices.
pub fn gradcheck_at<F>(f: F, x: &Tensor<f64>, indices: &[usize], step: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let analytic = analytic_grad(&f, x)?;
    let picked: Vec<f64> = indices.iter().map(|&i| analytic.data()[i]).collect();
    let numeric = numeric_grad(&f, x, indices, step)?;
    let (max_rel_error, worst) = relative_error(&picked, &numeric);
    Ok(GradReport {
        max_rel_error,
        worst_index: indices.get(worst).copied().unwrap_or(0),
        checked: indices.len(),
        scale: numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        tol,
        passed: max_rel_error < tol,
    })
}
