//! Named finite-difference gradient suites for every differentiable operator
//! and for the full network loss.
//!
//! Each case reduces the operator output to a scalar with a fixed non-uniform
//! weighting, so a gradient that is wrong only up to a constant still shows.

use crate::model::{forward_graph, loss, preprocess, ECFNet, ModelConfig};
use crate::nn::{InitMode, ParamBuilder, ParamId, ParamStore, Scope};
use crate::operators::{
    channel_align, deformable_conv_raw, dual_cross_attention, sicm_fuse, texture_transfer, ChannelAlignParams, CrossAttentionParams,
    SICMParams, TTMParams,
};
use crate::rng::substream;
use crate::tensor::gradcheck::{gradcheck_at, GradReport};
use crate::tensor::{Conv2dArgs, PoolMode, Tape, Tensor, UpsampleMode, Var};
use crate::Result;
use rand::Rng;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Tolerance for single operators.
pub const OP_TOL: f64 = 1e-4;
/// Tolerance for the end-to-end loss.
pub const E2E_TOL: f64 = 1e-3;
/// At most this many entries of each probed tensor are checked.
pub const MAX_PROBES: usize = 40;

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct CaseResult {
    pub op: String,
    /// What the gradient is taken with respect to.
    pub wrt: String,
    pub shape: Vec<usize>,
    pub report: GradReport,
}

impl CaseResult {
    /// Within tolerance and not vacuous: an all-zero gradient passes nothing.
    pub fn passed(&self) -> bool {
        self.report.passed && self.report.scale > 0.0
    }
}

/// Values in `[lo, hi)` from a named stream.
pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = substream(seed, "gradcheck/input");
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// `Σ wᵢ·outᵢ` with fixed weights that differ from entry to entry.
pub fn weighted_sum(tape: &Tape<f64>, out: Var) -> Result<Var> {
    let shape = tape.shape(out);
    let w = tape.constant(Tensor::from_fn(&shape, |i| (0.37 * i as f64 + 0.3).sin() + 0.5));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Evenly spread flat indices, all of them when there are few.
pub fn probe_indices(n: usize) -> Vec<usize> {
    if n <= MAX_PROBES {
        return (0..n).collect();
    }
    (0..MAX_PROBES).map(|i| (i * n) / MAX_PROBES + (i * 7) % (n / MAX_PROBES).max(1)).collect()
}

/// Checks `f` at `x` and labels the result.
pub fn check<F>(op: &str, wrt: &str, f: F, x: &Tensor<f64>, tol: f64) -> Result<CaseResult>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let report = gradcheck_at(f, x, &probe_indices(x.numel()), STEP, tol)?;
    Ok(CaseResult { op: op.to_string(), wrt: wrt.to_string(), shape: x.shape().to_vec(), report })
}

/// Replaces every parameter with fan-in scaled uniform noise, biases included.
///
/// Zero-initialised layers would otherwise make many gradients vanish and the
/// checks pass without testing anything.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let names: Vec<String> = store.names().to_vec();
    for (name, t) in names.iter().zip(store.tensors_mut()) {
        let shape = t.shape().to_vec();
        let fan_in = match shape.len() {
            4 => shape[1] * shape[2] * shape[3],
            2 if !name.ends_with(".bias") => shape[0],
            _ => 0,
        };
        let bound = if fan_in == 0 { 0.1 } else { (3.0 / fan_in as f64).sqrt() };
        let mut rng = substream(seed, &format!("gradcheck/param/{name}"));
        *t = Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound));
    }
}

/// Gradient of a module output with respect to either its input or one parameter.
fn check_module<B>(op: &str, store: &ParamStore<f64>, input: &Tensor<f64>, param: Option<(&str, ParamId)>, body: B) -> Result<CaseResult>
where
    B: Fn(&Scope<'_, f64>, Var) -> Result<Var>,
{
    match param {
        None => check(
            op,
            "input",
            |t, x| {
                let bound = store.bind(t);
                let out = body(&Scope::new(t, &bound), x)?;
                weighted_sum(t, out)
            },
            input,
            OP_TOL,
        ),
        Some((name, id)) => check(
            op,
            name,
            |t, x| {
                let mut bound = store.bind(t);
                bound.replace(id, x);
                let inp = t.constant(input.clone());
                let out = body(&Scope::new(t, &bound), inp)?;
                weighted_sum(t, out)
            },
            store.get(id),
            OP_TOL,
        ),
    }
}

fn primitive_cases(out: &mut Vec<CaseResult>) -> Result<()> {
    let convs: [(&[usize], usize, usize, Conv2dArgs); 3] = [
        (&[1, 2, 5, 5], 3, 3, Conv2dArgs::same(3)),
        (&[2, 3, 6, 7], 2, 3, Conv2dArgs::same(3).with_stride(2)),
        (&[1, 4, 4, 4], 4, 1, Conv2dArgs::same(1).with_groups(2)),
    ];
    for (i, (shape, cout, k, args)) in convs.into_iter().enumerate() {
        let x = random_tensor(shape, i as u64, -1.0, 1.0);
        let w = random_tensor(&[cout, shape[1] / args.groups, k, k], 10 + i as u64, -0.5, 0.5);
        let b = random_tensor(&[cout], 20 + i as u64, -0.5, 0.5);
        let (wc, bc, xc) = (w.clone(), b.clone(), x.clone());
        out.push(check("conv2d", "input", |t, v| { let y = t.conv2d(v, t.constant(wc.clone()), Some(t.constant(bc.clone())), args)?; weighted_sum(t, y) }, &x, OP_TOL)?);
        out.push(check("conv2d", "weight", |t, v| { let y = t.conv2d(t.constant(xc.clone()), v, Some(t.constant(bc.clone())), args)?; weighted_sum(t, y) }, &w, OP_TOL)?);
        out.push(check("conv2d", "bias", |t, v| { let y = t.conv2d(t.constant(xc.clone()), t.constant(wc.clone()), Some(v), args)?; weighted_sum(t, y) }, &b, OP_TOL)?);
    }

    let mats: [(&[usize], &[usize]); 3] = [(&[3, 4], &[4, 2]), (&[2, 3, 5], &[2, 5, 4]), (&[1, 6], &[6, 3])];
    for (i, (sa, sb)) in mats.into_iter().enumerate() {
        let a = random_tensor(sa, 30 + i as u64, -1.0, 1.0);
        let b = random_tensor(sb, 40 + i as u64, -1.0, 1.0);
        let (ac, bc) = (a.clone(), b.clone());
        out.push(check("matmul", "a", |t, v| { let y = t.matmul(v, t.constant(bc.clone()))?; weighted_sum(t, y) }, &a, OP_TOL)?);
        out.push(check("matmul", "b", |t, v| { let y = t.matmul(t.constant(ac.clone()), v)?; weighted_sum(t, y) }, &b, OP_TOL)?);
    }

    for (i, (shape, axis)) in [(&[5][..], 0), (&[3, 4], 1), (&[2, 3, 4], 1)].into_iter().enumerate() {
        let x = random_tensor(shape, 50 + i as u64, -2.0, 2.0);
        out.push(check("softmax", "input", |t, v| { let y = t.softmax(v, axis)?; weighted_sum(t, y) }, &x, OP_TOL)?);
    }

    let maps: [&[usize]; 3] = [&[1, 2, 4, 4], &[2, 3, 3, 5], &[1, 1, 2, 3]];
    for (i, shape) in maps.into_iter().enumerate() {
        let x = random_tensor(shape, 60 + i as u64, -1.0, 1.0);
        out.push(check("instance_norm", "input", |t, v| { let y = t.instance_norm(v, 1e-5)?; weighted_sum(t, y) }, &x, OP_TOL)?);
        out.push(check("pool_global_avg", "input", |t, v| { let y = t.pool_global(v, PoolMode::Avg)?; weighted_sum(t, y) }, &x, OP_TOL)?);
        out.push(check("pool_global_max", "input", |t, v| { let y = t.pool_global(v, PoolMode::Max)?; weighted_sum(t, y) }, &x, OP_TOL)?);
        out.push(check("upsample2x_nearest", "input", |t, v| { let y = t.upsample2x(v, UpsampleMode::Nearest)?; weighted_sum(t, y) }, &x, OP_TOL)?);
        out.push(check("upsample2x_bilinear", "input", |t, v| { let y = t.upsample2x(v, UpsampleMode::Bilinear)?; weighted_sum(t, y) }, &x, OP_TOL)?);
    }

    // elementwise and shape ops; the second operand broadcasts in the third pair
    let pairs: [(&[usize], &[usize]); 3] = [(&[4], &[4]), (&[2, 3], &[2, 3]), (&[2, 3, 4], &[2, 1, 4])];
    for (i, (sa, sb)) in pairs.into_iter().enumerate() {
        let a = random_tensor(sa, 200 + i as u64, -1.0, 1.0);
        let b = random_tensor(sb, 210 + i as u64, -1.0, 1.0);
        let (ac, bc) = (a.clone(), b.clone());
        type Bin = fn(&Tape<f64>, Var, Var) -> Result<Var>;
        let ops: [(&str, Bin); 3] = [("add", |t, x, y| t.add(x, y)), ("sub", |t, x, y| t.sub(x, y)), ("mul", |t, x, y| t.mul(x, y))];
        for (name, op) in ops {
            out.push(check(name, "a", |t, v| { let y = op(t, v, t.constant(bc.clone()))?; weighted_sum(t, y) }, &a, OP_TOL)?);
            out.push(check(name, "b", |t, v| { let y = op(t, t.constant(ac.clone()), v)?; weighted_sum(t, y) }, &b, OP_TOL)?);
        }
    }
    for (i, shape) in [&[5][..], &[2, 3], &[1, 2, 3, 4]].into_iter().enumerate() {
        // magnitudes stay away from the kinks of relu and abs at zero
        let x = random_tensor(shape, 220 + i as u64, 0.1, 1.0).map(|v| if (v * 37.0) as i64 % 2 == 0 { v } else { -v });
        out.push(check("relu", "input", |t, v| weighted_sum(t, t.relu(v)), &x, OP_TOL)?);
        out.push(check("sigmoid", "input", |t, v| weighted_sum(t, t.sigmoid(v)), &x, OP_TOL)?);
        out.push(check("abs", "input", |t, v| weighted_sum(t, t.abs(v)), &x, OP_TOL)?);
        out.push(check("scale", "input", |t, v| weighted_sum(t, t.scale(v, -1.7)), &x, OP_TOL)?);
        out.push(check("add_scalar", "input", |t, v| weighted_sum(t, t.add_scalar(v, 0.3)), &x, OP_TOL)?);
        out.push(check("sum", "input", |t, v| { let y = t.mul(v, v)?; Ok(t.sum(y)) }, &x, OP_TOL)?);
        out.push(check("mean", "input", |t, v| { let y = t.mul(v, v)?; Ok(t.mean(y)) }, &x, OP_TOL)?);
        let flat = [x.numel()];
        out.push(check("reshape", "input", |t, v| { let y = t.reshape(v, &flat)?; weighted_sum(t, y) }, &x, OP_TOL)?);
    }
    for (i, shape) in [&[1, 3, 4][..], &[2, 3, 5], &[3, 1, 4]].into_iter().enumerate() {
        let x = random_tensor(shape, 230 + i as u64, -1.0, 1.0);
        out.push(check("transpose_last2", "input", |t, v| { let y = t.transpose_last2(v)?; weighted_sum(t, y) }, &x, OP_TOL)?);
    }
    for (i, (c1, c2)) in [(1, 1), (2, 3), (4, 1)].into_iter().enumerate() {
        let a = random_tensor(&[2, c1, 3, 3], 240 + i as u64, -1.0, 1.0);
        let b = random_tensor(&[2, c2, 3, 3], 250 + i as u64, -1.0, 1.0);
        let (ac, bc) = (a.clone(), b.clone());
        out.push(check("concat_channels", "first", |t, v| { let y = t.concat_channels(&[v, t.constant(bc.clone())])?; weighted_sum(t, y) }, &a, OP_TOL)?);
        out.push(check("concat_channels", "second", |t, v| { let y = t.concat_channels(&[t.constant(ac.clone()), v])?; weighted_sum(t, y) }, &b, OP_TOL)?);
    }

    let attn: [(usize, usize, usize, usize, usize); 3] = [(1, 4, 5, 3, 3), (2, 3, 3, 2, 4), (1, 20, 18, 4, 2)];
    for (i, (n, l, s, d, e)) in attn.into_iter().enumerate() {
        let q = random_tensor(&[n, l, d], 70 + i as u64, -1.0, 1.0);
        let k = random_tensor(&[n, s, d], 80 + i as u64, -1.0, 1.0);
        let v = random_tensor(&[n, s, e], 90 + i as u64, -1.0, 1.0);
        let scale = 1.0 / (d as f64).sqrt();
        let (qc, kc, vc) = (q.clone(), k.clone(), v.clone());
        out.push(check("attention", "q", |t, x| { let y = t.attention(x, t.constant(kc.clone()), t.constant(vc.clone()), scale)?; weighted_sum(t, y) }, &q, OP_TOL)?);
        out.push(check("attention", "k", |t, x| { let y = t.attention(t.constant(qc.clone()), x, t.constant(vc.clone()), scale)?; weighted_sum(t, y) }, &k, OP_TOL)?);
        out.push(check("attention", "v", |t, x| { let y = t.attention(t.constant(qc.clone()), t.constant(kc.clone()), x, scale)?; weighted_sum(t, y) }, &v, OP_TOL)?);
    }
    Ok(())
}

fn operator_cases(out: &mut Vec<CaseResult>) -> Result<()> {
    for (i, (b, c, h, w, cout)) in [(1, 2, 5, 5, 3), (2, 1, 4, 6, 2)].into_iter().enumerate() {
        let x = random_tensor(&[b, c, h, w], 100 + i as u64, -1.0, 1.0);
        // fractional offsets keep samples away from the kinks of bilinear interpolation at integers
        let off = random_tensor(&[b, 18, h, w], 110 + i as u64, -1.4, 1.4).map(|v| v.trunc() + 0.2 + 0.6 * v.fract().abs());
        let wt = random_tensor(&[cout, c, 3, 3], 120 + i as u64, -0.5, 0.5);
        let (xc, oc, wc) = (x.clone(), off.clone(), wt.clone());
        out.push(check("deformable_conv", "input", |t, v| { let y = deformable_conv_raw(t, v, t.constant(oc.clone()), t.constant(wc.clone()))?; weighted_sum(t, y) }, &x, OP_TOL)?);
        out.push(check("deformable_conv", "offsets", |t, v| { let y = deformable_conv_raw(t, t.constant(xc.clone()), v, t.constant(wc.clone()))?; weighted_sum(t, y) }, &off, OP_TOL)?);
        out.push(check("deformable_conv", "weight", |t, v| { let y = deformable_conv_raw(t, t.constant(xc.clone()), t.constant(oc.clone()), v)?; weighted_sum(t, y) }, &wt, OP_TOL)?);
    }

    for (i, c) in [4usize, 32].into_iter().enumerate() {
        let mut store = ParamStore::new();
        let p = ChannelAlignParams::build(&mut ParamBuilder::new(&mut store, 7 + i as u64, InitMode::Kaiming), c)?;
        randomize(&mut store, 7 + i as u64);
        let x = random_tensor(&[2, c, 3, 3], 130 + i as u64, -1.0, 1.0);
        out.push(check_module("channel_align", &store, &x, None, |s, v| channel_align(s, v, &p))?);
        out.push(check_module("channel_align", &store, &x, Some(("fc1.weight", p.fc1.weight)), |s, v| channel_align(s, v, &p))?);
    }

    let c = 4;
    let shape = [1, c, 4, 4];
    let other = random_tensor(&shape, 140, -1.0, 1.0);
    let x = random_tensor(&shape, 141, -1.0, 1.0);

    let mut store = ParamStore::new();
    let p = CrossAttentionParams::build(&mut ParamBuilder::new(&mut store, 8, InitMode::Kaiming), c, 2, 1)?;
    randomize(&mut store, 8);
    let with_ref = |s: &Scope<'_, f64>, v: Var| dual_cross_attention(s, v, s.tape.constant(other.clone()), &p);
    let with_lr = |s: &Scope<'_, f64>, v: Var| dual_cross_attention(s, s.tape.constant(other.clone()), v, &p);
    out.push(check_module("dual_cross_attention", &store, &x, None, with_ref)?);
    out.push(check_module("dual_cross_attention", &store, &x, None, with_lr).map(|r| CaseResult { wrt: "reference".into(), ..r })?);
    out.push(check_module("dual_cross_attention", &store, &x, Some(("q_s.weight", p.q_s.weight)), with_ref)?);
    out.push(check_module("dual_cross_attention", &store, &x, Some(("k_c.weight", p.k_c.weight)), with_ref)?);

    for alt in [false, true] {
        let op = if alt { "texture_transfer_alt" } else { "texture_transfer" };
        let mut store = ParamStore::new();
        let p = TTMParams::build(&mut ParamBuilder::new(&mut store, 9, InitMode::Kaiming), c, 1e-5, alt)?;
        randomize(&mut store, 9);
        let on_x = |s: &Scope<'_, f64>, v: Var| texture_transfer(s, s.tape.constant(other.clone()), v, &p);
        let on_t = |s: &Scope<'_, f64>, v: Var| texture_transfer(s, v, s.tape.constant(other.clone()), &p);
        out.push(check_module(op, &store, &x, None, on_x).map(|r| CaseResult { wrt: "features".into(), ..r })?);
        out.push(check_module(op, &store, &x, None, on_t).map(|r| CaseResult { wrt: "texture".into(), ..r })?);
        out.push(check_module(op, &store, &x, Some(("beta.conv1.weight", p.beta.conv1.weight)), on_x)?);
    }

    let mut store = ParamStore::new();
    let p = SICMParams::build(&mut ParamBuilder::new(&mut store, 10, InitMode::Kaiming), c)?;
    randomize(&mut store, 10);
    let on_x = |s: &Scope<'_, f64>, v: Var| sicm_fuse(s, v, s.tape.constant(other.clone()), &p);
    let on_e = |s: &Scope<'_, f64>, v: Var| sicm_fuse(s, s.tape.constant(other.clone()), v, &p);
    out.push(check_module("sicm_fuse", &store, &x, None, on_x).map(|r| CaseResult { wrt: "features".into(), ..r })?);
    out.push(check_module("sicm_fuse", &store, &x, None, on_e).map(|r| CaseResult { wrt: "edge".into(), ..r })?);
    out.push(check_module("sicm_fuse", &store, &x, Some(("conv_3x1.weight", p.conv_3x1.weight)), on_x)?);

    let hr = random_tensor(&[1, 1, 8, 8], 150, 0.0, 1.0);
    let sr = random_tensor(&[1, 1, 8, 8], 151, 0.0, 1.0);
    let st = random_tensor(&[1, 1, 8, 8], 152, 0.0, 1.0);
    out.push(check("loss", "sr", |t, v| loss(t, v, &hr, t.constant(st.clone())), &sr, OP_TOL)?);
    out.push(check("loss", "structure", |t, v| loss(t, t.constant(sr.clone()), &hr, v), &st, OP_TOL)?);
    Ok(())
}

/// Every operator-level check at [`OP_TOL`].
pub fn operator_suite() -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    primitive_cases(&mut out)?;
    operator_cases(&mut out)?;
    Ok(out)
}

/// The model used by the end-to-end check: width 8, one residual block, four stages.
pub fn e2e_config() -> ModelConfig {
    ModelConfig::tiny()
}

/// Scalars sampled from each parameter group by the end-to-end check.
pub const E2E_SAMPLES: usize = 10;

/// Full training loss on one 16×16 pair, with respect to the upsampled input and
/// [`E2E_SAMPLES`] randomly chosen scalars of every parameter group, for `config`.
/// Parameters are [`randomize`]d first.
pub fn end_to_end_suite_for(config: &ModelConfig, label: &str) -> Result<Vec<CaseResult>> {
    let mut net = ECFNet::<f64>::new(config.clone(), 21)?;
    randomize(&mut net.params, 21);
    let size = 16;
    let hr = random_tensor(&[1, 1, size, size], 160, 0.0, 1.0);
    let reference = random_tensor(&[1, 1, size, size], 161, 0.0, 1.0);
    let lr = crate::data::kspace_truncate(&hr, config.scale_factor)?;
    let (lr_up, edge) = preprocess(&lr, &reference, config.scale_factor)?;
    let run = |t: &Tape<f64>, bound: &crate::nn::Bound, up: Var| -> Result<Var> {
        let s = Scope::new(t, bound);
        let o = forward_graph(&s, net.layout(), up, t.constant(edge.clone()), t.constant(reference.clone()))?;
        loss(t, o.sr, &hr, o.structure)
    };
    let mut out = vec![check(label, "lr_up", |t, v| run(t, &net.params.bind(t), v), &lr_up, E2E_TOL)?];
    for (group, ids) in net.param_groups() {
        let mut rng = substream(21, &format!("gradcheck/sample/{group}"));
        let total: usize = ids.iter().map(|&id| net.params.get(id).numel()).sum();
        let mut picks: Vec<usize> = (0..E2E_SAMPLES.min(total)).map(|_| rng.gen_range(0..total)).collect();
        picks.sort_unstable();
        picks.dedup();
        // one finite-difference run per tensor that received samples
        let mut merged: Option<GradReport> = None;
        let mut offset = 0;
        for &id in &ids {
            let n = net.params.get(id).numel();
            let local: Vec<usize> = picks.iter().filter(|&&p| p >= offset && p < offset + n).map(|&p| p - offset).collect();
            offset += n;
            if local.is_empty() {
                continue;
            }
            let f = |t: &Tape<f64>, v: Var| {
                let mut bound = net.params.bind(t);
                bound.replace(id, v);
                run(t, &bound, t.constant(lr_up.clone()))
            };
            let r = gradcheck_at(f, net.params.get(id), &local, STEP, E2E_TOL)?;
            merged = Some(match merged {
                None => r,
                Some(m) => GradReport {
                    max_rel_error: m.max_rel_error.max(r.max_rel_error),
                    worst_index: if r.max_rel_error > m.max_rel_error { r.worst_index } else { m.worst_index },
                    checked: m.checked + r.checked,
                    scale: m.scale.max(r.scale),
                    tol: m.tol,
                    passed: m.passed && r.passed,
                },
            });
        }
        if let Some(report) = merged {
            out.push(CaseResult { op: label.to_string(), wrt: group, shape: vec![report.checked], report });
        }
    }
    Ok(out)
}

/// [`end_to_end_suite_for`] on the tiny configuration.
pub fn end_to_end_suite() -> Result<Vec<CaseResult>> {
    end_to_end_suite_for(&e2e_config(), "ecfnet_loss")
}
