//! Acceptance criteria 1 to 7, one PASS/FAIL line each. Exits nonzero on any failure.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use ecfnet::data::kspace_truncate;
use ecfnet::gradsuite::{end_to_end_suite, operator_suite, random_tensor, CaseResult, E2E_TOL, OP_TOL};
use ecfnet::metrics::{psnr, ssim};
use ecfnet::model::{preprocess, ECFNet, ModelConfig};
use ecfnet::nn::{InitMode, ParamBuilder, ParamStore, Scope};
use ecfnet::operators::{deformable_conv_raw, sicm_fuse, sobel_edge_map, SICMParams};
use ecfnet::tensor::{Conv2dArgs, Tape, Tensor};
use ecfnet::trainkit::{Checkpoint, StepRecord, TrainConfig, Trainer};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};
use support::{cosine, ssim_oracle, truncate_oracle};

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lib<T>(r: ecfnet::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ecfnet")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("ecfnet {} exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn read_json(p: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

/// Operator suite at 1e-4 and end-to-end suite at 1e-3 in f64, under five minutes.
fn gradients() -> Verdict {
    let start = Instant::now();
    let ops = lib(operator_suite())?;
    let e2e = lib(end_to_end_suite())?;
    let elapsed = start.elapsed();
    let failed: Vec<String> =
        ops.iter().chain(&e2e).filter(|c| !c.passed()).map(|c| format!("{} wrt {} ({:.2e})", c.op, c.wrt, c.report.max_rel_error)).collect();
    ensure(failed.is_empty(), format!("failed: {}", failed.join(", ")))?;
    ensure(ops.iter().all(|c| c.report.tol == OP_TOL) && e2e.iter().all(|c| c.report.tol == E2E_TOL), "wrong tolerance")?;
    let covered = |name: &str| ops.iter().any(|c: &CaseResult| c.op.starts_with(name));
    let required = ["conv2d", "matmul", "softmax", "instance_norm", "upsample", "deformable_conv", "channel_align", "dual_cross_attention", "texture_transfer", "sicm_fuse", "loss"];
    let missing: Vec<&str> = required.into_iter().filter(|op| !covered(op)).collect();
    ensure(missing.is_empty(), format!("operators not checked: {missing:?}"))?;
    ensure(e2e.iter().all(|c| c.shape.ends_with(&[16, 16]) || c.shape.len() != 4), "end-to-end input is not 16×16")?;
    ensure(elapsed <= Duration::from_secs(300), format!("took {elapsed:?}"))?;
    let worst = ops.iter().chain(&e2e).map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    Ok(format!("{} operator and {} end-to-end checks, worst rel err {worst:.2e}, {:.1}s", ops.len(), e2e.len(), elapsed.as_secs_f64()))
}

fn identities() -> Verdict {
    // zero offsets
    let x = random_tensor(&[2, 3, 7, 6], 900, -1.0, 1.0);
    let w = random_tensor(&[4, 3, 3, 3], 901, -1.0, 1.0);
    let t = Tape::new();
    let deformed = t.to_tensor(lib(deformable_conv_raw(&t, t.constant(x.clone()), t.constant(Tensor::zeros(&[2, 18, 7, 6])), t.constant(w.clone())))?);
    let plain = t.to_tensor(lib(t.conv2d(t.constant(x), t.constant(w), None, Conv2dArgs::same(3)))?);
    let d = deformed.max_abs_diff(&plain);
    ensure(d <= 1e-12, format!("zero-offset deformable conv differs by {d:.2e}"))?;

    // SICM whose residual branch is zeroed, with every other weight random and with all weights zero
    for mode in [InitMode::Kaiming, InitMode::Zero] {
        let mut store = ParamStore::<f64>::new();
        let p = lib(SICMParams::build(&mut ParamBuilder::new(&mut store, 902, mode), 3))?;
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let s = Scope::new(&tape, &bound);
        let x = tape.constant(random_tensor(&[1, 3, 6, 5], 903, -1.0, 1.0));
        let e = tape.constant(random_tensor(&[1, 3, 6, 5], 904, -1.0, 1.0));
        let out = lib(sicm_fuse(&s, x, e, &p))?;
        ensure(*tape.value(out) == *tape.value(x), format!("SICM with a zero branch is not the identity ({mode:?} init)"))?;
    }

    // global skip
    let net = lib(ECFNet::<f64>::new(ModelConfig { init: InitMode::Zero, ..ModelConfig::tiny() }, 0))?;
    let lr = random_tensor(&[2, 1, 8, 8], 905, 0.0, 1.0);
    let reference = random_tensor(&[2, 1, 32, 32], 906, 0.0, 1.0);
    let pred = lib(net.forward_raw(&lr, &reference))?;
    let (lr_up, _) = lib(preprocess(&lr, &reference, 4))?;
    ensure(pred.sr == lr_up, "all-zero network does not return the bicubic input")?;

    for c in [0.0, 0.37, 1.0] {
        let edges = lib(sobel_edge_map(&Tensor::full(&[1, 1, 16, 16], c)))?;
        ensure(edges.data().iter().all(|&v| v == 0.0), format!("Sobel of constant {c} is not zero"))?;
    }
    Ok(format!("deformable vs conv {d:.1e}, SICM identity exact, global skip exact, Sobel of constants zero"))
}

fn degradation() -> Verdict {
    let mut worst: f64 = 0.0;
    for (i, (h, w, s)) in [(16, 16, 2), (16, 12, 4), (24, 8, 2), (32, 32, 4), (20, 28, 4)].into_iter().enumerate() {
        let img = random_tensor(&[1, 1, h, w], 910 + i as u64, 0.0, 1.0);
        worst = worst.max(lib(kspace_truncate(&img, s))?.max_abs_diff(&truncate_oracle(&img, s)));

        let c = 0.1 + 0.2 * i as f64;
        let lr = lib(kspace_truncate(&Tensor::full(&[1, 1, h, w], c), s))?;
        ensure(lr.data().iter().all(|&v| v == c), format!("constant {c} not preserved exactly at {h}×{w}/{s}"))?;

        let b = random_tensor(&[1, 1, h, w], 920 + i as u64, 0.0, 1.0);
        let (a1, a2) = (1.7, -0.6);
        let combo = Tensor::from_fn(img.shape(), |k| a1 * img.data()[k] + a2 * b.data()[k]);
        let (ti, tb) = (lib(kspace_truncate(&img, s))?, lib(kspace_truncate(&b, s))?);
        let lin = lib(kspace_truncate(&combo, s))?.max_abs_diff(&Tensor::from_fn(ti.shape(), |k| a1 * ti.data()[k] + a2 * tb.data()[k]));
        ensure(lin <= 1e-9, format!("linearity error {lin:.2e} at {h}×{w}/{s}"))?;
    }
    ensure(worst <= 1e-9, format!("differs from the compensated DFT by {worst:.2e}"))?;

    // (32×32 → 8×8): frequency 2 is in band, 6 is beyond the 8-sample Nyquist limit of 4
    let in_band = cosine(32, 32, 1.0, 2.0, 0.4);
    let kept = lib(kspace_truncate(&in_band, 4))?;
    let in_err = kept.max_abs_diff(&cosine(8, 8, 1.0, 2.0, 0.4));
    ensure(in_err <= 1e-9, format!("in-band cosine error {in_err:.2e}"))?;
    let rejected = lib(kspace_truncate(&cosine(32, 32, 6.0, 5.0, 0.1), 4))?;
    let out_err = rejected.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(out_err <= 1e-9, format!("out-of-band residue {out_err:.2e}"))?;
    Ok(format!("oracle diff {worst:.1e}, in-band {in_err:.1e}, out-of-band {out_err:.1e}, constants exact"))
}

fn metrics() -> Verdict {
    let a = random_tensor(&[1, 1, 16, 16], 930, 0.0, 0.9);
    let p = lib(psnr(&a, &a.map(|v| v + 0.1), 1.0))?;
    ensure((p - 20.0).abs() <= 1e-9, format!("uniform 0.1 error gives {p} dB"))?;
    let same = lib(ssim(&a, &a, 1.0))?;
    ensure(same == 1.0, format!("SSIM(a, a) = {same}"))?;
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let (h, w) = (11 + (i as usize * 7) % 13, 12 + (i as usize * 3) % 11);
        let x = random_tensor(&[1, 1, h, w], 940 + i, 0.0, 1.0);
        let noise = random_tensor(&[1, 1, h, w], 960 + i, -0.3, 0.3);
        let y = Tensor::from_fn(&[1, 1, h, w], |k| (x.data()[k] + noise.data()[k]).clamp(0.0, 1.0));
        worst = worst.max((lib(ssim(&x, &y, 1.0))? - ssim_oracle(&x, &y)).abs());
    }
    ensure(worst <= 1e-6, format!("SSIM differs from the window oracle by {worst:.2e}"))?;
    Ok(format!("PSNR {p:.12} dB, SSIM(a,a) = 1, SSIM oracle diff {worst:.1e} on 20 pairs"))
}

const OVERFIT_STEPS: usize = 500;

/// Synthesise, train the C0 = 8 model and score it on its own training set, all through the binary.
fn overfit(dir: &Path) -> Verdict {
    let start = Instant::now();
    let data = dir.join("data");
    cli(&["synth", "--n", "10", "--size", "64", "--scale", "4", "--seed", "0", "--out", path(&data)])?;
    let baseline = read_json(&data.join("baseline.json"))?["bicubic_psnr_db"].as_f64().ok_or("baseline.json has no bicubic_psnr_db")?;
    let config = dir.join("overfit.toml");
    let body = format!(
        "[model]\nbase_channels = 8\nresidual_blocks = 1\nattention_heads = 1\nscale_factor = 4\n\
         [train]\nlr = 2e-4\nbatch_size = 1\nepochs = 1000\nmax_steps = {OVERFIT_STEPS}\n[data]\nholdout = 0\n"
    );
    std::fs::write(&config, body).map_err(|e| e.to_string())?;
    let run = dir.join("run");
    let manifest = data.join("manifest.json");
    cli(&["train", "--config", path(&config), "--manifest", path(&manifest), "--out", path(&run)])?;
    let eval = dir.join("eval");
    cli(&["eval", "--checkpoint", path(&run.join("final.ckpt")), "--manifest", path(&manifest), "--config", path(&config), "--out", path(&eval)])?;
    let records = read_json(&eval.join("metrics.json"))?;
    let scores: Vec<f64> = records.as_array().ok_or("metrics.json is not a list")?.iter().filter_map(|r| r["psnr_db"].as_f64()).collect();
    ensure(scores.len() == 10, format!("{} scores for 10 pairs", scores.len()))?;
    let mean = scores.iter().sum::<f64>() / 10.0;
    let elapsed = start.elapsed();
    ensure(mean >= baseline + 1.0, format!("mean PSNR {mean:.3} dB vs bicubic {baseline:.3} dB"))?;
    ensure(elapsed <= Duration::from_secs(1800), format!("took {elapsed:?}"))?;
    Ok(format!("{OVERFIT_STEPS} steps: {mean:.3} dB vs bicubic {baseline:.3} dB (+{:.2}), {:.0}s", mean - baseline, elapsed.as_secs_f64()))
}

const ABLATION_CONFIG: &str = "[model]\nbase_channels = 2\nresidual_blocks = 1\nattention_heads = 1\n\
    [train]\nepochs = 2\nbatch_size = 2\n[phantom]\nsize = 32\n[data]\npairs = 6\nholdout = 2\n";

fn ablation(dir: &Path) -> Verdict {
    let config = dir.join("ablate.toml");
    std::fs::write(&config, ABLATION_CONFIG).map_err(|e| e.to_string())?;
    let (a, b) = (dir.join("ablate_a"), dir.join("ablate_b"));
    let first = cli(&["ablate", "--config", path(&config), "--out", path(&a)])?;
    let second = cli(&["ablate", "--config", path(&config), "--out", path(&b)])?;
    ensure(first == second, "re-run printed a different table")?;
    let (ja, jb) = (read_json(&a.join("ablation.json"))?, read_json(&b.join("ablation.json"))?);
    ensure(ja == jb, "re-run wrote a different ablation.json")?;
    let expected = [
        ("w/o multi-scale feature alignment", [false, true, true]),
        ("w/o texture transfer", [true, false, true]),
        ("w/o structure branch", [true, true, false]),
        ("full", [true, true, true]),
    ];
    let rows = ja["rows"].as_array().ok_or("ablation.json has no rows")?;
    ensure(rows.len() == 4, format!("{} variants", rows.len()))?;
    for (row, (name, flags)) in rows.iter().zip(expected) {
        ensure(row["variant"] == name, format!("variant {} where {name} was expected", row["variant"]))?;
        let got: Vec<bool> = ["use_cffm_alignment", "use_ttm", "use_structure_branch"].iter().map(|k| row["ablation"][k] == true).collect();
        ensure(got == flags, format!("{name} has switches {got:?}"))?;
        let marks: String = flags.iter().map(|&on| if on { '✓' } else { '×' }).collect();
        let line = first.lines().find(|l| l.starts_with(&format!("| {name} |"))).ok_or(format!("{name} missing from the table"))?;
        ensure(line.chars().filter(|c| matches!(c, '✓' | '×')).collect::<String>() == marks, format!("{name} row shows the wrong flags"))?;
    }
    let note = first.lines().find(|l| l.starts_with("full model best")).ok_or("ordering note missing")?;
    Ok(format!("4 variants, identical re-runs; {note}"))
}

fn persistence(dir: &Path) -> Verdict {
    let pairs = lib(ecfnet::data::make_dataset(3, &ecfnet::data::PhantomSpec { size: 32, ..Default::default() }, 4))?;
    let model = ModelConfig { base_channels: 2, residual_blocks: 1, attention_heads: 1, ..ModelConfig::default() };
    let tc = TrainConfig { epochs: 2, batch_size: 2, ..TrainConfig::default() };
    let run = |steps: Option<usize>| -> ecfnet::Result<(Trainer, Vec<StepRecord>)> {
        let mut t = Trainer::new(ECFNet::new(model.clone(), 7)?, TrainConfig { max_steps: steps.unwrap_or(0), ..tc.clone() })?;
        let curve = t.run(&pairs, |_, _| Ok(()))?;
        Ok((t, curve))
    };
    let bits = |curve: &[StepRecord]| curve.iter().map(|r| (r.step, r.epoch, r.loss.to_bits())).collect::<Vec<_>>();
    let ((a, curve_a), (_, curve_b)) = (lib(run(None))?, lib(run(None))?);
    ensure(bits(&curve_a) == bits(&curve_b), "same-seed replay gave a different curve")?;

    let (half, mut curve_r) = lib(run(Some(2)))?;
    let path_a = dir.join("half.ckpt");
    lib(half.checkpoint(pairs.len(), "replay").save(&path_a))?;
    let mut resumed = lib(Trainer::from_checkpoint(lib(Checkpoint::load(&path_a))?, tc.clone()))?;
    curve_r.extend(lib(resumed.run(&pairs, |_, _| Ok(())))?);
    ensure(bits(&curve_r) == bits(&curve_a), "resumed curve differs from the uninterrupted one")?;
    let full_a = lib(a.checkpoint(pairs.len(), "replay").to_bytes())?;
    ensure(lib(resumed.checkpoint(pairs.len(), "replay").to_bytes())? == full_a, "resumed weights differ")?;

    let path_b = dir.join("again.ckpt");
    lib(lib(Checkpoint::load(&path_a))?.save(&path_b))?;
    let (bytes_a, bytes_b) = (std::fs::read(&path_a).map_err(|e| e.to_string())?, std::fs::read(&path_b).map_err(|e| e.to_string())?);
    ensure(bytes_a == bytes_b, "save, load, save is not byte-identical")?;
    Ok(format!("{} steps replayed bit-identically, resume from step 2 matches, checkpoint round trip byte-identical ({} bytes)", curve_a.len(), bytes_a.len()))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path();
    let criteria: [(&str, &dyn Fn() -> Verdict); 7] = [
        ("gradient suite", &gradients),
        ("degenerate-case identities", &identities),
        ("degradation oracle", &degradation),
        ("metric oracle", &metrics),
        ("overfit beats bicubic by 1 dB", &|| overfit(dir)),
        ("ablation harness", &|| ablation(dir)),
        ("determinism and persistence", &|| persistence(dir)),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of 7 criteria passed", 7 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
