//! `ecfnet`: dataset synthesis, training, evaluation, ablation and gradient checks.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or config error, 3 I/O error,
//! 4 numerical abort. `ECF_THREADS` caps the worker pool.

use clap::{Args, Parser, Subcommand};
use ecfnet::config::RunConfig;
use ecfnet::data::{bicubic_baseline, io::write_png16, load_manifest, make_dataset, save_dataset, ImagePair};
use ecfnet::gradsuite::{end_to_end_suite, operator_suite, CaseResult};
use ecfnet::metrics::{error_map, mean_scores, write_csv, write_json, MetricRecord, ERROR_MAP_CAP};
use ecfnet::model::ECFNet;
use ecfnet::trainkit::{read_loss_curve, run_ablation, write_loss_curve, Checkpoint, StepRecord, Trainer};
use ecfnet::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ecfnet", version, about = "Edge-guided cross-scale MRI super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise phantom pairs and a manifest.
    Synth(SynthArgs),
    /// Train a model; writes checkpoints, the loss curve and held-out metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Train the four ablation variants and tabulate them.
    Ablate(AblateArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Run config whose `[phantom]` section is the starting point.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long)]
    size: Option<usize>,
    /// Down-sampling factor, 2 or 4.
    #[arg(long, value_parser = parse_scale)]
    scale: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `train.manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// The checkpoint's model must match this config's `[model]` section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write SR, structure and error-map PNGs per image.
    #[arg(long)]
    emit_maps: bool,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Operator-level suite.
    #[arg(long)]
    ops: bool,
    /// End-to-end suite on the toy model.
    #[arg(long)]
    e2e: bool,
}

fn parse_scale(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v @ (2 | 4)) => Ok(v),
        Ok(v) => Err(format!("scale {v} is not supported, use 2 or 4")),
        Err(e) => Err(e.to_string()),
    }
}

/// A command failure mapped to its exit code.
enum Failure {
    Checks(usize),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Shape { .. } | Error::Config(_) | Error::ConfigMismatch(_) | Error::Tape(_) | Error::MissingGrad(_) => 2,
        Error::Io { .. } | Error::Image(_) | Error::Csv(_) | Error::Json(_) | Error::Format { .. } => 3,
        Error::NonFinite { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks(n)) => {
            eprintln!("{n} gradient check(s) failed");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> ecfnet::Result<()> {
    let Ok(v) = std::env::var("ECF_THREADS") else { return Ok(()) };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Config(format!("ECF_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))
}

fn load_config(path: Option<&Path>) -> ecfnet::Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn create_dir(dir: &Path) -> ecfnet::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> ecfnet::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Makes the manifest path absolute so the config copy next to the outputs loads from anywhere.
fn anchor_manifest(cfg: &mut RunConfig) -> ecfnet::Result<()> {
    if let Some(m) = &cfg.train.manifest {
        cfg.train.manifest = Some(std::path::absolute(m).map_err(|e| Error::io(m, e))?);
    }
    Ok(())
}

/// Validates the merged config, writes it next to the outputs and prints its hash.
fn settle(cfg: &RunConfig, dir: &Path) -> ecfnet::Result<String> {
    cfg.validate()?;
    create_dir(dir)?;
    write_text(&dir.join("config.toml"), &cfg.canonical()?)?;
    let hash = cfg.hash()?;
    println!("config_hash {hash}");
    Ok(hash)
}

fn synth(a: SynthArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.size {
        cfg.phantom.size = s;
    }
    if let Some(s) = a.scale {
        cfg.model.scale_factor = s;
    }
    if let Some(s) = a.seed {
        cfg.phantom.seed = s;
    }
    cfg.data.pairs = a.n;
    cfg.data.holdout = cfg.data.holdout.min(a.n.saturating_sub(1));
    // relative to the written config.toml
    cfg.train.manifest = Some(PathBuf::from("manifest.json"));
    let manifest = a.out.join("manifest.json");
    let hash = settle(&cfg, &a.out)?;
    let pairs = make_dataset(a.n, &cfg.phantom, cfg.model.scale_factor)?;
    save_dataset(&a.out, &pairs)?;
    let baseline = bicubic_baseline(&pairs)?;
    let summary = serde_json::json!({ "config_hash": hash, "pairs": a.n, "scale": cfg.model.scale_factor, "bicubic_psnr_db": baseline });
    write_text(&a.out.join("baseline.json"), &serde_json::to_string_pretty(&summary).map_err(Error::from)?)?;
    println!("wrote {} pairs to {}", a.n, manifest.display());
    println!("bicubic baseline PSNR {baseline:.3} dB");
    Ok(())
}

/// The configured dataset split into training and held-out pairs.
fn dataset(cfg: &RunConfig) -> ecfnet::Result<(Vec<ImagePair>, Vec<ImagePair>)> {
    let mut pairs = match &cfg.train.manifest {
        Some(m) => load_manifest(m)?,
        None => make_dataset(cfg.data.pairs, &cfg.phantom, cfg.model.scale_factor)?,
    };
    if let Some(p) = pairs.iter().find(|p| p.scale != cfg.model.scale_factor) {
        return Err(Error::ConfigMismatch(format!("pair seed{} has scale {}, model expects {}", p.seed, p.scale, cfg.model.scale_factor)));
    }
    if cfg.data.holdout >= pairs.len() {
        return Err(Error::Config(format!("holdout {} leaves no training pairs out of {}", cfg.data.holdout, pairs.len())));
    }
    let held = pairs.split_off(pairs.len() - cfg.data.holdout);
    Ok((pairs, held))
}

fn train(a: TrainArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(o) = a.out {
        cfg.output_dir = o;
    }
    if let Some(m) = a.manifest {
        cfg.train.manifest = Some(m);
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.max_steps {
        cfg.train.max_steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    anchor_manifest(&mut cfg)?;
    let dir = cfg.output_dir.clone();
    let hash = settle(&cfg, &dir)?;
    let (train_set, held_out) = dataset(&cfg)?;
    let n = train_set.len();
    let curve_path = dir.join("loss.csv");
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load_expecting(path, &cfg.model)?;
            let t = Trainer::from_checkpoint(ckpt, cfg.train.clone())?;
            // keep the curve up to the checkpoint, then continue it
            let kept: Vec<StepRecord> = if curve_path.exists() { read_loss_curve(&curve_path)? } else { Vec::new() };
            let kept: Vec<StepRecord> = kept.into_iter().filter(|r| r.step <= t.step).collect();
            write_loss_curve(&curve_path, &kept, false)?;
            println!("resumed at step {}", t.step);
            t
        }
        None => {
            write_loss_curve(&curve_path, &[], false)?;
            Trainer::new(ECFNet::new(cfg.model.clone(), cfg.train.seed)?, cfg.train.clone())?
        }
    };
    let total = trainer.config.total_steps(n);
    println!("training {} parameters on {n} pairs for {total} steps", trainer.model.num_params());
    let (every, log) = (cfg.train.checkpoint_every, cfg.train.log_every);
    trainer
        .run(&train_set, |t, r| {
            write_loss_curve(&curve_path, std::slice::from_ref(r), true)?;
            if log > 0 && r.step % log == 0 {
                println!("step {} epoch {} loss {:.6}", r.step, r.epoch, r.loss);
            }
            if every > 0 && r.step % every == 0 {
                t.checkpoint(n, &hash).save(dir.join(format!("ckpt_step{}.ckpt", r.step)))?;
            }
            Ok(())
        })
        .inspect_err(|e| {
            if let Error::NonFinite { op, node, step } = e {
                eprintln!("aborting: non-finite value in `{op}` (node {node}) at step {step}; lower the learning rate or check the inputs");
            }
        })?;
    let final_path = dir.join("final.ckpt");
    trainer.checkpoint(n, &hash).save(&final_path)?;
    println!("wrote {}", final_path.display());
    if !held_out.is_empty() {
        let records = ecfnet::trainkit::evaluate(&trainer.model, &held_out, &hash)?;
        report(&records, &dir.join("metrics"))?;
    }
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json` and prints the means.
fn report(records: &[MetricRecord], stem: &Path) -> ecfnet::Result<()> {
    write_csv(stem.with_extension("csv"), records)?;
    write_json(stem.with_extension("json"), records)?;
    for r in records {
        println!("{} PSNR {:.3} dB SSIM {:.4}", r.image_id, r.psnr_db, r.ssim);
    }
    let (p, s) = mean_scores(records);
    println!("mean PSNR {p:.3} dB SSIM {s:.4} over {} images", records.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let ckpt = match &a.config {
        Some(c) => Checkpoint::load_expecting(&a.checkpoint, &RunConfig::load(c)?.model)?,
        None => Checkpoint::load(&a.checkpoint)?,
    };
    let hash = ckpt.config_hash.clone();
    println!("config_hash {hash}");
    let model = ECFNet::with_params(ckpt.model, ckpt.params)?;
    let pairs = load_manifest(&a.manifest)?;
    let scale = model.config().scale_factor;
    if let Some(p) = pairs.iter().find(|p| p.scale != scale) {
        return Err(Error::ConfigMismatch(format!("pair seed{} has scale {}, checkpoint expects {scale}", p.seed, p.scale)).into());
    }
    create_dir(&a.out)?;
    let mut records = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let pred = model.forward(&p.lr, &p.reference)?;
        let id = format!("seed{}", p.seed);
        if a.emit_maps {
            write_png16(a.out.join(format!("{id}_sr.png")), &pred.sr)?;
            write_png16(a.out.join(format!("{id}_struct.png")), &pred.structure)?;
            write_png16(a.out.join(format!("{id}_error.png")), &error_map(&pred.sr, &p.hr, ERROR_MAP_CAP)?)?;
        }
        records.push(MetricRecord::evaluate(id, p.scale, hash.as_str(), &pred.sr, &p.hr)?);
    }
    report(&records, &a.out.join("metrics"))?;
    Ok(())
}

fn ablate(a: AblateArgs) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(o) = a.out {
        cfg.output_dir = o;
    }
    anchor_manifest(&mut cfg)?;
    let dir = cfg.output_dir.clone();
    let hash = settle(&cfg, &dir)?;
    let (train_set, held_out) = dataset(&cfg)?;
    if held_out.is_empty() {
        return Err(Error::Config("ablation needs data.holdout ≥ 1".into()).into());
    }
    let report = run_ablation(&train_set, &held_out, &cfg.model, &cfg.train, &hash)?;
    report.write(&dir)?;
    print!("{}", report.to_markdown());
    let verdict = if report.full_is_best() { "yes" } else { "no" };
    println!("full model best on held-out PSNR: {verdict} (expected yes at full scale; toy runs are noisy)");
    Ok(())
}

fn print_cases(title: &str, cases: &[CaseResult]) -> usize {
    println!("{title}");
    for c in cases {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("  {status:4} {:<28} wrt {:<18} {:?} max rel err {:.3e}", c.op, c.wrt, c.shape, c.report.max_rel_error);
    }
    cases.iter().filter(|c| !c.passed()).count()
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let (ops, e2e) = if a.ops || a.e2e { (a.ops, a.e2e) } else { (true, true) };
    let mut failed = 0;
    if ops {
        failed += print_cases("operator suite", &operator_suite()?);
    }
    if e2e {
        failed += print_cases("end-to-end suite", &end_to_end_suite()?);
    }
    if failed > 0 {
        return Err(Failure::Checks(failed));
    }
    println!("all gradient checks passed");
    Ok(())
}
