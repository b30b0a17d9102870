//! Command-line front end for the scene-recovery pipeline: corpus synthesis,
//! frequency decomposition, training, restoration, evaluation, gradient
//! checking and benchmarks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use mvksr_core::dataset::{build_dataset, Kind, Manifest, SynthConfig};
use mvksr_core::error::Error;
use mvksr_core::freq::{
    decompose_multiscale, fast_guided_filter, guided_filter, to_grayscale, DecompMode, FreqStack,
    GrayCoeffs, GuidedFilterParams, KernelMode, SCALE_KS,
};
use mvksr_core::image::{load_png, save_png, write_atomic, Image};
use mvksr_core::losses::LossWeights;
use mvksr_core::net::{Model, NetworkConfig, ViewSettings};
use mvksr_core::physics::DepthMode;
use mvksr_core::train::{
    evaluate_dataset, load_model, restore_file, sibling, train_loop, SplitUse, TrainConfig,
};

#[derive(Parser)]
#[command(name = "mvksr", version, about = "Hazy/rainy/mixed scene recovery pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize degraded images from a folder of clean PNGs.
    Synth(SynthArgs),
    /// Split an image into multi-scale high/low-frequency PNG layers.
    Decompose(DecomposeArgs),
    /// Train a model on a synthesized manifest.
    Train(TrainArgs),
    /// Restore one degraded image with a trained checkpoint.
    Restore(RestoreArgs),
    /// Evaluate a checkpoint over a manifest (restored vs. baseline).
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Time exact vs. fast guided filtering and full inference.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Folder of clean RGB PNGs.
    #[arg(long)]
    clean: PathBuf,
    /// Output folder for degraded images and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of haze,rain,mixed.
    #[arg(long, default_value = "haze,rain,mixed")]
    kinds: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed scattering coefficient (default: sampled in [0.6, 2.0]).
    #[arg(long)]
    beta: Option<f64>,
    /// Fixed atmospheric light (default: sampled in [0.7, 1.0]).
    #[arg(long = "atm-light")]
    atm_light: Option<f64>,
    /// Sample atmospheric light per channel.
    #[arg(long = "per-channel-atm")]
    per_channel_atm: bool,
    /// Depth generator: constant, ramp or smooth-noise.
    #[arg(long = "depth-mode", default_value = "smooth-noise")]
    depth_mode: String,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Input image.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for the six layer PNGs.
    #[arg(long)]
    out: PathBuf,
    /// High-frequency convention: paper (1 - low) or additive (gray - low).
    #[arg(long, default_value = "additive")]
    mode: String,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Interpret the scale values 5/13/25 as window radius or diameter.
    #[arg(long = "kernel-mode", default_value = "radius")]
    kernel_mode: String,
    /// Guided-filter subsampling (1 = exact, 2/4 = fast).
    #[arg(long, default_value_t = 1)]
    subsample: usize,
    /// Grayscale conversion coefficients: paper or standard.
    #[arg(long, default_value = "paper")]
    gray: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Manifest written by `synth`.
    #[arg(long)]
    manifest: PathBuf,
    /// Output model checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 90)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "batch", default_value_t = 4)]
    batch_size: usize,
    #[arg(long = "patch", default_value_t = 64)]
    patch_size: usize,
    #[arg(long = "lr", default_value_t = 0.001)]
    base_lr: f64,
    /// Residual blocks per en/decoder level.
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    /// Zero the high-frequency input channels (ablation).
    #[arg(long = "no-high-input")]
    no_high_input: bool,
    /// Zero the low-frequency input channels (ablation).
    #[arg(long = "no-low-input")]
    no_low_input: bool,
    /// Drop the high-frequency supervision term (ablation).
    #[arg(long = "no-sup-high")]
    no_sup_high: bool,
    /// Drop the low-frequency supervision term (ablation).
    #[arg(long = "no-sup-low")]
    no_sup_low: bool,
    /// Drop the self-supervision consistency term (ablation).
    #[arg(long = "no-self-sup")]
    no_self_sup: bool,
    #[arg(long, default_value_t = 0.8)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.2)]
    lambda2: f64,
    #[arg(long = "lambda-cs", default_value_t = 1.0)]
    lambda_cs: f64,
    /// Random horizontal flips during cropping.
    #[arg(long)]
    hflip: bool,
    /// Records to train on: all or train (80% split).
    #[arg(long, default_value = "all")]
    split: String,
    /// Checkpoint cadence in epochs.
    #[arg(long = "ckpt-every", default_value_t = 10)]
    ckpt_every: usize,
    /// Resume from a training-state file.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Optional key=value file overriding the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RestoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Subsampled guided filtering for the decomposition.
    #[arg(long)]
    fast: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Report output file (key=value records).
    #[arg(long)]
    report: PathBuf,
    /// Records to evaluate: all, train or heldout.
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long)]
    fast: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark image size as WxH.
    #[arg(long, default_value = "1080x720")]
    size: String,
    /// Skip the full-network inference timing.
    #[arg(long = "filter-only")]
    filter_only: bool,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Png(_) => 2,
        Error::NonFinite { .. } => 3,
        Error::Format(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Decompose(a) => cmd_decompose(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Restore(a) => cmd_restore(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn parse_kinds(s: &str) -> Result<Vec<Kind>, Error> {
    let mut kinds = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let kind = Kind::parse(part)?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no kinds selected".into()));
    }
    Ok(kinds)
}

fn cmd_synth(a: SynthArgs) -> Result<u8, Error> {
    let cfg = SynthConfig {
        kinds: parse_kinds(&a.kinds)?,
        seed: a.seed,
        fixed_beta: a.beta,
        fixed_atm: a.atm_light,
        per_channel_atm: a.per_channel_atm,
        depth_mode: DepthMode::parse(&a.depth_mode)?,
        ..SynthConfig::default()
    };
    let manifest = build_dataset(&a.clean, &cfg, &a.out)?;
    println!(
        "wrote {} degraded images and manifest.txt to {}",
        manifest.records.len(),
        a.out.display()
    );
    Ok(0)
}

fn parse_gray(s: &str) -> Result<GrayCoeffs, Error> {
    match s {
        "paper" => Ok(GrayCoeffs::Paper),
        "standard" => Ok(GrayCoeffs::Standard),
        other => Err(Error::InvalidArgument(format!("unknown gray coefficients '{other}'"))),
    }
}

fn parse_kernel_mode(s: &str) -> Result<KernelMode, Error> {
    match s {
        "radius" => Ok(KernelMode::Radius),
        "diameter" => Ok(KernelMode::Diameter),
        other => Err(Error::InvalidArgument(format!("unknown kernel mode '{other}'"))),
    }
}

fn cmd_decompose(a: DecomposeArgs) -> Result<u8, Error> {
    let mode = match a.mode.as_str() {
        "paper" => DecompMode::Paper,
        "additive" => DecompMode::Additive,
        other => return Err(Error::InvalidArgument(format!("unknown mode '{other}'"))),
    };
    let img = load_png(&a.input)?;
    let gray = if img.c == 3 {
        to_grayscale(&img, parse_gray(&a.gray)?)?
    } else {
        img
    };
    let stack = decompose_multiscale(&gray, a.eps, mode, parse_kernel_mode(&a.kernel_mode)?, a.subsample)?;
    std::fs::create_dir_all(&a.out)?;
    let stem = a
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    for (i, k) in SCALE_KS.iter().enumerate() {
        save_png(&stack.lows[i], &a.out.join(format!("{stem}_lo{k}.png")))?;
        let high = match mode {
            DecompMode::Paper => stack.highs[i].clone(),
            DecompMode::Additive => FreqStack::high_for_storage(&stack.highs[i]),
        };
        save_png(&high, &a.out.join(format!("{stem}_hi{k}.png")))?;
    }
    println!("wrote 6 layers to {}", a.out.display());
    Ok(0)
}

fn apply_config_file(a: &mut TrainArgs, path: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(path)?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("{}:{}: expected key=value", path.display(), lineno + 1))
        })?;
        let bad = |what: &str| {
            Error::InvalidArgument(format!("{}:{}: bad {what} '{v}'", path.display(), lineno + 1))
        };
        match k.trim() {
            "epochs" => a.epochs = v.parse().map_err(|_| bad("epochs"))?,
            "seed" => a.seed = v.parse().map_err(|_| bad("seed"))?,
            "batch" => a.batch_size = v.parse().map_err(|_| bad("batch"))?,
            "patch" => a.patch_size = v.parse().map_err(|_| bad("patch"))?,
            "lr" => a.base_lr = v.parse().map_err(|_| bad("lr"))?,
            "blocks" => a.blocks = v.parse().map_err(|_| bad("blocks"))?,
            "lambda1" => a.lambda1 = v.parse().map_err(|_| bad("lambda1"))?,
            "lambda2" => a.lambda2 = v.parse().map_err(|_| bad("lambda2"))?,
            "lambda_cs" => a.lambda_cs = v.parse().map_err(|_| bad("lambda_cs"))?,
            "hflip" => a.hflip = v.parse().map_err(|_| bad("hflip"))?,
            "split" => a.split = v.trim().to_string(),
            "ckpt_every" => a.ckpt_every = v.parse().map_err(|_| bad("ckpt_every"))?,
            "no_high_input" => a.no_high_input = v.parse().map_err(|_| bad("no_high_input"))?,
            "no_low_input" => a.no_low_input = v.parse().map_err(|_| bad("no_low_input"))?,
            "no_sup_high" => a.no_sup_high = v.parse().map_err(|_| bad("no_sup_high"))?,
            "no_sup_low" => a.no_sup_low = v.parse().map_err(|_| bad("no_sup_low"))?,
            "no_self_sup" => a.no_self_sup = v.parse().map_err(|_| bad("no_self_sup"))?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "{}:{}: unknown config key '{other}'",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(())
}

fn cmd_train(mut a: TrainArgs) -> Result<u8, Error> {
    if let Some(cfg_path) = a.config.clone() {
        apply_config_file(&mut a, &cfg_path)?;
    }
    let manifest = Manifest::load(&a.manifest)?;
    let manifest_dir = a
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let net = NetworkConfig {
        blocks_per_level: a.blocks,
        seed: a.seed,
        ..NetworkConfig::default()
    };
    let cfg = TrainConfig {
        patch_size: a.patch_size,
        batch_size: a.batch_size,
        epochs: a.epochs,
        base_lr: a.base_lr,
        seed: a.seed,
        hflip: a.hflip,
        weights: LossWeights {
            lambda1: a.lambda1,
            lambda2: a.lambda2,
            lambda_cs: a.lambda_cs,
        },
        cs_switches: mvksr_core::losses::CsSwitches {
            supervise_high: !a.no_sup_high,
            supervise_low: !a.no_sup_low,
            self_supervise: !a.no_self_sup,
        },
        view_settings: ViewSettings {
            use_high_input: !a.no_high_input,
            use_low_input: !a.no_low_input,
            ..ViewSettings::default()
        },
        split: SplitUse::parse(&a.split)?,
        ckpt_every: a.ckpt_every,
    };
    let state_path = sibling(&a.out, ".state");
    let log_path = sibling(&a.out, ".log");
    let outcome = train_loop(
        &manifest,
        &manifest_dir,
        net,
        &cfg,
        &a.out,
        Some(&state_path),
        a.resume.as_deref(),
        Some(&log_path),
    )?;
    println!(
        "trained {} epochs; first-epoch loss {:.6}, final loss {:.6}; checkpoint {}",
        outcome.epochs_run,
        outcome.first_epoch_loss,
        outcome.final_epoch_loss,
        a.out.display()
    );
    Ok(0)
}

fn cmd_restore(a: RestoreArgs) -> Result<u8, Error> {
    let model = load_model(&a.ckpt)?;
    let (t_decomp, t_infer) = restore_file(&model, &a.input, &a.out, a.fast)?;
    println!(
        "restored {} -> {} (decomposition {:.3}s, inference {:.3}s)",
        a.input.display(),
        a.out.display(),
        t_decomp,
        t_infer
    );
    Ok(0)
}

fn cmd_eval(a: EvalArgs) -> Result<u8, Error> {
    let model = load_model(&a.ckpt)?;
    let manifest = Manifest::load(&a.manifest)?;
    let manifest_dir = a
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let vs = ViewSettings { subsample: if a.fast { 2 } else { 1 }, ..ViewSettings::default() };
    let report = evaluate_dataset(&model, &manifest, &manifest_dir, SplitUse::parse(&a.split)?, &vs)?;
    let records = report.to_records();
    write_atomic(&a.report, records.as_bytes())?;
    for (kind, rep) in &report.restored {
        let (rp, _) = rep.psnr_stats();
        let (bp, _) = report.baseline[kind].psnr_stats();
        println!(
            "{:<6} n={:<3} restored {rp:.3} dB vs baseline {bp:.3} dB ({:+.3} dB)",
            kind.as_str(),
            rep.count(),
            rp - bp
        );
    }
    println!("report written to {}", a.report.display());
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<u8, Error> {
    if a.tol <= 0.0 {
        return Err(Error::InvalidArgument("tolerance must be > 0".into()));
    }
    let reports = mvksr_core::gradsuite::run_suite(a.tol)?;
    let mut worst = 0.0f64;
    let mut all_pass = true;
    for r in &reports {
        println!("{r}");
        worst = worst.max(r.max_rel_err);
        all_pass &= r.passed();
    }
    println!("worst relative error: {worst:.3e} (tolerance {:.0e})", a.tol);
    if all_pass {
        Ok(0)
    } else {
        Err(Error::NonFinite { tensor: "gradient-check".into() })
    }
}

fn smooth_gray(h: usize, w: usize) -> Image {
    let mut img = Image::new(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let v = 0.5 + 0.3 * (y as f64 * 0.013).sin() + 0.2 * (x as f64 * 0.009).cos();
            *img.at_mut(y, x, 0) = v.clamp(0.0, 1.0);
        }
    }
    img
}

fn cmd_bench(a: BenchArgs) -> Result<u8, Error> {
    let (w, h) = a
        .size
        .split_once('x')
        .and_then(|(w, h)| Some((w.parse::<usize>().ok()?, h.parse::<usize>().ok()?)))
        .ok_or_else(|| Error::InvalidArgument(format!("bad --size '{}', expected WxH", a.size)))?;
    let img = smooth_gray(h, w);
    let exact_params = GuidedFilterParams::new(25, 0.1)?;
    let fast_params = exact_params.with_subsample(2)?;

    let time_it = |f: &dyn Fn() -> Result<Image, Error>| -> Result<f64, Error> {
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let t0 = Instant::now();
            let _ = f()?;
            best = best.min(t0.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    let t_exact = time_it(&|| guided_filter(&img, &img, &exact_params))?;
    let t_fast = time_it(&|| fast_guided_filter(&img, &img, &fast_params))?;
    println!(
        "guided filter {w}x{h}, k=25: exact {t_exact:.4}s, fast(s=2) {t_fast:.4}s, speedup {:.2}x",
        t_exact / t_fast
    );

    if !a.filter_only {
        let model = Model::new(NetworkConfig::default())?;
        let mut rgb = Image::new(h, w, 3);
        for i in 0..h * w {
            for c in 0..3 {
                rgb.data[i * 3 + c] = img.data[i];
            }
        }
        for (label, sub) in [("exact", 1usize), ("fast", 2)] {
            let vs = ViewSettings { subsample: sub, ..ViewSettings::default() };
            let t0 = Instant::now();
            let _ = mvksr_core::train::restore_image(&model, &rgb, &vs)?;
            println!(
                "full inference ({label} decomposition): {:.3}s",
                t0.elapsed().as_secs_f64()
            );
        }
    }
    Ok(0)
}
