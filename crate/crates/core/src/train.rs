//! Training loop, learning-rate schedule, checkpoint/resume and the
//! restore/evaluate flows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::ckpt;
use crate::dataset::{resolve, Kind, Manifest};
use crate::error::{Error, Result};
use crate::image::{load_png, save_png, write_atomic, Image};
use crate::losses::{
    total_loss, CrConfig, CsSwitches, FeaturePyramid, LossBreakdown, LossWeights, MsSsimConfig,
    SupervisionTargets,
};
use crate::metrics::{mean_std, psnr, ssim_metric, MetricReport};
use crate::net::{
    batch_views, mce_forward, mff_forward, restored_to_image, view_channels, Model, NetworkConfig,
    ViewSettings,
};
use crate::rng::stream;
use crate::tensor::{adam_step, AdamState, ParamSet, Tensor};

/// Which manifest records a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitUse {
    All,
    Train,
    Heldout,
}

impl SplitUse {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SplitUse::All),
            "train" => Ok(SplitUse::Train),
            "heldout" => Ok(SplitUse::Heldout),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub seed: u64,
    pub hflip: bool,
    pub weights: LossWeights,
    pub cs_switches: CsSwitches,
    pub view_settings: ViewSettings,
    pub split: SplitUse,
    pub ckpt_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 64,
            batch_size: 4,
            epochs: 90,
            base_lr: 0.001,
            seed: 0,
            hflip: false,
            weights: LossWeights::default(),
            cs_switches: CsSwitches::default(),
            view_settings: ViewSettings::default(),
            split: SplitUse::All,
            ckpt_every: 10,
        }
    }
}

/// `base_lr * 0.1^floor(epoch/30)`: one-tenth after every 30 epochs.
/// Implemented as division by the exact power of ten so the decayed rates
/// equal their decimal literals (1e-4, 1e-5, ...) bit for bit.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    base_lr / 10f64.powi((epoch / 30) as i32)
}

pub struct TrainOutcome {
    pub log: Vec<String>,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
    pub epochs_run: usize,
}

struct Pair {
    clean: Image,
    degraded: Image,
}

fn load_pairs(manifest: &Manifest, manifest_dir: &Path, split: SplitUse) -> Result<Vec<Pair>> {
    let (train_idx, heldout_idx) = manifest.split(manifest.seed);
    let selected: Vec<usize> = match split {
        SplitUse::All => (0..manifest.records.len()).collect(),
        SplitUse::Train => train_idx,
        SplitUse::Heldout => heldout_idx,
    };
    let mut pairs = Vec::with_capacity(selected.len());
    for i in selected {
        let r = &manifest.records[i];
        let clean = load_png(&resolve(manifest_dir, &r.clean))?;
        let degraded = load_png(&resolve(manifest_dir, &r.degraded))?;
        if clean.h != degraded.h || clean.w != degraded.w {
            return Err(Error::shape("train", format!("record {i}: clean/degraded size mismatch")));
        }
        pairs.push(Pair { clean, degraded });
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no records selected for training".into()));
    }
    Ok(pairs)
}

fn first_non_finite(out: &crate::net::MffOutputs, loss: f64) -> Option<String> {
    for (name, t) in [
        ("mff.gray_f", &out.gray_f),
        ("mff.high_f", &out.high_f),
        ("mff.low_f", &out.low_f),
        ("mff.restored", &out.restored),
    ] {
        if t.data().iter().any(|v| !v.is_finite()) {
            return Some(name.to_string());
        }
    }
    if !loss.is_finite() {
        return Some("loss.total".to_string());
    }
    None
}

/// Serialized optimizer + parameter state for exact resume (version-2
/// checkpoint payload, 64-bit).
pub struct TrainState {
    pub params: ParamSet,
    pub adam_m: BTreeMap<String, Vec<f64>>,
    pub adam_v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
    pub next_epoch: usize,
}

pub fn save_train_state(state: &TrainState, config: &NetworkConfig, path: &Path) -> Result<()> {
    let mut map = BTreeMap::new();
    for (name, t) in state.params.iter() {
        map.insert(format!("param.{name}"), t.detach());
    }
    for (name, m) in &state.adam_m {
        map.insert(format!("adam.m.{name}"), Tensor::new(&[m.len()], m.clone())?);
    }
    for (name, v) in &state.adam_v {
        map.insert(format!("adam.v.{name}"), Tensor::new(&[v.len()], v.clone())?);
    }
    map.insert(
        "meta.progress".to_string(),
        Tensor::new(&[2], vec![state.t as f64, state.next_epoch as f64])?,
    );
    map.insert("meta.config".to_string(), config_tensor(config)?);
    write_atomic(path, &ckpt::encode(&map, ckpt::VERSION_F64)?)
}

pub fn load_train_state(path: &Path) -> Result<(TrainState, NetworkConfig)> {
    let bytes = std::fs::read(path)?;
    let (version, map) = ckpt::decode(&bytes)?;
    if version != ckpt::VERSION_F64 {
        return Err(Error::Format(format!(
            "expected a version-2 training state, found version {version}"
        )));
    }
    let config = config_from_tensor(
        map.get("meta.config")
            .ok_or_else(|| Error::Format("training state lacks meta.config".into()))?,
    )?;
    let progress = map
        .get("meta.progress")
        .ok_or_else(|| Error::Format("training state lacks meta.progress".into()))?;
    let mut params = ParamSet::new();
    let mut adam_m = BTreeMap::new();
    let mut adam_v = BTreeMap::new();
    for (name, t) in &map {
        if let Some(p) = name.strip_prefix("param.") {
            params.insert(p, Tensor::new_grad(t.shape(), t.data().to_vec())?)?;
        } else if let Some(p) = name.strip_prefix("adam.m.") {
            adam_m.insert(p.to_string(), t.data().to_vec());
        } else if let Some(p) = name.strip_prefix("adam.v.") {
            adam_v.insert(p.to_string(), t.data().to_vec());
        }
    }
    Ok((
        TrainState {
            params,
            adam_m,
            adam_v,
            t: progress.data()[0] as u64,
            next_epoch: progress.data()[1] as usize,
        },
        config,
    ))
}

fn config_tensor(cfg: &NetworkConfig) -> Result<Tensor> {
    Tensor::new(
        &[10],
        vec![
            cfg.in_channels as f64,
            cfg.level_channels[0] as f64,
            cfg.level_channels[1] as f64,
            cfg.level_channels[2] as f64,
            cfg.level_rates[0] as f64,
            cfg.level_rates[1] as f64,
            cfg.level_rates[2] as f64,
            cfg.kernel as f64,
            cfg.mff_channels as f64,
            cfg.blocks_per_level as f64,
        ],
    )
}

fn config_from_tensor(t: &Tensor) -> Result<NetworkConfig> {
    let d = t.data();
    if d.len() != 10 {
        return Err(Error::Format("meta.config has wrong length".into()));
    }
    let cfg = NetworkConfig {
        in_channels: d[0] as usize,
        level_channels: [d[1] as usize, d[2] as usize, d[3] as usize],
        level_rates: [d[4] as usize, d[5] as usize, d[6] as usize],
        kernel: d[7] as usize,
        mff_channels: d[8] as usize,
        blocks_per_level: d[9] as usize,
        seed: 0,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Save model weights plus the shape metadata needed to rebuild the network
/// (a version-1, 32-bit checkpoint).
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut map: BTreeMap<String, Tensor> = model
        .params
        .iter()
        .map(|(n, t)| (format!("param.{n}"), t.detach()))
        .collect();
    map.insert("meta.config".to_string(), config_tensor(&model.config)?);
    write_atomic(path, &ckpt::encode(&map, ckpt::VERSION_F32)?)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    let (version, map) = ckpt::decode(&bytes)?;
    if version != ckpt::VERSION_F32 {
        return Err(Error::Format(format!(
            "expected a version-1 model checkpoint, found version {version}"
        )));
    }
    let config = config_from_tensor(
        map.get("meta.config")
            .ok_or_else(|| Error::Format("checkpoint lacks meta.config".into()))?,
    )?;
    let mut params = ParamSet::new();
    for (name, t) in &map {
        if let Some(p) = name.strip_prefix("param.") {
            params.insert(p, Tensor::new_grad(t.shape(), t.data().to_vec())?)?;
        }
    }
    Model::from_params(config, params)
}

fn image_batch_tensor(patches: &[Image]) -> Result<Tensor> {
    let (h, w) = (patches[0].h, patches[0].w);
    let hw = h * w;
    let mut data = Vec::with_capacity(patches.len() * 3 * hw);
    for p in patches {
        for ch in 0..3 {
            for i in 0..hw {
                data.push(p.data[i * 3 + ch]);
            }
        }
    }
    Tensor::new(&[patches.len(), 3, h, w], data)
}

/// Run the training loop. Checkpoints (model + training state) are written
/// every `ckpt_every` epochs and at the end; per-epoch log lines go to the
/// returned outcome and, when `log_path` is given, to disk on completion.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    manifest: &Manifest,
    manifest_dir: &Path,
    net_config: NetworkConfig,
    cfg: &TrainConfig,
    ckpt_path: &Path,
    state_path: Option<&Path>,
    resume_from: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    let pairs = load_pairs(manifest, manifest_dir, cfg.split)?;
    let p = cfg.patch_size;
    for (i, pair) in pairs.iter().enumerate() {
        if pair.clean.h < p || pair.clean.w < p {
            return Err(Error::shape(
                "train",
                format!("record {i} is {}x{}, smaller than patch {p}", pair.clean.h, pair.clean.w),
            ));
        }
    }
    if p % 4 != 0 {
        return Err(Error::InvalidArgument("patch size must be a multiple of 4".into()));
    }

    let (mut model, mut adam, start_epoch) = match resume_from {
        Some(path) => {
            let (state, config) = load_train_state(path)?;
            let mut adam = AdamState::new(cfg.base_lr);
            adam.t = state.t;
            adam.m = state.adam_m;
            adam.v = state.adam_v;
            (Model::from_params(config, state.params)?, adam, state.next_epoch)
        }
        None => (Model::new(net_config)?, AdamState::new(cfg.base_lr), 0),
    };
    let pyramid = FeaturePyramid::seeded(crate::rng::derive_seed(cfg.seed, &[0xF7]));
    let ms_cfg = MsSsimConfig::default();
    let cr_cfg = CrConfig::default();

    let mut log: Vec<String> = Vec::new();
    let mut first_epoch_loss = f64::NAN;
    let mut final_epoch_loss = f64::NAN;

    for epoch in start_epoch..cfg.epochs {
        // TEMP DIAG: constant-lr override for ceiling probes
        let lr = std::env::var("MVKSR_LR_OVERRIDE")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or_else(|| lr_schedule(epoch, cfg.base_lr));
        adam.lr = lr;
        let mut rng = stream(cfg.seed, &[0xE90C, epoch as u64]);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);

        let mut sums = LossBreakdown::default();
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut clean_patches = Vec::with_capacity(chunk.len());
            let mut degraded_patches = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let pair = &pairs[idx];
                let y0 = rng.random_range(0..=pair.clean.h - p);
                let x0 = rng.random_range(0..=pair.clean.w - p);
                let mut c = pair.clean.crop(y0, x0, p, p)?;
                let mut d = pair.degraded.crop(y0, x0, p, p)?;
                if cfg.hflip && rng.random::<bool>() {
                    c = c.hflip();
                    d = d.hflip();
                }
                clean_patches.push(c);
                degraded_patches.push(d);
            }
            let views: Vec<Vec<f64>> = degraded_patches
                .iter()
                .map(|d| view_channels(d, &cfg.view_settings))
                .collect::<Result<_>>()?;
            let views = batch_views(&views, p, p)?;
            let clean_refs: Vec<&Image> = clean_patches.iter().collect();
            let targets = SupervisionTargets::from_clean(
                &clean_refs,
                cfg.view_settings.gray,
                cfg.view_settings.eps,
                cfg.view_settings.kernel_mode,
            )?;
            let gt_rgb = image_batch_tensor(&clean_patches)?;
            let degraded_rgb = image_batch_tensor(&degraded_patches)?;

            let (features, _) = mce_forward(&views, &model)?;
            let out = mff_forward(&features, &views, &model)?;
            let (loss, bd) = total_loss(
                &out,
                &gt_rgb,
                &degraded_rgb,
                &targets,
                &pyramid,
                &cfg.weights,
                &cfg.cs_switches,
                &ms_cfg,
                &cr_cfg,
            )?;
            if let Some(tensor) = first_non_finite(&out, loss.value()) {
                return Err(Error::NonFinite { tensor });
            }
            loss.backward()?;
            adam_step(&mut model.params, &mut adam)?;

            sums.total += bd.total;
            sums.msssim += bd.msssim;
            sums.cr += bd.cr;
            sums.cs += bd.cs;
            steps += 1;
        }
        let n = steps as f64;
        let line = format!(
            "epoch={epoch} lr={lr} loss={:.6} msssim={:.6} cr={:.6} cs={:.6}",
            sums.total / n,
            sums.msssim / n,
            sums.cr / n,
            sums.cs / n
        );
        println!("{line}");
        log.push(line);
        if epoch == start_epoch {
            first_epoch_loss = sums.total / n;
        }
        final_epoch_loss = sums.total / n;

        let last = epoch + 1 == cfg.epochs;
        if last || (cfg.ckpt_every > 0 && (epoch + 1) % cfg.ckpt_every == 0) {
            save_model(&model, ckpt_path)?;
            if let Some(sp) = state_path {
                let state = TrainState {
                    params: model.params.clone(),
                    adam_m: adam.m.clone(),
                    adam_v: adam.v.clone(),
                    t: adam.t,
                    next_epoch: epoch + 1,
                };
                save_train_state(&state, &model.config, sp)?;
            }
        }
    }
    if let Some(lp) = log_path {
        write_atomic(lp, (log.join("\n") + "\n").as_bytes())?;
    }
    Ok(TrainOutcome {
        log,
        first_epoch_loss,
        final_epoch_loss,
        epochs_run: cfg.epochs.saturating_sub(start_epoch),
    })
}

/// Restore one image with a trained model: reflect-pad to a multiple of 4,
/// forward, crop back. Returns the restored image plus
/// (decomposition, inference) wall-clock times in seconds. The view settings
/// must match the ones the checkpoint was trained with.
pub fn restore_image(model: &Model, img: &Image, vs: &ViewSettings) -> Result<(Image, f64, f64)> {
    if img.c != 3 {
        return Err(Error::shape("restore", format!("expected RGB input, got {} channels", img.c)));
    }
    let (padded, (h, w)) = img.pad_to_multiple(4);
    let t0 = Instant::now();
    let views = batch_views(&[view_channels(&padded, vs)?], padded.h, padded.w)?;
    let t_decomp = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (features, _) = mce_forward(&views, model)?;
    let out = mff_forward(&features, &views, model)?;
    let t_infer = t1.elapsed().as_secs_f64();
    let restored = restored_to_image(&out.restored)?.crop(0, 0, h, w)?;
    Ok((restored, t_decomp, t_infer))
}

/// CLI-facing wrapper: read a PNG, restore, write a PNG. `fast` selects the
/// subsampled guided filter for the decomposition.
pub fn restore_file(model: &Model, input: &Path, output: &Path, fast: bool) -> Result<(f64, f64)> {
    let img = load_png(input)?;
    let vs = ViewSettings { subsample: if fast { 2 } else { 1 }, ..ViewSettings::default() };
    let (restored, td, ti) = restore_image(model, &img, &vs)?;
    save_png(&restored, output)?;
    Ok((td, ti))
}

/// Per-kind restored-vs-clean metrics alongside the degraded-vs-clean
/// baseline.
pub struct EvalReport {
    pub restored: BTreeMap<Kind, MetricReport>,
    pub baseline: BTreeMap<Kind, MetricReport>,
}

impl EvalReport {
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for (kind, rep) in &self.restored {
            let base = &self.baseline[kind];
            let (rp, rps) = rep.psnr_stats();
            let (rs, rss) = rep.ssim_stats();
            let (bp, bps) = base.psnr_stats();
            let (bs, bss) = base.ssim_stats();
            let k = kind.as_str();
            out.push_str(&format!("{k}.count={}\n", rep.count()));
            out.push_str(&format!("{k}.restored.psnr.mean={rp:.6}\n{k}.restored.psnr.std={rps:.6}\n"));
            out.push_str(&format!("{k}.restored.ssim.mean={rs:.6}\n{k}.restored.ssim.std={rss:.6}\n"));
            out.push_str(&format!("{k}.baseline.psnr.mean={bp:.6}\n{k}.baseline.psnr.std={bps:.6}\n"));
            out.push_str(&format!("{k}.baseline.ssim.mean={bs:.6}\n{k}.baseline.ssim.std={bss:.6}\n"));
        }
        let all_r: Vec<f64> = self
            .restored
            .values()
            .flat_map(|r| r.per_image.values().map(|(p, _)| *p))
            .collect();
        let all_b: Vec<f64> = self
            .baseline
            .values()
            .flat_map(|r| r.per_image.values().map(|(p, _)| *p))
            .collect();
        let (rm, _) = mean_std(&all_r);
        let (bm, _) = mean_std(&all_b);
        out.push_str(&format!("all.restored.psnr.mean={rm:.6}\n"));
        out.push_str(&format!("all.baseline.psnr.mean={bm:.6}\n"));
        out
    }
}

/// Restore every selected degraded image in the manifest and report per-kind
/// PSNR/SSIM for restorations and for the no-op baseline.
pub fn evaluate_dataset(
    model: &Model,
    manifest: &Manifest,
    manifest_dir: &Path,
    split: SplitUse,
    vs: &ViewSettings,
) -> Result<EvalReport> {
    let (train_idx, heldout_idx) = manifest.split(manifest.seed);
    let selected: Vec<usize> = match split {
        SplitUse::All => (0..manifest.records.len()).collect(),
        SplitUse::Train => train_idx,
        SplitUse::Heldout => heldout_idx,
    };
    if selected.is_empty() {
        return Err(Error::InvalidArgument("no records selected for evaluation".into()));
    }
    let mut restored_by_kind: BTreeMap<Kind, MetricReport> = BTreeMap::new();
    let mut baseline_by_kind: BTreeMap<Kind, MetricReport> = BTreeMap::new();
    for i in selected {
        let r = &manifest.records[i];
        let clean = load_png(&resolve(manifest_dir, &r.clean))?;
        let degraded = load_png(&resolve(manifest_dir, &r.degraded))?;
        let (restored, _, _) = restore_image(model, &degraded, vs)?;
        let name = r
            .degraded
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("image")
            .to_string();
        restored_by_kind.entry(r.spec.kind).or_default().add(
            name.clone(),
            psnr(&restored, &clean)?,
            ssim_metric(&restored, &clean)?,
        );
        baseline_by_kind.entry(r.spec.kind).or_default().add(
            name,
            psnr(&degraded, &clean)?,
            ssim_metric(&degraded, &clean)?,
        );
    }
    Ok(EvalReport { restored: restored_by_kind, baseline: baseline_by_kind })
}

/// Paths derived from one checkpoint output location.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ckpt");
    path.with_file_name(format!("{stem}{suffix}"))
}
