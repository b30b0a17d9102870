// Calibration probe for the overfit acceptance run. Not part of the tests.
// args: epochs batch blocks lambda1 lambda2 lambda_cs
use mvksr_core::dataset::{build_scene_corpus, sample_spec, Kind, Manifest, Record, SynthConfig};
use mvksr_core::image::save_png;
use std::path::{Path, PathBuf};

fn build_scene_corpus_single(dir: &Path, n: usize, hw: usize, seed: u64, cfg: &SynthConfig) -> Manifest {
    std::fs::create_dir_all(dir).unwrap();
    let clean = mvksr_core::dataset::synth_clean_scene(hw, hw, seed);
    save_png(&clean, &dir.join("scene.png")).unwrap();
    let mut records = Vec::new();
    for i in 0..n {
        let kind = Kind::ALL[i % 3];
        let spec = sample_spec(cfg, i as u64, kind);
        let degraded = spec.apply(&clean).unwrap();
        let name = format!("scene_{i}_{}.png", kind.as_str());
        save_png(&degraded, &dir.join(&name)).unwrap();
        records.push(Record { index: i, clean: PathBuf::from("scene.png"), degraded: PathBuf::from(name), spec });
    }
    let m = Manifest { seed: cfg.seed, records };
    m.save(&dir.join("manifest.txt")).unwrap();
    m
}
use mvksr_core::losses::LossWeights;
use mvksr_core::net::NetworkConfig;
use mvksr_core::train::{evaluate_dataset, load_model, train_loop, SplitUse, TrainConfig};

fn main() {
    let arg = |i: usize, d: f64| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let epochs = arg(1, 60.0) as usize;
    let batch = arg(2, 1.0) as usize;
    let blocks = arg(3, 3.0) as usize;
    let weights = LossWeights { lambda1: arg(4, 0.8), lambda2: arg(5, 0.2), lambda_cs: arg(6, 1.0) };
    let dir = std::env::temp_dir().join(format!("mvksr_probe_{epochs}_{batch}_{blocks}_{}_{}_{}", weights.lambda1, weights.lambda2, weights.lambda_cs));
    let _ = std::fs::remove_dir_all(&dir);
    let env_f = |k: &str| std::env::var(k).ok().and_then(|s| s.parse::<f64>().ok());
    let cfg = SynthConfig {
        seed: 9,
        fixed_beta: env_f("PROBE_BETA"),
        fixed_atm: env_f("PROBE_ATM"),
        rain_density: (env_f("PROBE_RAIN_D0").unwrap_or(1.0), env_f("PROBE_RAIN_D1").unwrap_or(4.0)),
        rain_intensity: (env_f("PROBE_RAIN_I0").unwrap_or(0.3), env_f("PROBE_RAIN_I1").unwrap_or(0.7)),
        ..SynthConfig::default()
    };
    let scene_spread: u64 = env_f("PROBE_SCENE_SPREAD").map(|v| v as u64).unwrap_or(1);
    let manifest = if scene_spread == 0 {
        // all eight pairs share one clean scene (pure-memorization corpus)
        build_scene_corpus_single(&dir, 8, 64, 4000, &cfg)
    } else {
        build_scene_corpus(&dir, 8, 64, 4000, &cfg).unwrap()
    };

    let net = NetworkConfig { blocks_per_level: blocks, ..NetworkConfig::default() };
    let tc = TrainConfig { patch_size: 64, batch_size: batch, epochs, seed: 11, weights, ..TrainConfig::default() };
    let ckpt = dir.join("overfit.ckpt");
    let t0 = std::time::Instant::now();
    let out = train_loop(&manifest, &dir, net, &tc, &ckpt, None, None, None).unwrap();
    println!("== trained in {:.1}s; first loss {:.4} final {:.4} (ratio {:.3})",
        t0.elapsed().as_secs_f64(), out.first_epoch_loss, out.final_epoch_loss,
        out.final_epoch_loss / out.first_epoch_loss);
    let model = load_model(&ckpt).unwrap();
    let rep = evaluate_dataset(&model, &manifest, &dir, SplitUse::All, &mvksr_core::net::ViewSettings::default()).unwrap();
    for (kind, r) in &rep.restored {
        let (pm, _) = r.psnr_stats();
        let (bm, _) = rep.baseline[kind].psnr_stats();
        println!("== {}: restored {:.2} dB (baseline {:.2})", kind.as_str(), pm, bm);
    }
    let all: Vec<f64> = rep.restored.values().flat_map(|r| r.per_image.values().map(|(p, _)| *p)).collect();
    println!("== overall restored mean: {:.2} dB", all.iter().sum::<f64>() / all.len() as f64);

    // border diagnosis: PSNR of the center crop vs the full frame
    use mvksr_core::dataset::resolve;
    use mvksr_core::image::load_png;
    use mvksr_core::metrics::psnr;
    use mvksr_core::net::ViewSettings;
    use mvksr_core::train::restore_image;
    let mut full = Vec::new();
    let mut center = Vec::new();
    for r in &manifest.records {
        let clean = load_png(&resolve(&dir, &r.clean)).unwrap();
        let degraded = load_png(&resolve(&dir, &r.degraded)).unwrap();
        let (restored, _, _) = restore_image(&model, &degraded, &ViewSettings::default()).unwrap();
        full.push(psnr(&restored, &clean).unwrap());
        let rc = restored.crop(12, 12, 40, 40).unwrap();
        let cc = clean.crop(12, 12, 40, 40).unwrap();
        center.push(psnr(&rc, &cc).unwrap());
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    println!("== full-frame {:.2} dB vs center-crop {:.2} dB", mean(&full), mean(&center));
}
