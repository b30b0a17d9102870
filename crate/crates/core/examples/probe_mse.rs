// Machinery sanity probe: can the network overfit 8 pairs under a direct
// MSE objective? args: steps lr
use mvksr_core::dataset::{build_scene_corpus, resolve, SynthConfig};
use mvksr_core::image::load_png;
use mvksr_core::metrics::psnr;
use mvksr_core::net::{
    batch_views, mce_forward, mff_forward, view_channels, Model, NetworkConfig, ViewSettings,
};
use mvksr_core::tensor::{adam_step, AdamState, Tensor};
use mvksr_core::train::restore_image;

fn main() {
    let arg = |i: usize, d: f64| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let steps = arg(1, 480.0) as usize;
    let lr = arg(2, 0.001);
    let batch = arg(3, 1.0) as usize;
    let dir = std::env::temp_dir().join("mvksr_probe_mse");
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = SynthConfig { seed: 9, ..SynthConfig::default() };
    let manifest = build_scene_corpus(&dir, 8, 64, 4000, &cfg).unwrap();
    let vs = ViewSettings::default();
    let pairs: Vec<(Vec<f64>, Tensor)> = manifest
        .records
        .iter()
        .map(|r| {
            let clean = load_png(&resolve(&dir, &r.clean)).unwrap();
            let degraded = load_png(&resolve(&dir, &r.degraded)).unwrap();
            let views = view_channels(&degraded, &vs).unwrap();
            let hw = 64 * 64;
            let mut gt = vec![0.0; 3 * hw];
            for i in 0..hw {
                for c in 0..3 {
                    gt[c * hw + i] = clean.data[i * 3 + c];
                }
            }
            (views, Tensor::new(&[1, 3, 64, 64], gt).unwrap())
        })
        .collect();

    let mut model = Model::new(NetworkConfig::default()).unwrap();
    let mut adam = AdamState::new(lr);
    let t0 = std::time::Instant::now();
    for s in 0..steps {
        let idx: Vec<usize> = (0..batch).map(|j| (s * batch + j) % pairs.len()).collect();
        let vbufs: Vec<Vec<f64>> = idx.iter().map(|&i| pairs[i].0.clone()).collect();
        let v = batch_views(&vbufs, 64, 64).unwrap();
        let mut gt_data = Vec::new();
        for &i in &idx {
            gt_data.extend_from_slice(pairs[i].1.data());
        }
        let gt = Tensor::new(&[batch, 3, 64, 64], gt_data).unwrap();
        let (f, _) = mce_forward(&v, &model).unwrap();
        let out = mff_forward(&f, &v, &model).unwrap();
        let diff = out.restored.sub(&gt).unwrap();
        let loss = diff.mul(&diff).unwrap().mean().unwrap();
        loss.backward().unwrap();
        adam_step(&mut model.params, &mut adam).unwrap();
        if s % 20 == 0 {
            println!(
                "step {s}: mse {:.6} ({:.1} dB)",
                loss.value(),
                -10.0 * loss.value().log10()
            );
        }
    }
    println!("trained {steps} steps in {:.0}s", t0.elapsed().as_secs_f64());
    let mut acc = 0.0;
    for r in &manifest.records {
        let clean = load_png(&resolve(&dir, &r.clean)).unwrap();
        let degraded = load_png(&resolve(&dir, &r.degraded)).unwrap();
        let (restored, _, _) = restore_image(&model, &degraded, &vs).unwrap();
        acc += psnr(&restored, &clean).unwrap();
    }
    println!("mean training-pair PSNR: {:.2} dB", acc / 8.0);
}
