// Post-mortem on a probe checkpoint: how much PSNR does per-image mean-level
// correction recover? arg: probe dir
use mvksr_core::dataset::{resolve, Manifest};
use mvksr_core::image::{load_png, Image};
use mvksr_core::metrics::{psnr, ssim_metric};
use mvksr_core::net::ViewSettings;
use mvksr_core::train::{load_model, restore_image};

fn main() {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).expect("probe dir"));
    let manifest = Manifest::load(&dir.join("manifest.txt")).unwrap();
    let model = load_model(&dir.join("overfit.ckpt")).unwrap();
    let (mut p_raw, mut p_level, mut p_center, mut s_raw) = (0.0, 0.0, 0.0, 0.0);
    let n = manifest.records.len() as f64;
    for r in &manifest.records {
        let clean = load_png(&resolve(&dir, &r.clean)).unwrap();
        let degraded = load_png(&resolve(&dir, &r.degraded)).unwrap();
        let (restored, _, _) = restore_image(&model, &degraded, &ViewSettings::default()).unwrap();
        p_raw += psnr(&restored, &clean).unwrap();
        s_raw += ssim_metric(&restored, &clean).unwrap();
        // per-channel mean-level correction
        let mut corrected = restored.clone();
        for ch in 0..3 {
            let mr: f64 = (0..restored.h * restored.w).map(|i| restored.data[i * 3 + ch]).sum::<f64>() / (restored.h * restored.w) as f64;
            let mc: f64 = (0..clean.h * clean.w).map(|i| clean.data[i * 3 + ch]).sum::<f64>() / (clean.h * clean.w) as f64;
            for i in 0..restored.h * restored.w {
                corrected.data[i * 3 + ch] = (restored.data[i * 3 + ch] + mc - mr).clamp(0.0, 1.0);
            }
        }
        p_level += psnr(&corrected, &clean).unwrap();
        let rc = restored.crop(12, 12, restored.h - 24, restored.w - 24).unwrap();
        let cc = clean.crop(12, 12, clean.h - 24, clean.w - 24).unwrap();
        p_center += psnr(&rc, &cc).unwrap();
    }
    println!("raw {:.2} dB | level-corrected {:.2} dB | center {:.2} dB | ssim {:.4}",
        p_raw / n, p_level / n, p_center / n, s_raw / n);
    let _ = Image::new(1, 1, 1);
}
