//! Full-reference evaluation metrics and batch reporting.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{load_png, Image};
use crate::losses::{self, MsSsimConfig};
use crate::tensor::Tensor;

/// PSNR cap applied when the MSE underflows (identical images).
pub const PSNR_CAP: f64 = 99.0;

/// `10*log10(1/MSE)` over all channels jointly, capped at 99 dB.
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    if x.h != y.h || x.w != y.w || x.c != y.c {
        return Err(Error::shape(
            "psnr",
            format!("{}x{}x{} vs {}x{}x{}", x.h, x.w, x.c, y.h, y.w, y.c),
        ));
    }
    let mse = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.data.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn image_to_nchw(img: &Image) -> Tensor {
    let hw = img.h * img.w;
    let mut data = vec![0.0; img.c * hw];
    for i in 0..hw {
        for ch in 0..img.c {
            data[ch * hw + i] = img.data[i * img.c + ch];
        }
    }
    Tensor::new(&[1, img.c, img.h, img.w], data).expect("shape")
}

/// Mean SSIM between two images; the same computation as the training loss
/// but without gradient tracking.
pub fn ssim_metric(x: &Image, y: &Image) -> Result<f64> {
    if x.h != y.h || x.w != y.w || x.c != y.c {
        return Err(Error::shape(
            "ssim_metric",
            format!("{}x{}x{} vs {}x{}x{}", x.h, x.w, x.c, y.h, y.w, y.c),
        ));
    }
    let s = losses::ssim(&image_to_nchw(x), &image_to_nchw(y), &MsSsimConfig::default())?;
    Ok(s.value())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Per-image PSNR/SSIM plus aggregates for one evaluated set.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    /// image name -> (psnr, ssim), ordered by name.
    pub per_image: BTreeMap<String, (f64, f64)>,
    pub skipped: Vec<String>,
}

impl MetricReport {
    pub fn count(&self) -> usize {
        self.per_image.len()
    }

    pub fn psnr_stats(&self) -> (f64, f64) {
        let v: Vec<f64> = self.per_image.values().map(|(p, _)| *p).collect();
        mean_std(&v)
    }

    pub fn ssim_stats(&self) -> (f64, f64) {
        let v: Vec<f64> = self.per_image.values().map(|(_, s)| *s).collect();
        mean_std(&v)
    }

    pub fn add(&mut self, name: impl Into<String>, psnr: f64, ssim: f64) {
        self.per_image.insert(name.into(), (psnr, ssim));
    }

    /// Machine-readable key=value lines: `metric.image=value` plus
    /// `metric.mean` / `metric.std` aggregates.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for (name, (p, _)) in &self.per_image {
            out.push_str(&format!("psnr.{name}={p:.6}\n"));
        }
        let (pm, ps) = self.psnr_stats();
        out.push_str(&format!("psnr.mean={pm:.6}\npsnr.std={ps:.6}\n"));
        for (name, (_, s)) in &self.per_image {
            out.push_str(&format!("ssim.{name}={s:.6}\n"));
        }
        let (sm, ss) = self.ssim_stats();
        out.push_str(&format!("ssim.mean={sm:.6}\nssim.std={ss:.6}\n"));
        out.push_str(&format!("count={}\n", self.count()));
        out
    }

    /// Human-readable table. FSIM/VSI columns are reserved but not computed.
    pub fn to_table(&self, title: &str) -> String {
        let mut out = format!("{title}\n{:-<58}\n", "");
        out.push_str(&format!(
            "{:<28} {:>9} {:>9} {:>4} {:>4}\n",
            "image", "PSNR", "SSIM", "FSIM", "VSI"
        ));
        for (name, (p, s)) in &self.per_image {
            out.push_str(&format!("{name:<28} {p:>9.3} {s:>9.4} {:>4} {:>4}\n", "-", "-"));
        }
        let (pm, ps) = self.psnr_stats();
        let (sm, ss) = self.ssim_stats();
        out.push_str(&format!(
            "{:<28} {pm:>6.3}±{ps:<5.3} {sm:>5.4}±{ss:<6.4}\n",
            "mean±std"
        ));
        out
    }
}

/// Evaluate matching file names between a restored and a ground-truth
/// directory. Unmatched files are listed and skipped; an empty intersection
/// is an error.
pub fn eval_batch(restored_dir: &Path, gt_dir: &Path) -> Result<MetricReport> {
    let list = |dir: &Path| -> Result<BTreeMap<String, std::path::PathBuf>> {
        let mut out = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("png") {
                if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                    out.insert(name.to_string(), path);
                }
            }
        }
        Ok(out)
    };
    let restored = list(restored_dir)?;
    let gt = list(gt_dir)?;
    let mut report = MetricReport::default();
    for name in restored.keys() {
        if !gt.contains_key(name) {
            report.skipped.push(format!("{name} (no ground truth)"));
        }
    }
    for name in gt.keys() {
        if !restored.contains_key(name) {
            report.skipped.push(format!("{name} (no restored image)"));
        }
    }
    for (name, rpath) in &restored {
        let Some(gpath) = gt.get(name) else { continue };
        let r = load_png(rpath)?;
        let g = load_png(gpath)?;
        report.add(name.clone(), psnr(&r, &g)?, ssim_metric(&r, &g)?);
    }
    if report.per_image.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no matching file names between {restored_dir:?} and {gt_dir:?}"
        )));
    }
    Ok(report)
}
