//! Grayscale conversion and multi-scale guided-filter frequency
//! decomposition.
//!
//! The guided filter assumes a local linear model between the guide and the
//! output; all window means are O(1) per pixel via summed-area tables with
//! shrunken (truncated) windows at the borders. The pipeline always filters
//! self-guided (the degraded grayscale is its own guide).

use crate::error::{Error, Result};
use crate::image::Image;

/// Grayscale conversion coefficients. `Paper` keeps the printed red weight
/// 0.229 (the three coefficients sum to 0.930); `Standard` is the usual
/// 0.299/0.587/0.114 luminance triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrayCoeffs {
    Paper,
    Standard,
}

impl GrayCoeffs {
    pub fn weights(self) -> [f64; 3] {
        match self {
            GrayCoeffs::Paper => [0.229, 0.587, 0.114],
            GrayCoeffs::Standard => [0.299, 0.587, 0.114],
        }
    }
}

/// High-frequency convention: `Paper` sets high = 1 - low, `Additive` sets
/// high = gray - low (so gray == high + low holds exactly).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompMode {
    Paper,
    Additive,
}

/// Whether the scale values {5, 13, 25} are window radii or diameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    Radius,
    Diameter,
}

pub const SCALE_KS: [usize; 3] = [5, 13, 25];
pub const DEFAULT_EPS: f64 = 0.1;
/// Middle scale, used for supervision targets.
pub const TARGET_K: usize = 13;

#[derive(Debug, Clone, Copy)]
pub struct GuidedFilterParams {
    /// Window radius in pixels; the window is (2k+1) squared.
    pub radius: usize,
    pub eps: f64,
    /// Subsampling factor; > 1 selects the fast variant.
    pub subsample: usize,
}

impl GuidedFilterParams {
    pub fn new(radius: usize, eps: f64) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidArgument("guided filter radius must be >= 1".into()));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("guided filter eps must be > 0".into()));
        }
        Ok(GuidedFilterParams { radius, eps, subsample: 1 })
    }

    pub fn with_subsample(mut self, s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidArgument("subsample must be >= 1".into()));
        }
        self.subsample = s;
        Ok(self)
    }

    pub fn resolve_radius(k: usize, mode: KernelMode) -> usize {
        match mode {
            KernelMode::Radius => k,
            KernelMode::Diameter => ((k.max(3)) - 1) / 2,
        }
    }
}

/// Per-image bundle of three low- and three high-frequency layers.
#[derive(Debug, Clone)]
pub struct FreqStack {
    pub lows: [Image; 3],
    pub highs: [Image; 3],
    pub mode: DecompMode,
}

impl FreqStack {
    /// Rescale an additive high layer into [0,1] for 8-bit storage.
    pub fn high_for_storage(high: &Image) -> Image {
        let data = high.data.iter().map(|v| v * 0.5 + 0.5).collect();
        Image { h: high.h, w: high.w, c: high.c, data }
    }

    /// Inverse of [`FreqStack::high_for_storage`].
    pub fn high_from_storage(stored: &Image) -> Image {
        let data = stored.data.iter().map(|v| (v - 0.5) * 2.0).collect();
        Image { h: stored.h, w: stored.w, c: stored.c, data }
    }
}

/// `gray = cr*R + cg*G + cb*B`.
pub fn to_grayscale(rgb: &Image, coeffs: GrayCoeffs) -> Result<Image> {
    if rgb.c != 3 {
        return Err(Error::shape(
            "to_grayscale",
            format!("expected 3 channels, got {}", rgb.c),
        ));
    }
    let [cr, cg, cb] = coeffs.weights();
    let mut out = Image::new(rgb.h, rgb.w, 1);
    for i in 0..rgb.h * rgb.w {
        out.data[i] = cr * rgb.data[3 * i] + cg * rgb.data[3 * i + 1] + cb * rgb.data[3 * i + 2];
    }
    Ok(out)
}

/// Box mean over (2r+1)^2 windows, truncated at the borders, computed with a
/// summed-area table.
pub fn box_mean(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut sat = vec![0.0f64; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            sat[(y + 1) * (w + 1) + (x + 1)] = src[y * w + x]
                + sat[y * (w + 1) + (x + 1)]
                + sat[(y + 1) * (w + 1) + x]
                - sat[y * (w + 1) + x];
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let sum = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                + sat[y0 * (w + 1) + x0];
            out[y * w + x] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

fn check_single_channel(op: &'static str, p: &Image, guide: &Image) -> Result<()> {
    if p.c != 1 || guide.c != 1 {
        return Err(Error::shape(op, "inputs must be single-channel"));
    }
    if p.h != guide.h || p.w != guide.w {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", p.h, p.w, guide.h, guide.w),
        ));
    }
    Ok(())
}

/// Exact guided filter: per window compute `a = cov(guide,p)/(var(guide)+eps)`
/// and `b = mean(p) - a*mean(guide)`, then average the coefficients of every
/// window containing each pixel.
pub fn guided_filter(p: &Image, guide: &Image, params: &GuidedFilterParams) -> Result<Image> {
    check_single_channel("guided_filter", p, guide)?;
    let (h, w, r) = (p.h, p.w, params.radius);
    let gp: Vec<f64> = guide.data.iter().zip(&p.data).map(|(g, p)| g * p).collect();
    let gg: Vec<f64> = guide.data.iter().map(|g| g * g).collect();
    let mean_g = box_mean(&guide.data, h, w, r);
    let mean_p = box_mean(&p.data, h, w, r);
    let corr_gp = box_mean(&gp, h, w, r);
    let corr_gg = box_mean(&gg, h, w, r);
    let mut a = vec![0.0; h * w];
    let mut b = vec![0.0; h * w];
    for i in 0..h * w {
        let cov = corr_gp[i] - mean_g[i] * mean_p[i];
        let var = corr_gg[i] - mean_g[i] * mean_g[i];
        a[i] = cov / (var + params.eps);
        b[i] = mean_p[i] - a[i] * mean_g[i];
    }
    let mean_a = box_mean(&a, h, w, r);
    let mean_b = box_mean(&b, h, w, r);
    let mut out = Image::new(h, w, 1);
    for i in 0..h * w {
        out.data[i] = mean_a[i] * guide.data[i] + mean_b[i];
    }
    Ok(out)
}

/// Brute-force reference: identical math with explicit O((2r+1)^2) loops per
/// pixel. Test oracle only.
pub fn guided_filter_reference(
    p: &Image,
    guide: &Image,
    params: &GuidedFilterParams,
) -> Result<Image> {
    check_single_channel("guided_filter_reference", p, guide)?;
    let (h, w, r) = (p.h, p.w, params.radius);
    let win = |cy: usize, cx: usize| {
        let y0 = cy.saturating_sub(r);
        let y1 = (cy + r + 1).min(h);
        let x0 = cx.saturating_sub(r);
        let x1 = (cx + r + 1).min(w);
        (y0, y1, x0, x1)
    };
    let mut a = vec![0.0; h * w];
    let mut b = vec![0.0; h * w];
    for cy in 0..h {
        for cx in 0..w {
            let (y0, y1, x0, x1) = win(cy, cx);
            let cnt = ((y1 - y0) * (x1 - x0)) as f64;
            let (mut sg, mut sp, mut sgp, mut sgg) = (0.0, 0.0, 0.0, 0.0);
            for y in y0..y1 {
                for x in x0..x1 {
                    let g = guide.data[y * w + x];
                    let pv = p.data[y * w + x];
                    sg += g;
                    sp += pv;
                    sgp += g * pv;
                    sgg += g * g;
                }
            }
            let mg = sg / cnt;
            let mp = sp / cnt;
            let cov = sgp / cnt - mg * mp;
            let var = sgg / cnt - mg * mg;
            let av = cov / (var + params.eps);
            a[cy * w + cx] = av;
            b[cy * w + cx] = mp - av * mg;
        }
    }
    let mut out = Image::new(h, w, 1);
    for cy in 0..h {
        for cx in 0..w {
            let (y0, y1, x0, x1) = win(cy, cx);
            let cnt = ((y1 - y0) * (x1 - x0)) as f64;
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in y0..y1 {
                for x in x0..x1 {
                    sa += a[y * w + x];
                    sb += b[y * w + x];
                }
            }
            out.data[cy * w + cx] = (sa / cnt) * guide.data[cy * w + cx] + sb / cnt;
        }
    }
    Ok(out)
}

fn downsample_area(src: &[f64], h: usize, w: usize, s: usize) -> (Vec<f64>, usize, usize) {
    let hs = h.div_ceil(s);
    let ws = w.div_ceil(s);
    let mut out = vec![0.0; hs * ws];
    for by in 0..hs {
        let y0 = by * s;
        let y1 = (y0 + s).min(h);
        for bx in 0..ws {
            let x0 = bx * s;
            let x1 = (x0 + s).min(w);
            let mut acc = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    acc += src[y * w + x];
                }
            }
            out[by * ws + bx] = acc / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    (out, hs, ws)
}

fn bilinear_axis(n_small: usize, n_full: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_small as f64 / n_full as f64;
    (0..n_full)
        .map(|i| {
            let f = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_small - 1) as f64);
            let i0 = f.floor() as usize;
            let i1 = (i0 + 1).min(n_small - 1);
            (i0, i1, f - i0 as f64)
        })
        .collect()
}

/// Bilinearly upsample the coefficient maps and apply `a*guide + b` in one
/// pass (rows in parallel).
fn upsample_apply(
    a: &[f64],
    b: &[f64],
    hs: usize,
    ws: usize,
    guide: &Image,
) -> Image {
    use rayon::prelude::*;
    let (h, w) = (guide.h, guide.w);
    let ys = bilinear_axis(hs, h);
    let xs = bilinear_axis(ws, w);
    let mut out = Image::new(h, w, 1);
    out.data
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            let (y0, y1, ty) = ys[y];
            let a0 = &a[y0 * ws..][..ws];
            let a1 = &a[y1 * ws..][..ws];
            let b0 = &b[y0 * ws..][..ws];
            let b1 = &b[y1 * ws..][..ws];
            let g_row = &guide.data[y * w..][..w];
            for x in 0..w {
                let (x0, x1, tx) = xs[x];
                let av = (a0[x0] * (1.0 - tx) + a0[x1] * tx) * (1.0 - ty)
                    + (a1[x0] * (1.0 - tx) + a1[x1] * tx) * ty;
                let bv = (b0[x0] * (1.0 - tx) + b0[x1] * tx) * (1.0 - ty)
                    + (b1[x0] * (1.0 - tx) + b1[x1] * tx) * ty;
                row[x] = av * g_row[x] + bv;
            }
        });
    out
}

/// Fast guided filter: linear coefficients are estimated on an s-times
/// subsampled image with radius ceil(k/s), then bilinearly upsampled and
/// applied at full resolution. `subsample == 1` falls through to the exact
/// filter.
pub fn fast_guided_filter(p: &Image, guide: &Image, params: &GuidedFilterParams) -> Result<Image> {
    check_single_channel("fast_guided_filter", p, guide)?;
    let s = params.subsample;
    if s <= 1 {
        return guided_filter(p, guide, params);
    }
    let (h, w) = (p.h, p.w);
    let (ps, hs, ws) = downsample_area(&p.data, h, w, s);
    let (gs, _, _) = downsample_area(&guide.data, h, w, s);
    let r = params.radius.div_ceil(s);
    let gp: Vec<f64> = gs.iter().zip(&ps).map(|(g, p)| g * p).collect();
    let gg: Vec<f64> = gs.iter().map(|g| g * g).collect();
    let mean_g = box_mean(&gs, hs, ws, r);
    let mean_p = box_mean(&ps, hs, ws, r);
    let corr_gp = box_mean(&gp, hs, ws, r);
    let corr_gg = box_mean(&gg, hs, ws, r);
    let mut a = vec![0.0; hs * ws];
    let mut b = vec![0.0; hs * ws];
    for i in 0..hs * ws {
        let cov = corr_gp[i] - mean_g[i] * mean_p[i];
        let var = corr_gg[i] - mean_g[i] * mean_g[i];
        a[i] = cov / (var + params.eps);
        b[i] = mean_p[i] - a[i] * mean_g[i];
    }
    let mean_a = box_mean(&a, hs, ws, r);
    let mean_b = box_mean(&b, hs, ws, r);
    Ok(upsample_apply(&mean_a, &mean_b, hs, ws, guide))
}

/// Self-guided decomposition of a grayscale image into three low- and three
/// high-frequency layers at the pipeline scales.
pub fn decompose_multiscale(
    gray: &Image,
    eps: f64,
    mode: DecompMode,
    kernel_mode: KernelMode,
    subsample: usize,
) -> Result<FreqStack> {
    if gray.c != 1 {
        return Err(Error::shape("decompose_multiscale", "expected grayscale input"));
    }
    let mut lows = Vec::with_capacity(3);
    let mut highs = Vec::with_capacity(3);
    for &k in &SCALE_KS {
        let radius = GuidedFilterParams::resolve_radius(k, kernel_mode);
        let params = GuidedFilterParams::new(radius, eps)?.with_subsample(subsample)?;
        let low = fast_guided_filter(gray, gray, &params)?;
        let high = match mode {
            DecompMode::Paper => Image {
                h: low.h,
                w: low.w,
                c: 1,
                data: low.data.iter().map(|v| 1.0 - v).collect(),
            },
            DecompMode::Additive => Image {
                h: low.h,
                w: low.w,
                c: 1,
                data: gray.data.iter().zip(&low.data).map(|(g, l)| g - l).collect(),
            },
        };
        lows.push(low);
        highs.push(high);
    }
    Ok(FreqStack {
        lows: lows.try_into().map_err(|_| Error::InvalidArgument("scale count".into())).unwrap(),
        highs: highs.try_into().map_err(|_| Error::InvalidArgument("scale count".into())).unwrap(),
        mode,
    })
}
