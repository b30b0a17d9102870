//! 2-D cross-correlation with zero padding and dilation (stride 1).
//!
//! One op covers both the standard (`dilation=1`) and atrous (`dilation=r`)
//! convolutions of the network. The kernels parallelize over independent
//! output planes so results are bitwise-reproducible regardless of thread
//! count.

use rayon::prelude::*;

use super::{OpRecord, Tensor};
use crate::error::{Error, Result};

struct ConvDims {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    dil: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

fn forward(x: &[f64], wgt: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let ConvDims { n, ci, h, w, co, k, dil, pad, ho, wo } = *d;
    let mut out = vec![0.0; n * co * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(plane, dst)| {
        let ni = plane / co;
        let oi = plane % co;
        dst.fill(bias[oi]);
        for ii in 0..ci {
            let xp = &x[(ni * ci + ii) * h * w..][..h * w];
            let wb = ((oi * ci) + ii) * k * k;
            for ky in 0..k {
                let oy_lo = pad.saturating_sub(ky * dil);
                let oy_hi = (h + pad).saturating_sub(ky * dil).min(ho);
                for oy in oy_lo..oy_hi {
                    let iy = oy + ky * dil - pad;
                    let x_row = &xp[iy * w..][..w];
                    let out_row = &mut dst[oy * wo..][..wo];
                    for kx in 0..k {
                        let wv = wgt[wb + ky * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let ox_lo = pad.saturating_sub(kx * dil);
                        let ox_hi = (w + pad).saturating_sub(kx * dil).min(wo);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let src_lo = ox_lo + kx * dil - pad;
                        let src = &x_row[src_lo..src_lo + (ox_hi - ox_lo)];
                        let dst_row = &mut out_row[ox_lo..ox_hi];
                        for (d, s) in dst_row.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });
    out
}

fn grad_input(g: &[f64], wgt: &[f64], d: &ConvDims) -> Vec<f64> {
    let ConvDims { n, ci, h, w, co, k, dil, pad, ho, wo } = *d;
    let mut dx = vec![0.0; n * ci * h * w];
    dx.par_chunks_mut(h * w).enumerate().for_each(|(plane, dst)| {
        let ni = plane / ci;
        let ii = plane % ci;
        for oi in 0..co {
            let gp = &g[(ni * co + oi) * ho * wo..][..ho * wo];
            let wb = ((oi * ci) + ii) * k * k;
            for ky in 0..k {
                // gy = y + pad - ky*dil must fall in [0, ho)
                let y_lo = (ky * dil).saturating_sub(pad);
                let y_hi = (ho + ky * dil).saturating_sub(pad).min(h);
                for y in y_lo..y_hi {
                    let gy = y + pad - ky * dil;
                    let g_row = &gp[gy * wo..][..wo];
                    let d_row = &mut dst[y * w..][..w];
                    for kx in 0..k {
                        let wv = wgt[wb + ky * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let x_lo = (kx * dil).saturating_sub(pad);
                        let x_hi = (wo + kx * dil).saturating_sub(pad).min(w);
                        if x_lo >= x_hi {
                            continue;
                        }
                        let src_lo = x_lo + pad - kx * dil;
                        let src = &g_row[src_lo..src_lo + (x_hi - x_lo)];
                        let dst_seg = &mut d_row[x_lo..x_hi];
                        for (d, s) in dst_seg.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    });
    dx
}

fn grad_weight(g: &[f64], x: &[f64], d: &ConvDims) -> Vec<f64> {
    let ConvDims { n, ci, h, w, co, k, dil, pad, ho, wo } = *d;
    let mut dw = vec![0.0; co * ci * k * k];
    dw.par_chunks_mut(ci * k * k).enumerate().for_each(|(oi, dst)| {
        for ni in 0..n {
            let gp = &g[(ni * co + oi) * ho * wo..][..ho * wo];
            for ii in 0..ci {
                let xp = &x[(ni * ci + ii) * h * w..][..h * w];
                for ky in 0..k {
                    let oy_lo = pad.saturating_sub(ky * dil);
                    let oy_hi = (h + pad).saturating_sub(ky * dil).min(ho);
                    for kx in 0..k {
                        let ox_lo = pad.saturating_sub(kx * dil);
                        let ox_hi = (w + pad).saturating_sub(kx * dil).min(wo);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky * dil - pad;
                            let src_lo = ox_lo + kx * dil - pad;
                            let g_seg = &gp[oy * wo + ox_lo..oy * wo + ox_hi];
                            let x_seg = &xp[iy * w + src_lo..iy * w + src_lo + (ox_hi - ox_lo)];
                            for (g, x) in g_seg.iter().zip(x_seg) {
                                acc += g * x;
                            }
                        }
                        dst[ii * k * k + ky * k + kx] += acc;
                    }
                }
            }
        }
    });
    dw
}

fn grad_bias(g: &[f64], d: &ConvDims) -> Vec<f64> {
    let ConvDims { n, co, ho, wo, .. } = *d;
    (0..co)
        .map(|oi| {
            let mut acc = 0.0;
            for ni in 0..n {
                acc += g[(ni * co + oi) * ho * wo..][..ho * wo].iter().sum::<f64>();
            }
            acc
        })
        .collect()
}

impl Tensor {
    /// Cross-correlation of an NCHW input with an OIKK weight plus bias,
    /// zero padding and the given dilation. Output spatial size is
    /// `H + 2*padding - dilation*(K-1)`; the network always chooses
    /// `padding = dilation*(K-1)/2` to preserve it.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        dilation: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (n, ci, h, w) = match *self.shape() {
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("input must be NCHW, got {:?}", self.shape()),
                ))
            }
        };
        let (co, wi, kh, kw) = match *weight.shape() {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("weight must be OIKK, got {:?}", weight.shape()),
                ))
            }
        };
        if kh != kw {
            return Err(Error::shape("conv2d", format!("kernel must be square, got {kh}x{kw}")));
        }
        if kh % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel size {kh} must be odd")));
        }
        if wi != ci {
            return Err(Error::shape(
                "conv2d",
                format!("input has {ci} channels but weight expects {wi}"),
            ));
        }
        if bias.shape() != [co] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} != [{co}]", bias.shape()),
            ));
        }
        if dilation == 0 {
            return Err(Error::InvalidArgument("conv2d: dilation must be >= 1".into()));
        }
        let span = dilation * (kh - 1);
        let (ho, wo) = (
            (h + 2 * padding).checked_sub(span),
            (w + 2 * padding).checked_sub(span),
        );
        let (ho, wo) = match (ho, wo) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => (ho, wo),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("{h}x{w} input too small for kernel {kh}, dilation {dilation}, padding {padding}"),
                ))
            }
        };
        let dims = ConvDims { n, ci, h, w, co, k: kh, dil: dilation, pad: padding, ho, wo };
        let out = forward(self.data(), weight.data(), bias.data(), &dims);

        let x = self.clone();
        let wt = weight.clone();
        let (x_tracked, w_tracked, b_tracked) = (self.tracked(), weight.tracked(), bias.tracked());
        Ok(Tensor::from_op(
            vec![n, co, ho, wo],
            out,
            OpRecord {
                name: "conv2d",
                inputs: vec![self.clone(), weight.clone(), bias.clone()],
                backward: Box::new(move |g, _| {
                    let dims = ConvDims { n, ci, h, w, co, k: kh, dil: dilation, pad: padding, ho, wo };
                    vec![
                        x_tracked.then(|| grad_input(g, wt.data(), &dims)),
                        w_tracked.then(|| grad_weight(g, x.data(), &dims)),
                        b_tracked.then(|| grad_bias(g, &dims)),
                    ]
                }),
            },
        ))
    }
}
