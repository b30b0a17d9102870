//! Layer normalization and the parametric ReLU.

use super::{OpRecord, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    /// Per-sample normalization over the (C,H,W) axes to zero mean and unit
    /// variance, followed by a per-channel affine `gain * xhat + bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let (n, c, h, w) = match *self.shape() {
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(Error::shape(
                    "layer_norm",
                    format!("expected NCHW, got {:?}", self.shape()),
                ))
            }
        };
        if gain.shape() != [c] || bias.shape() != [c] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gain {:?} / bias {:?} must both be [{c}]",
                    gain.shape(),
                    bias.shape()
                ),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("layer_norm: eps must be > 0".into()));
        }
        let m = c * h * w;
        let hw = h * w;
        let x = self.data();
        let g = gain.data();
        let b = bias.data();
        let mut out = vec![0.0; n * m];
        let mut means = vec![0.0; n];
        let mut inv_stds = vec![0.0; n];
        for ni in 0..n {
            let xs = &x[ni * m..][..m];
            let mean = xs.iter().sum::<f64>() / m as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            means[ni] = mean;
            inv_stds[ni] = inv;
            let dst = &mut out[ni * m..][..m];
            for ci in 0..c {
                let gc = g[ci];
                let bc = b[ci];
                for i in 0..hw {
                    let xv = xs[ci * hw + i];
                    dst[ci * hw + i] = gc * (xv - mean) * inv + bc;
                }
            }
        }

        let xk = self.clone();
        let gk = gain.clone();
        let (x_tracked, g_tracked, b_tracked) = (self.tracked(), gain.tracked(), bias.tracked());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            OpRecord {
                name: "layer_norm",
                inputs: vec![self.clone(), gain.clone(), bias.clone()],
                backward: Box::new(move |go, _| {
                    let x = xk.data();
                    let g = gk.data();
                    let mut dx = x_tracked.then(|| vec![0.0; n * m]);
                    let mut dg = g_tracked.then(|| vec![0.0; c]);
                    let mut db = b_tracked.then(|| vec![0.0; c]);
                    for ni in 0..n {
                        let xs = &x[ni * m..][..m];
                        let gs = &go[ni * m..][..m];
                        let mean = means[ni];
                        let inv = inv_stds[ni];
                        if let Some(dg) = dg.as_mut() {
                            for ci in 0..c {
                                let mut acc = 0.0;
                                for i in 0..hw {
                                    acc += gs[ci * hw + i] * (xs[ci * hw + i] - mean) * inv;
                                }
                                dg[ci] += acc;
                            }
                        }
                        if let Some(db) = db.as_mut() {
                            for ci in 0..c {
                                db[ci] += gs[ci * hw..][..hw].iter().sum::<f64>();
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            // h = dL/dxhat; dx = inv*(h - mean(h) - xhat*mean(h*xhat))
                            let mut h_mean = 0.0;
                            let mut hx_mean = 0.0;
                            for ci in 0..c {
                                let gc = g[ci];
                                for i in 0..hw {
                                    let hv = gs[ci * hw + i] * gc;
                                    let xh = (xs[ci * hw + i] - mean) * inv;
                                    h_mean += hv;
                                    hx_mean += hv * xh;
                                }
                            }
                            h_mean /= m as f64;
                            hx_mean /= m as f64;
                            let dst = &mut dx[ni * m..][..m];
                            for ci in 0..c {
                                let gc = g[ci];
                                for i in 0..hw {
                                    let hv = gs[ci * hw + i] * gc;
                                    let xh = (xs[ci * hw + i] - mean) * inv;
                                    dst[ci * hw + i] = inv * (hv - h_mean - xh * hx_mean);
                                }
                            }
                        }
                    }
                    vec![dx, dg, db]
                }),
            },
        ))
    }

    /// Parametric ReLU with one learnable slope per channel.
    pub fn prelu(&self, slope: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = match *self.shape() {
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(Error::shape(
                    "prelu",
                    format!("expected NCHW, got {:?}", self.shape()),
                ))
            }
        };
        if slope.shape() != [c] {
            return Err(Error::shape(
                "prelu",
                format!("slope shape {:?} != [{c}]", slope.shape()),
            ));
        }
        let hw = h * w;
        let x = self.data();
        let s = slope.data();
        let mut out = vec![0.0; x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let sc = s[ci];
                let base = (ni * c + ci) * hw;
                for i in 0..hw {
                    let v = x[base + i];
                    out[base + i] = if v >= 0.0 { v } else { sc * v };
                }
            }
        }
        let xk = self.clone();
        let sk = slope.clone();
        let (x_tracked, s_tracked) = (self.tracked(), slope.tracked());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            OpRecord {
                name: "prelu",
                inputs: vec![self.clone(), slope.clone()],
                backward: Box::new(move |g, _| {
                    let x = xk.data();
                    let s = sk.data();
                    let dx = x_tracked.then(|| {
                        let mut d = vec![0.0; x.len()];
                        for ni in 0..n {
                            for ci in 0..c {
                                let sc = s[ci];
                                let base = (ni * c + ci) * hw;
                                for i in 0..hw {
                                    d[base + i] =
                                        g[base + i] * if x[base + i] >= 0.0 { 1.0 } else { sc };
                                }
                            }
                        }
                        d
                    });
                    let ds = s_tracked.then(|| {
                        let mut d = vec![0.0; c];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * hw;
                                let mut acc = 0.0;
                                for i in 0..hw {
                                    let v = x[base + i];
                                    if v < 0.0 {
                                        acc += g[base + i] * v;
                                    }
                                }
                                d[ci] += acc;
                            }
                        }
                        d
                    });
                    vec![dx, ds]
                }),
            },
        ))
    }
}
