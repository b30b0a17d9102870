//! Elementwise ops, reductions and shape manipulation.

use super::{debug_check_finite, same_shape, OpRecord, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            OpRecord {
                name: "add",
                inputs: vec![self.clone(), other.clone()],
                backward: Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
            },
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            OpRecord {
                name: "sub",
                inputs: vec![self.clone(), other.clone()],
                backward: Box::new(|g, _| {
                    vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
                }),
            },
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a * b)
            .collect();
        let a = self.clone();
        let b = other.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            OpRecord {
                name: "mul",
                inputs: vec![self.clone(), other.clone()],
                backward: Box::new(move |g, _| {
                    let da = g.iter().zip(b.data()).map(|(g, b)| g * b).collect();
                    let db = g.iter().zip(a.data()).map(|(g, a)| g * a).collect();
                    vec![Some(da), Some(db)]
                }),
            },
        ))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("div", self, other)?;
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a / b)
            .collect();
        let a = self.clone();
        let b = other.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            OpRecord {
                name: "div",
                inputs: vec![self.clone(), other.clone()],
                backward: Box::new(move |g, _| {
                    let da = g.iter().zip(b.data()).map(|(g, b)| g / b).collect();
                    let db = g
                        .iter()
                        .zip(a.data().iter().zip(b.data()))
                        .map(|(g, (a, b))| -g * a / (b * b))
                        .collect();
                    vec![Some(da), Some(db)]
                }),
            },
        ))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * c).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            OpRecord {
                name: "scale",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| vec![Some(g.iter().map(|v| v * c).collect())]),
            },
        ))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v + c).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            OpRecord {
                name: "add_scalar",
                inputs: vec![self.clone()],
                backward: Box::new(|g, _| vec![Some(g.to_vec())]),
            },
        ))
    }

    pub fn abs(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.abs()).collect();
        let x = self.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            OpRecord {
                name: "abs",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| {
                    let d = g
                        .iter()
                        .zip(x.data())
                        .map(|(g, x)| g * x.signum() * if *x == 0.0 { 0.0 } else { 1.0 })
                        .collect();
                    vec![Some(d)]
                }),
            },
        ))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            OpRecord {
                name: "sigmoid",
                inputs: vec![self.clone()],
                backward: Box::new(|g, out| {
                    let d = g
                        .iter()
                        .zip(out.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    vec![Some(d)]
                }),
            },
        ))
    }

    /// `x^p` for a constant exponent; inputs must stay positive when `p` is
    /// fractional (callers clamp first).
    pub fn powf_const(&self, p: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.powf(p)).collect();
        let x = self.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            OpRecord {
                name: "powf_const",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| {
                    let d = g
                        .iter()
                        .zip(x.data())
                        .map(|(g, x)| g * p * x.powf(p - 1.0))
                        .collect();
                    vec![Some(d)]
                }),
            },
        ))
    }

    /// max(x, c); gradient passes where x > c.
    pub fn clamp_min(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.max(c)).collect();
        let x = self.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            OpRecord {
                name: "clamp_min",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| {
                    let d = g
                        .iter()
                        .zip(x.data())
                        .map(|(g, x)| if *x > c { *g } else { 0.0 })
                        .collect();
                    vec![Some(d)]
                }),
            },
        ))
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        debug_check_finite("sum", std::slice::from_ref(&s));
        let n = self.len();
        let shape = self.shape().to_vec();
        Ok(Tensor::from_op(
            vec![1],
            vec![s],
            OpRecord {
                name: "sum",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| {
                    let _ = &shape;
                    vec![Some(vec![g[0]; n])]
                }),
            },
        ))
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidArgument("mean of empty tensor".into()));
        }
        let s: f64 = self.data().iter().sum::<f64>() / n as f64;
        Ok(Tensor::from_op(
            vec![1],
            vec![s],
            OpRecord {
                name: "mean",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| vec![Some(vec![g[0] / n as f64; n])]),
            },
        ))
    }

    /// Mean over every axis but the first; output shape (N).
    pub fn mean_per_sample(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.is_empty() || self.is_empty() {
            return Err(Error::shape("mean_per_sample", format!("bad shape {shape:?}")));
        }
        let n = shape[0];
        let per = self.len() / n;
        let data: Vec<f64> = (0..n)
            .map(|i| self.data()[i * per..][..per].iter().sum::<f64>() / per as f64)
            .collect();
        Ok(Tensor::from_op(
            vec![n],
            data,
            OpRecord {
                name: "mean_per_sample",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| {
                    let mut d = vec![0.0; n * per];
                    for i in 0..n {
                        d[i * per..][..per].fill(g[i] / per as f64);
                    }
                    vec![Some(d)]
                }),
            },
        ))
    }

    fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(op, format!("expected NCHW, got {:?}", self.shape()))),
        }
    }

    /// 2x2 average pooling; gradient spreads 1/4 to each source pixel.
    pub fn downsample_avg2(&self) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4("downsample_avg2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "downsample_avg2",
                format!("spatial dims must be even, got {h}x{w}"),
            ));
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.data();
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &x[p * h * w..][..h * w];
            let dst = &mut out[p * ho * wo..][..ho * wo];
            for y in 0..ho {
                for xo in 0..wo {
                    let i = 2 * y * w + 2 * xo;
                    dst[y * wo + xo] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, ho, wo],
            out,
            OpRecord {
                name: "downsample_avg2",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| {
                    let mut d = vec![0.0; n * c * h * w];
                    for p in 0..n * c {
                        let gp = &g[p * ho * wo..][..ho * wo];
                        let dp = &mut d[p * h * w..][..h * w];
                        for y in 0..ho {
                            for xo in 0..wo {
                                let q = 0.25 * gp[y * wo + xo];
                                let i = 2 * y * w + 2 * xo;
                                dp[i] += q;
                                dp[i + 1] += q;
                                dp[i + w] += q;
                                dp[i + w + 1] += q;
                            }
                        }
                    }
                    vec![Some(d)]
                }),
            },
        ))
    }

    /// Nearest-neighbor 2x upsampling; gradient sums the four replicas.
    pub fn upsample_nearest2(&self) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4("upsample_nearest2")?;
        let (ho, wo) = (2 * h, 2 * w);
        let x = self.data();
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &x[p * h * w..][..h * w];
            let dst = &mut out[p * ho * wo..][..ho * wo];
            for y in 0..ho {
                let sy = y / 2;
                for xo in 0..wo {
                    dst[y * wo + xo] = src[sy * w + xo / 2];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, ho, wo],
            out,
            OpRecord {
                name: "upsample_nearest2",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| {
                    let mut d = vec![0.0; n * c * h * w];
                    for p in 0..n * c {
                        let gp = &g[p * ho * wo..][..ho * wo];
                        let dp = &mut d[p * h * w..][..h * w];
                        for y in 0..ho {
                            let sy = y / 2;
                            for xo in 0..wo {
                                dp[sy * w + xo / 2] += gp[y * wo + xo];
                            }
                        }
                    }
                    vec![Some(d)]
                }),
            },
        ))
    }

    /// Top-left spatial crop; gradient zero-pads back to the source size.
    pub fn crop_spatial(&self, h2: usize, w2: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4("crop_spatial")?;
        if h2 > h || w2 > w || h2 == 0 || w2 == 0 {
            return Err(Error::shape(
                "crop_spatial",
                format!("cannot crop {h}x{w} to {h2}x{w2}"),
            ));
        }
        let x = self.data();
        let mut out = vec![0.0; n * c * h2 * w2];
        for p in 0..n * c {
            for y in 0..h2 {
                let src = &x[p * h * w + y * w..][..w2];
                out[p * h2 * w2 + y * w2..][..w2].copy_from_slice(src);
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, h2, w2],
            out,
            OpRecord {
                name: "crop_spatial",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| {
                    let mut d = vec![0.0; n * c * h * w];
                    for p in 0..n * c {
                        for y in 0..h2 {
                            d[p * h * w + y * w..][..w2]
                                .copy_from_slice(&g[p * h2 * w2 + y * w2..][..w2]);
                        }
                    }
                    vec![Some(d)]
                }),
            },
        ))
    }

    /// Channel range `[c0, c1)`; gradient embeds into a zero tensor.
    pub fn slice_channels(&self, c0: usize, c1: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4("slice_channels")?;
        if c0 >= c1 || c1 > c {
            return Err(Error::shape(
                "slice_channels",
                format!("range {c0}..{c1} out of {c} channels"),
            ));
        }
        let cs = c1 - c0;
        let hw = h * w;
        let x = self.data();
        let mut out = vec![0.0; n * cs * hw];
        for ni in 0..n {
            let src = &x[(ni * c + c0) * hw..][..cs * hw];
            out[ni * cs * hw..][..cs * hw].copy_from_slice(src);
        }
        Ok(Tensor::from_op(
            vec![n, cs, h, w],
            out,
            OpRecord {
                name: "slice_channels",
                inputs: vec![self.clone()],
                backward: Box::new(move |g, _| {
                    let mut d = vec![0.0; n * c * hw];
                    for ni in 0..n {
                        d[(ni * c + c0) * hw..][..cs * hw]
                            .copy_from_slice(&g[ni * cs * hw..][..cs * hw]);
                    }
                    vec![Some(d)]
                }),
            },
        ))
    }
}

/// Channel-axis concatenation in argument order; gradients slice back.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat_channels of nothing".into()));
    }
    let mut dims = Vec::with_capacity(parts.len());
    let (n0, _, h0, w0) = match *parts[0].shape() {
        [n, c, h, w] => {
            dims.push(c);
            (n, c, h, w)
        }
        _ => {
            return Err(Error::shape(
                "concat_channels",
                format!("expected NCHW, got {:?}", parts[0].shape()),
            ))
        }
    };
    for t in &parts[1..] {
        match *t.shape() {
            [n, c, h, w] if n == n0 && h == h0 && w == w0 => dims.push(c),
            _ => {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} does not match leading {:?}", t.shape(), parts[0].shape()),
                ))
            }
        }
    }
    let total_c: usize = dims.iter().sum();
    let hw = h0 * w0;
    let mut out = vec![0.0; n0 * total_c * hw];
    for ni in 0..n0 {
        let mut off = 0;
        for (t, &c) in parts.iter().zip(&dims) {
            let src = &t.data()[ni * c * hw..][..c * hw];
            out[(ni * total_c + off) * hw..][..c * hw].copy_from_slice(src);
            off += c;
        }
    }
    let dims_b = dims.clone();
    Ok(Tensor::from_op(
        vec![n0, total_c, h0, w0],
        out,
        OpRecord {
            name: "concat_channels",
            inputs: parts.iter().map(|t| (*t).clone()).collect(),
            backward: Box::new(move |g, _| {
                let mut res = Vec::with_capacity(dims_b.len());
                for &c in &dims_b {
                    res.push(Some(vec![0.0; n0 * c * hw]));
                }
                for ni in 0..n0 {
                    let mut off = 0;
                    for (slot, &c) in res.iter_mut().zip(&dims_b) {
                        let dst = slot.as_mut().unwrap();
                        dst[ni * c * hw..][..c * hw]
                            .copy_from_slice(&g[(ni * total_c + off) * hw..][..c * hw]);
                        off += c;
                    }
                }
                res
            }),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(n: usize, c: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor {
        Tensor::new(&[n, c, h, w], (0..n * c * h * w).map(f).collect()).unwrap()
    }

    #[test]
    fn downsample_block_mean() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        let y = x.downsample_avg2().unwrap();
        assert_eq!(y.data(), &[1.0]);
    }

    #[test]
    fn downsample_constant_stays_constant() {
        let x = Tensor::full(&[2, 3, 8, 8], 0.7);
        let y = x.downsample_avg2().unwrap();
        assert_eq!(y.shape(), &[2, 3, 4, 4]);
        assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn downsample_rejects_odd() {
        let x = Tensor::zeros(&[1, 1, 3, 4]);
        assert!(x.downsample_avg2().is_err());
    }

    #[test]
    fn upsample_replicates() {
        let x = Tensor::new(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let y = x.upsample_nearest2().unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn down_up_roundtrip_is_identity() {
        let x = t4(1, 2, 4, 4, |i| i as f64 * 0.3 - 2.0);
        let y = x.upsample_nearest2().unwrap().downsample_avg2().unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn concat_then_slice_recovers() {
        let a = t4(1, 2, 4, 4, |i| i as f64);
        let b = t4(1, 3, 4, 4, |i| -(i as f64));
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[1, 5, 4, 4]);
        let a2 = cat.slice_channels(0, 2).unwrap();
        let b2 = cat.slice_channels(2, 5).unwrap();
        assert_eq!(a.data(), a2.data());
        assert_eq!(b.data(), b2.data());
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::zeros(&[1, 2, 4, 4]);
        let b = Tensor::zeros(&[1, 2, 8, 4]);
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn div_matches_manual() {
        let a = Tensor::new(&[3], vec![1.0, 4.0, -6.0]).unwrap();
        let b = Tensor::new(&[3], vec![2.0, 8.0, 3.0]).unwrap();
        let q = a.div(&b).unwrap();
        assert_eq!(q.data(), &[0.5, 0.5, -2.0]);
    }
}
