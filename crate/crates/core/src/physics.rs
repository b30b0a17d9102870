//! Physical degradation synthesis: haze via the atmospheric scattering
//! model, additive rain streaks, and the mixed (rain veiling) case, plus
//! procedural depth and streak generators for desk-scale corpora.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::stream;

/// Atmospheric light and scattering coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazeParams {
    /// Per-channel global atmospheric light, each in [0,1].
    pub atm: [f64; 3],
    /// Scattering coefficient, >= 0, per unit depth.
    pub beta: f64,
}

impl HazeParams {
    pub fn new(atm: [f64; 3], beta: f64) -> Result<Self> {
        if atm.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument(format!(
                "atmospheric light {atm:?} must be in [0,1]"
            )));
        }
        if beta < 0.0 {
            return Err(Error::InvalidArgument(format!("beta {beta} must be >= 0")));
        }
        Ok(HazeParams { atm, beta })
    }

    pub fn uniform(a: f64, beta: f64) -> Result<Self> {
        Self::new([a, a, a], beta)
    }
}

/// Relative scene depth, H×W, non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(pub Image);

/// Additive streak luminance, H×W in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct RainField(pub Image);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthMode {
    Constant,
    Ramp,
    SmoothNoise,
}

impl DepthMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DepthMode::Constant => "constant",
            DepthMode::Ramp => "ramp",
            DepthMode::SmoothNoise => "smooth-noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(DepthMode::Constant),
            "ramp" => Ok(DepthMode::Ramp),
            "smooth-noise" => Ok(DepthMode::SmoothNoise),
            other => Err(Error::InvalidArgument(format!("unknown depth mode '{other}'"))),
        }
    }
}

/// Parameters of the procedural rain-streak generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainGenParams {
    /// Streak angle from vertical, degrees in [-30, 30].
    pub angle_deg: f64,
    /// Streak length in pixels, [8, 40].
    pub streak_length: f64,
    /// Streaks per kilopixel, [0.5, 8] (0 allowed for an empty field).
    pub density: f64,
    /// Peak streak value, (0, 0.8].
    pub intensity: f64,
    pub seed: u64,
}

impl RainGenParams {
    pub fn new(angle_deg: f64, streak_length: f64, density: f64, intensity: f64, seed: u64) -> Result<Self> {
        if !(-30.0..=30.0).contains(&angle_deg) {
            return Err(Error::InvalidArgument(format!("rain angle {angle_deg} outside [-30,30]")));
        }
        if !(8.0..=40.0).contains(&streak_length) {
            return Err(Error::InvalidArgument(format!("streak length {streak_length} outside [8,40]")));
        }
        if density != 0.0 && !(0.5..=8.0).contains(&density) {
            return Err(Error::InvalidArgument(format!("density {density} outside [0.5,8]")));
        }
        if !(intensity > 0.0 && intensity <= 0.8) {
            return Err(Error::InvalidArgument(format!("intensity {intensity} outside (0,0.8]")));
        }
        Ok(RainGenParams { angle_deg, streak_length, density, intensity, seed })
    }
}

/// `t(x) = exp(-beta * d(x))`, all values in (0,1].
pub fn transmission_map(depth: &DepthMap, beta: f64) -> Result<Image> {
    if beta < 0.0 {
        return Err(Error::InvalidArgument(format!("beta {beta} must be >= 0")));
    }
    let d = &depth.0;
    let mut t = Image::new(d.h, d.w, 1);
    for (o, v) in t.data.iter_mut().zip(&d.data) {
        *o = (-beta * v).exp();
    }
    Ok(t)
}

fn check_spatial(op: &'static str, clear: &Image, map: &Image) -> Result<()> {
    if clear.h != map.h || clear.w != map.w {
        return Err(Error::shape(
            op,
            format!("image {}x{} vs map {}x{}", clear.h, clear.w, map.h, map.w),
        ));
    }
    Ok(())
}

/// Hazy image: `I_h = I_c * t + A * (1 - t)` per pixel and channel. A convex
/// blend of in-range terms, so no clamping is needed.
pub fn synth_haze(clear: &Image, t: &Image, haze: &HazeParams) -> Result<Image> {
    check_spatial("synth_haze", clear, t)?;
    let mut out = Image::new(clear.h, clear.w, clear.c);
    for i in 0..clear.h * clear.w {
        let tv = t.data[i];
        for ch in 0..clear.c {
            let a = haze.atm[ch.min(2)];
            out.data[i * clear.c + ch] = clear.data[i * clear.c + ch] * tv + a * (1.0 - tv);
        }
    }
    Ok(out)
}

/// Rainy image: `I_r = clamp(I_c + S, 0, 1)`; the streak field broadcasts
/// across channels.
pub fn synth_rain(clear: &Image, rain: &RainField) -> Result<Image> {
    check_spatial("synth_rain", clear, &rain.0)?;
    let mut out = Image::new(clear.h, clear.w, clear.c);
    for i in 0..clear.h * clear.w {
        let s = rain.0.data[i];
        for ch in 0..clear.c {
            out.data[i * clear.c + ch] = (clear.data[i * clear.c + ch] + s).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Mixed image: `I_m = clamp((I_c + S) * t + A * (1 - t), 0, 1)`. The clamp
/// applies once, after the full composition.
pub fn synth_mixed(clear: &Image, rain: &RainField, t: &Image, haze: &HazeParams) -> Result<Image> {
    check_spatial("synth_mixed", clear, t)?;
    check_spatial("synth_mixed", clear, &rain.0)?;
    let mut out = Image::new(clear.h, clear.w, clear.c);
    for i in 0..clear.h * clear.w {
        let tv = t.data[i];
        let s = rain.0.data[i];
        for ch in 0..clear.c {
            let a = haze.atm[ch.min(2)];
            let v = (clear.data[i * clear.c + ch] + s) * tv + a * (1.0 - tv);
            out.data[i * clear.c + ch] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Procedural depth maps. `Ramp` runs from `d_min` on the bottom row to
/// `d_max` on the top row (sky is far); `SmoothNoise` is box-blurred seeded
/// noise rescaled exactly onto [d_min, d_max].
pub fn gen_depth(mode: DepthMode, d_min: f64, d_max: f64, seed: u64, h: usize, w: usize) -> Result<DepthMap> {
    if d_min < 0.0 || d_max < d_min {
        return Err(Error::InvalidArgument(format!(
            "depth range [{d_min}, {d_max}] invalid"
        )));
    }
    let mut img = Image::new(h, w, 1);
    match mode {
        DepthMode::Constant => {
            img.data.fill(d_min);
        }
        DepthMode::Ramp => {
            for y in 0..h {
                let frac = if h > 1 { 1.0 - y as f64 / (h - 1) as f64 } else { 1.0 };
                let d = d_min + (d_max - d_min) * frac;
                for x in 0..w {
                    *img.at_mut(y, x, 0) = d;
                }
            }
        }
        DepthMode::SmoothNoise => {
            let mut rng = stream(seed, &[0xDE11]);
            let mut noise: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
            // low-pass: three box-blur passes at radius ~1/8 of the size
            let r = (h.min(w) / 8).max(1);
            for _ in 0..3 {
                noise = crate::freq::box_mean(&noise, h, w, r);
            }
            let lo = noise.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = noise.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            for (o, v) in img.data.iter_mut().zip(&noise) {
                *o = d_min + (v - lo) / span * (d_max - d_min);
            }
        }
    }
    Ok(DepthMap(img))
}

/// Seeded anti-aliased rain streaks. Draws `ceil(density * h * w / 1000)`
/// line segments with linear alpha falloff toward the endpoints; the field
/// is clamped to [0,1].
pub fn gen_rain_streaks(p: &RainGenParams, h: usize, w: usize) -> RainField {
    let mut field = Image::new(h, w, 1);
    let count = (p.density * (h * w) as f64 / 1000.0).ceil() as usize;
    if count == 0 {
        return RainField(field);
    }
    let mut rng = stream(p.seed, &[0x5A1B]);
    let half = p.streak_length / 2.0;
    for _ in 0..count {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let jitter: f64 = rng.random_range(-2.0..2.0);
        let ang = (p.angle_deg + jitter).to_radians();
        let peak = p.intensity * rng.random_range(0.5..=1.0);
        // direction mostly downward; angle measured from vertical
        let (dx, dy) = (ang.sin(), ang.cos());

        let x0 = cx - dx * half;
        let y0 = cy - dy * half;
        let x1 = cx + dx * half;
        let y1 = cy + dy * half;
        let min_x = (x0.min(x1).floor() as isize - 2).max(0) as usize;
        let max_x = (x0.max(x1).ceil() as isize + 2).min(w as isize - 1) as usize;
        let min_y = (y0.min(y1).floor() as isize - 2).max(0) as usize;
        let max_y = (y0.max(y1).ceil() as isize + 2).min(h as isize - 1) as usize;
        for py in min_y..=max_y {
            for px in min_x..=max_x {
                // axial position and perpendicular distance to the segment
                let rx = px as f64 + 0.5 - cx;
                let ry = py as f64 + 0.5 - cy;
                let along = rx * dx + ry * dy;
                if along.abs() > half {
                    continue;
                }
                let perp = (rx * dy - ry * dx).abs();
                let coverage = (1.0 - perp).max(0.0);
                if coverage <= 0.0 {
                    continue;
                }
                let falloff = 1.0 - along.abs() / half;
                let v = field.at(py, px, 0) + peak * coverage * falloff;
                *field.at_mut(py, px, 0) = v.min(1.0);
            }
        }
    }
    RainField(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checker(h: usize, w: usize) -> Image {
        let mut img = Image::new(h, w, 3);
        for y in 0..h {
            for x in 0..w {
                let v = if (x + y) % 2 == 0 { 0.8 } else { 0.2 };
                for ch in 0..3 {
                    *img.at_mut(y, x, ch) = v * (1.0 - 0.1 * ch as f64);
                }
            }
        }
        img
    }

    #[test]
    fn transmission_identities() {
        let d = gen_depth(DepthMode::Constant, 1.0, 1.0, 0, 4, 4).unwrap();
        let t0 = transmission_map(&d, 0.0).unwrap();
        assert!(t0.data.iter().all(|v| *v == 1.0));

        let t1 = transmission_map(&d, 1.0).unwrap();
        assert!(t1.data.iter().all(|v| (v - 0.36788).abs() < 1e-5));

        let beta = 0.7;
        let dm = gen_depth(DepthMode::Constant, 2.0_f64.ln() / beta, 2.0_f64.ln() / beta, 0, 2, 2).unwrap();
        let th = transmission_map(&dm, beta).unwrap();
        assert!(th.data.iter().all(|v| (v - 0.5).abs() < 1e-12));

        assert!(transmission_map(&d, -0.1).is_err());
    }

    #[test]
    fn haze_limits() {
        let clear = checker(6, 6);
        let haze = HazeParams::uniform(1.0, 1.0).unwrap();
        let t_one = Image::from_data(6, 6, 1, vec![1.0; 36]).unwrap();
        let out = synth_haze(&clear, &t_one, &haze).unwrap();
        assert_eq!(out, clear);

        let t_zero = Image::from_data(6, 6, 1, vec![0.0; 36]).unwrap();
        let out = synth_haze(&clear, &t_zero, &haze).unwrap();
        assert!(out.data.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let mut half = Image::new(1, 1, 3);
        half.data = vec![0.5; 3];
        let t_half = Image::from_data(1, 1, 1, vec![0.5]).unwrap();
        let o = synth_haze(&half, &t_half, &haze).unwrap();
        assert!(o.data.iter().all(|v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn rain_addition_and_clamp() {
        let mut clear = Image::new(1, 2, 3);
        clear.data = vec![0.3, 0.3, 0.3, 0.9, 0.9, 0.9];
        let rain = RainField(Image::from_data(1, 2, 1, vec![0.4, 0.5]).unwrap());
        let out = synth_rain(&clear, &rain).unwrap();
        assert!((out.data[0] - 0.7).abs() < 1e-12);
        assert!((out.data[3] - 1.0).abs() < 1e-12);

        let zero = RainField(Image::from_data(1, 2, 1, vec![0.0, 0.0]).unwrap());
        assert_eq!(synth_rain(&clear, &zero).unwrap(), clear);
    }

    #[test]
    fn mixed_degenerates_bitwise() {
        let clear = checker(8, 8);
        let depth = gen_depth(DepthMode::Ramp, 0.2, 1.5, 0, 8, 8).unwrap();
        let haze = HazeParams::uniform(0.85, 1.1).unwrap();
        let t = transmission_map(&depth, haze.beta).unwrap();
        let rain = gen_rain_streaks(&RainGenParams::new(10.0, 12.0, 4.0, 0.6, 3).unwrap(), 8, 8);

        let zero_rain = RainField(Image::from_data(8, 8, 1, vec![0.0; 64]).unwrap());
        let mixed_no_rain = synth_mixed(&clear, &zero_rain, &t, &haze).unwrap();
        assert_eq!(mixed_no_rain, synth_haze(&clear, &t, &haze).unwrap());

        let t_one = Image::from_data(8, 8, 1, vec![1.0; 64]).unwrap();
        let mixed_no_haze = synth_mixed(&clear, &rain, &t_one, &haze).unwrap();
        assert_eq!(mixed_no_haze, synth_rain(&clear, &rain).unwrap());
    }

    #[test]
    fn mixed_forced_arithmetic() {
        let mut clear = Image::new(1, 1, 3);
        clear.data = vec![0.5; 3];
        let rain = RainField(Image::from_data(1, 1, 1, vec![0.2]).unwrap());
        let t = Image::from_data(1, 1, 1, vec![0.5]).unwrap();
        let haze = HazeParams::uniform(1.0, 1.0).unwrap();
        let out = synth_mixed(&clear, &rain, &t, &haze).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.85).abs() < 1e-12));
    }

    #[test]
    fn haze_monotone_in_transmission() {
        let clear = checker(8, 8);
        let haze = HazeParams::uniform(0.9, 1.0).unwrap();
        let t_lo = Image::from_data(8, 8, 1, vec![0.3; 64]).unwrap();
        let t_hi = Image::from_data(8, 8, 1, vec![0.8; 64]).unwrap();
        let out_lo = synth_haze(&clear, &t_lo, &haze).unwrap();
        let out_hi = synth_haze(&clear, &t_hi, &haze).unwrap();
        for i in 0..clear.data.len() {
            let d_lo = (out_lo.data[i] - clear.data[i]).abs();
            let d_hi = (out_hi.data[i] - clear.data[i]).abs();
            assert!(d_hi <= d_lo + 1e-12);
        }
    }

    #[test]
    fn depth_modes() {
        let c = gen_depth(DepthMode::Constant, 2.0, 5.0, 0, 3, 3).unwrap();
        assert!(c.0.data.iter().all(|v| *v == 2.0));

        let r = gen_depth(DepthMode::Ramp, 0.0, 1.0, 0, 3, 2).unwrap();
        assert_eq!(r.0.at(0, 0, 0), 1.0);
        assert_eq!(r.0.at(1, 0, 0), 0.5);
        assert_eq!(r.0.at(2, 0, 0), 0.0);

        let s = gen_depth(DepthMode::SmoothNoise, 0.25, 1.75, 42, 32, 32).unwrap();
        let lo = s.0.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.0.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - 0.25).abs() < 1e-9);
        assert!((hi - 1.75).abs() < 1e-9);

        assert!(gen_depth(DepthMode::Constant, 2.0, 1.0, 0, 2, 2).is_err());
    }

    #[test]
    fn rain_generator_determinism_and_scale() {
        let p = RainGenParams::new(-15.0, 20.0, 3.0, 0.5, 77).unwrap();
        let a = gen_rain_streaks(&p, 64, 64);
        let b = gen_rain_streaks(&p, 64, 64);
        assert_eq!(a.0.data, b.0.data);

        let empty = gen_rain_streaks(&RainGenParams { density: 0.0, ..p }, 32, 32);
        assert!(empty.0.data.iter().all(|v| *v == 0.0));

        // Monte-Carlo mean against the coarse expectation E = d*L*I/2000
        let mut acc = 0.0;
        let seeds = 20u64;
        for seed in 0..seeds {
            let p = RainGenParams::new(5.0, 24.0, 2.0, 0.6, seed).unwrap();
            let f = gen_rain_streaks(&p, 96, 96);
            acc += f.0.data.iter().sum::<f64>() / (96.0 * 96.0);
        }
        let mean = acc / seeds as f64;
        let e = 2.0 * 24.0 * 0.6 / 2000.0;
        assert!(mean > 0.1 * e && mean < 10.0 * e, "mean {mean}, E {e}");
    }

    proptest! {
        #[test]
        fn synthesized_images_stay_in_unit_range(
            beta in 0.0f64..3.0,
            a in 0.6f64..1.0,
            seed in 0u64..500,
        ) {
            let clear = checker(12, 12);
            let depth = gen_depth(DepthMode::SmoothNoise, 0.0, 2.0, seed, 12, 12).unwrap();
            let haze = HazeParams::uniform(a, beta).unwrap();
            let t = transmission_map(&depth, beta).unwrap();
            let rain = gen_rain_streaks(&RainGenParams::new(0.0, 16.0, 4.0, 0.7, seed).unwrap(), 12, 12);
            for img in [
                synth_haze(&clear, &t, &haze).unwrap(),
                synth_rain(&clear, &rain).unwrap(),
                synth_mixed(&clear, &rain, &t, &haze).unwrap(),
            ] {
                prop_assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
