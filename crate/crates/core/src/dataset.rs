//! Corpus synthesis: sampling degradation specs, building degraded image
//! sets from a clean-image folder, and the line-oriented manifest that makes
//! every degraded image bit-exactly reproducible from its stored spec.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{load_png, save_png, write_atomic, Image};
use crate::physics::{
    gen_depth, gen_rain_streaks, synth_haze, synth_mixed, synth_rain, transmission_map, DepthMode,
    HazeParams, RainGenParams,
};
use crate::rng::{splitmix64, stream};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Haze,
    Rain,
    Mixed,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Haze, Kind::Rain, Kind::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Haze => "haze",
            Kind::Rain => "rain",
            Kind::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "haze" => Ok(Kind::Haze),
            "rain" => Ok(Kind::Rain),
            "mixed" => Ok(Kind::Mixed),
            other => Err(Error::InvalidArgument(format!("unknown kind '{other}'"))),
        }
    }
}

/// Depth generator parameters; the map itself is regenerated on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSpec {
    pub mode: DepthMode,
    pub d_min: f64,
    pub d_max: f64,
    pub seed: u64,
}

/// Haze side of a degradation: atmospheric light, scattering coefficient and
/// the depth generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazeSpec {
    pub atm: [f64; 3],
    pub beta: f64,
    pub depth: DepthSpec,
}

/// Everything needed to regenerate one degraded image bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub kind: Kind,
    pub haze: Option<HazeSpec>,
    pub rain: Option<RainGenParams>,
}

impl DegradationSpec {
    /// Re-run the physics on a clean image.
    pub fn apply(&self, clean: &Image) -> Result<Image> {
        let haze = |hs: &HazeSpec| -> Result<(Image, HazeParams)> {
            let depth = gen_depth(hs.depth.mode, hs.depth.d_min, hs.depth.d_max, hs.depth.seed, clean.h, clean.w)?;
            let params = HazeParams::new(hs.atm, hs.beta)?;
            Ok((transmission_map(&depth, hs.beta)?, params))
        };
        match self.kind {
            Kind::Haze => {
                let hs = self.haze.as_ref().ok_or_else(|| Error::InvalidArgument("haze spec missing".into()))?;
                let (t, params) = haze(hs)?;
                synth_haze(clean, &t, &params)
            }
            Kind::Rain => {
                let rs = self.rain.as_ref().ok_or_else(|| Error::InvalidArgument("rain spec missing".into()))?;
                let field = gen_rain_streaks(rs, clean.h, clean.w);
                synth_rain(clean, &field)
            }
            Kind::Mixed => {
                let hs = self.haze.as_ref().ok_or_else(|| Error::InvalidArgument("haze spec missing".into()))?;
                let rs = self.rain.as_ref().ok_or_else(|| Error::InvalidArgument("rain spec missing".into()))?;
                let (t, params) = haze(hs)?;
                let field = gen_rain_streaks(rs, clean.h, clean.w);
                synth_mixed(clean, &field, &t, &params)
            }
        }
    }
}

/// Sampling ranges and fixed-value overrides for corpus synthesis.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub kinds: Vec<Kind>,
    pub seed: u64,
    /// Fixed scattering coefficient instead of the [0.6, 2.0] draw.
    pub fixed_beta: Option<f64>,
    /// Fixed atmospheric light instead of the [0.7, 1.0] draw.
    pub fixed_atm: Option<f64>,
    /// Sample A per channel instead of one shared value.
    pub per_channel_atm: bool,
    pub depth_mode: DepthMode,
    /// Streaks per kilopixel, sampled uniformly from this range.
    pub rain_density: (f64, f64),
    /// Peak streak value, sampled uniformly from this range.
    pub rain_intensity: (f64, f64),
    /// Streak length in pixels, sampled uniformly from this range.
    pub rain_length: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kinds: Kind::ALL.to_vec(),
            seed: 0,
            fixed_beta: None,
            fixed_atm: None,
            per_channel_atm: false,
            depth_mode: DepthMode::SmoothNoise,
            rain_density: (1.0, 4.0),
            rain_intensity: (0.3, 0.7),
            rain_length: (12.0, 28.0),
        }
    }
}

/// Draw one degradation spec for (image index, kind); deterministic in
/// (config seed, index, kind).
pub fn sample_spec(cfg: &SynthConfig, index: u64, kind: Kind) -> DegradationSpec {
    let kind_label = match kind {
        Kind::Haze => 1u64,
        Kind::Rain => 2,
        Kind::Mixed => 3,
    };
    let mut rng = stream(cfg.seed, &[0xDA7A, index, kind_label]);
    let haze = (kind != Kind::Rain).then(|| {
        let shared: f64 = rng.random_range(0.7..1.0);
        let atm = if cfg.per_channel_atm {
            [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0), rng.random_range(0.7..1.0)]
        } else {
            [shared; 3]
        };
        let atm = cfg.fixed_atm.map(|a| [a; 3]).unwrap_or(atm);
        let beta = cfg.fixed_beta.unwrap_or_else(|| rng.random_range(0.6..2.0));
        HazeSpec {
            atm,
            beta,
            depth: DepthSpec { mode: cfg.depth_mode, d_min: 0.0, d_max: 1.0, seed: rng.random::<u64>() },
        }
    });
    let rain = (kind != Kind::Haze).then(|| {
        RainGenParams {
            angle_deg: rng.random_range(-30.0..30.0),
            streak_length: rng.random_range(cfg.rain_length.0..cfg.rain_length.1),
            density: rng.random_range(cfg.rain_density.0..cfg.rain_density.1),
            intensity: rng.random_range(cfg.rain_intensity.0..cfg.rain_intensity.1),
            seed: rng.random::<u64>(),
        }
    });
    DegradationSpec { kind, haze, rain }
}

/// One manifest entry. Paths are stored relative to the manifest location.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub index: usize,
    pub clean: PathBuf,
    pub degraded: PathBuf,
    pub spec: DegradationSpec,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub records: Vec<Record>,
}

impl Manifest {
    /// Serialize as key=value blocks separated by blank lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format=mvksr-manifest");
        let _ = writeln!(out, "version={MANIFEST_VERSION}");
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "count={}", self.records.len());
        for r in &self.records {
            out.push('\n');
            let _ = writeln!(out, "index={}", r.index);
            let _ = writeln!(out, "clean={}", r.clean.display());
            let _ = writeln!(out, "degraded={}", r.degraded.display());
            let _ = writeln!(out, "kind={}", r.spec.kind.as_str());
            if let Some(h) = &r.spec.haze {
                let _ = writeln!(out, "atm={},{},{}", h.atm[0], h.atm[1], h.atm[2]);
                let _ = writeln!(out, "beta={}", h.beta);
                let _ = writeln!(out, "depth_mode={}", h.depth.mode.as_str());
                let _ = writeln!(out, "depth_min={}", h.depth.d_min);
                let _ = writeln!(out, "depth_max={}", h.depth.d_max);
                let _ = writeln!(out, "depth_seed={}", h.depth.seed);
            }
            if let Some(rn) = &r.spec.rain {
                let _ = writeln!(out, "rain_angle={}", rn.angle_deg);
                let _ = writeln!(out, "rain_length={}", rn.streak_length);
                let _ = writeln!(out, "rain_density={}", rn.density);
                let _ = writeln!(out, "rain_intensity={}", rn.intensity);
                let _ = writeln!(out, "rain_seed={}", rn.seed);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let mut blocks = text.split("\n\n");
        let header = blocks
            .next()
            .ok_or_else(|| Error::Format("empty manifest".into()))?;
        let head = parse_block(header)?;
        if head.get("format").map(String::as_str) != Some("mvksr-manifest") {
            return Err(Error::Format("not a manifest file".into()));
        }
        let version: u32 = get(&head, "version")?;
        if version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {version}")));
        }
        let seed: u64 = get(&head, "seed")?;
        let count: usize = get(&head, "count")?;
        let mut records = Vec::new();
        for block in blocks {
            if block.trim().is_empty() {
                continue;
            }
            let kv = parse_block(block)?;
            let kind = Kind::parse(&get::<String>(&kv, "kind")?)?;
            let haze = if kv.contains_key("beta") {
                let atm_raw: String = get(&kv, "atm")?;
                let parts: Vec<f64> = atm_raw
                    .split(',')
                    .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("bad atm value '{s}'"))))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(Error::Format("atm needs three channels".into()));
                }
                Some(HazeSpec {
                    atm: [parts[0], parts[1], parts[2]],
                    beta: get(&kv, "beta")?,
                    depth: DepthSpec {
                        mode: DepthMode::parse(&get::<String>(&kv, "depth_mode")?)?,
                        d_min: get(&kv, "depth_min")?,
                        d_max: get(&kv, "depth_max")?,
                        seed: get(&kv, "depth_seed")?,
                    },
                })
            } else {
                None
            };
            let rain = if kv.contains_key("rain_seed") {
                Some(RainGenParams {
                    angle_deg: get(&kv, "rain_angle")?,
                    streak_length: get(&kv, "rain_length")?,
                    density: get(&kv, "rain_density")?,
                    intensity: get(&kv, "rain_intensity")?,
                    seed: get(&kv, "rain_seed")?,
                })
            } else {
                None
            };
            records.push(Record {
                index: get(&kv, "index")?,
                clean: PathBuf::from(get::<String>(&kv, "clean")?),
                degraded: PathBuf::from(get::<String>(&kv, "degraded")?),
                spec: DegradationSpec { kind, haze, rain },
            });
        }
        if records.len() != count {
            return Err(Error::Format(format!(
                "manifest announces {count} records but contains {}",
                records.len()
            )));
        }
        Ok(Manifest { seed, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        Manifest::parse(&std::fs::read_to_string(path)?)
    }

    /// Deterministic 80/20 split by record-index hash: records are ranked by
    /// `splitmix64(seed ^ index)` and the top fifth is held out.
    pub fn split(&self, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let n = self.records.len();
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.sort_by_key(|&i| (splitmix64(seed ^ self.records[i].index as u64), i));
        let n_heldout = n / 5;
        let mut heldout: Vec<usize> = ranked[..n_heldout].to_vec();
        let mut train: Vec<usize> = ranked[n_heldout..].to_vec();
        heldout.sort_unstable();
        train.sort_unstable();
        (train, heldout)
    }
}

fn parse_block(block: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in block.lines() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("manifest line without '=': {line}")))?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = kv
        .get(key)
        .ok_or_else(|| Error::Format(format!("manifest key '{key}' missing")))?;
    raw.parse::<T>()
        .map_err(|_| Error::Format(format!("manifest key '{key}' has bad value '{raw}'")))
}

/// Synthesize the degraded counterpart(s) of every clean PNG in a folder and
/// write the manifest. Unreadable files are skipped with a warning; at least
/// one usable image is required. Fully deterministic per seed.
pub fn build_dataset(clean_dir: &Path, cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(clean_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    files.sort();
    let mut records = Vec::new();
    let mut index = 0usize;
    for path in &files {
        let clean = match load_png(path) {
            Ok(img) if img.c == 3 => img,
            Ok(_) => {
                eprintln!("warning: skipping {} (not RGB)", path.display());
                continue;
            }
            Err(e) => {
                eprintln!("warning: skipping {} ({e})", path.display());
                continue;
            }
        };
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        for &kind in &cfg.kinds {
            let spec = sample_spec(cfg, index as u64, kind);
            let degraded = spec.apply(&clean)?;
            let degraded_name = format!("{stem}_{}.png", kind.as_str());
            save_png(&degraded, &out_dir.join(&degraded_name))?;
            records.push(Record {
                index,
                clean: relative_or_absolute(path, out_dir),
                degraded: PathBuf::from(&degraded_name),
                spec,
            });
            index += 1;
        }
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no usable clean images in {}",
            clean_dir.display()
        )));
    }
    let manifest = Manifest { seed: cfg.seed, records };
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

fn relative_or_absolute(path: &Path, base: &Path) -> PathBuf {
    match (path.canonicalize(), base.canonicalize()) {
        (Ok(p), Ok(b)) => pathdiff(&p, &b).unwrap_or(p),
        _ => path.to_path_buf(),
    }
}

fn pathdiff(path: &Path, base: &Path) -> Option<PathBuf> {
    let mut pc: Vec<_> = path.components().collect();
    let mut bc: Vec<_> = base.components().collect();
    let common = pc
        .iter()
        .zip(bc.iter())
        .take_while(|(a, b)| a == b)
        .count();
    if common == 0 {
        return None;
    }
    pc.drain(..common);
    bc.drain(..common);
    let mut out = PathBuf::new();
    for _ in bc {
        out.push("..");
    }
    for c in pc {
        out.push(c.as_os_str());
    }
    Some(out)
}

/// Desk-scale corpus: `n` procedural clean scenes with one degraded
/// counterpart each, kinds assigned round-robin from `cfg.kinds`. Images and
/// the manifest land in `dir`.
pub fn build_scene_corpus(
    dir: &Path,
    n: usize,
    hw: usize,
    scene_seed: u64,
    cfg: &SynthConfig,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    if cfg.kinds.is_empty() {
        return Err(Error::InvalidArgument("no kinds selected".into()));
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let clean = synth_clean_scene(hw, hw, scene_seed.wrapping_add(i as u64));
        let kind = cfg.kinds[i % cfg.kinds.len()];
        let spec = sample_spec(cfg, i as u64, kind);
        let degraded = spec.apply(&clean)?;
        let clean_name = format!("scene{i:03}.png");
        let degraded_name = format!("scene{i:03}_{}.png", kind.as_str());
        save_png(&clean, &dir.join(&clean_name))?;
        save_png(&degraded, &dir.join(&degraded_name))?;
        records.push(Record {
            index: i,
            clean: PathBuf::from(clean_name),
            degraded: PathBuf::from(degraded_name),
            spec,
        });
    }
    let manifest = Manifest { seed: cfg.seed, records };
    manifest.save(&dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Resolve a manifest-relative path.
pub fn resolve(manifest_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}

/// Procedural clean test scene: smooth color gradients with a few
/// soft-edged rectangles and disks. Deterministic per seed.
pub fn synth_clean_scene(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = stream(seed, &[0x5CE7E]);
    let mut img = Image::new(h, w, 3);
    let base: [f64; 3] = [
        rng.random_range(0.25..0.75),
        rng.random_range(0.25..0.75),
        rng.random_range(0.25..0.75),
    ];
    let (fy, fx) = (rng.random_range(0.02..0.09), rng.random_range(0.02..0.09));
    let (py, px) = (
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let wave = 0.16 * ((y as f64 * fy + py + ch as f64).sin())
                    + 0.12 * ((x as f64 * fx + px - ch as f64 * 0.7).cos());
                *img.at_mut(y, x, ch) = (base[ch] + wave).clamp(0.02, 0.98);
            }
        }
    }
    let shapes = rng.random_range(4..9);
    for _ in 0..shapes {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let ry = rng.random_range(0.08..0.3) * h as f64;
        let rx = rng.random_range(0.08..0.3) * w as f64;
        let color: [f64; 3] = [
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
        ];
        let disk = rng.random::<bool>();
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                let inside = if disk {
                    1.0 - (dy * dy + dx * dx)
                } else {
                    1.0 - dy.abs().max(dx.abs())
                };
                if inside > 0.0 {
                    // soft edge over ~10% of the radius
                    let alpha = (inside / 0.1).clamp(0.0, 1.0) * 0.85;
                    for ch in 0..3 {
                        let v = img.at(y, x, ch);
                        *img.at_mut(y, x, ch) = v * (1.0 - alpha) + color[ch] * alpha;
                    }
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dirs(tag: &str) -> (PathBuf, PathBuf) {
        let base = std::env::temp_dir().join(format!("mvksr_ds_{tag}"));
        let clean = base.join("clean");
        let out = base.join("out");
        let _ = std::fs::remove_dir_all(&base);
        std::fs::create_dir_all(&clean).unwrap();
        (clean, out)
    }

    #[test]
    fn three_kinds_make_three_records_per_image() {
        let (clean_dir, out_dir) = temp_dirs("counts");
        for i in 0..4u64 {
            save_png(&synth_clean_scene(24, 24, i), &clean_dir.join(format!("img{i}.png"))).unwrap();
        }
        let cfg = SynthConfig { seed: 7, ..SynthConfig::default() };
        let manifest = build_dataset(&clean_dir, &cfg, &out_dir).unwrap();
        assert_eq!(manifest.records.len(), 12);
        let kinds: Vec<_> = manifest.records.iter().map(|r| r.spec.kind).collect();
        assert_eq!(kinds.iter().filter(|k| **k == Kind::Haze).count(), 4);
    }

    #[test]
    fn replay_regenerates_bitwise() {
        let (clean_dir, out_dir) = temp_dirs("replay");
        for i in 0..2u64 {
            save_png(&synth_clean_scene(32, 24, 100 + i), &clean_dir.join(format!("c{i}.png"))).unwrap();
        }
        let cfg = SynthConfig { seed: 3, ..SynthConfig::default() };
        let manifest = build_dataset(&clean_dir, &cfg, &out_dir).unwrap();
        for r in &manifest.records {
            let clean = load_png(&resolve(&out_dir, &r.clean)).unwrap();
            let stored = load_png(&resolve(&out_dir, &r.degraded)).unwrap();
            let replayed = r.spec.apply(&clean).unwrap();
            assert_eq!(replayed.to_u8(), stored.to_u8(), "record {}", r.index);
        }
    }

    #[test]
    fn same_seed_gives_identical_manifest_and_bytes() {
        let (clean_dir, out1) = temp_dirs("det1");
        for i in 0..2u64 {
            save_png(&synth_clean_scene(20, 20, 55 + i), &clean_dir.join(format!("c{i}.png"))).unwrap();
        }
        let cfg = SynthConfig { seed: 11, ..SynthConfig::default() };
        let m1 = build_dataset(&clean_dir, &cfg, &out1).unwrap();
        let out2 = out1.parent().unwrap().join("out2");
        let m2 = build_dataset(&clean_dir, &cfg, &out2).unwrap();
        assert_eq!(m1.seed, m2.seed);
        assert_eq!(m1.records.len(), m2.records.len());
        for (a, b) in m1.records.iter().zip(&m2.records) {
            assert_eq!(a.spec, b.spec);
            let ba = std::fs::read(resolve(&out1, &a.degraded)).unwrap();
            let bb = std::fs::read(resolve(&out2, &b.degraded)).unwrap();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn manifest_text_roundtrip() {
        let (clean_dir, out_dir) = temp_dirs("text");
        save_png(&synth_clean_scene(16, 16, 9), &clean_dir.join("a.png")).unwrap();
        let cfg = SynthConfig { seed: 21, ..SynthConfig::default() };
        let manifest = build_dataset(&clean_dir, &cfg, &out_dir).unwrap();
        let text = manifest.to_text();
        let back = Manifest::parse(&text).unwrap();
        assert_eq!(manifest, back);
    }

    #[test]
    fn split_is_deterministic_and_four_to_one() {
        let mut records = Vec::new();
        for i in 0..80 {
            records.push(Record {
                index: i,
                clean: PathBuf::from("c.png"),
                degraded: PathBuf::from("d.png"),
                spec: sample_spec(&SynthConfig::default(), i as u64, Kind::ALL[i % 3]),
            });
        }
        let m = Manifest { seed: 5, records };
        let (train, heldout) = m.split(5);
        assert_eq!(train.len(), 64);
        assert_eq!(heldout.len(), 16);
        let (t2, h2) = m.split(5);
        assert_eq!(train, t2);
        assert_eq!(heldout, h2);
        let mut all: Vec<usize> = train.iter().chain(&heldout).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..80).collect::<Vec<_>>());
    }

    #[test]
    fn empty_clean_dir_is_an_error() {
        let (clean_dir, out_dir) = temp_dirs("empty");
        let cfg = SynthConfig::default();
        assert!(build_dataset(&clean_dir, &cfg, &out_dir).is_err());
    }

    #[test]
    fn scene_generator_is_deterministic_and_in_range() {
        let a = synth_clean_scene(40, 30, 4);
        let b = synth_clean_scene(40, 30, 4);
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        let c = synth_clean_scene(40, 30, 5);
        assert_ne!(a, c);
    }
}
