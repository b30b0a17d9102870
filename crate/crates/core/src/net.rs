//! The restoration network: mixed residual blocks (standard + atrous
//! convolution branches), an en-decoder coarse extractor over the 9-channel
//! multi-view input, and the fine fusion stage that emits grayscale/high/low
//! predictions plus the restored RGB image.

use rand::Rng;

use crate::error::{Error, Result};
use crate::freq::{self, DecompMode, FreqStack, GrayCoeffs, KernelMode};
use crate::image::Image;
use crate::rng::stream;
use crate::tensor::{concat_channels, ParamSet, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct NetworkConfig {
    /// 3 RGB + 3 high-frequency + 3 low-frequency layers.
    pub in_channels: usize,
    pub level_channels: [usize; 3],
    pub level_rates: [usize; 3],
    pub kernel: usize,
    pub mff_channels: usize,
    /// Residual blocks stacked at each en/decoder level.
    pub blocks_per_level: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 9,
            level_channels: [16, 32, 64],
            level_rates: [12, 6, 3],
            kernel: 3,
            mff_channels: 16,
            blocks_per_level: 3,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Small configuration for finite-difference checks of the whole model.
    pub fn tiny(seed: u64) -> Self {
        NetworkConfig {
            in_channels: 9,
            level_channels: [4, 6, 8],
            level_rates: [4, 2, 1],
            kernel: 3,
            mff_channels: 4,
            blocks_per_level: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level_rates[0] > self.level_rates[1] && self.level_rates[1] > self.level_rates[2]) {
            return Err(Error::InvalidArgument(format!(
                "atrous rates {:?} must be strictly decreasing",
                self.level_rates
            )));
        }
        if !(self.level_channels[0] < self.level_channels[1]
            && self.level_channels[1] < self.level_channels[2])
        {
            return Err(Error::InvalidArgument(format!(
                "channels {:?} must be strictly increasing",
                self.level_channels
            )));
        }
        for c in self.level_channels.iter().chain([&self.mff_channels]) {
            if c % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "channel count {c} must be even (the mixed layer splits in half)"
                )));
            }
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument("kernel must be odd".into()));
        }
        if self.blocks_per_level == 0 {
            return Err(Error::InvalidArgument("blocks_per_level must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outputs of the fine fusion stage; every map is post-sigmoid in [0,1].
pub struct MffOutputs {
    pub gray_f: Tensor,
    pub high_f: Tensor,
    pub low_f: Tensor,
    pub restored: Tensor,
}

/// Network weights plus the configuration that shaped them.
pub struct Model {
    pub config: NetworkConfig,
    pub params: ParamSet,
}

impl Model {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Model { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        Ok(Model { config, params })
    }
}

fn kaiming_uniform(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

struct Init<'a> {
    params: ParamSet,
    rng: &'a mut rand_chacha::ChaCha8Rng,
}

impl Init<'_> {
    fn conv(&mut self, name: &str, co: usize, ci: usize, k: usize) -> Result<()> {
        let w = kaiming_uniform(self.rng, ci * k * k, co * ci * k * k);
        self.params
            .insert(format!("{name}.w"), Tensor::new_grad(&[co, ci, k, k], w)?)?;
        self.params
            .insert(format!("{name}.b"), Tensor::new_grad(&[co], vec![0.0; co])?)?;
        Ok(())
    }

    fn layer_norm(&mut self, name: &str, c: usize) -> Result<()> {
        self.params
            .insert(format!("{name}.g"), Tensor::new_grad(&[c], vec![1.0; c])?)?;
        self.params
            .insert(format!("{name}.b"), Tensor::new_grad(&[c], vec![0.0; c])?)?;
        Ok(())
    }

    fn prelu(&mut self, name: &str, c: usize) -> Result<()> {
        self.params
            .insert(format!("{name}.s"), Tensor::new_grad(&[c], vec![0.25; c])?)?;
        Ok(())
    }

    fn mcl(&mut self, name: &str, ci: usize, co: usize, k: usize) -> Result<()> {
        self.conv(&format!("{name}.dil"), co / 2, ci, k)?;
        self.conv(&format!("{name}.std"), co / 2, ci, k)?;
        self.layer_norm(&format!("{name}.ln"), co)?;
        self.prelu(&format!("{name}.pr"), co)
    }

    fn mrb(&mut self, name: &str, c: usize, k: usize) -> Result<()> {
        self.mcl(&format!("{name}.mcl0"), c, c, k)?;
        self.mcl(&format!("{name}.mcl1"), c, c, k)?;
        self.conv(&format!("{name}.conv"), c, c, k)?;
        self.layer_norm(&format!("{name}.ln"), c)?;
        self.prelu(&format!("{name}.pr"), c)
    }
}

/// Deterministic seeded initialization: Kaiming fan-in uniform conv kernels,
/// zero biases, 0.25 PReLU slopes, unit layer-norm gain.
pub fn init_params(config: &NetworkConfig) -> Result<ParamSet> {
    config.validate()?;
    let mut rng = stream(config.seed, &[0x1417]);
    let mut init = Init { params: ParamSet::new(), rng: &mut rng };
    let k = config.kernel;
    let [c0, c1, c2] = config.level_channels;
    let blocks = config.blocks_per_level;

    // encoder: entry 1x1 channel adapters between levels, then MRBs
    let mut prev = config.in_channels;
    for (l, &c) in config.level_channels.iter().enumerate() {
        init.conv(&format!("mce.enc{l}.entry"), c, prev, 1)?;
        for j in 0..blocks {
            init.mrb(&format!("mce.enc{l}.mrb{j:02}"), c, k)?;
        }
        prev = c;
    }
    // decoder: nearest-neighbor upsample is parameter-free; each level has a
    // 3x3 conv halving channels, a 1x1 fuse after the skip concat, then MRBs
    init.conv("mce.dec1.up", c1, c2, k)?;
    init.conv("mce.dec1.fuse", c1, 2 * c1, 1)?;
    for j in 0..blocks {
        init.mrb(&format!("mce.dec1.mrb{j:02}"), c1, k)?;
    }
    init.conv("mce.dec0.up", c0, c1, k)?;
    init.conv("mce.dec0.fuse", c0, 2 * c0, 1)?;
    for j in 0..blocks {
        init.mrb(&format!("mce.dec0.mrb{j:02}"), c0, k)?;
    }

    // fine fusion: three front-fusion heads and the back-fusion trunk
    let cm = config.mff_channels;
    for head in ["gray", "high", "low"] {
        init.conv(&format!("mff.{head}.c0"), cm, c0, k)?;
        init.prelu(&format!("mff.{head}.pr"), cm)?;
        init.conv(&format!("mff.{head}.c1"), 1, cm, k)?;
    }
    let bf_in = c0 + 3 + config.in_channels;
    init.conv("mff.bf.c0", cm, bf_in, k)?;
    init.prelu("mff.bf.pr", cm)?;
    init.mrb("mff.bf.mrb", cm, k)?;
    init.conv("mff.bf.c1", 3, cm, k)?;

    Ok(init.params)
}

fn conv_of(params: &ParamSet, name: &str, x: &Tensor, dilation: usize, padding: usize) -> Result<Tensor> {
    let w = params.get(&format!("{name}.w"))?;
    let b = params.get(&format!("{name}.b"))?;
    x.conv2d(w, b, dilation, padding)
}

/// Mixed convolutional layer: dilated and standard branches concatenated
/// (dilated first), then layer norm and PReLU.
pub fn mcl_forward(x: &Tensor, params: &ParamSet, name: &str, rate: usize) -> Result<Tensor> {
    let dil = conv_of(params, &format!("{name}.dil"), x, rate, rate)?;
    let std = conv_of(params, &format!("{name}.std"), x, 1, 1)?;
    let cat = concat_channels(&[&dil, &std])?;
    let g = params.get(&format!("{name}.ln.g"))?;
    let b = params.get(&format!("{name}.ln.b"))?;
    let s = params.get(&format!("{name}.pr.s"))?;
    cat.layer_norm(g, b, 1e-5)?.prelu(s)
}

/// Mixed residual block: two chained MCLs, residual add, 3x3 conv, layer
/// norm, PReLU; shape preserved.
pub fn mrb_forward(x: &Tensor, params: &ParamSet, name: &str, rate: usize) -> Result<Tensor> {
    let y = mcl_forward(x, params, &format!("{name}.mcl0"), rate)?;
    let y = mcl_forward(&y, params, &format!("{name}.mcl1"), rate)?;
    let res = y.add(x)?;
    let z = conv_of(params, &format!("{name}.conv"), &res, 1, 1)?;
    let g = params.get(&format!("{name}.ln.g"))?;
    let b = params.get(&format!("{name}.ln.b"))?;
    let s = params.get(&format!("{name}.pr.s"))?;
    z.layer_norm(g, b, 1e-5)?.prelu(s)
}

/// En-decoder coarse extraction over the multi-view input. Returns the
/// full-resolution decoder features and the two encoder skip tensors.
pub fn mce_forward(views: &Tensor, model: &Model) -> Result<(Tensor, Vec<Tensor>)> {
    let cfg = &model.config;
    let p = &model.params;
    let (h, w) = match *views.shape() {
        [_, c, h, w] if c == cfg.in_channels => (h, w),
        _ => {
            return Err(Error::shape(
                "mce_forward",
                format!("expected [N,{},H,W], got {:?}", cfg.in_channels, views.shape()),
            ))
        }
    };
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::shape(
            "mce_forward",
            format!("spatial size {h}x{w} must be a multiple of 4; pad the input first"),
        ));
    }
    let blocks = cfg.blocks_per_level;
    let rates = cfg.level_rates;

    let mut x = conv_of(p, "mce.enc0.entry", views, 1, 0)?;
    for j in 0..blocks {
        x = mrb_forward(&x, p, &format!("mce.enc0.mrb{j:02}"), rates[0])?;
    }
    let skip0 = x.clone();

    let mut x = conv_of(p, "mce.enc1.entry", &x.downsample_avg2()?, 1, 0)?;
    for j in 0..blocks {
        x = mrb_forward(&x, p, &format!("mce.enc1.mrb{j:02}"), rates[1])?;
    }
    let skip1 = x.clone();

    let mut x = conv_of(p, "mce.enc2.entry", &x.downsample_avg2()?, 1, 0)?;
    for j in 0..blocks {
        x = mrb_forward(&x, p, &format!("mce.enc2.mrb{j:02}"), rates[2])?;
    }

    // decoder mirrors the encoder with rates/channels reversed
    let mut x = conv_of(p, "mce.dec1.up", &x.upsample_nearest2()?, 1, 1)?;
    x = conv_of(p, "mce.dec1.fuse", &concat_channels(&[&x, &skip1])?, 1, 0)?;
    for j in 0..blocks {
        x = mrb_forward(&x, p, &format!("mce.dec1.mrb{j:02}"), rates[1])?;
    }

    let mut x = conv_of(p, "mce.dec0.up", &x.upsample_nearest2()?, 1, 1)?;
    x = conv_of(p, "mce.dec0.fuse", &concat_channels(&[&x, &skip0])?, 1, 0)?;
    for j in 0..blocks {
        x = mrb_forward(&x, p, &format!("mce.dec0.mrb{j:02}"), rates[0])?;
    }

    Ok((x, vec![skip0, skip1]))
}

/// Fine fusion: three sigmoid heads (front fusion) and the back-fusion trunk
/// that concatenates decoder features, head outputs and the raw views into
/// the restored RGB.
pub fn mff_forward(decoder_features: &Tensor, views: &Tensor, model: &Model) -> Result<MffOutputs> {
    let p = &model.params;
    let rate = model.config.level_rates[2];
    let mut heads = Vec::with_capacity(3);
    for head in ["gray", "high", "low"] {
        let x = conv_of(p, &format!("mff.{head}.c0"), decoder_features, 1, 1)?;
        let x = x.prelu(p.get(&format!("mff.{head}.pr.s"))?)?;
        let x = conv_of(p, &format!("mff.{head}.c1"), &x, 1, 1)?;
        heads.push(x.sigmoid()?);
    }
    let (gray_f, high_f, low_f) = (heads[0].clone(), heads[1].clone(), heads[2].clone());

    let cat = concat_channels(&[decoder_features, &gray_f, &high_f, &low_f, views])?;
    let x = conv_of(p, "mff.bf.c0", &cat, 1, 1)?;
    let x = x.prelu(p.get("mff.bf.pr.s")?)?;
    let x = mrb_forward(&x, p, "mff.bf.mrb", rate)?;
    let restored = conv_of(p, "mff.bf.c1", &x, 1, 1)?.sigmoid()?;

    Ok(MffOutputs { gray_f, high_f, low_f, restored })
}

/// Frequency-decomposition settings used when assembling network inputs.
#[derive(Debug, Clone, Copy)]
pub struct ViewSettings {
    pub eps: f64,
    pub mode: DecompMode,
    pub kernel_mode: KernelMode,
    pub subsample: usize,
    pub gray: GrayCoeffs,
    /// Ablation switches: zero out the high/low view channels.
    pub use_high_input: bool,
    pub use_low_input: bool,
}

impl Default for ViewSettings {
    fn default() -> Self {
        ViewSettings {
            eps: freq::DEFAULT_EPS,
            mode: DecompMode::Additive,
            kernel_mode: KernelMode::Radius,
            subsample: 1,
            gray: GrayCoeffs::Paper,
            use_high_input: true,
            use_low_input: true,
        }
    }
}

/// Decompose one degraded RGB image and pack the 9 view channels
/// (RGB, then the three high layers, then the three low layers) into a
/// row-major buffer.
pub fn view_channels(degraded: &Image, vs: &ViewSettings) -> Result<Vec<f64>> {
    if degraded.c != 3 {
        return Err(Error::shape(
            "view_channels",
            format!("expected RGB, got {} channels", degraded.c),
        ));
    }
    let gray = freq::to_grayscale(degraded, vs.gray)?;
    let stack = freq::decompose_multiscale(&gray, vs.eps, vs.mode, vs.kernel_mode, vs.subsample)?;
    Ok(pack_views(degraded, &stack, vs))
}

fn pack_views(degraded: &Image, stack: &FreqStack, vs: &ViewSettings) -> Vec<f64> {
    let hw = degraded.h * degraded.w;
    let mut out = vec![0.0; 9 * hw];
    for i in 0..hw {
        out[i] = degraded.data[3 * i];
        out[hw + i] = degraded.data[3 * i + 1];
        out[2 * hw + i] = degraded.data[3 * i + 2];
    }
    if vs.use_high_input {
        for (s, high) in stack.highs.iter().enumerate() {
            out[(3 + s) * hw..][..hw].copy_from_slice(&high.data);
        }
    }
    if vs.use_low_input {
        for (s, low) in stack.lows.iter().enumerate() {
            out[(6 + s) * hw..][..hw].copy_from_slice(&low.data);
        }
    }
    out
}

/// Stack per-image view buffers into one N×9×H×W input tensor.
pub fn batch_views(buffers: &[Vec<f64>], h: usize, w: usize) -> Result<Tensor> {
    let n = buffers.len();
    let per = 9 * h * w;
    let mut data = Vec::with_capacity(n * per);
    for b in buffers {
        if b.len() != per {
            return Err(Error::shape("batch_views", "inconsistent view buffer size"));
        }
        data.extend_from_slice(b);
    }
    Tensor::new(&[n, 9, h, w], data)
}

/// Full forward pass on one degraded image (already padded to a multiple
/// of 4): grayscale, multi-scale decomposition, en-decoder, fine fusion.
pub fn mvksr_forward(degraded: &Image, model: &Model, vs: &ViewSettings) -> Result<MffOutputs> {
    let views = batch_views(&[view_channels(degraded, vs)?], degraded.h, degraded.w)?;
    let (features, _skips) = mce_forward(&views, model)?;
    mff_forward(&features, &views, model)
}

/// Restored tensor (1,3,H,W) back to an image.
pub fn restored_to_image(restored: &Tensor) -> Result<Image> {
    let (h, w) = match *restored.shape() {
        [1, 3, h, w] => (h, w),
        _ => {
            return Err(Error::shape(
                "restored_to_image",
                format!("expected [1,3,H,W], got {:?}", restored.shape()),
            ))
        }
    };
    let d = restored.data();
    let hw = h * w;
    let mut img = Image::new(h, w, 3);
    for i in 0..hw {
        img.data[3 * i] = d[i];
        img.data[3 * i + 1] = d[hw + i];
        img.data[3 * i + 2] = d[2 * hw + i];
    }
    Ok(img)
}
