//! Encoder-decoder network with skip connections.
//!
//! ```text
//! encoder unit d : [conv3x3 -> relu -> batchnorm] x2 -> maxpool2   (skip taken before pooling)
//! bottleneck     : [conv3x3 -> relu -> batchnorm] x2
//! decoder unit d : upsample -> concat(up, skip d) -> dropout -> [conv3x3 -> relu -> batchnorm] x2
//! head           : conv1x1 -> sigmoid
//! ```
//!
//! Level `d` carries `base_filters * 2^d` channels. Interpolating upsamplers
//! are followed by a 1x1 convolution so every upsample mode halves the
//! channel count exactly like the transposed convolution does.

use serde::{Deserialize, Serialize};

use super::layers::*;
use super::params::{Gradients, ParamKind, ParameterStore};
use crate::error::{invalid, shape_err, Error, Result};
use crate::image::Tensor;
use crate::prng::Prng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Transposed,
    Bilinear,
    Bicubic,
    Nearest,
}

impl UpsampleMode {
    pub const ALL: [UpsampleMode; 4] = [
        UpsampleMode::Transposed,
        UpsampleMode::Bilinear,
        UpsampleMode::Bicubic,
        UpsampleMode::Nearest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UpsampleMode::Transposed => "transposed",
            UpsampleMode::Bilinear => "bilinear",
            UpsampleMode::Bicubic => "bicubic",
            UpsampleMode::Nearest => "nearest",
        }
    }

    fn interp(self) -> Option<InterpMode> {
        match self {
            UpsampleMode::Transposed => None,
            UpsampleMode::Bilinear => Some(InterpMode::Bilinear),
            UpsampleMode::Bicubic => Some(InterpMode::Bicubic),
            UpsampleMode::Nearest => Some(InterpMode::Nearest),
        }
    }
}

impl std::str::FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UpsampleMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid!("unknown upsample mode {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    /// Encoder (and decoder) unit count.
    pub depth: usize,
    pub base_filters: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub upsample: UpsampleMode,
    pub dropout_p: f64,
    pub input_size: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 3,
            base_filters: 16,
            in_channels: 1,
            out_channels: 1,
            upsample: UpsampleMode::Transposed,
            dropout_p: 0.3,
            input_size: 64,
        }
    }
}

impl UNetConfig {
    pub const DEPTHS: std::ops::RangeInclusive<usize> = 3..=6;

    pub fn validate(&self) -> Result<()> {
        if !Self::DEPTHS.contains(&self.depth) {
            return Err(invalid!("depth {} outside 3..=6", self.depth));
        }
        if self.base_filters == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid!("channel counts must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(invalid!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        self.check_spatial(self.input_size, self.input_size)
    }

    pub fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let block = 1usize << self.depth;
        if h % block != 0 || w % block != 0 {
            return Err(invalid!(
                "spatial size {h}x{w} is not divisible by 2^{} = {block}",
                self.depth
            ));
        }
        if h < 2 * block || w < 2 * block {
            return Err(invalid!(
                "spatial size {h}x{w} leaves a bottleneck smaller than 2x2 at depth {}",
                self.depth
            ));
        }
        Ok(())
    }

    /// Channel count at level `d`.
    pub fn channels(&self, d: usize) -> usize {
        self.base_filters << d
    }
}

fn add_conv_bn(store: &mut ParameterStore, prefix: &str, cin: usize, cout: usize) {
    store.add(format!("{prefix}.w"), ParamKind::Kernel, cin * 9, Tensor::zeros(&[cout, cin, 3, 3]));
    store.add(format!("{prefix}.b"), ParamKind::Bias, 0, Tensor::zeros(&[cout]));
    store.add(format!("{prefix}.bn_scale"), ParamKind::BnScale, 0, Tensor::zeros(&[cout]));
    store.add(format!("{prefix}.bn_shift"), ParamKind::BnShift, 0, Tensor::zeros(&[cout]));
    store.add(format!("{prefix}.bn_mean"), ParamKind::BnMean, 0, Tensor::zeros(&[cout]));
    store.add(format!("{prefix}.bn_var"), ParamKind::BnVar, 0, Tensor::zeros(&[cout]));
}

/// Allocates every tensor of the architecture (uninitialized: all zeros).
pub fn build_store(cfg: &UNetConfig) -> Result<ParameterStore> {
    cfg.validate()?;
    let mut s = ParameterStore::new();
    for d in 0..cfg.depth {
        let cin = if d == 0 { cfg.in_channels } else { cfg.channels(d - 1) };
        add_conv_bn(&mut s, &format!("enc{d}.conv1"), cin, cfg.channels(d));
        add_conv_bn(&mut s, &format!("enc{d}.conv2"), cfg.channels(d), cfg.channels(d));
    }
    let (below, mid) = (cfg.channels(cfg.depth - 1), cfg.channels(cfg.depth));
    add_conv_bn(&mut s, "mid.conv1", below, mid);
    add_conv_bn(&mut s, "mid.conv2", mid, mid);
    for d in (0..cfg.depth).rev() {
        let (up_in, c) = (cfg.channels(d + 1), cfg.channels(d));
        let kernel = match cfg.upsample {
            UpsampleMode::Transposed => Tensor::zeros(&[up_in, c, 2, 2]),
            _ => Tensor::zeros(&[c, up_in, 1, 1]),
        };
        s.add(format!("dec{d}.up.w"), ParamKind::Kernel, up_in, kernel);
        s.add(format!("dec{d}.up.b"), ParamKind::Bias, 0, Tensor::zeros(&[c]));
        add_conv_bn(&mut s, &format!("dec{d}.conv1"), 2 * c, c);
        add_conv_bn(&mut s, &format!("dec{d}.conv2"), c, c);
    }
    let c0 = cfg.channels(0);
    s.add("head.w".into(), ParamKind::Kernel, c0, Tensor::zeros(&[cfg.out_channels, c0, 1, 1]));
    s.add("head.b".into(), ParamKind::Bias, 0, Tensor::zeros(&[cfg.out_channels]));
    Ok(s)
}

/// Fresh He-initialized parameters.
pub fn init_params(cfg: &UNetConfig, g: &mut Prng) -> Result<ParameterStore> {
    let mut s = build_store(cfg)?;
    s.he_init(g);
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct ConvBnCache {
    pub prefix: String,
    input: Tensor,
    pre: Tensor,
    pub bn: BnCache,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    pub convs: [ConvBnCache; 2],
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub block: BlockCache,
    pool_argmax: Vec<usize>,
    /// Pooled output of the unit.
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    up_input: Tensor,
    interp_output: Option<Tensor>,
    up_channels: usize,
    dropout_mask: Vec<f64>,
    pub block: BlockCache,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub version: u64,
    pub cfg: UNetConfig,
    pub mode: Mode,
    pub input_shape: Vec<usize>,
    /// Indexed by level `d`.
    pub encoders: Vec<EncoderCache>,
    pub bottleneck: BlockCache,
    /// Indexed by level `d`.
    pub decoders: Vec<DecoderCache>,
    head_input: Tensor,
    pub output: Tensor,
}

impl ForwardCache {
    /// True when both passes took the same branch at every relu and max-pool,
    /// i.e. the network is locally the same smooth function.
    pub fn same_activation_pattern(&self, other: &ForwardCache) -> bool {
        let relu_same = self
            .conv_bn_caches()
            .zip(other.conv_bn_caches())
            .all(|(a, b)| a.pre.data().iter().zip(b.pre.data()).all(|(u, v)| (*u > 0.0) == (*v > 0.0)));
        let pool_same = self
            .encoders
            .iter()
            .zip(&other.encoders)
            .all(|(a, b)| a.pool_argmax == b.pool_argmax);
        relu_same && pool_same
    }

    /// All conv-bn caches, for running-statistics updates.
    pub fn conv_bn_caches(&self) -> impl Iterator<Item = &ConvBnCache> {
        self.encoders
            .iter()
            .map(|e| &e.block)
            .chain(std::iter::once(&self.bottleneck))
            .chain(self.decoders.iter().map(|d| &d.block))
            .flat_map(|b| b.convs.iter())
    }
}

fn conv_bn_forward(params: &ParameterStore, prefix: &str, x: &Tensor, mode: Mode) -> Result<(Tensor, ConvBnCache)> {
    let p = |s: &str| params.get(&format!("{prefix}.{s}"));
    let pre = conv2d(x, p("w"), p("b"))?;
    let act = relu(&pre);
    let (y, bn) = batchnorm(&act, p("bn_scale"), p("bn_shift"), p("bn_mean"), p("bn_var"), mode)?;
    Ok((
        y,
        ConvBnCache {
            prefix: prefix.to_string(),
            input: x.clone(),
            pre,
            bn,
        },
    ))
}

fn conv_bn_backward(params: &ParameterStore, cache: &ConvBnCache, dy: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
    let name = |s: &str| format!("{}.{s}", cache.prefix);
    let bn = batchnorm_back(&cache.bn, params.get(&name("bn_scale")), dy)?;
    grads.add(params, &name("bn_scale"), &bn.dscale);
    grads.add(params, &name("bn_shift"), &bn.dshift);
    let dpre = relu_back(&cache.pre, &bn.dx);
    let conv = conv2d_back(&cache.input, params.get(&name("w")), &dpre)?;
    grads.add(params, &name("w"), &conv.dk);
    grads.add(params, &name("b"), &conv.db);
    Ok(conv.dx)
}

fn block_forward(params: &ParameterStore, prefix: &str, x: &Tensor, mode: Mode) -> Result<BlockCache> {
    let (h1, c1) = conv_bn_forward(params, &format!("{prefix}.conv1"), x, mode)?;
    let (h2, c2) = conv_bn_forward(params, &format!("{prefix}.conv2"), &h1, mode)?;
    Ok(BlockCache {
        convs: [c1, c2],
        output: h2,
    })
}

fn block_backward(params: &ParameterStore, cache: &BlockCache, dy: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
    let d1 = conv_bn_backward(params, &cache.convs[1], dy, grads)?;
    conv_bn_backward(params, &cache.convs[0], &d1, grads)
}

pub fn unet_forward(
    cfg: &UNetConfig,
    params: &ParameterStore,
    x: &Tensor,
    mode: Mode,
    g: &mut Prng,
) -> Result<(Tensor, ForwardCache)> {
    cfg.validate()?;
    let [_, c, h, w] = x.dims4()?;
    if c != cfg.in_channels {
        return Err(shape_err!("input has {c} channels, network expects {}", cfg.in_channels));
    }
    cfg.check_spatial(h, w)?;

    let mut encoders = Vec::with_capacity(cfg.depth);
    let mut cur = x.clone();
    for d in 0..cfg.depth {
        let block = block_forward(params, &format!("enc{d}"), &cur, mode)?;
        let (pooled, arg) = maxpool2(&block.output)?;
        cur = pooled.clone();
        encoders.push(EncoderCache {
            block,
            pool_argmax: arg,
            output: pooled,
        });
    }
    let bottleneck = block_forward(params, "mid", &cur, mode)?;
    cur = bottleneck.output.clone();

    let mut decoders: Vec<Option<DecoderCache>> = vec![None; cfg.depth];
    for d in (0..cfg.depth).rev() {
        let (wname, bname) = (format!("dec{d}.up.w"), format!("dec{d}.up.b"));
        let (up, interp_output) = match cfg.upsample.interp() {
            None => (transposed_conv2(&cur, params.get(&wname), params.get(&bname))?, None),
            Some(m) => {
                let big = upsample_interp(&cur, m)?;
                (conv2d(&big, params.get(&wname), params.get(&bname))?, Some(big))
            }
        };
        let up_channels = up.shape()[1];
        let merged = concat_channels(&up, &encoders[d].block.output)?;
        let (dropped, mask) = dropout(&merged, cfg.dropout_p, g, mode)?;
        let block = block_forward(params, &format!("dec{d}"), &dropped, mode)?;
        let up_input = std::mem::replace(&mut cur, block.output.clone());
        decoders[d] = Some(DecoderCache {
            up_input,
            interp_output,
            up_channels,
            dropout_mask: mask,
            block,
        });
    }

    let logits = conv2d(&cur, params.get("head.w"), params.get("head.b"))?;
    let y = sigmoid(&logits);
    let cache = ForwardCache {
        version: params.version(),
        cfg: *cfg,
        mode,
        input_shape: x.shape().to_vec(),
        encoders,
        bottleneck,
        decoders: decoders.into_iter().map(|d| d.expect("every level decoded")).collect(),
        head_input: cur,
        output: y.clone(),
    };
    Ok((y, cache))
}

/// Reverse-mode gradients of every trainable tensor given `dL/dy`.
pub fn unet_backward(cfg: &UNetConfig, params: &ParameterStore, cache: &ForwardCache, dl_dy: &Tensor) -> Result<Gradients> {
    if cache.version != params.version() {
        return Err(Error::StaleCache(format!(
            "cache recorded parameter version {}, store is at {}",
            cache.version,
            params.version()
        )));
    }
    if cache.cfg != *cfg {
        return Err(Error::StaleCache("cache was recorded with a different configuration".into()));
    }
    if dl_dy.shape() != cache.output.shape() {
        return Err(shape_err!("dL/dy {:?} vs output {:?}", dl_dy.shape(), cache.output.shape()));
    }
    let mut grads = Gradients::zeros_like(params);

    let dlogits = sigmoid_back(&cache.output, dl_dy);
    let head = conv2d_back(&cache.head_input, params.get("head.w"), &dlogits)?;
    grads.add(params, "head.w", &head.dk);
    grads.add(params, "head.b", &head.db);
    let mut cur = head.dx;

    let mut skip_grads: Vec<Tensor> = Vec::with_capacity(cfg.depth);
    for (d, dec) in cache.decoders.iter().enumerate() {
        let ddrop = block_backward(params, &dec.block, &cur, &mut grads)?;
        let dmerged = dropout_back(&dec.dropout_mask, &ddrop);
        let (dup, dskip) = split_channels(&dmerged, dec.up_channels)?;
        skip_grads.push(dskip);
        let (wname, bname) = (format!("dec{d}.up.w"), format!("dec{d}.up.b"));
        cur = match (cfg.upsample.interp(), &dec.interp_output) {
            (None, _) => {
                let gr = transposed_conv2_back(&dec.up_input, params.get(&wname), &dup)?;
                grads.add(params, &wname, &gr.dk);
                grads.add(params, &bname, &gr.db);
                gr.dx
            }
            (Some(m), Some(big)) => {
                let gr = conv2d_back(big, params.get(&wname), &dup)?;
                grads.add(params, &wname, &gr.dk);
                grads.add(params, &bname, &gr.db);
                upsample_interp_back(dec.up_input.shape(), m, &gr.dx)?
            }
            (Some(_), None) => return Err(Error::StaleCache("interpolation output missing from cache".into())),
        };
    }

    cur = block_backward(params, &cache.bottleneck, &cur, &mut grads)?;
    for d in (0..cfg.depth).rev() {
        let enc = &cache.encoders[d];
        let mut dblock = maxpool2_back(enc.block.output.shape(), &enc.pool_argmax, &cur)?;
        for (a, b) in dblock.data_mut().iter_mut().zip(skip_grads[d].data()) {
            *a += b;
        }
        cur = block_backward(params, &enc.block, &dblock, &mut grads)?;
    }
    Ok(grads)
}

/// Folds a train-mode cache's batch statistics into the running averages:
/// `running = momentum * running + (1 - momentum) * batch`.
pub fn update_running_stats(params: &mut ParameterStore, cache: &ForwardCache) -> Result<()> {
    if cache.mode != Mode::Train {
        return Ok(());
    }
    for conv in cache.conv_bn_caches() {
        for (suffix, batch) in [("bn_mean", &conv.bn.batch_mean), ("bn_var", &conv.bn.batch_var)] {
            let name = format!("{}.{suffix}", conv.prefix);
            let old = params.get(&name);
            let data = old
                .data()
                .iter()
                .zip(batch.iter())
                .map(|(r, b)| (BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b) as f32 as f64)
                .collect();
            let t = Tensor::from_vec(old.shape().to_vec(), data)?;
            params.set(&name, t)?;
        }
    }
    Ok(())
}
