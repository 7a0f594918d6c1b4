use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    maxpool2, maxpool2_backward, upsample2, upsample2_backward, Conv2d, ConvCache, ConvRelu,
    ConvReluCache, SeCache, SqueezeExcite,
};
use super::tensor::{Grads, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsample {
    MaxPool,
    StridedConv,
}

/// Encoder-decoder with skip connections and a single linear output channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub max_width: usize,
    /// Number of 2× downsamplings.
    pub depth: usize,
    pub convs_per_block: usize,
    pub downsample: Downsample,
    /// One 3×3 convolution per entry, with that dilation.
    pub bottleneck_dilations: Vec<usize>,
    pub squeeze_excitation: bool,
}

impl UNetConfig {
    pub fn width(&self, level: usize) -> usize {
        (self.base_width << level).min(self.max_width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 || self.max_width < self.base_width {
            return Err(Error::invalid("network widths must be positive"));
        }
        if self.convs_per_block == 0 || self.bottleneck_dilations.is_empty() {
            return Err(Error::invalid("every block needs at least one convolution"));
        }
        if self.bottleneck_dilations.contains(&0) {
            return Err(Error::invalid("dilation must be positive"));
        }
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Clone, Debug)]
enum Down {
    Pool,
    Conv(ConvRelu),
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    convs: Vec<ConvRelu>,
    se: Option<SqueezeExcite>,
    up_channels: usize,
}

#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    params: ParamSet,
    encoder: Vec<Vec<ConvRelu>>,
    down: Vec<Down>,
    bottleneck: Vec<ConvRelu>,
    /// Indexed by level, level 0 is full resolution.
    decoder: Vec<DecoderLevel>,
    head: Conv2d,
}

enum DownCache {
    Pool(Vec<u32>, (usize, usize, usize)),
    Conv(ConvReluCache),
}

struct DecoderCache {
    convs: Vec<ConvReluCache>,
    se: Option<SeCache>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct UNetCache {
    encoder: Vec<Vec<ConvReluCache>>,
    down: Vec<DownCache>,
    bottleneck: Vec<ConvReluCache>,
    decoder: Vec<Option<DecoderCache>>,
    head: ConvCache,
}

fn conv_relu(
    ps: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    cin: usize,
    cout: usize,
    stride: usize,
    dilation: usize,
) -> ConvRelu {
    ConvRelu {
        conv: Conv2d::new(ps, rng, cin, cout, 3, stride, dilation),
    }
}

impl UNet {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let depth = config.depth;
        let mut encoder = Vec::with_capacity(depth);
        let mut down = Vec::with_capacity(depth);
        let mut cin = config.in_channels;
        for level in 0..depth {
            let w = config.width(level);
            let mut block = Vec::with_capacity(config.convs_per_block);
            for i in 0..config.convs_per_block {
                block.push(conv_relu(&mut ps, &mut rng, if i == 0 { cin } else { w }, w, 1, 1));
            }
            encoder.push(block);
            down.push(match config.downsample {
                Downsample::MaxPool => Down::Pool,
                Downsample::StridedConv => Down::Conv(conv_relu(&mut ps, &mut rng, w, w, 2, 1)),
            });
            cin = w;
        }
        let wb = config.width(depth);
        let mut bottleneck = Vec::new();
        for (i, d) in config.bottleneck_dilations.iter().enumerate() {
            bottleneck.push(conv_relu(&mut ps, &mut rng, if i == 0 { cin } else { wb }, wb, 1, *d));
        }
        let mut decoder = Vec::with_capacity(depth);
        for level in 0..depth {
            let w = config.width(level);
            let up = config.width(level + 1);
            let mut convs = Vec::with_capacity(config.convs_per_block);
            for i in 0..config.convs_per_block {
                convs.push(conv_relu(&mut ps, &mut rng, if i == 0 { up + w } else { w }, w, 1, 1));
            }
            let se = config
                .squeeze_excitation
                .then(|| SqueezeExcite::new(&mut ps, &mut rng, w, 4));
            decoder.push(DecoderLevel {
                convs,
                se,
                up_channels: up,
            });
        }
        let w0 = if depth == 0 { wb } else { config.width(0) };
        let head = Conv2d::new(&mut ps, &mut rng, w0, 1, 1, 1, 1);
        Ok(Self {
            config,
            params: ps,
            encoder,
            down,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Scales the output projection weights, e.g. to start close to the
    /// constant predictor given by the output bias.
    pub fn scale_head(&mut self, factor: f32) {
        self.params.values[self.head.weight].iter_mut().for_each(|w| *w *= factor);
    }

    pub fn set_output_bias(&mut self, value: f32) {
        self.params.values[self.head.bias][0] = value;
    }

    pub fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        let m = self.config.size_multiple();
        if c != self.config.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::DimensionMismatch(format!(
                "input {h}x{w} is not a positive multiple of {m}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, UNetCache) {
        let ps = &self.params;
        let depth = self.config.depth;
        let mut enc_caches = Vec::with_capacity(depth);
        let mut down_caches = Vec::with_capacity(depth);
        let mut skips = Vec::with_capacity(depth);
        let mut cur = x.clone();
        for level in 0..depth {
            let mut caches = Vec::new();
            for layer in &self.encoder[level] {
                let (out, c) = layer.forward(ps, &cur);
                caches.push(c);
                cur = out;
            }
            enc_caches.push(caches);
            let (next, dc) = match &self.down[level] {
                Down::Pool => {
                    let (p, idx) = maxpool2(&cur);
                    (p, DownCache::Pool(idx, cur.shape()))
                }
                Down::Conv(layer) => {
                    let (p, c) = layer.forward(ps, &cur);
                    (p, DownCache::Conv(c))
                }
            };
            down_caches.push(dc);
            skips.push(cur);
            cur = next;
        }
        let mut bottleneck = Vec::new();
        for layer in &self.bottleneck {
            let (out, c) = layer.forward(ps, &cur);
            bottleneck.push(c);
            cur = out;
        }
        let mut dec_caches: Vec<Option<DecoderCache>> = (0..depth).map(|_| None).collect();
        for level in (0..depth).rev() {
            let dec = &self.decoder[level];
            cur = upsample2(&cur).concat(&skips[level]);
            let mut convs = Vec::new();
            for layer in &dec.convs {
                let (out, c) = layer.forward(ps, &cur);
                convs.push(c);
                cur = out;
            }
            let se = dec.se.as_ref().map(|se| {
                let (out, c) = se.forward(ps, &cur);
                cur = out;
                c
            });
            dec_caches[level] = Some(DecoderCache { convs, se });
        }
        let (out, head) = self.head.forward(ps, &cur);
        (
            out,
            UNetCache {
                encoder: enc_caches,
                down: down_caches,
                bottleneck,
                decoder: dec_caches,
                head,
            },
        )
    }

    pub fn predict(&self, x: &Tensor) -> Tensor {
        self.forward(x).0
    }

    /// Accumulates `d(loss)/d(params)` given `d(loss)/d(output)`.
    pub fn backward(&self, cache: &UNetCache, dout: &Tensor, grads: &mut Grads) {
        let ps = &self.params;
        let depth = self.config.depth;
        let mut d = self
            .head
            .backward(ps, &cache.head, dout, grads, true)
            .expect("head input gradient");
        let mut skip_grads: Vec<Option<Tensor>> = (0..depth).map(|_| None).collect();
        for level in 0..depth {
            let dec = &self.decoder[level];
            let dc = cache.decoder[level].as_ref().expect("decoder cache");
            if let (Some(se), Some(sc)) = (&dec.se, &dc.se) {
                d = se.backward(ps, sc, &d, grads);
            }
            for (layer, c) in dec.convs.iter().zip(&dc.convs).rev() {
                d = layer.backward(ps, c, &d, grads, true).expect("decoder gradient");
            }
            let (d_up, d_skip) = d.split(dec.up_channels);
            skip_grads[level] = Some(d_skip);
            d = upsample2_backward(&d_up);
        }
        let n_bottleneck = self.bottleneck.len();
        for (i, (layer, c)) in self.bottleneck.iter().zip(&cache.bottleneck).enumerate().rev() {
            let need = depth > 0 || i > 0;
            match layer.backward(ps, c, &d, grads, need) {
                Some(g) => d = g,
                None => debug_assert!(i == 0 && n_bottleneck > 0),
            }
        }
        for level in (0..depth).rev() {
            d = match (&self.down[level], &cache.down[level]) {
                (Down::Pool, DownCache::Pool(idx, shape)) => maxpool2_backward(&d, idx, *shape),
                (Down::Conv(layer), DownCache::Conv(c)) => {
                    layer.backward(ps, c, &d, grads, true).expect("down gradient")
                }
                _ => unreachable!("cache kind follows layer kind"),
            };
            let skip = skip_grads[level].take().expect("skip gradient");
            for (a, b) in d.data.iter_mut().zip(&skip.data) {
                *a += *b;
            }
            let block = &self.encoder[level];
            for (i, (layer, c)) in block.iter().zip(&cache.encoder[level]).enumerate().rev() {
                let need = level > 0 || i > 0;
                if let Some(g) = layer.backward(ps, c, &d, grads, need) {
                    d = g;
                }
            }
        }
    }

    /// Multiply-accumulate count of one forward pass at `h × w`.
    pub fn forward_macs(&self, h: usize, w: usize) -> u64 {
        let mut total = 0u64;
        let conv_macs = |c: &Conv2d, h: usize, w: usize| -> u64 {
            let (ho, wo) = c.out_hw(h, w);
            (ho * wo * c.cin * c.cout * c.k * c.k) as u64
        };
        let (mut h, mut w) = (h, w);
        for level in 0..self.config.depth {
            for l in &self.encoder[level] {
                total += conv_macs(&l.conv, h, w);
            }
            if let Down::Conv(l) = &self.down[level] {
                total += conv_macs(&l.conv, h, w);
            }
            for l in &self.decoder[level].convs {
                total += conv_macs(&l.conv, h, w);
            }
            h /= 2;
            w /= 2;
        }
        for l in &self.bottleneck {
            total += conv_macs(&l.conv, h, w);
        }
        total
    }
}
