//! Four-level U-shaped encoder-decoder with skip connections.
//!
//! Encoder widths are `w, 2w, 4w, 8w` (the last level is the bottleneck);
//! each level is two 3x3 conv + leaky ReLU layers, levels are joined by 2x2 max
//! pooling. The decoder upsamples by nearest neighbour, concatenates the
//! matching encoder output, and applies two more 3x3 conv + leaky ReLU layers. A
//! 1x1 conv produces the class logits.

use rand::Rng;

use super::layers::{
    concat, max_pool2, max_pool2_backward, leaky_relu_backward_inplace, leaky_relu_inplace, split, upsample2,
    upsample2_backward, Conv2d,
};
use super::{Gradients, ModelConfig, SegmentationNetwork};
use crate::error::{ensure, Result};
use crate::real::Real;
use crate::tensor::Tensor3;

const LEVELS: usize = 4;
/// Input sides must be divisible by `2^(LEVELS-1)`.
pub const SIZE_MULTIPLE: usize = 1 << (LEVELS - 1);

#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    config: ModelConfig,
    /// Encoder levels then decoder levels (deepest first), two convs each,
    /// followed by the 1x1 head.
    convs: Vec<Conv2d<T>>,
}

/// Activations kept from a training-mode forward pass.
#[derive(Debug)]
pub struct UNetCache<T> {
    input: Tensor3<T>,
    /// Per encoder level: first conv output, second conv output (post-activation).
    enc: Vec<(Tensor3<T>, Tensor3<T>)>,
    /// Pooled maps feeding levels 1..LEVELS and their argmax indices.
    pooled: Vec<(Tensor3<T>, Vec<u32>)>,
    /// Per decoder level (deepest first): concatenated input, first and
    /// second conv outputs.
    dec: Vec<(Tensor3<T>, Tensor3<T>, Tensor3<T>)>,
}

impl<T: Real> UNet<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.base_width;
        let mut convs = Vec::with_capacity(4 * LEVELS - 1);
        let mut cin = config.in_channels;
        for level in 0..LEVELS {
            let cout = w << level;
            convs.push(Conv2d::new(&format!("enc{level}.conv1"), cin, cout, 3, rng));
            convs.push(Conv2d::new(&format!("enc{level}.conv2"), cout, cout, 3, rng));
            cin = cout;
        }
        for level in (0..LEVELS - 1).rev() {
            let skip = w << level;
            convs.push(Conv2d::new(&format!("dec{level}.conv1"), cin + skip, skip, 3, rng));
            convs.push(Conv2d::new(&format!("dec{level}.conv2"), skip, skip, 3, rng));
            cin = skip;
        }
        convs.push(Conv2d::new("head", cin, config.num_classes, 1, rng));
        Ok(Self { config, convs })
    }

    pub fn convs(&self) -> &[Conv2d<T>] {
        &self.convs
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Real>(&self) -> UNet<U> {
        UNet {
            config: self.config.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| Conv2d {
                    name: c.name.clone(),
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    weight: c.weight.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                    bias: c.bias.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }

    fn enc_conv(&self, level: usize, i: usize) -> &Conv2d<T> {
        &self.convs[2 * level + i]
    }

    /// Decoder level `level` (0 = shallowest).
    fn dec_conv_index(level: usize, i: usize) -> usize {
        2 * LEVELS + 2 * (LEVELS - 2 - level) + i
    }

    fn head_index() -> usize {
        4 * LEVELS - 2
    }

    fn check_input(&self, x: &Tensor3<T>) -> Result<()> {
        ensure!(
            x.channels == self.config.in_channels,
            InvalidInput,
            "model expects {} input channels, got {}",
            self.config.in_channels,
            x.channels
        );
        ensure!(
            x.height > 0 && x.width > 0 && x.height % SIZE_MULTIPLE == 0 && x.width % SIZE_MULTIPLE == 0,
            InvalidInput,
            "input {}x{} must have sides divisible by {SIZE_MULTIPLE}",
            x.height,
            x.width
        );
        Ok(())
    }

    fn conv_relu(conv: &Conv2d<T>, x: &Tensor3<T>) -> Tensor3<T> {
        let mut y = conv.forward(x);
        leaky_relu_inplace(&mut y);
        y
    }

    fn run(&self, x: &Tensor3<T>, keep: bool) -> (Tensor3<T>, Option<UNetCache<T>>) {
        let mut enc: Vec<(Tensor3<T>, Tensor3<T>)> = Vec::with_capacity(LEVELS);
        let mut pooled = Vec::with_capacity(LEVELS - 1);
        let mut cur = x.clone();
        for level in 0..LEVELS {
            if level > 0 {
                let (p, arg) = max_pool2(&enc[level - 1].1);
                cur = p.clone();
                pooled.push((p, arg));
            }
            let a = Self::conv_relu(self.enc_conv(level, 0), &cur);
            let b = Self::conv_relu(self.enc_conv(level, 1), &a);
            enc.push((a, b));
        }
        let mut dec = Vec::with_capacity(LEVELS - 1);
        let mut up_src = enc[LEVELS - 1].1.clone();
        for level in (0..LEVELS - 1).rev() {
            let cat = concat(&upsample2(&up_src), &enc[level].1);
            let a = Self::conv_relu(&self.convs[Self::dec_conv_index(level, 0)], &cat);
            let b = Self::conv_relu(&self.convs[Self::dec_conv_index(level, 1)], &a);
            up_src = b.clone();
            dec.push((cat, a, b));
        }
        let logits = self.convs[Self::head_index()].forward(&up_src);
        let cache = keep.then(|| UNetCache {
            input: x.clone(),
            enc,
            pooled,
            dec,
        });
        (logits, cache)
    }
}

impl<T: Real> SegmentationNetwork<T> for UNet<T> {
    type Cache = UNetCache<T>;

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_input(x)?;
        Ok(self.run(x, false).0)
    }

    fn forward_train(&self, x: &Tensor3<T>) -> Result<(Tensor3<T>, UNetCache<T>)> {
        self.check_input(x)?;
        let (logits, cache) = self.run(x, true);
        Ok((logits, cache.expect("cache requested")))
    }

    fn backward(&self, cache: &UNetCache<T>, grad_logits: &Tensor3<T>, grads: &mut Gradients<T>) {
        let head = Self::head_index();
        let top = &cache.dec.last().expect("decoder levels").2;
        let (gw, gb) = grads.pair_mut(head);
        let mut g = self.convs[head]
            .backward(top, grad_logits, gw, gb, true)
            .expect("input grad");

        // Gradients flowing into each encoder output through skip connections.
        let mut skip_grads: Vec<Option<Tensor3<T>>> = (0..LEVELS).map(|_| None).collect();
        for step in (0..LEVELS - 1).rev() {
            let level = LEVELS - 2 - step;
            let (cat, a, b) = &cache.dec[step];
            leaky_relu_backward_inplace(b, &mut g);
            let i2 = Self::dec_conv_index(level, 1);
            let (gw, gb) = grads.pair_mut(i2);
            let mut ga = self.convs[i2].backward(a, &g, gw, gb, true).expect("input grad");
            leaky_relu_backward_inplace(a, &mut ga);
            let i1 = Self::dec_conv_index(level, 0);
            let (gw, gb) = grads.pair_mut(i1);
            let gcat = self.convs[i1].backward(cat, &ga, gw, gb, true).expect("input grad");
            let up_channels = cat.channels - cache.enc[level].1.channels;
            let (gup, gskip) = split(gcat, up_channels);
            skip_grads[level] = Some(gskip);
            g = upsample2_backward(&gup);
        }

        for level in (0..LEVELS).rev() {
            if let Some(s) = skip_grads[level].take() {
                for (x, y) in g.data.iter_mut().zip(&s.data) {
                    *x = *x + *y;
                }
            }
            let (a, b) = &cache.enc[level];
            leaky_relu_backward_inplace(b, &mut g);
            let i2 = 2 * level + 1;
            let (gw, gb) = grads.pair_mut(i2);
            let mut ga = self.convs[i2].backward(a, &g, gw, gb, true).expect("input grad");
            leaky_relu_backward_inplace(a, &mut ga);
            let input = if level == 0 { &cache.input } else { &cache.pooled[level - 1].0 };
            let i1 = 2 * level;
            let (gw, gb) = grads.pair_mut(i1);
            let gin = self.convs[i1].backward(input, &ga, gw, gb, level > 0);
            if level > 0 {
                let prev = &cache.enc[level - 1].1;
                g = max_pool2_backward(
                    &cache.pooled[level - 1].1,
                    &gin.expect("input grad"),
                    prev.channels,
                    prev.height,
                    prev.width,
                );
            }
        }
    }

    fn param_names(&self) -> Vec<String> {
        self.convs
            .iter()
            .flat_map(|c| [format!("{}.weight", c.name), format!("{}.bias", c.name)])
            .collect()
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.convs
            .iter()
            .flat_map(|c| {
                [
                    vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                    vec![c.out_channels],
                ]
            })
            .collect()
    }

    fn params(&self) -> Vec<&[T]> {
        self.convs
            .iter()
            .flat_map(|c| [c.weight.as_slice(), c.bias.as_slice()])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.convs
            .iter_mut()
            .flat_map(|c| [c.weight.as_mut_slice(), c.bias.as_mut_slice()])
            .collect()
    }
}
