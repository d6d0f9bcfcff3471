//! Building blocks: conv+BN+ReLU units, Inception blocks, down-sampling
//! blocks, the dilated-convolution cascade and decoder stages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::InceptionBlockConfig;
use crate::error::{AvError, Result};
use crate::ops::{self, BatchNorm2d, Conv2dSpec, Mode};
use crate::tensor::{Element, GradTape, Tensor};
use crate::util::{fnv1a64, mix2};

/// Convolution with optional BN, ReLU and (train-mode) dropout. Every
/// unit owns a stable name used for checkpoint keys and for deriving its
/// per-layer dropout stream.
pub(crate) struct ConvUnit<E: Element> {
    pub name: String,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub spec: Conv2dSpec,
    pub bn: Option<BatchNorm2d<E>>,
    pub relu: bool,
    pub dropout_rate: f64,
    salt: u64,
}

impl<E: Element> ConvUnit<E> {
    /// Conv -> BN -> ReLU (-> dropout when `dropout_rate > 0`).
    pub fn bn_relu(name: String, spec: Conv2dSpec, dropout_rate: f64, rng: &mut ChaCha8Rng) -> Self {
        let (weight, bias) = init_conv_params(&spec, rng);
        let salt = fnv1a64(name.as_bytes());
        ConvUnit {
            name,
            weight,
            bias,
            bn: Some(BatchNorm2d::new(spec.out_channels)),
            relu: true,
            dropout_rate,
            spec,
            salt,
        }
    }

    /// Bare convolution (used by the class head).
    pub fn plain(name: String, spec: Conv2dSpec, rng: &mut ChaCha8Rng) -> Self {
        let (weight, bias) = init_conv_params(&spec, rng);
        let salt = fnv1a64(name.as_bytes());
        ConvUnit {
            name,
            weight,
            bias,
            bn: None,
            relu: false,
            dropout_rate: 0.0,
            spec,
            salt,
        }
    }

    pub fn forward(&self, tape: &GradTape<E>, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let mut y = ops::conv2d(tape, x, &self.weight, &self.bias, &self.spec)?;
        if let Some(bn) = &self.bn {
            y = ops::batchnorm2d(tape, &y, bn, mode)?;
        }
        if self.relu {
            y = ops::relu(tape, &y)?;
        }
        if self.dropout_rate > 0.0 {
            if let Mode::Train { dropout_seed } = mode {
                y = ops::dropout(
                    tape,
                    &y,
                    self.dropout_rate,
                    mode,
                    mix2(dropout_seed, self.salt),
                )?;
            }
        }
        Ok(y)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(String, &Tensor<E>)) {
        f(format!("{}.conv.weight", self.name), &self.weight);
        f(format!("{}.conv.bias", self.name), &self.bias);
        if let Some(bn) = &self.bn {
            f(format!("{}.bn.gamma", self.name), &bn.gamma);
            f(format!("{}.bn.beta", self.name), &bn.beta);
        }
    }

    pub fn visit_params_mut(
        &mut self,
        f: &mut dyn FnMut(String, &mut Tensor<E>) -> Result<()>,
    ) -> Result<()> {
        f(format!("{}.conv.weight", self.name), &mut self.weight)?;
        f(format!("{}.conv.bias", self.name), &mut self.bias)?;
        if let Some(bn) = &mut self.bn {
            f(format!("{}.bn.gamma", self.name), &mut bn.gamma)?;
            f(format!("{}.bn.beta", self.name), &mut bn.beta)?;
        }
        Ok(())
    }

    pub fn visit_bn(&self, f: &mut dyn FnMut(String, &BatchNorm2d<E>)) {
        if let Some(bn) = &self.bn {
            f(self.name.clone(), bn);
        }
    }
}

/// Fan-in-scaled Gaussian weights, zero bias.
fn init_conv_params<E: Element>(spec: &Conv2dSpec, rng: &mut ChaCha8Rng) -> (Tensor<E>, Tensor<E>) {
    let fan_in = (spec.in_channels * spec.kernel_h * spec.kernel_w) as f64;
    let std = (2.0 / fan_in).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let count = spec.out_channels * spec.in_channels * spec.kernel_h * spec.kernel_w;
    let weights: Vec<E> = (0..count).map(|_| E::of_f64(normal.sample(rng))).collect();
    let weight = Tensor::param(
        vec![spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w],
        weights,
    )
    .expect("sized buffer");
    let bias = Tensor::param(vec![spec.out_channels], vec![E::zero(); spec.out_channels])
        .expect("sized buffer");
    (weight, bias)
}

/// Four parallel branches, each emitting a quarter of the output
/// channels: 1x1; 1x1 -> 3x3; 1x1 -> 1x7 -> 7x1; 3x3 maxpool -> 1x1.
/// Branch outputs are channel-concatenated; spatial size is preserved.
pub(crate) struct InceptionBlock<E: Element> {
    b1: ConvUnit<E>,
    b2_reduce: ConvUnit<E>,
    b2_conv: ConvUnit<E>,
    b3_reduce: ConvUnit<E>,
    b3_row: ConvUnit<E>,
    b3_col: ConvUnit<E>,
    b4_proj: ConvUnit<E>,
}

impl<E: Element> InceptionBlock<E> {
    pub fn build(prefix: &str, cfg: InceptionBlockConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let quarter = cfg.out_channels / 4;
        let (inc, dr) = (cfg.in_channels, cfg.dropout_rate);
        let unit = |name: &str, spec: Conv2dSpec, rng: &mut ChaCha8Rng| {
            ConvUnit::bn_relu(format!("{prefix}.{name}"), spec, dr, rng)
        };
        Ok(InceptionBlock {
            b1: unit("b1", Conv2dSpec::same(inc, quarter, 1, 1, 1)?, rng),
            b2_reduce: unit("b2r", Conv2dSpec::same(inc, quarter, 1, 1, 1)?, rng),
            b2_conv: unit("b2", Conv2dSpec::same(quarter, quarter, 3, 3, 1)?, rng),
            b3_reduce: unit("b3r", Conv2dSpec::same(inc, quarter, 1, 1, 1)?, rng),
            // Asymmetric kernels use same-padding (0,3) and (3,0).
            b3_row: unit("b3row", Conv2dSpec::same(quarter, quarter, 1, 7, 1)?, rng),
            b3_col: unit("b3col", Conv2dSpec::same(quarter, quarter, 7, 1, 1)?, rng),
            b4_proj: unit("b4", Conv2dSpec::same(inc, quarter, 1, 1, 1)?, rng),
        })
    }

    pub fn forward(&self, tape: &GradTape<E>, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let p1 = self.b1.forward(tape, x, mode)?;
        let p2 = {
            let r = self.b2_reduce.forward(tape, x, mode)?;
            self.b2_conv.forward(tape, &r, mode)?
        };
        let p3 = {
            let r = self.b3_reduce.forward(tape, x, mode)?;
            let row = self.b3_row.forward(tape, &r, mode)?;
            self.b3_col.forward(tape, &row, mode)?
        };
        let p4 = {
            let pooled = ops::maxpool2d(tape, x, 3, 1, 1)?;
            self.b4_proj.forward(tape, &pooled, mode)?
        };
        ops::concat_channels(tape, &[&p1, &p2, &p3, &p4])
    }

    pub fn units(&self) -> [&ConvUnit<E>; 7] {
        [
            &self.b1,
            &self.b2_reduce,
            &self.b2_conv,
            &self.b3_reduce,
            &self.b3_row,
            &self.b3_col,
            &self.b4_proj,
        ]
    }

    pub fn units_mut(&mut self) -> [&mut ConvUnit<E>; 7] {
        [
            &mut self.b1,
            &mut self.b2_reduce,
            &mut self.b2_conv,
            &mut self.b3_reduce,
            &mut self.b3_row,
            &mut self.b3_col,
            &mut self.b4_proj,
        ]
    }
}

/// Information-preserving downsampling: concat(2x2 maxpool, strided 3x3
/// conv), both halving H and W, then a 1x1 merge to the target width.
pub(crate) struct DownsampleBlock<E: Element> {
    strided: ConvUnit<E>,
    merge: ConvUnit<E>,
}

impl<E: Element> DownsampleBlock<E> {
    pub fn build(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(DownsampleBlock {
            strided: ConvUnit::bn_relu(
                format!("{prefix}.strided"),
                Conv2dSpec::new(in_channels, in_channels, 3, 3, 2, 1, 1, 1)?,
                dropout_rate,
                rng,
            ),
            merge: ConvUnit::bn_relu(
                format!("{prefix}.merge"),
                Conv2dSpec::same(2 * in_channels, out_channels, 1, 1, 1)?,
                dropout_rate,
                rng,
            ),
        })
    }

    pub fn forward(&self, tape: &GradTape<E>, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let shape = x.shape();
        let (h, w) = (shape[2], shape[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(AvError::arg(format!(
                "downsample block needs even spatial dims, got {h}x{w} \
                 (pad inputs to a multiple of the bottleneck stride)"
            )));
        }
        let pooled = ops::maxpool2d(tape, x, 2, 2, 0)?;
        let strided = self.strided.forward(tape, x, mode)?;
        let cat = ops::concat_channels(tape, &[&pooled, &strided])?;
        self.merge.forward(tape, &cat, mode)
    }

    pub fn units(&self) -> [&ConvUnit<E>; 2] {
        [&self.strided, &self.merge]
    }

    pub fn units_mut(&mut self) -> [&mut ConvUnit<E>; 2] {
        [&mut self.strided, &mut self.merge]
    }
}

/// The bottleneck cascade: sequential 3x3 convolutions with increasing
/// dilation rates, each with same-padding (pad = rate) and BN+ReLU.
pub(crate) struct CdcChain<E: Element> {
    layers: Vec<ConvUnit<E>>,
}

impl<E: Element> CdcChain<E> {
    pub fn build(
        prefix: &str,
        channels: usize,
        rates: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(rates.len());
        for (i, &rate) in rates.iter().enumerate() {
            layers.push(ConvUnit::bn_relu(
                format!("{prefix}.{i}"),
                Conv2dSpec::same(channels, channels, 3, 3, rate)?,
                0.0,
                rng,
            ));
        }
        Ok(CdcChain { layers })
    }

    pub fn forward(&self, tape: &GradTape<E>, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let mut y = x.clone();
        for layer in &self.layers {
            y = layer.forward(tape, &y, mode)?;
        }
        Ok(y)
    }

    pub fn layers(&self) -> &[ConvUnit<E>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvUnit<E>] {
        &mut self.layers
    }
}

/// One decoder stage: upsample 2x, 3x3 conv to the stage width, concat
/// the encoder skip, then two fusing 3x3 convs.
pub(crate) struct DecoderStage<E: Element> {
    post_up: ConvUnit<E>,
    fuse1: ConvUnit<E>,
    fuse2: ConvUnit<E>,
}

impl<E: Element> DecoderStage<E> {
    pub fn build(
        prefix: &str,
        in_channels: usize,
        skip_channels: usize,
        out_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(DecoderStage {
            post_up: ConvUnit::bn_relu(
                format!("{prefix}.post"),
                Conv2dSpec::same(in_channels, out_channels, 3, 3, 1)?,
                0.0,
                rng,
            ),
            fuse1: ConvUnit::bn_relu(
                format!("{prefix}.fuse1"),
                Conv2dSpec::same(out_channels + skip_channels, out_channels, 3, 3, 1)?,
                0.0,
                rng,
            ),
            fuse2: ConvUnit::bn_relu(
                format!("{prefix}.fuse2"),
                Conv2dSpec::same(out_channels, out_channels, 3, 3, 1)?,
                0.0,
                rng,
            ),
        })
    }

    pub fn forward(
        &self,
        tape: &GradTape<E>,
        x: &Tensor<E>,
        skip: &Tensor<E>,
        mode: Mode,
    ) -> Result<Tensor<E>> {
        let up = ops::upsample_nearest2x(tape, x)?;
        let y = self.post_up.forward(tape, &up, mode)?;
        if y.shape()[2..] != skip.shape()[2..] {
            return Err(AvError::shape("decoder skip join", y.shape(), skip.shape()));
        }
        let cat = ops::concat_channels(tape, &[&y, skip])?;
        let f = self.fuse1.forward(tape, &cat, mode)?;
        self.fuse2.forward(tape, &f, mode)
    }

    pub fn units(&self) -> [&ConvUnit<E>; 3] {
        [&self.post_up, &self.fuse1, &self.fuse2]
    }

    pub fn units_mut(&mut self) -> [&mut ConvUnit<E>; 3] {
        [&mut self.post_up, &mut self.fuse1, &mut self.fuse2]
    }
}

/// Seeded parameter-init stream for a whole model.
pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix2(seed, 0x1217))
}
