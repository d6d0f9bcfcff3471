//! The assembled network: stem, Inception encoder stages with skip
//! connections taken before each downsampling, an Inception bottleneck
//! followed by the dilated-convolution cascade, a mirrored decoder, and
//! a 1x1 class head with per-pixel softmax.

use super::blocks::{init_rng, CdcChain, ConvUnit, DecoderStage, DownsampleBlock, InceptionBlock};
use super::config::{InceptionBlockConfig, ModelConfig};
use crate::error::{AvError, Result};
use crate::ops::{self, Mode, PaddingMode};
use crate::tensor::{Element, GradTape, Tensor};

struct EncoderStage<E: Element> {
    block: InceptionBlock<E>,
    down: DownsampleBlock<E>,
}

pub struct AvNet<E: Element> {
    cfg: ModelConfig,
    stem: ConvUnit<E>,
    stages: Vec<EncoderStage<E>>,
    bottleneck: InceptionBlock<E>,
    cdc: CdcChain<E>,
    decoder: Vec<DecoderStage<E>>,
    head: ConvUnit<E>,
}

impl<E: Element> std::fmt::Debug for AvNet<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AvNet")
            .field("config", &self.cfg)
            .field("params", &self.param_count())
            .finish()
    }
}

impl<E: Element> AvNet<E> {
    /// Build with seeded fan-in-scaled Gaussian initialization. Identical
    /// (config, seed) pairs produce bit-identical parameters.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = init_rng(seed);
        let enc = &cfg.encoder_channels;
        let dr = cfg.dropout_rate;

        let stem = ConvUnit::bn_relu(
            "stem".into(),
            ops::Conv2dSpec::same(cfg.input_channels, enc[0], 3, 3, 1)?,
            dr,
            &mut rng,
        );

        let mut stages = Vec::with_capacity(cfg.num_stages());
        for i in 0..cfg.num_stages() {
            let block = InceptionBlock::build(
                &format!("enc{i}.incept"),
                InceptionBlockConfig {
                    in_channels: enc[i],
                    out_channels: enc[i],
                    dropout_rate: dr,
                },
                &mut rng,
            )?;
            let down = DownsampleBlock::build(
                &format!("enc{i}.down"),
                enc[i],
                enc[i + 1],
                dr,
                &mut rng,
            )?;
            stages.push(EncoderStage { block, down });
        }

        let last = *enc.last().unwrap();
        let bottleneck = InceptionBlock::build(
            "bottleneck",
            InceptionBlockConfig {
                in_channels: last,
                out_channels: last,
                dropout_rate: dr,
            },
            &mut rng,
        )?;
        let cdc = CdcChain::build("cdc", cfg.cdc.channels, &cfg.cdc.dilation_rates, &mut rng)?;

        let mut decoder = Vec::with_capacity(cfg.num_stages());
        let mut dec_in = last;
        for (j, &out) in cfg.decoder_channels.iter().enumerate() {
            let skip = enc[cfg.num_stages() - 1 - j];
            decoder.push(DecoderStage::build(
                &format!("dec{j}"),
                dec_in,
                skip,
                out,
                &mut rng,
            )?);
            dec_in = out;
        }

        let head = ConvUnit::plain(
            "head".into(),
            ops::Conv2dSpec::same(dec_in, cfg.num_classes, 1, 1, 1)?,
            &mut rng,
        );

        Ok(AvNet {
            cfg: cfg.clone(),
            stem,
            stages,
            bottleneck,
            cdc,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Forward pass to per-pixel class probabilities `[N, K, H, W]`.
    /// Spatial dims must be divisible by the bottleneck stride; eval-mode
    /// forward on a frozen model is deterministic and thread-safe.
    pub fn forward(&self, tape: &GradTape<E>, input: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let shape = input.shape();
        if shape.len() != 4 {
            return Err(AvError::arg(format!(
                "model input must be NCHW, got {shape:?}"
            )));
        }
        if shape[1] != self.cfg.input_channels {
            return Err(AvError::arg(format!(
                "model expects {} input channels, got {}",
                self.cfg.input_channels, shape[1]
            )));
        }

        let mut x = self.stem.forward(tape, input, mode)?;
        let mut skips = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let feat = stage.block.forward(tape, &x, mode)?;
            skips.push(feat.clone());
            x = stage.down.forward(tape, &feat, mode)?;
        }
        x = self.bottleneck.forward(tape, &x, mode)?;
        x = self.cdc.forward(tape, &x, mode)?;
        for (stage, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            x = stage.forward(tape, &x, skip, mode)?;
        }
        let logits = self.head.forward(tape, &x, mode)?;
        ops::softmax_channels(tape, &logits)
    }

    /// Bottleneck feature map (after the CDC) for shape auditing.
    pub fn bottleneck_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        let s = self.cfg.bottleneck_stride();
        (self.cfg.cdc.channels, h / s, w / s)
    }

    fn units(&self) -> Vec<&ConvUnit<E>> {
        let mut units: Vec<&ConvUnit<E>> = vec![&self.stem];
        for stage in &self.stages {
            units.extend(stage.block.units());
            units.extend(stage.down.units());
        }
        units.extend(self.bottleneck.units());
        units.extend(self.cdc.layers().iter());
        for stage in &self.decoder {
            units.extend(stage.units());
        }
        units.push(&self.head);
        units
    }

    fn units_mut(&mut self) -> Vec<&mut ConvUnit<E>> {
        let mut units: Vec<&mut ConvUnit<E>> = vec![&mut self.stem];
        for stage in &mut self.stages {
            units.extend(stage.block.units_mut());
            units.extend(stage.down.units_mut());
        }
        units.extend(self.bottleneck.units_mut());
        units.extend(self.cdc.layers_mut().iter_mut());
        for stage in &mut self.decoder {
            units.extend(stage.units_mut());
        }
        units.push(&mut self.head);
        units
    }

    /// Visit every trainable parameter in stable declaration order.
    pub fn for_each_param(&self, f: &mut dyn FnMut(String, &Tensor<E>)) {
        for unit in self.units() {
            unit.visit_params(f);
        }
    }

    pub fn try_for_each_param_mut(
        &mut self,
        f: &mut dyn FnMut(String, &mut Tensor<E>) -> Result<()>,
    ) -> Result<()> {
        for unit in self.units_mut() {
            unit.visit_params_mut(f)?;
        }
        Ok(())
    }

    /// Visit every batch-norm layer (for running-stat persistence).
    pub fn for_each_bn(&self, f: &mut dyn FnMut(String, &crate::ops::BatchNorm2d<E>)) {
        for unit in self.units() {
            unit.visit_bn(f);
        }
    }

    pub fn named_param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.for_each_param(&mut |name, t| out.push((name, t.shape().to_vec())));
        out
    }

    /// Total trainable parameter count (conv weights/biases, BN scale/shift).
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.for_each_param(&mut |_, t| total += t.numel());
        total
    }

    pub fn get_param(&self, name: &str) -> Option<Tensor<E>> {
        let mut found = None;
        self.for_each_param(&mut |n, t| {
            if n == name {
                found = Some(t.clone());
            }
        });
        found
    }

    /// Overwrite one parameter's values (shape must match).
    pub fn set_param(&mut self, name: &str, data: &[E]) -> Result<()> {
        let mut hit = false;
        self.try_for_each_param_mut(&mut |n, t| {
            if n == name {
                if t.numel() != data.len() {
                    return Err(AvError::arg(format!(
                        "set_param {n}: expected {} values, got {}",
                        t.numel(),
                        data.len()
                    )));
                }
                t.data_mut().copy_from_slice(data);
                hit = true;
            }
            Ok(())
        })?;
        if hit {
            Ok(())
        } else {
            Err(AvError::arg(format!("no parameter named {name}")))
        }
    }

    /// Drop any accumulated gradients on all parameters.
    pub fn zero_grads(&self) {
        self.for_each_param(&mut |_, t| t.zero_grad());
    }
}

/// Eval-mode inference on one `[3, H, W]` image with spatial padding to
/// the bottleneck stride; returns `[K, H, W]` probabilities.
pub fn predict_image<E: Element>(
    model: &AvNet<E>,
    image: &Tensor<E>,
    padding: PaddingMode,
) -> Result<Tensor<E>> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(AvError::arg(format!(
            "predict_image expects [C, H, W], got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let batched = Tensor::new(vec![1, c, h, w], image.data().to_vec())?;
    let (padded, (oh, ow)) = ops::pad_nchw(&batched, model.config().bottleneck_stride(), padding)?;
    let tape = GradTape::disabled();
    let probs = model.forward(&tape, &padded, Mode::Eval)?;
    let cropped = ops::crop_nchw(&probs, oh, ow)?;
    let k = cropped.shape()[1];
    Tensor::new(vec![k, oh, ow], cropped.data().to_vec())
}
