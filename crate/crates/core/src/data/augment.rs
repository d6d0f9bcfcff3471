//! Geometric augmentation of paired image/label samples.
//!
//! One draw applies scale, pan and optional flips, then crops to a fixed
//! square. Images are sampled bilinearly, class and weight maps with
//! nearest-neighbor (fractional class ids must never appear). Every draw
//! is a pure function of `(seed, source id, draw index)`, so the
//! augmented dataset is reproducible and order-independent.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{ClassId, ClassMap};
use super::sample::FundusSample;
use super::Dataset;
use crate::error::Result;
use crate::tensor::Tensor;
use crate::util::{fnv1a64, mix2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub crop_size: usize,
    pub scale_range: (f64, f64),
    pub max_pan_fraction: f64,
    pub hflip: bool,
    pub vflip: bool,
    /// Augmented samples per source image. The default of 83 expands a
    /// 30-image training set to 2,490 samples.
    pub multiplier: usize,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            crop_size: 512,
            scale_range: (0.8, 1.25),
            max_pan_fraction: 0.1,
            hflip: true,
            vflip: true,
            multiplier: 83,
            seed: 0,
        }
    }
}

/// Concrete geometry for one draw. Pan is in source pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    pub pan_x: f64,
    pub pan_y: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            scale: 1.0,
            pan_x: 0.0,
            pan_y: 0.0,
            hflip: false,
            vflip: false,
        }
    }
}

/// Draw the deterministic parameters for `(source id, draw index)`.
pub fn draw_params(
    cfg: &AugmentationConfig,
    source_id: &str,
    draw_index: usize,
    source_hw: (usize, usize),
) -> AugmentParams {
    let key = mix2(mix2(cfg.seed, fnv1a64(source_id.as_bytes())), draw_index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let (lo, hi) = cfg.scale_range;
    let scale = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let scale = if scale.is_finite() && scale > 0.05 { scale } else { 1.0 };
    let pan = cfg.max_pan_fraction.abs();
    let pan_x = rng.random_range(-pan..=pan) * source_hw.1 as f64;
    let pan_y = rng.random_range(-pan..=pan) * source_hw.0 as f64;
    let hflip = cfg.hflip && rng.random::<bool>();
    let vflip = cfg.vflip && rng.random::<bool>();
    AugmentParams {
        scale,
        pan_x,
        pan_y,
        hflip,
        vflip,
    }
}

/// One augmented draw from a source sample.
pub fn augment(sample: &FundusSample, cfg: &AugmentationConfig, draw_index: usize) -> FundusSample {
    let params = draw_params(cfg, &sample.id, draw_index, (sample.height(), sample.width()));
    let mut out = augment_with_params(sample, cfg.crop_size, &params);
    out.id = format!("{}#{draw_index}", sample.id);
    out
}

/// Apply a fixed geometric transform. Output pixels that map outside the
/// source are padded with background: zero image intensity, BACKGROUND
/// class, and the weight the source assigns to background pixels.
pub fn augment_with_params(
    sample: &FundusSample,
    crop_size: usize,
    params: &AugmentParams,
) -> FundusSample {
    let (sh, sw) = (sample.height(), sample.width());
    let crop = crop_size.max(1);
    let half_out = (crop - 1) as f64 / 2.0;
    let (cy, cx) = ((sh - 1) as f64 / 2.0, (sw - 1) as f64 / 2.0);
    let scale = if params.scale.is_finite() && params.scale > 0.05 {
        params.scale
    } else {
        1.0
    };

    // Weight used for padded background pixels: copy it from a real
    // background pixel so custom weight schemes stay coherent.
    let bg_weight = sample
        .class_map
        .data
        .iter()
        .position(|&c| c == ClassId::Background as u8)
        .map(|i| sample.weight_map.data()[i])
        .unwrap_or(1.0);

    let img = sample.image.data();
    let wmap = sample.weight_map.data();
    let plane = sh * sw;

    let mut out_img = vec![0.0f32; 3 * crop * crop];
    let mut out_cls = vec![0u8; crop * crop];
    let mut out_w = vec![0.0f32; crop * crop];

    for oy in 0..crop {
        for ox in 0..crop {
            let fx = if params.hflip { (crop - 1 - ox) as f64 } else { ox as f64 };
            let fy = if params.vflip { (crop - 1 - oy) as f64 } else { oy as f64 };
            let sx = (fx - half_out) / scale + cx + params.pan_x;
            let sy = (fy - half_out) / scale + cy + params.pan_y;
            let opix = oy * crop + ox;

            // Nearest-neighbor for the label/weight pair.
            let rx = sx.round();
            let ry = sy.round();
            if rx >= 0.0 && ry >= 0.0 && (rx as usize) < sw && (ry as usize) < sh {
                let spix = ry as usize * sw + rx as usize;
                out_cls[opix] = sample.class_map.data[spix];
                out_w[opix] = wmap[spix];
            } else {
                out_cls[opix] = ClassId::Background as u8;
                out_w[opix] = bg_weight;
            }

            // Bilinear for the image.
            for ch in 0..3 {
                out_img[ch * crop * crop + opix] =
                    bilinear(&img[ch * plane..(ch + 1) * plane], sh, sw, sy, sx);
            }
        }
    }

    FundusSample {
        id: sample.id.clone(),
        image: Tensor::new(vec![3, crop, crop], out_img).expect("sized buffer"),
        class_map: ClassMap::new(crop, crop, out_cls).expect("sized buffer"),
        weight_map: Tensor::new(vec![crop, crop], out_w).expect("sized buffer"),
    }
}

fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let dx = x - x0;
    let dy = y - y0;
    let fetch = |yy: f64, xx: f64| -> f64 {
        if xx < 0.0 || yy < 0.0 || xx >= w as f64 || yy >= h as f64 {
            0.0
        } else {
            f64::from(plane[yy as usize * w + xx as usize])
        }
    };
    let v = (1.0 - dx) * (1.0 - dy) * fetch(y0, x0)
        + dx * (1.0 - dy) * fetch(y0, x0 + 1.0)
        + (1.0 - dx) * dy * fetch(y0 + 1.0, x0)
        + dx * dy * fetch(y0 + 1.0, x0 + 1.0);
    v as f32
}

/// Lazy augmented view over a set of source samples:
/// `len = sources * multiplier`, each item derived on demand.
pub struct AugmentedDataset {
    sources: Vec<FundusSample>,
    cfg: AugmentationConfig,
}

impl AugmentedDataset {
    pub fn new(sources: Vec<FundusSample>, cfg: AugmentationConfig) -> Self {
        AugmentedDataset { sources, cfg }
    }

    pub fn sources(&self) -> &[FundusSample] {
        &self.sources
    }
}

impl Dataset for AugmentedDataset {
    fn len(&self) -> usize {
        self.sources.len() * self.cfg.multiplier
    }

    fn get(&self, index: usize) -> Result<FundusSample> {
        let m = self.cfg.multiplier.max(1);
        let source = &self.sources[index / m];
        Ok(augment(source, &self.cfg, index % m))
    }

    fn id(&self, index: usize) -> String {
        let m = self.cfg.multiplier.max(1);
        format!("{}#{}", self.sources[index / m].id, index % m)
    }
}
