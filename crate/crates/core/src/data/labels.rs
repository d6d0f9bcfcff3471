//! Five-color annotation scheme: red arterioles, blue venules, green
//! intersections, black background, white uncertain. Uncertain pixels
//! are excluded from training and metrics, leaving four model classes.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{AvError, Result};
use crate::tensor::Tensor;

/// Sentinel for uncertain pixels; never a model class.
pub const IGNORE: u8 = 255;

/// The four trainable classes, indexing the model's output channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ClassId {
    Background = 0,
    Arteriole = 1,
    Venule = 2,
    Intersection = 3,
}

impl ClassId {
    pub const ALL: [ClassId; 4] = [
        ClassId::Background,
        ClassId::Arteriole,
        ClassId::Venule,
        ClassId::Intersection,
    ];

    pub fn from_u8(v: u8) -> Option<ClassId> {
        match v {
            0 => Some(ClassId::Background),
            1 => Some(ClassId::Arteriole),
            2 => Some(ClassId::Venule),
            3 => Some(ClassId::Intersection),
            _ => None,
        }
    }

    /// Annotation color of the class.
    pub fn color(self) -> [u8; 3] {
        match self {
            ClassId::Background => [0, 0, 0],
            ClassId::Arteriole => [255, 0, 0],
            ClassId::Venule => [0, 0, 255],
            ClassId::Intersection => [0, 255, 0],
        }
    }
}

/// Color rendered for uncertain pixels.
pub const IGNORE_COLOR: [u8; 3] = [255, 255, 255];

/// Map an annotation color to a class id (or [`IGNORE`]).
pub fn color_to_class(rgb: [u8; 3]) -> Option<u8> {
    match rgb {
        [0, 0, 0] => Some(ClassId::Background as u8),
        [255, 0, 0] => Some(ClassId::Arteriole as u8),
        [0, 0, 255] => Some(ClassId::Venule as u8),
        [0, 255, 0] => Some(ClassId::Intersection as u8),
        [255, 255, 255] => Some(IGNORE),
        _ => None,
    }
}

pub fn class_to_color(id: u8) -> [u8; 3] {
    if id == IGNORE {
        IGNORE_COLOR
    } else {
        ClassId::from_u8(id).expect("valid class id").color()
    }
}

/// Per-pixel class ids for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl ClassMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(AvError::Data(format!(
                "class map {height}x{width} needs {} entries, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(ClassMap {
            height,
            width,
            data,
        })
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn ignore_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&c| c == IGNORE).collect()
    }

    /// Distinct class ids present, in ascending order (IGNORE last).
    pub fn classes_present(&self) -> Vec<u8> {
        let mut seen = [false; 5];
        for &c in &self.data {
            let slot = if c == IGNORE { 4 } else { usize::from(c) };
            seen[slot] = true;
        }
        let mut out = Vec::new();
        for (i, &s) in seen.iter().enumerate() {
            if s {
                out.push(if i == 4 { IGNORE } else { i as u8 });
            }
        }
        out
    }
}

/// Batched class maps, `[N, H, W]` row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassBatch {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl ClassBatch {
    pub fn from_maps(maps: &[&ClassMap]) -> Result<ClassBatch> {
        let first = maps
            .first()
            .ok_or_else(|| AvError::Data("empty class batch".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(maps.len() * h * w);
        for m in maps {
            if (m.height, m.width) != (h, w) {
                return Err(AvError::shape(
                    "class batch",
                    &[h, w],
                    &[m.height, m.width],
                ));
            }
            data.extend_from_slice(&m.data);
        }
        Ok(ClassBatch {
            batch: maps.len(),
            height: h,
            width: w,
            data,
        })
    }
}

/// How strictly label colors are matched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMatch {
    /// Any color outside the five-color palette is an error.
    #[default]
    Strict,
    /// Snap to the nearest palette color (for anti-aliased scans).
    Nearest,
}

/// Decode an RGB annotation image into a class map and ignore mask.
pub fn encode_labels(img: &RgbImage, mode: ColorMatch) -> Result<(ClassMap, Vec<bool>)> {
    let (w, h) = img.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    let mut bad: Vec<([u8; 3], (u32, u32))> = Vec::new();
    for (x, y, px) in img.enumerate_pixels() {
        let rgb = [px.0[0], px.0[1], px.0[2]];
        match color_to_class(rgb) {
            Some(c) => data.push(c),
            None => match mode {
                ColorMatch::Strict => {
                    if !bad.iter().any(|(c, _)| *c == rgb) {
                        bad.push((rgb, (x, y)));
                    }
                    data.push(IGNORE);
                }
                ColorMatch::Nearest => data.push(nearest_class(rgb)),
            },
        }
    }
    if !bad.is_empty() {
        let listing: Vec<String> = bad
            .iter()
            .take(8)
            .map(|(c, (x, y))| format!("{c:?} first at ({x}, {y})"))
            .collect();
        return Err(AvError::Data(format!(
            "label image contains {} unrecognized color(s): {}",
            bad.len(),
            listing.join("; ")
        )));
    }
    // enumerate_pixels is row-major (x fastest), matching our layout.
    let map = ClassMap::new(h as usize, w as usize, data)?;
    let mask = map.ignore_mask();
    Ok((map, mask))
}

fn nearest_class(rgb: [u8; 3]) -> u8 {
    let mut best = (u32::MAX, IGNORE);
    let candidates = [
        ([0, 0, 0], ClassId::Background as u8),
        ([255, 0, 0], ClassId::Arteriole as u8),
        ([0, 0, 255], ClassId::Venule as u8),
        ([0, 255, 0], ClassId::Intersection as u8),
        ([255, 255, 255], IGNORE),
    ];
    for (color, id) in candidates {
        let d: u32 = color
            .iter()
            .zip(rgb.iter())
            .map(|(&a, &b)| {
                let diff = a - i32::from(b);
                (diff * diff) as u32
            })
            .sum();
        if d < best.0 {
            best = (d, id);
        }
    }
    best.1
}

/// Render a class map back to the annotation palette.
pub fn labels_to_image(map: &ClassMap) -> RgbImage {
    let mut img = RgbImage::new(map.width as u32, map.height as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let c = map.at(y as usize, x as usize);
        px.0 = class_to_color(c);
    }
    img
}

/// Per-class loss weights. Vessels are emphasized; intersections are
/// effectively silenced so their mixed appearance cannot destabilize
/// training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassWeights {
    pub background: f64,
    pub arteriole: f64,
    pub venule: f64,
    pub intersection: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights {
            background: 1.0,
            arteriole: 5.0,
            venule: 5.0,
            intersection: 1e-12,
        }
    }
}

impl ClassWeights {
    pub fn lookup(&self, class: u8) -> f64 {
        match ClassId::from_u8(class) {
            Some(ClassId::Background) => self.background,
            Some(ClassId::Arteriole) => self.arteriole,
            Some(ClassId::Venule) => self.venule,
            Some(ClassId::Intersection) => self.intersection,
            None => 0.0, // IGNORE
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("background", self.background),
            ("arteriole", self.arteriole),
            ("venule", self.venule),
            ("intersection", self.intersection),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(AvError::arg(format!(
                    "class weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Pixelwise weight lookup; IGNORE maps to zero.
pub fn class_weight_map(map: &ClassMap, weights: &ClassWeights) -> Result<Tensor<f32>> {
    weights.validate()?;
    let data: Vec<f32> = map
        .data
        .iter()
        .map(|&c| weights.lookup(c) as f32)
        .collect();
    Tensor::new(vec![map.height, map.width], data)
}

/// Argmax decode of a `[K, H, W]` probability tensor to the annotation
/// palette; ties break to the lowest class index, ignore-masked pixels
/// render white.
pub fn decode_predictions(probs: &Tensor<f32>, ignore_mask: Option<&[bool]>) -> Result<RgbImage> {
    let shape = probs.shape();
    if shape.len() != 3 || shape[0] != 4 {
        return Err(AvError::arg(format!(
            "decode_predictions expects [4, H, W] probabilities, got {shape:?}"
        )));
    }
    let (k, h, w) = (shape[0], shape[1], shape[2]);
    if let Some(mask) = ignore_mask {
        if mask.len() != h * w {
            return Err(AvError::arg(format!(
                "ignore mask length {} does not match {h}x{w}",
                mask.len()
            )));
        }
    }
    let data = probs.data();
    let plane = h * w;
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let color = if ignore_mask.is_some_and(|m| m[pix]) {
                IGNORE_COLOR
            } else {
                let mut best = 0usize;
                let mut best_v = data[pix];
                for ch in 1..k {
                    let v = data[ch * plane + pix];
                    if v > best_v {
                        best_v = v;
                        best = ch;
                    }
                }
                class_to_color(best as u8)
            };
            img.put_pixel(x as u32, y as u32, image::Rgb(color));
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_maps_to_spec_classes() {
        assert_eq!(color_to_class([255, 0, 0]), Some(ClassId::Arteriole as u8));
        assert_eq!(color_to_class([0, 0, 255]), Some(ClassId::Venule as u8));
        assert_eq!(color_to_class([0, 255, 0]), Some(ClassId::Intersection as u8));
        assert_eq!(color_to_class([0, 0, 0]), Some(ClassId::Background as u8));
        assert_eq!(color_to_class([255, 255, 255]), Some(IGNORE));
        assert_eq!(color_to_class([12, 34, 56]), None);
    }

    #[test]
    fn encode_sets_ignore_mask_at_white_pixels() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(0, 0, image::Rgb([255, 255, 255]));
        img.put_pixel(1, 0, image::Rgb([255, 0, 0]));
        let (map, mask) = encode_labels(&img, ColorMatch::Strict).unwrap();
        assert_eq!(map.data, vec![IGNORE, ClassId::Arteriole as u8]);
        assert_eq!(mask, vec![true, false]);
    }

    #[test]
    fn strict_mode_reports_offending_colors_with_coordinates() {
        let mut img = RgbImage::new(2, 2);
        img.put_pixel(0, 0, image::Rgb([0, 0, 0]));
        img.put_pixel(1, 0, image::Rgb([10, 20, 30]));
        img.put_pixel(0, 1, image::Rgb([10, 20, 30]));
        img.put_pixel(1, 1, image::Rgb([200, 0, 0]));
        let err = encode_labels(&img, ColorMatch::Strict).unwrap_err().to_string();
        assert!(err.contains("[10, 20, 30]"), "{err}");
        assert!(err.contains("(1, 0)"), "{err}");
        assert!(err.contains("[200, 0, 0]"), "{err}");
    }

    #[test]
    fn nearest_mode_snaps_antialiased_colors() {
        let mut img = RgbImage::new(1, 1);
        img.put_pixel(0, 0, image::Rgb([250, 5, 5]));
        let (map, _) = encode_labels(&img, ColorMatch::Nearest).unwrap();
        assert_eq!(map.data, vec![ClassId::Arteriole as u8]);
    }

    #[test]
    fn codec_round_trips_all_five_colors() {
        let map = ClassMap::new(1, 5, vec![0, 1, 2, 3, IGNORE]).unwrap();
        let img = labels_to_image(&map);
        let (back, mask) = encode_labels(&img, ColorMatch::Strict).unwrap();
        assert_eq!(back, map);
        assert_eq!(mask, vec![false, false, false, false, true]);
    }

    #[test]
    fn weight_lookup_follows_class_scheme() {
        let map = ClassMap::new(1, 4, vec![1, 3, 0, IGNORE]).unwrap();
        let w = class_weight_map(&map, &ClassWeights::default()).unwrap();
        assert_eq!(w.data()[0], 5.0);
        assert_eq!(w.data()[1], 1e-12);
        assert_eq!(w.data()[2], 1.0);
        assert_eq!(w.data()[3], 0.0);
    }

    #[test]
    fn negative_weights_rejected() {
        let map = ClassMap::new(1, 1, vec![0]).unwrap();
        let w = ClassWeights {
            venule: -1.0,
            ..ClassWeights::default()
        };
        assert!(class_weight_map(&map, &w).is_err());
    }

    #[test]
    fn one_hot_arteriole_decodes_to_red() {
        let mut data = vec![0.0f32; 4 * 2 * 2];
        for pix in 0..4 {
            data[2 * 2 + pix] = 1.0; // channel 1
        }
        let probs = Tensor::new(vec![4, 2, 2], data).unwrap();
        let img = decode_predictions(&probs, None).unwrap();
        for px in img.pixels() {
            assert_eq!(px.0, [255, 0, 0]);
        }
    }

    #[test]
    fn uniform_probabilities_tie_break_to_background() {
        let probs = Tensor::full(vec![4, 1, 2], 0.25f32);
        let img = decode_predictions(&probs, None).unwrap();
        for px in img.pixels() {
            assert_eq!(px.0, [0, 0, 0]);
        }
    }

    #[test]
    fn one_hot_encode_then_decode_round_trips_colors() {
        // Class map -> one-hot probabilities -> argmax overlay matches
        // the direct palette rendering (IGNORE via the mask).
        let map = ClassMap::new(2, 3, vec![0, 1, 2, 3, IGNORE, 1]).unwrap();
        let mut probs = vec![0.0f32; 4 * 6];
        for (pix, &c) in map.data.iter().enumerate() {
            let ch = if c == IGNORE { 0 } else { usize::from(c) };
            probs[ch * 6 + pix] = 1.0;
        }
        let tensor = Tensor::new(vec![4, 2, 3], probs).unwrap();
        let mask = map.ignore_mask();
        let decoded = decode_predictions(&tensor, Some(&mask)).unwrap();
        let direct = labels_to_image(&map);
        assert_eq!(decoded.as_raw(), direct.as_raw());
    }

    #[test]
    fn ignore_mask_renders_white() {
        let probs = Tensor::full(vec![4, 1, 2], 0.25f32);
        let img = decode_predictions(&probs, Some(&[true, false])).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, [255, 255, 255]);
        assert_eq!(img.get_pixel(1, 0).0, [0, 0, 0]);
    }
}
