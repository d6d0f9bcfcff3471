//! Paired fundus image + annotation sample.

use std::path::Path;

use image::RgbImage;

use super::labels::{class_weight_map, encode_labels, labels_to_image, ClassMap, ClassWeights, ColorMatch, IGNORE};
use crate::error::{AvError, Result};
use crate::tensor::Tensor;

/// One training/evaluation case: RGB image in `[0, 1]`, per-pixel class
/// map, per-pixel loss weights and a stable source id.
#[derive(Clone, Debug)]
pub struct FundusSample {
    pub id: String,
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub class_map: ClassMap,
    /// `[H, W]`, zero exactly where the class map is IGNORE (or the
    /// class weight itself is zero).
    pub weight_map: Tensor<f32>,
}

impl FundusSample {
    pub fn height(&self) -> usize {
        self.class_map.height
    }

    pub fn width(&self) -> usize {
        self.class_map.width
    }

    /// Check the structural invariants shared by every pipeline stage.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        if self.image.shape() != [3, h, w] {
            return Err(AvError::shape("sample image", self.image.shape(), &[3, h, w]));
        }
        if self.weight_map.shape() != [h, w] {
            return Err(AvError::shape(
                "sample weight map",
                self.weight_map.shape(),
                &[h, w],
            ));
        }
        for (i, (&c, &wv)) in self
            .class_map
            .data
            .iter()
            .zip(self.weight_map.data())
            .enumerate()
        {
            if c == IGNORE && wv != 0.0 {
                return Err(AvError::Data(format!(
                    "sample {}: IGNORE pixel {i} has nonzero weight {wv}",
                    self.id
                )));
            }
            if wv < 0.0 {
                return Err(AvError::Data(format!(
                    "sample {}: negative weight {wv} at pixel {i}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Read an RGB image into a `[3, H, W]` tensor scaled to `[0, 1]`.
pub fn load_image_tensor(path: &Path) -> Result<Tensor<f32>> {
    let img = open_rgb(path)?;
    Ok(image_to_tensor(&img))
}

pub fn image_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let pix = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + pix] = f32::from(px.0[c]) / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape matches data")
}

/// Quantize a `[3, H, W]` tensor in `[0, 1]` back to 8-bit RGB.
pub fn tensor_to_image(t: &Tensor<f32>) -> Result<RgbImage> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(AvError::arg(format!(
            "tensor_to_image expects [3, H, W], got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let data = t.data();
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let pix = y * w + x;
            let mut rgb = [0u8; 3];
            for (c, slot) in rgb.iter_mut().enumerate() {
                *slot = (data[c * h * w + pix].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
        }
    }
    Ok(img)
}

fn open_rgb(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(AvError::Data(format!("missing file: {}", path.display())));
    }
    Ok(image::open(path)?.to_rgb8())
}

/// Load a paired image/label sample. The weight map is derived from the
/// decoded classes via the given per-class weights.
pub fn load_sample(
    image_path: &Path,
    label_path: &Path,
    weights: &ClassWeights,
    color_match: ColorMatch,
) -> Result<FundusSample> {
    let img = open_rgb(image_path)?;
    let lbl = open_rgb(label_path)?;
    if img.dimensions() != lbl.dimensions() {
        let (iw, ih) = img.dimensions();
        let (lw, lh) = lbl.dimensions();
        return Err(AvError::shape(
            format!("image vs label size for {}", image_path.display()),
            &[ih as usize, iw as usize],
            &[lh as usize, lw as usize],
        ));
    }
    let (class_map, _mask) = encode_labels(&lbl, color_match)?;
    let weight_map = class_weight_map(&class_map, weights)?;
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sample".into());
    let sample = FundusSample {
        id,
        image: image_to_tensor(&img),
        class_map,
        weight_map,
    };
    sample.validate()?;
    Ok(sample)
}

/// Write a sample as the `<id>.png` / `<id>_av.png` PNG pair. Values are
/// quantized to the 8-bit grid, so a sample whose image already sits on
/// that grid round-trips bit-exactly.
pub fn save_sample(sample: &FundusSample, image_path: &Path, label_path: &Path) -> Result<()> {
    tensor_to_image(&sample.image)?.save(image_path)?;
    labels_to_image(&sample.class_map).save(label_path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::generate_synthetic;

    #[test]
    fn synthetic_round_trips_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("s1.png");
        let lbl_path = dir.path().join("s1_av.png");
        let sample = generate_synthetic(48, 11);
        save_sample(&sample, &img_path, &lbl_path).unwrap();
        let loaded = load_sample(
            &img_path,
            &lbl_path,
            &ClassWeights::default(),
            ColorMatch::Strict,
        )
        .unwrap();
        assert_eq!(loaded.id, "s1");
        assert_eq!(loaded.image.data(), sample.image.data());
        assert_eq!(loaded.class_map, sample.class_map);
        assert_eq!(loaded.weight_map.data(), sample.weight_map.data());
    }

    #[test]
    fn missing_file_is_reported_with_path() {
        let err = load_sample(
            Path::new("/nonexistent/img.png"),
            Path::new("/nonexistent/lbl.png"),
            &ClassWeights::default(),
            ColorMatch::Strict,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("/nonexistent/img.png"), "{err}");
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        image::RgbImage::new(4, 4).save(&a).unwrap();
        image::RgbImage::new(4, 5).save(&b).unwrap();
        let err = load_sample(&a, &b, &ClassWeights::default(), ColorMatch::Strict)
            .unwrap_err()
            .to_string();
        assert!(err.contains("size"), "{err}");
    }

    #[test]
    fn image_as_its_own_labels_lists_offending_colors() {
        // A natural image used as a label map has non-palette colors.
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let mut img = image::RgbImage::new(2, 2);
        img.put_pixel(0, 0, image::Rgb([13, 57, 99]));
        img.put_pixel(1, 1, image::Rgb([200, 150, 10]));
        img.save(&p).unwrap();
        let err = load_sample(&p, &p, &ClassWeights::default(), ColorMatch::Strict)
            .unwrap_err()
            .to_string();
        assert!(err.contains("[13, 57, 99]"), "{err}");
        assert!(err.contains("[200, 150, 10]"), "{err}");
    }
}
