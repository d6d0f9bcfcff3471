//! Synthetic desk-scale fundus samples: smooth random curves in two
//! vessel classes over a textured background, with crossings marked as
//! intersections and a sprinkling of uncertain pixels.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::labels::{ClassId, ClassMap, ClassWeights, IGNORE};
use super::sample::FundusSample;
use crate::tensor::Tensor;
use crate::util::mix2;

const ART: u8 = ClassId::Arteriole as u8;
const VEN: u8 = ClassId::Venule as u8;
const INTER: u8 = ClassId::Intersection as u8;
const BG: u8 = ClassId::Background as u8;

/// Generate a deterministic synthetic sample with the default class
/// weights. All five label colors are guaranteed present; vessel pixels
/// stay sparse (well under 20% of the image).
pub fn generate_synthetic(size: usize, seed: u64) -> FundusSample {
    generate_synthetic_with(size, seed, &ClassWeights::default())
}

pub fn generate_synthetic_with(size: usize, seed: u64, weights: &ClassWeights) -> FundusSample {
    assert!(size >= 32, "synthetic samples need size >= 32, got {size}");
    let mut rng = ChaCha8Rng::seed_from_u64(mix2(seed, 0x5EED_F00D));

    let mut image = background(size, &mut rng);
    let mut classes = vec![BG; size * size];

    // First curve of each class spans the image (left-right arteriole,
    // top-bottom venule), so the pair is guaranteed to cross.
    let per_class = (size / 48).max(1);
    for i in 0..per_class {
        let thickness = if i == 0 { 2.0 } else { 1.0 };
        let curve = random_curve(size, &mut rng, (i == 0).then_some(Axis::Horizontal));
        stamp_curve(&mut classes, &mut image, size, &curve, ART, thickness, &mut rng);
    }
    for i in 0..per_class {
        let thickness = if i == 0 { 2.0 } else { 1.0 };
        let curve = random_curve(size, &mut rng, (i == 0).then_some(Axis::Vertical));
        stamp_curve(&mut classes, &mut image, size, &curve, VEN, thickness, &mut rng);
    }

    // Uncertain dots, roughly 0.3% of pixels.
    let dots = (size * size / 300).max(3);
    for _ in 0..dots {
        let y = rng.random_range(0..size);
        let x = rng.random_range(0..size);
        classes[y * size + x] = IGNORE;
    }

    ensure_presence(&mut classes, &mut image, size);
    quantize(&mut image);

    let class_map = ClassMap::new(size, size, classes).expect("sized buffer");
    let weight_map = {
        let data: Vec<f32> = class_map
            .data
            .iter()
            .map(|&c| weights.lookup(c) as f32)
            .collect();
        Tensor::new(vec![size, size], data).expect("sized buffer")
    };
    FundusSample {
        id: format!("syn-{seed}"),
        image: Tensor::new(vec![3, size, size], image).expect("sized buffer"),
        class_map,
        weight_map,
    }
}

fn background(size: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    // Fundus-like warm base with low-frequency undulation and pixel noise.
    let base = [0.55f64, 0.30, 0.16];
    let mut waves = Vec::new();
    for _ in 0..3 {
        waves.push((
            rng.random_range(0.5..2.5) / size as f64,
            rng.random_range(0.5..2.5) / size as f64,
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.01..0.05),
        ));
    }
    let mut img = vec![0.0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let mut tone = 0.0;
            for &(fx, fy, phase, amp) in &waves {
                tone += amp
                    * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase).sin();
            }
            tone += rng.random_range(-0.01..0.01);
            for c in 0..3 {
                img[c * size * size + y * size + x] = (base[c] + tone).clamp(0.0, 1.0) as f32;
            }
        }
    }
    img
}

enum Axis {
    Horizontal,
    Vertical,
}

/// Quadratic Bezier control points.
fn random_curve(size: usize, rng: &mut ChaCha8Rng, span: Option<Axis>) -> [(f64, f64); 3] {
    let s = (size - 1) as f64;
    let edge_point = |rng: &mut ChaCha8Rng| -> (f64, f64) {
        let t = rng.random_range(0.0..s);
        match rng.random_range(0..4) {
            0 => (t, 0.0),
            1 => (t, s),
            2 => (0.0, t),
            _ => (s, t),
        }
    };
    let (a, b) = match span {
        Some(Axis::Horizontal) => (
            (0.0, rng.random_range(0.2 * s..0.8 * s)),
            (s, rng.random_range(0.2 * s..0.8 * s)),
        ),
        Some(Axis::Vertical) => (
            (rng.random_range(0.2 * s..0.8 * s), 0.0),
            (rng.random_range(0.2 * s..0.8 * s), s),
        ),
        None => (edge_point(rng), edge_point(rng)),
    };
    let c = (
        rng.random_range(0.2 * s..0.8 * s),
        rng.random_range(0.2 * s..0.8 * s),
    );
    [a, c, b]
}

fn stamp_curve(
    classes: &mut [u8],
    image: &mut [f32],
    size: usize,
    curve: &[(f64, f64); 3],
    class: u8,
    thickness: f64,
    rng: &mut ChaCha8Rng,
) {
    let steps = 4 * size;
    let [a, c, b] = *curve;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let u = 1.0 - t;
        let x = u * u * a.0 + 2.0 * u * t * c.0 + t * t * b.0;
        let y = u * u * a.1 + 2.0 * u * t * c.1 + t * t * b.1;
        stamp_disc(classes, image, size, x, y, class, thickness, rng);
    }
}

#[allow(clippy::too_many_arguments)]
fn stamp_disc(
    classes: &mut [u8],
    image: &mut [f32],
    size: usize,
    cx: f64,
    cy: f64,
    class: u8,
    radius: f64,
    rng: &mut ChaCha8Rng,
) {
    let r = radius.ceil() as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let px = cx.round() as isize + dx;
            let py = cy.round() as isize + dy;
            if px < 0 || py < 0 || px >= size as isize || py >= size as isize {
                continue;
            }
            let fx = px as f64 - cx;
            let fy = py as f64 - cy;
            if fx * fx + fy * fy > radius * radius {
                continue;
            }
            let pix = py as usize * size + px as usize;
            let existing = classes[pix];
            // Crossing an already-drawn vessel of any other class marks
            // the pixel as an intersection.
            let new_class = if existing != BG && existing != class && existing != IGNORE {
                INTER
            } else {
                class
            };
            classes[pix] = new_class;
            let tone = vessel_tone(new_class);
            let noise = rng.random_range(-0.02..0.02);
            for ch in 0..3 {
                image[ch * size * size + pix] = (tone[ch] + noise).clamp(0.0, 1.0) as f32;
            }
        }
    }
}

fn vessel_tone(class: u8) -> [f64; 3] {
    match class {
        c if c == ART => [0.78, 0.30, 0.20],
        c if c == VEN => [0.30, 0.10, 0.32],
        _ => [0.54, 0.20, 0.26], // intersection blends both
    }
}

/// Guarantee every label color appears at least once.
fn ensure_presence(classes: &mut [u8], image: &mut [f32], size: usize) {
    let mut present = [false; 256];
    for &c in classes.iter() {
        present[usize::from(c)] = true;
    }
    let mut cursor = 0usize;
    let mut place = |classes: &mut [u8], image: &mut [f32], class: u8| {
        while cursor < classes.len() && classes[cursor] != BG {
            cursor += 1;
        }
        if cursor < classes.len() {
            classes[cursor] = class;
            if class != IGNORE && class != BG {
                let tone = vessel_tone(class);
                for ch in 0..3 {
                    image[ch * size * size + cursor] = tone[ch] as f32;
                }
            }
        }
    };
    for class in [ART, VEN, INTER, IGNORE] {
        if !present[usize::from(class)] {
            place(classes, image, class);
        }
    }
}

fn quantize(image: &mut [f32]) {
    for v in image.iter_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vessel_fraction(sample: &FundusSample) -> f64 {
        let vessel = sample
            .class_map
            .data
            .iter()
            .filter(|&&c| c == ART || c == VEN || c == INTER)
            .count();
        vessel as f64 / sample.class_map.data.len() as f64
    }

    #[test]
    fn all_five_labels_present_at_size_64() {
        for seed in 0..10 {
            let s = generate_synthetic(64, seed);
            let present = s.class_map.classes_present();
            assert_eq!(present, vec![0, 1, 2, 3, IGNORE], "seed {seed}");
        }
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let a = generate_synthetic(64, 77);
        let b = generate_synthetic(64, 77);
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.class_map, b.class_map);
        assert_eq!(a.weight_map.data(), b.weight_map.data());
    }

    #[test]
    fn vessel_fraction_stays_sparse_across_seeds() {
        let mut min = f64::MAX;
        let mut max: f64 = 0.0;
        for seed in 0..100 {
            let f = vessel_fraction(&generate_synthetic(64, seed));
            min = min.min(f);
            max = max.max(f);
        }
        assert!(min > 0.02, "min vessel fraction {min}");
        assert!(max < 0.2, "max vessel fraction {max}");
    }

    #[test]
    fn weight_map_respects_ignore_coupling() {
        let s = generate_synthetic(64, 5);
        s.validate().unwrap();
    }
}
