//! Parametric shape datasets for CI-scale experiments.
//!
//! Class 0 holds horizontal bars and class 1 vertical bars. Later classes
//! come in pairs that place the same two parts in swapped positions, so
//! they can only be told apart by where things are. Every image gets random
//! position and scale jitter, a random foreground/background colour, a
//! linear illumination ramp, and independent per-channel noise.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::preprocess::{LabeledImage, LabeledImageSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Part {
    /// Bar at an angle in degrees (0 = horizontal).
    Bar(f64),
    Disc,
    Ring,
    Cross,
}

const PARTS: [Part; 6] = [
    Part::Bar(0.0),
    Part::Bar(90.0),
    Part::Disc,
    Part::Ring,
    Part::Cross,
    Part::Bar(45.0),
];

const CLUTTER: usize = 3;
const NOISE_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    Single(Part),
    /// `first` in the top or left half, `second` in the other.
    Pair {
        first: Part,
        second: Part,
        vertical: bool,
    },
}

fn family(class: usize) -> Family {
    match class {
        0 => Family::Single(Part::Bar(0.0)),
        1 => Family::Single(Part::Bar(90.0)),
        _ => {
            let pairs = part_pairs();
            let q = (class - 2) / 2;
            let (a, b) = pairs[q % pairs.len()];
            let (first, second) = if class % 2 == 0 { (a, b) } else { (b, a) };
            Family::Pair {
                first,
                second,
                vertical: ((q % pairs.len()) % 2 == 0) ^ ((q / pairs.len()) % 2 == 1),
            }
        }
    }
}

/// Unordered part pairs, neighbours in [`PARTS`] first.
fn part_pairs() -> Vec<(Part, Part)> {
    let n = PARTS.len();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for d in 1..=n / 2 {
        for a in 0..n {
            let b = (a + d) % n;
            if !out.iter().any(|&(x, y)| (x, y) == (b, a)) {
                out.push((a, b));
            }
        }
    }
    out.into_iter().map(|(a, b)| (PARTS[a], PARTS[b])).collect()
}

/// Coverage of `part` centred at `(cx, cy)` with size `s`, on [0, 1].
fn coverage(part: Part, cx: f64, cy: f64, s: f64, x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - cx, y - cy);
    let bar = |deg: f64| {
        let (sn, cs) = deg.to_radians().sin_cos();
        // y grows downward in raster coordinates
        let along = dx * cs - dy * sn;
        let across = dx * sn + dy * cs;
        let d = (along.abs() - s).max(across.abs() - 0.18 * s);
        (0.5 - d).clamp(0.0, 1.0)
    };
    match part {
        Part::Bar(deg) => bar(deg),
        Part::Cross => bar(0.0).max(bar(90.0)),
        Part::Disc => (0.5 - ((dx * dx + dy * dy).sqrt() - 0.6 * s)).clamp(0.0, 1.0),
        Part::Ring => {
            let r = (dx * dx + dy * dy).sqrt();
            (0.5 - ((r - 0.7 * s).abs() - 0.15 * s)).clamp(0.0, 1.0)
        }
    }
}

fn render(fam: Family, side: usize, rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> RgbImage {
    let sf = side as f64;
    let jitter = |rng: &mut ChaCha8Rng, amount: f64| (rng.random::<f64>() - 0.5) * 2.0 * amount * sf;
    let mut placed: Vec<(Part, f64, f64, f64)> = Vec::new();
    match fam {
        Family::Single(part) => {
            let s = sf * rng.random_range(0.18..0.3);
            placed.push((part, 0.5 * sf + jitter(rng, 0.18), 0.5 * sf + jitter(rng, 0.18), s));
        }
        Family::Pair {
            first,
            second,
            vertical,
        } => {
            let s = sf * rng.random_range(0.07..0.1);
            let across = 0.5 * sf + jitter(rng, 0.15);
            for (part, pos) in [(first, 0.28), (second, 0.72)] {
                let along = pos * sf + jitter(rng, 0.06);
                let (cx, cy) = if vertical { (across, along) } else { (along, across) };
                placed.push((part, cx, cy, s));
            }
        }
    }

    // small distractors anywhere in the frame
    for _ in 0..rng.random_range(0..=CLUTTER) {
        let part = PARTS[rng.random_range(0..PARTS.len())];
        let s = sf * rng.random_range(0.05..0.09);
        placed.push((part, rng.random_range(0.0..sf), rng.random_range(0.0..sf), s));
    }

    let bg: f64 = rng.random_range(0.25..0.75);
    let contrast = rng.random_range(0.15..0.35) * if rng.random::<bool>() { 1.0 } else { -1.0 };
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.08..0.08));
    let fg_tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
    let ramp = rng.random_range(-0.5..0.5);
    let (rs, rc) = rng.random_range(0.0..std::f64::consts::TAU).sin_cos();

    RgbImage::from_fn(side as u32, side as u32, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let cov = placed
            .iter()
            .map(|&(part, cx, cy, s)| coverage(part, cx, cy, s, px, py))
            .fold(0.0, f64::max);
        let light = 1.0 + ramp * ((px / sf - 0.5) * rc + (py / sf - 0.5) * rs);
        Rgb(std::array::from_fn(|c| {
            let base = bg + tint[c] + cov * (contrast + fg_tint[c]);
            let v = base * light + noise.sample(rng);
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    })
}

/// `n_classes` shape families, `per_class` images each, `image_side` square.
pub fn generate_synthetic_dataset(
    n_classes: usize,
    per_class: usize,
    image_side: usize,
    seed: u64,
) -> Result<LabeledImageSet> {
    if n_classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "synthetic dataset needs at least 2 classes, got {n_classes}"
        )));
    }
    if image_side < 8 {
        return Err(Error::InvalidParameter(format!("image side {image_side} too small")));
    }
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let mut set = LabeledImageSet::default();
    for class in 0..n_classes {
        // one stream per class keeps a class's images independent of n_classes
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        let fam = family(class);
        set.classes.push(format!("class{class:02}"));
        set.images.push(
            (0..per_class)
                .map(|i| LabeledImage {
                    id: format!("{i:04}.png"),
                    raster: render(fam, image_side, &mut rng, &noise),
                })
                .collect(),
        );
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::build_filter_bank;
    use crate::preprocess::prepare;
    use crate::s1c1::s1_convolve;
    use crate::conditioning::PatchConditioning;
    use std::time::Instant;

    #[test]
    fn families_are_distinct() {
        let n = 2 + 4 * part_pairs().len();
        assert_eq!(n, 62);
        let fams: Vec<Family> = (0..n).map(family).collect();
        for i in 0..fams.len() {
            for j in 0..i {
                assert_ne!(fams[i], fams[j], "classes {i} and {j}");
            }
        }
        for c in (2..n).step_by(2) {
            if let (Family::Pair { first: a, second: b, .. }, Family::Pair { first: c2, second: d, .. }) =
                (family(c), family(c + 1))
            {
                assert_eq!((a, b), (d, c2));
                assert_ne!(a, b);
            } else {
                panic!("class {c} is not a pair");
            }
        }
    }

    #[test]
    fn seed_determinism() {
        let a = generate_synthetic_dataset(3, 4, 48, 7).unwrap();
        let b = generate_synthetic_dataset(3, 4, 48, 7).unwrap();
        let c = generate_synthetic_dataset(3, 4, 48, 8).unwrap();
        for (x, y) in a.images.iter().flatten().zip(b.images.iter().flatten()) {
            assert_eq!(x.raster, y.raster);
            assert_eq!(x.id, y.id);
        }
        assert_ne!(a.images[0][0].raster, c.images[0][0].raster);
        // a class does not depend on how many classes were requested
        let wide = generate_synthetic_dataset(6, 4, 48, 7).unwrap();
        assert_eq!(wide.images[2][3].raster, a.images[2][3].raster);
    }

    #[test]
    fn rejects_single_class() {
        assert!(generate_synthetic_dataset(1, 4, 64, 0).is_err());
    }

    #[test]
    fn five_classes_render_fast() {
        let t = Instant::now();
        let set = generate_synthetic_dataset(5, 40, 64, 1).unwrap();
        assert_eq!(set.n_images(), 200);
        assert!(t.elapsed().as_secs_f64() < 1.0, "{:?}", t.elapsed());
    }

    #[test]
    fn bars_separate_on_orientation_planes() {
        // peak S1 response on the 0 and 90 degree planes, 12-filter bank
        let bank = build_filter_bank(12, false, 11, 2.75).unwrap();
        let set = generate_synthetic_dataset(2, 10, 64, 3).unwrap();
        for (class, imgs) in set.images.iter().enumerate() {
            for img in imgs {
                let op = prepare(&img.raster, 64, false).unwrap();
                let s1 = s1_convolve(&op, &bank, &PatchConditioning::default()).unwrap();
                let energy = |i: usize| s1.planes[i].data.iter().fold(0.0f64, |m, &v| m.max(v));
                let (horizontal, vertical) = (energy(0), energy(6));
                if class == 0 {
                    assert!(horizontal > vertical);
                } else {
                    assert!(vertical > horizontal);
                }
            }
        }
    }
}
