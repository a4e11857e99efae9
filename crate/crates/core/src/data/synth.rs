//! Synthetic wound-like corpus: one to three ellipses in reddish tones on a
//! textured skin-coloured background, with exact masks.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{save_image, save_mask, Sample};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_SYNTH_SIZE: usize = 224;

/// Ellipse in pixel coordinates, rotated by `theta` about its centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    pub theta: f64,
}

impl Ellipse {
    /// Whether the centre of pixel `(y, x)` lies inside.
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (dy, dx) = (y as f64 + 0.5 - self.cy, x as f64 + 0.5 - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

fn quantize(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0
}

/// One image of side `size` and the ellipses drawn in it. Pixel values are
/// already on the 8-bit grid, so a PNG round trip is lossless.
pub fn synth_sample(seed: u64, size: usize) -> (Sample, Vec<Ellipse>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let skin = [
        rng.random_range(0.75..0.92),
        rng.random_range(0.55..0.72),
        rng.random_range(0.45..0.62),
    ];
    // Two low-frequency ripples give the background some structure.
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let ang = rng.random_range(0.0..PI);
            let freq = rng.random_range(2.0..6.0) * 2.0 * PI / s;
            (
                ang.cos() * freq,
                ang.sin() * freq,
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.02..0.06),
            )
        })
        .collect();

    let n = rng.random_range(1..=3);
    let ellipses: Vec<Ellipse> = (0..n)
        .map(|_| Ellipse {
            cy: rng.random_range(0.2 * s..0.8 * s),
            cx: rng.random_range(0.2 * s..0.8 * s),
            ry: rng.random_range(0.08 * s..0.2 * s),
            rx: rng.random_range(0.08 * s..0.2 * s),
            theta: rng.random_range(0.0..PI),
        })
        .collect();
    let wound: Vec<[f64; 3]> = ellipses
        .iter()
        .map(|_| {
            [
                rng.random_range(0.45..0.7),
                rng.random_range(0.08..0.22),
                rng.random_range(0.08..0.2),
            ]
        })
        .collect();

    let mut image = Tensor::<f32>::zeros([1, 3, size, size]);
    let mut mask = Tensor::<f32>::zeros([1, 1, size, size]);
    for y in 0..size {
        for x in 0..size {
            let ripple: f64 = waves
                .iter()
                .map(|&(fy, fx, ph, amp)| amp * (fy * y as f64 + fx * x as f64 + ph).sin())
                .sum();
            let grain = rng.random_range(-0.03..0.03);
            // The last ellipse drawn wins where they overlap.
            let inside = ellipses.iter().rposition(|e| e.contains(y, x));
            for c in 0..3 {
                let base = match inside {
                    Some(k) => wound[k][c] + 0.5 * grain + rng.random_range(-0.05..0.05),
                    None => skin[c] + ripple + grain,
                };
                *image.at_mut(0, c, y, x) = quantize(base);
            }
            if inside.is_some() {
                *mask.at_mut(0, 0, y, x) = 1.0;
            }
        }
    }
    let sample = Sample::new(image, mask).expect("shapes agree by construction");
    (sample, ellipses)
}

/// Per-image seeds of a corpus, split-specific so that changing the number
/// of training images leaves validation images unchanged.
pub fn image_seed(seed: u64, split: &str, index: usize) -> u64 {
    let tag = split.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag);
    rng.set_stream(index as u64);
    rng.random()
}

pub fn synth_name(index: usize) -> String {
    format!("synth_{index:04}.png")
}

/// Writes `root/{train,validation}/{images,labels}/synth_NNNN.png`.
pub fn write_corpus(
    root: impl AsRef<Path>,
    n_train: usize,
    n_val: usize,
    seed: u64,
    size: usize,
) -> Result<()> {
    let root = root.as_ref();
    for (split, n) in [("train", n_train), ("validation", n_val)] {
        for i in 0..n {
            let (s, _) = synth_sample(image_seed(seed, split, i), size);
            save_image(
                root.join(split).join("images").join(synth_name(i)),
                &s.image,
            )?;
            save_mask(root.join(split).join("labels").join(synth_name(i)), &s.mask)?;
        }
    }
    Ok(())
}
