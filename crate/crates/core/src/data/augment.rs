//! Training-time augmentation.
//!
//! Geometric operations (dihedral symmetry, random resized crop, small
//! affine warp) move image and mask together, with nearest-neighbour
//! sampling for the mask so it stays binary. Photometric operations (HSV
//! jitter, 3×3 median blur, Gaussian noise) touch the image only and clamp
//! to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dihedral::DihedralTransform;
use super::io::Sample;
use crate::tensor::Tensor;

/// Gate probabilities and parameter ranges.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p_dihedral: f64,
    pub p_crop: f64,
    /// Range of the crop area as a fraction of the image.
    pub crop_scale: (f64, f64),
    /// Range of the crop aspect ratio (width / height).
    pub crop_ratio: (f64, f64),
    pub p_affine: f64,
    pub max_rotation_deg: f64,
    /// Largest translation as a fraction of each side.
    pub max_translate: f64,
    pub p_hsv: f64,
    /// Largest hue shift as a fraction of the colour wheel.
    pub max_hue_shift: f64,
    /// Saturation and value are scaled by a factor in `1 ± this`.
    pub max_sv_scale: f64,
    pub p_median: f64,
    pub p_noise: f64,
    pub max_noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_dihedral: 1.0,
            p_crop: 1.0,
            crop_scale: (0.5, 1.0),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            p_affine: 0.3,
            max_rotation_deg: 10.0,
            max_translate: 0.05,
            p_hsv: 0.3,
            max_hue_shift: 0.02,
            max_sv_scale: 0.1,
            p_median: 0.3,
            p_noise: 0.3,
            max_noise_sigma: 0.02,
        }
    }
}

impl AugmentConfig {
    /// Every gate closed.
    pub fn none() -> Self {
        AugmentConfig {
            p_dihedral: 0.0,
            p_crop: 0.0,
            p_affine: 0.0,
            p_hsv: 0.0,
            p_median: 0.0,
            p_noise: 0.0,
            ..Self::default()
        }
    }
}

/// Crop rectangle in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub angle_rad: f64,
    /// Translation in pixels `(dy, dx)`.
    pub shift: (f64, f64),
}

/// The random decisions of one augmentation, drawn before any pixel work.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AugmentPlan {
    pub dihedral: Option<DihedralTransform>,
    pub crop: Option<CropBox>,
    pub affine: Option<Affine>,
    /// `(hue shift, saturation factor, value factor)`.
    pub hsv: Option<(f64, f64, f64)>,
    pub median: bool,
    /// `(sigma, seed)` of the noise field.
    pub noise: Option<(f64, u64)>,
}

fn gate(rng: &mut impl Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn symmetric(rng: &mut impl Rng, a: f64) -> f64 {
    if a > 0.0 {
        rng.random_range(-a..=a)
    } else {
        0.0
    }
}

/// Random-resized-crop box: area fraction and log-uniform aspect ratio,
/// shrunk to fit, at a uniform position.
fn crop_box(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> CropBox {
    let (s0, s1) = cfg.crop_scale;
    let scale = if s1 > s0 {
        rng.random_range(s0..=s1)
    } else {
        s0
    };
    let (r0, r1) = (cfg.crop_ratio.0.ln(), cfg.crop_ratio.1.ln());
    let ratio = if r1 > r0 {
        rng.random_range(r0..=r1)
    } else {
        r0
    }
    .exp();
    let area = scale * (h * w) as f64;
    let ch = ((area / ratio).sqrt().round() as usize).clamp(1, h);
    let cw = ((area * ratio).sqrt().round() as usize).clamp(1, w);
    CropBox {
        y: rng.random_range(0..=h - ch),
        x: rng.random_range(0..=w - cw),
        h: ch,
        w: cw,
    }
}

impl AugmentPlan {
    /// Draws gates and parameters in a fixed order for an `h × w` sample.
    pub fn draw(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let mut plan = AugmentPlan::default();
        if gate(rng, cfg.p_dihedral) {
            plan.dihedral = Some(DihedralTransform::ALL[rng.random_range(0..8)]);
        }
        let (h, w) = plan.dihedral.map_or((h, w), |t| t.output_hw(h, w));
        if gate(rng, cfg.p_crop) {
            plan.crop = Some(crop_box(h, w, cfg, rng));
        }
        if gate(rng, cfg.p_affine) {
            plan.affine = Some(Affine {
                angle_rad: symmetric(rng, cfg.max_rotation_deg).to_radians(),
                shift: (
                    symmetric(rng, cfg.max_translate) * h as f64,
                    symmetric(rng, cfg.max_translate) * w as f64,
                ),
            });
        }
        if gate(rng, cfg.p_hsv) {
            plan.hsv = Some((
                symmetric(rng, cfg.max_hue_shift),
                1.0 + symmetric(rng, cfg.max_sv_scale),
                1.0 + symmetric(rng, cfg.max_sv_scale),
            ));
        }
        plan.median = gate(rng, cfg.p_median);
        if gate(rng, cfg.p_noise) {
            let sigma = rng.random_range(0.0..=cfg.max_noise_sigma.max(0.0));
            plan.noise = Some((sigma, rng.random()));
        }
        plan
    }

    pub fn apply(&self, s: &Sample) -> Sample {
        let (mut image, mut mask) = (s.image.clone(), s.mask.clone());
        if let Some(t) = self.dihedral {
            image = t.apply(&image);
            mask = t.apply(&mask);
        }
        if let Some(b) = self.crop {
            let (h, w) = (image.shape().h, image.shape().w);
            image = resize_bilinear(&crop(&image, b), h, w);
            mask = resize_nearest(&crop(&mask, b), h, w);
        }
        if let Some(a) = self.affine {
            image = warp(&image, a, true);
            mask = warp(&mask, a, false);
        }
        if let Some((dh, fs, fv)) = self.hsv {
            image = hsv_jitter(&image, dh, fs, fv);
        }
        if self.median {
            image = median3(&image);
        }
        if let Some((sigma, seed)) = self.noise {
            image = gaussian_noise(&image, sigma, seed);
        }
        Sample { image, mask }
    }
}

/// Draws a plan from `rng` and applies it.
pub fn augment_train(s: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    let (h, w) = s.hw();
    AugmentPlan::draw(h, w, cfg, rng).apply(s)
}

pub fn crop(t: &Tensor<f32>, b: CropBox) -> Tensor<f32> {
    let s = t.shape();
    Tensor::from_fn([s.n, s.c, b.h, b.w], |n, c, y, x| {
        t.at(n, c, b.y + y, b.x + x)
    })
}

/// Half-pixel-centred bilinear resize with edge clamping.
pub fn resize_bilinear(t: &Tensor<f32>, oh: usize, ow: usize) -> Tensor<f32> {
    let s = t.shape();
    let (sy, sx) = (s.h as f64 / oh as f64, s.w as f64 / ow as f64);
    let coord = |o: usize, scale: f64, n: usize| {
        let v = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = v.floor() as usize;
        (i0, (i0 + 1).min(n - 1), v - i0 as f64)
    };
    Tensor::from_fn([s.n, s.c, oh, ow], |n, c, y, x| {
        let (y0, y1, fy) = coord(y, sy, s.h);
        let (x0, x1, fx) = coord(x, sx, s.w);
        let top = t.at(n, c, y0, x0) as f64 * (1.0 - fx) + t.at(n, c, y0, x1) as f64 * fx;
        let bot = t.at(n, c, y1, x0) as f64 * (1.0 - fx) + t.at(n, c, y1, x1) as f64 * fx;
        (top * (1.0 - fy) + bot * fy) as f32
    })
}

pub fn resize_nearest(t: &Tensor<f32>, oh: usize, ow: usize) -> Tensor<f32> {
    let s = t.shape();
    let pick = |o: usize, n: usize, on: usize| {
        (((o as f64 + 0.5) * n as f64 / on as f64) as usize).min(n - 1)
    };
    Tensor::from_fn([s.n, s.c, oh, ow], |n, c, y, x| {
        t.at(n, c, pick(y, s.h, oh), pick(x, s.w, ow))
    })
}

/// Rotation about the centre followed by a shift; zero outside the source.
fn warp(t: &Tensor<f32>, a: Affine, bilinear: bool) -> Tensor<f32> {
    let s = t.shape();
    let (cy, cx) = ((s.h as f64 - 1.0) / 2.0, (s.w as f64 - 1.0) / 2.0);
    let (sin, cos) = a.angle_rad.sin_cos();
    let sample = |n: usize, c: usize, y: f64, x: f64| -> f32 {
        let inside =
            |yy: isize, xx: isize| yy >= 0 && xx >= 0 && (yy as usize) < s.h && (xx as usize) < s.w;
        if !bilinear {
            let (yy, xx) = (y.round() as isize, x.round() as isize);
            return if inside(yy, xx) {
                t.at(n, c, yy as usize, xx as usize)
            } else {
                0.0
            };
        }
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let mut acc = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (yy, xx) = (y0 as isize + dy, x0 as isize + dx);
                if inside(yy, xx) {
                    acc += wy * wx * t.at(n, c, yy as usize, xx as usize) as f64;
                }
            }
        }
        acc as f32
    };
    Tensor::from_fn(s, |n, c, y, x| {
        // Inverse map: undo the shift, then rotate back about the centre.
        let (dy, dx) = (y as f64 - a.shift.0 - cy, x as f64 - a.shift.1 - cx);
        let sy = cos * dy + sin * dx + cy;
        let sx = -sin * dy + cos * dx + cx;
        sample(n, c, sy, sx)
    })
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

pub fn hsv_jitter(t: &Tensor<f32>, hue_shift: f64, sat: f64, val: f64) -> Tensor<f32> {
    let s = t.shape();
    assert_eq!(s.c, 3, "hsv_jitter needs RGB");
    let mut out = t.clone();
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let px = |c| t.at(n, c, y, x) as f64;
                let (h, sa, v) = rgb_to_hsv(px(0), px(1), px(2));
                let (r, g, b) = hsv_to_rgb(
                    h + hue_shift,
                    (sa * sat).clamp(0.0, 1.0),
                    (v * val).clamp(0.0, 1.0),
                );
                for (c, v) in [r, g, b].into_iter().enumerate() {
                    *out.at_mut(n, c, y, x) = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    out
}

/// Per-channel 3×3 median with replicated borders.
pub fn median3(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, y, x| {
        let mut w = [0f32; 9];
        let mut k = 0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let yy = (y as isize + dy).clamp(0, s.h as isize - 1) as usize;
                let xx = (x as isize + dx).clamp(0, s.w as isize - 1) as usize;
                w[k] = t.at(n, c, yy, xx);
                k += 1;
            }
        }
        w.sort_by(f32::total_cmp);
        w[4]
    })
}

pub fn gaussian_noise(t: &Tensor<f32>, sigma: f64, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    fn sample(seed: u64) -> Sample {
        let image = random_tensor::<f32>([1, 3, 12, 16], seed).map(|v| (v + 1.0) / 2.0);
        let mask =
            random_tensor::<f32>([1, 1, 12, 16], seed + 1).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        Sample::new(image, mask).unwrap()
    }

    #[test]
    fn closed_gates_are_identity() {
        let s = sample(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment_train(&s, &AugmentConfig::none(), &mut rng), s);

        // With the geometric gates disabled, find a seed where every 0.3
        // gate fails under the default probabilities.
        let cfg = AugmentConfig {
            p_dihedral: 0.0,
            p_crop: 0.0,
            ..AugmentConfig::default()
        };
        let seed = (0..1000)
            .find(|&k| {
                AugmentPlan::draw(12, 16, &cfg, &mut ChaCha8Rng::seed_from_u64(k))
                    == AugmentPlan::default()
            })
            .expect("some seed closes every gate");
        assert_eq!(
            augment_train(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)),
            s
        );
    }

    #[test]
    fn h_flip_reverses_columns() {
        let s = sample(2);
        let cfg = AugmentConfig {
            p_dihedral: 1.0,
            ..AugmentConfig::none()
        };
        let seed = (0..1000)
            .find(|&k| {
                AugmentPlan::draw(12, 16, &cfg, &mut ChaCha8Rng::seed_from_u64(k)).dihedral
                    == Some(DihedralTransform::FlipH)
            })
            .unwrap();
        let out = augment_train(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        for c in 0..3 {
            for y in 0..12 {
                for x in 0..16 {
                    assert_eq!(out.image.at(0, c, y, x), s.image.at(0, c, y, 15 - x));
                }
            }
        }
        assert_eq!(out.mask.at(0, 0, 3, 0), s.mask.at(0, 0, 3, 15));
    }

    #[test]
    fn invariants_hold_under_default_config() {
        let s = sample(3);
        for k in 0..40 {
            let out = augment_train(
                &s,
                &AugmentConfig::default(),
                &mut ChaCha8Rng::seed_from_u64(k),
            );
            // Quarter turns swap the sides of a non-square image.
            assert!(out.hw() == (12, 16) || out.hw() == (16, 12));
            assert!(out.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(out.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn full_crop_resize_is_identity() {
        let t = random_tensor::<f32>([1, 2, 7, 9], 4);
        assert_eq!(resize_nearest(&t, 7, 9), t);
        assert!(resize_bilinear(&t, 7, 9).max_abs_diff(&t) < 1e-6);
    }

    #[test]
    fn zero_affine_is_identity() {
        let t = random_tensor::<f32>([1, 1, 6, 5], 5);
        let a = Affine {
            angle_rad: 0.0,
            shift: (0.0, 0.0),
        };
        assert!(warp(&t, a, true).max_abs_diff(&t) < 1e-6);
        assert_eq!(warp(&t, a, false), t);
    }

    #[test]
    fn hsv_round_trip_and_median() {
        let t = random_tensor::<f32>([1, 3, 5, 5], 6).map(|v| (v + 1.0) / 2.0);
        assert!(hsv_jitter(&t, 0.0, 1.0, 1.0).max_abs_diff(&t) < 1e-6);
        let mut spike = Tensor::<f32>::zeros([1, 1, 3, 3]);
        *spike.at_mut(0, 0, 1, 1) = 1.0;
        assert!(median3(&spike).data().iter().all(|&v| v == 0.0));
    }
}
