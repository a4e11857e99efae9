//! Independent oracles for the convolution, normalization, metric and loss
//! kernels. Each returns the largest deviation it observed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resattn::loss::{bce_loss, dice_loss, seg_loss, LossWeights};
use resattn::metrics::{compute_metrics, ConfusionCounts};
use resattn::nn::{batchnorm2d, conv2d, transpose_conv2d, Conv2dSpec, Mode};
use resattn::{Result, Tape, Tensor};

use super::gradcases::uniform;

/// Textbook seven-loop convolution.
pub fn direct_conv(
    x: &Tensor<f64>,
    spec: &Conv2dSpec,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
) -> Tensor<f64> {
    let s = x.shape();
    let (oh, ow) = spec.output_hw(s.h, s.w).unwrap();
    let (in_g, out_g) = (
        spec.in_channels / spec.groups,
        spec.out_channels / spec.groups,
    );
    let (kh, kw) = spec.kernel;
    Tensor::from_fn([s.n, spec.out_channels, oh, ow], |n, o, y, xx| {
        let g = o / out_g;
        let mut acc = b.map_or(0.0, |b| b.data()[o]);
        for i in 0..in_g {
            for ky in 0..kh {
                for kx in 0..kw {
                    let sy = (y * spec.stride + ky) as isize - spec.padding as isize;
                    let sx = (xx * spec.stride + kx) as isize - spec.padding as isize;
                    if sy >= 0 && sx >= 0 && (sy as usize) < s.h && (sx as usize) < s.w {
                        acc += w.at(o, i, ky, kx) * x.at(n, g * in_g + i, sy as usize, sx as usize);
                    }
                }
            }
        }
        acc
    })
}

/// Grouped convolution against the direct loops, and against a dense
/// (groups = 1) convolution whose weight is block-diagonal.
pub fn grouped_conv(seed: u64, groups: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cin = groups * rng.random_range(1..=3);
    let cout = groups * rng.random_range(1..=3);
    let k = [1, 3][rng.random_range(0..2)];
    let spec = Conv2dSpec::new(cin, cout, k)
        .stride(rng.random_range(1..=2))
        .padding(rng.random_range(0..=1))
        .groups(groups)
        .bias(true);
    let n = rng.random_range(1..=2);
    let x = uniform(&mut rng, [n, cin, 7, 6], -1.0, 1.0);
    let w = uniform(&mut rng, spec.weight_shape(), -1.0, 1.0);
    let b = uniform(&mut rng, spec.bias_shape(), -1.0, 1.0);
    let y = conv2d(&x, &spec, &w, Some(&b))?;

    let (in_g, out_g) = (cin / groups, cout / groups);
    let dense = spec.groups(1);
    let wd = Tensor::from_fn(dense.weight_shape(), |o, i, ky, kx| {
        if i / in_g == o / out_g {
            w.at(o, i % in_g, ky, kx)
        } else {
            0.0
        }
    });
    let yd = conv2d(&x, &dense, &wd, Some(&b))?;
    Ok(y.max_abs_diff(&direct_conv(&x, &spec, &w, Some(&b)))
        .max(y.max_abs_diff(&yd)))
}

/// `|⟨conv(x), y⟩ − ⟨x, conv_transpose(y)⟩|`, relative to the magnitude of
/// the inner products.
pub fn transpose_adjoint(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = [1, 2][rng.random_range(0..2)];
    let (cin, cout) = (g * rng.random_range(1..=3), g * rng.random_range(1..=3));
    let k: usize = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let pad = rng.random_range(0..k.div_ceil(2));
    let conv = Conv2dSpec::new(cin, cout, k)
        .stride(stride)
        .padding(pad)
        .groups(g);
    // An input extent that transposition restores exactly.
    let h = rng.random_range(0..4) * stride + k - 2 * pad;
    let (oh, ow) = conv.output_hw(h, h)?;
    let x = uniform(&mut rng, [2, cin, h, h], -1.0, 1.0);
    let w = uniform(&mut rng, conv.weight_shape(), -1.0, 1.0);
    let y = uniform(&mut rng, [2, cout, oh, ow], -1.0, 1.0);
    let tspec = Conv2dSpec::new(cout, cin, k)
        .stride(stride)
        .padding(pad)
        .groups(g);
    let back = transpose_conv2d(&y, &tspec, &w, None)?;
    if back.shape() != x.shape() {
        return Ok(f64::INFINITY);
    }
    let lhs = conv2d(&x, &conv, &w, None)?.dot(&y);
    let rhs = x.dot(&back);
    Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0))
}

/// Eval-mode batch norm against the per-channel affine map
/// `a·x + b` with `a = γ/√(σ²+ε)`, `b = β − μ·a`.
pub fn batchnorm_affine(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=4);
    let x = uniform(&mut rng, [2, c, 3, 5], -3.0, 3.0);
    let gamma = uniform(&mut rng, [1, c, 1, 1], -2.0, 2.0);
    let beta = uniform(&mut rng, [1, c, 1, 1], -1.0, 1.0);
    let mean = uniform(&mut rng, [1, c, 1, 1], -1.0, 1.0);
    let var = uniform(&mut rng, [1, c, 1, 1], 0.1, 3.0);
    let y = batchnorm2d(&x, &gamma, &beta, &mean, &var, 1e-5, Mode::Eval)?.output;
    let want = Tensor::from_fn(x.shape(), |n, ch, h, w| {
        let a = gamma.data()[ch] / (var.data()[ch] + 1e-5).sqrt();
        a * x.at(n, ch, h, w) + beta.data()[ch] - mean.data()[ch] * a
    });
    Ok(y.max_abs_diff(&want))
}

/// Metrics on random masks against per-pixel counting with the formulas
/// written out. Returns 0 on exact agreement.
pub fn metrics_counting(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(1..=9), rng.random_range(1..=9));
    let mut bit = || if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    let p = Tensor::<f64>::from_fn([1, 1, h, w], |_, _, _, _| bit());
    let g = Tensor::<f64>::from_fn([1, 1, h, w], |_, _, _, _| bit());
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for y in 0..h {
        for x in 0..w {
            match (p.at(0, 0, y, x) == 1.0, g.at(0, 0, y, x) == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let r = compute_metrics(&p, &g)?;
    let frac = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let counts_ok = r.counts == ConfusionCounts { tp, fp, tn, fn_ };
    let want = [
        frac(2 * tp, 2 * tp + fp + fn_),
        frac(tp, tp + fp + fn_),
        frac(tp, tp + fn_),
        frac(tn, tn + fp),
        frac(tp, tp + fp),
    ];
    let got = [r.dsc, r.jsi, r.se, r.sp, r.pr];
    let dev = want
        .iter()
        .zip(got)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(if counts_ok { dev } else { f64::INFINITY })
}

fn row(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec([1, 1, 1, v.len()], v.to_vec()).unwrap()
}

fn taped_seg_loss(p: &Tensor<f64>, g: &Tensor<f64>, bce: f64, dice: f64) -> Result<f64> {
    let mut t = Tape::new();
    let pv = t.constant(p.clone());
    let l = seg_loss(&mut t, pv, g, LossWeights { bce, dice })?;
    Ok(t.value(l).data()[0])
}

/// Closed-form loss values and the degenerate weightings of the combined
/// loss. Returns the largest absolute deviation.
pub fn loss_identities() -> Result<f64> {
    let mut dev: f64 = 0.0;
    let mut expect = |got: f64, want: f64| dev = dev.max((got - want).abs());

    let g = row(&[1.0, 0.0, 1.0, 1.0]);
    expect(bce_loss(&g, &g)?, 0.0);
    let (p2, g2) = (row(&[0.9, 0.2]), row(&[1.0, 0.0]));
    expect(bce_loss(&p2, &g2)?, -(0.9f64.ln() + 0.8f64.ln()) / 2.0);
    expect(bce_loss(&p2, &g2)?, 0.164_252_033_486_018);

    // Disjoint 4-pixel masks with smoothing 1: 1 − 1/9.
    let a = row(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let b = row(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    expect(dice_loss(&a, &b)?, 1.0 - 1.0 / 9.0);
    expect(dice_loss(&a, &a)?, 0.0);

    let p = row(&[0.9, 0.2, 0.6, 0.4]);
    let g = row(&[1.0, 0.0, 0.0, 1.0]);
    let (bce, dice) = (bce_loss(&p, &g)?, dice_loss(&p, &g)?);
    expect(taped_seg_loss(&p, &g, 1.0, 0.0)?, bce);
    expect(taped_seg_loss(&p, &g, 0.0, 1.0)?, dice);
    expect(taped_seg_loss(&p, &g, 1.0, 1.0)?, bce + dice);
    expect(taped_seg_loss(&p, &g, 0.0, 0.0)?, 0.0);
    Ok(dev)
}
