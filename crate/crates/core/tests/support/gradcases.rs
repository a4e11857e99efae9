//! One finite-difference case per differentiable op, plus the full block.
//! Each case draws its own shapes and values from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resattn::autodiff::{Tape, Var};
use resattn::gradcheck::{check_gradients, check_gradients_by, project, GradCheckConfig};
use resattn::model::{ResAttnBlock, ResAttnBlockConfig};
use resattn::nn::{Conv2dSpec, Mode};
use resattn::{Result, Shape, Tensor};

pub const TOLERANCE: f64 = 1e-4;

pub struct GradCase {
    pub name: &'static str,
    pub run: fn(u64) -> Result<f64>,
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor<f64> {
    let shape = shape.into();
    let data = (0..shape.numel())
        .map(|_| rng.random_range(lo..hi))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Distinct values at least 0.02 apart in random order, so max-based ops
/// have no near ties within a finite-difference step.
pub fn spaced(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<f64> {
    let shape = shape.into();
    let n = shape.numel();
    let mut data: Vec<f64> = (0..n)
        .map(|k| -1.0 + 2.0 * (k as f64 + 0.5) / n as f64)
        .collect();
    for i in (1..n).rev() {
        data.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_vec(shape, data).unwrap()
}

/// Values with `|x| ≥ 0.05`, away from the ReLU kink.
fn off_zero(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<f64> {
    let shape = shape.into();
    let data = (0..shape.numel())
        .map(|_| {
            let v = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn bits(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<f64> {
    uniform(rng, shape, 0.0, 1.0).map(|v| if v < 0.5 { 0.0 } else { 1.0 })
}

fn dims(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(2..=5),
        rng.random_range(2..=5),
    ]
}

fn cfg() -> GradCheckConfig {
    GradCheckConfig::default()
}

fn unary(
    seed: u64,
    make: fn(&mut ChaCha8Rng, [usize; 4]) -> Tensor<f64>,
    op: fn(&mut Tape<f64>, Var) -> Result<Var>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dims(&mut rng);
    let x = make(&mut rng, d);
    let probe = out_shape(op, &x)?;
    let r = uniform(&mut rng, probe, -1.0, 1.0);
    Ok(check_gradients(&[x], cfg(), |t, v| {
        let y = op(t, v[0])?;
        project(t, y, &r)
    })?
    .max_rel_error())
}

/// Output shape of a unary op, computed on a throwaway tape.
fn out_shape(op: fn(&mut Tape<f64>, Var) -> Result<Var>, x: &Tensor<f64>) -> Result<Shape> {
    let mut t = Tape::inference();
    let v = t.constant(x.clone());
    let y = op(&mut t, v)?;
    Ok(t.shape(y))
}

fn any(rng: &mut ChaCha8Rng, d: [usize; 4]) -> Tensor<f64> {
    uniform(rng, d, -2.0, 2.0)
}

fn binary(
    seed: u64,
    rhs: fn([usize; 4]) -> [usize; 4],
    op: fn(&mut Tape<f64>, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dims(&mut rng);
    let a = uniform(&mut rng, d, -1.0, 1.0);
    let b = uniform(&mut rng, rhs(d), -1.0, 1.0);
    let r = uniform(&mut rng, d, -1.0, 1.0);
    Ok(check_gradients(&[a, b], cfg(), |t, v| {
        let y = op(t, v[0], v[1])?;
        project(t, y, &r)
    })?
    .max_rel_error())
}

fn conv(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = [1, 2, 4][rng.random_range(0..3)];
    let cin = g * rng.random_range(1..=2);
    let cout = g * rng.random_range(1..=2);
    let k = [1, 3][rng.random_range(0..2)];
    let spec = Conv2dSpec::new(cin, cout, k)
        .stride(rng.random_range(1..=2))
        .padding(rng.random_range(0..=k / 2))
        .groups(g)
        .bias(rng.random_bool(0.5));
    let n = rng.random_range(1..=2);
    let x = uniform(&mut rng, [n, cin, 5, 6], -1.0, 1.0);
    let w = uniform(&mut rng, spec.weight_shape(), -1.0, 1.0);
    let (oh, ow) = spec.output_hw(5, 6)?;
    let r = uniform(&mut rng, [x.shape().n, cout, oh, ow], -1.0, 1.0);
    let mut inputs = vec![x, w];
    if spec.has_bias {
        inputs.push(uniform(&mut rng, spec.bias_shape(), -1.0, 1.0));
    }
    Ok(check_gradients(&inputs, cfg(), |t, v| {
        let y = t.conv2d(v[0], spec, v[1], v.get(2).copied())?;
        project(t, y, &r)
    })?
    .max_rel_error())
}

fn transpose_conv(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = [1, 2][rng.random_range(0..2)];
    let cin = g * rng.random_range(1..=2);
    let cout = g * rng.random_range(1..=2);
    let k = rng.random_range(1..=3);
    let spec = Conv2dSpec::new(cin, cout, k)
        .stride(rng.random_range(1..=2))
        .groups(g)
        .bias(rng.random_bool(0.5));
    let n = rng.random_range(1..=2);
    let x = uniform(&mut rng, [n, cin, 3, 4], -1.0, 1.0);
    let w = uniform(&mut rng, spec.transpose_weight_shape(), -1.0, 1.0);
    let (oh, ow) = spec.transpose_output_hw(3, 4)?;
    let r = uniform(&mut rng, [x.shape().n, cout, oh, ow], -1.0, 1.0);
    let mut inputs = vec![x, w];
    if spec.has_bias {
        inputs.push(uniform(&mut rng, spec.bias_shape(), -1.0, 1.0));
    }
    Ok(check_gradients(&inputs, cfg(), |t, v| {
        let y = t.transpose_conv2d(v[0], spec, v[1], v.get(2).copied())?;
        project(t, y, &r)
    })?
    .max_rel_error())
}

fn batchnorm(seed: u64, mode: Mode) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=3);
    let d = [2, c, rng.random_range(2..=4), rng.random_range(2..=4)];
    let x = uniform(&mut rng, d, -2.0, 2.0);
    let gamma = uniform(&mut rng, [1, c, 1, 1], 0.5, 1.5);
    let beta = uniform(&mut rng, [1, c, 1, 1], -0.5, 0.5);
    let mean = uniform(&mut rng, [1, c, 1, 1], -0.5, 0.5);
    let var = uniform(&mut rng, [1, c, 1, 1], 0.5, 2.0);
    let r = uniform(&mut rng, d, -1.0, 1.0);
    Ok(check_gradients(&[x, gamma, beta], cfg(), |t, v| {
        let (y, _) = t.batchnorm2d(v[0], v[1], v[2], &mean, &var, 1e-5, mode)?;
        project(t, y, &r)
    })?
    .max_rel_error())
}

fn scale(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dims(&mut rng);
    let x = uniform(&mut rng, d, -1.0, 1.0);
    let s = uniform(&mut rng, Shape::SCALAR, -2.0, 2.0);
    let r = uniform(&mut rng, d, -1.0, 1.0);
    Ok(check_gradients(&[x, s], cfg(), |t, v| {
        let y = t.scale(v[0], v[1])?;
        project(t, y, &r)
    })?
    .max_rel_error())
}

fn concat(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [n, c, h, w] = dims(&mut rng);
    let c2 = rng.random_range(1..=3);
    let a = uniform(&mut rng, [n, c, h, w], -1.0, 1.0);
    let b = uniform(&mut rng, [n, c2, h, w], -1.0, 1.0);
    let r = uniform(&mut rng, [n, c + c2, h, w], -1.0, 1.0);
    Ok(check_gradients(&[a, b], cfg(), |t, v| {
        let y = t.concat(v[0], v[1])?;
        project(t, y, &r)
    })?
    .max_rel_error())
}

fn loss_case(seed: u64, dice: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dims(&mut rng);
    let p = uniform(&mut rng, d, 0.05, 0.95);
    let g = bits(&mut rng, d);
    Ok(check_gradients(&[p], cfg(), |t, v| {
        if dice {
            t.dice_loss(v[0], &g)
        } else {
            t.bce_loss(v[0], &g)
        }
    })?
    .max_rel_error())
}

/// The full block with respect to its input and every parameter, in
/// train mode (batch statistics) or eval mode (running statistics).
pub fn resattn_block(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f_in, f_out, g) = [(4, 4, 2), (4, 8, 4), (2, 4, 1), (3, 6, 3)][rng.random_range(0..4)];
    let mode = if rng.random_bool(0.5) {
        Mode::Train
    } else {
        Mode::Eval
    };
    let mut block = ResAttnBlock::<f64>::new(ResAttnBlockConfig::new(f_in, f_out, g), seed)?;
    // Move the gates and BN affines off their initial values so every path
    // carries a distinct weight.
    for p in &mut block.weights.params {
        if p.value.numel() <= f_out {
            let s = p.value.shape();
            p.value = uniform(&mut rng, s, 0.5, 1.5);
        }
    }
    for r in &mut block.weights.running {
        let s = r.var.shape();
        r.mean = uniform(&mut rng, s, -0.2, 0.2);
        r.var = uniform(&mut rng, s, 0.5, 1.5);
    }
    let x = spaced(&mut rng, [2, f_in, 4, 4]);
    let r = uniform(&mut rng, [2, f_out, 4, 4], -1.0, 1.0);
    let mut inputs = vec![x];
    inputs.extend(block.weights.params.iter().map(|p| p.value.clone()));
    Ok(check_gradients_by(&inputs, cfg(), |t, ts| {
        let mut b = block.clone();
        for (p, v) in b.weights.params.iter_mut().zip(&ts[1..]) {
            p.value = v.clone();
        }
        let x = t.leaf(ts[0].clone(), true);
        let f = b.forward(t, x, mode)?;
        let s = project(t, f.output, &r)?;
        let mut vars = vec![x];
        vars.extend(f.params);
        Ok((s, vars))
    })?
    .max_rel_error())
}

pub fn cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "add",
            run: |s| binary(s, |d| d, |t, a, b| t.add(a, b)),
        },
        GradCase {
            name: "add_channel_broadcast",
            run: |s| binary(s, |d| [d[0], d[1], 1, 1], |t, a, b| t.add(a, b)),
        },
        GradCase {
            name: "mul",
            run: |s| binary(s, |d| d, |t, a, b| t.mul(a, b)),
        },
        GradCase {
            name: "mul_channel_broadcast",
            run: |s| binary(s, |d| [1, d[1], 1, 1], |t, a, b| t.mul(a, b)),
        },
        GradCase {
            name: "mul_spatial_broadcast",
            run: |s| binary(s, |d| [d[0], 1, d[2], d[3]], |t, a, b| t.mul(a, b)),
        },
        GradCase {
            name: "scale",
            run: scale,
        },
        GradCase {
            name: "scale_const",
            run: |s| unary(s, any, |t, x| t.scale_const(x, -1.7)),
        },
        GradCase {
            name: "conv2d",
            run: conv,
        },
        GradCase {
            name: "transpose_conv2d",
            run: transpose_conv,
        },
        GradCase {
            name: "batchnorm2d_train",
            run: |s| batchnorm(s, Mode::Train),
        },
        GradCase {
            name: "batchnorm2d_eval",
            run: |s| batchnorm(s, Mode::Eval),
        },
        GradCase {
            name: "gelu",
            run: |s| unary(s, any, |t, x| t.gelu(x)),
        },
        GradCase {
            name: "sigmoid",
            run: |s| unary(s, any, |t, x| t.sigmoid(x)),
        },
        GradCase {
            name: "relu",
            run: |s| unary(s, off_zero, |t, x| t.relu(x)),
        },
        GradCase {
            name: "maxpool2d",
            run: |s| {
                unary(
                    s,
                    |r, d| spaced(r, [d[0], d[1], 2 * d[2], 2 * d[3]]),
                    |t, x| t.maxpool2d(x),
                )
            },
        },
        GradCase {
            name: "channel_attention",
            run: |s| unary(s, spaced, |t, x| t.channel_attention(x)),
        },
        GradCase {
            name: "spatial_attention",
            run: |s| unary(s, any, |t, x| t.spatial_attention(x)),
        },
        GradCase {
            name: "concat",
            run: concat,
        },
        GradCase {
            name: "sum",
            run: |s| unary(s, any, |t, x| t.sum(x)),
        },
        GradCase {
            name: "bce_loss",
            run: |s| loss_case(s, false),
        },
        GradCase {
            name: "dice_loss",
            run: |s| loss_case(s, true),
        },
        GradCase {
            name: "resattn_block",
            run: resattn_block,
        },
    ]
}
