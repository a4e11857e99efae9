use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Learnable affine parameters and running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Element> BatchNormState<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        let s = Shape::new(1, channels, 1, 1);
        BatchNormState {
            gamma: Tensor::ones(s),
            beta: Tensor::zeros(s),
            running_mean: Tensor::zeros(s),
            running_var: Tensor::ones(s),
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        update_running_stats(
            &mut self.running_mean,
            &mut self.running_var,
            stats,
            self.momentum,
        );
    }
}

/// Blends batch statistics into running estimates with weight `momentum`.
///
/// `stats.var` is the biased batch variance over `count` values per channel;
/// the running variance tracks the unbiased estimate.
pub fn update_running_stats<T: Element>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    stats: &BatchStats,
    momentum: f64,
) {
    let m = momentum;
    let correction = if stats.count > 1 {
        stats.count as f64 / (stats.count - 1) as f64
    } else {
        1.0
    };
    for (c, (rm, rv)) in running_mean
        .data_mut()
        .iter_mut()
        .zip(running_var.data_mut())
        .enumerate()
    {
        *rm = T::from_f64_lossy((1.0 - m) * rm.as_f64() + m * stats.mean[c]);
        *rv = T::from_f64_lossy((1.0 - m) * rv.as_f64() + m * stats.var[c] * correction);
    }
}

/// Per-channel batch statistics gathered in train mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Values per channel, `N·H·W`.
    pub count: usize,
}

/// Forward result kept for the backward pass.
#[derive(Debug)]
pub struct BatchNormForward<T> {
    pub output: Tensor<T>,
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub stats: Option<BatchStats>,
}

fn check_channels<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    let c = x.shape().c;
    for t in [gamma, beta] {
        if t.numel() != c {
            return Err(Error::ChannelMismatch {
                op: "batchnorm2d",
                expected: t.numel(),
                got: c,
            });
        }
    }
    Ok(())
}

/// Per-channel mean and biased variance over `(N, H, W)`.
pub fn channel_stats<T: Element>(x: &Tensor<T>) -> BatchStats {
    let s = x.shape();
    let count = s.n * s.plane();
    let d = x.data();
    let per_channel = par::map_range(s.c, |c| {
        let planes = (0..s.n).map(|n| &d[(n * s.c + c) * s.plane()..(n * s.c + c + 1) * s.plane()]);
        let sum: f64 = planes.clone().flatten().map(|v| v.as_f64()).sum();
        let mean = sum / count as f64;
        let var = planes
            .flatten()
            .map(|v| {
                let d = v.as_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / count as f64;
        (mean, var)
    });
    let (mean, var) = per_channel.into_iter().unzip();
    BatchStats { mean, var, count }
}

/// Batch normalization over `(N, H, W)` per channel.
///
/// Train mode normalizes with the batch statistics (returned in `stats`);
/// eval mode uses the running estimates only.
pub fn batchnorm2d<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    epsilon: f64,
    mode: Mode,
) -> Result<BatchNormForward<T>> {
    check_channels(x, gamma, beta)?;
    let s = x.shape();
    let (mean, var, stats) = match mode {
        Mode::Train => {
            let st = channel_stats(x);
            (st.mean.clone(), st.var.clone(), Some(st))
        }
        Mode::Eval => {
            check_channels(x, running_mean, running_var)?;
            (
                running_mean.data().iter().map(|v| v.as_f64()).collect(),
                running_var.data().iter().map(|v| v.as_f64()).collect(),
                None,
            )
        }
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v + epsilon).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64_lossy(m)).collect();

    let mut normalized = Tensor::zeros(s);
    let mut output = Tensor::zeros(s);
    let (g, b) = (gamma.data(), beta.data());
    let xd = x.data();
    let plane = s.plane();
    par::for_each_chunk_mut(normalized.data_mut(), plane, |i, chunk| {
        let c = i % s.c;
        let src = &xd[i * plane..(i + 1) * plane];
        for (o, &v) in chunk.iter_mut().zip(src) {
            *o = (v - mean_t[c]) * inv_std[c];
        }
    });
    let nd = normalized.data();
    par::for_each_chunk_mut(output.data_mut(), plane, |i, chunk| {
        let c = i % s.c;
        let src = &nd[i * plane..(i + 1) * plane];
        for (o, &v) in chunk.iter_mut().zip(src) {
            *o = g[c] * v + b[c];
        }
    });
    Ok(BatchNormForward {
        output,
        normalized,
        inv_std,
        stats,
    })
}

/// Gradients of batch norm with respect to input, gamma and beta.
pub fn batchnorm2d_backward<T: Element>(
    normalized: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
    mode: Mode,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = dy.shape();
    let plane = s.plane();
    let count = (s.n * plane) as f64;
    let (xh, dyd) = (normalized.data(), dy.data());
    let sums = par::map_range(s.c, |c| {
        let mut sdy = 0.0f64;
        let mut sdyx = 0.0f64;
        for n in 0..s.n {
            let off = (n * s.c + c) * plane;
            for (d, x) in dyd[off..off + plane].iter().zip(&xh[off..off + plane]) {
                sdy += d.as_f64();
                sdyx += d.as_f64() * x.as_f64();
            }
        }
        (sdy, sdyx)
    });
    let g = gamma.data();
    let mut dx = Tensor::zeros(s);
    par::for_each_chunk_mut(dx.data_mut(), plane, |i, chunk| {
        let c = i % s.c;
        let scale = g[c] * inv_std[c];
        let off = i * plane;
        match mode {
            Mode::Train => {
                let mean_dy = T::from_f64_lossy(sums[c].0 / count);
                let mean_dyx = T::from_f64_lossy(sums[c].1 / count);
                for (j, o) in chunk.iter_mut().enumerate() {
                    *o = scale * (dyd[off + j] - mean_dy - xh[off + j] * mean_dyx);
                }
            }
            Mode::Eval => {
                for (j, o) in chunk.iter_mut().enumerate() {
                    *o = scale * dyd[off + j];
                }
            }
        }
    });
    let cs = Shape::new(1, s.c, 1, 1);
    let dgamma = Tensor::from_vec(cs, sums.iter().map(|p| T::from_f64_lossy(p.1)).collect())
        .expect("dgamma");
    let dbeta =
        Tensor::from_vec(cs, sums.iter().map(|p| T::from_f64_lossy(p.0)).collect()).expect("dbeta");
    (dx, dgamma, dbeta)
}
