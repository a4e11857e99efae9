//! LAMB optimizer and Xavier-uniform initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Param, ParamKind};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for LambConfig {
    fn default() -> Self {
        LambConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.0,
        }
    }
}

/// Layer-wise adaptive moments optimizer.
///
/// Per tensor: Adam-style bias-corrected moments give an update direction
/// `u`, which is rescaled by `‖w‖ / ‖u‖` before the step. The ratio is 1 when
/// either norm is zero and for bias, norm and gate tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Lamb<T = f32> {
    pub config: LambConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

pub fn trust_ratio(w_norm: f64, u_norm: f64) -> f64 {
    if w_norm == 0.0 || u_norm == 0.0 {
        1.0
    } else {
        w_norm / u_norm
    }
}

impl<T: Element> Lamb<T> {
    pub fn new(config: LambConfig, params: &[Param<T>]) -> Self {
        Lamb {
            config,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// Rebuilds optimizer state, e.g. from a checkpoint.
    pub fn from_state(
        config: LambConfig,
        step: u64,
        m: Vec<Vec<T>>,
        v: Vec<Vec<T>>,
    ) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Checkpoint(
                "optimizer moment buffers disagree".into(),
            ));
        }
        Ok(Lamb { config, step, m, v })
    }

    /// One update of every parameter. Non-finite gradients reject the whole
    /// step and leave parameters and state untouched.
    pub fn step(&mut self, params: &mut [Param<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::InvalidShape {
                op: "lamb_step",
                reason: format!(
                    "{} params, {} grads, {} moment buffers",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "lamb_step",
                    lhs: p.value.shape(),
                    rhs: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);

        let update_one = |p: &mut Param<T>, g: &Tensor<T>, m: &mut [T], v: &mut [T]| {
            let mut u = Vec::with_capacity(m.len());
            for ((mi, vi), (&gi, &wi)) in m
                .iter_mut()
                .zip(v.iter_mut())
                .zip(g.data().iter().zip(p.value.data()))
            {
                let gi = gi.as_f64();
                let mn = c.beta1 * mi.as_f64() + (1.0 - c.beta1) * gi;
                let vn = c.beta2 * vi.as_f64() + (1.0 - c.beta2) * gi * gi;
                *mi = T::from_f64_lossy(mn);
                *vi = T::from_f64_lossy(vn);
                let m_hat = mn / bc1;
                let v_hat = vn / bc2;
                u.push(m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * wi.as_f64());
            }
            let ratio = match p.kind {
                ParamKind::Weight => {
                    let w_norm = p
                        .value
                        .data()
                        .iter()
                        .map(|w| w.as_f64().powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let u_norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                    trust_ratio(w_norm, u_norm)
                }
                ParamKind::Bias | ParamKind::Norm | ParamKind::Gate => 1.0,
            };
            let scale = c.lr * ratio;
            for (w, ui) in p.value.data_mut().iter_mut().zip(u) {
                *w = T::from_f64_lossy(w.as_f64() - scale * ui);
            }
        };

        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            params
                .par_iter_mut()
                .zip(grads.par_iter())
                .zip(self.m.par_iter_mut().zip(self.v.par_iter_mut()))
                .for_each(|((p, g), (m, v))| update_one(p, g, m, v));
        }
        #[cfg(not(feature = "parallel"))]
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            update_one(p, g, m, v);
        }
        Ok(())
    }
}

/// Fans of a weight tensor laid out as `(dim0, dim1, kh, kw)`:
/// `fan_in = dim1·kh·kw`, `fan_out = dim0·kh·kw`. For a grouped convolution
/// `dim1` is already `in_channels / groups`.
pub fn fans(shape: Shape) -> (usize, usize) {
    let rf = shape.h * shape.w;
    (shape.c * rf, shape.n * rf)
}

/// Uniform samples on `[−a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform_with<T: Element>(
    shape: impl Into<Shape>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let shape = shape.into();
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..shape.numel())
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("xavier shape")
}

pub fn xavier_init<T: Element>(
    shape: impl Into<Shape>,
    fan_in: usize,
    fan_out: usize,
    seed: u64,
) -> Tensor<T> {
    xavier_uniform_with(shape, fan_in, fan_out, &mut ChaCha8Rng::seed_from_u64(seed))
}
