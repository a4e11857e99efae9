use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::norm::update_running_stats;
use crate::nn::{BatchStats, Conv2dSpec, Mode};
use crate::optim::{fans, xavier_uniform_with};
use crate::params::{Param, ParamKind};
use crate::tensor::{Element, Shape, Tensor};

/// Running mean and variance of one batch-norm layer, shape `(1, C, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f32> {
    pub name: String,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Learnable tensors and batch-norm running statistics of a module, in
/// construction order.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T = f32> {
    pub params: Vec<Param<T>>,
    pub running: Vec<RunningStats<T>>,
}

impl<T: Element> Default for Weights<T> {
    fn default() -> Self {
        Weights {
            params: Vec::new(),
            running: Vec::new(),
        }
    }
}

impl<T: Element> Weights<T> {
    /// Number of learnable scalars. Running statistics are not counted.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn find(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Places every parameter on the tape. On a recording tape they are
    /// gradient-tracking leaves, otherwise constants.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), true))
            .collect()
    }

    /// Gradients of registered parameters after `backward`, with zeros for
    /// parameters the loss does not depend on.
    pub fn take_grads(&self, tape: &mut Tape<T>, vars: &[Var]) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .zip(vars)
            .map(|(p, &v)| tape.take_grad(v).unwrap_or_else(|| p.value.zeros_like()))
            .collect()
    }

    pub fn apply_batch_stats(&mut self, stats: &[(usize, BatchStats)], momentum: f64) {
        for (i, s) in stats {
            let r = &mut self.running[*i];
            update_running_stats(&mut r.mean, &mut r.var, s, momentum);
        }
    }

    pub fn cast<U: Element>(&self) -> Weights<U> {
        Weights {
            params: self
                .params
                .iter()
                .map(|p| Param::new(p.name.clone(), p.kind, p.value.cast()))
                .collect(),
            running: self
                .running
                .iter()
                .map(|r| RunningStats {
                    name: r.name.clone(),
                    mean: r.mean.cast(),
                    var: r.var.cast(),
                })
                .collect(),
        }
    }

    fn push(&mut self, name: String, kind: ParamKind, value: Tensor<T>) -> usize {
        self.params.push(Param::new(name, kind, value));
        self.params.len() - 1
    }

    /// Xavier-uniform weight and zero bias.
    pub(crate) fn conv(
        &mut self,
        name: &str,
        spec: Conv2dSpec,
        transpose: bool,
        rng: &mut impl Rng,
    ) -> ConvLayer {
        let shape = if transpose {
            spec.transpose_weight_shape()
        } else {
            spec.weight_shape()
        };
        let (fan_in, fan_out) = fans(shape);
        let weight = self.push(
            format!("{name}.weight"),
            ParamKind::Weight,
            xavier_uniform_with(shape, fan_in, fan_out, rng),
        );
        let bias = spec.has_bias.then(|| {
            self.push(
                format!("{name}.bias"),
                ParamKind::Bias,
                Tensor::zeros(spec.bias_shape()),
            )
        });
        ConvLayer {
            spec,
            transpose,
            weight,
            bias,
        }
    }

    pub(crate) fn norm(&mut self, name: &str, channels: usize) -> NormLayer {
        let s = Shape::new(1, channels, 1, 1);
        let gamma = self.push(format!("{name}.gamma"), ParamKind::Norm, Tensor::ones(s));
        let beta = self.push(format!("{name}.beta"), ParamKind::Norm, Tensor::zeros(s));
        self.running.push(RunningStats {
            name: name.to_string(),
            mean: Tensor::zeros(s),
            var: Tensor::ones(s),
        });
        NormLayer {
            gamma,
            beta,
            running: self.running.len() - 1,
        }
    }

    pub(crate) fn gate(&mut self, name: &str, init: f64) -> usize {
        self.push(
            name.to_string(),
            ParamKind::Gate,
            Tensor::scalar(T::from_f64_lossy(init)),
        )
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvLayer {
    pub spec: Conv2dSpec,
    pub transpose: bool,
    pub weight: usize,
    pub bias: Option<usize>,
}

#[derive(Clone, Debug)]
pub(crate) struct NormLayer {
    pub gamma: usize,
    pub beta: usize,
    pub running: usize,
}

/// State threaded through one forward pass.
pub(crate) struct Ctx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub vars: &'a [Var],
    pub weights: &'a Weights<T>,
    pub epsilon: f64,
    pub mode: Mode,
    pub stats: Vec<(usize, BatchStats)>,
}

impl<T: Element> Ctx<'_, T> {
    pub fn conv(&mut self, l: &ConvLayer, x: Var) -> Result<Var> {
        let w = self.vars[l.weight];
        let b = l.bias.map(|i| self.vars[i]);
        if l.transpose {
            self.tape.transpose_conv2d(x, l.spec, w, b)
        } else {
            self.tape.conv2d(x, l.spec, w, b)
        }
    }

    pub fn norm(&mut self, l: &NormLayer, x: Var) -> Result<Var> {
        let r = &self.weights.running[l.running];
        let (y, stats) = self.tape.batchnorm2d(
            x,
            self.vars[l.gamma],
            self.vars[l.beta],
            &r.mean,
            &r.var,
            self.epsilon,
            self.mode,
        )?;
        if let Some(s) = stats {
            self.stats.push((l.running, s));
        }
        Ok(y)
    }

    pub fn param(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// Result of a forward pass.
#[derive(Debug)]
pub struct Forward {
    pub output: Var,
    /// Tape nodes of the parameters, aligned with [`Weights::params`].
    pub params: Vec<Var>,
    /// Batch statistics gathered in train mode, keyed by running-stat index.
    pub batch_stats: Vec<(usize, BatchStats)>,
}
