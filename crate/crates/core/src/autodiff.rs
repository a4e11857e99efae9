//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its output value and, when any input
//! requires a gradient, the information its backward rule needs. Because
//! nodes can only reference earlier nodes, the tape is always in topological
//! order and [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::loss;
use crate::nn::activation::{self, zip_map};
use crate::nn::conv::{self, Conv2dSpec};
use crate::nn::norm::{self, BatchStats, Mode};
use crate::nn::{attention, pool};
use crate::tensor::{Element, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right-hand operand of [`Tape::add`] / [`Tape::mul`] maps onto the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// Identical shapes.
    Same,
    /// `(N or 1, C, 1, 1)` per-channel values.
    Channel,
    /// `(N or 1, 1, H, W)` per-position values.
    Spatial,
}

impl Broadcast {
    fn resolve(a: Shape, b: Shape) -> Option<Self> {
        if a == b {
            return Some(Broadcast::Same);
        }
        let batch_ok = b.n == a.n || b.n == 1;
        if batch_ok && b.c == a.c && b.h == 1 && b.w == 1 {
            Some(Broadcast::Channel)
        } else if batch_ok && b.c == 1 && b.h == a.h && b.w == a.w {
            Some(Broadcast::Spatial)
        } else {
            None
        }
    }
}

enum Op<T> {
    Leaf,
    Add {
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Mul {
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Scale {
        x: Var,
        s: Var,
    },
    ScaleConst {
        x: Var,
        c: T,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor<T>,
        inv_std: Vec<T>,
        mode: Mode,
    },
    Gelu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    ChannelAttention {
        x: Var,
        argmax: Vec<u32>,
    },
    SpatialAttention {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    Bce {
        p: Var,
        target: Tensor<T>,
        eps: f64,
    },
    Dice {
        p: Var,
        target: Tensor<T>,
        smooth: f64,
    },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
    grad: Option<Tensor<T>>,
}

/// Append-only record of a forward computation.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    /// A tape that records backward rules.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape for inference: values only, nothing requires a gradient, and
    /// intermediates may be [released](Tape::release).
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            requires_grad: requires_grad && self.recording,
            op: Op::Leaf,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Value of a node.
    ///
    /// # Panics
    /// If the value was released.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.val(v).expect("value was released")
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    /// Drops a node's value on an inference tape. No-op while recording.
    pub fn release(&mut self, v: Var) {
        if !self.recording {
            self.nodes[v.0].value = None;
        }
    }

    /// Drops every node created at or after `start` except `keep`, on an
    /// inference tape. No-op while recording.
    pub fn release_since(&mut self, start: usize, keep: &[Var]) {
        if self.recording {
            return;
        }
        for (i, node) in self.nodes.iter_mut().enumerate().skip(start) {
            if !keep.iter().any(|k| k.0 == i) {
                node.value = None;
            }
        }
    }

    pub fn take_value(&mut self, v: Var) -> Result<Tensor<T>> {
        self.nodes[v.0].value.take().ok_or(Error::Released(v.0))
    }

    fn val(&self, v: Var) -> Result<&Tensor<T>> {
        self.nodes[v.0].value.as_ref().ok_or(Error::Released(v.0))
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        inputs: &[Var],
        op: Op<T>,
    ) -> Result<Var> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Some(value),
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.val(a)?.shape(), self.val(b)?.shape());
        Broadcast::resolve(sa, sb).ok_or(Error::ShapeMismatch {
            op,
            lhs: sa,
            rhs: sb,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.binary_shapes("add", a, b)?;
        let out = broadcast_apply(self.val(a)?, self.val(b)?, bcast, |x, y| x + y);
        self.push("add", out, &[a, b], Op::Add { a, b, bcast })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bcast = self.binary_shapes("mul", a, b)?;
        let out = broadcast_apply(self.val(a)?, self.val(b)?, bcast, |x, y| x * y);
        self.push("mul", out, &[a, b], Op::Mul { a, b, bcast })
    }

    /// `x · s` where `s` is a learnable scalar node of shape `(1, 1, 1, 1)`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let ss = self.val(s)?.shape();
        if ss != Shape::SCALAR {
            return Err(Error::ShapeMismatch {
                op: "scale",
                lhs: Shape::SCALAR,
                rhs: ss,
            });
        }
        let k = self.val(s)?.data()[0];
        let out = self.val(x)?.map(|v| v * k);
        self.push("scale", out, &[x, s], Op::Scale { x, s })
    }

    pub fn scale_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::from_f64_lossy(c);
        let out = self.val(x)?.map(|v| v * c);
        self.push("scale_const", out, &[x], Op::ScaleConst { x, c })
    }

    pub fn conv2d(&mut self, x: Var, spec: Conv2dSpec, w: Var, b: Option<Var>) -> Result<Var> {
        let bias = b.map(|b| self.val(b)).transpose()?;
        let out = conv::conv2d(self.val(x)?, &spec, self.val(w)?, bias)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("conv2d", out, &inputs, Op::Conv { x, w, b, spec })
    }

    pub fn transpose_conv2d(
        &mut self,
        x: Var,
        spec: Conv2dSpec,
        w: Var,
        b: Option<Var>,
    ) -> Result<Var> {
        let bias = b.map(|b| self.val(b)).transpose()?;
        let out = conv::transpose_conv2d(self.val(x)?, &spec, self.val(w)?, bias)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            "transpose_conv2d",
            out,
            &inputs,
            Op::ConvTranspose { x, w, b, spec },
        )
    }

    /// Batch norm with learnable `gamma`/`beta` nodes. In train mode the batch
    /// statistics are returned so the caller can update its running estimates.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        epsilon: f64,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let fwd = norm::batchnorm2d(
            self.val(x)?,
            self.val(gamma)?,
            self.val(beta)?,
            running_mean,
            running_var,
            epsilon,
            mode,
        )?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            normalized: fwd.normalized,
            inv_std: fwd.inv_std,
            mode,
        };
        let v = self.push("batchnorm2d", fwd.output, &[x, gamma, beta], op)?;
        Ok((v, fwd.stats))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = activation::gelu(self.val(x)?);
        self.push("gelu", out, &[x], Op::Gelu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = activation::sigmoid(self.val(x)?);
        self.push("sigmoid", out, &[x], Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = activation::relu(self.val(x)?);
        self.push("relu", out, &[x], Op::Relu { x })
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = pool::maxpool2d(self.val(x)?)?;
        self.push("maxpool2d", out, &[x], Op::MaxPool { x, argmax })
    }

    pub fn channel_attention(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = attention::channel_attention(self.val(x)?);
        self.push(
            "channel_attention",
            out,
            &[x],
            Op::ChannelAttention { x, argmax },
        )
    }

    pub fn spatial_attention(&mut self, x: Var) -> Result<Var> {
        let out = attention::spatial_attention(self.val(x)?);
        self.push("spatial_attention", out, &[x], Op::SpatialAttention { x })
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a)?, self.val(b)?);
        let (sa, sb) = (ta.shape(), tb.shape());
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: sa,
                rhs: sb,
            });
        }
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&ta.data()[n * sa.sample()..(n + 1) * sa.sample()]);
            data.extend_from_slice(&tb.data()[n * sb.sample()..(n + 1) * sb.sample()]);
        }
        let out = Tensor::from_vec(out_shape, data)?;
        self.push("concat", out, &[a, b], Op::Concat { a, b })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(x)?.sum());
        self.push("sum", out, &[x], Op::Sum { x })
    }

    /// Mean binary cross-entropy against a fixed target mask.
    pub fn bce_loss(&mut self, p: Var, target: &Tensor<T>) -> Result<Var> {
        let value = loss::bce_value(self.val(p)?, target, loss::BCE_EPS)?;
        let op = Op::Bce {
            p,
            target: target.clone(),
            eps: loss::BCE_EPS,
        };
        self.push(
            "bce_loss",
            Tensor::scalar(T::from_f64_lossy(value)),
            &[p],
            op,
        )
    }

    /// Smoothed soft-Dice loss against a fixed target mask.
    pub fn dice_loss(&mut self, p: Var, target: &Tensor<T>) -> Result<Var> {
        let value = loss::dice_value(self.val(p)?, target, loss::DICE_SMOOTH)?;
        let op = Op::Dice {
            p,
            target: target.clone(),
            smooth: loss::DICE_SMOOTH,
        };
        self.push(
            "dice_loss",
            Tensor::scalar(T::from_f64_lossy(value)),
            &[p],
            op,
        )
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        node.grad = Some(match node.grad.take() {
            Some(prev) => zip_map(&prev, &g, |a, b| a + b),
            None => g,
        });
    }

    /// Back-propagates from a scalar `loss`, accumulating into leaf gradients.
    ///
    /// Gradients of intermediate nodes are dropped once consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let shape = self.val(loss)?.shape();
        if shape != Shape::SCALAR {
            return Err(Error::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.accumulate(loss, Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let grads = self.node_backward(i, &g)?;
            for (v, gv) in grads {
                self.accumulate(v, gv);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add { a, b, bcast } => {
                if self.wants(*a) {
                    out.push((*a, g.clone()));
                }
                if self.wants(*b) {
                    out.push((*b, reduce_broadcast(g, self.val(*b)?.shape(), *bcast)));
                }
            }
            Op::Mul { a, b, bcast } => {
                let (ta, tb) = (self.val(*a)?, self.val(*b)?);
                if self.wants(*a) {
                    out.push((*a, broadcast_apply(g, tb, *bcast, |x, y| x * y)));
                }
                if self.wants(*b) {
                    let ga = zip_map(g, ta, |x, y| x * y);
                    out.push((*b, reduce_broadcast(&ga, tb.shape(), *bcast)));
                }
            }
            Op::Scale { x, s } => {
                let k = self.val(*s)?.data()[0];
                if self.wants(*x) {
                    out.push((*x, g.map(|v| v * k)));
                }
                if self.wants(*s) {
                    let d = self.val(*x)?.dot(g);
                    out.push((*s, Tensor::scalar(T::from_f64_lossy(d))));
                }
            }
            Op::ScaleConst { x, c } => {
                let c = *c;
                out.push((*x, g.map(|v| v * c)));
            }
            Op::Conv { x, w, b, spec } => {
                let grads = conv::conv2d_backward(
                    self.val(*x)?,
                    spec,
                    self.val(*w)?,
                    g,
                    self.wants(*x),
                    self.wants(*w),
                );
                push_conv_grads(&mut out, grads, *x, *w, *b);
            }
            Op::ConvTranspose { x, w, b, spec } => {
                let grads = conv::transpose_conv2d_backward(
                    self.val(*x)?,
                    spec,
                    self.val(*w)?,
                    g,
                    self.wants(*x),
                    self.wants(*w),
                );
                push_conv_grads(&mut out, grads, *x, *w, *b);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                mode,
            } => {
                let (dx, dgamma, dbeta) =
                    norm::batchnorm2d_backward(normalized, inv_std, self.val(*gamma)?, g, *mode);
                out.push((*x, dx));
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::Gelu { x } => out.push((*x, activation::gelu_backward(self.val(*x)?, g))),
            Op::Sigmoid { x } => out.push((*x, activation::sigmoid_backward(self.val(Var(i))?, g))),
            Op::Relu { x } => out.push((*x, activation::relu_backward(self.val(*x)?, g))),
            Op::MaxPool { x, argmax } => {
                out.push((
                    *x,
                    pool::maxpool2d_backward(self.val(*x)?.shape(), argmax, g),
                ));
            }
            Op::ChannelAttention { x, argmax } => {
                let gate = self.val(Var(i))?;
                let dx =
                    attention::channel_attention_backward(self.val(*x)?.shape(), gate, argmax, g);
                out.push((*x, dx));
            }
            Op::SpatialAttention { x } => {
                let map = self.val(Var(i))?;
                out.push((
                    *x,
                    attention::spatial_attention_backward(self.val(*x)?.shape(), map, g),
                ));
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.val(*a)?.shape(), self.val(*b)?.shape());
                let mut da = Vec::with_capacity(sa.numel());
                let mut db = Vec::with_capacity(sb.numel());
                for chunk in g.data().chunks(sa.sample() + sb.sample()) {
                    da.extend_from_slice(&chunk[..sa.sample()]);
                    db.extend_from_slice(&chunk[sa.sample()..]);
                }
                out.push((*a, Tensor::from_vec(sa, da)?));
                out.push((*b, Tensor::from_vec(sb, db)?));
            }
            Op::Sum { x } => {
                out.push((*x, Tensor::full(self.val(*x)?.shape(), g.data()[0])));
            }
            Op::Bce { p, target, eps } => {
                let dp = loss::bce_grad(self.val(*p)?, target, *eps);
                out.push((*p, dp.map(|v| v * g.data()[0])));
            }
            Op::Dice { p, target, smooth } => {
                let dp = loss::dice_grad(self.val(*p)?, target, *smooth);
                out.push((*p, dp.map(|v| v * g.data()[0])));
            }
        }
        Ok(out)
    }
}

fn push_conv_grads<T: Element>(
    out: &mut Vec<(Var, Tensor<T>)>,
    grads: conv::ConvGrads<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
) {
    if let Some(dx) = grads.input {
        out.push((x, dx));
    }
    if let Some(dw) = grads.weight {
        out.push((w, dw));
    }
    if let (Some(b), Some(db)) = (b, grads.bias) {
        out.push((b, db));
    }
}

/// Applies `f(a, b)` elementwise with `b` broadcast onto `a`'s shape.
fn broadcast_apply<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    bcast: Broadcast,
    f: impl Fn(T, T) -> T + Sync + Send,
) -> Tensor<T> {
    if bcast == Broadcast::Same {
        return zip_map(a, b, f);
    }
    let s = a.shape();
    let sb = b.shape();
    let (ad, bd) = (a.data(), b.data());
    let mut out = Tensor::zeros(s);
    crate::par::for_each_chunk_mut(out.data_mut(), s.plane(), |p, chunk| {
        let (n, c) = (p / s.c, p % s.c);
        let nb = if sb.n == 1 { 0 } else { n };
        let src = &ad[p * s.plane()..(p + 1) * s.plane()];
        match bcast {
            Broadcast::Channel => {
                let k = bd[nb * sb.c + c];
                for (o, &x) in chunk.iter_mut().zip(src) {
                    *o = f(x, k);
                }
            }
            Broadcast::Spatial => {
                let map = &bd[nb * s.plane()..(nb + 1) * s.plane()];
                for ((o, &x), &m) in chunk.iter_mut().zip(src).zip(map) {
                    *o = f(x, m);
                }
            }
            Broadcast::Same => unreachable!(),
        }
    });
    out
}

/// Sums a full-shape gradient down to the broadcast operand's shape.
fn reduce_broadcast<T: Element>(g: &Tensor<T>, target: Shape, bcast: Broadcast) -> Tensor<T> {
    let s = g.shape();
    match bcast {
        Broadcast::Same => g.clone(),
        Broadcast::Channel => {
            let mut acc = vec![0.0f64; target.numel()];
            for (p, plane) in g.data().chunks(s.plane()).enumerate() {
                let (n, c) = (p / s.c, p % s.c);
                let nb = if target.n == 1 { 0 } else { n };
                acc[nb * target.c + c] += plane.iter().map(|v| v.as_f64()).sum::<f64>();
            }
            Tensor::from_vec(target, acc.into_iter().map(T::from_f64_lossy).collect())
                .expect("reduce")
        }
        Broadcast::Spatial => {
            let mut acc = vec![T::zero(); target.numel()];
            for (p, plane) in g.data().chunks(s.plane()).enumerate() {
                let n = p / s.c;
                let nb = if target.n == 1 { 0 } else { n };
                for (a, &v) in acc[nb * s.plane()..(nb + 1) * s.plane()]
                    .iter_mut()
                    .zip(plane)
                {
                    *a = *a + v;
                }
            }
            Tensor::from_vec(target, acc).expect("reduce")
        }
    }
}
