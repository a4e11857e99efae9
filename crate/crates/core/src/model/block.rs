use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{ConvLayer, Ctx, Forward, NormLayer, Weights};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2dSpec, Mode};
use crate::tensor::Element;

/// Shape and initialization of one residual attention block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResAttnBlockConfig {
    pub f_in: usize,
    pub f_out: usize,
    /// Groups of the 3×3 convolution; must divide `f_out`.
    pub groups_mid: usize,
    pub alpha_init: f64,
    pub beta_init: f64,
}

impl ResAttnBlockConfig {
    pub fn new(f_in: usize, f_out: usize, groups_mid: usize) -> Self {
        ResAttnBlockConfig {
            f_in,
            f_out,
            groups_mid,
            alpha_init: 1.0,
            beta_init: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_in == 0 || self.f_out == 0 {
            return Err(Error::Config("block widths must be positive".into()));
        }
        if self.groups_mid == 0 || !self.f_out.is_multiple_of(self.groups_mid) {
            return Err(Error::InvalidGroups {
                groups: self.groups_mid,
                in_channels: self.f_out,
                out_channels: self.f_out,
            });
        }
        Ok(())
    }

    pub(crate) fn conv1(&self) -> Conv2dSpec {
        Conv2dSpec::new(self.f_in, self.f_out, 1)
    }

    pub(crate) fn conv2(&self) -> Conv2dSpec {
        Conv2dSpec::new(self.f_out, self.f_out, 3)
            .padding(1)
            .groups(self.groups_mid)
    }

    pub(crate) fn conv3(&self) -> Conv2dSpec {
        Conv2dSpec::new(self.f_out, self.f_out, 1)
    }

    /// Projection on the residual path when the width changes.
    pub(crate) fn residual(&self) -> Option<Conv2dSpec> {
        (self.f_in != self.f_out).then(|| Conv2dSpec::new(self.f_in, self.f_out, 1).bias(true))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ResAttnLayers {
    f_in: usize,
    conv1: ConvLayer,
    bn1: NormLayer,
    conv2: ConvLayer,
    bn2: NormLayer,
    conv3: ConvLayer,
    bn3: NormLayer,
    residual: Option<ConvLayer>,
    alpha: usize,
    beta: usize,
}

impl ResAttnLayers {
    pub fn build<T: Element>(
        w: &mut Weights<T>,
        prefix: &str,
        cfg: &ResAttnBlockConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let conv1 = w.conv(&format!("{prefix}conv1"), cfg.conv1(), false, rng);
        let bn1 = w.norm(&format!("{prefix}bn1"), cfg.f_out);
        let conv2 = w.conv(&format!("{prefix}conv2"), cfg.conv2(), false, rng);
        let bn2 = w.norm(&format!("{prefix}bn2"), cfg.f_out);
        let conv3 = w.conv(&format!("{prefix}conv3"), cfg.conv3(), false, rng);
        let bn3 = w.norm(&format!("{prefix}bn3"), cfg.f_out);
        let residual = cfg
            .residual()
            .map(|s| w.conv(&format!("{prefix}residual"), s, false, rng));
        let alpha = w.gate(&format!("{prefix}attention.alpha"), cfg.alpha_init);
        let beta = w.gate(&format!("{prefix}attention.beta"), cfg.beta_init);
        ResAttnLayers {
            f_in: cfg.f_in,
            conv1,
            bn1,
            conv2,
            bn2,
            conv3,
            bn3,
            residual,
            alpha,
            beta,
        }
    }

    /// `F_conv + α·(R ⊙ F_c(R)) + β·(R ⊙ F_s(R))` where `R` is the residual
    /// path and `F_conv` the three conv → BN → GELU stages.
    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let c = ctx.tape.shape(x).c;
        if c != self.f_in {
            return Err(Error::ChannelMismatch {
                op: "resattn_block",
                expected: self.f_in,
                got: c,
            });
        }
        let mut h = x;
        for (conv, bn) in [
            (&self.conv1, &self.bn1),
            (&self.conv2, &self.bn2),
            (&self.conv3, &self.bn3),
        ] {
            h = ctx.conv(conv, h)?;
            h = ctx.norm(bn, h)?;
            h = ctx.tape.gelu(h)?;
        }
        let r = match &self.residual {
            Some(l) => ctx.conv(l, x)?,
            None => x,
        };
        let fc = ctx.tape.channel_attention(r)?;
        let rc = ctx.tape.mul(r, fc)?;
        let rc = ctx.tape.scale(rc, ctx.param(self.alpha))?;
        let fs = ctx.tape.spatial_attention(r)?;
        let rs = ctx.tape.mul(r, fs)?;
        let rs = ctx.tape.scale(rs, ctx.param(self.beta))?;
        let out = ctx.tape.add(h, rc)?;
        ctx.tape.add(out, rs)
    }
}

/// Two 3×3 conv → BN → ReLU stages with bias-free convolutions.
#[derive(Clone, Debug)]
pub(crate) struct DoubleConvLayers {
    conv1: ConvLayer,
    bn1: NormLayer,
    conv2: ConvLayer,
    bn2: NormLayer,
}

impl DoubleConvLayers {
    pub fn specs(f_in: usize, f_out: usize) -> [Conv2dSpec; 2] {
        [
            Conv2dSpec::new(f_in, f_out, 3).padding(1),
            Conv2dSpec::new(f_out, f_out, 3).padding(1),
        ]
    }

    pub fn build<T: Element>(
        w: &mut Weights<T>,
        prefix: &str,
        f_in: usize,
        f_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let [s1, s2] = Self::specs(f_in, f_out);
        let conv1 = w.conv(&format!("{prefix}conv1"), s1, false, rng);
        let bn1 = w.norm(&format!("{prefix}bn1"), f_out);
        let conv2 = w.conv(&format!("{prefix}conv2"), s2, false, rng);
        let bn2 = w.norm(&format!("{prefix}bn2"), f_out);
        DoubleConvLayers {
            conv1,
            bn1,
            conv2,
            bn2,
        }
    }

    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (conv, bn) in [(&self.conv1, &self.bn1), (&self.conv2, &self.bn2)] {
            h = ctx.conv(conv, h)?;
            h = ctx.norm(bn, h)?;
            h = ctx.tape.relu(h)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum BlockLayers {
    ResAttn(ResAttnLayers),
    DoubleConv(DoubleConvLayers),
}

impl BlockLayers {
    pub fn forward<T: Element>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            BlockLayers::ResAttn(b) => b.forward(ctx, x),
            BlockLayers::DoubleConv(b) => b.forward(ctx, x),
        }
    }
}

/// A single residual attention block with its own weights.
///
/// Parameter names are `conv1.weight`, `bn1.gamma`, ..., `residual.weight`,
/// `residual.bias`, `attention.alpha` and `attention.beta`.
#[derive(Clone, Debug)]
pub struct ResAttnBlock<T = f32> {
    pub config: ResAttnBlockConfig,
    pub weights: Weights<T>,
    pub epsilon: f64,
    layers: ResAttnLayers,
}

impl<T: Element> ResAttnBlock<T> {
    pub fn new(config: ResAttnBlockConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut weights = Weights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = ResAttnLayers::build(&mut weights, "", &config, &mut rng);
        Ok(ResAttnBlock {
            config,
            weights,
            epsilon: 1e-5,
            layers,
        })
    }

    /// Registers the block's parameters on `tape` and applies it to `x`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Forward> {
        let params = self.weights.register(tape);
        let mut ctx = Ctx {
            tape,
            vars: &params,
            weights: &self.weights,
            epsilon: self.epsilon,
            mode,
            stats: Vec::new(),
        };
        let output = self.layers.forward(&mut ctx, x)?;
        let batch_stats = ctx.stats;
        Ok(Forward {
            output,
            params,
            batch_stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::testutil::random_tensor;

    fn run(block: &ResAttnBlock<f64>, x: &Tensor<f64>, mode: Mode) -> Tensor<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let f = block.forward(&mut tape, xv, mode).unwrap();
        tape.value(f.output).clone()
    }

    #[test]
    fn shapes_and_param_names() {
        let b = ResAttnBlock::<f64>::new(ResAttnBlockConfig::new(4, 8, 4), 1).unwrap();
        let y = run(&b, &random_tensor([2, 4, 6, 6], 2), Mode::Train);
        assert_eq!(y.shape().dims(), [2, 8, 6, 6]);
        assert!(b.weights.find("residual.weight").is_some());
        assert!(b.weights.find("attention.alpha").is_some());
        // 4·8 + 8·2·9 + 8·8 + 3·2·8 + (4·8 + 8) + 2
        assert_eq!(b.weights.num_params(), 32 + 144 + 64 + 48 + 40 + 2);
    }

    #[test]
    fn zero_gates_leave_main_path() {
        let mut b = ResAttnBlock::<f64>::new(ResAttnBlockConfig::new(4, 4, 2), 3).unwrap();
        let x = random_tensor([1, 4, 8, 8], 4);
        for name in ["attention.alpha", "attention.beta"] {
            b.weights.find_mut(name).unwrap().value = Tensor::scalar(0.0);
        }
        let with_zero_gates = run(&b, &x, Mode::Train);

        // Main path alone: three conv → BN → GELU stages.
        let mut tape = Tape::new();
        let params = b.weights.register(&mut tape);
        let mut ctx = Ctx {
            tape: &mut tape,
            vars: &params,
            weights: &b.weights,
            epsilon: b.epsilon,
            mode: Mode::Train,
            stats: Vec::new(),
        };
        let xv = ctx.tape.constant(x.clone());
        let l = &b.layers;
        let mut h = xv;
        for (conv, bn) in [(&l.conv1, &l.bn1), (&l.conv2, &l.bn2), (&l.conv3, &l.bn3)] {
            h = ctx.conv(conv, h).unwrap();
            h = ctx.norm(bn, h).unwrap();
            h = ctx.tape.gelu(h).unwrap();
        }
        assert_eq!(&with_zero_gates, tape.value(h));
    }

    #[test]
    fn identity_residual_with_zero_main_path() {
        let mut b = ResAttnBlock::<f64>::new(ResAttnBlockConfig::new(4, 4, 2), 5).unwrap();
        for name in ["conv1.weight", "conv2.weight", "conv3.weight"] {
            let p = b.weights.find_mut(name).unwrap();
            p.value = p.value.zeros_like();
        }
        b.weights.find_mut("attention.beta").unwrap().value = Tensor::scalar(0.0);
        let x = random_tensor([1, 4, 5, 5], 6);
        // Zero weights give zero conv output, BN(0) = beta = 0 and GELU(0) = 0.
        let y = run(&b, &x, Mode::Eval);
        let (gate, _) = crate::nn::channel_attention(&x);
        let expected = Tensor::from_fn(x.shape(), |n, c, h, w| {
            x.at(n, c, h, w) * gate.at(n, c, 0, 0)
        });
        assert!(y.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn rejects_wrong_channels() {
        let b = ResAttnBlock::<f64>::new(ResAttnBlockConfig::new(4, 8, 4), 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(random_tensor([1, 3, 4, 4], 1));
        assert!(matches!(
            b.forward(&mut tape, x, Mode::Eval),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_groups() {
        assert!(ResAttnBlock::<f32>::new(ResAttnBlockConfig::new(4, 6, 4), 0).is_err());
    }
}
