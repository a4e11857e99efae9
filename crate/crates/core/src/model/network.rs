use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::{BlockLayers, DoubleConvLayers, ResAttnBlockConfig, ResAttnLayers};
use super::config::{BlockKind, ModelConfig, SkipMode};
use super::layers::{ConvLayer, Ctx, Forward, Weights};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2dSpec, Mode};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
struct DecoderStage {
    up: ConvLayer,
    blocks: Vec<BlockLayers>,
}

/// The encoder-decoder segmentation network.
///
/// Weights live in a flat [`Weights`] list; the layer structs only hold
/// indices into it, so the same network can be run on any tape.
#[derive(Clone, Debug)]
pub struct Network<T = f32> {
    config: ModelConfig,
    weights: Weights<T>,
    encoder: Vec<Vec<BlockLayers>>,
    decoder: Vec<DecoderStage>,
    head: ConvLayer,
}

pub(crate) fn block_prefix(stage: &str, i: usize, b: usize) -> String {
    format!("{stage}{i}.b{b}.")
}

pub(crate) fn upsample_spec(f_in: usize, f_out: usize) -> Conv2dSpec {
    Conv2dSpec::new(f_in, f_out, 2).stride(2).bias(true)
}

pub(crate) fn head_spec(cfg: &ModelConfig, f_in: usize) -> Conv2dSpec {
    Conv2dSpec::new(f_in, cfg.output_channels, 1).bias(true)
}

/// Width entering the blocks of decoder stage `j` after the skip merge.
pub(crate) fn merged_width(cfg: &ModelConfig, j: usize) -> usize {
    let skip = cfg.encoder_widths[cfg.stages() - 2 - j];
    match cfg.skip {
        SkipMode::Sum => skip,
        SkipMode::Concat => 2 * skip,
    }
}

impl<T: Element> Network<T> {
    /// Builds and initializes the network. Weights are Xavier-uniform from a
    /// ChaCha8 stream seeded with `seed`, biases zero, BN identity.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Weights::default();
        let block =
            |w: &mut Weights<T>, rng: &mut ChaCha8Rng, prefix: &str, f_in: usize, f_out: usize| {
                match config.block {
                    BlockKind::ResAttn => {
                        let cfg = ResAttnBlockConfig {
                            f_in,
                            f_out,
                            groups_mid: config.groups_for(f_out),
                            alpha_init: config.alpha_init,
                            beta_init: config.beta_init,
                        };
                        cfg.validate()?;
                        Ok::<_, Error>(BlockLayers::ResAttn(ResAttnLayers::build(
                            w, prefix, &cfg, rng,
                        )))
                    }
                    BlockKind::DoubleConv => Ok(BlockLayers::DoubleConv(DoubleConvLayers::build(
                        w, prefix, f_in, f_out, rng,
                    ))),
                }
            };

        let mut prev = config.input_channels;
        let mut encoder = Vec::new();
        for (i, (&width, &n)) in config
            .encoder_widths
            .iter()
            .zip(&config.encoder_blocks)
            .enumerate()
        {
            let mut blocks = Vec::new();
            for b in 0..n {
                blocks.push(block(
                    &mut w,
                    &mut rng,
                    &block_prefix("enc", i, b),
                    prev,
                    width,
                )?);
                prev = width;
            }
            encoder.push(blocks);
        }

        let mut decoder = Vec::new();
        for (j, (&width, &n)) in config
            .decoder_widths
            .iter()
            .zip(&config.decoder_blocks)
            .enumerate()
        {
            let skip = config.encoder_widths[config.stages() - 2 - j];
            let up = w.conv(
                &format!("dec{j}.up"),
                upsample_spec(prev, skip),
                true,
                &mut rng,
            );
            prev = merged_width(&config, j);
            let mut blocks = Vec::new();
            for b in 0..n {
                blocks.push(block(
                    &mut w,
                    &mut rng,
                    &block_prefix("dec", j, b),
                    prev,
                    width,
                )?);
                prev = width;
            }
            decoder.push(DecoderStage { up, blocks });
        }
        let head = w.conv("head", head_spec(&config, prev), false, &mut rng);

        Ok(Network {
            config,
            weights: w,
            encoder,
            decoder,
            head,
        })
    }

    /// Rebuilds a network around stored weights. Names and shapes must match
    /// the layout `config` produces, in order.
    pub fn from_weights(config: ModelConfig, weights: Weights<T>) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        let layout = |w: &Weights<T>| -> Vec<(String, Vec<usize>)> {
            w.params
                .iter()
                .map(|p| (p.name.clone(), p.value.shape().dims().to_vec()))
                .chain(w.running.iter().flat_map(|r| {
                    [
                        (
                            format!("{}.running_mean", r.name),
                            r.mean.shape().dims().to_vec(),
                        ),
                        (
                            format!("{}.running_var", r.name),
                            r.var.shape().dims().to_vec(),
                        ),
                    ]
                }))
                .collect()
        };
        let (expected, found) = (layout(&net.weights), layout(&weights));
        if expected != found {
            return Err(Error::CheckpointMismatch { expected, found });
        }
        // Kinds come from the layout, not from the stored data.
        let mut weights = weights;
        for (p, q) in weights.params.iter_mut().zip(&net.weights.params) {
            p.kind = q.kind;
        }
        net.weights = weights;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights<T> {
        &mut self.weights
    }

    pub fn num_params(&self) -> usize {
        self.weights.num_params()
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, forward: &Forward) {
        self.weights
            .apply_batch_stats(&forward.batch_stats, self.config.bn_momentum);
    }

    pub fn cast<U: Element>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            weights: self.weights.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.c != self.config.input_channels {
            return Err(Error::ChannelMismatch {
                op: "model_forward",
                expected: self.config.input_channels,
                got: s.c,
            });
        }
        let m = self.config.spatial_multiple();
        if s.h == 0 || s.w == 0 || !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) {
            return Err(Error::InvalidShape {
                op: "model_forward",
                reason: format!("input {s}: height and width must be positive multiples of {m}"),
            });
        }
        Ok(())
    }

    /// Registers the parameters on `tape` and maps `x` (N, C_in, H, W) to
    /// per-pixel probabilities (N, 1, H, W).
    ///
    /// On an inference tape, intermediate values are released as soon as
    /// they are no longer needed.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Forward> {
        self.check_input(tape.value(x))?;
        let params = self.weights.register(tape);
        let mut ctx = Ctx {
            tape,
            vars: &params,
            weights: &self.weights,
            epsilon: self.config.bn_epsilon,
            mode,
            stats: Vec::new(),
        };

        // Nodes below this index are the input and the parameters.
        let first_op = ctx.tape.len();
        let run_block =
            |ctx: &mut Ctx<'_, T>, b: &BlockLayers, h: Var, keep: &[Var]| -> Result<Var> {
                let start = ctx.tape.len();
                let out = b.forward(ctx, h)?;
                let mut keep = keep.to_vec();
                keep.push(out);
                ctx.tape.release_since(start, &keep);
                if h.index() >= first_op && !keep.contains(&h) {
                    ctx.tape.release(h);
                }
                Ok(out)
            };

        let mut h = x;
        let mut skips = Vec::new();
        for (i, blocks) in self.encoder.iter().enumerate() {
            for b in blocks {
                h = run_block(&mut ctx, b, h, &skips)?;
            }
            if i + 1 < self.encoder.len() {
                skips.push(h);
                h = ctx.tape.maxpool2d(h)?;
            }
        }

        for stage in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            let start = ctx.tape.len();
            let up = ctx.conv(&stage.up, h)?;
            let (su, ss) = (ctx.tape.shape(up), ctx.tape.shape(skip));
            if su != ss {
                return Err(Error::ShapeMismatch {
                    op: "skip_connection",
                    lhs: su,
                    rhs: ss,
                });
            }
            h = match self.config.skip {
                SkipMode::Sum => ctx.tape.add(up, skip)?,
                SkipMode::Concat => ctx.tape.concat(up, skip)?,
            };
            let mut keep = skips.clone();
            keep.push(h);
            ctx.tape.release_since(skip.index().min(start), &keep);
            for b in &stage.blocks {
                h = run_block(&mut ctx, b, h, &skips)?;
            }
        }

        let logits = ctx.conv(&self.head, h)?;
        let output = ctx.tape.sigmoid(logits)?;
        let batch_stats = ctx.stats;
        Ok(Forward {
            output,
            params,
            batch_stats,
        })
    }

    /// Eval-mode probabilities for a batch.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let f = self.forward(&mut tape, xv, Mode::Eval)?;
        tape.take_value(f.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn reduced_shape_contract() {
        let net = Network::<f32>::new(ModelConfig::reduced(), 1).unwrap();
        let y = net.predict(&random_tensor([2, 3, 32, 32], 2)).unwrap();
        assert_eq!(y.shape().dims(), [2, 1, 32, 32]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn eval_is_deterministic_and_matches_recording_tape() {
        let net = Network::<f32>::new(ModelConfig::reduced(), 3).unwrap();
        let x = random_tensor([1, 3, 16, 16], 4);
        let a = net.predict(&x).unwrap();
        assert_eq!(a, net.predict(&x).unwrap());
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let f = net.forward(&mut tape, xv, Mode::Eval).unwrap();
        assert_eq!(&a, tape.value(f.output));
    }

    #[test]
    fn rejects_indivisible_input() {
        let net = Network::<f32>::new(ModelConfig::reduced(), 0).unwrap();
        assert!(matches!(
            net.predict(&random_tensor([1, 3, 30, 32], 0)),
            Err(Error::InvalidShape { .. })
        ));
        assert!(matches!(
            net.predict(&random_tensor([1, 1, 32, 32], 0)),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn train_mode_collects_stats_for_every_norm() {
        let mut net = Network::<f32>::new(ModelConfig::reduced(), 5).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(random_tensor([2, 3, 16, 16], 6));
        let f = net.forward(&mut tape, xv, Mode::Train).unwrap();
        assert_eq!(f.batch_stats.len(), net.weights().running.len());
        let before = net.weights().running.clone();
        net.apply_batch_stats(&f);
        assert_ne!(before, net.weights().running);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Network::<f32>::new(ModelConfig::reduced(), 9).unwrap();
        let b = Network::<f32>::new(ModelConfig::reduced(), 9).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn vanilla_concat_runs() {
        let mut cfg = ModelConfig::vanilla_unet();
        cfg.encoder_widths = vec![4, 8, 16];
        cfg.encoder_blocks = vec![1; 3];
        cfg.decoder_widths = vec![8, 4];
        cfg.decoder_blocks = vec![1; 2];
        let net = Network::<f32>::new(cfg, 0).unwrap();
        let y = net.predict(&random_tensor([1, 3, 8, 8], 1)).unwrap();
        assert_eq!(y.shape().dims(), [1, 1, 8, 8]);
    }

    #[test]
    fn from_weights_checks_layout() {
        let net = Network::<f32>::new(ModelConfig::reduced(), 1).unwrap();
        let again = Network::from_weights(ModelConfig::reduced(), net.weights().clone()).unwrap();
        assert_eq!(again.weights(), net.weights());
        let mut other = ModelConfig::reduced();
        other.decoder_widths = vec![16, 16];
        match Network::<f32>::from_weights(other, net.weights().clone()) {
            Err(Error::CheckpointMismatch { expected, found }) => assert_ne!(expected, found),
            r => panic!("expected mismatch, got {:?}", r.map(|_| ())),
        }
    }
}
