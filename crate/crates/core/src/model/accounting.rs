//! Parameter and FLOP counts derived from a [`ModelConfig`] alone.
//!
//! FLOPs follow the 2·MAC convention for convolutions; batch norm,
//! activations, pooling, attention and skip sums cost one op per element
//! touched. Counts are for batch 1.

use std::fmt::Write as _;

use super::block::{DoubleConvLayers, ResAttnBlockConfig};
use super::config::{BlockKind, ModelConfig, SkipMode};
use super::network::{block_prefix, head_spec, merged_width, upsample_spec};
use crate::error::{Error, Result};
use crate::nn::Conv2dSpec;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    /// Matches the prefix of the layer's parameter names.
    pub name: String,
    pub kind: &'static str,
    /// Output `(C, H, W)`.
    pub output: (usize, usize, usize),
    pub params: usize,
    pub flops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Accounting {
    pub layers: Vec<LayerCost>,
}

/// Multiply-accumulates of a convolution producing `out_hw` from `spec`.
pub fn conv_macs(spec: &Conv2dSpec, out_h: usize, out_w: usize) -> u64 {
    let (kh, kw) = spec.kernel;
    (out_h * out_w * spec.out_channels * (spec.in_channels / spec.groups) * kh * kw) as u64
}

/// Transposed convolution: each input element meets `C_out / g · kh · kw`
/// weights per input channel.
pub fn transpose_conv_macs(spec: &Conv2dSpec, in_h: usize, in_w: usize) -> u64 {
    let (kh, kw) = spec.kernel;
    (in_h * in_w * spec.in_channels * (spec.out_channels / spec.groups) * kh * kw) as u64
}

impl Accounting {
    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    fn push(
        &mut self,
        name: String,
        kind: &'static str,
        output: (usize, usize, usize),
        params: usize,
        flops: u64,
    ) {
        self.layers.push(LayerCost {
            name,
            kind,
            output,
            params,
            flops,
        });
    }

    fn conv(&mut self, name: String, spec: Conv2dSpec, h: usize, w: usize) -> (usize, usize) {
        let (oh, ow) = spec.output_hw(h, w).expect("validated geometry");
        self.push(
            name,
            "conv",
            (spec.out_channels, oh, ow),
            spec.param_count(),
            2 * conv_macs(&spec, oh, ow),
        );
        (oh, ow)
    }

    fn elementwise(
        &mut self,
        name: String,
        kind: &'static str,
        c: usize,
        h: usize,
        w: usize,
        params: usize,
        per_elem: u64,
    ) {
        self.push(name, kind, (c, h, w), params, per_elem * (c * h * w) as u64);
    }

    fn resattn(&mut self, p: &str, cfg: &ResAttnBlockConfig, h: usize, w: usize) {
        let c = cfg.f_out;
        for (i, spec) in [cfg.conv1(), cfg.conv2(), cfg.conv3()]
            .into_iter()
            .enumerate()
        {
            let i = i + 1;
            self.conv(format!("{p}conv{i}"), spec, h, w);
            self.elementwise(format!("{p}bn{i}"), "batchnorm", c, h, w, 2 * c, 1);
            self.elementwise(format!("{p}gelu{i}"), "gelu", c, h, w, 0, 1);
        }
        if let Some(spec) = cfg.residual() {
            self.conv(format!("{p}residual"), spec, h, w);
        }
        // Channel gate: max over H·W plus C sigmoids. Spatial map: mean over
        // C plus an H·W softmax. Then two products, two scalings, two sums.
        let n = (c * h * w) as u64;
        let flops = n + c as u64 + n + (h * w) as u64 + 6 * n;
        self.push(format!("{p}attention"), "attention", (c, h, w), 2, flops);
    }

    fn double_conv(&mut self, p: &str, f_in: usize, f_out: usize, h: usize, w: usize) {
        for (i, spec) in DoubleConvLayers::specs(f_in, f_out).into_iter().enumerate() {
            let i = i + 1;
            self.conv(format!("{p}conv{i}"), spec, h, w);
            self.elementwise(format!("{p}bn{i}"), "batchnorm", f_out, h, w, 2 * f_out, 1);
            self.elementwise(format!("{p}relu{i}"), "relu", f_out, h, w, 0, 1);
        }
    }

    fn block(&mut self, cfg: &ModelConfig, p: &str, f_in: usize, f_out: usize, h: usize, w: usize) {
        match cfg.block {
            BlockKind::ResAttn => {
                let b = ResAttnBlockConfig {
                    f_in,
                    f_out,
                    groups_mid: cfg.groups_for(f_out),
                    alpha_init: cfg.alpha_init,
                    beta_init: cfg.beta_init,
                };
                self.resattn(p, &b, h, w)
            }
            BlockKind::DoubleConv => self.double_conv(p, f_in, f_out, h, w),
        }
    }

    /// Per-layer costs for an `h × w` input.
    pub fn of(cfg: &ModelConfig, h: usize, w: usize) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.spatial_multiple();
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::InvalidShape {
                op: "flops_count",
                reason: format!("{h}×{w} is not a positive multiple of {m}"),
            });
        }
        let mut acc = Accounting::default();
        let (mut h, mut w) = (h, w);
        let mut prev = cfg.input_channels;
        for (i, (&width, &n)) in cfg
            .encoder_widths
            .iter()
            .zip(&cfg.encoder_blocks)
            .enumerate()
        {
            for b in 0..n {
                acc.block(cfg, &block_prefix("enc", i, b), prev, width, h, w);
                prev = width;
            }
            if i + 1 < cfg.stages() {
                acc.push(
                    format!("enc{i}.pool"),
                    "maxpool",
                    (prev, h / 2, w / 2),
                    0,
                    (prev * h * w) as u64,
                );
                (h, w) = (h / 2, w / 2);
            }
        }
        for (j, (&width, &n)) in cfg
            .decoder_widths
            .iter()
            .zip(&cfg.decoder_blocks)
            .enumerate()
        {
            let skip = cfg.encoder_widths[cfg.stages() - 2 - j];
            let spec = upsample_spec(prev, skip);
            let flops = 2 * transpose_conv_macs(&spec, h, w);
            (h, w) = (2 * h, 2 * w);
            acc.push(
                format!("dec{j}.up"),
                "transpose_conv",
                (skip, h, w),
                spec.param_count(),
                flops,
            );
            prev = merged_width(cfg, j);
            let merge_flops = match cfg.skip {
                SkipMode::Sum => (prev * h * w) as u64,
                SkipMode::Concat => 0,
            };
            acc.push(
                format!("dec{j}.merge"),
                "skip",
                (prev, h, w),
                0,
                merge_flops,
            );
            for b in 0..n {
                acc.block(cfg, &block_prefix("dec", j, b), prev, width, h, w);
                prev = width;
            }
        }
        acc.conv("head".into(), head_spec(cfg, prev), h, w);
        acc.elementwise(
            "head.sigmoid".into(),
            "sigmoid",
            cfg.output_channels,
            h,
            w,
            0,
            1,
        );
        Ok(acc)
    }

    /// Fixed-width text table with one row per layer and a total row.
    pub fn table(&self) -> String {
        let name_w = self
            .layers
            .iter()
            .map(|l| l.name.len())
            .max()
            .unwrap_or(4)
            .max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<14}  {:>16}  {:>10}  {:>14}",
            "layer", "kind", "output", "params", "flops"
        );
        for l in &self.layers {
            let out = format!("{}x{}x{}", l.output.0, l.output.1, l.output.2);
            let _ = writeln!(
                s,
                "{:<name_w$}  {:<14}  {:>16}  {:>10}  {:>14}",
                l.name, l.kind, out, l.params, l.flops
            );
        }
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<14}  {:>16}  {:>10}  {:>14}",
            "total",
            "",
            "",
            self.total_params(),
            self.total_flops()
        );
        s
    }
}

/// Learnable scalars of the network `cfg` builds. Running statistics are
/// not counted.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    // Parameter counts do not depend on the input size.
    let m = cfg.spatial_multiple();
    Ok(Accounting::of(cfg, m, m)?.total_params())
}

pub fn flops_count(cfg: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    Ok(Accounting::of(cfg, h, w)?.total_flops())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Network;
    use std::collections::BTreeMap;

    #[test]
    fn pointwise_conv_formula() {
        let spec = Conv2dSpec::new(32, 32, 1);
        assert_eq!(conv_macs(&spec, 224, 224), 224 * 224 * 32 * 32);
        assert_eq!(Conv2dSpec::new(3, 32, 1).bias(true).param_count(), 128);
    }

    #[test]
    fn matches_built_network_per_layer() {
        for cfg in [
            ModelConfig::reduced(),
            ModelConfig::proposed(),
            ModelConfig::vanilla_unet(),
        ] {
            let net = Network::<f32>::new(cfg.clone(), 0).unwrap();
            let mut built: BTreeMap<String, usize> = BTreeMap::new();
            for p in &net.weights().params {
                let layer = p.name.rsplit_once('.').unwrap().0.to_string();
                *built.entry(layer).or_default() += p.numel();
            }
            let acc = Accounting::of(&cfg, 224, 224).unwrap();
            let counted: BTreeMap<String, usize> = acc
                .layers
                .iter()
                .filter(|l| l.params > 0)
                .map(|l| (l.name.clone(), l.params))
                .collect();
            assert_eq!(built, counted);
            assert_eq!(param_count(&cfg).unwrap(), net.num_params());
        }
    }

    #[test]
    fn shapes_follow_the_network() {
        let acc = Accounting::of(&ModelConfig::reduced(), 32, 32).unwrap();
        let last = acc.layers.last().unwrap();
        assert_eq!(last.output, (1, 32, 32));
        let up = acc.layers.iter().find(|l| l.name == "dec0.up").unwrap();
        assert_eq!(up.output, (16, 16, 16));
    }

    #[test]
    fn more_groups_fewer_params() {
        let mut a = ModelConfig::proposed();
        a.group_base = 8;
        let mut b = a.clone();
        b.group_base = 16;
        assert!(param_count(&b).unwrap() < param_count(&a).unwrap());
    }

    #[test]
    fn rejects_indivisible_size() {
        assert!(flops_count(&ModelConfig::proposed(), 100, 100).is_err());
    }
}
