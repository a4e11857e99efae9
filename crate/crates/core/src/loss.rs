//! Segmentation loss: weighted sum of mean binary cross-entropy and smoothed
//! soft-Dice.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Probability clamp for the logarithms in BCE.
pub const BCE_EPS: f64 = 1e-7;
/// Added to both numerator and denominator of the Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

fn check<T: Element>(op: &'static str, p: &Tensor<T>, g: &Tensor<T>) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: p.shape(),
            rhs: g.shape(),
        });
    }
    Ok(())
}

pub(crate) fn bce_value<T: Element>(p: &Tensor<T>, g: &Tensor<T>, eps: f64) -> Result<f64> {
    check("bce_loss", p, g)?;
    let total: f64 = p
        .data()
        .iter()
        .zip(g.data())
        .map(|(&p, &g)| {
            let p = p.as_f64().clamp(eps, 1.0 - eps);
            let g = g.as_f64();
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.numel() as f64)
}

pub(crate) fn bce_grad<T: Element>(p: &Tensor<T>, g: &Tensor<T>, eps: f64) -> Tensor<T> {
    let m = p.numel() as f64;
    let mut out = p.zeros_like();
    for ((o, &p), &g) in out.data_mut().iter_mut().zip(p.data()).zip(g.data()) {
        let (p, g) = (p.as_f64(), g.as_f64());
        // Zero outside the clamp window, matching the clamped forward.
        let d = if p < eps || p > 1.0 - eps {
            0.0
        } else {
            (-g / p + (1.0 - g) / (1.0 - p)) / m
        };
        *o = T::from_f64_lossy(d);
    }
    out
}

struct DiceSums {
    intersection: f64,
    target: f64,
    pred: f64,
}

fn dice_sums<T: Element>(p: &Tensor<T>, g: &Tensor<T>) -> DiceSums {
    let mut s = DiceSums {
        intersection: 0.0,
        target: 0.0,
        pred: 0.0,
    };
    for (&p, &g) in p.data().iter().zip(g.data()) {
        let (p, g) = (p.as_f64(), g.as_f64());
        s.intersection += g * p;
        s.target += g;
        s.pred += p;
    }
    s
}

pub(crate) fn dice_value<T: Element>(p: &Tensor<T>, g: &Tensor<T>, smooth: f64) -> Result<f64> {
    check("dice_loss", p, g)?;
    let s = dice_sums(p, g);
    Ok(1.0 - (2.0 * s.intersection + smooth) / (s.target + s.pred + smooth))
}

pub(crate) fn dice_grad<T: Element>(p: &Tensor<T>, g: &Tensor<T>, smooth: f64) -> Tensor<T> {
    let s = dice_sums(p, g);
    let num = 2.0 * s.intersection + smooth;
    let den = s.target + s.pred + smooth;
    let mut out = p.zeros_like();
    for (o, &g) in out.data_mut().iter_mut().zip(g.data()) {
        let g = g.as_f64();
        *o = T::from_f64_lossy(-(2.0 * g * den - num) / (den * den));
    }
    out
}

/// Mean BCE with `p` clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Element>(p: &Tensor<T>, g: &Tensor<T>) -> Result<f64> {
    bce_value(p, g, BCE_EPS)
}

/// `1 − (2·Σgp + 1) / (Σg + Σp + 1)`.
pub fn dice_loss<T: Element>(p: &Tensor<T>, g: &Tensor<T>) -> Result<f64> {
    dice_value(p, g, DICE_SMOOTH)
}

/// Weights of the two loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub bce: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            bce: 1.0,
            dice: 1.0,
        }
    }
}

/// Records `λ_bce · BCE(p, g) + λ_dice · Dice(p, g)` on the tape.
pub fn seg_loss<T: Element>(
    tape: &mut Tape<T>,
    p: Var,
    g: &Tensor<T>,
    weights: LossWeights,
) -> Result<Var> {
    let bce = tape.bce_loss(p, g)?;
    let dice = tape.dice_loss(p, g)?;
    let bce = tape.scale_const(bce, weights.bce)?;
    let dice = tape.scale_const(dice, weights.dice)?;
    tape.add(bce, dice)
}
