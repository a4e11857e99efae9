//! Central finite-difference checks of tape gradients in `f64`.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Largest number of coordinates probed per input; bigger inputs are
    /// probed at evenly spaced indices.
    pub max_probes: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-4,
            max_probes: 64,
        }
    }
}

/// Relative error `‖a − n‖ / max(‖a‖ + ‖n‖, 1e-6)` per input, over the
/// probed coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub rel_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn probes(numel: usize, max: usize) -> Vec<usize> {
    if numel <= max {
        (0..numel).collect()
    } else {
        (0..max).map(|k| k * numel / max).collect()
    }
}

fn scalar(tape: &Tape<f64>, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::NonScalarLoss(v.shape()));
    }
    Ok(v.data()[0])
}

/// Compares the reverse-mode gradient of the scalar `f(inputs)` with
/// central differences. `f` records on a fresh tape with every input as a
/// gradient-tracking leaf.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    cfg: GradCheckConfig,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_gradients_by(inputs, cfg, |tape, ts| {
        let vars: Vec<Var> = ts.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        Ok((f(tape, &vars)?, vars))
    })
}

/// Like [`check_gradients`], for code that places its inputs on the tape
/// itself (a layer registering its own parameters, say). `f` returns the
/// scalar and the node holding each input.
pub fn check_gradients_by<F>(
    inputs: &[Tensor<f64>],
    cfg: GradCheckConfig,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<(Var, Vec<Var>)>,
{
    let mut tape = Tape::new();
    let (out, vars) = f(&mut tape, inputs)?;
    scalar(&tape, out)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.take_grad(v).unwrap_or_else(|| t.zeros_like()))
        .collect();
    let eval = |ts: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let (out, _) = f(&mut tape, ts)?;
        scalar(&tape, out)
    };

    let mut work = inputs.to_vec();
    let mut rel_errors = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
        for j in probes(inputs[i].numel(), cfg.max_probes) {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + cfg.h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x0 - cfg.h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let n = (plus - minus) / (2.0 * cfg.h);
            let a = analytic[i].data()[j];
            diff += (a - n).powi(2);
            norm_a += a * a;
            norm_n += n * n;
        }
        rel_errors.push(diff.sqrt() / (norm_a.sqrt() + norm_n.sqrt()).max(1e-6));
    }
    Ok(GradCheckReport { rel_errors })
}

/// `Σ r ⊙ y` for a fixed `r`: a scalar whose gradient exercises every
/// output coordinate of `y` with a different weight.
pub fn project(tape: &mut Tape<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let r = tape.constant(r.clone());
    let p = tape.mul(y, r)?;
    tape.sum(p)
}
