use crate::par;
use crate::tensor::{Element, Tensor};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn std_normal_cdf<T: Element>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    half * (T::one() + (x * T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Exact GELU, `x · Φ(x)`.
pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * std_normal_cdf(v))
}

pub fn gelu_backward<T: Element>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let pdf_scale = T::from_f64_lossy(FRAC_1_SQRT_2PI);
    let half = T::from_f64_lossy(0.5);
    zip_map(x, dy, |v, d| {
        let pdf = pdf_scale * (-half * v * v).exp();
        d * (std_normal_cdf(v) + v * pdf)
    })
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid expressed through its output `y`.
pub fn sigmoid_backward<T: Element>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(y, dy, |s, d| d * s * (T::one() - s))
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Element>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(x, dy, |v, d| if v > T::zero() { d } else { T::zero() })
}

pub(crate) fn zip_map<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T + Sync + Send,
) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let mut out = Tensor::zeros(a.shape());
    let (ad, bd) = (a.data(), b.data());
    par::for_each_chunk_mut(out.data_mut(), par::MIN_PAR_LEN, |i, chunk| {
        let off = i * par::MIN_PAR_LEN;
        for (j, o) in chunk.iter_mut().enumerate() {
            *o = f(ad[off + j], bd[off + j]);
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(&scalar(0.0)).data()[0], 0.0);
        assert!((gelu(&scalar(10.0)).data()[0] - 10.0).abs() < 1e-12);
        assert!(gelu(&scalar(-10.0)).data()[0].abs() < 1e-12);
        // Φ(1) = 0.841344746...
        assert!((gelu(&scalar(1.0)).data()[0] - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(&scalar(0.0)).data()[0], 0.5);
        assert!((sigmoid(&scalar(3f64.ln())).data()[0] - 0.75).abs() < 1e-15);
        for v in [-30.0, -2.5, 0.3, 7.0] {
            let s = sigmoid(&scalar(v)).data()[0] + sigmoid(&scalar(-v)).data()[0];
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert!(sigmoid(&Tensor::<f32>::scalar(-200.0)).is_finite());
    }
}
