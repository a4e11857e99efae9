//! Parameter-free attention maps used inside the residual-attention block.
//!
//! Channel attention squeezes each channel to its global maximum and passes
//! it through a sigmoid, giving a `(N, C, 1, 1)` gate. Spatial attention
//! reduces channels by their mean and applies a softmax over all `H·W`
//! positions jointly, giving a `(N, 1, H, W)` map that sums to one.

use crate::nn::activation::sigmoid_scalar;
use crate::par;
use crate::tensor::{Element, Shape, Tensor};

/// Returns the gate and the flat input index of each channel maximum.
pub fn channel_attention<T: Element>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let s = x.shape();
    let xd = x.data();
    let per_plane = par::map_range(s.n * s.c, |p| {
        let base = p * s.plane();
        let plane = &xd[base..base + s.plane()];
        let mut best = 0;
        for (i, v) in plane.iter().enumerate() {
            if *v > plane[best] {
                best = i;
            }
        }
        (sigmoid_scalar(plane[best]), (base + best) as u32)
    });
    let (vals, idx): (Vec<T>, Vec<u32>) = per_plane.into_iter().unzip();
    (
        Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), vals).expect("channel gate shape"),
        idx,
    )
}

pub fn channel_attention_backward<T: Element>(
    input_shape: Shape,
    gate: &Tensor<T>,
    argmax: &[u32],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for ((&i, &g), &s) in argmax.iter().zip(dy.data()).zip(gate.data()) {
        d[i as usize] = d[i as usize] + g * s * (T::one() - s);
    }
    dx
}

pub fn spatial_attention<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let hw = s.plane();
    let inv_c = T::one() / T::from_f64_lossy(s.c as f64);
    let xd = x.data();
    let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
    par::for_each_chunk_mut(out.data_mut(), hw, |n, o| {
        let sample = &xd[n * s.sample()..(n + 1) * s.sample()];
        for c in 0..s.c {
            for (acc, &v) in o.iter_mut().zip(&sample[c * hw..(c + 1) * hw]) {
                *acc = *acc + v;
            }
        }
        let mut max = T::neg_infinity();
        for v in o.iter_mut() {
            *v = *v * inv_c;
            max = max.max(*v);
        }
        let mut total = 0.0f64;
        for v in o.iter_mut() {
            *v = (*v - max).exp();
            total += v.as_f64();
        }
        let inv = T::from_f64_lossy(1.0 / total);
        for v in o.iter_mut() {
            *v = *v * inv;
        }
    });
    out
}

/// Backward of [`spatial_attention`] expressed through its output map.
pub fn spatial_attention_backward<T: Element>(
    input_shape: Shape,
    map: &Tensor<T>,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let s = input_shape;
    let hw = s.plane();
    let inv_c = T::one() / T::from_f64_lossy(s.c as f64);
    let (md, dyd) = (map.data(), dy.data());
    let mut dx = Tensor::zeros(s);
    par::for_each_chunk_mut(dx.data_mut(), s.sample(), |n, out| {
        let m = &md[n * hw..(n + 1) * hw];
        let g = &dyd[n * hw..(n + 1) * hw];
        let dot = T::from_f64_lossy(m.iter().zip(g).map(|(a, b)| a.as_f64() * b.as_f64()).sum());
        // d(mean map)/d(position) then spread evenly across channels
        let dmean: Vec<T> = m
            .iter()
            .zip(g)
            .map(|(&mi, &gi)| mi * (gi - dot) * inv_c)
            .collect();
        for c in 0..s.c {
            out[c * hw..(c + 1) * hw].copy_from_slice(&dmean);
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn channel_gate_values() {
        let (g, _) = channel_attention(&Tensor::<f64>::zeros([1, 2, 3, 3]));
        assert!(g.data().iter().all(|&v| v == 0.5));
        let (g, _) = channel_attention(&Tensor::<f64>::full([1, 1, 2, 2], 100.0));
        assert!((g.data()[0] - 1.0).abs() < 1e-12);
        let x = Tensor::<f64>::from_vec([1, 1, 1, 3], vec![-1.0, 2.0, 0.0]).unwrap();
        let (g, idx) = channel_attention(&x);
        assert!((g.data()[0] - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn spatial_map_values() {
        let m = spatial_attention(&Tensor::<f64>::full([1, 3, 2, 2], 1.3));
        assert!(m.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        // channel means {0, ln 3}
        let l3 = 3f64.ln();
        let x = Tensor::<f64>::from_vec([1, 2, 1, 2], vec![0.0, 0.5 * l3, 0.0, 1.5 * l3]).unwrap();
        let m = spatial_attention(&x);
        assert!((m.data()[0] - 0.25).abs() < 1e-15);
        assert!((m.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn spatial_map_normalized_and_shift_invariant() {
        for seed in 0..10 {
            let x = random_tensor::<f64>([2, 3, 4, 5], seed);
            let m = spatial_attention(&x);
            assert_eq!(m.shape(), Shape::new(2, 1, 4, 5));
            for n in 0..2 {
                let s: f64 = m.data()[n * 20..(n + 1) * 20].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            let shifted = spatial_attention(&x.map(|v| v + 4.25));
            assert!(m.max_abs_diff(&shifted) < 1e-12);
        }
    }
}
