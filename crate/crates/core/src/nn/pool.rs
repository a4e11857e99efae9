use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Element, Shape, Tensor};

/// 2×2 max-pooling with stride 2. Returns the pooled map and, per output
/// cell, the flat input index of the winning element (first in row-major
/// order on ties).
pub fn maxpool2d<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) || s.h == 0 || s.w == 0 {
        return Err(Error::InvalidShape {
            op: "maxpool2d",
            reason: format!("spatial dims {}x{} not divisible by 2", s.h, s.w),
        });
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = vec![0u32; out_shape.numel()];
    let xd = x.data();
    let plane_out = oh * ow;
    // Each plane is independent; compute both outputs per plane in parallel.
    let planes = par::map_range(s.n * s.c, |p| {
        let base = p * s.plane();
        let mut vals = Vec::with_capacity(plane_out);
        let mut idx = Vec::with_capacity(plane_out);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * s.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * s.w + 2 * ox + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                vals.push(xd[best]);
                idx.push(best as u32);
            }
        }
        (vals, idx)
    });
    for (p, (vals, idx)) in planes.into_iter().enumerate() {
        out.data_mut()[p * plane_out..(p + 1) * plane_out].copy_from_slice(&vals);
        argmax[p * plane_out..(p + 1) * plane_out].copy_from_slice(&idx);
    }
    Ok((out, argmax))
}

/// Routes each output gradient to the input element recorded in `argmax`.
pub fn maxpool2d_backward<T: Element>(
    input_shape: Shape,
    argmax: &[u32],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i as usize] = d[i as usize] + g;
    }
    dx
}
