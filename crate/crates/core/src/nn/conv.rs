//! Grouped 2-D convolution and transposed convolution via im2col + gemm.
//!
//! Weights follow the usual layouts: `(out, in/groups, kh, kw)` for
//! convolution and `(in, out/groups, kh, kw)` for transposed convolution, so a
//! transposed convolution is exactly the input-adjoint of the convolution that
//! shares its weight tensor.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Element, Shape, Tensor};

/// Convolution hyperparameters shared by [`conv2d`] and [`transpose_conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl Conv2dSpec {
    /// Square kernel, stride 1, no padding, one group, no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2dSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            padding: 0,
            groups: 1,
            has_bias: false,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.groups;
        if g == 0 || !self.in_channels.is_multiple_of(g) || !self.out_channels.is_multiple_of(g) {
            return Err(Error::InvalidGroups {
                groups: g,
                in_channels: self.in_channels,
                out_channels: self.out_channels,
            });
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                reason: "zero channels".into(),
            });
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                reason: format!("kernel {:?} stride {}", self.kernel, self.stride),
            });
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        )
    }

    pub fn transpose_weight_shape(&self) -> Shape {
        Shape::new(
            self.in_channels,
            self.out_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        )
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.kernel.0 * self.kernel.1
            + if self.has_bias { self.out_channels } else { 0 }
    }

    /// Convolution output size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return Err(Error::InvalidShape {
                op: "conv2d",
                reason: format!("padded input {ph}x{pw} smaller than kernel {kh}x{kw}"),
            });
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    /// Transposed-convolution output size for an `h × w` input.
    pub fn transpose_output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let oh = ((h.max(1) - 1) * self.stride + kh).checked_sub(2 * self.padding);
        let ow = ((w.max(1) - 1) * self.stride + kw).checked_sub(2 * self.padding);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 && h > 0 && w > 0 => Ok((oh, ow)),
            _ => Err(Error::InvalidShape {
                op: "transpose_conv2d",
                reason: format!("input {h}x{w} yields empty output"),
            }),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.padding == 0
    }
}

/// Geometry of one im2col block: `c` channels of an `h × w` image sampled
/// into an `oh × ow` grid.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Element>(src: &[T], g: &Geom, cols: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.c {
        let plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back into image layout.
fn col2im<T: Element>(cols: &[T], g: &Geom, dst: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.c {
        let plane = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_weight<T: Element>(op: &'static str, w: &Tensor<T>, expected: Shape) -> Result<()> {
    if w.shape() != expected {
        return Err(Error::ShapeMismatch {
            op,
            lhs: expected,
            rhs: w.shape(),
        });
    }
    Ok(())
}

fn check_bias<T: Element>(
    op: &'static str,
    b: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<()> {
    match b {
        Some(b) => check_weight(op, b, spec.bias_shape()),
        None => Ok(()),
    }
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v = *v + b;
        }
    }
}

/// Per-channel sum of `dy` over batch and space.
fn bias_grad<T: Element>(dy: &Tensor<T>) -> Tensor<T> {
    let s = dy.shape();
    let mut acc = vec![0.0f64; s.c];
    for (i, chunk) in dy.data().chunks(s.plane()).enumerate() {
        acc[i % s.c] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
    }
    Tensor::from_vec(
        Shape::new(1, s.c, 1, 1),
        acc.into_iter().map(T::from_f64_lossy).collect(),
    )
    .expect("bias grad shape")
}

fn sum_partials<T: Element>(partials: Vec<Vec<T>>, shape: Shape) -> Tensor<T> {
    let mut total = vec![T::zero(); shape.numel()];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t = *t + v;
        }
    }
    Tensor::from_vec(shape, total).expect("partial sum shape")
}

/// Gradients produced by a convolution backward pass.
#[derive(Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

fn conv_geom(spec: &Conv2dSpec, h: usize, w: usize, oh: usize, ow: usize) -> Geom {
    Geom {
        c: spec.in_channels / spec.groups,
        h,
        w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
        oh,
        ow,
    }
}

/// Grouped 2-D cross-correlation.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    spec: &Conv2dSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let s = x.shape();
    if s.c != spec.in_channels {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: spec.in_channels,
            got: s.c,
        });
    }
    check_weight("conv2d weight", weight, spec.weight_shape())?;
    check_bias("conv2d bias", bias, spec)?;
    let (oh, ow) = spec.output_hw(s.h, s.w)?;
    let geom = conv_geom(spec, s.h, s.w, oh, ow);
    let out_shape = Shape::new(s.n, spec.out_channels, oh, ow);
    let mut out = Tensor::zeros(out_shape);

    let groups = spec.groups;
    let cin_g = spec.in_channels / groups;
    let cout_g = spec.out_channels / groups;
    let k = geom.rows();
    let p = geom.cols();
    let pointwise = spec.is_pointwise();
    let xd = x.data();
    let wd = weight.data();

    par::for_each_chunk_mut(out.data_mut(), out_shape.sample(), |n, out_s| {
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); k * p]
        };
        for g in 0..groups {
            let x_off = (n * s.c + g * cin_g) * s.plane();
            let x_g = &xd[x_off..x_off + cin_g * s.plane()];
            let cols_ref: &[T] = if pointwise {
                x_g
            } else {
                im2col(x_g, &geom, &mut cols);
                &cols
            };
            let w_g = &wd[g * cout_g * k..(g + 1) * cout_g * k];
            let out_g = &mut out_s[g * cout_g * p..(g + 1) * cout_g * p];
            T::gemm(
                cout_g,
                k,
                p,
                w_g,
                (k, 1),
                cols_ref,
                (p, 1),
                T::zero(),
                out_g,
                (p, 1),
            );
        }
        if let Some(b) = bias {
            add_bias(out_s, b.data(), p);
        }
    });
    Ok(out)
}

/// Backward pass of [`conv2d`] given the upstream gradient `dy`.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    spec: &Conv2dSpec,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    need_input: bool,
    need_weight: bool,
) -> ConvGrads<T> {
    let s = x.shape();
    let ds = dy.shape();
    let geom = conv_geom(spec, s.h, s.w, ds.h, ds.w);
    let groups = spec.groups;
    let cin_g = spec.in_channels / groups;
    let cout_g = spec.out_channels / groups;
    let k = geom.rows();
    let p = geom.cols();
    let pointwise = spec.is_pointwise();
    let (xd, wd, dyd) = (x.data(), weight.data(), dy.data());
    let wlen = weight.numel();

    let per_sample = par::map_range(s.n, |n| {
        let mut dx = if need_input {
            vec![T::zero(); s.sample()]
        } else {
            Vec::new()
        };
        let mut dw = if need_weight {
            vec![T::zero(); wlen]
        } else {
            Vec::new()
        };
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); k * p]
        };
        for g in 0..groups {
            let dy_off = (n * ds.c + g * cout_g) * p;
            let dy_g = &dyd[dy_off..dy_off + cout_g * p];
            let w_g = &wd[g * cout_g * k..(g + 1) * cout_g * k];
            if need_weight {
                let x_off = (n * s.c + g * cin_g) * s.plane();
                let x_g = &xd[x_off..x_off + cin_g * s.plane()];
                let cols_ref: &[T] = if pointwise {
                    x_g
                } else {
                    im2col(x_g, &geom, &mut cols);
                    &cols
                };
                let dw_g = &mut dw[g * cout_g * k..(g + 1) * cout_g * k];
                T::gemm(
                    cout_g,
                    p,
                    k,
                    dy_g,
                    (p, 1),
                    cols_ref,
                    (1, p),
                    T::one(),
                    dw_g,
                    (k, 1),
                );
            }
            if need_input {
                let dx_g = &mut dx[g * cin_g * s.plane()..(g + 1) * cin_g * s.plane()];
                if pointwise {
                    T::gemm(
                        k,
                        cout_g,
                        p,
                        w_g,
                        (1, k),
                        dy_g,
                        (p, 1),
                        T::zero(),
                        dx_g,
                        (p, 1),
                    );
                } else {
                    T::gemm(
                        k,
                        cout_g,
                        p,
                        w_g,
                        (1, k),
                        dy_g,
                        (p, 1),
                        T::zero(),
                        &mut cols,
                        (p, 1),
                    );
                    col2im(&cols, &geom, dx_g);
                }
            }
        }
        (dx, dw)
    });

    let (dxs, dws): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
    ConvGrads {
        input: need_input
            .then(|| Tensor::from_vec(s, dxs.into_iter().flatten().collect()).expect("dx shape")),
        weight: need_weight.then(|| sum_partials(dws, weight.shape())),
        bias: spec.has_bias.then(|| bias_grad(dy)),
    }
}

fn transpose_geom(spec: &Conv2dSpec, h: usize, w: usize, oh: usize, ow: usize) -> Geom {
    // The "image" side of the im2col pair is the (larger) transposed output.
    Geom {
        c: spec.out_channels / spec.groups,
        h: oh,
        w: ow,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
        oh: h,
        ow: w,
    }
}

/// Grouped transposed convolution (fractionally strided convolution).
pub fn transpose_conv2d<T: Element>(
    x: &Tensor<T>,
    spec: &Conv2dSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let s = x.shape();
    if s.c != spec.in_channels {
        return Err(Error::ChannelMismatch {
            op: "transpose_conv2d",
            expected: spec.in_channels,
            got: s.c,
        });
    }
    check_weight(
        "transpose_conv2d weight",
        weight,
        spec.transpose_weight_shape(),
    )?;
    check_bias("transpose_conv2d bias", bias, spec)?;
    let (oh, ow) = spec.transpose_output_hw(s.h, s.w)?;
    let geom = transpose_geom(spec, s.h, s.w, oh, ow);
    let out_shape = Shape::new(s.n, spec.out_channels, oh, ow);
    let mut out = Tensor::zeros(out_shape);

    let groups = spec.groups;
    let cin_g = spec.in_channels / groups;
    let cout_g = spec.out_channels / groups;
    let k = geom.rows();
    let p = geom.cols();
    let pointwise = spec.is_pointwise();
    let (xd, wd) = (x.data(), weight.data());

    par::for_each_chunk_mut(out.data_mut(), out_shape.sample(), |n, out_s| {
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); k * p]
        };
        for g in 0..groups {
            let x_off = (n * s.c + g * cin_g) * p;
            let x_g = &xd[x_off..x_off + cin_g * p];
            let w_g = &wd[g * cin_g * k..(g + 1) * cin_g * k];
            let out_g = &mut out_s[g * cout_g * oh * ow..(g + 1) * cout_g * oh * ow];
            if pointwise {
                T::gemm(
                    k,
                    cin_g,
                    p,
                    w_g,
                    (1, k),
                    x_g,
                    (p, 1),
                    T::zero(),
                    out_g,
                    (p, 1),
                );
            } else {
                T::gemm(
                    k,
                    cin_g,
                    p,
                    w_g,
                    (1, k),
                    x_g,
                    (p, 1),
                    T::zero(),
                    &mut cols,
                    (p, 1),
                );
                col2im(&cols, &geom, out_g);
            }
        }
        if let Some(b) = bias {
            add_bias(out_s, b.data(), oh * ow);
        }
    });
    Ok(out)
}

/// Backward pass of [`transpose_conv2d`].
pub fn transpose_conv2d_backward<T: Element>(
    x: &Tensor<T>,
    spec: &Conv2dSpec,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    need_input: bool,
    need_weight: bool,
) -> ConvGrads<T> {
    let s = x.shape();
    let ds = dy.shape();
    let geom = transpose_geom(spec, s.h, s.w, ds.h, ds.w);
    let groups = spec.groups;
    let cin_g = spec.in_channels / groups;
    let cout_g = spec.out_channels / groups;
    let k = geom.rows();
    let p = geom.cols();
    let pointwise = spec.is_pointwise();
    let (xd, wd, dyd) = (x.data(), weight.data(), dy.data());
    let wlen = weight.numel();

    let per_sample = par::map_range(s.n, |n| {
        let mut dx = if need_input {
            vec![T::zero(); s.sample()]
        } else {
            Vec::new()
        };
        let mut dw = if need_weight {
            vec![T::zero(); wlen]
        } else {
            Vec::new()
        };
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); k * p]
        };
        for g in 0..groups {
            let dy_off = (n * ds.c + g * cout_g) * ds.plane();
            let dy_g = &dyd[dy_off..dy_off + cout_g * ds.plane()];
            let cols_ref: &[T] = if pointwise {
                dy_g
            } else {
                im2col(dy_g, &geom, &mut cols);
                &cols
            };
            let w_g = &wd[g * cin_g * k..(g + 1) * cin_g * k];
            if need_input {
                let dx_g = &mut dx[g * cin_g * p..(g + 1) * cin_g * p];
                T::gemm(
                    cin_g,
                    k,
                    p,
                    w_g,
                    (k, 1),
                    cols_ref,
                    (p, 1),
                    T::zero(),
                    dx_g,
                    (p, 1),
                );
            }
            if need_weight {
                let x_off = (n * s.c + g * cin_g) * p;
                let x_g = &xd[x_off..x_off + cin_g * p];
                let dw_g = &mut dw[g * cin_g * k..(g + 1) * cin_g * k];
                T::gemm(
                    cin_g,
                    p,
                    k,
                    x_g,
                    (p, 1),
                    cols_ref,
                    (1, p),
                    T::one(),
                    dw_g,
                    (k, 1),
                );
            }
        }
        (dx, dw)
    });

    let (dxs, dws): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
    ConvGrads {
        input: need_input
            .then(|| Tensor::from_vec(s, dxs.into_iter().flatten().collect()).expect("dx shape")),
        weight: need_weight.then(|| sum_partials(dws, weight.shape())),
        bias: spec.has_bias.then(|| bias_grad(dy)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    /// Six nested loops, no im2col, no gemm.
    fn direct_conv(
        x: &Tensor<f64>,
        spec: &Conv2dSpec,
        w: &Tensor<f64>,
        b: Option<&Tensor<f64>>,
    ) -> Tensor<f64> {
        let s = x.shape();
        let (oh, ow) = spec.output_hw(s.h, s.w).unwrap();
        let cin_g = spec.in_channels / spec.groups;
        let cout_g = spec.out_channels / spec.groups;
        Tensor::from_fn([s.n, spec.out_channels, oh, ow], |n, co, oy, ox| {
            let g = co / cout_g;
            let mut acc = b.map_or(0.0, |b| b.at(0, co, 0, 0));
            for ci in 0..cin_g {
                for ki in 0..spec.kernel.0 {
                    for kj in 0..spec.kernel.1 {
                        let iy = (oy * spec.stride + ki) as isize - spec.padding as isize;
                        let ix = (ox * spec.stride + kj) as isize - spec.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                            acc += x.at(n, g * cin_g + ci, iy as usize, ix as usize)
                                * w.at(co, ci, ki, kj);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn scalar_conv() {
        let x = Tensor::<f32>::full([1, 1, 1, 1], 3.0);
        let w = Tensor::<f32>::full([1, 1, 1, 1], 2.0);
        let b = Tensor::<f32>::zeros([1, 1, 1, 1]);
        let spec = Conv2dSpec::new(1, 1, 1).bias(true);
        let y = conv2d(&x, &spec, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn sum_of_one_to_nine() {
        let x = Tensor::<f32>::from_vec([1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::<f32>::ones([1, 1, 3, 3]);
        let y = conv2d(&x, &Conv2dSpec::new(1, 1, 3), &w, None).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[45.0]);
    }

    #[test]
    fn matches_direct_loops() {
        let cases = [
            (Conv2dSpec::new(4, 3, 3).padding(1), [2, 4, 6, 6]),
            (Conv2dSpec::new(2, 4, 3).stride(2), [2, 2, 6, 5]),
            (Conv2dSpec::new(3, 2, 1).bias(true), [1, 3, 4, 4]),
            (
                Conv2dSpec::new(4, 4, 2).stride(2).padding(1).bias(true),
                [2, 4, 5, 6],
            ),
        ];
        for (seed, (spec, dims)) in cases.into_iter().enumerate() {
            let x = random_tensor::<f64>(dims, seed as u64);
            let w = random_tensor::<f64>(spec.weight_shape(), 100 + seed as u64);
            let b = spec
                .has_bias
                .then(|| random_tensor::<f64>(spec.bias_shape(), 200));
            let fast = conv2d(&x, &spec, &w, b.as_ref()).unwrap();
            let slow = direct_conv(&x, &spec, &w, b.as_ref());
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn grouped_is_block_diagonal() {
        for groups in [1usize, 2, 4] {
            let spec = Conv2dSpec::new(4, 4, 3).padding(1).groups(groups);
            let x = random_tensor::<f64>([2, 4, 5, 5], 7);
            let w = random_tensor::<f64>(spec.weight_shape(), 8 + groups as u64);
            let grouped = conv2d(&x, &spec, &w, None).unwrap();
            // Dense weight with zeros off the diagonal blocks, run ungrouped.
            let (ci_g, co_g) = (4 / groups, 4 / groups);
            let dense_w = Tensor::from_fn([4, 4, 3, 3], |co, ci, ki, kj| {
                if ci / ci_g == co / co_g {
                    w.at(co, ci % ci_g, ki, kj)
                } else {
                    0.0
                }
            });
            let dense = conv2d(&x, &Conv2dSpec::new(4, 4, 3).padding(1), &dense_w, None).unwrap();
            assert!(grouped.max_abs_diff(&dense) < 1e-12, "groups={groups}");
        }
    }

    #[test]
    fn groups_equal_independent_halves() {
        let spec = Conv2dSpec::new(4, 4, 3).padding(1).groups(2);
        let x = random_tensor::<f64>([1, 4, 4, 4], 21);
        let w = random_tensor::<f64>(spec.weight_shape(), 22);
        let y = conv2d(&x, &spec, &w, None).unwrap();
        let half = Conv2dSpec::new(2, 2, 3).padding(1);
        for g in 0..2 {
            let xg = Tensor::from_fn([1, 2, 4, 4], |n, c, h, ww| x.at(n, 2 * g + c, h, ww));
            let wg = Tensor::from_fn([2, 2, 3, 3], |co, ci, a, b| w.at(2 * g + co, ci, a, b));
            let yg = conv2d(&xg, &half, &wg, None).unwrap();
            let slice = Tensor::from_fn([1, 2, 4, 4], |n, c, h, ww| y.at(n, 2 * g + c, h, ww));
            assert!(yg.max_abs_diff(&slice) < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_groups_and_channels() {
        let x = Tensor::<f32>::zeros([1, 3, 4, 4]);
        let spec = Conv2dSpec::new(3, 4, 1).groups(2);
        assert!(matches!(
            conv2d(&x, &spec, &Tensor::zeros([4, 1, 1, 1]), None),
            Err(Error::InvalidGroups { .. })
        ));
        let spec = Conv2dSpec::new(4, 4, 1);
        assert!(matches!(
            conv2d(&x, &spec, &Tensor::zeros(spec.weight_shape()), None),
            Err(Error::ChannelMismatch { .. })
        ));
        let spec = Conv2dSpec::new(3, 1, 5);
        assert!(conv2d(&x, &spec, &Tensor::zeros(spec.weight_shape()), None).is_err());
    }

    #[test]
    fn transpose_upsamples_constant() {
        let v = 1.75f32;
        let x = Tensor::full([1, 1, 1, 1], v);
        let spec = Conv2dSpec::new(1, 1, 2).stride(2);
        let w = Tensor::ones(spec.transpose_weight_shape());
        let y = transpose_conv2d(&x, &spec, &w, None).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&e| e == v));
    }

    #[test]
    fn transpose_of_zero_is_zero() {
        let spec = Conv2dSpec::new(3, 2, 2).stride(2);
        let x = Tensor::<f32>::zeros([2, 3, 3, 3]);
        let w = random_tensor::<f32>(spec.transpose_weight_shape(), 3);
        let y = transpose_conv2d(&x, &spec, &w, None).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 2, 6, 6));
        assert!(y.data().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn transpose_output_size() {
        let spec = Conv2dSpec::new(1, 1, 3).stride(2).padding(1);
        assert_eq!(spec.transpose_output_hw(4, 5).unwrap(), (7, 9));
        assert_eq!(spec.output_hw(7, 9).unwrap(), (4, 5));
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(Conv2dSpec::new(3, 32, 1).bias(true).param_count(), 128);
        assert_eq!(
            Conv2dSpec::new(64, 64, 3).groups(32).param_count(),
            64 * 2 * 9
        );
    }
}
