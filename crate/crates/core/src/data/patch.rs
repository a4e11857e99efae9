use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

pub const PATCH_SIZE: usize = 224;

/// Non-overlapping tiling of an image zero-padded on the right and bottom to
/// multiples of the tile size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub original_hw: (usize, usize),
    pub padded_hw: (usize, usize),
    pub size: usize,
    /// Row-major tile origins `(y, x)`.
    pub origins: Vec<(usize, usize)>,
}

impl PatchGrid {
    pub fn new(h: usize, w: usize, size: usize) -> Self {
        assert!(size > 0, "tile size must be positive");
        let ph = h.div_ceil(size).max(1) * size;
        let pw = w.div_ceil(size).max(1) * size;
        let origins = (0..ph / size)
            .flat_map(|i| (0..pw / size).map(move |j| (i * size, j * size)))
            .collect();
        PatchGrid {
            original_hw: (h, w),
            padded_hw: (ph, pw),
            size,
            origins,
        }
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Splits a `(1, C, H, W)` tensor into `size × size` tiles in row-major
/// order, zero-padding the right and bottom edges.
pub fn extract_patches<T: Element>(t: &Tensor<T>, size: usize) -> (Vec<Tensor<T>>, PatchGrid) {
    let s = t.shape();
    assert_eq!(s.n, 1, "extract_patches takes a single image, got {s}");
    let grid = PatchGrid::new(s.h, s.w, size);
    let patches = grid
        .origins
        .iter()
        .map(|&(y0, x0)| {
            Tensor::from_fn([1, s.c, size, size], |_, c, y, x| {
                let (yy, xx) = (y0 + y, x0 + x);
                if yy < s.h && xx < s.w {
                    t.at(0, c, yy, xx)
                } else {
                    T::zero()
                }
            })
        })
        .collect();
    (patches, grid)
}

/// Reassembles tiles and crops to the original size.
pub fn stitch_patches<T: Element>(patches: &[Tensor<T>], grid: &PatchGrid) -> Result<Tensor<T>> {
    if patches.len() != grid.len() {
        return Err(Error::InvalidShape {
            op: "stitch_patches",
            reason: format!("{} patches for a grid of {}", patches.len(), grid.len()),
        });
    }
    let first = patches.first().ok_or(Error::Empty("patch list"))?.shape();
    let expected = Shape::new(1, first.c, grid.size, grid.size);
    if let Some(p) = patches.iter().find(|p| p.shape() != expected) {
        return Err(Error::ShapeMismatch {
            op: "stitch_patches",
            lhs: p.shape(),
            rhs: expected,
        });
    }
    let (h, w) = grid.original_hw;
    let mut out = Tensor::zeros([1, first.c, h, w]);
    for (p, &(y0, x0)) in patches.iter().zip(&grid.origins) {
        for c in 0..first.c {
            for y in 0..grid.size.min(h.saturating_sub(y0)) {
                for x in 0..grid.size.min(w.saturating_sub(x0)) {
                    *out.at_mut(0, c, y0 + y, x0 + x) = p.at(0, c, y, x);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn arithmetic() {
        let g = PatchGrid::new(512, 512, 224);
        assert_eq!(g.padded_hw, (672, 672));
        assert_eq!(g.len(), 9);
        assert_eq!(g.origins[1], (0, 224));
        assert_eq!(PatchGrid::new(224, 224, 224).len(), 1);
    }

    #[test]
    fn single_patch_is_identity() {
        let x = random_tensor::<f32>([1, 3, 224, 224], 1);
        let (p, g) = extract_patches(&x, 224);
        assert_eq!(p, vec![x.clone()]);
        assert_eq!(stitch_patches(&p, &g).unwrap(), x);
    }

    #[test]
    fn tall_image_splits_in_two() {
        let x = random_tensor::<f32>([1, 1, 448, 224], 2);
        let (p, _) = extract_patches(&x, 224);
        assert_eq!(p.len(), 2);
        let mut joined = p[0].data().to_vec();
        joined.extend_from_slice(p[1].data());
        assert_eq!(joined, x.data());
    }

    #[test]
    fn padding_is_zero_and_cropped_away() {
        let x = Tensor::<f32>::ones([1, 1, 225, 3]);
        let (p, g) = extract_patches(&x, 224);
        assert_eq!(g.len(), 2);
        assert_eq!(p[1].at(0, 0, 0, 0), 1.0);
        assert_eq!(p[1].at(0, 0, 1, 0), 0.0);
        assert_eq!(p[0].at(0, 0, 0, 3), 0.0);
        assert_eq!(stitch_patches(&p, &g).unwrap(), x);
    }

    #[test]
    fn constant_patches_constant_image() {
        let g = PatchGrid::new(300, 500, 224);
        let p = vec![Tensor::<f32>::full([1, 1, 224, 224], 0.25); g.len()];
        let y = stitch_patches(&p, &g).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
        assert_eq!(y.shape().dims(), [1, 1, 300, 500]);
    }

    #[test]
    fn stitch_errors() {
        let g = PatchGrid::new(300, 300, 224);
        assert!(stitch_patches(&[Tensor::<f32>::zeros([1, 1, 224, 224])], &g).is_err());
        let wrong = vec![Tensor::<f32>::zeros([1, 1, 100, 100]); 4];
        assert!(matches!(
            stitch_patches(&wrong, &g),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
