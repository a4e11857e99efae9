use crate::tensor::{Element, Tensor};

/// The eight symmetries of the square acting on the `(H, W)` plane.
///
/// Rotations are counter-clockwise. `Transpose` mirrors across the main
/// diagonal and `AntiTranspose` across the other one; they equal
/// `FlipV ∘ Rot90` and `FlipH ∘ Rot90`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DihedralTransform {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
    Transpose,
    AntiTranspose,
}

impl DihedralTransform {
    pub const ALL: [DihedralTransform; 8] = [
        DihedralTransform::Identity,
        DihedralTransform::Rot90,
        DihedralTransform::Rot180,
        DihedralTransform::Rot270,
        DihedralTransform::FlipH,
        DihedralTransform::FlipV,
        DihedralTransform::Transpose,
        DihedralTransform::AntiTranspose,
    ];

    pub fn inverse(self) -> Self {
        match self {
            DihedralTransform::Rot90 => DihedralTransform::Rot270,
            DihedralTransform::Rot270 => DihedralTransform::Rot90,
            other => other,
        }
    }

    pub fn swaps_axes(self) -> bool {
        matches!(
            self,
            DihedralTransform::Rot90
                | DihedralTransform::Rot270
                | DihedralTransform::Transpose
                | DihedralTransform::AntiTranspose
        )
    }

    /// Output size for an `h × w` input.
    pub fn output_hw(self, h: usize, w: usize) -> (usize, usize) {
        if self.swaps_axes() {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source position in an `h × w` input of output position `(y, x)`.
    fn source(self, h: usize, w: usize, y: usize, x: usize) -> (usize, usize) {
        match self {
            DihedralTransform::Identity => (y, x),
            // Output is w × h; its row y reads input column w-1-y.
            DihedralTransform::Rot90 => (x, w - 1 - y),
            DihedralTransform::Rot180 => (h - 1 - y, w - 1 - x),
            DihedralTransform::Rot270 => (h - 1 - x, y),
            DihedralTransform::FlipH => (y, w - 1 - x),
            DihedralTransform::FlipV => (h - 1 - y, x),
            DihedralTransform::Transpose => (x, y),
            DihedralTransform::AntiTranspose => (h - 1 - x, w - 1 - y),
        }
    }

    pub fn apply<T: Element>(self, t: &Tensor<T>) -> Tensor<T> {
        if self == DihedralTransform::Identity {
            return t.clone();
        }
        let s = t.shape();
        let (oh, ow) = self.output_hw(s.h, s.w);
        Tensor::from_fn([s.n, s.c, oh, ow], |n, c, y, x| {
            let (sy, sx) = self.source(s.h, s.w, y, x);
            t.at(n, c, sy, sx)
        })
    }
}
