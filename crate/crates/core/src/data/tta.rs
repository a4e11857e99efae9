//! Patch-wise inference, dihedral test-time augmentation and pixel voting.

use super::dihedral::DihedralTransform;
use super::patch::{extract_patches, stitch_patches, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::metrics::{binarize, DEFAULT_THRESHOLD};
use crate::model::Network;
use crate::par;
use crate::tensor::{Element, Tensor};

/// Anything that maps a `(1, C, s, s)` patch to `(1, 1, s, s)` probabilities.
pub trait PatchModel<T: Element>: Sync {
    fn predict_patch(&self, patch: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Element> PatchModel<T> for Network<T> {
    fn predict_patch(&self, patch: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict(patch)
    }
}

impl<T: Element, F> PatchModel<T> for F
where
    F: Fn(&Tensor<T>) -> Result<Tensor<T>> + Sync,
{
    fn predict_patch(&self, patch: &Tensor<T>) -> Result<Tensor<T>> {
        self(patch)
    }
}

/// Probability map for a whole `(1, C, H, W)` image: tile, predict every
/// tile (in parallel), stitch.
pub fn predict_image<T: Element, M: PatchModel<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    size: usize,
) -> Result<Tensor<T>> {
    let (patches, grid) = extract_patches(image, size);
    let preds = par::map_range(patches.len(), |i| model.predict_patch(&patches[i]));
    let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
    stitch_patches(&preds, &grid)
}

/// Binary mask from the vote of one binarized prediction per transform.
///
/// Each prediction is made on the transformed image and mapped back with
/// the inverse transform before binarizing at `threshold`.
pub fn tta_predict<T: Element, M: PatchModel<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    transforms: &[DihedralTransform],
    size: usize,
    threshold: f64,
) -> Result<Tensor<T>> {
    if transforms.is_empty() {
        return Err(Error::Empty("transform list"));
    }
    let votes = transforms
        .iter()
        .map(|&t| {
            let p = predict_image(model, &t.apply(image), size)?;
            Ok(binarize(&t.inverse().apply(&p), threshold))
        })
        .collect::<Result<Vec<_>>>()?;
    majority_vote(&votes)
}

/// Plain binarized prediction with the default tile size and threshold.
pub fn predict_mask<T: Element, M: PatchModel<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    tta: bool,
) -> Result<Tensor<T>> {
    let transforms: &[DihedralTransform] = if tta {
        &DihedralTransform::ALL
    } else {
        &[DihedralTransform::Identity]
    };
    tta_predict(model, image, transforms, PATCH_SIZE, DEFAULT_THRESHOLD)
}

/// Per-pixel vote: foreground iff at least half the votes are foreground.
pub fn majority_vote<T: Element>(votes: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = votes.first().ok_or(Error::Empty("vote list"))?;
    let mut counts = vec![0usize; first.numel()];
    for v in votes {
        if v.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                op: "majority_vote",
                lhs: first.shape(),
                rhs: v.shape(),
            });
        }
        for (i, (c, &x)) in counts.iter_mut().zip(v.data()).enumerate() {
            if x == T::one() {
                *c += 1;
            } else if x != T::zero() {
                return Err(Error::NonBinary {
                    value: x.as_f64(),
                    index: i,
                });
            }
        }
    }
    let k = votes.len();
    let data = counts
        .into_iter()
        .map(|c| if 2 * c >= k { T::one() } else { T::zero() })
        .collect();
    Tensor::from_vec(first.shape(), data)
}
