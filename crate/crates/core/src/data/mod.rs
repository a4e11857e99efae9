//! Image/mask I/O, patch tiling, augmentation, test-time augmentation and
//! the synthetic corpus.

pub mod augment;
pub mod dihedral;
pub mod io;
pub mod patch;
pub mod synth;
pub mod tta;

pub use augment::{augment_train, AugmentConfig, AugmentPlan};
pub use dihedral::DihedralTransform;
pub use io::{
    load_image, load_mask, load_sample, load_split, match_files, save_image, save_mask,
    split_pairs, Sample,
};
pub use patch::{extract_patches, stitch_patches, PatchGrid, PATCH_SIZE};
pub use synth::{synth_sample, write_corpus, Ellipse};
pub use tta::{majority_vote, predict_image, predict_mask, tta_predict, PatchModel};
