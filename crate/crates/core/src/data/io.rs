use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image `(1, 3, H, W)` in `[0, 1]` and its binary mask `(1, 1, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl Sample {
    pub fn new(image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let (i, m) = (image.shape(), mask.shape());
        if i.n != 1 || i.c != 3 || m.n != 1 || m.c != 1 || (i.h, i.w) != (m.h, m.w) {
            return Err(Error::ShapeMismatch {
                op: "sample",
                lhs: i,
                rhs: m,
            });
        }
        Ok(Sample { image, mask })
    }

    pub fn hw(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s.h, s.w)
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    Tensor::from_fn([1, 3, h as usize, w as usize], |_, c, y, x| {
        img.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0
    })
}

/// 8-bit RGB with values rounded from `[0, 1]`.
pub fn tensor_to_rgb(t: &Tensor<f32>) -> RgbImage {
    let s = t.shape();
    assert_eq!(
        (s.n, s.c),
        (1, 3),
        "expected a (1, 3, H, W) tensor, got {s}"
    );
    RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| {
            (t.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    })
}

/// 255 → 1 and 0 → 0; any other value is an error naming the pixel.
pub fn gray_to_mask(img: &GrayImage, path: &Path) -> Result<Tensor<f32>> {
    let (w, h) = img.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for (x, y, p) in img.enumerate_pixels() {
        data.push(match p.0[0] {
            0 => 0.0,
            255 => 1.0,
            value => {
                return Err(Error::NonBinaryMask {
                    path: path.to_path_buf(),
                    value,
                    y,
                    x,
                })
            }
        });
    }
    Tensor::from_vec([1, 1, h as usize, w as usize], data)
}

/// Binary mask as 0/255 grayscale.
pub fn mask_to_gray(t: &Tensor<f32>) -> Result<GrayImage> {
    let s = t.shape();
    if (s.n, s.c) != (1, 1) {
        return Err(Error::InvalidShape {
            op: "save_mask",
            reason: format!("expected (1, 1, H, W), got {s}"),
        });
    }
    let mut out = GrayImage::new(s.w as u32, s.h as u32);
    for (i, (&v, p)) in t.data().iter().zip(out.pixels_mut()).enumerate() {
        p.0[0] = match v {
            0.0 => 0,
            1.0 => 255,
            _ => {
                return Err(Error::NonBinary {
                    value: v as f64,
                    index: i,
                })
            }
        };
    }
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    Ok(rgb_to_tensor(&open(path)?.to_rgb8()))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    gray_to_mask(&open(path)?.to_luma8(), path)
}

/// Loads an image/mask pair and checks that their sizes agree.
pub fn load_sample(image_path: impl AsRef<Path>, mask_path: impl AsRef<Path>) -> Result<Sample> {
    let image = load_image(image_path)?;
    let mask = load_mask(mask_path)?;
    let (i, m) = (image.shape(), mask.shape());
    if (i.h, i.w) != (m.h, m.w) {
        return Err(Error::DimensionMismatch {
            image_hw: (i.h as u32, i.w as u32),
            mask_hw: (m.h as u32, m.w as u32),
        });
    }
    Sample::new(image, mask)
}

fn save(img: impl FnOnce(&Path) -> image::ImageResult<()>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_image(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let img = tensor_to_rgb(t);
    save(|p| img.save(p), path.as_ref())
}

pub fn save_mask(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let img = mask_to_gray(t)?;
    save(|p| img.save(p), path.as_ref())
}

/// Sorted file names of the `.png` files in `dir`.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Pairs files with the same name in two directories. Files present in only
/// one of them are reported together.
pub fn match_files(
    left: impl AsRef<Path>,
    right: impl AsRef<Path>,
) -> Result<Vec<(PathBuf, PathBuf)>> {
    let (left, right) = (left.as_ref(), right.as_ref());
    let l: BTreeSet<String> = list_pngs(left)?.into_iter().collect();
    let r: BTreeSet<String> = list_pngs(right)?.into_iter().collect();
    if l != r {
        return Err(Error::UnmatchedFiles {
            left_dir: left.to_path_buf(),
            right_dir: right.to_path_buf(),
            only_left: l.difference(&r).cloned().collect(),
            only_right: r.difference(&l).cloned().collect(),
        });
    }
    Ok(l.iter().map(|n| (left.join(n), right.join(n))).collect())
}

/// Image/mask pairs of one split in the `root/<split>/{images,labels}`
/// layout.
pub fn split_pairs(root: impl AsRef<Path>, split: &str) -> Result<Vec<(PathBuf, PathBuf)>> {
    let base = root.as_ref().join(split);
    match_files(base.join("images"), base.join("labels"))
}

pub fn load_split(root: impl AsRef<Path>, split: &str) -> Result<Vec<Sample>> {
    split_pairs(root, split)?
        .iter()
        .map(|(i, m)| load_sample(i, m))
        .collect()
}
