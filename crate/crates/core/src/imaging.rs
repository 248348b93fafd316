//! Image loading and conversion between 8-bit images and network tensors.

use std::path::Path;

use image::{imageops, GrayImage, Luma};
use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Per-channel normalization applied after scaling pixels to `[0, 1]`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// ImageNet statistics, used by the production backbones.
    pub fn imagenet() -> Self {
        Normalization {
            mean: vec![0.485, 0.456, 0.406],
            std: vec![0.229, 0.224, 0.225],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(Error::Config("normalization mean/std lengths differ".into()));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(format!("reading {}", path.display()), io),
        other => Error::Image(other),
    })?;
    Ok(img.to_luma8())
}

pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    Ok(image::load_from_memory(bytes)?.to_luma8())
}

pub fn encode_png(img: &image::DynamicImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn resize(img: &GrayImage, width: u32, height: u32) -> GrayImage {
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    imageops::resize(img, width, height, imageops::FilterType::Triangle)
}

/// Resizes to `side × side`, scales to `[0, 1]`, replicates the gray channel
/// and normalizes, yielding a `1 × C × side × side` tensor.
pub fn to_tensor(img: &GrayImage, side: u32, norm: &Normalization) -> Tensor {
    let img = resize(img, side, side);
    let s = side as usize;
    let c = norm.channels();
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[1, c, s, s]));
    for (x, y, Luma([v])) in img.enumerate_pixels() {
        let v = *v as f64 / 255.0;
        for ch in 0..c {
            out[[0, ch, y as usize, x as usize]] = (v - norm.mean[ch]) / norm.std[ch];
        }
    }
    out
}

/// Stacks several `1 × C × H × W` tensors along the batch axis.
pub fn stack(batch: &[&Tensor]) -> Tensor {
    let views: Vec<_> = batch.iter().map(|t| t.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("uniform tensor shapes")
}

/// Bilinear resampling of a grid with half-pixel centers (the
/// `align_corners = false` convention).
pub fn bilinear_resize(grid: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (in_h, in_w) = grid.dim();
    let src = |o: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        let pos = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
        let lo = (pos.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, pos - lo as f64)
    };
    Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let (y0, y1, fy) = src(i, out_h, in_h);
        let (x0, x1, fx) = src(j, out_w, in_w);
        let top = grid[[y0, x0]] * (1.0 - fx) + grid[[y0, x1]] * fx;
        let bottom = grid[[y1, x0]] * (1.0 - fx) + grid[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}
