//! Grad-CAM heatmaps, thresholded bounding boxes and region-of-interest
//! crops.
//!
//! Grid coordinates are `(row, col)`; boxes use inclusive bounds.

use std::collections::VecDeque;
use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};
use ndarray::{Array2, Array3, ArrayD, ArrayView3, Axis, Ix4, IxDyn};
use serde::{Deserialize, Serialize};

use crate::classifier::DiseaseClassifier;
use crate::error::{Error, Result};
use crate::imaging;
use crate::nn::{Graph, Tensor, Var};

/// `K × H × W` activations of the final convolutional layer.
pub type FeatureMaps = Array3<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct CamWeights(pub Vec<f64>);

/// Non-negative `H × W` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub grid: Array2<f64>,
}

impl Heatmap {
    pub fn new(grid: Array2<f64>) -> Self {
        Heatmap { grid }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.grid.dim()
    }

    pub fn max(&self) -> f64 {
        self.grid.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        !(self.max() > 0.0)
    }

    /// Divides by the maximum; an all-zero map stays zero.
    pub fn normalized(&self) -> Heatmap {
        let max = self.max();
        if max > 0.0 {
            Heatmap::new(self.grid.mapv(|v| v / max))
        } else {
            self.clone()
        }
    }

    /// Bilinear resampling (half-pixel centers), clamped at zero.
    pub fn upsample(&self, height: usize, width: usize) -> Heatmap {
        let up = imaging::bilinear_resize(&self.grid, height, width);
        Heatmap::new(up.mapv(|v| v.max(0.0)))
    }

    /// Writes the grid as a little-endian `f64` NPY array of shape `(H, W)`.
    pub fn write_npy(&self, path: &Path) -> Result<()> {
        ndarray_npy::write_npy(path, &self.grid).map_err(|e| match e {
            ndarray_npy::WriteNpyError::Io(io) => Error::io(format!("writing {}", path.display()), io),
            other => Error::Internal(format!("npy export: {other}")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BoundingBox {
    pub fn full(height: usize, width: usize) -> Self {
        BoundingBox {
            row_min: 0,
            col_min: 0,
            row_max: height - 1,
            col_max: width - 1,
        }
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    /// Maps a box on an `from` grid onto an `to` grid covering the same
    /// extent.
    pub fn rescale(&self, from: (usize, usize), to: (usize, usize)) -> BoundingBox {
        let lo = |v: usize, f: usize, t: usize| v * t / f;
        let hi = |v: usize, f: usize, t: usize| ((v + 1) * t).div_ceil(f).max(1) - 1;
        BoundingBox {
            row_min: lo(self.row_min, from.0, to.0),
            col_min: lo(self.col_min, from.1, to.1),
            row_max: hi(self.row_max, from.0, to.0),
            col_max: hi(self.col_max, from.1, to.1),
        }
    }
}

/// Which thresholded pixels the box must bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxRule {
    /// Largest 4-connected component; ties go to the higher peak, then to
    /// the component met first in row-major order.
    #[default]
    LargestComponent,
    /// Every pixel at or above the threshold.
    AllPixels,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationConfig {
    pub fraction: f64,
    pub rule: BoxRule,
    /// Crop margin as a fraction of box height/width on each side.
    pub padding: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig {
            fraction: 0.9,
            rule: BoxRule::LargestComponent,
            padding: 0.1,
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config(format!("bbox fraction must lie in (0, 1), got {}", self.fraction)));
        }
        if !(self.padding >= 0.0 && self.padding.is_finite()) {
            return Err(Error::Config(format!("crop padding must be non-negative, got {}", self.padding)));
        }
        Ok(())
    }
}

/// `w_k` = spatial mean of `∂z/∂A_k`.
pub fn cam_weights(gradients: ArrayView3<f64>) -> CamWeights {
    CamWeights(
        gradients
            .outer_iter()
            .map(|g| g.mean().unwrap_or(0.0))
            .collect(),
    )
}

/// `ReLU(Σ_k w_k A_k)`.
pub fn compute_heatmap(w: &CamWeights, maps: ArrayView3<f64>) -> Result<Heatmap> {
    let (k, h, wd) = maps.dim();
    if w.0.len() != k {
        return Err(Error::ShapeMismatch {
            expected: format!("{k} weights"),
            actual: w.0.len().to_string(),
        });
    }
    let mut grid = Array2::zeros((h, wd));
    for (wk, a) in w.0.iter().zip(maps.outer_iter()) {
        grid.scaled_add(*wk, &a);
    }
    Ok(Heatmap::new(grid.mapv(|v| if v > 0.0 { v } else { 0.0 })))
}

/// A model that exposes its final convolutional activations.
pub trait GradCamModel {
    fn num_classes(&self) -> usize;

    /// Records a forward pass of `N × C × H × W` input `x`, returning the
    /// `N × K × h × w` activations and the `N × M` pre-sigmoid logits.
    fn features_and_logits(&self, g: &mut Graph, x: Var) -> (Var, Var);
}

impl GradCamModel for DiseaseClassifier {
    fn num_classes(&self) -> usize {
        DiseaseClassifier::num_classes(self)
    }

    fn features_and_logits(&self, g: &mut Graph, x: Var) -> (Var, Var) {
        self.forward(g, x)
    }
}

#[derive(Clone, Debug)]
pub struct GradCam {
    pub disease: usize,
    pub logit: f64,
    pub weights: CamWeights,
    /// Heatmap at feature-map resolution.
    pub raw: Heatmap,
    /// Upsampled to the input resolution and normalized to `[0, 1]`.
    pub heatmap: Heatmap,
}

/// Grad-CAM for disease `m` on a single `1 × C × H × W` input.
pub fn grad_cam<M: GradCamModel + ?Sized>(model: &M, x: &Tensor, m: usize) -> Result<GradCam> {
    Ok(grad_cam_many(model, x, &[m])?.remove(0))
}

/// Grad-CAM for several diseases, sharing one forward pass.
pub fn grad_cam_many<M: GradCamModel + ?Sized>(model: &M, x: &Tensor, diseases: &[usize]) -> Result<Vec<GradCam>> {
    let count = model.num_classes();
    if let Some(&bad) = diseases.iter().find(|&&m| m >= count) {
        return Err(Error::DiseaseIndex { index: bad, count });
    }
    if x.ndim() != 4 || x.shape()[0] != 1 {
        return Err(Error::ShapeMismatch {
            expected: "1×C×H×W".into(),
            actual: format!("{:?}", x.shape()),
        });
    }
    let (in_h, in_w) = (x.shape()[2], x.shape()[3]);
    let mut g = Graph::new();
    let input = g.input(x.clone());
    let (maps_var, logits) = model.features_and_logits(&mut g, input);
    let maps = g
        .value(maps_var)
        .clone()
        .into_dimensionality::<Ix4>()
        .map_err(|e| Error::Internal(format!("feature maps: {e}")))?
        .index_axis_move(Axis(0), 0);
    let z = g.value(logits).clone();

    diseases
        .iter()
        .map(|&m| {
            let mut seed = ArrayD::zeros(IxDyn(z.shape()));
            seed[[0, m]] = 1.0;
            let grads = g.backward_with_seed(logits, seed);
            let d = grads
                .get(maps_var)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(IxDyn(g.shape(maps_var))))
                .into_dimensionality::<Ix4>()
                .map_err(|e| Error::Internal(format!("feature gradients: {e}")))?
                .index_axis_move(Axis(0), 0);
            let weights = cam_weights(d.view());
            let raw = compute_heatmap(&weights, maps.view())?;
            let heatmap = raw.upsample(in_h, in_w).normalized();
            Ok(GradCam {
                disease: m,
                logit: z[[0, m]],
                weights,
                raw,
                heatmap,
            })
        })
        .collect()
}

/// Bounding box of heatmap pixels at or above `fraction · max`.
pub fn extract_bbox(h: &Heatmap, fraction: f64, rule: BoxRule) -> Result<BoundingBox> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("bbox fraction must lie in (0, 1), got {fraction}")));
    }
    let max = h.max();
    if !(max > 0.0) {
        return Err(Error::EmptyHeatmap);
    }
    let t = fraction * max;
    let selected = h.grid.mapv(|v| v >= t);
    let pixels: Vec<(usize, usize)> = match rule {
        BoxRule::AllPixels => selected
            .indexed_iter()
            .filter(|(_, &s)| s)
            .map(|(p, _)| p)
            .collect(),
        BoxRule::LargestComponent => largest_component(&h.grid, &selected),
    };
    Ok(bounding(&pixels))
}

fn bounding(pixels: &[(usize, usize)]) -> BoundingBox {
    let mut b = BoundingBox {
        row_min: usize::MAX,
        col_min: usize::MAX,
        row_max: 0,
        col_max: 0,
    };
    for &(r, c) in pixels {
        b.row_min = b.row_min.min(r);
        b.col_min = b.col_min.min(c);
        b.row_max = b.row_max.max(r);
        b.col_max = b.col_max.max(c);
    }
    b
}

fn largest_component(grid: &Array2<f64>, selected: &Array2<bool>) -> Vec<(usize, usize)> {
    let (h, w) = grid.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut best: Vec<(usize, usize)> = Vec::new();
    let mut best_peak = f64::NEG_INFINITY;
    for ((r, c), &s) in selected.indexed_iter() {
        if !s || seen[[r, c]] {
            continue;
        }
        let mut comp = Vec::new();
        let mut peak = f64::NEG_INFINITY;
        let mut queue = VecDeque::from([(r, c)]);
        seen[[r, c]] = true;
        while let Some((y, x)) = queue.pop_front() {
            comp.push((y, x));
            peak = peak.max(grid[[y, x]]);
            let neighbours = [
                (y.wrapping_sub(1), x),
                (y + 1, x),
                (y, x.wrapping_sub(1)),
                (y, x + 1),
            ];
            for (ny, nx) in neighbours {
                if ny < h && nx < w && selected[[ny, nx]] && !seen[[ny, nx]] {
                    seen[[ny, nx]] = true;
                    queue.push_back((ny, nx));
                }
            }
        }
        if comp.len() > best.len() || (comp.len() == best.len() && peak > best_peak) {
            best = comp;
            best_peak = peak;
        }
    }
    best
}

/// Expands `b` by `padding` of its height/width on each side, clipped to a
/// `height × width` image.
pub fn crop_box(b: &BoundingBox, padding: f64, height: usize, width: usize) -> Result<BoundingBox> {
    if b.row_min > b.row_max || b.col_min > b.col_max || b.row_min >= height || b.col_min >= width {
        return Err(Error::DegenerateCrop(format!("{b:?} outside {height}×{width} image")));
    }
    if !(padding >= 0.0 && padding.is_finite()) {
        return Err(Error::Config(format!("crop padding must be non-negative, got {padding}")));
    }
    let pad_r = (padding * b.height() as f64).round() as usize;
    let pad_c = (padding * b.width() as f64).round() as usize;
    Ok(BoundingBox {
        row_min: b.row_min.saturating_sub(pad_r),
        col_min: b.col_min.saturating_sub(pad_c),
        row_max: (b.row_max + pad_r).min(height - 1),
        col_max: (b.col_max + pad_c).min(width - 1),
    })
}

/// Padded crop of `image` around `b`, resized to `side × side`.
pub fn crop_roi(image: &GrayImage, b: &BoundingBox, padding: f64, side: u32) -> Result<GrayImage> {
    let (w, h) = image.dimensions();
    let c = crop_box(b, padding, h as usize, w as usize)?;
    let sub = image::imageops::crop_imm(
        image,
        c.col_min as u32,
        c.row_min as u32,
        c.width() as u32,
        c.height() as u32,
    )
    .to_image();
    Ok(imaging::resize(&sub, side, side))
}

/// Piecewise-linear "jet" colour map on `[0, 1]`.
fn jet(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |center: f64| (1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Image blended with the colour-mapped heatmap at alpha 0.4 plus the box
/// outlined in red. The heatmap is resampled to the image size.
pub fn render_overlay(image: &GrayImage, heatmap: &Heatmap, b: Option<&BoundingBox>) -> RgbImage {
    let (w, h) = image.dimensions();
    let hm = if heatmap.dim() == (h as usize, w as usize) {
        heatmap.normalized()
    } else {
        heatmap.upsample(h as usize, w as usize).normalized()
    };
    let alpha = 0.4;
    let mut out = RgbImage::from_fn(w, h, |x, y| {
        let base = image.get_pixel(x, y)[0] as f64;
        let color = jet(hm.grid[[y as usize, x as usize]]);
        let mix = |c: f64| ((1.0 - alpha) * base + alpha * 255.0 * c).round().clamp(0.0, 255.0) as u8;
        Rgb([mix(color[0]), mix(color[1]), mix(color[2])])
    });
    if let Some(b) = b {
        let red = Rgb([255, 0, 0]);
        let (r1, r2) = (b.row_min as u32, (b.row_max as u32).min(h - 1));
        let (c1, c2) = (b.col_min as u32, (b.col_max as u32).min(w - 1));
        for x in c1..=c2 {
            out.put_pixel(x, r1, red);
            out.put_pixel(x, r2, red);
        }
        for y in r1..=r2 {
            out.put_pixel(c1, y, red);
            out.put_pixel(c2, y, red);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3};
    use proptest::prelude::*;

    #[test]
    fn cam_weights_are_spatial_means() {
        let g = Array3::from_shape_vec((2, 2, 2), vec![1.0, 2.0, 3.0, 4.0, 0.7, 0.7, 0.7, 0.7]).unwrap();
        assert_eq!(cam_weights(g.view()).0, vec![2.5, 0.7]);
        assert_eq!(cam_weights(Array3::zeros((3, 2, 2)).view()).0, vec![0.0; 3]);
    }

    #[test]
    fn heatmap_examples() {
        let a = Array3::from_shape_vec((1, 2, 2), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let h = compute_heatmap(&CamWeights(vec![1.0]), a.view()).unwrap();
        assert_eq!(h.grid, arr2(&[[1.0, 0.0], [0.5, 3.0]]));

        let mut a = Array3::zeros((2, 3, 3));
        a.index_axis_mut(Axis(0), 0).fill(2.0);
        a.index_axis_mut(Axis(0), 1).fill(3.0);
        let h = compute_heatmap(&CamWeights(vec![1.0, -1.0]), a.view()).unwrap();
        assert!(h.is_zero());
        assert!(compute_heatmap(&CamWeights(vec![1.0]), a.view()).is_err());
    }

    #[test]
    fn bbox_examples() {
        let uniform = Heatmap::new(Array2::from_elem((4, 5), 0.3));
        assert_eq!(extract_bbox(&uniform, 0.9, BoxRule::LargestComponent).unwrap(), BoundingBox::full(4, 5));

        let mut single = Array2::from_elem((6, 6), 1.0);
        single[[2, 4]] = 10.0;
        let b = extract_bbox(&Heatmap::new(single), 0.9, BoxRule::LargestComponent).unwrap();
        assert_eq!(b, BoundingBox { row_min: 2, col_min: 4, row_max: 2, col_max: 4 });

        let mut two = Array2::zeros((8, 8));
        for p in [(0, 0), (0, 1), (0, 2), (1, 1), (2, 1)] {
            two[p] = 5.0;
        }
        for p in [(6, 5), (6, 6), (7, 6)] {
            two[p] = 5.0;
        }
        let two = Heatmap::new(two);
        let b = extract_bbox(&two, 0.9, BoxRule::LargestComponent).unwrap();
        assert_eq!(b, BoundingBox { row_min: 0, col_min: 0, row_max: 2, col_max: 2 });
        let all = extract_bbox(&two, 0.9, BoxRule::AllPixels).unwrap();
        assert_eq!(all, BoundingBox { row_min: 0, col_min: 0, row_max: 7, col_max: 6 });

        let zero = Heatmap::new(Array2::zeros((3, 3)));
        assert!(matches!(extract_bbox(&zero, 0.9, BoxRule::LargestComponent), Err(Error::EmptyHeatmap)));
    }

    #[test]
    fn equal_components_prefer_the_higher_peak_then_scan_order() {
        let mut g = Array2::zeros((5, 5));
        g[[0, 0]] = 1.0;
        g[[4, 4]] = 1.0;
        let b = extract_bbox(&Heatmap::new(g.clone()), 0.5, BoxRule::LargestComponent).unwrap();
        assert_eq!((b.row_min, b.col_min), (0, 0));
        g[[4, 4]] = 1.05;
        let b = extract_bbox(&Heatmap::new(g), 0.9, BoxRule::LargestComponent).unwrap();
        assert_eq!((b.row_min, b.col_min), (4, 4));
    }

    #[test]
    fn crop_examples() {
        let img = GrayImage::from_fn(100, 100, |x, y| image::Luma([(x + y) as u8]));
        let b = BoundingBox { row_min: 10, col_min: 10, row_max: 20, col_max: 20 };
        let c = crop_box(&b, 0.0, 100, 100).unwrap();
        assert_eq!((c.height(), c.width()), (11, 11));
        let roi = crop_roi(&img, &b, 0.0, 11).unwrap();
        assert_eq!(roi.get_pixel(0, 0)[0], 20);

        let full = BoundingBox::full(100, 100);
        assert_eq!(crop_roi(&img, &full, 0.0, 100).unwrap(), img);

        let corner = BoundingBox { row_min: 0, col_min: 0, row_max: 9, col_max: 9 };
        let c = crop_box(&corner, 0.1, 100, 100).unwrap();
        assert_eq!(c, BoundingBox { row_min: 0, col_min: 0, row_max: 10, col_max: 10 });

        let outside = BoundingBox { row_min: 120, col_min: 0, row_max: 130, col_max: 5 };
        assert!(matches!(crop_box(&outside, 0.1, 100, 100), Err(Error::DegenerateCrop(_))));
    }

    #[test]
    fn rescale_covers_the_same_extent() {
        let b = BoundingBox { row_min: 1, col_min: 0, row_max: 2, col_max: 3 };
        let r = b.rescale((4, 4), (8, 12));
        assert_eq!(r, BoundingBox { row_min: 2, col_min: 0, row_max: 5, col_max: 11 });
        assert_eq!(BoundingBox::full(7, 7).rescale((7, 7), (3, 5)), BoundingBox::full(3, 5));
    }

    #[test]
    fn overlay_draws_red_box_and_keeps_size() {
        let img = GrayImage::from_pixel(10, 8, image::Luma([100]));
        let hm = Heatmap::new(Array2::from_elem((2, 2), 1.0));
        let b = BoundingBox { row_min: 2, col_min: 3, row_max: 5, col_max: 7 };
        let out = render_overlay(&img, &hm, Some(&b));
        assert_eq!(out.dimensions(), (10, 8));
        assert_eq!(out.get_pixel(3, 2), &Rgb([255, 0, 0]));
        assert_eq!(out.get_pixel(7, 5), &Rgb([255, 0, 0]));
        assert_ne!(out.get_pixel(0, 0), &Rgb([255, 0, 0]));
        // jet(1) is dark red: 0.6·100 + 0.4·255·0.5
        assert_eq!(out.get_pixel(0, 0), &Rgb([111, 60, 60]));
    }

    #[test]
    fn npy_export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.npy");
        let hm = Heatmap::new(arr2(&[[0.0, 0.25], [0.5, 1.0], [0.125, 0.0]]));
        hm.write_npy(&path).unwrap();
        let back: Array2<f64> = ndarray_npy::read_npy(&path).unwrap();
        assert_eq!(back, hm.grid);
    }

    #[test]
    fn out_of_range_disease_is_rejected() {
        struct Fixed;
        impl GradCamModel for Fixed {
            fn num_classes(&self) -> usize {
                2
            }
            fn features_and_logits(&self, g: &mut Graph, x: Var) -> (Var, Var) {
                let pooled = g.mean_axes(x, &[2, 3]);
                (x, pooled)
            }
        }
        let x = ArrayD::zeros(IxDyn(&[1, 2, 3, 3]));
        assert!(matches!(grad_cam(&Fixed, &x, 2), Err(Error::DiseaseIndex { index: 2, count: 2 })));
        assert!(grad_cam(&Fixed, &x, 1).is_ok());
    }

    fn heatmap_strategy() -> impl Strategy<Value = Array2<f64>> {
        (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
            prop::collection::vec(0u8..5, h * w)
                .prop_map(move |v| Array2::from_shape_vec((h, w), v.into_iter().map(f64::from).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn heatmap_is_non_negative(
            w in prop::collection::vec(-2.0f64..2.0, 3),
            a in prop::collection::vec(-5.0f64..5.0, 3 * 4 * 5),
        ) {
            let a = Array3::from_shape_vec((3, 4, 5), a).unwrap();
            let h = compute_heatmap(&CamWeights(w), a.view()).unwrap();
            prop_assert!(h.grid.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn cam_weights_are_linear(
            g1 in prop::collection::vec(-3.0f64..3.0, 2 * 3 * 3),
            g2 in prop::collection::vec(-3.0f64..3.0, 2 * 3 * 3),
        ) {
            let a = Array3::from_shape_vec((2, 3, 3), g1).unwrap();
            let b = Array3::from_shape_vec((2, 3, 3), g2).unwrap();
            let sum = cam_weights((&a + &b).view()).0;
            let parts: Vec<f64> = cam_weights(a.view()).0.iter().zip(cam_weights(b.view()).0).map(|(x, y)| x + y).collect();
            for (s, p) in sum.iter().zip(parts) {
                prop_assert!((s - p).abs() < 1e-12);
            }
        }

        #[test]
        fn bbox_ignores_positive_scaling(grid in heatmap_strategy(), c in 0.01f64..100.0) {
            let h = Heatmap::new(grid.clone());
            let scaled = Heatmap::new(grid.mapv(|v| v * c));
            for rule in [BoxRule::LargestComponent, BoxRule::AllPixels] {
                let a = extract_bbox(&h, 0.9, rule).ok();
                let b = extract_bbox(&scaled, 0.9, rule).ok();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn all_pixel_box_contains_argmax(grid in heatmap_strategy()) {
            let h = Heatmap::new(grid.clone());
            if let Ok(b) = extract_bbox(&h, 0.9, BoxRule::AllPixels) {
                let max = h.max();
                let (r, c) = grid.indexed_iter().find(|(_, &v)| v == max).unwrap().0;
                prop_assert!(b.contains(r, c));
            }
        }

        #[test]
        fn crop_box_stays_in_bounds(
            r0 in 0usize..50, c0 in 0usize..50, dh in 0usize..50, dw in 0usize..50,
            pad in 0.0f64..1.0,
        ) {
            let b = BoundingBox { row_min: r0, col_min: c0, row_max: (r0 + dh).min(49), col_max: (c0 + dw).min(49) };
            let c = crop_box(&b, pad, 50, 50).unwrap();
            prop_assert!(c.row_max < 50 && c.col_max < 50);
            prop_assert!(c.row_min <= b.row_min && c.col_max >= b.col_max);
        }
    }
}
