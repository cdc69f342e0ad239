//! Range images, occlusion masks and the grid <-> cloud bridge.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{PointCloud, Vec3};
use crate::{Error, Result};

/// Rectangular depth grid with a per-pixel validity flag.
///
/// Invalid pixels are identified only by the flag grid; their stored depth
/// is always `0.0` and never participates in any statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeImage {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl RangeImage {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyInput("image dimensions must be positive"));
        }
        let n = width * height;
        if depth.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: depth.len(),
            });
        }
        if valid.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: valid.len(),
            });
        }
        if let Some(index) = (0..n).find(|&i| valid[i] && !depth[i].is_finite()) {
            return Err(Error::NonFiniteDepth { index });
        }
        let depth = depth
            .into_iter()
            .zip(&valid)
            .map(|(d, &v)| if v { d } else { 0.0 })
            .collect();
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    /// Fully valid image from row-major depths.
    pub fn from_depths(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        let valid = vec![true; depth.len()];
        Self::new(width, height, depth, valid)
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel; `None`
    /// marks the pixel invalid.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Result<Self> {
        let mut depth = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                match f(r, c) {
                    Some(d) => {
                        depth.push(d);
                        valid.push(true);
                    }
                    None => {
                        depth.push(0.0);
                        valid.push(false);
                    }
                }
            }
        }
        Self::new(width, height, depth, valid)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_depths(width, height, vec![value; width * height])
    }

    pub fn all_invalid(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height], vec![false; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Depth at `(row, col)`, `None` when invalid or out of bounds.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        if row >= self.height || col >= self.width {
            return None;
        }
        self.at(self.index(row, col))
    }

    /// Depth at a linear index, `None` when invalid.
    pub fn at(&self, index: usize) -> Option<f64> {
        if self.valid[index] {
            Some(self.depth[index])
        } else {
            None
        }
    }

    /// Sets or clears a pixel. Non-finite depths are stored as invalid.
    pub fn set(&mut self, index: usize, value: Option<f64>) {
        match value {
            Some(d) if d.is_finite() => {
                self.depth[index] = d;
                self.valid[index] = true;
            }
            _ => {
                self.depth[index] = 0.0;
                self.valid[index] = false;
            }
        }
    }

    /// Raw depth buffer; invalid entries read as `0.0`.
    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn is_fully_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn ensure_same_dims(&self, other_dims: (usize, usize)) -> Result<()> {
        if self.dims() != other_dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other_dims,
            });
        }
        Ok(())
    }

    /// Min and max over valid pixels.
    pub fn depth_range(&self) -> Option<(f64, f64)> {
        self.depth
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .map(|(&d, _)| d)
            .fold(None, |acc, d| match acc {
                None => Some((d, d)),
                Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
            })
    }
}

/// Per-pixel binary grid, `true` = occluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl OcclusionMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                found: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_occluded(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, index: usize, occluded: bool) {
        self.bits[index] = occluded;
    }

    pub fn occluded_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn occluded_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.occluded_count() as f64 / self.bits.len() as f64
        }
    }

    /// Intersection over union of the occluded sets. Two empty masks have
    /// IoU 1.
    pub fn iou(&self, other: &OcclusionMask) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}

/// One point per valid pixel at `(col * spacing, row * spacing, depth)`,
/// in row-major pixel order.
pub fn range_image_to_cloud(img: &RangeImage, pixel_spacing: f64) -> Result<PointCloud> {
    if !(pixel_spacing > 0.0) || !pixel_spacing.is_finite() {
        return Err(Error::InvalidConfig("pixel spacing must be positive".into()));
    }
    if img.valid_count() == 0 {
        return Err(Error::EmptyInput("range image has no valid pixels"));
    }
    let mut points = Vec::with_capacity(img.valid_count());
    for r in 0..img.height() {
        for c in 0..img.width() {
            if let Some(d) = img.get(r, c) {
                points.push(Vec3::new(c as f64 * pixel_spacing, r as f64 * pixel_spacing, d));
            }
        }
    }
    Ok(PointCloud::new(points))
}

/// Result of splatting a cloud onto a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub image: RangeImage,
    /// Points that fell outside the grid (or were non-finite).
    pub dropped: usize,
}

/// Splats each point into its nearest pixel. Cells hit by several points
/// keep the largest depth; cells hit by none are invalid.
pub fn cloud_to_range_image(
    cloud: &PointCloud,
    width: usize,
    height: usize,
    pixel_spacing: f64,
) -> Result<Projection> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyInput("image dimensions must be positive"));
    }
    if !(pixel_spacing > 0.0) || !pixel_spacing.is_finite() {
        return Err(Error::InvalidConfig("pixel spacing must be positive".into()));
    }
    let mut depth = vec![f64::NEG_INFINITY; width * height];
    let mut dropped = 0;
    for p in &cloud.points {
        if !p.is_finite() {
            dropped += 1;
            continue;
        }
        let c = libm::round(p.x / pixel_spacing);
        let r = libm::round(p.y / pixel_spacing);
        if c < 0.0 || r < 0.0 || c >= width as f64 || r >= height as f64 {
            dropped += 1;
            continue;
        }
        let idx = r as usize * width + c as usize;
        if p.z > depth[idx] {
            depth[idx] = p.z;
        }
    }
    let valid: Vec<bool> = depth.iter().map(|d| d.is_finite()).collect();
    let image = RangeImage::new(width, height, depth, valid)?;
    Ok(Projection { image, dropped })
}

/// Fills invalid pixels from their valid 8-neighbours, growing inwards one
/// ring per pass until nothing changes or `max_passes` is reached. A pixel
/// is filled only when at least `min_neighbors` neighbours are valid at the
/// start of the pass; it takes their mean. Returns the number of filled
/// pixels.
pub fn fill_invalid(img: &mut RangeImage, min_neighbors: usize, max_passes: usize) -> usize {
    let (w, h) = img.dims();
    let mut filled = 0;
    for _ in 0..max_passes {
        let mut updates = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if img.is_valid(r * w + c) {
                    continue;
                }
                let (mut sum, mut n) = (0.0, 0usize);
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                            continue;
                        }
                        if let Some(d) = img.get(rr as usize, cc as usize) {
                            sum += d;
                            n += 1;
                        }
                    }
                }
                if n >= min_neighbors.max(1) {
                    updates.push((r * w + c, sum / n as f64));
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        filled += updates.len();
        for (idx, d) in updates {
            img.set(idx, Some(d));
        }
    }
    filled
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_to_cloud() {
        let img = RangeImage::from_depths(1, 1, vec![5.0]).unwrap();
        let cloud = range_image_to_cloud(&img, 1.0).unwrap();
        assert_eq!(cloud.points, vec![Vec3::new(0.0, 0.0, 5.0)]);
    }

    #[test]
    fn invalid_pixels_are_skipped() {
        let img = RangeImage::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![true, false, true, true]).unwrap();
        let cloud = range_image_to_cloud(&img, 1.0).unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.points[1], Vec3::new(0.0, 1.0, 3.0));
    }

    #[test]
    fn no_valid_pixels_is_an_error() {
        let img = RangeImage::all_invalid(3, 2).unwrap();
        assert_eq!(
            range_image_to_cloud(&img, 1.0),
            Err(Error::EmptyInput("range image has no valid pixels"))
        );
    }

    #[test]
    fn empty_cloud_projects_to_invalid_grid() {
        let p = cloud_to_range_image(&PointCloud::default(), 4, 3, 1.0).unwrap();
        assert_eq!(p.image.valid_count(), 0);
        assert_eq!(p.dropped, 0);
    }

    #[test]
    fn single_point_lands_in_origin_cell() {
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, 3.0)]);
        let p = cloud_to_range_image(&cloud, 3, 3, 1.0).unwrap();
        assert_eq!(p.image.get(0, 0), Some(3.0));
        assert_eq!(p.image.valid_count(), 1);
    }

    #[test]
    fn shared_cell_keeps_max_depth() {
        let cloud = PointCloud::new(vec![Vec3::new(1.1, 0.9, 2.0), Vec3::new(0.9, 1.2, 7.0)]);
        let p = cloud_to_range_image(&cloud, 3, 3, 1.0).unwrap();
        assert_eq!(p.image.get(1, 1), Some(7.0));
        assert_eq!(p.image.valid_count(), 1);
    }

    #[test]
    fn out_of_bounds_points_are_counted() {
        let cloud = PointCloud::new(vec![Vec3::new(-3.0, 0.0, 1.0), Vec3::new(10.0, 0.0, 1.0), Vec3::ZERO]);
        let p = cloud_to_range_image(&cloud, 2, 2, 1.0).unwrap();
        assert_eq!(p.dropped, 2);
    }

    #[test]
    fn grid_cloud_grid_round_trip() {
        let depth: Vec<f64> = (0..35).map(|i| (i as f64 * 0.37).sin() * 4.0).collect();
        let img = RangeImage::from_depths(7, 5, depth).unwrap();
        let cloud = range_image_to_cloud(&img, 0.25).unwrap();
        let back = cloud_to_range_image(&cloud, 7, 5, 0.25).unwrap();
        assert_eq!(back.dropped, 0);
        assert_eq!(back.image, img);
    }

    #[test]
    fn fill_closes_isolated_hole() {
        let mut img = RangeImage::filled(3, 3, 2.0).unwrap();
        img.set(4, None);
        assert_eq!(fill_invalid(&mut img, 3, 5), 1);
        assert_eq!(img.get(1, 1), Some(2.0));
    }

    #[test]
    fn mask_iou() {
        let a = OcclusionMask::new(2, 2, vec![true, true, false, false]).unwrap();
        let b = OcclusionMask::new(2, 2, vec![true, false, true, false]).unwrap();
        assert!((a.iou(&b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_depth_must_be_finite_only_when_valid() {
        assert!(RangeImage::new(1, 2, vec![f64::NAN, 1.0], vec![false, true]).is_ok());
        assert_eq!(
            RangeImage::new(1, 2, vec![f64::NAN, 1.0], vec![true, true]),
            Err(Error::NonFiniteDepth { index: 0 })
        );
    }
}
