//! Occlusion detection: difference map against the mean face, column-wise
//! max thresholding and boundary extraction of the clear region.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::image::{OcclusionMask, RangeImage};
use crate::{Error, Result};

/// `|candidate - mean|` at pixels valid in both images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DifferenceMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.at(row * self.width + col)
    }

    pub fn at(&self, index: usize) -> Option<f64> {
        self.valid[index].then(|| self.values[index])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// As a range image (for export); invalid pixels stay invalid.
    pub fn to_image(&self) -> RangeImage {
        RangeImage::new(self.width, self.height, self.values.clone(), self.valid.clone())
            .expect("difference map dimensions are consistent")
    }
}

pub fn difference_map(candidate: &RangeImage, mean: &RangeImage) -> Result<DifferenceMap> {
    mean.ensure_same_dims(candidate.dims())?;
    let n = candidate.len();
    let mut values = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        if let (Some(y), Some(m)) = (candidate.at(i), mean.at(i)) {
            values[i] = libm::fabs(y - m);
            valid[i] = true;
        }
    }
    Ok(DifferenceMap {
        width: candidate.width(),
        height: candidate.height(),
        values,
        valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Compare each pixel against its own column maximum.
    #[default]
    PerColumn,
    /// Compare each pixel against one quantile of all valid values.
    GlobalQuantile,
}

/// Column maxima of a difference map plus the thresholding mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProfile {
    /// Max over valid rows of each column; `0.0` for columns with no valid
    /// pixel.
    pub per_column_max: Vec<f64>,
    pub mode: ThresholdMode,
    /// Used by [`ThresholdMode::GlobalQuantile`], in `(0, 1]`.
    pub quantile: f64,
}

impl ThresholdProfile {
    pub fn compute(diff: &DifferenceMap, mode: ThresholdMode, quantile: f64) -> Self {
        let mut per_column_max = vec![0.0f64; diff.width];
        for r in 0..diff.height {
            for (c, col_max) in per_column_max.iter_mut().enumerate() {
                if let Some(v) = diff.get(r, c) {
                    *col_max = col_max.max(v);
                }
            }
        }
        Self {
            per_column_max,
            mode,
            quantile,
        }
    }
}

/// Nearest-rank quantile: the value at sorted position `ceil(q n) - 1`.
pub fn quantile(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let rank = libm::ceil(q * values.len() as f64) as usize;
    Some(values[rank.clamp(1, values.len()) - 1])
}

/// Marks pixels whose difference reaches `tolerance_fraction` of their
/// column maximum (per-column mode) or the configured quantile (global
/// mode). With `tolerance_fraction = 1` only column maxima are marked.
/// Columns whose maximum is zero never produce marks, and invalid pixels
/// are never marked.
pub fn find_threshold_mask(
    diff: &DifferenceMap,
    profile: &ThresholdProfile,
    tolerance_fraction: f64,
) -> Result<OcclusionMask> {
    if !(tolerance_fraction > 0.0 && tolerance_fraction <= 1.0) {
        return Err(Error::InvalidConfig("tolerance_fraction must lie in (0, 1]".into()));
    }
    if profile.per_column_max.len() != diff.width {
        return Err(Error::LengthMismatch {
            expected: diff.width,
            found: profile.per_column_max.len(),
        });
    }
    if diff.valid_count() == 0 {
        return Err(Error::EmptyInput("difference map has no valid pixels"));
    }
    let (w, h) = diff.dims();
    let mut mask = OcclusionMask::empty(w, h);
    match profile.mode {
        ThresholdMode::PerColumn => {
            for r in 0..h {
                for c in 0..w {
                    let col_max = profile.per_column_max[c];
                    if col_max <= 0.0 {
                        continue;
                    }
                    if let Some(v) = diff.get(r, c) {
                        if v >= tolerance_fraction * col_max {
                            mask.set(r * w + c, true);
                        }
                    }
                }
            }
        }
        ThresholdMode::GlobalQuantile => {
            if !(profile.quantile > 0.0 && profile.quantile <= 1.0) {
                return Err(Error::InvalidConfig("quantile must lie in (0, 1]".into()));
            }
            let mut vals: Vec<f64> = (0..w * h).filter_map(|i| diff.at(i)).collect();
            let t = quantile(&mut vals, profile.quantile).expect("non-empty");
            if t > 0.0 {
                for i in 0..w * h {
                    if diff.at(i).is_some_and(|v| v >= t) {
                        mask.set(i, true);
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// Connected clear regions and their boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    /// Component label per pixel (4-connectivity over non-occluded
    /// pixels), `None` for occluded pixels. Labels follow row-major order
    /// of each component's first pixel.
    pub labels: Vec<Option<u32>>,
    pub component_count: usize,
    /// Linear indices of boundary pixels, ascending.
    pub boundary: Vec<usize>,
    /// Boundary indices grouped by component label.
    pub component_boundaries: Vec<Vec<usize>>,
    /// Difference value at each boundary pixel (`None` where invalid).
    pub boundary_values: Vec<Option<f64>>,
}

const NEIGHBORS_4: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Labels the non-occluded region and keeps its boundary pixels: clear
/// pixels with at least one occluded or out-of-bounds 4-neighbour.
pub fn find_edges(mask: &OcclusionMask, diff: &DifferenceMap) -> Result<EdgeReport> {
    if mask.dims() != diff.dims() {
        return Err(Error::DimensionMismatch {
            expected: diff.dims(),
            found: mask.dims(),
        });
    }
    let (w, h) = mask.dims();
    let mut labels: Vec<Option<u32>> = vec![None; w * h];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.is_occluded(start) || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(count);
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            for (dr, dc) in NEIGHBORS_4 {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                    continue;
                }
                let j = rr as usize * w + cc as usize;
                if !mask.is_occluded(j) && labels[j].is_none() {
                    labels[j] = Some(count);
                    stack.push(j);
                }
            }
        }
        count += 1;
    }

    let mut boundary = Vec::new();
    let mut component_boundaries = vec![Vec::new(); count as usize];
    for i in 0..w * h {
        let Some(label) = labels[i] else { continue };
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        let on_edge = NEIGHBORS_4.iter().any(|&(dr, dc)| {
            let (rr, cc) = (r + dr, c + dc);
            rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 || mask.is_occluded(rr as usize * w + cc as usize)
        });
        if on_edge {
            boundary.push(i);
            component_boundaries[label as usize].push(i);
        }
    }
    let boundary_values = boundary.iter().map(|&i| diff.at(i)).collect();
    Ok(EdgeReport {
        labels,
        component_count: count as usize,
        boundary,
        component_boundaries,
        boundary_values,
    })
}

/// Invalidates every occluded pixel; everything else is copied.
pub fn apply_mask(img: &RangeImage, mask: &OcclusionMask) -> Result<RangeImage> {
    img.ensure_same_dims(mask.dims())?;
    let mut out = img.clone();
    for i in 0..img.len() {
        if mask.is_occluded(i) {
            out.set(i, None);
        }
    }
    Ok(out)
}

/// Detection settings with their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub mode: ThresholdMode,
    pub tolerance_fraction: f64,
    pub quantile: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::PerColumn,
            tolerance_fraction: 0.85,
            quantile: 0.9,
        }
    }
}

/// Difference map, threshold mask and edges in one call.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub diff: DifferenceMap,
    pub profile: ThresholdProfile,
    pub mask: OcclusionMask,
    pub edges: EdgeReport,
}

pub fn detect(candidate: &RangeImage, mean: &RangeImage, cfg: &DetectionConfig) -> Result<Detection> {
    let diff = difference_map(candidate, mean)?;
    let profile = ThresholdProfile::compute(&diff, cfg.mode, cfg.quantile);
    let mask = find_threshold_mask(&diff, &profile, cfg.tolerance_fraction)?;
    let edges = find_edges(&mask, &diff)?;
    Ok(Detection {
        diff,
        profile,
        mask,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn diff_from(width: usize, height: usize, values: Vec<f64>) -> DifferenceMap {
        let zero = RangeImage::filled(width, height, 0.0).unwrap();
        let img = RangeImage::from_depths(width, height, values).unwrap();
        difference_map(&img, &zero).unwrap()
    }

    #[test]
    fn identical_images_give_zero_map() {
        let img = RangeImage::from_depths(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let d = difference_map(&img, &img).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
        assert_eq!(d.valid_count(), 6);
    }

    #[test]
    fn absolute_value_and_symmetry() {
        let a = RangeImage::from_depths(2, 1, vec![1.0, 3.0]).unwrap();
        let b = RangeImage::from_depths(2, 1, vec![8.0, 3.0]).unwrap();
        let ab = difference_map(&a, &b).unwrap();
        assert_eq!(ab.get(0, 0), Some(7.0));
        assert_eq!(ab, difference_map(&b, &a).unwrap());
    }

    #[test]
    fn validity_is_intersection() {
        let a = RangeImage::new(2, 1, vec![1.0, 1.0], vec![true, false]).unwrap();
        let b = RangeImage::new(2, 1, vec![1.0, 1.0], vec![false, true]).unwrap();
        assert_eq!(difference_map(&a, &b).unwrap().valid_count(), 0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = RangeImage::filled(2, 2, 0.0).unwrap();
        let b = RangeImage::filled(3, 2, 0.0).unwrap();
        assert!(matches!(difference_map(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_map_marks_nothing() {
        let d = diff_from(4, 4, vec![0.0; 16]);
        let p = ThresholdProfile::compute(&d, ThresholdMode::PerColumn, 0.9);
        assert_eq!(find_threshold_mask(&d, &p, 0.85).unwrap().occluded_count(), 0);
        let p = ThresholdProfile::compute(&d, ThresholdMode::GlobalQuantile, 0.9);
        assert_eq!(find_threshold_mask(&d, &p, 0.85).unwrap().occluded_count(), 0);
    }

    #[test]
    fn single_column_rule() {
        let d = diff_from(1, 3, vec![0.0, 0.0, 10.0]);
        let p = ThresholdProfile::compute(&d, ThresholdMode::PerColumn, 1.0);
        assert_eq!(p.per_column_max, vec![10.0]);
        let m = find_threshold_mask(&d, &p, 0.9).unwrap();
        assert_eq!(m.bits(), &[false, false, true]);
    }

    #[test]
    fn literal_rule_marks_only_column_maxima() {
        let d = diff_from(3, 3, vec![1.0, 5.0, 0.0, 3.0, 5.0, 0.0, 2.0, 4.0, 0.0]);
        let p = ThresholdProfile::compute(&d, ThresholdMode::PerColumn, 1.0);
        let m = find_threshold_mask(&d, &p, 1.0).unwrap();
        assert_eq!(m.bits(), &[false, true, false, true, true, false, false, false, false]);
    }

    #[test]
    fn global_quantile_threshold() {
        let d = diff_from(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let p = ThresholdProfile::compute(&d, ThresholdMode::GlobalQuantile, 0.6);
        let m = find_threshold_mask(&d, &p, 1.0).unwrap();
        assert_eq!(m.bits(), &[false, false, true, true, true]);
    }

    #[test]
    fn all_invalid_map_is_an_error() {
        let a = RangeImage::all_invalid(2, 2).unwrap();
        let d = difference_map(&a, &a).unwrap();
        let p = ThresholdProfile::compute(&d, ThresholdMode::PerColumn, 1.0);
        assert_eq!(
            find_threshold_mask(&d, &p, 0.5),
            Err(Error::EmptyInput("difference map has no valid pixels"))
        );
    }

    #[test]
    fn clear_mask_has_border_boundary() {
        let d = diff_from(4, 3, vec![0.0; 12]);
        let e = find_edges(&OcclusionMask::empty(4, 3), &d).unwrap();
        assert_eq!(e.component_count, 1);
        assert_eq!(e.boundary, vec![0, 1, 2, 3, 4, 7, 8, 9, 10, 11]);
    }

    #[test]
    fn fully_occluded_has_no_components() {
        let d = diff_from(3, 3, vec![1.0; 9]);
        let e = find_edges(&OcclusionMask::full(3, 3), &d).unwrap();
        assert_eq!(e.component_count, 0);
        assert!(e.boundary.is_empty());
    }

    #[test]
    fn centred_square_boundary_matches_neighbour_scan() {
        let (w, h) = (9, 9);
        let mut mask = OcclusionMask::empty(w, h);
        for r in 3..6 {
            for c in 3..6 {
                mask.set(r * w + c, true);
            }
        }
        let d = diff_from(w, h, vec![1.0; w * h]);
        let e = find_edges(&mask, &d).unwrap();
        // brute force: clear pixels on the outer border or 4-adjacent to the square
        let mut expected = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if mask.get(r, c) {
                    continue;
                }
                let border = r == 0 || c == 0 || r == h - 1 || c == w - 1;
                let touches = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)]
                    .iter()
                    .any(|&(rr, cc)| rr < h && cc < w && mask.get(rr, cc));
                if border || touches {
                    expected.push(r * w + c);
                }
            }
        }
        assert_eq!(e.boundary, expected);
        assert_eq!(e.component_count, 1);
        assert_eq!(e.boundary.len(), 32 + 12);
    }

    #[test]
    fn separated_regions_are_distinct_components() {
        // a full occluded column splits the grid
        let (w, h) = (5, 3);
        let mut mask = OcclusionMask::empty(w, h);
        for r in 0..h {
            mask.set(r * w + 2, true);
        }
        let d = diff_from(w, h, vec![0.0; w * h]);
        let e = find_edges(&mask, &d).unwrap();
        assert_eq!(e.component_count, 2);
        assert_eq!(e.labels[0], Some(0));
        assert_eq!(e.labels[4], Some(1));
        assert_eq!(e.component_boundaries.iter().map(Vec::len).sum::<usize>(), e.boundary.len());
    }

    #[test]
    fn apply_mask_counts() {
        let img = RangeImage::new(3, 1, vec![1.0, 2.0, 3.0], vec![true, false, true]).unwrap();
        let mask = OcclusionMask::new(3, 1, vec![true, true, false]).unwrap();
        let out = apply_mask(&img, &mask).unwrap();
        assert_eq!(out.valid_count(), 1);
        assert_eq!(out.get(0, 2), Some(3.0));
        assert_eq!(apply_mask(&img, &OcclusionMask::empty(3, 1)).unwrap(), img);
        assert_eq!(apply_mask(&img, &OcclusionMask::full(3, 1)).unwrap().valid_count(), 0);
    }

    proptest::proptest! {
        #[test]
        fn mask_monotone_in_tolerance(seed in 0u64..5000, lo in 0.05f64..1.0, hi in 0.05f64..1.0) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let mut rng = SeededRng::new(seed);
            let (w, h) = (6, 5);
            let y: Vec<f64> = (0..w * h).map(|_| rng.range(0.0, 2.0)).collect();
            let valid: Vec<bool> = (0..w * h).map(|_| rng.uniform() > 0.15).collect();
            let cand = RangeImage::new(w, h, y.clone(), valid.clone()).unwrap();
            let mean = RangeImage::from_depths(w, h, (0..w * h).map(|_| rng.range(0.0, 2.0)).collect()).unwrap();
            let d = difference_map(&cand, &mean).unwrap();
            proptest::prop_assume!(d.valid_count() > 0);
            for mode in [ThresholdMode::PerColumn, ThresholdMode::GlobalQuantile] {
                let p = ThresholdProfile::compute(&d, mode, 0.8);
                let strict = find_threshold_mask(&d, &p, hi).unwrap();
                let loose = find_threshold_mask(&d, &p, lo).unwrap();
                for i in 0..w * h {
                    proptest::prop_assert!(!strict.is_occluded(i) || loose.is_occluded(i));
                    proptest::prop_assert!(!loose.is_occluded(i) || valid[i]);
                }
            }
            // shifting both images by a constant leaves the mask unchanged
            let shift = rng.range(-5.0, 5.0);
            let cand2 = RangeImage::new(w, h, y.iter().map(|v| v + shift).collect(), valid).unwrap();
            let mean2 = RangeImage::from_depths(w, h, mean.depths().iter().map(|v| v + shift).collect()).unwrap();
            let d2 = difference_map(&cand2, &mean2).unwrap();
            let p1 = ThresholdProfile::compute(&d, ThresholdMode::PerColumn, 0.8);
            let p2 = ThresholdProfile::compute(&d2, ThresholdMode::PerColumn, 0.8);
            let m1 = find_threshold_mask(&d, &p1, 0.85).unwrap();
            let m2 = find_threshold_mask(&d2, &p2, 0.85).unwrap();
            // floating rounding of the shift can move values by an ulp; compare away from the threshold
            for i in 0..w * h {
                if let (Some(a), Some(b)) = (d.at(i), d2.at(i)) {
                    let t = 0.85 * p1.per_column_max[i % w];
                    if (a - t).abs() > 1e-9 && (b - t).abs() > 1e-9 {
                        proptest::prop_assert_eq!(m1.is_occluded(i), m2.is_occluded(i));
                    }
                }
            }
        }

        #[test]
        fn boundary_pixels_touch_occlusion_or_border(seed in 0u64..5000) {
            let mut rng = SeededRng::new(seed);
            let (w, h) = (8, 7);
            let bits: Vec<bool> = (0..w * h).map(|_| rng.uniform() < 0.3).collect();
            let mask = OcclusionMask::new(w, h, bits).unwrap();
            let d = diff_from(w, h, vec![0.5; w * h]);
            let e = find_edges(&mask, &d).unwrap();
            for &i in &e.boundary {
                proptest::prop_assert!(!mask.is_occluded(i));
                let (r, c) = (i / w, i % w);
                let border = r == 0 || c == 0 || r == h - 1 || c == w - 1;
                let touches = (r > 0 && mask.get(r - 1, c)) || (r + 1 < h && mask.get(r + 1, c))
                    || (c > 0 && mask.get(r, c - 1)) || (c + 1 < w && mask.get(r, c + 1));
                proptest::prop_assert!(border || touches);
            }
        }
    }
}
