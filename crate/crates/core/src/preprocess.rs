//! Weighted median smoothing of range images.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::image::RangeImage;
use crate::{Error, Result};

/// Window radius and integer weights. A weight `w` repeats the sample `w`
/// times in the median pool. Weights are row-major over the
/// `(2r+1) x (2r+1)` window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MedianFilterConfig {
    pub window_radius: usize,
    pub weights: Vec<u32>,
}

impl Default for MedianFilterConfig {
    fn default() -> Self {
        Self::uniform(1)
    }
}

impl MedianFilterConfig {
    pub fn uniform(radius: usize) -> Self {
        let side = 2 * radius + 1;
        Self {
            window_radius: radius,
            weights: vec![1; side * side],
        }
    }

    /// Only the centre sample counts: the filter becomes the identity.
    pub fn center_only(radius: usize) -> Self {
        let side = 2 * radius + 1;
        let mut weights = vec![0; side * side];
        weights[side * radius + radius] = 1;
        Self {
            window_radius: radius,
            weights,
        }
    }

    pub fn side(&self) -> usize {
        2 * self.window_radius + 1
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.side();
        if self.weights.len() != side * side {
            return Err(Error::InvalidConfig(alloc::format!(
                "median window of radius {} needs {} weights, got {}",
                self.window_radius,
                side * side,
                self.weights.len()
            )));
        }
        if self.weights.iter().all(|&w| w == 0) {
            return Err(Error::InvalidConfig("median weights are all zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    /// Valid pixels whose weighted pool was empty; copied through.
    pub passthrough_pixels: usize,
    pub filtered_pixels: usize,
}

/// Lower weighted median of `(value, weight)` samples: the element at
/// position `(W - 1) / 2` of the expanded, sorted multiset of total weight
/// `W`. `pool` is sorted in place.
pub fn weighted_lower_median(pool: &mut [(f64, u32)]) -> Option<f64> {
    let total: u64 = pool.iter().map(|&(_, w)| w as u64).sum();
    if total == 0 {
        return None;
    }
    pool.sort_by(|a, b| a.0.total_cmp(&b.0));
    let target = (total - 1) / 2;
    let mut cum = 0u64;
    for &(v, w) in pool.iter() {
        cum += w as u64;
        if cum > target {
            return Some(v);
        }
    }
    None
}

/// Replaces every valid pixel by the weighted median of the valid pixels
/// in its window. Windows are truncated at the image border and validity
/// flags are left as they were.
pub fn weighted_median_filter(img: &RangeImage, cfg: &MedianFilterConfig) -> Result<(RangeImage, FilterReport)> {
    cfg.validate()?;
    let (w, h) = img.dims();
    let r = cfg.window_radius as i64;
    let side = cfg.side();
    let mut out = img.clone();
    let mut report = FilterReport::default();
    let mut pool = Vec::with_capacity(side * side);

    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            if !img.is_valid(idx) {
                continue;
            }
            pool.clear();
            for dr in -r..=r {
                for dc in -r..=r {
                    let weight = cfg.weights[((dr + r) as usize) * side + (dc + r) as usize];
                    if weight == 0 {
                        continue;
                    }
                    let (rr, cc) = (row as i64 + dr, col as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    if let Some(d) = img.get(rr as usize, cc as usize) {
                        pool.push((d, weight));
                    }
                }
            }
            match weighted_lower_median(&mut pool) {
                Some(m) => {
                    out.set(idx, Some(m));
                    report.filtered_pixels += 1;
                }
                None => report.passthrough_pixels += 1,
            }
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    /// Expands weights into repeated samples and sorts: the independent
    /// definition of the weighted lower median.
    fn brute_force_median(samples: &[(f64, u32)]) -> f64 {
        let mut expanded: Vec<f64> = samples
            .iter()
            .flat_map(|&(v, w)| core::iter::repeat_n(v, w as usize))
            .collect();
        expanded.sort_by(f64::total_cmp);
        expanded[(expanded.len() - 1) / 2]
    }

    #[test]
    fn lower_median_of_even_pool() {
        let mut pool = vec![(4.0, 1), (1.0, 1), (3.0, 1), (2.0, 1)];
        assert_eq!(weighted_lower_median(&mut pool), Some(2.0));
    }

    #[test]
    fn weighted_median_matches_expansion() {
        let mut rng = SeededRng::new(9);
        for _ in 0..200 {
            let n = 1 + rng.below(9);
            let samples: Vec<(f64, u32)> = (0..n).map(|_| (rng.range(-5.0, 5.0), rng.below(4) as u32)).collect();
            if samples.iter().all(|s| s.1 == 0) {
                continue;
            }
            let mut pool = samples.clone();
            assert_eq!(weighted_lower_median(&mut pool), Some(brute_force_median(&samples)));
        }
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = RangeImage::filled(6, 4, 4.0).unwrap();
        for radius in 1..3 {
            let (out, _) = weighted_median_filter(&img, &MedianFilterConfig::uniform(radius)).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn center_spike_removed() {
        let mut depth = vec![0.0; 25];
        depth[12] = 100.0;
        let img = RangeImage::from_depths(5, 5, depth).unwrap();
        let (out, report) = weighted_median_filter(&img, &MedianFilterConfig::uniform(1)).unwrap();
        assert_eq!(out.get(2, 2), Some(0.0));
        assert_eq!(report.filtered_pixels, 25);
        assert!(out.depths().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn center_only_weight_is_identity() {
        let mut rng = SeededRng::new(5);
        let depth: Vec<f64> = (0..48).map(|_| rng.range(0.0, 10.0)).collect();
        let img = RangeImage::from_depths(8, 6, depth).unwrap();
        let (out, _) = weighted_median_filter(&img, &MedianFilterConfig::center_only(2)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn invalid_neighbours_excluded_and_flags_kept() {
        // centre surrounded by invalid pixels except one neighbour
        let mut valid = vec![false; 9];
        valid[4] = true;
        valid[5] = true;
        let depth = vec![0.0, 0.0, 0.0, 0.0, 1.0, 9.0, 0.0, 0.0, 0.0];
        let img = RangeImage::new(3, 3, depth, valid.clone()).unwrap();
        let (out, _) = weighted_median_filter(&img, &MedianFilterConfig::uniform(1)).unwrap();
        assert_eq!(out.validity(), &valid[..]);
        assert_eq!(out.get(1, 1), Some(1.0));
    }

    #[test]
    fn empty_pool_passes_through() {
        // weight only on the right neighbour; the last column has none
        let mut weights = vec![0; 9];
        weights[5] = 1;
        let cfg = MedianFilterConfig {
            window_radius: 1,
            weights,
        };
        let img = RangeImage::from_depths(2, 1, vec![1.0, 2.0]).unwrap();
        let (out, report) = weighted_median_filter(&img, &cfg).unwrap();
        assert_eq!(out.get(0, 0), Some(2.0));
        assert_eq!(out.get(0, 1), Some(2.0));
        assert_eq!(report.passthrough_pixels, 1);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(MedianFilterConfig {
            window_radius: 1,
            weights: vec![1; 4]
        }
        .validate()
        .is_err());
        assert!(MedianFilterConfig {
            window_radius: 1,
            weights: vec![0; 9]
        }
        .validate()
        .is_err());
    }

    proptest::proptest! {
        #[test]
        fn output_bounded_by_window(seed in 0u64..5000, radius in 1usize..3) {
            let mut rng = SeededRng::new(seed);
            let (w, h) = (7, 6);
            let depth: Vec<f64> = (0..w * h).map(|_| rng.range(-3.0, 3.0)).collect();
            let valid: Vec<bool> = (0..w * h).map(|_| rng.uniform() > 0.2).collect();
            let img = RangeImage::new(w, h, depth, valid).unwrap();
            let cfg = MedianFilterConfig::uniform(radius);
            let (out, _) = weighted_median_filter(&img, &cfg).unwrap();
            let r = radius as i64;
            for row in 0..h {
                for col in 0..w {
                    let Some(v) = out.get(row, col) else { continue };
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for dr in -r..=r {
                        for dc in -r..=r {
                            let (rr, cc) = (row as i64 + dr, col as i64 + dc);
                            if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 { continue; }
                            if let Some(d) = img.get(rr as usize, cc as usize) {
                                lo = lo.min(d);
                                hi = hi.max(d);
                            }
                        }
                    }
                    proptest::prop_assert!(v >= lo && v <= hi);
                }
            }
        }
    }
}
