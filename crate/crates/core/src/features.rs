//! Surface normals of range images and the sampled feature vector.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::image::RangeImage;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    /// Unit normals, row-major, `z >= 0`.
    pub normals: Vec<Vec3>,
    /// `false` where the source pixel was invalid; those normals are
    /// `(0, 0, 1)`.
    pub valid: Vec<bool>,
}

impl NormalMap {
    pub fn get(&self, row: usize, col: usize) -> Vec3 {
        self.normals[row * self.width + col]
    }
}

/// Derivative of depth along one grid axis at `i`, given the depths at the
/// previous and next sample along that axis. Central difference where both
/// neighbours are valid, one-sided otherwise, zero when isolated.
fn derivative(prev: Option<f64>, here: f64, next: Option<f64>, spacing: f64) -> f64 {
    match (prev, next) {
        (Some(a), Some(b)) => (b - a) / (2.0 * spacing),
        (None, Some(b)) => (b - here) / spacing,
        (Some(a), None) => (here - a) / spacing,
        (None, None) => 0.0,
    }
}

/// Normal at each pixel: the normalized cross product of the tangents
/// `(1, 0, dz/dx)` and `(0, 1, dz/dy)`, i.e. `(-dz/dx, -dz/dy, 1)` scaled
/// to unit length.
pub fn surface_normals(img: &RangeImage, pixel_spacing: f64) -> Result<NormalMap> {
    if !(pixel_spacing > 0.0) || !pixel_spacing.is_finite() {
        return Err(Error::InvalidConfig("pixel spacing must be positive".into()));
    }
    let (w, h) = img.dims();
    let mut normals = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let Some(z) = img.get(r, c) else {
                normals.push(Vec3::new(0.0, 0.0, 1.0));
                valid.push(false);
                continue;
            };
            let left = c.checked_sub(1).and_then(|cc| img.get(r, cc));
            let up = r.checked_sub(1).and_then(|rr| img.get(rr, c));
            let dzdx = derivative(left, z, img.get(r, c + 1), pixel_spacing);
            let dzdy = derivative(up, z, img.get(r + 1, c), pixel_spacing);
            let tx = Vec3::new(1.0, 0.0, dzdx);
            let ty = Vec3::new(0.0, 1.0, dzdy);
            let mut n = tx.cross(ty);
            let len = n.norm();
            if !(len > 0.0) || !len.is_finite() {
                n = Vec3::new(0.0, 0.0, 1.0);
            } else {
                n = n * (1.0 / len);
                if n.z < 0.0 {
                    n = -n;
                }
            }
            normals.push(n);
            valid.push(true);
        }
    }
    Ok(NormalMap {
        width: w,
        height: h,
        normals,
        valid,
    })
}

/// Number of samples along an axis of length `len` with stride `factor`.
pub fn sample_count(len: usize, factor: usize) -> usize {
    len.div_ceil(factor)
}

/// Concatenated `(nx, ny, nz)` at rows and columns `0, f, 2f, ...`,
/// row-major. Length is `3 * ceil(w / f) * ceil(h / f)`.
pub fn feature_vector(nm: &NormalMap, downsample_factor: usize) -> Result<Vec<f64>> {
    if downsample_factor == 0 {
        return Err(Error::InvalidConfig("downsample factor must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(
        3 * sample_count(nm.width, downsample_factor) * sample_count(nm.height, downsample_factor),
    );
    for r in (0..nm.height).step_by(downsample_factor) {
        for c in (0..nm.width).step_by(downsample_factor) {
            out.extend(nm.get(r, c).to_array());
        }
    }
    Ok(out)
}
