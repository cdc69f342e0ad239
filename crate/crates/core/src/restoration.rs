//! Gappy PCA restoration of occluded faces.
//!
//! A basis (mean face plus leading principal directions) is trained on
//! complete, registered faces. An incomplete face is fitted by least squares
//! over its observed pixels only, and the fit is evaluated everywhere to
//! fill the holes.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::image::{OcclusionMask, RangeImage};
use crate::linalg::{least_squares, symmetric_eigen};
use crate::occlusion::apply_mask;
use crate::{Error, Result};

/// Orthonormality tolerance checked on loaded or trained bases.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub width: usize,
    pub height: usize,
    /// Pixelwise mean face, row-major.
    pub mean: Vec<f64>,
    /// Unit principal directions, by non-increasing eigenvalue.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalues matching `eigenvectors`.
    pub eigenvalues: Vec<f64>,
    /// Number of faces the basis was trained on.
    pub training_samples: usize,
}

/// How many principal directions to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentCount {
    Fixed(usize),
    /// Smallest count whose eigenvalues reach this fraction of the total.
    EnergyFraction(f64),
}

impl Default for ComponentCount {
    fn default() -> Self {
        ComponentCount::EnergyFraction(0.95)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = libm::sqrt(dot(v, v));
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Removes the components of `v` along each of `basis` (twice, for
/// stability).
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let d = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
    }
}

/// Flips `v` so its first entry that is not negligible is positive.
fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(libm::fabs(*x)));
    if let Some(first) = v.iter().find(|x| libm::fabs(**x) > 1e-8 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

impl PcaBasis {
    pub fn components(&self) -> usize {
        self.eigenvectors.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Checks lengths, ordering and orthonormality.
    pub fn validate(&self) -> Result<()> {
        let p = self.pixel_count();
        if p == 0 {
            return Err(Error::EmptyInput("basis has no pixels"));
        }
        if self.mean.len() != p {
            return Err(Error::LengthMismatch {
                expected: p,
                found: self.mean.len(),
            });
        }
        if self.eigenvalues.len() != self.eigenvectors.len() {
            return Err(Error::LengthMismatch {
                expected: self.eigenvectors.len(),
                found: self.eigenvalues.len(),
            });
        }
        if self.eigenvectors.is_empty() {
            return Err(Error::InvalidConfig("basis has no components".into()));
        }
        if self.training_samples < 2 || self.components() > self.training_samples - 1 {
            return Err(Error::InvalidConfig(
                "component count exceeds training samples minus one".into(),
            ));
        }
        if let Some(v) = self.eigenvectors.iter().find(|v| v.len() != p) {
            return Err(Error::LengthMismatch {
                expected: p,
                found: v.len(),
            });
        }
        if self.eigenvalues.windows(2).any(|w| w[1] > w[0]) || self.eigenvalues.iter().any(|&l| !(l >= 0.0)) {
            return Err(Error::InvalidConfig("eigenvalues must be non-negative and non-increasing".into()));
        }
        for (i, a) in self.eigenvectors.iter().enumerate() {
            for (j, b) in self.eigenvectors.iter().enumerate().skip(i) {
                let expect = if i == j { 1.0 } else { 0.0 };
                if libm::fabs(dot(a, b) - expect) > ORTHONORMAL_TOLERANCE {
                    return Err(Error::InvalidConfig("eigenvectors are not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// Keeps only the first `m` components.
    pub fn truncated(&self, m: usize) -> Result<PcaBasis> {
        if m == 0 || m > self.components() {
            return Err(Error::InvalidConfig(alloc::format!(
                "cannot keep {m} of {} components",
                self.components()
            )));
        }
        let mut b = self.clone();
        b.eigenvectors.truncate(m);
        b.eigenvalues.truncate(m);
        Ok(b)
    }

    pub fn mean_image(&self) -> RangeImage {
        RangeImage::from_depths(self.width, self.height, self.mean.clone()).expect("basis dimensions are consistent")
    }

    fn check_image(&self, img: &RangeImage) -> Result<()> {
        if img.dims() != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                found: img.dims(),
            });
        }
        Ok(())
    }

    /// Plain projection coefficients `<x - mean, v_i>` of a complete face.
    pub fn project(&self, img: &RangeImage) -> Result<Vec<f64>> {
        self.check_image(img)?;
        if !img.is_fully_valid() {
            return Err(Error::InvalidConfig("projection needs a fully valid image".into()));
        }
        let centered: Vec<f64> = img.depths().iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(self.eigenvectors.iter().map(|v| dot(&centered, v)).collect())
    }
}

/// Trains the basis on complete faces of identical size.
pub fn train_pca(faces: &[RangeImage], components: ComponentCount) -> Result<PcaBasis> {
    let n = faces.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { required: 2, found: n });
    }
    let (width, height) = faces[0].dims();
    for f in faces {
        faces[0].ensure_same_dims(f.dims())?;
        if !f.is_fully_valid() {
            return Err(Error::InvalidConfig("training faces must be fully valid".into()));
        }
    }
    let p = width * height;
    let mut mean = vec![0.0; p];
    for f in faces {
        mean.iter_mut().zip(f.depths()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = faces
        .iter()
        .map(|f| f.depths().iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    // eigenvectors of X X^T lift to those of X^T X
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let g = dot(&centered[i], &centered[j]);
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let eig = symmetric_eigen(&gram, n);
    let max_rank = n - 1;
    let top = eig.values[0].max(0.0);
    let mut eigenvectors: Vec<Vec<f64>> = Vec::with_capacity(max_rank);
    let mut eigenvalues = Vec::with_capacity(max_rank);
    for k in 0..max_rank {
        let lambda = eig.values[k].max(0.0);
        let mut v = vec![0.0; p];
        if lambda > 1e-12 * top && lambda > 0.0 {
            for (row, &u) in centered.iter().zip(&eig.vectors[k]) {
                v.iter_mut().zip(row).for_each(|(a, x)| *a += u * x);
            }
            orthogonalize(&mut v, &eigenvectors);
        }
        if normalize(&mut v) <= 1e-300 || lambda <= 1e-12 * top {
            // null direction: complete the orthonormal set from unit vectors
            v = complete_direction(&eigenvectors, p);
        }
        fix_sign(&mut v);
        eigenvectors.push(v);
        eigenvalues.push(lambda / (n - 1) as f64);
    }

    let m = match components {
        ComponentCount::Fixed(m) => {
            if m == 0 || m > max_rank {
                return Err(Error::InvalidConfig(alloc::format!(
                    "component count {m} outside 1..={max_rank}"
                )));
            }
            m
        }
        ComponentCount::EnergyFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig("energy fraction must lie in (0, 1]".into()));
            }
            energy_components(&eigenvalues, f)
        }
    };
    eigenvectors.truncate(m);
    eigenvalues.truncate(m);
    Ok(PcaBasis {
        width,
        height,
        mean,
        eigenvectors,
        eigenvalues,
        training_samples: n,
    })
}

/// Smallest `m >= 1` with `sum(eigenvalues[..m]) >= fraction * total`.
pub fn energy_components(eigenvalues: &[f64], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc >= fraction * total * (1.0 - 1e-12) {
            return i + 1;
        }
    }
    eigenvalues.len().max(1)
}

fn complete_direction(existing: &[Vec<f64>], p: usize) -> Vec<f64> {
    for j in 0..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        orthogonalize(&mut e, existing);
        if normalize(&mut e) > 1e-6 {
            return e;
        }
    }
    unreachable!("fewer directions than pixels")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GappyCoefficients {
    pub beta: Vec<f64>,
    /// Pixels used in the fit.
    pub observed_count: usize,
    /// `sqrt` of the minimized squared error over observed pixels.
    pub residual_on_observed: f64,
}

/// Least-squares coefficients using only the valid pixels of `incomplete`.
pub fn gappy_fit(incomplete: &RangeImage, basis: &PcaBasis) -> Result<GappyCoefficients> {
    basis.check_image(incomplete)?;
    let m = basis.components();
    let observed: Vec<usize> = (0..incomplete.len()).filter(|&i| incomplete.is_valid(i)).collect();
    if observed.len() < m {
        return Err(Error::Underdetermined {
            observed: observed.len(),
            required: m,
        });
    }
    let mut a = Vec::with_capacity(observed.len() * m);
    let mut b = Vec::with_capacity(observed.len());
    for &i in &observed {
        a.extend(basis.eigenvectors.iter().map(|v| v[i]));
        b.push(incomplete.depths()[i] - basis.mean[i]);
    }
    let ls = least_squares(&a, observed.len(), m, &b)?;
    Ok(GappyCoefficients {
        beta: ls.solution,
        observed_count: observed.len(),
        residual_on_observed: ls.residual_norm,
    })
}

/// Evaluates `mean + sum beta_i v_i` at every pixel.
pub fn reconstruct(basis: &PcaBasis, coeffs: &GappyCoefficients) -> Result<RangeImage> {
    if coeffs.beta.len() != basis.components() {
        return Err(Error::LengthMismatch {
            expected: basis.components(),
            found: coeffs.beta.len(),
        });
    }
    let mut y = basis.mean.clone();
    for (b, v) in coeffs.beta.iter().zip(&basis.eigenvectors) {
        y.iter_mut().zip(v).for_each(|(a, x)| *a += b * x);
    }
    RangeImage::from_depths(basis.width, basis.height, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restoration {
    /// Observed pixels unchanged, holes filled from the reconstruction.
    pub image: RangeImage,
    pub coefficients: GappyCoefficients,
    /// Reconstruction error over the observed pixels.
    pub error: f64,
    /// Pixels taken from the reconstruction.
    pub filled_pixels: usize,
}

/// Masks `occluded`, fits the basis to what is left and fills every hole
/// (masked or already invalid) from the reconstruction.
pub fn restore_face(occluded: &RangeImage, mask: &OcclusionMask, basis: &PcaBasis) -> Result<Restoration> {
    let incomplete = apply_mask(occluded, mask)?;
    let coefficients = gappy_fit(&incomplete, basis)?;
    let full = reconstruct(basis, &coefficients)?;
    let mut image = incomplete.clone();
    let mut filled_pixels = 0;
    for i in 0..image.len() {
        if !incomplete.is_valid(i) {
            image.set(i, full.at(i));
            filled_pixels += 1;
        }
    }
    Ok(Restoration {
        image,
        error: coefficients.residual_on_observed,
        coefficients,
        filled_pixels,
    })
}

/// Euclidean norm of `a - b` over pixels valid in both.
pub fn image_error(a: &RangeImage, b: &RangeImage) -> Result<f64> {
    a.ensure_same_dims(b.dims())?;
    let sum: f64 = (0..a.len())
        .filter_map(|i| {
            let d = a.at(i)? - b.at(i)?;
            Some(d * d)
        })
        .sum();
    Ok(libm::sqrt(sum))
}
