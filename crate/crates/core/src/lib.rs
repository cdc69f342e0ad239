//! Occlusion-robust 3D face processing.
//!
//! The pipeline smooths a range image, registers it rigidly against a
//! neutral model with ICP, detects occluded pixels by thresholding the depth
//! difference to a mean face, restores them with gappy PCA, extracts surface
//! normal features and scores rank-k identification.
//!
//! Everything here is pure computation over in-memory values and builds
//! without `std` (only `alloc` is required). File formats, the experiment
//! runner and the command line live in the `occface` crate.
//!
//! Grid convention used throughout: images are stored row-major, pixel
//! `(row, col)` lives at linear index `row * width + col`, and the pixel maps
//! to the 3D point `(col * spacing, row * spacing, depth)`.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

mod error;
pub mod features;
pub mod geometry;
pub mod image;
pub mod linalg;
pub mod occlusion;
pub mod preprocess;
pub mod recognition;
pub mod registration;
pub mod restoration;
pub mod rng;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use geometry::{apply_transform, Mat3, PointCloud, RigidTransform, Vec3};
pub use image::{cloud_to_range_image, range_image_to_cloud, OcclusionMask, RangeImage};
