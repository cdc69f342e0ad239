//! Single pipeline stages shared by the CLI subcommands and the experiment
//! runner. Every image a stage hands on is passed through [`quantize`], so
//! chaining stages in memory gives the same result as chaining them through
//! files.

use occface_core::features::{feature_vector, surface_normals, NormalMap};
use occface_core::image::{cloud_to_range_image, fill_invalid};
use occface_core::occlusion::{detect, Detection, DetectionConfig};
use occface_core::preprocess::{weighted_median_filter, FilterReport};
use occface_core::registration::{icp, IcpConfig, IcpResult};
use occface_core::restoration::{gappy_fit, restore_face, train_pca, ComponentCount, PcaBasis, Restoration};
use occface_core::{apply_transform, OcclusionMask, PointCloud, RangeImage};
use serde::{Deserialize, Serialize};

use crate::config::{GridConfig, MedianStage};
use crate::error::AppResult;
use crate::formats::quantize;

pub struct Registered {
    pub icp: IcpResult,
    pub cloud: PointCloud,
    pub image: RangeImage,
    pub projection: ProjectionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    /// Registered points falling outside the grid.
    pub dropped_points: usize,
    pub filled_pixels: usize,
    pub invalid_pixels: usize,
}

/// Registers `probe` onto `model`, then splats the registered cloud onto
/// the grid and fills holes.
pub fn register_and_project(
    probe: &PointCloud,
    model: &PointCloud,
    icp_cfg: &IcpConfig,
    grid: &GridConfig,
    fill_passes: usize,
) -> AppResult<Registered> {
    let result = icp(probe, model, icp_cfg)?;
    let cloud = apply_transform(probe, &result.transform)?;
    let (image, projection) = project(&cloud, grid, fill_passes)?;
    Ok(Registered {
        icp: result,
        cloud,
        image,
        projection,
    })
}

pub fn project(cloud: &PointCloud, grid: &GridConfig, fill_passes: usize) -> AppResult<(RangeImage, ProjectionSummary)> {
    let p = cloud_to_range_image(cloud, grid.width, grid.height, grid.pixel_spacing)?;
    let mut image = p.image;
    let filled = fill_invalid(&mut image, 1, fill_passes);
    let summary = ProjectionSummary {
        dropped_points: p.dropped,
        filled_pixels: filled,
        invalid_pixels: image.len() - image.valid_count(),
    };
    Ok((quantize(&image), summary))
}

pub fn smooth(img: &RangeImage, stage: &MedianStage) -> AppResult<(RangeImage, FilterReport)> {
    if !stage.enabled {
        return Ok((img.clone(), FilterReport::default()));
    }
    let (out, report) = weighted_median_filter(img, &stage.filter())?;
    Ok((quantize(&out), report))
}

pub fn train_basis(images: &[RangeImage], components: ComponentCount) -> AppResult<PcaBasis> {
    Ok(train_pca(images, components)?)
}

pub fn detect_occlusion(img: &RangeImage, mean: &RangeImage, cfg: &DetectionConfig) -> AppResult<Detection> {
    Ok(detect(img, mean, cfg)?)
}

pub fn restore(img: &RangeImage, mask: &OcclusionMask, basis: &PcaBasis) -> AppResult<Restoration> {
    let mut r = restore_face(img, mask, basis)?;
    r.image = quantize(&r.image);
    Ok(r)
}

pub fn normal_features(img: &RangeImage, pixel_spacing: f64, factor: usize) -> AppResult<(NormalMap, Vec<f64>)> {
    let nm = surface_normals(img, pixel_spacing)?;
    let v = feature_vector(&nm, factor)?;
    Ok((nm, v))
}

/// Basis coefficients of `img` (least squares over its valid pixels).
pub fn pca_features(img: &RangeImage, basis: &PcaBasis) -> AppResult<Vec<f64>> {
    Ok(gappy_fit(img, basis)?.beta)
}
