//! Synthetic face scans with ground truth.
//!
//! Faces are smooth height fields built from anisotropic Gaussian bumps
//! (dome, nose, brows, eye sockets, cheeks, lips, chin) over normalized
//! coordinates `u, v` in `[0, 1]`. Each subject perturbs a shared template;
//! each scan adds a small expression perturbation, an optional occluder,
//! depth noise and a rigid pose. Every draw derives from the seed.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{Mat3, PointCloud, RigidTransform, Vec3};
use crate::image::{range_image_to_cloud, OcclusionMask, RangeImage};
use crate::recognition::OcclusionKind;
use crate::rng::SeededRng;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub cx: f64,
    pub cy: f64,
    pub sx: f64,
    pub sy: f64,
    pub amplitude: f64,
}

impl Bump {
    const fn new(cx: f64, cy: f64, sx: f64, sy: f64, amplitude: f64) -> Self {
        Self { cx, cy, sx, sy, amplitude }
    }

    fn eval(&self, u: f64, v: f64) -> f64 {
        let du = (u - self.cx) / self.sx;
        let dv = (v - self.cy) / self.sy;
        self.amplitude * libm::exp(-0.5 * (du * du + dv * dv))
    }
}

const TEMPLATE: [Bump; 13] = [
    Bump::new(0.50, 0.50, 0.34, 0.44, 0.25), // head dome
    Bump::new(0.50, 0.55, 0.045, 0.12, 0.10), // nose bridge
    Bump::new(0.50, 0.64, 0.045, 0.04, 0.04), // nose tip
    Bump::new(0.33, 0.34, 0.10, 0.035, 0.03), // brows
    Bump::new(0.67, 0.34, 0.10, 0.035, 0.03),
    Bump::new(0.35, 0.43, 0.07, 0.04, -0.035), // eye sockets
    Bump::new(0.65, 0.43, 0.07, 0.04, -0.035),
    Bump::new(0.30, 0.63, 0.09, 0.09, 0.03), // cheeks
    Bump::new(0.70, 0.63, 0.09, 0.09, 0.03),
    Bump::new(0.50, 0.78, 0.08, 0.025, 0.025), // lips
    Bump::new(0.50, 0.73, 0.05, 0.02, -0.01),  // philtrum groove
    Bump::new(0.50, 0.90, 0.10, 0.06, 0.03),   // chin
    Bump::new(0.50, 0.18, 0.30, 0.10, 0.02),   // forehead
];

/// Height field `z(u, v) = sum of bumps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceShape {
    pub bumps: Vec<Bump>,
}

impl FaceShape {
    /// The population template every subject perturbs.
    pub fn template() -> Self {
        Self { bumps: TEMPLATE.to_vec() }
    }

    /// Identity-specific face for `seed`.
    pub fn subject(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed ^ 0x5EED_FACE);
        let mut bumps: Vec<Bump> = TEMPLATE
            .iter()
            .enumerate()
            .map(|(i, b)| {
                // the dome varies less than the features
                let amp_jitter = if i == 0 { 0.05 } else { 0.35 };
                Bump {
                    cx: b.cx + rng.range(-0.025, 0.025),
                    cy: b.cy + rng.range(-0.025, 0.025),
                    sx: b.sx * rng.range(0.85, 1.15),
                    sy: b.sy * rng.range(0.85, 1.15),
                    amplitude: b.amplitude * (1.0 + rng.range(-amp_jitter, amp_jitter)),
                }
            })
            .collect();
        for _ in 0..3 {
            bumps.push(Bump {
                cx: rng.range(0.2, 0.8),
                cy: rng.range(0.2, 0.9),
                sx: rng.range(0.05, 0.12),
                sy: rng.range(0.05, 0.12),
                amplitude: rng.range(-0.015, 0.015),
            });
        }
        Self { bumps }
    }

    pub fn height(&self, u: f64, v: f64) -> f64 {
        self.bumps.iter().map(|b| b.eval(u, v)).sum()
    }
}

/// Region covered by an occluder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Footprint {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { u0: f64, v0: f64, u1: f64, v1: f64 },
}

impl Footprint {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            Footprint::Ellipse { cx, cy, rx, ry } => {
                let du = (u - cx) / rx;
                let dv = (v - cy) / ry;
                du * du + dv * dv <= 1.0
            }
            Footprint::Rect { u0, v0, u1, v1 } => u >= u0 && u <= u1 && v >= v0 && v <= v1,
        }
    }
}

/// An occluding object: where it is and how far it stands off the face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    pub kind: OcclusionKind,
    pub footprint: Vec<Footprint>,
    /// Offset of the occluder surface above the face.
    pub height: f64,
    /// Peak-to-peak amplitude of the occluder's own surface ripple, added on
    /// top of `height`.
    pub ripple_amplitude: f64,
    pub ripple_period: f64,
    pub ripple_angle: f64,
}

impl OcclusionSpec {
    /// Kind-specific footprint with seeded jitter.
    pub fn for_kind(kind: OcclusionKind, height: f64, ripple_amplitude: f64, rng: &mut SeededRng) -> Self {
        let j = |rng: &mut SeededRng| rng.range(-0.03, 0.03);
        let footprint = match kind {
            OcclusionKind::Mouth => alloc::vec![Footprint::Ellipse {
                cx: 0.5 + j(rng),
                cy: 0.80 + j(rng),
                rx: 0.24,
                ry: 0.13,
            }],
            OcclusionKind::Eye => alloc::vec![Footprint::Ellipse {
                cx: 0.33 + j(rng),
                cy: 0.30 + j(rng),
                rx: 0.21,
                ry: 0.17,
            }],
            OcclusionKind::Glasses => {
                let cy = 0.43 + j(rng);
                alloc::vec![
                    Footprint::Ellipse { cx: 0.33, cy, rx: 0.13, ry: 0.085 },
                    Footprint::Ellipse { cx: 0.67, cy, rx: 0.13, ry: 0.085 },
                    Footprint::Rect { u0: 0.44, v0: cy - 0.025, u1: 0.56, v1: cy + 0.02 },
                ]
            }
            OcclusionKind::Hair => alloc::vec![Footprint::Ellipse {
                cx: 0.5 + j(rng),
                cy: 0.0 + j(rng),
                rx: 0.65,
                ry: 0.24,
            }],
            OcclusionKind::None => alloc::vec![],
        };
        Self {
            kind,
            footprint,
            height,
            ripple_amplitude,
            ripple_period: rng.range(0.08, 0.14),
            ripple_angle: rng.range(0.0, core::f64::consts::PI),
        }
    }

    pub fn covers(&self, u: f64, v: f64) -> bool {
        self.footprint.iter().any(|f| f.contains(u, v))
    }

    /// Extra depth the occluder adds above the face at `(u, v)`, or `None`
    /// outside the footprint.
    pub fn offset(&self, u: f64, v: f64) -> Option<f64> {
        if !self.covers(u, v) {
            return None;
        }
        let (s, c) = (libm::sin(self.ripple_angle), libm::cos(self.ripple_angle));
        let phase = 2.0 * core::f64::consts::PI * (u * c + v * s) / self.ripple_period;
        Some(self.height + self.ripple_amplitude * 0.5 * (1.0 + libm::sin(phase)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    /// Distance between neighbouring pixels; the face spans
    /// `(width - 1) * pixel_spacing` horizontally.
    pub pixel_spacing: f64,
    pub noise_sigma: f64,
    pub expression_amplitude: f64,
    pub occlusion_height: f64,
    pub ripple_amplitude: f64,
    pub max_rotation_deg: f64,
    /// Maximum translation as a fraction of the face extent.
    pub max_translation_fraction: f64,
    /// Whether neutral scans also receive a random pose.
    pub pose_neutral: bool,
    /// Template point cloud density relative to the scan grid, per axis.
    pub template_oversample: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 48,
            height: 48,
            pixel_spacing: 1.0 / 47.0,
            noise_sigma: 0.002,
            expression_amplitude: 0.006,
            occlusion_height: 0.3,
            ripple_amplitude: 0.03,
            max_rotation_deg: 10.0,
            max_translation_fraction: 0.05,
            pose_neutral: true,
            template_oversample: 1,
        }
    }
}

impl SynthParams {
    pub fn extent(&self) -> f64 {
        (self.width.max(self.height) - 1) as f64 * self.pixel_spacing
    }

    fn uv(&self, row: usize, col: usize) -> (f64, f64) {
        let e = self.extent();
        (col as f64 * self.pixel_spacing / e, row as f64 * self.pixel_spacing / e)
    }

    /// Same face extent sampled `factor` times more densely per axis.
    pub fn oversampled(&self, factor: usize) -> Self {
        let f = factor.max(1);
        Self {
            width: (self.width - 1) * f + 1,
            height: (self.height - 1) * f + 1,
            pixel_spacing: self.pixel_spacing / f as f64,
            ..self.clone()
        }
    }

    /// Noise-free template as a point cloud at `template_oversample`
    /// density; the registration target.
    pub fn template_cloud(&self) -> Result<PointCloud> {
        let dense = self.oversampled(self.template_oversample);
        range_image_to_cloud(&dense.render(&FaceShape::template())?, dense.pixel_spacing)
    }

    /// Centre of the face in cloud coordinates (mid-grid, zero depth).
    pub fn center(&self) -> Vec3 {
        Vec3::new(
            (self.width - 1) as f64 * self.pixel_spacing / 2.0,
            (self.height - 1) as f64 * self.pixel_spacing / 2.0,
            0.0,
        )
    }

    /// Noise-free frontal range image of `shape`.
    pub fn render(&self, shape: &FaceShape) -> Result<RangeImage> {
        RangeImage::from_fn(self.width, self.height, |r, c| {
            let (u, v) = self.uv(r, c);
            Some(shape.height(u, v))
        })
    }
}

/// Rotation of at most `max_angle` radians about a uniformly random axis
/// through `center`, followed by a translation with each component in
/// `[-max_translation, max_translation]`.
pub fn random_pose(rng: &mut SeededRng, center: Vec3, max_angle: f64, max_translation: f64) -> RigidTransform {
    let axis = loop {
        let a = Vec3::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0));
        let n = a.norm();
        if n > 1e-3 && n <= 1.0 {
            break a;
        }
    };
    let angle = rng.range(0.0, max_angle);
    let t = Vec3::new(
        rng.range(-max_translation, max_translation),
        rng.range(-max_translation, max_translation),
        rng.range(-max_translation, max_translation),
    );
    rotation_about(center, Mat3::from_axis_angle(axis, angle), t)
}

/// `p -> R (p - center) + center + t`.
pub fn rotation_about(center: Vec3, rotation: Mat3, t: Vec3) -> RigidTransform {
    RigidTransform {
        rotation,
        translation: center - rotation.mul_vec(center) + t,
    }
}

/// One generated scan and its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScan {
    pub subject_id: u32,
    pub kind: OcclusionKind,
    /// Frontal (registered) range image including occluder and noise.
    pub frontal: RangeImage,
    /// Ground-truth occluder footprint on the frontal grid.
    pub footprint: OcclusionMask,
    /// Pose applied to the frontal cloud to obtain `probe`.
    pub pose: RigidTransform,
    pub probe: PointCloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub params: SynthParams,
    /// Noise-free template face, frontal; the registration target.
    pub template: RangeImage,
    /// Per subject: the neutral scan followed by its occluded scans.
    pub scans: Vec<SyntheticScan>,
}

/// Occlusion kinds cycle in this order for each subject.
pub const OCCLUSION_CYCLE: [OcclusionKind; 4] = [
    OcclusionKind::Eye,
    OcclusionKind::Mouth,
    OcclusionKind::Glasses,
    OcclusionKind::Hair,
];

/// SplitMix64 step, used to derive independent child seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates one scan of `shape`. `kind == None` gives an unoccluded scan.
pub fn generate_scan(
    params: &SynthParams,
    subject_id: u32,
    shape: &FaceShape,
    kind: OcclusionKind,
    posed: bool,
    seed: u64,
) -> Result<SyntheticScan> {
    let mut rng = SeededRng::new(seed);
    let expression: Vec<Bump> = (0..2)
        .map(|_| Bump {
            cx: rng.range(0.25, 0.75),
            cy: rng.range(0.3, 0.9),
            sx: rng.range(0.06, 0.12),
            sy: rng.range(0.06, 0.12),
            amplitude: rng.range(-params.expression_amplitude, params.expression_amplitude),
        })
        .collect();
    let occluder = match kind {
        OcclusionKind::None => None,
        k => Some(OcclusionSpec::for_kind(k, params.occlusion_height, params.ripple_amplitude, &mut rng)),
    };

    let (w, h) = (params.width, params.height);
    let mut bits = alloc::vec![false; w * h];
    let frontal = RangeImage::from_fn(w, h, |r, c| {
        let (u, v) = params.uv(r, c);
        let mut z = shape.height(u, v) + expression.iter().map(|b| b.eval(u, v)).sum::<f64>();
        if let Some(off) = occluder.as_ref().and_then(|o| o.offset(u, v)) {
            z += off;
            bits[r * w + c] = true;
        }
        Some(z + params.noise_sigma * rng.normal())
    })?;
    let footprint = OcclusionMask::new(w, h, bits)?;

    let pose = if posed {
        random_pose(
            &mut rng,
            params.center(),
            params.max_rotation_deg.to_radians(),
            params.max_translation_fraction * params.extent(),
        )
    } else {
        RigidTransform::IDENTITY
    };
    let cloud = range_image_to_cloud(&frontal, params.pixel_spacing)?;
    let probe = cloud.points.iter().map(|&p| pose.apply(p)).collect();
    Ok(SyntheticScan {
        subject_id,
        kind,
        frontal,
        footprint,
        pose,
        probe,
    })
}

/// Neutral scan plus `occlusions_per_subject` occluded scans for each of
/// `n_subjects` subjects.
pub fn generate_dataset(
    params: &SynthParams,
    n_subjects: u32,
    occlusions_per_subject: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    let template = params.render(&FaceShape::template())?;
    let mut scans = Vec::with_capacity(n_subjects as usize * (1 + occlusions_per_subject));
    for s in 0..n_subjects {
        scans.extend(generate_subject(params, s, occlusions_per_subject, seed)?);
    }
    Ok(SyntheticDataset {
        params: params.clone(),
        template,
        scans,
    })
}

/// Scans of one subject; independent of every other subject's draws.
pub fn generate_subject(
    params: &SynthParams,
    subject_id: u32,
    occlusions_per_subject: usize,
    seed: u64,
) -> Result<Vec<SyntheticScan>> {
    let subject_seed = derive_seed(seed, subject_id as u64);
    let shape = FaceShape::subject(subject_seed);
    let mut scans = Vec::with_capacity(1 + occlusions_per_subject);
    scans.push(generate_scan(
        params,
        subject_id,
        &shape,
        OcclusionKind::None,
        params.pose_neutral,
        derive_seed(subject_seed, 0),
    )?);
    for k in 0..occlusions_per_subject {
        let kind = OCCLUSION_CYCLE[k % OCCLUSION_CYCLE.len()];
        scans.push(generate_scan(
            params,
            subject_id,
            &shape,
            kind,
            true,
            derive_seed(subject_seed, 1 + k as u64),
        )?);
    }
    Ok(scans)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_request() {
        let p = SynthParams {
            width: 16,
            height: 16,
            pixel_spacing: 1.0 / 15.0,
            ..SynthParams::default()
        };
        let d = generate_dataset(&p, 10, 4, 1).unwrap();
        assert_eq!(d.scans.len(), 50);
        assert_eq!(d.scans.iter().filter(|s| s.kind != OcclusionKind::None).count(), 40);
    }

    #[test]
    fn generation_is_pure_in_seed() {
        let p = SynthParams::default();
        assert_eq!(generate_subject(&p, 3, 2, 11).unwrap(), generate_subject(&p, 3, 2, 11).unwrap());
        assert_ne!(generate_subject(&p, 3, 2, 11).unwrap(), generate_subject(&p, 3, 2, 12).unwrap());
    }

    #[test]
    fn footprint_matches_raised_pixels() {
        let p = SynthParams {
            noise_sigma: 0.0,
            expression_amplitude: 0.0,
            ..SynthParams::default()
        };
        let shape = FaceShape::subject(4);
        let clean = p.render(&shape).unwrap();
        let scan = generate_scan(&p, 0, &shape, OcclusionKind::Mouth, false, 9).unwrap();
        assert!(scan.footprint.occluded_count() > 0);
        for i in 0..clean.len() {
            let raised = scan.frontal.at(i).unwrap() - clean.at(i).unwrap();
            if scan.footprint.is_occluded(i) {
                assert!(raised >= p.occlusion_height - 1e-12);
            } else {
                assert!(raised.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pose_maps_frontal_to_probe() {
        let p = SynthParams::default();
        let scan = generate_scan(&p, 0, &FaceShape::template(), OcclusionKind::None, true, 5).unwrap();
        let frontal = range_image_to_cloud(&scan.frontal, p.pixel_spacing).unwrap();
        for (a, b) in frontal.points.iter().zip(&scan.probe.points) {
            assert!(scan.pose.apply(*a).distance(*b) < 1e-12);
        }
        let angle = scan.pose.rotation.rotation_angle();
        assert!(angle <= p.max_rotation_deg.to_radians() + 1e-12);
    }

    #[test]
    fn oversampling_keeps_the_extent_and_grid_points() {
        let p = SynthParams::default();
        let d = p.oversampled(3);
        assert_eq!((d.width, d.height), (142, 142));
        assert!((d.extent() - p.extent()).abs() < 1e-12);
        assert_eq!(d.center(), p.center());
        let coarse = p.render(&FaceShape::template()).unwrap();
        let fine = d.render(&FaceShape::template()).unwrap();
        for (r, c) in [(0, 0), (5, 17), (47, 47)] {
            assert!((coarse.get(r, c).unwrap() - fine.get(3 * r, 3 * c).unwrap()).abs() < 1e-12);
        }
        assert_eq!(p.oversampled(0), p);
        assert_eq!(p.template_cloud().unwrap().len(), 48 * 48);
        let q = SynthParams { template_oversample: 3, ..p };
        assert_eq!(q.template_cloud().unwrap().len(), 142 * 142);
    }

    #[test]
    fn subjects_differ_from_template() {
        let t = FaceShape::template();
        let s = FaceShape::subject(1);
        assert!((t.height(0.5, 0.6) - s.height(0.5, 0.6)).abs() > 1e-4);
    }
}
