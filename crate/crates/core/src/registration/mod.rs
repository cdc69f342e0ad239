//! Rigid registration of a probe cloud onto a model cloud with
//! point-to-point ICP.
//!
//! Each iteration matches every probe point to its exact nearest model
//! point, discards the worst `rejection_fraction` of the matches and solves
//! the least-squares rigid motion of the remaining pairs in closed form
//! (unit-quaternion orthogonal alignment, which only ever yields proper
//! rotations). Iteration stops once the trimmed RMSE improves by less than
//! `convergence_epsilon`.

mod kdtree;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use kdtree::KdTree;

use crate::geometry::{Mat3, PointCloud, RigidTransform, Vec3};
use crate::linalg::symmetric_eigen;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub probe_index: usize,
    pub model_index: usize,
    pub distance: f64,
}

/// Nearest model point for every probe point, ties resolved towards the
/// lowest model index.
pub fn nearest_correspondences(probe: &PointCloud, model: &PointCloud) -> Result<Vec<Correspondence>> {
    probe.validate()?;
    model.validate()?;
    let tree = KdTree::build(&model.points);
    Ok(match_points(&tree, &probe.points))
}

fn match_points(tree: &KdTree<'_>, probe: &[Vec3]) -> Vec<Correspondence> {
    probe
        .iter()
        .enumerate()
        .map(|(probe_index, &p)| {
            let (model_index, d2) = tree.nearest(p).expect("model validated non-empty");
            Correspondence {
                probe_index,
                model_index,
                distance: libm::sqrt(d2),
            }
        })
        .collect()
}

/// Second largest over largest principal variance below which a point set
/// counts as collinear.
const COLLINEARITY_RATIO: f64 = 1e-12;

fn centroid(points: impl Iterator<Item = Vec3> + Clone) -> Vec3 {
    let n = points.clone().count() as f64;
    points.fold(Vec3::ZERO, |a, p| a + p) * (1.0 / n)
}

fn is_collinear(points: impl Iterator<Item = Vec3> + Clone) -> bool {
    let c = centroid(points.clone());
    let mut cov = [0.0; 9];
    for p in points {
        let d = (p - c).to_array();
        for i in 0..3 {
            for j in 0..3 {
                cov[i * 3 + j] += d[i] * d[j];
            }
        }
    }
    let eig = symmetric_eigen(&cov, 3);
    eig.values[0] <= 0.0 || eig.values[1] <= COLLINEARITY_RATIO * eig.values[0]
}

/// Least-squares rigid transform `T` minimizing `sum |T(src) - dst|^2` over
/// `(src, dst)` pairs. The rotation is always proper (det +1).
pub fn best_rigid_transform(pairs: &[(Vec3, Vec3)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateGeometry("need at least three point pairs"));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::DegenerateGeometry("non-finite point in pairs"));
    }
    let src = pairs.iter().map(|p| p.0);
    let dst = pairs.iter().map(|p| p.1);
    if is_collinear(src.clone()) || is_collinear(dst.clone()) {
        return Err(Error::DegenerateGeometry("point pairs are collinear"));
    }
    let cs = centroid(src);
    let cd = centroid(dst);

    let mut s = [[0.0; 3]; 3];
    for (a, b) in pairs {
        let a = (*a - cs).to_array();
        let b = (*b - cd).to_array();
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += a[i] * b[j];
            }
        }
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
    #[rustfmt::skip]
    let n = [
        sxx + syy + szz, syz - szy,       szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz, sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,       -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,       syz + szy,        -sxx - syy + szz,
    ];
    let eig = symmetric_eigen(&n, 4);
    let q = &eig.vectors[0];
    let rotation = quaternion_to_matrix(q[0], q[1], q[2], q[3]);
    let translation = cd - rotation.mul_vec(cs);
    Ok(RigidTransform { rotation, translation })
}

fn quaternion_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Mat3 {
    let n = libm::sqrt(w * w + x * x + y * y + z * z);
    let (w, x, y, z) = (w / n, x / n, y / n, z / n);
    Mat3([
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])
}

/// Root mean squared point distance between two clouds paired by index.
pub fn rmse(v: &PointCloud, w: &PointCloud) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: v.len(),
            found: w.len(),
        });
    }
    if v.is_empty() {
        return Err(Error::EmptyInput("rmse of empty clouds"));
    }
    let sum: f64 = v.points.iter().zip(&w.points).map(|(a, b)| (*a - *b).norm_squared()).sum();
    Ok(libm::sqrt(sum / v.len() as f64))
}

/// RMSE between `registered` and its nearest-neighbour partners in `model`,
/// using every point (no rejection).
pub fn registration_rmse(registered: &PointCloud, model: &PointCloud) -> Result<f64> {
    let corr = nearest_correspondences(registered, model)?;
    let partners: PointCloud = corr.iter().map(|c| model.points[c.model_index]).collect();
    rmse(registered, &partners)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the trimmed RMSE improves by less than this.
    pub convergence_epsilon: f64,
    /// Fraction of worst matches dropped each iteration, in `[0, 1)`.
    pub rejection_fraction: f64,
    /// Starting transform; `None` translates the probe centroid onto the
    /// model centroid.
    pub initial_transform: Option<RigidTransform>,
    /// After convergence, restart from the result rotated by this many
    /// degrees about each axis in turn and keep any restart that ends at a
    /// lower RMSE. `0` disables restarts.
    pub perturbation_deg: f64,
    /// Upper bound on the number of restarts tried.
    pub max_restarts: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            convergence_epsilon: 1e-10,
            rejection_fraction: 0.1,
            initial_transform: None,
            perturbation_deg: 6.0,
            max_restarts: 120,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.convergence_epsilon > 0.0) {
            return Err(Error::InvalidConfig("convergence_epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rejection_fraction) {
            return Err(Error::InvalidConfig("rejection_fraction must lie in [0, 1)".into()));
        }
        if !(self.perturbation_deg >= 0.0 && self.perturbation_deg < 90.0) {
            return Err(Error::InvalidConfig("perturbation_deg must lie in [0, 90)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    /// Maps probe coordinates into the model frame.
    pub transform: RigidTransform,
    /// Trimmed RMSE after each iteration's update, over the initial run
    /// and every accepted restart.
    pub rmse_history: Vec<f64>,
    /// Iterations over all runs, including rejected restarts.
    pub iterations_run: usize,
    pub converged: bool,
    pub restarts_tried: usize,
    pub restarts_accepted: usize,
}

impl IcpResult {
    pub fn final_rmse(&self) -> f64 {
        self.rmse_history.last().copied().unwrap_or(0.0)
    }
}

pub fn icp(probe: &PointCloud, model: &PointCloud, cfg: &IcpConfig) -> Result<IcpResult> {
    cfg.validate()?;
    probe.validate()?;
    model.validate()?;
    let tree = KdTree::build(&model.points);
    let start = match cfg.initial_transform {
        Some(t) => t,
        None => {
            let offset = model.centroid().unwrap_or(Vec3::ZERO) - probe.centroid().unwrap_or(Vec3::ZERO);
            RigidTransform::translation(offset)
        }
    };
    let n = probe.len();
    let keep = (libm::ceil((1.0 - cfg.rejection_fraction) * n as f64) as usize).clamp(n.min(3), n);
    let run = |from: RigidTransform| single_run(probe, model, &tree, from, keep, cfg);

    let mut best = run(start)?;
    let mut result = IcpResult {
        transform: best.transform,
        iterations_run: best.history.len(),
        rmse_history: core::mem::take(&mut best.history),
        converged: best.converged,
        restarts_tried: 0,
        restarts_accepted: 0,
    };
    let delta = cfg.perturbation_deg.to_radians();
    let axes = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(1.0, 1.0, 0.0),
        Vec3::new(1.0, -1.0, 0.0),
        Vec3::new(1.0, 0.0, 1.0),
        Vec3::new(1.0, 0.0, -1.0),
        Vec3::new(0.0, 1.0, 1.0),
        Vec3::new(0.0, 1.0, -1.0),
    ];
    let per_scale = 2 * axes.len();
    let mut candidate = 0usize;
    // cycle through the axis perturbations until a full cycle brings no gain
    const SCALES: [f64; 3] = [1.0, 0.5, 2.0];
    let mut since_gain = 0usize;
    while delta > 0.0 && result.restarts_tried < cfg.max_restarts && since_gain < per_scale * SCALES.len() && best.rmse > cfg.convergence_epsilon {
        let axis = axes[candidate % axes.len()];
        let sign = if (candidate / axes.len()).is_multiple_of(2) { 1.0 } else { -1.0 };
        let scale = SCALES[(candidate / per_scale) % SCALES.len()];
        candidate += 1;
        let centre = result.transform.apply(probe.centroid().unwrap_or(Vec3::ZERO));
        let rot = Mat3::from_axis_angle(axis, sign * scale * delta);
        let nudge = RigidTransform {
            rotation: rot,
            translation: centre - rot.mul_vec(centre),
        };
        let mut trial = run(result.transform.then(&nudge))?;
        result.restarts_tried += 1;
        result.iterations_run += trial.history.len();
        if trial.rmse < best.rmse - cfg.convergence_epsilon {
            result.transform = trial.transform;
            result.converged = trial.converged;
            result.restarts_accepted += 1;
            result.rmse_history.append(&mut trial.history);
            best = trial;
            since_gain = 0;
        } else {
            since_gain += 1;
        }
    }
    Ok(result)
}

struct Run {
    transform: RigidTransform,
    history: Vec<f64>,
    rmse: f64,
    converged: bool,
}

fn single_run(
    probe: &PointCloud,
    model: &PointCloud,
    tree: &KdTree,
    start: RigidTransform,
    keep: usize,
    cfg: &IcpConfig,
) -> Result<Run> {
    let n = probe.len();
    let mut current = start;
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut moved: Vec<Vec3> = Vec::with_capacity(n);
    for _ in 0..cfg.max_iterations {
        moved.clear();
        moved.extend(probe.points.iter().map(|&p| current.apply(p)));
        let mut corr = match_points(tree, &moved);
        corr.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.probe_index.cmp(&b.probe_index)));
        corr.truncate(keep);

        let before = libm::sqrt(corr.iter().map(|c| c.distance * c.distance).sum::<f64>() / keep as f64);
        let pairs: Vec<(Vec3, Vec3)> = corr
            .iter()
            .map(|c| (moved[c.probe_index], model.points[c.model_index]))
            .collect();
        let delta = best_rigid_transform(&pairs)?;
        current = current.then(&delta);
        let after = libm::sqrt(
            pairs
                .iter()
                .map(|(p, m)| (delta.apply(*p) - *m).norm_squared())
                .sum::<f64>()
                / keep as f64,
        );
        let previous = history.last().copied().unwrap_or(before);
        history.push(after);
        if previous - after < cfg.convergence_epsilon {
            converged = true;
            break;
        }
    }
    Ok(Run {
        transform: current,
        rmse: history.last().copied().unwrap_or(0.0),
        history,
        converged,
    })
}
