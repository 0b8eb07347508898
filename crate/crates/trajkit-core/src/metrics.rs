//! Trajectory-following and registration metrics: relative-pose relocation
//! accuracy (AUC), flattened-pose cosine similarity, reconstruction rate.
//!
//! Before comparison both trajectories are normalized: every pose is
//! expressed relative to its own frame 0 (right-composition with the inverse
//! of the first pose) and centers are scaled so each trajectory's path
//! length is 1. This absorbs the global rigid-transform and scale ambiguity
//! of reconstructed or generated trajectories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::SparseModel;
use crate::pose::{geodesic_angle, vector_angle, Rotation, Trajectory};
use nalgebra::Vector3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trajectories disagree: {0}")]
    Alignment(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// How rotation and translation errors combine into the per-frame error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinedRule {
    /// `max(rotation_error, translation_angle_error)`, the relocation-AUC
    /// convention.
    #[default]
    MaxRotationTranslation,
    RotationOnly,
}

/// How the flattened-pose cosine similarity aggregates across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineMode {
    /// One cosine over the concatenation of all flattened poses.
    #[default]
    Concatenated,
    /// Mean of per-frame cosines.
    PerFrameAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub combined: CombinedRule,
    pub cosine: CosineMode,
    /// Apply frame-0 alignment and path-length scaling before the cosine.
    pub normalize_before_cosine: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            combined: CombinedRule::default(),
            cosine: CosineMode::default(),
            normalize_before_cosine: true,
        }
    }
}

/// Per-frame relocation error, degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation_angle_deg: f64,
    pub combined_deg: f64,
}

/// A pose expressed relative to frame 0, centers rescaled.
#[derive(Debug, Clone)]
struct AlignedPose {
    rotation: Rotation,
    translation: Vector3<f64>,
}

impl AlignedPose {
    fn center(&self) -> Vector3<f64> {
        -self.rotation.inverse_rotate(&self.translation)
    }

    fn flatten(&self) -> [f64; 12] {
        let r = self.rotation.matrix();
        let t = self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }
}

/// Express every pose relative to frame 0 (`T_i * T_0^{-1}`) and scale the
/// centers so the total path length is 1 (skipped for a static trajectory).
fn align_and_scale(traj: &Trajectory) -> Result<Vec<AlignedPose>, MetricsError> {
    let poses = traj.poses();
    if poses.is_empty() {
        return Err(MetricsError::Undefined("empty trajectory".into()));
    }
    let first = &poses[0];
    let inv_rot = first.rotation.inverse();
    let aligned: Vec<AlignedPose> = poses
        .iter()
        .map(|p| {
            // T_i T_0^{-1}: rotation R_i R_0^T, translation t_i - R' t_0.
            let rotation = p.rotation.compose(&inv_rot);
            let translation = p.translation - rotation.rotate(&first.translation);
            AlignedPose {
                rotation,
                translation,
            }
        })
        .collect();
    let path: f64 = aligned
        .windows(2)
        .map(|w| (w[1].center() - w[0].center()).norm())
        .sum();
    let scale = if path > 1e-12 { 1.0 / path } else { 1.0 };
    Ok(aligned
        .into_iter()
        .map(|p| AlignedPose {
            rotation: p.rotation,
            translation: p.translation * scale,
        })
        .collect())
}

fn check_matched(gt: &Trajectory, pred: &Trajectory) -> Result<(), MetricsError> {
    if gt.len() != pred.len() {
        return Err(MetricsError::Alignment(format!(
            "lengths differ: {} vs {}",
            gt.len(),
            pred.len()
        )));
    }
    for (a, b) in gt.poses().iter().zip(pred.poses()) {
        if a.time_step != b.time_step {
            return Err(MetricsError::Alignment(format!(
                "time steps differ: {} vs {}",
                a.time_step, b.time_step
            )));
        }
    }
    Ok(())
}

/// Per-frame relocation errors between matched trajectories.
///
/// Rotation error is the geodesic angle between the aligned rotations;
/// translation error is the angle between the frame-0 displacement
/// directions (0 when both displacements vanish, 90 when exactly one does).
pub fn pair_pose_errors(
    gt: &Trajectory,
    pred: &Trajectory,
    cfg: &MetricsConfig,
) -> Result<Vec<PoseError>, MetricsError> {
    check_matched(gt, pred)?;
    let ga = align_and_scale(gt)?;
    let pa = align_and_scale(pred)?;
    Ok(ga
        .iter()
        .zip(&pa)
        .map(|(g, p)| {
            let rotation_deg = geodesic_angle(&g.rotation, &p.rotation).to_degrees();
            let dg = g.center();
            let dp = p.center();
            let translation_angle_deg = match (dg.norm() < 1e-9, dp.norm() < 1e-9) {
                (true, true) => 0.0,
                (true, false) | (false, true) => 90.0,
                (false, false) => vector_angle(&dg, &dp).to_degrees(),
            };
            let combined_deg = match cfg.combined {
                CombinedRule::MaxRotationTranslation => rotation_deg.max(translation_angle_deg),
                CombinedRule::RotationOnly => rotation_deg,
            };
            PoseError {
                rotation_deg,
                translation_angle_deg,
                combined_deg,
            }
        })
        .collect())
}

/// Area under the accuracy-vs-threshold curve up to `tau` degrees on a
/// 1-degree grid: `AUC@tau = (1/tau) * sum_{x=1..tau} accuracy(x)` where
/// `accuracy(x)` is the fraction of frames with combined error below `x`.
pub fn auc_at(errors: &[PoseError], tau: f64) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Undefined("no pose errors".into()));
    }
    let steps = tau.floor() as i64;
    if steps < 1 {
        return Err(MetricsError::Undefined(format!(
            "tau must be >= 1 degree, got {tau}"
        )));
    }
    let n = errors.len() as f64;
    let sum: f64 = (1..=steps)
        .map(|x| errors.iter().filter(|e| e.combined_deg < x as f64).count() as f64 / n)
        .sum();
    Ok(sum / steps as f64)
}

/// Cosine similarity between the flattened camera poses of two trajectories.
pub fn pose_cosine_similarity(
    gt: &Trajectory,
    pred: &Trajectory,
    cfg: &MetricsConfig,
) -> Result<f64, MetricsError> {
    check_matched(gt, pred)?;
    let (ga, pa): (Vec<[f64; 12]>, Vec<[f64; 12]>) = if cfg.normalize_before_cosine {
        (
            align_and_scale(gt)?.iter().map(|p| p.flatten()).collect(),
            align_and_scale(pred)?.iter().map(|p| p.flatten()).collect(),
        )
    } else {
        (
            gt.poses().iter().map(|p| p.flatten()).collect(),
            pred.poses().iter().map(|p| p.flatten()).collect(),
        )
    };

    let cosine = |a: &[f64], b: &[f64]| -> Result<f64, MetricsError> {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na2: f64 = a.iter().map(|x| x * x).sum();
        let nb2: f64 = b.iter().map(|x| x * x).sum();
        if na2 < 1e-24 || nb2 < 1e-24 {
            // The rotation block alone contributes norm sqrt(3) per frame.
            return Err(MetricsError::Internal(
                "zero-norm flattened pose vector".into(),
            ));
        }
        // Squared ratio keeps cosine(x, x) at exactly 1: numerator and
        // denominator are then the identical product.
        let ratio = (dot * dot) / (na2 * nb2);
        Ok(dot.signum() * ratio.sqrt())
    };

    match cfg.cosine {
        CosineMode::Concatenated => {
            let a: Vec<f64> = ga.iter().flatten().copied().collect();
            let b: Vec<f64> = pa.iter().flatten().copied().collect();
            cosine(&a, &b)
        }
        CosineMode::PerFrameAverage => {
            let mut sum = 0.0;
            for (a, b) in ga.iter().zip(&pa) {
                sum += cosine(a, b)?;
            }
            Ok(sum / ga.len() as f64)
        }
    }
}

/// Fraction of frames registered in the sparse model.
pub fn reconstruction_rate(model: &SparseModel) -> Result<f64, MetricsError> {
    let total = model.total_frame_count();
    if total == 0 {
        return Err(MetricsError::Undefined("total frame count is 0".into()));
    }
    Ok(model.registered_count() as f64 / total as f64)
}

/// Summary record emitted by the metrics CLI (AUC@30, AUC@15, CosSim).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub auc30: f64,
    pub auc15: f64,
    pub cosine: f64,
    pub n_frames: usize,
    /// Whether frame-0 alignment + path-scaling was applied.
    pub normalized: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reconstruction_rate: Option<f64>,
}

/// Evaluate the trajectory-following metrics of a predicted trajectory
/// against ground truth.
pub fn evaluate(
    gt: &Trajectory,
    pred: &Trajectory,
    cfg: &MetricsConfig,
) -> Result<MetricsRecord, MetricsError> {
    let errors = pair_pose_errors(gt, pred, cfg)?;
    Ok(MetricsRecord {
        auc30: auc_at(&errors, 30.0)?,
        auc15: auc_at(&errors, 15.0)?,
        cosine: pose_cosine_similarity(gt, pred, cfg)?,
        n_frames: errors.len(),
        normalized: cfg.normalize_before_cosine,
        reconstruction_rate: None,
    })
}
