//! Fix-or-discard policy for trajectories with bad transitions.
//!
//! Maximal runs of bad transitions are classified against sparsity limits;
//! fixable runs are rebuilt by linear center interpolation and SLERP between
//! the good anchor poses (constant-velocity extrapolation at video
//! boundaries), then the whole sequence is re-validated with the same checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{MatchSet, PairStats, SparseModel};
use crate::pose::{geodesic_angle, slerp, CameraPose, Trajectory};
use crate::verify::{
    run_checks_for_revalidation, BadIndex, CheckConfig, CheckReport, VerifyError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepairConfig {
    /// Maximum tolerated fraction of bad transitions.
    pub max_bad_fraction: f64,
    /// Maximum length of a single bad run, in transitions.
    pub max_run_length: usize,
    /// Per-step geodesic budget between the anchors of a repaired run,
    /// degrees. Runs needing more rotation per step are unrepairable.
    pub cap_angle_per_step_deg: f64,
    pub extrapolate_boundaries: bool,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            max_bad_fraction: 0.2,
            max_run_length: 8,
            cap_angle_per_step_deg: 15.0,
            extrapolate_boundaries: true,
        }
    }
}

impl RepairConfig {
    pub fn validate(&self) -> Result<(), RepairError> {
        if !(self.max_bad_fraction > 0.0 && self.max_bad_fraction < 1.0) {
            return Err(RepairError::InvalidConfig(format!(
                "max_bad_fraction must lie in (0, 1), got {}",
                self.max_bad_fraction
            )));
        }
        if self.max_run_length < 1 {
            return Err(RepairError::InvalidConfig(
                "max_run_length must be >= 1".into(),
            ));
        }
        if !(self.cap_angle_per_step_deg > 0.0 && self.cap_angle_per_step_deg < 180.0) {
            return Err(RepairError::InvalidConfig(format!(
                "cap_angle_per_step_deg must lie in (0, 180), got {}",
                self.cap_angle_per_step_deg
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("anchor rotation gap {angle_per_step_deg:.2} deg/step exceeds cap {cap_deg} deg/step")]
    CapExceeded {
        angle_per_step_deg: f64,
        cap_deg: f64,
    },
    #[error("run touching the sequence boundary cannot be extrapolated")]
    BoundaryUnfixable,
    #[error("run {start}..={end} is not bracketed by good anchors in a {len}-pose trajectory")]
    MissingAnchor {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("invalid repair config: {0}")]
    InvalidConfig(String),
}

/// Why a trajectory was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    DenseBadIndex,
    RunTooLong,
    CapExceeded,
    RevalidationFailed,
    BoundaryUnfixable,
}

/// Pipeline verdict for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum RepairOutcome {
    /// Original bad-index was all-zero; trajectory unchanged.
    Accepted,
    Fixed {
        trajectory: Trajectory,
        /// Inclusive transition ranges that were rebuilt.
        repaired_runs: Vec<(usize, usize)>,
    },
    Discarded { reason: DiscardReason },
}

/// Verdict plus revalidation diagnostics.
#[derive(Debug, Clone)]
pub struct RepairResult {
    pub outcome: RepairOutcome,
    /// Fused bad count after the fix; `None` when re-validation never ran.
    pub post_fix_bad_count: Option<usize>,
}

/// Run classification: either every bad run is locally fixable, or the whole
/// video is discarded.
#[derive(Debug, Clone, PartialEq)]
pub enum RunClassification {
    /// Maximal bad runs as inclusive transition ranges; empty means the
    /// index was all-clear.
    Fixable(Vec<(usize, usize)>),
    Discard(DiscardReason),
}

/// Extract maximal bad runs and decide fixability: the total bad fraction
/// must stay within `max_bad_fraction` and every run within
/// `max_run_length`.
pub fn classify_bad_runs(bad: &BadIndex, cfg: &RepairConfig) -> RunClassification {
    let runs = bad.runs();
    if bad.bad_fraction() > cfg.max_bad_fraction {
        return RunClassification::Discard(DiscardReason::DenseBadIndex);
    }
    if runs.iter().any(|&(s, e)| e - s + 1 > cfg.max_run_length) {
        return RunClassification::Discard(DiscardReason::RunTooLong);
    }
    RunClassification::Fixable(runs)
}

/// Rebuild the interior poses of a bad run bracketed by good anchors.
///
/// For anchors at pose indices `i = run.0` and `j = run.1 + 1` every interior
/// pose `k` gets `s = (k - i) / (j - i)`, a linearly interpolated center, a
/// SLERP-interpolated rotation, and `t = -R c`. A single-transition run has
/// no interior pose and repairs to nothing. Fails with
/// [`RepairError::CapExceeded`] when the anchors' geodesic gap exceeds
/// `cap_angle_per_step_deg` per step.
pub fn repair_run(
    traj: &Trajectory,
    run: (usize, usize),
    cfg: &RepairConfig,
) -> Result<Vec<CameraPose>, RepairError> {
    let n = traj.len();
    let (start, end) = run;
    if start == 0 || end + 2 > n.saturating_sub(1) || end < start {
        return Err(RepairError::MissingAnchor {
            start,
            end,
            len: n,
        });
    }
    let i = start;
    let j = end + 1;
    if j - i < 2 {
        return Ok(Vec::new());
    }
    let poses = traj.poses();
    let anchor_a = &poses[i];
    let anchor_b = &poses[j];
    let span = (j - i) as f64;

    let gap_deg = geodesic_angle(&anchor_a.rotation, &anchor_b.rotation).to_degrees();
    let per_step = gap_deg / span;
    if per_step > cfg.cap_angle_per_step_deg {
        return Err(RepairError::CapExceeded {
            angle_per_step_deg: per_step,
            cap_deg: cfg.cap_angle_per_step_deg,
        });
    }

    let ca = anchor_a.center();
    let cb = anchor_b.center();
    Ok((i + 1..j)
        .map(|k| {
            let s = (k - i) as f64 / span;
            let center = ca * (1.0 - s) + cb * s;
            let rotation = slerp(&anchor_a.rotation, &anchor_b.rotation, s);
            CameraPose::from_center(
                rotation,
                center,
                poses[k].time_step,
                poses[k].frame_name.clone(),
            )
            .expect("interpolated pose is finite")
        })
        .collect())
}

/// Rebuild a run that touches the sequence start or end: centers continue at
/// the constant velocity of the two nearest good centers, rotations hold the
/// nearest good rotation.
pub fn extrapolate_boundary(
    traj: &Trajectory,
    run: (usize, usize),
    cfg: &RepairConfig,
) -> Result<Vec<CameraPose>, RepairError> {
    if !cfg.extrapolate_boundaries {
        return Err(RepairError::BoundaryUnfixable);
    }
    let n = traj.len();
    let transitions = n - 1;
    let (start, end) = run;
    let poses = traj.poses();

    if start == 0 && end == transitions - 1 {
        return Err(RepairError::BoundaryUnfixable);
    }
    if start == 0 {
        // Bad poses 0..=end; anchors are poses end+1 and end+2.
        if end + 2 >= n {
            return Err(RepairError::BoundaryUnfixable);
        }
        let anchor = &poses[end + 1];
        let velocity = poses[end + 2].center() - anchor.center();
        let c0 = anchor.center();
        Ok((0..=end)
            .map(|k| {
                let back = (end + 1 - k) as f64;
                CameraPose::from_center(
                    anchor.rotation,
                    c0 - velocity * back,
                    poses[k].time_step,
                    poses[k].frame_name.clone(),
                )
                .expect("extrapolated pose is finite")
            })
            .collect())
    } else if end == transitions - 1 {
        // Bad poses start+1..=n-1; anchors are poses start and start-1.
        if start < 1 {
            return Err(RepairError::BoundaryUnfixable);
        }
        let anchor = &poses[start];
        let velocity = anchor.center() - poses[start - 1].center();
        let c0 = anchor.center();
        Ok((start + 1..n)
            .map(|k| {
                let fwd = (k - start) as f64;
                CameraPose::from_center(
                    anchor.rotation,
                    c0 + velocity * fwd,
                    poses[k].time_step,
                    poses[k].frame_name.clone(),
                )
                .expect("extrapolated pose is finite")
            })
            .collect())
    } else {
        Err(RepairError::MissingAnchor {
            start,
            end,
            len: n,
        })
    }
}

/// Poses rewritten by repairing one run (pose indices, not transitions).
fn run_pose_range(traj: &Trajectory, run: (usize, usize)) -> std::ops::RangeInclusive<usize> {
    let transitions = traj.transition_count();
    if run.0 == 0 {
        0..=run.1
    } else if run.1 == transitions - 1 {
        run.0 + 1..=traj.len() - 1
    } else {
        run.0 + 1..=run.1
    }
}

/// Apply all classified runs to a copy of the trajectory.
fn apply_repairs(
    traj: &Trajectory,
    runs: &[(usize, usize)],
    cfg: &RepairConfig,
) -> Result<Trajectory, RepairError> {
    let transitions = traj.transition_count();
    let mut fixed = traj.clone();
    for &run in runs {
        let replacements = if run.0 == 0 || run.1 == transitions - 1 {
            extrapolate_boundary(traj, run, cfg)?
        } else {
            repair_run(traj, run, cfg)?
        };
        let indices = run_pose_range(traj, run);
        for (k, pose) in indices.zip(replacements) {
            fixed.set_pose_raw(k, pose.rotation, pose.translation);
        }
    }
    Ok(fixed)
}

/// Full fix-or-discard pipeline on a verified trajectory.
///
/// `Accepted` when the original bad-index is clear; otherwise classify,
/// repair every run, and re-validate the fixed trajectory with the same
/// criteria (kinematics unconditionally, geometric only where matches are
/// stored; the database check gates geometry but repaired frames carry no
/// statistics). `Fixed` when the post-fix bad-index, restricted to repaired
/// and previously-good transitions, is all-zero.
#[allow(clippy::too_many_arguments)]
pub fn repair_and_revalidate(
    traj: &Trajectory,
    report: &CheckReport,
    stats: &[PairStats],
    matches: &[MatchSet],
    model: Option<&SparseModel>,
    check_cfg: &CheckConfig,
    repair_cfg: &RepairConfig,
    seed: u64,
) -> Result<RepairResult, VerifyError> {
    repair_cfg
        .validate()
        .map_err(|e| VerifyError::InvalidConfig(e.to_string()))?;

    if report.bad_index.all_clear() {
        return Ok(RepairResult {
            outcome: RepairOutcome::Accepted,
            post_fix_bad_count: None,
        });
    }

    let runs = match classify_bad_runs(&report.bad_index, repair_cfg) {
        RunClassification::Discard(reason) => {
            return Ok(RepairResult {
                outcome: RepairOutcome::Discarded { reason },
                post_fix_bad_count: None,
            })
        }
        RunClassification::Fixable(runs) => runs,
    };

    let fixed = match apply_repairs(traj, &runs, repair_cfg) {
        Ok(fixed) => fixed,
        Err(RepairError::CapExceeded { .. }) => {
            return Ok(RepairResult {
                outcome: RepairOutcome::Discarded {
                    reason: DiscardReason::CapExceeded,
                },
                post_fix_bad_count: None,
            })
        }
        Err(RepairError::BoundaryUnfixable | RepairError::MissingAnchor { .. }) => {
            return Ok(RepairResult {
                outcome: RepairOutcome::Discarded {
                    reason: DiscardReason::BoundaryUnfixable,
                },
                post_fix_bad_count: None,
            })
        }
        Err(RepairError::InvalidConfig(msg)) => return Err(VerifyError::InvalidConfig(msg)),
    };

    let post = run_checks_for_revalidation(&fixed, stats, matches, model, check_cfg, seed)?;
    let post_count = post.bad_index.count_bad();
    let in_some_run = |t: usize| runs.iter().any(|&(s, e)| t >= s && t <= e);
    let clean_in_scope = post
        .bad_index
        .bits()
        .iter()
        .enumerate()
        .all(|(t, &bit)| !bit || !(in_some_run(t) || !report.bad_index.bits()[t]));

    if clean_in_scope {
        Ok(RepairResult {
            outcome: RepairOutcome::Fixed {
                trajectory: fixed,
                repaired_runs: runs,
            },
            post_fix_bad_count: Some(post_count),
        })
    } else {
        Ok(RepairResult {
            outcome: RepairOutcome::Discarded {
                reason: DiscardReason::RevalidationFailed,
            },
            post_fix_bad_count: Some(post_count),
        })
    }
}

/// Per-video verdict record, emitted into the same report stream as the
/// per-transition check records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub video_id: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<DiscardReason>,
    pub repaired_runs: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub post_fix_bad_count: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Fixed,
    Discarded,
}

impl VerdictRecord {
    pub fn from_result(video_id: impl Into<String>, result: &RepairResult) -> Self {
        let (verdict, reason, repaired_runs) = match &result.outcome {
            RepairOutcome::Accepted => (Verdict::Accepted, None, Vec::new()),
            RepairOutcome::Fixed { repaired_runs, .. } => (
                Verdict::Fixed,
                None,
                repaired_runs.iter().map(|&(s, e)| [s, e]).collect(),
            ),
            RepairOutcome::Discarded { reason } => (Verdict::Discarded, Some(*reason), Vec::new()),
        };
        Self {
            video_id: video_id.into(),
            verdict,
            reason,
            repaired_runs,
            post_fix_bad_count: result.post_fix_bad_count,
        }
    }
}
