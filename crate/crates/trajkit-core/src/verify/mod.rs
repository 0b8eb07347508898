//! Three-stage trajectory verification: a database check over SfM pair
//! statistics, a geometric check that re-estimates essential matrices for
//! suspicious pairs, and a kinematics check over the pose sequence. The
//! per-transition outcomes are fused into a binary bad-index that drives the
//! repair policy.
//!
//! Database suspicion only *gates* the geometric check; it never sets the
//! fused bit by itself.

pub mod epipolar;
pub mod mad;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use epipolar::{
    essential_distance, estimate_essential, normalized_correspondences, project_to_essential,
    skew, symmetric_epipolar_error, EssentialEstimate, RANSAC_ITERATIONS,
};
pub use mad::robust_mad_scores;

use crate::io::{IoError, MatchSet, PairStats, SparseModel};
use crate::pose::{geodesic_angle, Trajectory};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("insufficient data: need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("insufficient matches: need at least {needed}, got {got}")]
    InsufficientMatches { needed: usize, got: usize },
    #[error("degenerate geometry (rank collapse / near-zero baseline)")]
    DegenerateGeometry,
    #[error("numerical failure in linear algebra routine")]
    NumericalFailure,
    #[error("flag sequences disagree in length: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid check config: {0}")]
    InvalidConfig(String),
}

/// Which axis the forward-flip diagnostic compares between consecutive poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardAxisMode {
    /// Camera optical axis (`R^T z`), the default.
    #[default]
    Optical,
    /// Direction of center motion; alternate diagnostic.
    Velocity,
}

/// Thresholds of the three checks. All configurable; the defaults are the
/// conventional values (modified z-score cutoff 3.5, 30-inlier / 0.3-ratio
/// pair sanity floors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    pub min_inliers: u64,
    pub min_inlier_ratio: f64,
    /// Symmetric epipolar error threshold in normalized coordinates.
    pub epipolar_threshold: f64,
    pub epipolar_inlier_floor: f64,
    pub mad_score_threshold: f64,
    pub forward_flip_angle_deg: f64,
    pub mad_epsilon: f64,
    pub forward_axis: ForwardAxisMode,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            min_inliers: 30,
            min_inlier_ratio: 0.3,
            epipolar_threshold: 0.01,
            epipolar_inlier_floor: 0.5,
            mad_score_threshold: 3.5,
            forward_flip_angle_deg: 90.0,
            mad_epsilon: 1e-9,
            forward_axis: ForwardAxisMode::Optical,
        }
    }
}

impl CheckConfig {
    pub fn validate(&self) -> Result<(), VerifyError> {
        let positive = [
            ("epipolar_threshold", self.epipolar_threshold),
            ("mad_score_threshold", self.mad_score_threshold),
            ("forward_flip_angle_deg", self.forward_flip_angle_deg),
            ("mad_epsilon", self.mad_epsilon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(VerifyError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.min_inliers == 0 {
            return Err(VerifyError::InvalidConfig(
                "min_inliers must be positive".into(),
            ));
        }
        for (name, v) in [
            ("min_inlier_ratio", self.min_inlier_ratio),
            ("epipolar_inlier_floor", self.epipolar_inlier_floor),
        ] {
            if !(v.is_finite() && v > 0.0 && v <= 1.0) {
                return Err(VerifyError::InvalidConfig(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-transition diagnostic flags and scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionFlags {
    pub suspicious_db: bool,
    pub bad_geometric: bool,
    pub bad_kinematic: bool,
    pub scores: BTreeMap<String, f64>,
}

/// The fused binary flag sequence over consecutive-frame transitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BadIndex {
    bits: Vec<bool>,
}

impl BadIndex {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_bad(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bad_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count_bad() as f64 / self.bits.len() as f64
        }
    }

    pub fn all_clear(&self) -> bool {
        self.count_bad() == 0
    }

    /// Maximal runs of consecutive set bits as inclusive transition ranges.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &b) in self.bits.iter().enumerate() {
            match (b, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.bits.len() - 1));
        }
        runs
    }
}

/// Database check: a transition is suspicious iff its pair record is missing,
/// has fewer than `min_inliers` inliers, or an inlier ratio below
/// `min_inlier_ratio`.
pub fn database_check(traj: &Trajectory, stats: &[PairStats], cfg: &CheckConfig) -> Vec<bool> {
    let mut by_pair: BTreeMap<(&str, &str), &PairStats> = BTreeMap::new();
    for s in stats {
        by_pair.entry((s.image_a.as_str(), s.image_b.as_str())).or_insert(s);
    }
    traj.poses()
        .windows(2)
        .map(|w| {
            let a = w[0].frame_name.as_str();
            let b = w[1].frame_name.as_str();
            match by_pair.get(&(a, b)).or_else(|| by_pair.get(&(b, a))) {
                Some(s) => s.num_inliers < cfg.min_inliers || s.inlier_ratio < cfg.min_inlier_ratio,
                None => true,
            }
        })
        .collect()
}

/// Outcome of the geometric check, with per-transition diagnostics where the
/// check actually ran.
#[derive(Debug, Clone)]
pub struct GeometricCheck {
    pub bad: Vec<bool>,
    pub median_errors: Vec<Option<f64>>,
    pub inlier_fractions: Vec<Option<f64>>,
}

/// Geometric check over the transitions flagged suspicious by the database
/// check. A suspicious transition is bad iff its matches are missing, the
/// essential estimation fails, the median symmetric epipolar error exceeds
/// `epipolar_threshold`, or the inlier fraction under the recomputed model is
/// below `epipolar_inlier_floor`.
///
/// With `require_matches = false` (re-validation after repair), suspicious
/// transitions without stored matches are skipped instead of marked bad.
pub fn geometric_check(
    traj: &Trajectory,
    suspicious: &[bool],
    matches: &[MatchSet],
    model: Option<&SparseModel>,
    cfg: &CheckConfig,
    seed: u64,
    require_matches: bool,
) -> Result<GeometricCheck, VerifyError> {
    let n = traj.transition_count();
    if suspicious.len() != n {
        return Err(VerifyError::LengthMismatch {
            expected: n,
            got: suspicious.len(),
        });
    }
    let mut by_pair: BTreeMap<(&str, &str), &MatchSet> = BTreeMap::new();
    for m in matches {
        by_pair.entry((m.image_a.as_str(), m.image_b.as_str())).or_insert(m);
    }

    let mut bad = vec![false; n];
    let mut median_errors = vec![None; n];
    let mut inlier_fractions = vec![None; n];

    for (i, w) in traj.poses().windows(2).enumerate() {
        if !suspicious[i] {
            continue;
        }
        let a = w[0].frame_name.as_str();
        let b = w[1].frame_name.as_str();
        let (set, flipped) = match by_pair.get(&(a, b)) {
            Some(m) => ((*m).clone(), false),
            None => match by_pair.get(&(b, a)) {
                Some(m) => ((*m).clone(), true),
                None => {
                    bad[i] = require_matches;
                    continue;
                }
            },
        };
        let set = if flipped { set.reversed() } else { set };

        let intr = model.and_then(|m| {
            m.intrinsics_for_frame(a)
                .zip(m.intrinsics_for_frame(b))
        });
        let (ka, kb) = match intr {
            Some(pair) => pair,
            None => {
                // Matches exist but cannot be normalized; suspicion stands.
                bad[i] = true;
                continue;
            }
        };

        match estimate_essential(&set, ka, kb, cfg, seed.wrapping_add(i as u64)) {
            Ok(est) => {
                median_errors[i] = Some(est.median_error);
                inlier_fractions[i] = Some(est.inlier_fraction);
                bad[i] = est.median_error > cfg.epipolar_threshold
                    || est.inlier_fraction < cfg.epipolar_inlier_floor;
            }
            Err(
                VerifyError::InsufficientMatches { .. }
                | VerifyError::DegenerateGeometry
                | VerifyError::NumericalFailure,
            ) => {
                bad[i] = true;
            }
            Err(other) => return Err(other),
        }
    }
    Ok(GeometricCheck {
        bad,
        median_errors,
        inlier_fractions,
    })
}

/// Outcome of the kinematics check with the per-transition diagnostic values.
#[derive(Debug, Clone)]
pub struct KinematicsCheck {
    pub bad: Vec<bool>,
    /// Modified z-scores over center step lengths.
    pub translation_spike: Vec<f64>,
    /// Modified z-scores over per-transition geodesic rotation angles.
    pub rotation_jump: Vec<f64>,
    /// Raw angle between consecutive forward axes, degrees.
    pub forward_angle_deg: Vec<f64>,
    /// Second-difference z-scores, attributed to both adjacent transitions
    /// (max over attributions).
    pub smoothness: Vec<f64>,
}

/// Kinematics check over the full pose sequence: translation spikes, rotation
/// jumps, forward-axis flips and second-difference smoothness violations.
/// A transition is bad iff a MAD score exceeds `mad_score_threshold` on the
/// upper tail (its raw value above the series median) or the forward-flip
/// angle exceeds `forward_flip_angle_deg`.
///
/// Only the upper tail flags: the diagnostics hunt excess motion, and values
/// below the median (e.g. the exactly-zero second differences a linear
/// repair leaves behind) are maximally plausible, not violations. The
/// two-sided scores are still reported.
pub fn kinematics_check(traj: &Trajectory, cfg: &CheckConfig) -> Result<KinematicsCheck, VerifyError> {
    let n = traj.len();
    if n < 4 {
        return Err(VerifyError::InsufficientData { needed: 4, got: n });
    }
    let poses = traj.poses();
    let centers: Vec<_> = poses.iter().map(|p| p.center()).collect();

    let steps: Vec<f64> = centers.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let translation_spike = robust_mad_scores(&steps, cfg.mad_epsilon)?;
    let step_median = mad::median(&steps);

    let angles: Vec<f64> = poses
        .windows(2)
        .map(|w| geodesic_angle(&w[0].rotation, &w[1].rotation))
        .collect();
    let rotation_jump = robust_mad_scores(&angles, cfg.mad_epsilon)?;
    let angle_median = mad::median(&angles);

    let forward_angle_deg: Vec<f64> = match cfg.forward_axis {
        ForwardAxisMode::Optical => poses
            .windows(2)
            .map(|w| {
                let fa = w[0].forward();
                let fb = w[1].forward();
                fa.dot(&fb).clamp(-1.0, 1.0).acos().to_degrees()
            })
            .collect(),
        ForwardAxisMode::Velocity => {
            let deltas: Vec<_> = centers.windows(2).map(|w| w[1] - w[0]).collect();
            (0..deltas.len())
                .map(|i| {
                    if i + 1 >= deltas.len() {
                        return 0.0;
                    }
                    let (a, b) = (&deltas[i], &deltas[i + 1]);
                    if a.norm() < 1e-12 || b.norm() < 1e-12 {
                        0.0
                    } else {
                        (a.dot(b) / (a.norm() * b.norm()))
                            .clamp(-1.0, 1.0)
                            .acos()
                            .to_degrees()
                    }
                })
                .collect()
        }
    };

    // Second differences are indexed by interior pose p in 1..=n-2 and span
    // transitions p-1 and p.
    let second_diffs: Vec<f64> = (1..n - 1)
        .map(|p| (centers[p + 1] - 2.0 * centers[p] + centers[p - 1]).norm())
        .collect();
    let second_scores = robust_mad_scores(&second_diffs, cfg.mad_epsilon)?;
    let second_median = mad::median(&second_diffs);
    let mut smoothness = vec![0.0f64; n - 1];
    let mut smoothness_bad = vec![false; n - 1];
    for (k, &score) in second_scores.iter().enumerate() {
        let p = k + 1;
        let flags = score > cfg.mad_score_threshold && second_diffs[k] > second_median;
        for t in [p - 1, p] {
            if t < smoothness.len() {
                smoothness[t] = smoothness[t].max(score);
                smoothness_bad[t] |= flags;
            }
        }
    }

    let bad = (0..n - 1)
        .map(|i| {
            (translation_spike[i] > cfg.mad_score_threshold && steps[i] > step_median)
                || (rotation_jump[i] > cfg.mad_score_threshold && angles[i] > angle_median)
                || forward_angle_deg[i] > cfg.forward_flip_angle_deg
                || smoothness_bad[i]
        })
        .collect();

    Ok(KinematicsCheck {
        bad,
        translation_spike,
        rotation_jump,
        forward_angle_deg,
        smoothness,
    })
}

/// Fuse per-check flags: `bit = bad_geometric OR bad_kinematic`. Database
/// suspicion is not fused; it only gates the geometric check.
pub fn fuse_bad_index(
    suspicious_db: &[bool],
    bad_geometric: &[bool],
    bad_kinematic: &[bool],
) -> Result<BadIndex, VerifyError> {
    let n = suspicious_db.len();
    for flags in [bad_geometric, bad_kinematic] {
        if flags.len() != n {
            return Err(VerifyError::LengthMismatch {
                expected: n,
                got: flags.len(),
            });
        }
    }
    Ok(BadIndex::new(
        bad_geometric
            .iter()
            .zip(bad_kinematic)
            .map(|(&g, &k)| g || k)
            .collect(),
    ))
}

/// Full check report: per-transition flags and scores plus the fused index.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub seed: u64,
    pub transitions: Vec<TransitionRecord>,
    pub bad_index: BadIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub transition: usize,
    pub image_a: String,
    pub image_b: String,
    #[serde(flatten)]
    pub flags: TransitionFlags,
    pub fused: bool,
}

/// Run all three checks on a trajectory and fuse the result.
///
/// The geometric check runs only on database-suspicious transitions. During
/// re-validation (`require_matches = false` via
/// [`run_checks_for_revalidation`]) suspicious transitions without stored
/// matches are skipped rather than marked bad, since repaired poses have no
/// match statistics.
pub fn run_checks(
    traj: &Trajectory,
    stats: &[PairStats],
    matches: &[MatchSet],
    model: Option<&SparseModel>,
    cfg: &CheckConfig,
    seed: u64,
) -> Result<CheckReport, VerifyError> {
    run_checks_inner(traj, stats, matches, model, cfg, seed, true)
}

/// [`run_checks`] with the re-validation rule for missing matches.
pub fn run_checks_for_revalidation(
    traj: &Trajectory,
    stats: &[PairStats],
    matches: &[MatchSet],
    model: Option<&SparseModel>,
    cfg: &CheckConfig,
    seed: u64,
) -> Result<CheckReport, VerifyError> {
    run_checks_inner(traj, stats, matches, model, cfg, seed, false)
}

fn run_checks_inner(
    traj: &Trajectory,
    stats: &[PairStats],
    matches: &[MatchSet],
    model: Option<&SparseModel>,
    cfg: &CheckConfig,
    seed: u64,
    require_matches: bool,
) -> Result<CheckReport, VerifyError> {
    cfg.validate()?;
    let suspicious = database_check(traj, stats, cfg);
    let geometric = geometric_check(traj, &suspicious, matches, model, cfg, seed, require_matches)?;
    let kinematics = kinematics_check(traj, cfg)?;
    let bad_index = fuse_bad_index(&suspicious, &geometric.bad, &kinematics.bad)?;

    let transitions = traj
        .poses()
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let mut scores = BTreeMap::new();
            scores.insert("translation_spike".to_string(), kinematics.translation_spike[i]);
            scores.insert("rotation_jump".to_string(), kinematics.rotation_jump[i]);
            scores.insert("forward_angle_deg".to_string(), kinematics.forward_angle_deg[i]);
            scores.insert("smoothness".to_string(), kinematics.smoothness[i]);
            if let Some(m) = geometric.median_errors[i] {
                scores.insert("epipolar_median".to_string(), m);
            }
            if let Some(f) = geometric.inlier_fractions[i] {
                scores.insert("epipolar_inlier_fraction".to_string(), f);
            }
            TransitionRecord {
                transition: i,
                image_a: w[0].frame_name.clone(),
                image_b: w[1].frame_name.clone(),
                flags: TransitionFlags {
                    suspicious_db: suspicious[i],
                    bad_geometric: geometric.bad[i],
                    bad_kinematic: kinematics.bad[i],
                    scores,
                },
                fused: bad_index.bits()[i],
            }
        })
        .collect();

    Ok(CheckReport {
        seed,
        transitions,
        bad_index,
    })
}

#[derive(Serialize, Deserialize)]
struct ReportHeader {
    seed: u64,
    transitions: usize,
}

/// Write a check report as a line-delimited record stream: one header record
/// followed by one record per transition.
pub fn write_check_report<W: Write>(mut writer: W, report: &CheckReport) -> Result<(), IoError> {
    let header = ReportHeader {
        seed: report.seed,
        transitions: report.transitions.len(),
    };
    serde_json::to_writer(&mut writer, &header).map_err(|source| IoError::Json {
        line: 0,
        source,
    })?;
    writer.write_all(b"\n")?;
    for rec in &report.transitions {
        serde_json::to_writer(&mut writer, rec).map_err(|source| IoError::Json {
            line: 0,
            source,
        })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read back a check report written by [`write_check_report`].
pub fn read_check_report<R: BufRead>(reader: R) -> Result<CheckReport, IoError> {
    let mut header: Option<ReportHeader> = None;
    let mut transitions: Vec<TransitionRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(serde_json::from_str(&line).map_err(|_| IoError::MissingHeader)?);
            continue;
        }
        transitions.push(serde_json::from_str(&line).map_err(|source| IoError::Json {
            line: line_no,
            source,
        })?);
    }
    let header = header.ok_or(IoError::MissingHeader)?;
    let bits = transitions.iter().map(|t| t.fused).collect();
    Ok(CheckReport {
        seed: header.seed,
        transitions,
        bad_index: BadIndex::new(bits),
    })
}
