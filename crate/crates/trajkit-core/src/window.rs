//! Clip extraction, local memory-window sampling, diversity filtering and
//! query-pose selection.
//!
//! Window endpoints `(k_s, k_e)` obey the integer constraints
//! `t0 - L <= k_s <= t0` and `max(k_s, t0) + 1 <= k_e <= min(k_s + L, t1)`
//! (with `k_s` additionally clamped at 0). Sampling is uniform over the set
//! of feasible `(k_s, k_e)` pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{geodesic_angle, CameraPose, Trajectory};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window constraints infeasible for t0={t0}, t1={t1}, l_steps={l_steps}")]
    Infeasible { t0: i64, t1: i64, l_steps: i64 },
    #[error("no pose at time step {0}")]
    MissingPose(i64),
    #[error("need at least 2 poses, got {0}")]
    InsufficientPoses(usize),
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
}

/// One extracted clip: pose-rate steps `[t0, t1]` plus the generating
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub t0: i64,
    pub t1: i64,
    pub clip_seconds: f64,
    pub stride_seconds: f64,
}

pub const DEFAULT_CLIP_SECONDS: f64 = 5.0;
pub const DEFAULT_STRIDE_SECONDS: f64 = 1.0;
/// Memory-window bound, seconds.
pub const DEFAULT_WINDOW_SECONDS: f64 = 5.0;

/// A sampled local memory window `[k_s, k_e]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalWindow {
    pub k_s: i64,
    pub k_e: i64,
    pub l_steps: i64,
}

/// Keep thresholds of the diversity filter. A clip is kept when either its
/// path length or its total rotation clears the corresponding minimum, so
/// pure-rotation and pure-translation clips both survive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiversityConfig {
    pub min_path_length: f64,
    pub min_total_rotation_deg: f64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            min_path_length: 2.0,
            min_total_rotation_deg: 20.0,
        }
    }
}

impl DiversityConfig {
    pub fn validate(&self) -> Result<(), WindowError> {
        if self.min_path_length < 0.0 || self.min_total_rotation_deg < 0.0 {
            return Err(WindowError::InvalidSpec(
                "diversity thresholds must be >= 0".into(),
            ));
        }
        if self.min_path_length == 0.0 && self.min_total_rotation_deg == 0.0 {
            return Err(WindowError::InvalidSpec(
                "diversity thresholds must not both be 0".into(),
            ));
        }
        Ok(())
    }

    pub fn keeps(&self, path_length: f64, total_rotation_deg: f64) -> bool {
        path_length >= self.min_path_length || total_rotation_deg >= self.min_total_rotation_deg
    }
}

/// Convert a duration in seconds to an integer step count at the trajectory
/// pose rate. The product must be an integer number of steps.
pub fn seconds_to_steps(seconds: f64, pose_rate_hz: f64) -> Result<i64, WindowError> {
    let steps = seconds * pose_rate_hz;
    let rounded = steps.round();
    if (steps - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(WindowError::InvalidSpec(format!(
            "{seconds} s at {pose_rate_hz} Hz is not a positive whole number of steps"
        )));
    }
    Ok(rounded as i64)
}

/// Extract overlapping clips starting at the trajectory head: starts at
/// `0, stride, 2*stride, ...`, each `clip_seconds` long; the last clip ends
/// at or before the trajectory end. A trajectory shorter than one clip
/// yields no clips.
pub fn extract_clips(
    traj: &Trajectory,
    clip_seconds: f64,
    stride_seconds: f64,
) -> Result<Vec<ClipSpec>, WindowError> {
    if traj.len() < 2 {
        return Err(WindowError::InsufficientPoses(traj.len()));
    }
    let rate = traj.pose_rate_hz();
    let clip_steps = seconds_to_steps(clip_seconds, rate)?;
    let stride_steps = seconds_to_steps(stride_seconds, rate)?;
    let first = traj.poses().first().expect("nonempty").time_step;
    let last = traj.poses().last().expect("nonempty").time_step;
    let duration = last - first;
    if duration < clip_steps {
        return Ok(Vec::new());
    }
    let count = (duration - clip_steps) / stride_steps + 1;
    Ok((0..count)
        .map(|k| {
            let t0 = first + k * stride_steps;
            ClipSpec {
                t0,
                t1: t0 + clip_steps,
                clip_seconds,
                stride_seconds,
            }
        })
        .collect())
}

/// Start-time range admitting at least one valid window end:
/// `[max(0, t0 - L + 1), t0]`. The lower bound follows from
/// `k_e >= t0 + 1` forcing `k_s + L >= t0 + 1`.
pub fn feasible_ks_range(
    t0: i64,
    t1: i64,
    l_steps: i64,
) -> Result<std::ops::RangeInclusive<i64>, WindowError> {
    if t1 <= t0 || l_steps < 1 || t0 < 0 {
        return Err(WindowError::Infeasible { t0, t1, l_steps });
    }
    let lo = (t0 - l_steps + 1).max(0);
    Ok(lo..=t0)
}

/// Number of valid `k_e` choices for a given `k_s`.
fn ke_count(k_s: i64, t0: i64, t1: i64, l_steps: i64) -> i64 {
    let hi = (k_s + l_steps).min(t1);
    (hi - t0).max(0)
}

/// Sample a window uniformly over all feasible `(k_s, k_e)` pairs.
/// Deterministic given the seed.
pub fn sample_local_window(
    t0: i64,
    t1: i64,
    l_steps: i64,
    seed: u64,
) -> Result<LocalWindow, WindowError> {
    let ks_range = feasible_ks_range(t0, t1, l_steps)?;
    let total: i64 = ks_range.clone().map(|k| ke_count(k, t0, t1, l_steps)).sum();
    if total == 0 {
        return Err(WindowError::Infeasible { t0, t1, l_steps });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = rand::Rng::random_range(&mut rng, 0..total);
    for k_s in ks_range {
        let count = ke_count(k_s, t0, t1, l_steps);
        if pick < count {
            return Ok(LocalWindow {
                k_s,
                k_e: t0 + 1 + pick,
                l_steps,
            });
        }
        pick -= count;
    }
    unreachable!("pick is always within the pair count")
}

/// Path length (sum of center steps) and total rotation (sum of geodesic
/// angles, degrees) of a pose segment.
pub fn diversity_score(poses: &[CameraPose]) -> Result<(f64, f64), WindowError> {
    if poses.len() < 2 {
        return Err(WindowError::InsufficientPoses(poses.len()));
    }
    let path_length = poses
        .windows(2)
        .map(|w| (w[1].center() - w[0].center()).norm())
        .sum();
    let total_rotation_deg = poses
        .windows(2)
        .map(|w| geodesic_angle(&w[0].rotation, &w[1].rotation).to_degrees())
        .sum();
    Ok((path_length, total_rotation_deg))
}

/// The terminal pose `p_{t1}` of a clip is the retrieval query.
pub fn select_query_pose<'t>(
    clip: &ClipSpec,
    traj: &'t Trajectory,
) -> Result<&'t CameraPose, WindowError> {
    traj.pose_at_step(clip.t1)
        .ok_or(WindowError::MissingPose(clip.t1))
}

/// Poses of a trajectory within `[t0, t1]` inclusive.
pub fn segment(traj: &Trajectory, t0: i64, t1: i64) -> Vec<&CameraPose> {
    traj.poses()
        .iter()
        .filter(|p| p.time_step >= t0 && p.time_step <= t1)
        .collect()
}

/// Per-clip manifest record emitted by the windowing CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub video_id: String,
    pub t0: i64,
    pub t1: i64,
    pub k_s: i64,
    pub k_e: i64,
    pub kept: bool,
    pub path_length: f64,
    pub total_rotation: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Rotation;
    use crate::synth::generate_smooth_trajectory;
    use nalgebra::Vector3;
    use std::collections::BTreeMap;

    /// Brute-force enumeration of every (k_s, k_e) pair satisfying the
    /// window inequalities literally; the oracle for the sampler tests.
    #[allow(clippy::int_plus_one)] // inequalities written exactly as stated
    fn enumerate_pairs(t0: i64, t1: i64, l: i64) -> Vec<(i64, i64)> {
        let mut pairs = Vec::new();
        for k_s in 0..=t0 {
            if !(t0 - l <= k_s && k_s <= t0) {
                continue;
            }
            for k_e in (t0 + 1)..=t1 {
                if k_s.max(t0) + 1 <= k_e && k_e <= (k_s + l).min(t1) {
                    pairs.push((k_s, k_e));
                }
            }
        }
        pairs
    }

    #[test]
    fn clip_count_fifteen_second_video() {
        // 15 s at 4 Hz: 61 poses, 5 s clips, 1 s stride -> 11 clips.
        let traj = generate_smooth_trajectory(1, 61, 5);
        let clips = extract_clips(&traj, 5.0, 1.0).unwrap();
        assert_eq!(clips.len(), 11);
        assert_eq!(clips[0].t0, 0);
        assert_eq!(clips[0].t1, 20);
        assert_eq!(clips[10].t0, 40);
        assert_eq!(clips[10].t1, 60);
    }

    #[test]
    fn clip_exactly_one_for_clip_length_video() {
        let traj = generate_smooth_trajectory(2, 21, 3);
        let clips = extract_clips(&traj, 5.0, 1.0).unwrap();
        assert_eq!(clips.len(), 1);
    }

    #[test]
    fn clip_none_for_short_video() {
        // 4 s video: 17 poses at 4 Hz.
        let traj = generate_smooth_trajectory(3, 17, 3);
        let clips = extract_clips(&traj, 5.0, 1.0).unwrap();
        assert!(clips.is_empty());
    }

    #[test]
    fn clip_invariant_duration() {
        let traj = generate_smooth_trajectory(4, 61, 5);
        for clip in extract_clips(&traj, 5.0, 1.0).unwrap() {
            assert_eq!(clip.t1 - clip.t0, 20);
        }
    }

    #[test]
    fn consecutive_clips_overlap() {
        let traj = generate_smooth_trajectory(5, 61, 5);
        let clips = extract_clips(&traj, 5.0, 1.0).unwrap();
        for pair in clips.windows(2) {
            let overlap = pair[0].t1 - pair[1].t0;
            // 1 s stride on 5 s clips shares 4/5 of the steps.
            assert_eq!(overlap, 16);
        }
    }

    #[test]
    fn feasible_range_matches_enumeration() {
        for t0 in 0..20i64 {
            for t1 in t0 + 1..=25 {
                for l in 1..=12 {
                    let pairs = enumerate_pairs(t0, t1, l);
                    let expected: Vec<i64> = {
                        let mut ks: Vec<i64> = pairs.iter().map(|p| p.0).collect();
                        ks.dedup();
                        ks
                    };
                    let got: Vec<i64> = feasible_ks_range(t0, t1, l).unwrap().collect();
                    assert_eq!(got, expected, "t0={t0} t1={t1} l={l}");
                }
            }
        }
    }

    #[test]
    fn feasible_range_examples() {
        assert_eq!(feasible_ks_range(5, 10, 5).unwrap(), 1..=5);
        assert_eq!(feasible_ks_range(0, 10, 5).unwrap(), 0..=0);
        assert!(matches!(
            feasible_ks_range(5, 5, 5),
            Err(WindowError::Infeasible { .. })
        ));
    }

    #[test]
    #[allow(clippy::int_plus_one)] // inequalities written exactly as stated
    fn sampled_windows_satisfy_constraints() {
        for seed in 0..500u64 {
            let t0 = (seed % 13) as i64;
            let t1 = t0 + 1 + (seed % 17) as i64;
            let l = 1 + (seed % 9) as i64;
            let w = sample_local_window(t0, t1, l, seed).unwrap();
            assert!(t0 - l <= w.k_s && w.k_s <= t0, "k_s bound violated");
            assert!(w.k_s >= 0);
            assert!(w.k_s.max(t0) + 1 <= w.k_e);
            assert!(w.k_e <= (w.k_s + l).min(t1));
            assert!(w.k_e - w.k_s <= l);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_local_window(5, 10, 5, 99).unwrap();
        let b = sample_local_window(5, 10, 5, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ke_range_for_ks_at_t0() {
        // k_s = t0 = 5, t1 = 10, L = 5: k_e ranges over [6, 10].
        let mut seen = BTreeMap::new();
        for seed in 0..4000u64 {
            let w = sample_local_window(5, 10, 5, seed).unwrap();
            if w.k_s == 5 {
                *seen.entry(w.k_e).or_insert(0usize) += 1;
            }
        }
        let keys: Vec<i64> = seen.keys().copied().collect();
        assert_eq!(keys, vec![6, 7, 8, 9, 10]);
    }

    #[test]
    fn sampling_uniform_over_pairs() {
        let (t0, t1, l) = (5i64, 10i64, 5i64);
        let pairs = enumerate_pairs(t0, t1, l);
        let n_pairs = pairs.len() as f64;
        let draws = 100_000usize;
        let mut counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for seed in 0..draws as u64 {
            let w = sample_local_window(t0, t1, l, seed).unwrap();
            *counts.entry((w.k_s, w.k_e)).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), pairs.len());
        let expect = draws as f64 / n_pairs;
        let sigma = (draws as f64 * (1.0 / n_pairs) * (1.0 - 1.0 / n_pairs)).sqrt();
        for (&pair, &count) in &counts {
            let dev = (count as f64 - expect).abs();
            assert!(
                dev <= 3.0 * sigma + 1.0,
                "pair {pair:?}: count {count}, expect {expect:.1}, sigma {sigma:.1}"
            );
        }
    }

    #[test]
    fn diversity_static_camera_filtered() {
        let rot = Rotation::identity();
        let poses: Vec<CameraPose> = (0..10)
            .map(|i| {
                CameraPose::from_center(rot, Vector3::zeros(), i, format!("f{i}")).unwrap()
            })
            .collect();
        let (path, rot_deg) = diversity_score(&poses).unwrap();
        assert_eq!(path, 0.0);
        assert_eq!(rot_deg, 0.0);
        assert!(!DiversityConfig::default().keeps(path, rot_deg));
    }

    #[test]
    fn diversity_pure_rotation_kept() {
        let poses: Vec<CameraPose> = (0..13)
            .map(|i| {
                let rot = Rotation::from_axis_angle(&Vector3::y_axis(), (i as f64) * 10f64.to_radians());
                CameraPose::from_center(rot, Vector3::zeros(), i, format!("f{i}")).unwrap()
            })
            .collect();
        let (path, rot_deg) = diversity_score(&poses).unwrap();
        assert!(path < 1e-12);
        assert!((rot_deg - 120.0).abs() < 1e-9);
        // Kept whenever the rotation minimum is at most the 120-degree sum
        // (stay off the exact float boundary).
        let cfg = DiversityConfig {
            min_path_length: 2.0,
            min_total_rotation_deg: 119.9,
        };
        assert!(cfg.keeps(path, rot_deg));
    }

    #[test]
    fn diversity_straight_flight_kept() {
        let rot = Rotation::identity();
        let poses: Vec<CameraPose> = (0..11)
            .map(|i| {
                CameraPose::from_center(rot, Vector3::new(i as f64, 0.0, 0.0), i, format!("f{i}"))
                    .unwrap()
            })
            .collect();
        let (path, rot_deg) = diversity_score(&poses).unwrap();
        assert!((path - 10.0).abs() < 1e-12);
        assert_eq!(rot_deg, 0.0);
        let cfg = DiversityConfig {
            min_path_length: 10.0,
            min_total_rotation_deg: 45.0,
        };
        assert!(cfg.keeps(path, rot_deg));
    }

    #[test]
    fn query_pose_is_terminal() {
        let traj = generate_smooth_trajectory(6, 61, 5);
        let clips = extract_clips(&traj, 5.0, 1.0).unwrap();
        let q = select_query_pose(&clips[0], &traj).unwrap();
        assert_eq!(q.time_step, 20);
        let last = clips.last().unwrap();
        let q = select_query_pose(last, &traj).unwrap();
        assert_eq!(q.time_step, traj.poses().last().unwrap().time_step);
    }

    #[test]
    fn query_pose_missing_is_error() {
        let traj = generate_smooth_trajectory(7, 21, 3);
        let clip = ClipSpec {
            t0: 10,
            t1: 99,
            clip_seconds: 5.0,
            stride_seconds: 1.0,
        };
        assert!(matches!(
            select_query_pose(&clip, &traj),
            Err(WindowError::MissingPose(99))
        ));
    }

    #[test]
    fn diversity_config_validation() {
        assert!(DiversityConfig::default().validate().is_ok());
        let cfg = DiversityConfig {
            min_path_length: 0.0,
            min_total_rotation_deg: 0.0,
        };
        assert!(cfg.validate().is_err());
        let cfg = DiversityConfig {
            min_path_length: -1.0,
            min_total_rotation_deg: 5.0,
        };
        assert!(cfg.validate().is_err());
    }
}
