//! Line-delimited JSON record streams: pair statistics, match sets and
//! trajectories.
//!
//! One JSON object per line. Field names are part of the exporter contract
//! and are rejected when unknown. Numeric round-trips are exact for integers
//! and bit-faithful for finite reals.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::pose::{CameraPose, Rotation, Trajectory};

/// Per-image-pair SfM statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    pub image_a: String,
    pub image_b: String,
    pub num_matches: u64,
    pub num_inliers: u64,
    pub inlier_ratio: f64,
}

impl PairStats {
    /// The ratio is always computed, never trusted from input.
    pub fn new(
        image_a: impl Into<String>,
        image_b: impl Into<String>,
        num_matches: u64,
        num_inliers: u64,
    ) -> Result<Self, String> {
        if num_inliers > num_matches {
            return Err(format!(
                "num_inliers {num_inliers} exceeds num_matches {num_matches}"
            ));
        }
        let inlier_ratio = if num_matches > 0 {
            num_inliers as f64 / num_matches as f64
        } else {
            0.0
        };
        Ok(Self {
            image_a: image_a.into(),
            image_b: image_b.into(),
            num_matches,
            num_inliers,
            inlier_ratio,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairStatsRecord {
    image_a: String,
    image_b: String,
    num_matches: u64,
    num_inliers: u64,
}

/// Point correspondences between two images, in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchSet {
    pub image_a: String,
    pub image_b: String,
    /// `[[xa, ya], [xb, yb]]` per correspondence.
    pub correspondences: Vec<([f64; 2], [f64; 2])>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.correspondences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correspondences.is_empty()
    }

    /// The same correspondences viewed from the other image.
    pub fn reversed(&self) -> MatchSet {
        MatchSet {
            image_a: self.image_b.clone(),
            image_b: self.image_a.clone(),
            correspondences: self.correspondences.iter().map(|&(a, b)| (b, a)).collect(),
        }
    }
}

pub fn read_pair_stats<R: BufRead>(reader: R) -> Result<Vec<PairStats>, IoError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairStatsRecord =
            serde_json::from_str(&line).map_err(|source| IoError::Json {
                line: line_no,
                source,
            })?;
        let stats = PairStats::new(rec.image_a, rec.image_b, rec.num_matches, rec.num_inliers)
            .map_err(|msg| IoError::Validation { line: line_no, msg })?;
        out.push(stats);
    }
    Ok(out)
}

pub fn write_pair_stats<W: Write>(mut writer: W, stats: &[PairStats]) -> Result<(), IoError> {
    for s in stats {
        let rec = PairStatsRecord {
            image_a: s.image_a.clone(),
            image_b: s.image_b.clone(),
            num_matches: s.num_matches,
            num_inliers: s.num_inliers,
        };
        serde_json::to_writer(&mut writer, &rec).map_err(|source| IoError::Json {
            line: 0,
            source,
        })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_matches<R: BufRead>(reader: R) -> Result<Vec<MatchSet>, IoError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let set: MatchSet = serde_json::from_str(&line).map_err(|source| IoError::Json {
            line: line_no,
            source,
        })?;
        out.push(set);
    }
    Ok(out)
}

pub fn write_matches<W: Write>(mut writer: W, sets: &[MatchSet]) -> Result<(), IoError> {
    for set in sets {
        serde_json::to_writer(&mut writer, set).map_err(|source| IoError::Json {
            line: 0,
            source,
        })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryHeader {
    pose_rate_hz: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    time_step: i64,
    frame_name: String,
    /// Quaternion `(w, x, y, z)`.
    q: [f64; 4],
    t: [f64; 3],
}

/// A trajectory read back from a record stream, with any non-fatal warnings
/// (currently: input poses arrived out of time order and were sorted).
#[derive(Debug, Clone)]
pub struct TrajectoryRead {
    pub trajectory: Trajectory,
    pub warnings: Vec<String>,
}

pub fn read_trajectory<R: BufRead>(reader: R) -> Result<TrajectoryRead, IoError> {
    let mut header: Option<TrajectoryHeader> = None;
    let mut poses: Vec<(usize, CameraPose)> = Vec::new();
    let mut warnings = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: TrajectoryHeader =
                serde_json::from_str(&line).map_err(|_| IoError::MissingHeader)?;
            header = Some(h);
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(&line).map_err(|source| IoError::Json {
            line: line_no,
            source,
        })?;
        let rotation = Rotation::from_quat_wxyz(rec.q[0], rec.q[1], rec.q[2], rec.q[3]).map_err(
            |e| IoError::Validation {
                line: line_no,
                msg: e.to_string(),
            },
        )?;
        let pose = CameraPose::new(
            rotation,
            nalgebra::Vector3::new(rec.t[0], rec.t[1], rec.t[2]),
            rec.time_step,
            rec.frame_name,
        )
        .map_err(|e| IoError::Validation {
            line: line_no,
            msg: e.to_string(),
        })?;
        if let Some((dup_line, _)) = poses
            .iter()
            .find(|(_, p)| p.time_step == pose.time_step)
        {
            let _ = dup_line;
            return Err(IoError::DuplicateTimeStep {
                line: line_no,
                time_step: pose.time_step,
            });
        }
        poses.push((line_no, pose));
    }

    let header = header.ok_or(IoError::MissingHeader)?;
    let sorted = poses.windows(2).all(|w| w[0].1.time_step < w[1].1.time_step);
    if !sorted {
        warnings.push("poses were not monotonic in time_step; sorted on read".to_string());
        poses.sort_by_key(|(_, p)| p.time_step);
    }
    let trajectory = Trajectory::new(
        poses.into_iter().map(|(_, p)| p).collect(),
        header.pose_rate_hz,
    )?;
    Ok(TrajectoryRead {
        trajectory,
        warnings,
    })
}

pub fn write_trajectory<W: Write>(mut writer: W, traj: &Trajectory) -> Result<(), IoError> {
    let header = TrajectoryHeader {
        pose_rate_hz: traj.pose_rate_hz(),
    };
    serde_json::to_writer(&mut writer, &header).map_err(|source| IoError::Json {
        line: 0,
        source,
    })?;
    writer.write_all(b"\n")?;
    for pose in traj.poses() {
        let rec = PoseRecord {
            time_step: pose.time_step,
            frame_name: pose.frame_name.clone(),
            q: pose.rotation.quat_wxyz(),
            t: [pose.translation.x, pose.translation.y, pose.translation.z],
        };
        serde_json::to_writer(&mut writer, &rec).map_err(|source| IoError::Json {
            line: 0,
            source,
        })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
