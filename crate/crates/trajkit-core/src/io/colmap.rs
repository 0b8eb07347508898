//! COLMAP text sparse-model parsing (`cameras.txt`, `images.txt`).
//!
//! Only the text format is supported; it is stable, diff-able and easy to
//! produce from any SfM export. Supported camera models are `PINHOLE`
//! (fx fy cx cy) and `SIMPLE_PINHOLE` (f cx cy).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::{natural_cmp, IoError};
use crate::pose::{CameraPose, Intrinsics, Rotation, Trajectory, DEFAULT_POSE_RATE_HZ};

/// Pre-normalization quaternion drift beyond which an image pose is tagged
/// with a warning.
const QUAT_DRIFT_WARN: f64 = 1e-3;

/// Parse a `cameras.txt` stream into an intrinsics table keyed by camera id.
pub fn parse_colmap_cameras(text: &str) -> Result<BTreeMap<u32, Intrinsics>, IoError> {
    let mut cameras = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(IoError::Syntax {
                line: line_no,
                msg: format!("expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS..., got {line:?}"),
            });
        }
        let camera_id: u32 = fields[0].parse().map_err(|_| IoError::Syntax {
            line: line_no,
            msg: format!("invalid camera id {:?}", fields[0]),
        })?;
        let model = fields[1];
        let width: u32 = fields[2].parse().map_err(|_| IoError::Syntax {
            line: line_no,
            msg: format!("invalid width {:?}", fields[2]),
        })?;
        let height: u32 = fields[3].parse().map_err(|_| IoError::Syntax {
            line: line_no,
            msg: format!("invalid height {:?}", fields[3]),
        })?;
        let params: Vec<f64> = fields[4..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| IoError::Syntax {
                    line: line_no,
                    msg: format!("invalid parameter {f:?}"),
                })
            })
            .collect::<Result<_, _>>()?;

        let intr = match model {
            "PINHOLE" => {
                if params.len() != 4 {
                    return Err(IoError::Syntax {
                        line: line_no,
                        msg: format!("PINHOLE expects 4 params, got {}", params.len()),
                    });
                }
                Intrinsics::new(params[0], params[1], params[2], params[3], width, height)
            }
            "SIMPLE_PINHOLE" => {
                if params.len() != 3 {
                    return Err(IoError::Syntax {
                        line: line_no,
                        msg: format!("SIMPLE_PINHOLE expects 3 params, got {}", params.len()),
                    });
                }
                Intrinsics::new(params[0], params[0], params[1], params[2], width, height)
            }
            other => {
                return Err(IoError::UnsupportedModel {
                    line: line_no,
                    model: other.to_string(),
                })
            }
        }
        .map_err(|e| IoError::Validation {
            line: line_no,
            msg: e.to_string(),
        })?;

        if cameras.insert(camera_id, intr).is_some() {
            return Err(IoError::Validation {
                line: line_no,
                msg: format!("duplicate camera id {camera_id}"),
            });
        }
    }
    Ok(cameras)
}

/// Result of parsing `images.txt`: registered poses keyed by frame name, the
/// camera id each frame was taken with, and any per-image warnings.
#[derive(Debug, Clone)]
pub struct ParsedImages {
    pub poses: BTreeMap<String, CameraPose>,
    pub camera_ids: BTreeMap<String, u32>,
    pub warnings: Vec<String>,
}

/// Parse an `images.txt` stream.
///
/// Each image spans two lines: the pose line
/// `IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME` and the 2D-point list,
/// which is ignored (and may be empty). Quaternions are normalized and
/// canonicalized; time steps are assigned by natural numeric ordering of the
/// frame names, independent of input line order.
pub fn parse_colmap_images(text: &str) -> Result<ParsedImages, IoError> {
    struct Pending {
        line: usize,
        rotation: Rotation,
        translation: Vector3<f64>,
        camera_id: u32,
    }

    let mut pending: BTreeMap<String, Pending> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut expecting_points = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.starts_with('#') {
            continue;
        }
        if expecting_points {
            // The 2D point list; content is ignored but the line is consumed.
            expecting_points = false;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 10 {
            return Err(IoError::Syntax {
                line: line_no,
                msg: format!(
                    "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME, got {line:?}"
                ),
            });
        }
        let nums: Vec<f64> = fields[1..8]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| IoError::Syntax {
                    line: line_no,
                    msg: format!("invalid number {f:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        let camera_id: u32 = fields[8].parse().map_err(|_| IoError::Syntax {
            line: line_no,
            msg: format!("invalid camera id {:?}", fields[8]),
        })?;
        let name = fields[9..].join(" ");

        let (qw, qx, qy, qz) = (nums[0], nums[1], nums[2], nums[3]);
        let norm = (qw * qw + qx * qx + qy * qy + qz * qz).sqrt();
        if (norm - 1.0).abs() > QUAT_DRIFT_WARN {
            warnings.push(format!(
                "line {line_no}: image {name:?} quaternion norm {norm:.6} drifted beyond {QUAT_DRIFT_WARN}; renormalized"
            ));
        }
        let rotation = Rotation::from_quat_wxyz(qw, qx, qy, qz).map_err(|e| IoError::Validation {
            line: line_no,
            msg: e.to_string(),
        })?;
        let translation = Vector3::new(nums[4], nums[5], nums[6]);

        if pending
            .insert(
                name.clone(),
                Pending {
                    line: line_no,
                    rotation,
                    translation,
                    camera_id,
                },
            )
            .is_some()
        {
            return Err(IoError::DuplicateImage {
                line: line_no,
                name,
            });
        }
        expecting_points = true;
    }

    // Assign time steps by natural name order.
    let mut names: Vec<&String> = pending.keys().collect();
    names.sort_by(|a, b| natural_cmp(a, b));
    let order: BTreeMap<String, i64> = names
        .iter()
        .enumerate()
        .map(|(i, n)| ((*n).clone(), i as i64))
        .collect();

    let mut poses = BTreeMap::new();
    let mut camera_ids = BTreeMap::new();
    for (name, p) in pending {
        let time_step = order[&name];
        let pose = CameraPose::new(p.rotation, p.translation, time_step, name.clone()).map_err(
            |e| IoError::Validation {
                line: p.line,
                msg: e.to_string(),
            },
        )?;
        poses.insert(name.clone(), pose);
        camera_ids.insert(name, p.camera_id);
    }
    Ok(ParsedImages {
        poses,
        camera_ids,
        warnings,
    })
}

/// A parsed sparse model: intrinsics per camera id plus the registered
/// image poses.
#[derive(Debug, Clone)]
pub struct SparseModel {
    cameras: BTreeMap<u32, Intrinsics>,
    images: BTreeMap<String, CameraPose>,
    camera_ids: BTreeMap<String, u32>,
    total_frame_count: usize,
    pub warnings: Vec<String>,
}

impl SparseModel {
    pub fn new(
        cameras: BTreeMap<u32, Intrinsics>,
        parsed: ParsedImages,
        total_frame_count: usize,
    ) -> Result<Self, IoError> {
        for (name, cam) in &parsed.camera_ids {
            if !cameras.contains_key(cam) {
                return Err(IoError::Validation {
                    line: 0,
                    msg: format!("image {name:?} references unknown camera id {cam}"),
                });
            }
        }
        if parsed.poses.len() > total_frame_count {
            return Err(IoError::Validation {
                line: 0,
                msg: format!(
                    "registered count {} exceeds total frame count {}",
                    parsed.poses.len(),
                    total_frame_count
                ),
            });
        }
        Ok(Self {
            cameras,
            images: parsed.poses,
            camera_ids: parsed.camera_ids,
            total_frame_count,
            warnings: parsed.warnings,
        })
    }

    /// Load `cameras.txt` and `images.txt` from a model directory. The total
    /// frame count defaults to the registered count; use
    /// [`SparseModel::with_total_frame_count`] when the source video had
    /// unregistered frames.
    pub fn from_dir(dir: &Path) -> Result<Self, IoError> {
        let cameras = parse_colmap_cameras(&fs::read_to_string(dir.join("cameras.txt"))?)?;
        let images = parse_colmap_images(&fs::read_to_string(dir.join("images.txt"))?)?;
        let total = images.poses.len();
        Self::new(cameras, images, total)
    }

    pub fn with_total_frame_count(mut self, total: usize) -> Result<Self, IoError> {
        if self.images.len() > total {
            return Err(IoError::Validation {
                line: 0,
                msg: format!(
                    "registered count {} exceeds total frame count {}",
                    self.images.len(),
                    total
                ),
            });
        }
        self.total_frame_count = total;
        Ok(self)
    }

    pub fn intrinsics(&self, camera_id: u32) -> Option<&Intrinsics> {
        self.cameras.get(&camera_id)
    }

    /// Intrinsics of the camera a frame was registered with.
    pub fn intrinsics_for_frame(&self, frame_name: &str) -> Option<&Intrinsics> {
        self.camera_ids
            .get(frame_name)
            .and_then(|id| self.cameras.get(id))
    }

    pub fn registered_images(&self) -> &BTreeMap<String, CameraPose> {
        &self.images
    }

    pub fn registered_count(&self) -> usize {
        self.images.len()
    }

    pub fn total_frame_count(&self) -> usize {
        self.total_frame_count
    }

    /// Registered poses as a trajectory ordered by time step.
    pub fn trajectory(&self, pose_rate_hz: Option<f64>) -> Result<Trajectory, IoError> {
        let mut poses: Vec<CameraPose> = self.images.values().cloned().collect();
        poses.sort_by_key(|p| p.time_step);
        Ok(Trajectory::new(
            poses,
            pose_rate_hz.unwrap_or(DEFAULT_POSE_RATE_HZ),
        )?)
    }
}
