//! File formats consumed and produced by the pipeline.
//!
//! Two families live here:
//!
//! - COLMAP **text** sparse-model files (`cameras.txt`, `images.txt`) in
//!   [`colmap`]; the binary model format and `points3D.txt` are out of scope.
//! - Line-delimited JSON record streams in [`records`]: pair statistics,
//!   match sets, trajectories, check reports and repair verdicts. One JSON
//!   object per line; a header record leads streams that need one.
//!
//! Every parser is total over its grammar: a line either parses or produces
//! an error carrying its 1-based line number. Nothing is silently skipped.

pub mod colmap;
pub mod records;

use std::cmp::Ordering;

use thiserror::Error;

pub use colmap::{parse_colmap_cameras, parse_colmap_images, ParsedImages, SparseModel};
pub use records::{
    read_matches, read_pair_stats, read_trajectory, write_matches, write_pair_stats,
    write_trajectory, MatchSet, PairStats, TrajectoryRead,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unsupported camera model {model}")]
    UnsupportedModel { line: usize, model: String },
    #[error("line {line}: duplicate image name {name}")]
    DuplicateImage { line: usize, name: String },
    #[error("line {line}: duplicate time_step {time_step}")]
    DuplicateTimeStep { line: usize, time_step: i64 },
    #[error("line {line}: {msg}")]
    Validation { line: usize, msg: String },
    #[error("missing header record")]
    MissingHeader,
    #[error("line {line}: invalid JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Pose(#[from] crate::pose::PoseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Natural ordering for frame names: digit runs compare numerically, other
/// runs compare byte-wise, so `f2.png < f10.png`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let ab = a.as_bytes();
    let bb = b.as_bytes();
    let (mut i, mut j) = (0, 0);
    while i < ab.len() && j < bb.len() {
        let (ca, cb) = (ab[i], bb[j]);
        if ca.is_ascii_digit() && cb.is_ascii_digit() {
            let si = i;
            while i < ab.len() && ab[i].is_ascii_digit() {
                i += 1;
            }
            let sj = j;
            while j < bb.len() && bb[j].is_ascii_digit() {
                j += 1;
            }
            let da = a[si..i].trim_start_matches('0');
            let db = b[sj..j].trim_start_matches('0');
            let ord = da
                .len()
                .cmp(&db.len())
                .then_with(|| da.cmp(db))
                // Equal value: fewer leading zeros sorts first, keeping the
                // ordering total and deterministic.
                .then_with(|| (i - si).cmp(&(j - sj)));
            if ord != Ordering::Equal {
                return ord;
            }
        } else {
            if ca != cb {
                return ca.cmp(&cb);
            }
            i += 1;
            j += 1;
        }
    }
    (ab.len() - i).cmp(&(bb.len() - j))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_ordering_numeric_runs() {
        assert_eq!(natural_cmp("f2.png", "f10.png"), Ordering::Less);
        assert_eq!(natural_cmp("f010.png", "f10.png"), Ordering::Greater);
        assert_eq!(natural_cmp("f10.png", "f10.png"), Ordering::Equal);
        assert_eq!(natural_cmp("a9b", "a10a"), Ordering::Less);
        assert_eq!(natural_cmp("frame_100", "frame_99"), Ordering::Greater);
    }

    #[test]
    fn natural_ordering_plain_text() {
        assert_eq!(natural_cmp("abc", "abd"), Ordering::Less);
        assert_eq!(natural_cmp("abc", "ab"), Ordering::Greater);
    }
}
