//! Essential-matrix estimation (normalized 8-point inside a seeded robust
//! sampling loop) and the symmetric epipolar error.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CheckConfig, VerifyError};
use crate::io::MatchSet;
use crate::pose::Intrinsics;

/// Iteration count of the robust sampling loop. Fixed so that runs are
/// reproducible given the seed recorded in the check report.
pub const RANSAC_ITERATIONS: usize = 200;

/// Relative singular-value cutoff below which the epipolar design matrix is
/// treated as rank-deficient (nullspace dimension > 1, e.g. zero baseline).
const RANK_COLLAPSE_RATIO: f64 = 1e-9;

/// An essential-matrix estimate with its consensus diagnostics.
#[derive(Debug, Clone)]
pub struct EssentialEstimate {
    /// Singular values projected to (1, 1, 0); Frobenius norm sqrt(2).
    pub e: Matrix3<f64>,
    /// Indices of correspondences within `epipolar_threshold` of the model.
    pub inliers: Vec<usize>,
    /// Inlier count / defined-error count.
    pub inlier_fraction: f64,
    /// Median symmetric epipolar error over correspondences with a defined
    /// error.
    pub median_error: f64,
}

/// Symmetric epipolar error of one normalized correspondence under `E`:
/// `sqrt((xb' E xa)^2 * (1/((E xa)_1^2 + (E xa)_2^2) + 1/((E' xb)_1^2 + (E' xb)_2^2)))`.
///
/// Returns `None` when both epipolar-line normals vanish (below 1e-12), the
/// undefined case excluded from aggregation. If only one side degenerates the
/// remaining one-sided distance is used.
pub fn symmetric_epipolar_error(
    e: &Matrix3<f64>,
    xa: [f64; 2],
    xb: [f64; 2],
) -> Option<f64> {
    let pa = Vector3::new(xa[0], xa[1], 1.0);
    let pb = Vector3::new(xb[0], xb[1], 1.0);
    let la = e * pa;
    let lb = e.transpose() * pb;
    let residual = pb.dot(&la);
    let na = la.x * la.x + la.y * la.y;
    let nb = lb.x * lb.x + lb.y * lb.y;
    let mut d = 0.0;
    let mut defined = false;
    if na >= 1e-12 {
        d += residual * residual / na;
        defined = true;
    }
    if nb >= 1e-12 {
        d += residual * residual / nb;
        defined = true;
    }
    defined.then(|| d.sqrt())
}

/// Normalize pixel correspondences with the two cameras' intrinsics.
pub fn normalized_correspondences(
    matches: &MatchSet,
    ka: &Intrinsics,
    kb: &Intrinsics,
) -> Vec<([f64; 2], [f64; 2])> {
    matches
        .correspondences
        .iter()
        .map(|&(pa, pb)| (ka.normalize(pa), kb.normalize(pb)))
        .collect()
}

/// Solve `xb^T E xa = 0` in the least-squares sense over the given
/// correspondence subset and project onto the essential manifold.
fn solve_eight_point(
    corr: &[([f64; 2], [f64; 2])],
    subset: &[usize],
) -> Result<Matrix3<f64>, VerifyError> {
    let n = subset.len();
    debug_assert!(n >= 8);
    let mut a = DMatrix::<f64>::zeros(n, 9);
    for (row, &idx) in subset.iter().enumerate() {
        let (xa, xb) = corr[idx];
        let pa = [xa[0], xa[1], 1.0];
        let pb = [xb[0], xb[1], 1.0];
        for i in 0..3 {
            for j in 0..3 {
                a[(row, 3 * i + j)] = pb[i] * pa[j];
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or(VerifyError::NumericalFailure)?;
    let mut sv: Vec<(usize, f64)> = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .collect();
    sv.sort_by(|a, b| b.1.total_cmp(&a.1));
    // More than a one-dimensional nullspace means the geometry does not
    // constrain E (pure rotation / zero baseline).
    if sv.len() >= 9 && sv[0].1 > 0.0 && sv[7].1 / sv[0].1 < RANK_COLLAPSE_RATIO {
        return Err(VerifyError::DegenerateGeometry);
    }
    let null_idx = sv.last().unwrap().0;
    let e_vec = v_t.row(null_idx);
    let raw = Matrix3::from_iterator(e_vec.iter().copied()).transpose();
    project_to_essential(&raw)
}

/// Project an arbitrary 3x3 matrix onto the essential manifold with singular
/// values exactly (1, 1, 0), so the Frobenius norm is sqrt(2).
pub fn project_to_essential(m: &Matrix3<f64>) -> Result<Matrix3<f64>, VerifyError> {
    let svd = m.svd(true, true);
    let u = svd.u.ok_or(VerifyError::NumericalFailure)?;
    let v_t = svd.v_t.ok_or(VerifyError::NumericalFailure)?;
    let s = svd.singular_values;
    // nalgebra returns singular values sorted descending.
    if s[1] < RANK_COLLAPSE_RATIO * s[0].max(f64::MIN_POSITIVE) {
        return Err(VerifyError::DegenerateGeometry);
    }
    let mut d = Matrix3::zeros();
    d[(0, 0)] = 1.0;
    d[(1, 1)] = 1.0;
    Ok(u * d * v_t)
}

/// Estimate the essential matrix of a match set from pixel correspondences.
///
/// Pixels are normalized by the intrinsics first; a fixed-seed sampling loop
/// of [`RANSAC_ITERATIONS`] iterations scores minimal 8-point hypotheses by
/// inlier count at `cfg.epipolar_threshold`, and the model is refit on the
/// best consensus set.
pub fn estimate_essential(
    matches: &MatchSet,
    ka: &Intrinsics,
    kb: &Intrinsics,
    cfg: &CheckConfig,
    seed: u64,
) -> Result<EssentialEstimate, VerifyError> {
    let corr = normalized_correspondences(matches, ka, kb);
    let n = corr.len();
    if n < 8 {
        return Err(VerifyError::InsufficientMatches { needed: 8, got: n });
    }

    let all: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Matrix3<f64>)> = None;
    let mut degenerate_hypotheses = 0usize;

    for _ in 0..RANSAC_ITERATIONS {
        let subset: Vec<usize> = sample(&mut rng, n, 8).into_iter().collect();
        let e = match solve_eight_point(&corr, &subset) {
            Ok(e) => e,
            Err(VerifyError::DegenerateGeometry) => {
                degenerate_hypotheses += 1;
                continue;
            }
            Err(other) => return Err(other),
        };
        let count = corr
            .iter()
            .filter(|&&(xa, xb)| {
                symmetric_epipolar_error(&e, xa, xb)
                    .is_some_and(|d| d < cfg.epipolar_threshold)
            })
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, e));
        }
    }

    let (best_count, best_e) = match best {
        Some(b) => b,
        None => {
            return Err(if degenerate_hypotheses > 0 {
                VerifyError::DegenerateGeometry
            } else {
                VerifyError::NumericalFailure
            })
        }
    };

    // Refit on the consensus set (fall back to all correspondences when the
    // consensus is too small to constrain the solve).
    let consensus: Vec<usize> = corr
        .iter()
        .enumerate()
        .filter(|(_, &(xa, xb))| {
            symmetric_epipolar_error(&best_e, xa, xb)
                .is_some_and(|d| d < cfg.epipolar_threshold)
        })
        .map(|(i, _)| i)
        .collect();
    let refit_set = if consensus.len() >= 8 { &consensus } else { &all };
    let e = solve_eight_point(&corr, refit_set)?;
    let _ = best_count;

    let mut errors = Vec::with_capacity(n);
    let mut inliers = Vec::new();
    for (i, &(xa, xb)) in corr.iter().enumerate() {
        if let Some(d) = symmetric_epipolar_error(&e, xa, xb) {
            if d < cfg.epipolar_threshold {
                inliers.push(i);
            }
            errors.push(d);
        }
    }
    if errors.is_empty() {
        return Err(VerifyError::DegenerateGeometry);
    }
    errors.sort_by(|a, b| a.total_cmp(b));
    let median_error = if errors.len().is_multiple_of(2) {
        0.5 * (errors[errors.len() / 2 - 1] + errors[errors.len() / 2])
    } else {
        errors[errors.len() / 2]
    };
    let inlier_fraction = inliers.len() as f64 / errors.len() as f64;
    Ok(EssentialEstimate {
        e,
        inliers,
        inlier_fraction,
        median_error,
    })
}

/// `[t]x` cross-product matrix.
pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Frobenius distance between two essential matrices after resolving the
/// sign ambiguity (both are assumed scale-normalized already).
pub fn essential_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let b_aligned = if dot < 0.0 { -b } else { *b };
    (a - b_aligned).norm()
}
