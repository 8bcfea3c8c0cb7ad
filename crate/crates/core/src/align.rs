//! Frame recovery: closed-form similarity fitting, coarse bounding-box/PCA
//! alignment, ICP refinement and UWB/SfM camera pose fusion.

use nalgebra::SVD;
use rayon::prelude::*;

use crate::capture::Observation;
use crate::error::{Result, ScanError};
use crate::geometry::{aabb, apply_similarity, centroid, pca, rot_z, Mat3, PointCloud, Pose, SimilarityTransform, Vec3};
use crate::metrics::symmetric_chamfer;
use crate::spatial::{median, PointGrid};

/// Closed-form least-squares similarity (Umeyama) mapping sources onto
/// targets. Without `with_scale` the scale is fixed to 1.
pub fn umeyama_fit(pairs: &[(Vec3, Vec3)], with_scale: bool) -> Result<SimilarityTransform> {
    if pairs.len() < 3 {
        return Err(ScanError::degenerate("similarity fit needs at least 3 pairs"));
    }
    let sources = PointCloud::new(pairs.iter().map(|p| p.0).collect());
    // Rejects collinear or coincident sources.
    pca(&sources)?;

    let n = pairs.len() as f64;
    let mu_s = pairs.iter().fold(Vec3::zeros(), |a, p| a + p.0) / n;
    let mu_t = pairs.iter().fold(Vec3::zeros(), |a, p| a + p.1) / n;
    let mut cov = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, t) in pairs {
        let ds = s - mu_s;
        cov += (t - mu_t) * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    var_s /= n;

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(ScanError::degenerate("SVD failed")),
    };
    let mut d = Mat3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
        trace / var_s
    } else {
        1.0
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(ScanError::degenerate("non-positive fitted scale"));
    }
    let translation = mu_t - rotation * mu_s * scale;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Ratio of the target bounding-box diagonal to the source's.
pub fn scale_from_aabb(source: &PointCloud, target: &PointCloud) -> Result<f64> {
    let ds = aabb(source)?.diagonal();
    let dt = aabb(target)?.diagonal();
    if ds <= 1e-9 || dt <= 1e-9 {
        return Err(ScanError::degenerate("bounding box diagonal too small"));
    }
    Ok(dt / ds)
}

/// Every fourth-ish point, at most `max` of them, deterministic.
fn stride_subsample(cloud: &PointCloud, max: usize) -> PointCloud {
    if cloud.len() <= max {
        return cloud.clone();
    }
    let idx: Vec<usize> = (0..max).map(|k| k * cloud.len() / max).collect();
    cloud.select(&idx)
}

const PROPER_SIGN_FLIPS: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];

/// Eigenvalue ratio above which two principal axes count as interchangeable.
const NEAR_DEGENERATE_RATIO: f64 = 0.8;

/// Coarse transform for a candidate rotation: bounding-box scale plus
/// centroid matching.
fn coarse_transform(rotation: Mat3, scale: f64, c_src: &Vec3, c_tgt: &Vec3) -> SimilarityTransform {
    SimilarityTransform {
        scale,
        rotation,
        translation: c_tgt - rotation * c_src * scale,
    }
}

/// Rotation mapping the source principal frame onto the target's.
///
/// The four proper sign assignments are scored by symmetric chamfer distance
/// after bounding-box scaling and centroid matching. When either cloud has
/// two principal variances within [`NEAR_DEGENERATE_RATIO`] of each other,
/// the corresponding axis swaps are scored as well.
pub fn orient_pca(source: &PointCloud, target: &PointCloud) -> Result<Mat3> {
    Ok(orientation_candidates(source, target)?[0].1)
}

/// Every candidate rotation scored by [`orient_pca`], best first.
pub fn orientation_candidates(source: &PointCloud, target: &PointCloud) -> Result<Vec<(f64, Mat3)>> {
    let (a_s, l_s) = pca(source)?;
    let (a_t, l_t) = pca(target)?;
    let scale = scale_from_aabb(source, target)?;
    let c_s = centroid(source)?;
    let c_t = centroid(target)?;

    let near = |l: &Vec3, i: usize| l[i + 1] > NEAR_DEGENERATE_RATIO * l[i];
    let mut perms: Vec<[usize; 3]> = vec![[0, 1, 2]];
    if near(&l_s, 0) || near(&l_t, 0) {
        perms.push([1, 0, 2]);
    }
    if near(&l_s, 1) || near(&l_t, 1) {
        perms.push([0, 2, 1]);
    }

    let src_sub = stride_subsample(source, 1500);
    let tgt_sub = stride_subsample(target, 1500);
    let mut scored = Vec::new();
    for perm in &perms {
        // Permuted target axes; odd permutations flip handedness.
        let mut a_tp = Mat3::from_columns(&[a_t.column(perm[0]), a_t.column(perm[1]), a_t.column(perm[2])]);
        if a_tp.determinant() < 0.0 {
            a_tp.set_column(2, &(-a_tp.column(2)));
        }
        for flips in PROPER_SIGN_FLIPS {
            let f = Mat3::from_diagonal(&Vec3::from(flips));
            let r = a_tp * f * a_s.transpose();
            let t = coarse_transform(r, scale, &c_s, &c_t);
            let moved = apply_similarity(&t, &src_sub);
            let cd = symmetric_chamfer(&moved, &tgt_sub)?;
            scored.push((cd, r));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(scored)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop when the rmse improves by less than this.
    pub min_improvement: f64,
    /// Pairs farther than this multiple of the median pair distance are dropped.
    pub rejection_factor: f64,
    /// Optional absolute cap on pair distance.
    pub max_pair_distance: Option<f64>,
    pub with_scale: bool,
    /// Source points used per iteration (deterministic stride subsample).
    pub max_source_points: usize,
    /// Also match target points back to the source. Right for whole-object
    /// clouds; a partial view registered onto a larger cloud needs `false`.
    pub bidirectional: bool,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            min_improvement: 1e-6,
            rejection_factor: 3.0,
            max_pair_distance: None,
            with_scale: true,
            max_source_points: 4000,
            bidirectional: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: SimilarityTransform,
    pub rmse: f64,
    /// Rmse of every accepted iterate, starting with the initial transform.
    pub history: Vec<f64>,
}

/// Nearest-neighbour pairs (both directions when enabled) between `transform(source)`
/// and `target`, after rejection, with their rmse. Matching both ways keeps
/// the scale estimate from collapsing toward the interior of the target.
fn correspondences(
    source: &[Vec3],
    target: &[Vec3],
    target_grid: &PointGrid<'_>,
    transform: &SimilarityTransform,
    params: &IcpParams,
) -> Result<(Vec<(Vec3, Vec3)>, f64)> {
    let moved: Vec<Vec3> = source.iter().map(|p| transform.apply(p)).collect();
    let mut matches: Vec<(Vec3, Vec3, f64)> = moved
        .par_iter()
        .zip(source)
        .filter_map(|(m, s)| target_grid.nearest(m).map(|(j, d)| (*s, target[j], d)))
        .collect();
    if let Some(moved_grid) = params.bidirectional.then(|| PointGrid::new(&moved, 4)).flatten() {
        let back: Vec<(Vec3, Vec3, f64)> = target
            .par_iter()
            .filter_map(|t| moved_grid.nearest(t).map(|(i, d)| (source[i], *t, d)))
            .collect();
        matches.extend(back);
    }
    let mut dists: Vec<f64> = matches.iter().map(|m| m.2).collect();
    let cutoff = params.rejection_factor * median(&mut dists);
    let cutoff = params.max_pair_distance.map_or(cutoff, |m| cutoff.min(m));
    let kept: Vec<&(Vec3, Vec3, f64)> = matches.iter().filter(|m| m.2 <= cutoff).collect();
    if kept.len() < 3 {
        return Err(ScanError::NoCorrespondences);
    }
    let rmse = (kept.iter().map(|m| m.2 * m.2).sum::<f64>() / kept.len() as f64).sqrt();
    Ok((kept.iter().map(|m| (m.0, m.1)).collect(), rmse))
}

/// Point-to-point ICP with closed-form similarity updates. The returned
/// transform is the accepted iterate with the lowest rmse.
pub fn icp_refine(
    source: &PointCloud,
    target: &PointCloud,
    init: &SimilarityTransform,
    params: &IcpParams,
) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(ScanError::EmptyInput);
    }
    let src = stride_subsample(source, params.max_source_points);
    let tgt = stride_subsample(target, params.max_source_points);
    let grid = PointGrid::new(&tgt.points, 4).ok_or(ScanError::EmptyInput)?;

    // The iterate keeps moving even when a step does not improve; only
    // improving steps are accepted into the result.
    let mut current = *init;
    let (mut pairs, mut rmse) = correspondences(&src.points, &tgt.points, &grid, &current, params)?;
    let mut best = current;
    let mut best_rmse = rmse;
    let mut history = vec![rmse];
    for _ in 0..params.max_iterations {
        let candidate = match umeyama_fit(&pairs, params.with_scale) {
            Ok(t) => t,
            Err(_) => break,
        };
        (pairs, rmse) = match correspondences(&src.points, &tgt.points, &grid, &candidate, params) {
            Ok(v) => v,
            Err(_) => break,
        };
        current = candidate;
        if rmse <= best_rmse {
            let improvement = best_rmse - rmse;
            best = current;
            best_rmse = rmse;
            history.push(rmse);
            if improvement < params.min_improvement {
                break;
            }
        }
    }
    Ok(IcpResult {
        transform: best,
        rmse: best_rmse,
        history,
    })
}

/// Full chain: bounding-box scale, PCA orientation, centroid translation,
/// then ICP. Sign and axis ambiguities are settled by a subsampled ICP from every
/// orientation candidate; the full ICP then starts from the best of them.
pub fn align_clouds(source: &PointCloud, target: &PointCloud, params: &IcpParams) -> Result<IcpResult> {
    let scale = scale_from_aabb(source, target)?;
    let (c_s, c_t) = (centroid(source)?, centroid(target)?);
    let probe = IcpParams {
        max_source_points: params.max_source_points.min(800),
        ..*params
    };
    let src_sub = stride_subsample(source, 1500);
    let tgt_sub = stride_subsample(target, 1500);
    let mut best: Option<(f64, SimilarityTransform)> = None;
    for (_, rotation) in orientation_candidates(source, target)? {
        let init = coarse_transform(rotation, scale, &c_s, &c_t);
        let Ok(res) = icp_refine(source, target, &init, &probe) else { continue };
        // Chamfer without rejection penalizes unmatched structure.
        let cd = symmetric_chamfer(&apply_similarity(&res.transform, &src_sub), &tgt_sub)?;
        if best.as_ref().map_or(true, |b| cd < b.0) {
            best = Some((cd, res.transform));
        }
    }
    let (_, start) = best.ok_or(ScanError::NoCorrespondences)?;
    icp_refine(source, target, &start, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseSource {
    Sfm,
    UwbSubstituted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPose {
    pub obs_id: usize,
    pub pose: Pose,
    pub source: PoseSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    /// UWB/world frame to SfM frame.
    pub transform: SimilarityTransform,
    pub poses: Vec<FusedPose>,
}

/// Fits the UWB-to-SfM similarity on registered observations and gives
/// every observation an SfM-frame pose. Unregistered ones get their UWB
/// position mapped through the fit and the commanded yaw. With
/// `average_registered`, registered positions are averaged with the mapped
/// UWB position.
pub fn fuse_camera_poses(observations: &[Observation], average_registered: bool) -> Result<Fusion> {
    let pairs: Vec<(Vec3, Vec3)> = observations
        .iter()
        .filter_map(|o| o.sfm_pose.map(|p| (o.uwb_position, p.position)))
        .collect();
    if pairs.len() < 3 {
        return Err(ScanError::InsufficientAnchors { found: pairs.len() });
    }
    let transform = umeyama_fit(&pairs, true)?;
    let poses = observations
        .iter()
        .map(|o| match o.sfm_pose {
            Some(p) => {
                let position = if average_registered {
                    (p.position + transform.apply(&o.uwb_position)) * 0.5
                } else {
                    p.position
                };
                FusedPose {
                    obs_id: o.obs_id,
                    pose: Pose {
                        position,
                        orientation: p.orientation,
                    },
                    source: PoseSource::Sfm,
                }
            }
            None => FusedPose {
                obs_id: o.obs_id,
                pose: Pose {
                    position: transform.apply(&o.uwb_position),
                    orientation: transform.rotation * rot_z(o.commanded_yaw),
                },
                source: PoseSource::UwbSubstituted,
            },
        })
        .collect();
    Ok(Fusion { transform, poses })
}
