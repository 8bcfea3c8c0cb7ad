//! Near-real-time reconstruction: batch triggering, incremental merging,
//! background filtering, Euclidean clustering and per-slice coverage.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::TAU;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::capture::Observation;
use crate::error::{Result, ScanError};
use crate::geometry::{azimuth_about, wrap_tau, Aabb, PointCloud, Vec3};
use crate::spatial::{median, median_nn_spacing, PointGrid};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstantCloud {
    pub cloud: PointCloud,
    pub contributing_obs: Vec<usize>,
    pub last_update: f64,
}

/// Fixed angular partition of the flight circle into slices, grouped into
/// contiguous regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceModel {
    pub slice_count: usize,
    pub region_count: usize,
    pub center: Vec3,
}

impl Default for SliceModel {
    fn default() -> Self {
        Self {
            slice_count: 8,
            region_count: 4,
            center: Vec3::zeros(),
        }
    }
}

impl SliceModel {
    pub fn new(slice_count: usize, region_count: usize, center: Vec3) -> Result<Self> {
        if slice_count == 0 || region_count == 0 || slice_count % region_count != 0 {
            return Err(ScanError::bad_config(format!(
                "slice count {slice_count} must be a positive multiple of region count {region_count}"
            )));
        }
        Ok(Self {
            slice_count,
            region_count,
            center,
        })
    }

    pub fn slice_width(&self) -> f64 {
        TAU / self.slice_count as f64
    }

    pub fn region_of(&self, slice: usize) -> usize {
        slice / (self.slice_count / self.region_count)
    }

    pub fn slice_center_azimuth(&self, slice: usize) -> f64 {
        (slice as f64 + 0.5) * self.slice_width()
    }
}

pub fn slice_of_azimuth(azimuth: f64, model: &SliceModel) -> usize {
    let a = wrap_tau(azimuth);
    ((a / model.slice_width()).floor() as usize).min(model.slice_count - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerReason {
    SectionExit,
    Timeout,
    /// Forced merge at the end of a flight phase or at landing.
    Flush,
}

impl TriggerReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TriggerReason::SectionExit => "section_exit",
            TriggerReason::Timeout => "timeout",
            TriggerReason::Flush => "flush",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerPolicy {
    /// Idle time after the last capture that forces a merge, seconds.
    pub time_threshold: f64,
}

impl Default for TriggerPolicy {
    fn default() -> Self {
        Self { time_threshold: 3.0 }
    }
}

/// Smallest batch SfM can work with.
pub const MIN_BATCH: usize = 2;

/// Decides whether the pending images should be merged now.
///
/// `uav_slices` holds `(uav_id, current slice)` for every flying UAV. A
/// section exit fires when some UAV has pending images taken in a region
/// other than the one it is in now.
pub fn should_trigger(
    pending: &[Observation],
    policy: &TriggerPolicy,
    now: f64,
    uav_slices: &[(usize, usize)],
    model: &SliceModel,
) -> Option<TriggerReason> {
    if pending.len() < MIN_BATCH {
        return None;
    }
    let exited = uav_slices.iter().any(|&(uav, slice)| {
        let region = model.region_of(slice);
        pending
            .iter()
            .any(|o| o.uav_id == uav && model.region_of(o.slice_index) != region)
    });
    if exited {
        return Some(TriggerReason::SectionExit);
    }
    let last = pending.iter().map(|o| o.timestamp).fold(f64::NEG_INFINITY, f64::max);
    (now - last > policy.time_threshold).then_some(TriggerReason::Timeout)
}

fn voxel_key(p: &Vec3, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// Keeps the first point seen in each voxel of edge `voxel`.
pub fn voxel_thin(cloud: &PointCloud, voxel: f64) -> PointCloud {
    let mut seen = HashSet::with_capacity(cloud.len());
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| seen.insert(voxel_key(&cloud.points[i], voxel)))
        .collect();
    cloud.select(&keep)
}

/// Replaces the points of each occupied voxel by their mean, in order of
/// first occurrence. Normals are averaged and renormalised, falling back to
/// the first normal when they cancel out.
pub fn voxel_average(cloud: &PointCloud, voxel: f64) -> PointCloud {
    let mut slot: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(cloud.len() / 2);
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let k = *slot.entry(voxel_key(p, voxel)).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[k].push(i);
    }
    let mean = |idx: &[usize], v: &[Vec3]| idx.iter().map(|&i| v[i]).sum::<Vec3>() / idx.len() as f64;
    PointCloud {
        points: members.iter().map(|m| mean(m, &cloud.points)).collect(),
        normals: cloud.normals.as_ref().map(|ns| {
            members
                .iter()
                .map(|m| {
                    let n = mean(m, ns);
                    if n.norm() > 1e-9 { n.normalize() } else { ns[m[0]] }
                })
                .collect()
        }),
        feature_strength: cloud
            .feature_strength
            .as_ref()
            .map(|fs| members.iter().map(|m| m.iter().map(|&i| fs[i]).sum::<f64>() / m.len() as f64).collect()),
    }
}

/// Sorts the batch by (uav, timestamp), appends its points and voxel-thins
/// the result. Existing points keep their voxels.
pub fn merge_batch(ic: &InstantCloud, batch: &[Observation], voxel: f64) -> InstantCloud {
    if batch.is_empty() {
        return ic.clone();
    }
    let mut order: Vec<&Observation> = batch.iter().collect();
    order.sort_by(|a, b| a.uav_id.cmp(&b.uav_id).then(a.timestamp.total_cmp(&b.timestamp)));

    let mut merged = ic.cloud.clone();
    for o in &order {
        merged.extend(&o.points);
    }
    let mut out = InstantCloud {
        cloud: voxel_thin(&merged, voxel),
        contributing_obs: ic.contributing_obs.clone(),
        last_update: ic.last_update,
    };
    for o in &order {
        if !out.contributing_obs.contains(&o.obs_id) {
            out.contributing_obs.push(o.obs_id);
        }
        out.last_update = out.last_update.max(o.timestamp);
    }
    out
}

/// Points within `r_max` (inclusive) of `center`, order preserved.
pub fn filter_background(cloud: &PointCloud, center: &Vec3, r_max: f64) -> PointCloud {
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| (cloud.points[i] - center).norm() <= r_max)
        .collect();
    cloud.select(&keep)
}

/// Single-linkage components under `distance <= d`; components smaller than
/// `min_size` are dropped. Clusters are ordered by their smallest index and
/// hold ascending indices.
pub fn cluster_euclidean(cloud: &PointCloud, d: f64, min_size: usize) -> Vec<Vec<usize>> {
    let Some(bounds) = Aabb::from_points(cloud.points.iter()) else {
        return Vec::new();
    };
    // Cells about one linkage distance wide, capped for tiny `d`.
    let cell = d.max(bounds.extents().max() / 128.0);
    let grid = PointGrid::with_cell_size(&cloud.points, bounds, cell);
    let mut visited = vec![false; cloud.len()];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..cloud.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            grid.visit_within(&cloud.points[i], d, |j| {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            });
        }
        if members.len() >= min_size {
            members.sort_unstable();
            clusters.push(members);
        }
    }
    clusters
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Linkage distance; `None` uses 2.5x the median nearest-neighbour spacing.
    pub distance: Option<f64>,
    pub min_size: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            distance: None,
            min_size: 10,
        }
    }
}

impl ClusterParams {
    pub fn resolve_distance(&self, cloud: &PointCloud) -> f64 {
        self.distance
            .or_else(|| median_nn_spacing(&cloud.points).map(|s| 2.5 * s))
            .filter(|d| *d > 0.0)
            .unwrap_or(1e-3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceCoverageReport {
    pub scores: Vec<usize>,
    pub covered: Vec<bool>,
    /// Index into the clustering used for the score, if any.
    pub cluster_ids: Vec<Option<usize>>,
    pub threshold: f64,
}

impl SliceCoverageReport {
    pub fn empty(slice_count: usize, threshold: f64) -> Self {
        Self {
            scores: vec![0; slice_count],
            covered: vec![false; slice_count],
            cluster_ids: vec![None; slice_count],
            threshold,
        }
    }

    /// Re-evaluates coverage flags against a new threshold.
    pub fn with_threshold(&self, threshold: f64) -> Self {
        Self {
            covered: self.scores.iter().map(|&s| s as f64 > threshold).collect(),
            threshold,
            ..self.clone()
        }
    }

    pub fn uncovered(&self) -> Vec<usize> {
        (0..self.covered.len()).filter(|&s| !self.covered[s]).collect()
    }

    pub fn min_score(&self) -> usize {
        self.scores.iter().copied().min().unwrap_or(0)
    }
}

fn in_arc(az: f64, start: f64, width: f64) -> bool {
    wrap_tau(az - start) < width
}

/// Per-slice coverage of an (already background-filtered) cloud.
///
/// A cluster is a candidate for a slice when it has a point inside the slice
/// arc widened by half a slice on both sides; the slice score is the largest
/// candidate's point count inside the un-widened arc.
pub fn coverage_report(
    cloud: &PointCloud,
    model: &SliceModel,
    params: &ClusterParams,
    threshold: f64,
) -> SliceCoverageReport {
    if cloud.is_empty() {
        return SliceCoverageReport::empty(model.slice_count, threshold);
    }
    let d = params.resolve_distance(cloud);
    let clusters = cluster_euclidean(cloud, d, params.min_size);
    let azimuths: Vec<f64> = cloud.points.iter().map(|p| azimuth_about(p, &model.center)).collect();
    let width = model.slice_width();
    let per_region = model.slice_count / model.region_count;

    // Regions are independent; evaluate them in parallel.
    let per_slice: Vec<(usize, Option<usize>)> = (0..model.region_count)
        .into_par_iter()
        .flat_map_iter(|region| {
            let clusters = &clusters;
            let azimuths = &azimuths;
            (region * per_region..(region + 1) * per_region).map(move |slice| {
                let start = slice as f64 * width;
                let mut best: (usize, Option<usize>) = (0, None);
                for (cid, members) in clusters.iter().enumerate() {
                    let mut inside = 0;
                    let mut candidate = false;
                    for &i in members {
                        let a = azimuths[i];
                        if in_arc(a, start, width) {
                            inside += 1;
                            candidate = true;
                        } else if !candidate && in_arc(a, start - width / 2.0, 2.0 * width) {
                            candidate = true;
                        }
                    }
                    if candidate && (best.1.is_none() || inside > best.0) {
                        best = (inside, Some(cid));
                    }
                }
                best
            })
        })
        .collect();

    SliceCoverageReport {
        covered: per_slice.iter().map(|(s, _)| *s as f64 > threshold).collect(),
        scores: per_slice.iter().map(|(s, _)| *s).collect(),
        cluster_ids: per_slice.iter().map(|(_, c)| *c).collect(),
        threshold,
    }
}

/// How the coverage threshold is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// `factor` times the median slice score once the first circle is done.
    Calibrated { factor: f64 },
    Fixed(f64),
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::Calibrated { factor: 0.6 }
    }
}

pub fn calibrated_threshold(scores: &[usize], factor: f64) -> f64 {
    let mut v: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
    factor * median(&mut v)
}

/// Default background radius when the object extent is unknown: three times
/// the median distance of the points from their centroid.
pub fn default_r_max(cloud: &PointCloud, center: &Vec3) -> f64 {
    let mut d: Vec<f64> = cloud.points.iter().map(|p| (p - center).norm()).collect();
    3.0 * median(&mut d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageLogRow {
    pub trigger_id: usize,
    pub reason: TriggerReason,
    pub batch_size: usize,
    pub scores: Vec<usize>,
    pub latency_s: f64,
}

pub fn coverage_log_csv(rows: &[CoverageLogRow], slice_count: usize) -> String {
    let mut s = String::from("trigger_id,reason,batch_size");
    for k in 0..slice_count {
        let _ = write!(s, ",s{k}");
    }
    s.push_str(",latency_s\n");
    for r in rows {
        let _ = write!(s, "{},{},{}", r.trigger_id, r.reason.as_str(), r.batch_size);
        for v in &r.scores {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{:.6}", r.latency_s);
    }
    s
}
