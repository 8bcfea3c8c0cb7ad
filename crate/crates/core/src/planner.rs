//! Waypoint selection for static and coverage-driven dynamic flights.

use std::fmt::Write as _;

use crate::error::{Result, ScanError};
use crate::geometry::{angle_diff, azimuth_about, Vec3};
use crate::reconstruct::{SliceCoverageReport, SliceModel};
use crate::uav::{point_on_circle, Target, TrajectoryPlan, UavState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryMode {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub center: Vec3,
    pub radius: f64,
    /// Flight altitude of UAV 0.
    pub altitude: f64,
    pub mode: TrajectoryMode,
    pub max_visits_per_slice: usize,
    /// Extra altitude of UAV 1 in dual flights.
    pub dual_altitude_offset: f64,
}

impl PlannerConfig {
    pub fn new(center: Vec3, radius: f64, altitude: f64, mode: TrajectoryMode) -> Result<Self> {
        if !(radius > 0.0) || !(altitude > 0.0) {
            return Err(ScanError::bad_config("planner radius and altitude must be positive"));
        }
        Ok(Self {
            center,
            radius,
            altitude,
            mode,
            max_visits_per_slice: 4,
            dual_altitude_offset: 0.10,
        })
    }

    pub fn altitude_for(&self, uav_id: usize) -> f64 {
        if uav_id == 1 {
            self.altitude + self.dual_altitude_offset
        } else {
            self.altitude
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChoiceReason {
    Uncovered,
    /// Fallback for the second UAV when only one slice is uncovered.
    RevisitLowest,
}

impl ChoiceReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChoiceReason::Uncovered => "uncovered",
            ChoiceReason::RevisitLowest => "revisit_lowest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceChoice {
    pub slice: usize,
    pub target: Target,
    pub reason: ChoiceReason,
}

fn slice_target(slice: usize, model: &SliceModel, cfg: &PlannerConfig, uav_id: usize) -> Target {
    point_on_circle(&cfg.center, cfg.radius, cfg.altitude_for(uav_id), model.slice_center_azimuth(slice))
}

/// Nearest eligible slice to `azimuth` among `candidates`; ties go to the
/// lower index.
fn nearest_slice(candidates: impl Iterator<Item = usize>, azimuth: f64, model: &SliceModel) -> Option<usize> {
    candidates
        .map(|s| (angle_diff(azimuth, model.slice_center_azimuth(s)).abs(), s))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, s)| s)
}

fn eligible(visits: &[usize], cfg: &PlannerConfig, slice: usize) -> bool {
    visits.get(slice).copied().unwrap_or(0) < cfg.max_visits_per_slice
}

/// Picks the uncovered slice closest to the UAV, skipping `exclude` and
/// slices at their visit cap. `None` means the mission is complete for this
/// UAV (everything covered, caps reached, or no images left).
pub fn next_waypoint_dynamic_excluding(
    report: &SliceCoverageReport,
    state: &UavState,
    cfg: &PlannerConfig,
    model: &SliceModel,
    visits: &[usize],
    images_remaining: Option<usize>,
    exclude: &[usize],
) -> Option<SliceChoice> {
    if images_remaining == Some(0) {
        return None;
    }
    let az = azimuth_about(&state.true_pose.position, &cfg.center);
    let slice = nearest_slice(
        report
            .uncovered()
            .into_iter()
            .filter(|s| eligible(visits, cfg, *s) && !exclude.contains(s)),
        az,
        model,
    )?;
    Some(SliceChoice {
        slice,
        target: slice_target(slice, model, cfg, state.id),
        reason: ChoiceReason::Uncovered,
    })
}

pub fn next_waypoint_dynamic(
    report: &SliceCoverageReport,
    state: &UavState,
    cfg: &PlannerConfig,
    model: &SliceModel,
    visits: &[usize],
    images_remaining: Option<usize>,
) -> Option<SliceChoice> {
    next_waypoint_dynamic_excluding(report, state, cfg, model, visits, images_remaining, &[])
}

pub fn next_waypoint_static(plan: &mut TrajectoryPlan) -> Option<Target> {
    let t = plan.waypoints.get(plan.cursor).copied()?;
    plan.cursor += 1;
    Some(t)
}

/// Joint choice for two UAVs: UAV 0 first, UAV 1 takes the best remaining
/// uncovered slice, or revisits the lowest-scoring covered slice when only
/// one is uncovered.
pub fn assign_dual(
    report: &SliceCoverageReport,
    states: [&UavState; 2],
    cfg: &PlannerConfig,
    model: &SliceModel,
    visits: &[usize],
    images_remaining: Option<usize>,
) -> [Option<SliceChoice>; 2] {
    let first = next_waypoint_dynamic(report, states[0], cfg, model, visits, images_remaining);
    let Some(first) = first else {
        return [None, None];
    };
    let taken = [first.slice];
    let second = next_waypoint_dynamic_excluding(report, states[1], cfg, model, visits, images_remaining, &taken)
        .or_else(|| {
            let slice = (0..model.slice_count)
                .filter(|&s| report.covered[s] && s != first.slice && eligible(visits, cfg, s))
                .min_by(|&a, &b| report.scores[a].cmp(&report.scores[b]).then(a.cmp(&b)))?;
            Some(SliceChoice {
                slice,
                target: slice_target(slice, model, cfg, states[1].id),
                reason: ChoiceReason::RevisitLowest,
            })
        });
    [Some(first), second]
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLogRow {
    pub t: f64,
    pub uav_id: usize,
    pub chosen_slice: Option<usize>,
    pub reason: String,
}

pub fn decision_log_csv(rows: &[DecisionLogRow]) -> String {
    let mut s = String::from("t,uav_id,chosen_slice,reason\n");
    for r in rows {
        let slice = r.chosen_slice.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{:.3},{},{},{}", r.t, r.uav_id, slice, r.reason);
    }
    s
}
