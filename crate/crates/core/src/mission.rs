//! The mission loop: initial pair, capture/trigger/merge/plan cycle and
//! landing, followed by post-flight pose recovery and run persistence.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{fuse_camera_poses, icp_refine, IcpParams, PoseSource};
use crate::capture::{
    capture_observation, initial_pair, persist_observations, sfm_register, CaptureParams, CaptureScene,
    GaugeTransform, Observation, SfmFailureModel,
};
use crate::config::{MissionConfig, ObjectKind};
use crate::error::{Result, ScanError};
use crate::geometry::{aabb, angle_diff, apply_similarity, azimuth_about, rot_z, PointCloud, Pose, SimilarityTransform, Vec3};
use crate::planner::{
    assign_dual, decision_log_csv, next_waypoint_dynamic_excluding, DecisionLogRow, PlannerConfig, SliceChoice,
    TrajectoryMode,
};
use crate::ply;
use crate::reconstruct::{
    calibrated_threshold, coverage_log_csv, coverage_report, filter_background, merge_batch, should_trigger,
    slice_of_azimuth, voxel_average, ClusterParams, CoverageLogRow, InstantCloud, SliceCoverageReport, SliceModel,
    TriggerPolicy, TriggerReason,
};
use crate::scene::{build_engraved_box, build_tall_object, sample_surface, Camera, SceneObject};
use crate::spatial::median_nn_spacing;
use crate::uav::{
    facing_yaw, flight_log_csv, plan_static_circles, point_on_circle, step, uwb_estimate, FlightLogRow, Target,
    UavState, UwbNoiseModel, UwbStream,
};

/// Engraving layout of the box; the object is the same in every run.
const OBJECT_SEED: u64 = 17;
/// Surface samples used as the evaluation reference.
pub const REFERENCE_SEED: u64 = 1009;

// Independent rng streams derived from the mission seed.
const STREAM_SURFACE: u64 = 0x5eed_0001;
const STREAM_GAUGE: u64 = 0x5eed_0002;
const STREAM_CAPTURE: u64 = 0x5eed_0003;
const STREAM_SFM: u64 = 0x5eed_0004;
const STREAM_UWB: u64 = 0x5eed_0010;

fn stream(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag
}

/// Ground-truth object placed at its working position.
pub fn build_object(cfg: &MissionConfig) -> Result<SceneObject> {
    let s = &cfg.scene;
    let obj = match cfg.object {
        ObjectKind::EngravedBox => build_engraved_box(
            Vec3::new(s.box_length, s.box_width, s.box_height),
            s.engraving_depth,
            OBJECT_SEED,
        )?,
        ObjectKind::TallObject => build_tall_object(s.tall_height, s.tall_radius, s.tall_feature)?,
    };
    Ok(obj.translated(&object_center(cfg)))
}

pub fn object_center(cfg: &MissionConfig) -> Vec3 {
    Vec3::new(0.0, 0.0, cfg.scene.center_z)
}

/// Dense ground-truth samples used to score reconstructions.
pub fn reference_cloud(cfg: &MissionConfig) -> Result<PointCloud> {
    Ok(sample_surface(&build_object(cfg)?, cfg.eval.reference_samples, REFERENCE_SEED))
}

pub fn build_scene(cfg: &MissionConfig) -> Result<CaptureScene> {
    let object = build_object(cfg)?;
    let surface = sample_surface(&object, cfg.scene.surface_samples, stream(cfg.seed, STREAM_SURFACE));
    Ok(CaptureScene {
        object,
        surface,
        center: object_center(cfg),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    /// Waiting to fly to the second image of the initial pair.
    InitPair,
    /// Flying the predefined circles.
    Survey,
    /// Dynamic mode, waiting for a planner decision.
    Idle,
    /// Dynamic mode, flying to a chosen slice.
    Transit,
    /// Dynamic mode, capturing at a chosen slice until the given time.
    Hover(f64),
    Landed,
}

struct Agent {
    state: UavState,
    uwb: UwbStream,
    route: VecDeque<Target>,
    phase: Phase,
    active_slice: Option<usize>,
    first_circle_done: bool,
    /// Route length left when this UAV's share of the first circle is done.
    circle_mark: usize,
}

impl Agent {
    fn flying(&self) -> bool {
        self.phase != Phase::Landed
    }
}

#[derive(Debug, Clone)]
pub struct MissionOutput {
    pub config: MissionConfig,
    pub observations: Vec<Observation>,
    pub flight_log: Vec<FlightLogRow>,
    pub coverage_log: Vec<CoverageLogRow>,
    pub decisions: Vec<DecisionLogRow>,
    /// Instant-cloud snapshot after every trigger, when enabled.
    pub snapshots: Vec<PointCloud>,
    pub instant: InstantCloud,
    /// Coverage of the instant cloud at landing.
    pub final_report: SliceCoverageReport,
    pub threshold: f64,
    pub gauge: GaugeTransform,
    /// Post-flight cloud in the SfM frame.
    pub final_cloud: PointCloud,
    /// Observations that contributed a pose to the final cloud.
    pub used_obs: Vec<usize>,
    /// Fitted UWB-to-SfM transform (fused modes).
    pub uwb_to_sfm: Option<SimilarityTransform>,
    pub merge_latencies: Vec<f64>,
    pub mission_time: f64,
}

impl MissionOutput {
    pub fn images_taken(&self) -> usize {
        self.observations.len()
    }

    pub fn images_used(&self) -> usize {
        self.used_obs.len()
    }
}

/// Waypoints along the flight circle from `from_az` to `to_az` the short
/// way round, spaced at most `max_step` apart, ending at `end`.
fn arc_route(cfg: &PlannerConfig, uav: usize, from_az: f64, to_az: f64, max_step: f64, end: Target) -> VecDeque<Target> {
    let delta = angle_diff(from_az, to_az);
    let n = (delta.abs() / max_step).ceil() as usize;
    let mut route: VecDeque<Target> = (1..n)
        .map(|k| point_on_circle(&cfg.center, cfg.radius, cfg.altitude_for(uav), from_az + delta * k as f64 / n as f64))
        .collect();
    route.push_back(end);
    route
}

struct Loop<'a> {
    cfg: &'a MissionConfig,
    scene: &'a CaptureScene,
    slices: SliceModel,
    planner: PlannerConfig,
    policy: TriggerPolicy,
    capture_params: CaptureParams,
    sfm: SfmFailureModel,
    gauge: GaugeTransform,
    capture_rng: ChaCha8Rng,
    sfm_rng: ChaCha8Rng,
    voxel: f64,
    r_max: f64,
    threshold: Option<f64>,
    observations: Vec<Observation>,
    pending: Vec<Observation>,
    instant: InstantCloud,
    report: SliceCoverageReport,
    visits: Vec<usize>,
    flight_log: Vec<FlightLogRow>,
    coverage_log: Vec<CoverageLogRow>,
    decisions: Vec<DecisionLogRow>,
    snapshots: Vec<PointCloud>,
    latencies: Vec<f64>,
    anchors: usize,
}

impl Loop<'_> {
    fn budget_left(&self) -> bool {
        self.cfg.image_budget.map_or(true, |b| self.observations.len() < b)
    }

    fn capture(&mut self, agent: &Agent, commanded_yaw: f64) {
        let cam = Camera::with_defaults(agent.state.true_pose);
        let obs = capture_observation(
            self.scene,
            &agent.state,
            &cam,
            &self.capture_params,
            &self.slices,
            self.observations.len(),
            commanded_yaw,
            &mut self.capture_rng,
        );
        let obs = sfm_register(obs, &self.gauge, &self.sfm, &mut self.sfm_rng);
        if obs.sfm_pose.is_some() {
            self.anchors += 1;
        }
        self.observations.push(obs.clone());
        self.pending.push(obs);
    }

    /// Observations the near-RT reconstruction can place: registered ones,
    /// plus every other one in fused modes once the UWB fit has anchors.
    fn usable(&self, o: &Observation) -> bool {
        o.sfm_pose.is_some() || (self.cfg.mode.fused() && self.anchors >= 3)
    }

    fn merge(&mut self, reason: TriggerReason) {
        if self.pending.is_empty() {
            return;
        }
        let batch: Vec<Observation> = std::mem::take(&mut self.pending);
        let usable: Vec<Observation> = batch.iter().filter(|o| self.usable(o)).cloned().collect();
        let started = Instant::now();
        self.instant = merge_batch(&self.instant, &usable, self.voxel);
        self.report = self.coverage();
        let latency = started.elapsed().as_secs_f64();
        self.latencies.push(latency);
        self.coverage_log.push(CoverageLogRow {
            trigger_id: self.coverage_log.len(),
            reason,
            batch_size: batch.len(),
            scores: self.report.scores.clone(),
            latency_s: latency,
        });
        if self.cfg.reconstruct.write_snapshots {
            self.snapshots.push(self.instant.cloud.clone());
        }
    }

    fn coverage(&self) -> SliceCoverageReport {
        let filtered = filter_background(&self.instant.cloud, &self.scene.center, self.r_max);
        let distance = median_nn_spacing(&filtered.points).map(|s| s * self.cfg.reconstruct.cluster_factor);
        let params = ClusterParams {
            distance,
            min_size: self.cfg.reconstruct.cluster_min_size,
        };
        coverage_report(&filtered, &self.slices, &params, self.threshold.unwrap_or(f64::INFINITY))
    }

    fn calibrate(&mut self) {
        if self.threshold.is_some() {
            return;
        }
        self.merge(TriggerReason::Flush);
        let tau = calibrated_threshold(&self.report.scores, self.cfg.reconstruct.threshold_factor);
        self.threshold = Some(tau);
        self.report = self.report.with_threshold(tau);
    }

    fn decide(&mut self, t: f64, uav: usize, choice: Option<SliceChoice>) -> Option<SliceChoice> {
        self.decisions.push(DecisionLogRow {
            t,
            uav_id: uav,
            chosen_slice: choice.map(|c| c.slice),
            reason: choice.map_or("complete", |c| c.reason.as_str()).to_string(),
        });
        if let Some(c) = choice {
            self.visits[c.slice] += 1;
        }
        choice
    }
}

/// Runs one mission entirely in memory.
pub fn run_mission(cfg: &MissionConfig) -> Result<MissionOutput> {
    cfg.validate()?;
    let scene = build_scene(cfg)?;
    let center = scene.center;
    let bounds = scene.object.bounds();
    let diagonal = bounds.diagonal();
    let f = &cfg.flight;
    let mode = if cfg.mode.dynamic() { TrajectoryMode::Dynamic } else { TrajectoryMode::Static };
    let mut planner = PlannerConfig::new(center, f.radius, center.z, mode)?;
    planner.max_visits_per_slice = f.max_visits_per_slice;
    planner.dual_altitude_offset = f.dual_altitude_offset;
    let slices = SliceModel::new(cfg.reconstruct.slices, cfg.reconstruct.regions, center)?;

    let sfm = SfmFailureModel {
        p_base: cfg.sfm.p_base,
        f_ref: cfg.sfm.f_ref,
        rotation_sigma: cfg.sfm.rotation_sigma_deg.to_radians(),
        position_sigma: cfg.sfm.position_fraction * diagonal,
    };
    sfm.validate()?;
    let gauge = GaugeTransform::draw(&mut ChaCha8Rng::seed_from_u64(stream(cfg.seed, STREAM_GAUGE)));
    let uwb_model = UwbNoiseModel {
        sigma: cfg.uwb.sigma,
        bias_walk_sigma: cfg.uwb.bias_walk_sigma,
        smoothing_alpha: cfg.uwb.smoothing_alpha,
    };

    let mut lp = Loop {
        cfg,
        scene: &scene,
        slices,
        planner,
        policy: TriggerPolicy {
            time_threshold: cfg.reconstruct.time_threshold,
        },
        capture_params: CaptureParams {
            noise_sigma: cfg.capture.noise_sigma,
            point_budget: (cfg.capture.point_budget > 0).then_some(cfg.capture.point_budget),
        },
        sfm,
        gauge,
        capture_rng: ChaCha8Rng::seed_from_u64(stream(cfg.seed, STREAM_CAPTURE)),
        sfm_rng: ChaCha8Rng::seed_from_u64(stream(cfg.seed, STREAM_SFM)),
        voxel: cfg.reconstruct.voxel_fraction * diagonal,
        r_max: cfg.reconstruct.r_max_factor * diagonal / 2.0,
        threshold: (!cfg.reconstruct.calibrated).then_some(cfg.reconstruct.threshold_value),
        observations: Vec::new(),
        pending: Vec::new(),
        instant: InstantCloud::default(),
        report: SliceCoverageReport::empty(slices.slice_count, f64::INFINITY),
        visits: vec![0; slices.slice_count],
        flight_log: Vec::new(),
        coverage_log: Vec::new(),
        decisions: Vec::new(),
        snapshots: Vec::new(),
        latencies: Vec::new(),
        anchors: 0,
    };
    if let Some(tau) = lp.threshold {
        lp.report = lp.report.with_threshold(tau);
    }

    let mut agents: Vec<Agent> = (0..cfg.uav_count)
        .map(|id| {
            let start_az = if id == 0 { 0.0 } else { PI };
            let start = point_on_circle(&center, f.radius, planner.altitude_for(id), start_az);
            let uwb = UwbStream::new(uwb_model, stream(cfg.seed, STREAM_UWB + id as u64))?;
            Ok(Agent {
                state: UavState::new(id, Pose::from_yaw(start.position, start.yaw)),
                uwb,
                route: VecDeque::new(),
                phase: Phase::InitPair,
                active_slice: None,
                first_circle_done: false,
                circle_mark: 0,
            })
        })
        .collect::<Result<_>>()?;

    // Initial pair: the first image from the take-off position.
    for a in &mut agents {
        a.state.est_position = uwb_estimate(&a.state.true_pose.position, 0.0, &mut a.uwb);
        let [_, second] = initial_pair(&a.state, f.initial_drift, &center)?;
        a.route.push_back(second);
    }
    for k in 0..agents.len() {
        if lp.budget_left() {
            let yaw = agents[k].state.true_pose.yaw();
            lp.capture(&agents[k], yaw);
        }
    }

    // The UAVs start evenly spread, so the first full circle is complete once
    // each has flown its share of it. Static missions then keep flying their
    // laps; dynamic missions stop surveying there and start adapting.
    let circle_share = f.waypoints_per_circle.div_ceil(cfg.uav_count);
    let survey_waypoints = if !cfg.mode.dynamic() {
        f.circles * f.waypoints_per_circle
    } else if f.adapt_from_start {
        0
    } else {
        circle_share
    };
    let ticks_per_capture = (f.capture_interval / f.dt).round().max(1.0) as u64;
    let max_step = slices.slice_width() / 2.0;
    let mut tick: u64 = 0;
    let mut t = 0.0;

    while agents.iter().any(Agent::flying) {
        tick += 1;
        t = tick as f64 * f.dt;
        let out_of_time = t > cfg.max_time_s;

        for a in agents.iter_mut().filter(|a| a.flying()) {
            if out_of_time {
                a.phase = Phase::Landed;
                continue;
            }
            // Move along the route, always facing the object.
            let mut yaw = facing_yaw(azimuth_about(&a.state.true_pose.position, &center));
            if let Some(target) = a.route.front().copied() {
                let commanded = Target {
                    position: target.position,
                    yaw,
                };
                a.state = step(&a.state, &commanded, f.speed, f.dt);
                yaw = facing_yaw(azimuth_about(&a.state.true_pose.position, &center));
                let dist = (a.state.true_pose.position - target.position).norm();
                let last = a.route.len() == 1;
                if (last && dist == 0.0) || (!last && dist <= f.arrival_tolerance) {
                    a.route.pop_front();
                }
            } else {
                a.state.clock += f.dt;
            }
            a.state.est_position = uwb_estimate(&a.state.true_pose.position, f.dt, &mut a.uwb);
            lp.flight_log.push(FlightLogRow {
                t,
                uav_id: a.state.id,
                true_position: a.state.true_pose.position,
                est_position: a.state.est_position,
                yaw: a.state.true_pose.yaw(),
            });

            if a.phase == Phase::InitPair {
                if a.route.is_empty() {
                    if lp.budget_left() {
                        lp.capture(a, yaw);
                    }
                    let az = azimuth_about(&a.state.true_pose.position, &center);
                    let plan = plan_static_circles(
                        center,
                        f.radius,
                        planner.altitude_for(a.state.id),
                        f.waypoints_per_circle,
                        survey_waypoints.div_ceil(f.waypoints_per_circle) + 1,
                        az,
                    )?;
                    // The plan starts where the UAV already is.
                    a.route = plan.waypoints.into_iter().skip(1).take(survey_waypoints).collect();
                    a.circle_mark = survey_waypoints.saturating_sub(circle_share);
                    a.phase = if a.route.is_empty() { Phase::Idle } else { Phase::Survey };
                    if a.phase == Phase::Idle {
                        a.first_circle_done = true;
                    }
                }
                continue;
            }
            // Revisits relocate first and capture on arrival.
            if a.phase != Phase::Transit && tick % ticks_per_capture == 0 && lp.budget_left() {
                lp.capture(a, yaw);
            }
            if a.phase == Phase::Survey && a.route.len() <= a.circle_mark {
                a.first_circle_done = true;
            }
            if a.phase == Phase::Survey && a.route.is_empty() {
                a.first_circle_done = true;
                a.phase = if cfg.mode.dynamic() { Phase::Idle } else { Phase::Landed };
            }
        }

        if !lp.budget_left() {
            for a in &mut agents {
                a.phase = Phase::Landed;
            }
        }

        // Near-RT triggers.
        let uav_slices: Vec<(usize, usize)> = agents
            .iter()
            .filter(|a| a.flying())
            .map(|a| (a.state.id, slice_of_azimuth(azimuth_about(&a.state.true_pose.position, &center), &slices)))
            .collect();
        if let Some(reason) = should_trigger(&lp.pending, &lp.policy, t, &uav_slices, &slices) {
            lp.merge(reason);
        }

        if lp.threshold.is_none() && agents.iter().all(|a| a.first_circle_done || !a.flying()) {
            lp.calibrate();
        }

        if !cfg.mode.dynamic() || lp.threshold.is_none() {
            continue;
        }
        // Hover completion refreshes coverage before the next decision.
        for k in 0..agents.len() {
            if let Phase::Hover(until) = agents[k].phase {
                if t >= until - 1e-9 {
                    lp.merge(TriggerReason::Flush);
                    agents[k].phase = Phase::Idle;
                    agents[k].active_slice = None;
                }
            } else if agents[k].phase == Phase::Transit && agents[k].route.is_empty() {
                agents[k].phase = Phase::Hover(t + f.hover_time);
            }
        }
        let idle: Vec<usize> = (0..agents.len()).filter(|&k| agents[k].phase == Phase::Idle).collect();
        if idle.is_empty() {
            continue;
        }
        let remaining = cfg.image_budget.map(|b| b.saturating_sub(lp.observations.len()));
        let choices: Vec<(usize, Option<SliceChoice>)> = if idle.len() == 2 {
            let [c0, c1] = assign_dual(
                &lp.report,
                [&agents[0].state, &agents[1].state],
                &lp.planner,
                &slices,
                &lp.visits,
                remaining,
            );
            vec![(0, c0), (1, c1)]
        } else {
            let k = idle[0];
            let exclude: Vec<usize> = agents.iter().filter_map(|a| a.active_slice).collect();
            let c = next_waypoint_dynamic_excluding(
                &lp.report,
                &agents[k].state,
                &lp.planner,
                &slices,
                &lp.visits,
                remaining,
                &exclude,
            );
            vec![(k, c)]
        };
        for (k, choice) in choices {
            let choice = lp.decide(t, agents[k].state.id, choice);
            let a = &mut agents[k];
            match choice {
                Some(c) => {
                    let from = azimuth_about(&a.state.true_pose.position, &center);
                    let to = slices.slice_center_azimuth(c.slice);
                    a.route = arc_route(&lp.planner, a.state.id, from, to, max_step, c.target);
                    a.active_slice = Some(c.slice);
                    a.phase = Phase::Transit;
                }
                None => a.phase = Phase::Landed,
            }
        }
    }

    // Landing: flush whatever is pending.
    lp.merge(TriggerReason::Flush);
    if lp.threshold.is_none() {
        lp.calibrate();
    }

    let (final_cloud, used_obs, uwb_to_sfm) = post_flight(cfg, &lp.observations, &lp.gauge)?;
    Ok(MissionOutput {
        config: cfg.clone(),
        observations: lp.observations,
        flight_log: lp.flight_log,
        coverage_log: lp.coverage_log,
        decisions: lp.decisions,
        snapshots: lp.snapshots,
        instant: lp.instant,
        threshold: lp.threshold.unwrap_or(f64::INFINITY),
        final_report: lp.report,
        gauge: lp.gauge,
        final_cloud,
        used_obs,
        uwb_to_sfm,
        merge_latencies: lp.latencies,
        mission_time: t,
    })
}

/// Maps an observation's world points into the SfM frame through an
/// estimated camera pose: body coordinates from the true pose, then the
/// estimated pose at SfM scale `scale`.
fn to_sfm_frame(o: &Observation, est: &Pose, scale: f64) -> PointCloud {
    let map = |p: &Vec3| est.position + est.orientation * (o.true_pose.world_to_body(p) * scale);
    let rot = est.orientation * o.true_pose.orientation.transpose();
    PointCloud {
        points: o.points.points.iter().map(map).collect(),
        normals: o.points.normals.as_ref().map(|ns| ns.iter().map(|n| rot * n).collect()),
        feature_strength: o.points.feature_strength.clone(),
    }
}

/// Rigidly registers `frame` onto `anchor`, keeping the move only if it
/// lowers the matching error.
fn refine_against(frame: &PointCloud, anchor: &PointCloud) -> PointCloud {
    if frame.len() < 3 || anchor.len() < 3 {
        return frame.clone();
    }
    let params = IcpParams {
        with_scale: false,
        max_source_points: 20_000,
        bidirectional: false,
        ..IcpParams::default()
    };
    match icp_refine(frame, anchor, &SimilarityTransform::identity(), &params) {
        Ok(r) if r.rmse < r.history[0] => apply_similarity(&r.transform, frame),
        _ => frame.clone(),
    }
}

/// Post-flight reconstruction in the SfM frame. SfM-only modes use the
/// registered observations; fused modes use every observation.
fn post_flight(
    cfg: &MissionConfig,
    observations: &[Observation],
    gauge: &GaugeTransform,
) -> Result<(PointCloud, Vec<usize>, Option<SimilarityTransform>)> {
    let sfm_scale = gauge.hidden.scale;
    let mut cloud = PointCloud::default();
    let mut used = Vec::new();
    let mut fit = None;
    if cfg.mode.fused() {
        let fusion = fuse_camera_poses(observations, cfg.reconstruct.average_registered)?;
        let mut substituted = Vec::new();
        for (o, fp) in observations.iter().zip(&fusion.poses) {
            match fp.source {
                PoseSource::Sfm => cloud.extend(&to_sfm_frame(o, &fp.pose, sfm_scale)),
                PoseSource::UwbSubstituted => substituted.push(to_sfm_frame(o, &fp.pose, fusion.transform.scale)),
            }
            used.push(o.obs_id);
        }
        // UWB poses are centimetre-accurate at best; a rigid ICP against the
        // registered frames, seeded with the UWB pose, removes much of that.
        let anchor = cloud.clone();
        for frame in substituted {
            cloud.extend(&refine_against(&frame, &anchor));
        }
        fit = Some(fusion.transform);
    } else {
        for o in observations {
            if let Some(pose) = &o.sfm_pose {
                cloud.extend(&to_sfm_frame(o, pose, sfm_scale));
                used.push(o.obs_id);
            }
        }
    }
    if let Ok(b) = aabb(&cloud) {
        cloud = voxel_average(&cloud, cfg.reconstruct.fusion_voxel_fraction * b.diagonal());
    }
    Ok((cloud, used, fit))
}

/// Commanded yaw for a substituted pose, exposed for tests.
pub fn substituted_orientation(fit: &SimilarityTransform, commanded_yaw: f64) -> crate::geometry::Mat3 {
    fit.rotation * rot_z(commanded_yaw)
}

pub const TRANSFORM_HEADER: &str = "name,scale,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz";

fn transform_row(name: &str, t: &SimilarityTransform) -> String {
    let vals: Vec<String> = t.to_array().iter().map(|v| format!("{v:.12}")).collect();
    format!("{name},{}\n", vals.join(","))
}

pub const RUN_INFO_HEADER: &str = "key,value";

fn run_info_csv(out: &MissionOutput) -> String {
    let mut s = format!("{RUN_INFO_HEADER}\n");
    let r = &out.final_report;
    let _ = writeln!(s, "approach,{}", out.config.mode.as_str());
    let _ = writeln!(s, "images_taken,{}", out.images_taken());
    let _ = writeln!(s, "images_used,{}", out.images_used());
    let _ = writeln!(s, "mission_time_s,{:.3}", out.mission_time);
    let _ = writeln!(s, "threshold,{:.3}", out.threshold);
    let _ = writeln!(s, "uncovered_slices,{}", r.uncovered().len());
    let _ = writeln!(s, "min_slice_score,{}", r.min_score());
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| ScanError::io(path, e))
}

/// Writes every artifact of a finished mission into `dir`. `config_text`
/// is stored verbatim next to the effective configuration.
pub fn write_run(dir: &Path, out: &MissionOutput, config_text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ScanError::io(dir, e))?;
    write(&dir.join("config.ini"), config_text)?;
    write(&dir.join("config.effective.ini"), &out.config.to_ini_string())?;
    persist_observations(&dir.join("observations"), &out.observations)?;
    write(&dir.join("flight_log.csv"), &flight_log_csv(&out.flight_log))?;
    write(
        &dir.join("coverage.csv"),
        &coverage_log_csv(&out.coverage_log, out.config.reconstruct.slices),
    )?;
    write(&dir.join("decisions.csv"), &decision_log_csv(&out.decisions))?;
    if !out.snapshots.is_empty() {
        let snap_dir = dir.join("snapshots");
        std::fs::create_dir_all(&snap_dir).map_err(|e| ScanError::io(&snap_dir, e))?;
        for (k, c) in out.snapshots.iter().enumerate() {
            ply::write_cloud(&snap_dir.join(format!("instant_{k:04}.ply")), c)?;
        }
    }
    ply::write_cloud(&dir.join("final.ply"), &out.final_cloud)?;
    let mut transforms = format!("{TRANSFORM_HEADER}\n");
    transforms.push_str(&transform_row("gauge", &out.gauge.hidden));
    if let Some(t) = &out.uwb_to_sfm {
        transforms.push_str(&transform_row("uwb_to_sfm", t));
    }
    write(&dir.join("transforms.csv"), &transforms)?;
    write(&dir.join("run_info.csv"), &run_info_csv(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(mode: &str, uavs: usize) -> MissionConfig {
        MissionConfig::from_ini_str(&format!(
            "[mission]\nmode = {mode}\nuav_count = {uavs}\nseed = 3\n[flight]\ncircles = 1\nspeed = 0.3\n\
[scene]\nsurface_samples = 6000\n[capture]\npoint_budget = 150\n[reconstruct]\nwrite_snapshots = false\n"
        ))
        .unwrap()
    }

    #[test]
    fn static_mission_runs_and_uses_registered_frames() {
        let out = run_mission(&quick("baseline", 1)).unwrap();
        assert!(out.images_taken() > 10);
        let registered = out.observations.iter().filter(|o| o.sfm_pose.is_some()).count();
        assert_eq!(out.images_used(), registered);
        assert!(!out.final_cloud.is_empty());
        assert!(out.threshold.is_finite());
        assert_eq!(out.coverage_log.last().unwrap().reason, TriggerReason::Flush);
    }

    #[test]
    fn fused_mission_uses_every_frame() {
        let out = run_mission(&quick("location_aware", 1)).unwrap();
        assert_eq!(out.images_used(), out.images_taken());
        assert!(out.uwb_to_sfm.is_some());
    }

    #[test]
    fn mission_is_deterministic() {
        let a = run_mission(&quick("integrated", 2)).unwrap();
        let b = run_mission(&quick("integrated", 2)).unwrap();
        assert_eq!(a.observations, b.observations);
        assert_eq!(a.final_cloud, b.final_cloud);
        assert_eq!(a.decisions, b.decisions);
    }

    #[test]
    fn dual_flight_altitudes_differ() {
        let out = run_mission(&quick("baseline", 2)).unwrap();
        let z = |id| out.flight_log.iter().find(|r| r.uav_id == id).unwrap().true_position.z;
        assert!((z(1) - z(0) - 0.10).abs() < 1e-12);
    }

    #[test]
    fn budget_is_respected() {
        let mut cfg = quick("dynamic_path", 1);
        cfg.image_budget = Some(25);
        let out = run_mission(&cfg).unwrap();
        assert!(out.images_taken() <= 25);
    }

    #[test]
    fn dynamic_waypoints_stay_on_the_circle() {
        let out = run_mission(&quick("dynamic_path", 2)).unwrap();
        let cfg = &out.config;
        for d in out.decisions.iter().filter(|d| d.chosen_slice.is_some()) {
            let slice = d.chosen_slice.unwrap();
            assert!(slice < cfg.reconstruct.slices);
        }
        let k = cfg.reconstruct.slices * cfg.flight.max_visits_per_slice * cfg.uav_count;
        assert!(out.decisions.iter().filter(|d| d.chosen_slice.is_some()).count() <= k);
    }
}
