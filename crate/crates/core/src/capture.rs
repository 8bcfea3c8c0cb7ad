//! Simulated image capture and the structure-from-motion surrogate.
//!
//! An [`Observation`] stands in for one image plus its metadata. The SfM
//! surrogate registers observations into a hidden gauge frame (an arbitrary
//! similarity of the world frame) with a feature-dependent failure model.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, ScanError};
use crate::geometry::{gaussian_vec3, random_rotation, rot_axis_angle, PointCloud, Pose, SimilarityTransform, Vec3};
use crate::ply;
use crate::reconstruct::{slice_of_azimuth, SliceModel};
use crate::scene::{candidate_points, Camera, SceneObject};
use crate::uav::{point_on_circle, Target, UavState};

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub obs_id: usize,
    pub uav_id: usize,
    pub timestamp: f64,
    pub true_pose: Pose,
    pub uwb_position: Vec3,
    /// Yaw the UAV was commanded to hold when the image was taken.
    pub commanded_yaw: f64,
    /// Camera pose in the SfM gauge frame, if registration succeeded.
    pub sfm_pose: Option<Pose>,
    /// Noisy observed surface points, world frame.
    pub points: PointCloud,
    pub slice_index: usize,
    pub feature_score: f64,
}

/// The unknown similarity between world and SfM reconstruction frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeTransform {
    pub hidden: SimilarityTransform,
}

impl GaugeTransform {
    pub fn new(hidden: SimilarityTransform) -> Result<Self> {
        if !(0.2..=5.0).contains(&hidden.scale) {
            return Err(ScanError::bad_config(format!(
                "gauge scale {} outside [0.2, 5]",
                hidden.scale
            )));
        }
        Ok(Self { hidden })
    }

    /// Scale U[0.5, 2], uniform random rotation, translation U[-1, 1]^3.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let scale = rng.random_range(0.5..=2.0);
        let rotation = random_rotation(rng);
        let translation = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        Self {
            hidden: SimilarityTransform {
                scale,
                rotation,
                translation,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfmFailureModel {
    /// Failure probability even for feature-rich views.
    pub p_base: f64,
    /// Feature score at which registration saturates.
    pub f_ref: f64,
    /// Std of the per-axis rotation-vector perturbation, radians.
    pub rotation_sigma: f64,
    /// RMS magnitude of the 3D position perturbation, world metres.
    pub position_sigma: f64,
}

impl SfmFailureModel {
    pub const DEFAULT_P_BASE: f64 = 0.005;
    pub const DEFAULT_F_REF: f64 = 0.3;
    pub const DEFAULT_ROTATION_DEG: f64 = 0.5;
    pub const DEFAULT_POSITION_FRACTION: f64 = 0.005;

    /// Defaults with position noise at 0.5% of the scene diagonal.
    pub fn for_scene_diagonal(diagonal: f64) -> Self {
        Self {
            p_base: Self::DEFAULT_P_BASE,
            f_ref: Self::DEFAULT_F_REF,
            rotation_sigma: Self::DEFAULT_ROTATION_DEG.to_radians(),
            position_sigma: Self::DEFAULT_POSITION_FRACTION * diagonal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_base) {
            return Err(ScanError::bad_config("p_base must be in [0,1]"));
        }
        if !(self.f_ref > 0.0) {
            return Err(ScanError::bad_config("f_ref must be positive"));
        }
        if !(self.rotation_sigma >= 0.0 && self.position_sigma >= 0.0) {
            return Err(ScanError::bad_config("SfM noise must be non-negative"));
        }
        Ok(())
    }

    pub fn success_probability(&self, feature_score: f64) -> f64 {
        (feature_score / self.f_ref).clamp(0.0, 1.0) * (1.0 - self.p_base)
    }
}

/// Ground truth shared by every capture of a mission.
#[derive(Debug, Clone)]
pub struct CaptureScene {
    pub object: SceneObject,
    /// Dense surface samples with normals; observations are noisy subsets.
    pub surface: PointCloud,
    pub center: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureParams {
    pub noise_sigma: f64,
    /// Per-observation point cap; `None` keeps every visible point.
    pub point_budget: Option<usize>,
}

impl Default for CaptureParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.002,
            point_budget: Some(400),
        }
    }
}

/// Simulates one image taken from the camera mounted at the UAV's pose.
///
/// Visible points are drawn uniformly without replacement from the
/// candidates passing the frustum, range and facing tests, keeping only
/// unoccluded ones until the budget is met. The feature score is the mean
/// feature strength over the observed points.
pub fn capture_observation<R: Rng + ?Sized>(
    scene: &CaptureScene,
    state: &UavState,
    cam: &Camera,
    params: &CaptureParams,
    slices: &SliceModel,
    obs_id: usize,
    commanded_yaw: f64,
    rng: &mut R,
) -> Observation {
    let mut candidates = candidate_points(&scene.surface, cam);
    let budget = params.point_budget.unwrap_or(usize::MAX);
    let mut chosen = Vec::with_capacity(budget.min(candidates.len()));
    if budget >= candidates.len() {
        chosen.extend(
            candidates
                .iter()
                .copied()
                .filter(|&i| !scene.object.segment_blocked(&cam.pose.position, &scene.surface.points[i])),
        );
    } else {
        // Lazy Fisher-Yates: uniform random order over candidates.
        let n = candidates.len();
        for k in 0..n {
            if chosen.len() >= budget {
                break;
            }
            let j = rng.random_range(k..n);
            candidates.swap(k, j);
            let i = candidates[k];
            if !scene.object.segment_blocked(&cam.pose.position, &scene.surface.points[i]) {
                chosen.push(i);
            }
        }
        chosen.sort_unstable();
    }

    let mut points = scene.surface.select(&chosen);
    if params.noise_sigma > 0.0 {
        for p in &mut points.points {
            *p += gaussian_vec3(rng, params.noise_sigma);
        }
    }
    let feature_score = match (&points.feature_strength, points.len()) {
        (Some(f), n) if n > 0 => f.iter().sum::<f64>() / n as f64,
        _ => 0.0,
    };
    let az = crate::geometry::azimuth_about(&state.true_pose.position, &scene.center);
    Observation {
        obs_id,
        uav_id: state.id,
        timestamp: state.clock,
        true_pose: state.true_pose,
        uwb_position: state.est_position,
        commanded_yaw,
        sfm_pose: None,
        points,
        slice_index: slice_of_azimuth(az, slices),
        feature_score,
    }
}

/// Attempts SfM registration; fills `sfm_pose` on success.
pub fn sfm_register<R: Rng + ?Sized>(
    mut obs: Observation,
    gauge: &GaugeTransform,
    model: &SfmFailureModel,
    rng: &mut R,
) -> Observation {
    let p = model.success_probability(obs.feature_score);
    let u: f64 = rng.random();
    // Draw noise unconditionally so the stream does not depend on the outcome.
    let rot_vec = Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ) * model.rotation_sigma;
    let pos_noise = gaussian_vec3(rng, model.position_sigma / 3f64.sqrt());
    obs.sfm_pose = if u < p {
        let angle = rot_vec.norm();
        let perturbed = Pose {
            position: obs.true_pose.position + pos_noise,
            orientation: rot_axis_angle(&rot_vec, angle) * obs.true_pose.orientation,
        };
        Some(gauge.hidden.apply_pose(&perturbed))
    } else {
        None
    };
    obs
}

/// Two capture positions on the flight circle, `drift` apart, both facing
/// the centre. The first is the UAV's current position.
pub fn initial_pair(state: &UavState, drift: f64, center: &Vec3) -> Result<[Target; 2]> {
    if !(drift > 0.0 && drift.is_finite()) {
        return Err(ScanError::bad_config("initial pair needs a positive drift for parallax"));
    }
    let pos = state.true_pose.position;
    let radius = (pos - center).xy().norm();
    if radius <= drift / 2.0 {
        return Err(ScanError::bad_config("UAV too close to the object axis for the initial pair"));
    }
    let az = crate::geometry::azimuth_about(&pos, center);
    let step = 2.0 * (drift / (2.0 * radius)).asin();
    let first = point_on_circle(center, radius, pos.z, az);
    let second = point_on_circle(center, radius, pos.z, az + step);
    Ok([first, second])
}

pub const MANIFEST_HEADER: &str = "obs_id,uav_id,t,slice,feature_score,registered,n_points,\
true_x,true_y,true_z,true_yaw,uwb_x,uwb_y,uwb_z,sfm_x,sfm_y,sfm_z";

pub fn manifest_csv(observations: &[Observation]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for o in observations {
        let p = o.true_pose.position;
        let _ = write!(
            s,
            "{},{},{:.3},{},{:.6},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            o.obs_id,
            o.uav_id,
            o.timestamp,
            o.slice_index,
            o.feature_score,
            u8::from(o.sfm_pose.is_some()),
            o.points.len(),
            p.x,
            p.y,
            p.z,
            o.true_pose.yaw(),
            o.uwb_position.x,
            o.uwb_position.y,
            o.uwb_position.z
        );
        match &o.sfm_pose {
            Some(sp) => {
                let _ = writeln!(s, ",{:.6},{:.6},{:.6}", sp.position.x, sp.position.y, sp.position.z);
            }
            None => s.push_str(",,,\n"),
        }
    }
    s
}

/// Writes `obs_NNNNN.ply` per observation and `manifest.csv` into `dir`.
pub fn persist_observations(dir: &Path, observations: &[Observation]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ScanError::io(dir, e))?;
    for o in observations {
        ply::write_cloud(&dir.join(format!("obs_{:05}.ply", o.obs_id)), &o.points)?;
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest_csv(observations)).map_err(|e| ScanError::io(path, e))
}
