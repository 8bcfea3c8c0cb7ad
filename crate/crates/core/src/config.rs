//! Mission configuration: flat `key = value` text grouped in sections.
//!
//! Every key is optional; missing keys take the defaults listed in
//! [`DEFAULT_CONFIG`]. Any key can be overridden from the environment as
//! `SCANPLAN_<SECTION>_<KEY>` (upper case), e.g. `SCANPLAN_FLIGHT_SPEED=0.1`.

use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::error::{Result, ScanError};
use crate::imaging::Preprocess;

pub const ENV_PREFIX: &str = "SCANPLAN_";

/// Annotated defaults. Also the reference for every accepted key.
pub const DEFAULT_CONFIG: &str = "\
[mission]
; engraved_box | tall_object
object = engraved_box
; 1 or 2
uav_count = 1
; baseline | location_aware | dynamic_path | integrated
mode = baseline
; bw | rgb
camera_mode = bw
seed = 0
; total images across UAVs, 0 = unlimited
image_budget = 0
; hard stop on simulated time, seconds
max_time_s = 900

[scene]
center_z = 1.0
box_length = 0.547
box_width = 0.203
box_height = 0.209
engraving_depth = 0.04
tall_height = 0.6
tall_radius = 0.12
tall_feature = 0.15
surface_samples = 20000

[flight]
radius = 0.5
speed = 0.08
dt = 0.1
capture_interval = 0.5
circles = 3
waypoints_per_circle = 16
arrival_tolerance = 0.05
initial_drift = 0.05
dual_altitude_offset = 0.10
; dynamic modes: skip the initial full circle
adapt_from_start = false
max_visits_per_slice = 4
; time spent capturing at each dynamic waypoint, seconds
hover_time = 2.0

[uwb]
sigma = 0.05
bias_walk_sigma = 0.005
smoothing_alpha = 0.3

[sfm]
p_base = 0.005
f_ref = 0.3
rotation_sigma_deg = 0.5
; position noise as a fraction of the scene diagonal
position_fraction = 0.005

[capture]
noise_sigma = 0.002
; 0 = keep every visible point
point_budget = 400

[reconstruct]
slices = 8
regions = 4
time_threshold = 3.0
; voxel edge as a fraction of the object diagonal
voxel_fraction = 0.005
; post-flight fusion voxel edge, also a fraction of the diagonal
fusion_voxel_fraction = 0.005
; cluster distance as a multiple of the median neighbour spacing
cluster_factor = 2.5
cluster_min_size = 10
; calibrated | fixed
threshold_mode = calibrated
threshold_factor = 0.6
threshold_value = 0
; background radius as a multiple of the bounding-sphere radius
r_max_factor = 1.5
; fused modes: average SfM and mapped UWB positions when both exist
average_registered = false
write_snapshots = true

[eval]
ring_count = 16
ring_radius = 1.0
fov = 1.5
resolution = 320
splat_px = 2
wd_samples = 256
reference_samples = 30000
; comma separated: unsharp:<radius>:<amount>, equalize, gamma:<value>
preprocess =
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    EngravedBox,
    TallObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approach {
    Baseline,
    LocationAware,
    DynamicPath,
    Integrated,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::Baseline,
        Approach::LocationAware,
        Approach::DynamicPath,
        Approach::Integrated,
    ];

    pub fn dynamic(self) -> bool {
        matches!(self, Approach::DynamicPath | Approach::Integrated)
    }

    pub fn fused(self) -> bool {
        matches!(self, Approach::LocationAware | Approach::Integrated)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Baseline => "baseline",
            Approach::LocationAware => "location_aware",
            Approach::DynamicPath => "dynamic_path",
            Approach::Integrated => "integrated",
        }
    }
}

impl FromStr for Approach {
    type Err = ScanError;
    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ScanError::bad_config(format!("unknown mode '{s}'")))
    }
}

impl ObjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::EngravedBox => "engraved_box",
            ObjectKind::TallObject => "tall_object",
        }
    }
}

impl FromStr for ObjectKind {
    type Err = ScanError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "engraved_box" => Ok(ObjectKind::EngravedBox),
            "tall_object" => Ok(ObjectKind::TallObject),
            _ => Err(ScanError::bad_config(format!("unknown object '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraMode {
    Bw,
    Rgb,
}

impl CameraMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CameraMode::Bw => "bw",
            CameraMode::Rgb => "rgb",
        }
    }
}

impl FromStr for CameraMode {
    type Err = ScanError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bw" => Ok(CameraMode::Bw),
            "rgb" => Ok(CameraMode::Rgb),
            _ => Err(ScanError::bad_config(format!("unknown camera_mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub center_z: f64,
    pub box_length: f64,
    pub box_width: f64,
    pub box_height: f64,
    pub engraving_depth: f64,
    pub tall_height: f64,
    pub tall_radius: f64,
    pub tall_feature: f64,
    pub surface_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightConfig {
    pub radius: f64,
    pub speed: f64,
    pub dt: f64,
    pub capture_interval: f64,
    pub circles: usize,
    pub waypoints_per_circle: usize,
    pub arrival_tolerance: f64,
    pub initial_drift: f64,
    pub dual_altitude_offset: f64,
    pub adapt_from_start: bool,
    pub max_visits_per_slice: usize,
    pub hover_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UwbConfig {
    pub sigma: f64,
    pub bias_walk_sigma: f64,
    pub smoothing_alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfmConfig {
    pub p_base: f64,
    pub f_ref: f64,
    pub rotation_sigma_deg: f64,
    pub position_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureConfig {
    pub noise_sigma: f64,
    pub point_budget: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructConfig {
    pub slices: usize,
    pub regions: usize,
    pub time_threshold: f64,
    pub voxel_fraction: f64,
    pub fusion_voxel_fraction: f64,
    pub cluster_factor: f64,
    pub cluster_min_size: usize,
    pub calibrated: bool,
    pub threshold_factor: f64,
    pub threshold_value: f64,
    pub r_max_factor: f64,
    pub average_registered: bool,
    pub write_snapshots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub ring_count: usize,
    pub ring_radius: f64,
    pub fov: f64,
    pub resolution: usize,
    pub splat_px: usize,
    pub wd_samples: usize,
    pub reference_samples: usize,
    pub preprocess: Vec<Preprocess>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionConfig {
    pub object: ObjectKind,
    pub uav_count: usize,
    pub mode: Approach,
    pub camera_mode: CameraMode,
    pub seed: u64,
    pub image_budget: Option<usize>,
    pub max_time_s: f64,
    pub scene: SceneConfig,
    pub flight: FlightConfig,
    pub uwb: UwbConfig,
    pub sfm: SfmConfig,
    pub capture: CaptureConfig,
    pub reconstruct: ReconstructConfig,
    pub eval: EvalConfig,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig::from_ini_str("").expect("built-in defaults are valid")
    }
}

fn parse_value<T: FromStr>(section: &str, key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| ScanError::bad_config(format!("[{section}] {key}: cannot parse '{raw}'")))
}

fn parse_bool(section: &str, key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ScanError::bad_config(format!("[{section}] {key}: expected a boolean, got '{raw}'"))),
    }
}

/// Parses `unsharp:<radius>:<amount>`, `equalize` and `gamma:<value>`.
pub fn parse_preprocess(raw: &str) -> Result<Vec<Preprocess>> {
    let bad = |item: &str| ScanError::bad_config(format!("[eval] preprocess: bad filter '{item}'"));
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.split(':').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(item));
            match parts.as_slice() {
                ["equalize"] => Ok(Preprocess::HistogramEqualize),
                ["gamma", g] => Ok(Preprocess::Gamma(num(g)?)),
                ["unsharp", r, a] => Ok(Preprocess::UnsharpMask {
                    radius: r.parse().map_err(|_| bad(item))?,
                    amount: num(a)?,
                }),
                _ => Err(bad(item)),
            }
        })
        .collect()
}

/// Key/value view over the defaults with the user's entries layered on top.
struct Layered {
    values: Ini,
}

impl Layered {
    fn new(user: &Ini) -> Result<Self> {
        let mut values = Ini::load_from_str(DEFAULT_CONFIG).expect("defaults parse");
        for (section, props) in user.iter() {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    return Err(ScanError::bad_config("keys must appear inside a [section]"));
                }
                continue;
            };
            if values.section(Some(section)).is_none() {
                return Err(ScanError::bad_config(format!("unknown section [{section}]")));
            }
            for (key, value) in props.iter() {
                if values.get_from(Some(section), key).is_none() {
                    return Err(ScanError::bad_config(format!("unknown key [{section}] {key}")));
                }
                values.with_section(Some(section)).set(key, value.trim());
            }
        }
        Ok(Self { values })
    }

    fn raw(&self, section: &str, key: &str) -> &str {
        self.values.get_from(Some(section), key).expect("key present in defaults")
    }

    fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        parse_value(section, key, self.raw(section, key))
    }

    fn flag(&self, section: &str, key: &str) -> Result<bool> {
        parse_bool(section, key, self.raw(section, key))
    }
}

impl MissionConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let user = Ini::load_from_str(text).map_err(|e| ScanError::bad_config(format!("config syntax: {e}")))?;
        Self::from_layered(&Layered::new(&user)?)
    }

    /// Parses `text`, then applies `SCANPLAN_<SECTION>_<KEY>` overrides
    /// from `env`.
    pub fn from_ini_str_with_env<I, K, V>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut user = Ini::load_from_str(text).map_err(|e| ScanError::bad_config(format!("config syntax: {e}")))?;
        apply_env_overrides(&mut user, env)?;
        Self::from_layered(&Layered::new(&user)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ScanError::io(path, e))?;
        Self::from_ini_str_with_env(&text, std::env::vars())
    }

    fn from_layered(l: &Layered) -> Result<Self> {
        let budget: usize = l.get("mission", "image_budget")?;
        let point_budget: usize = l.get("capture", "point_budget")?;
        let cfg = MissionConfig {
            object: l.get("mission", "object")?,
            uav_count: l.get("mission", "uav_count")?,
            mode: l.get("mission", "mode")?,
            camera_mode: l.get("mission", "camera_mode")?,
            seed: l.get("mission", "seed")?,
            image_budget: (budget > 0).then_some(budget),
            max_time_s: l.get("mission", "max_time_s")?,
            scene: SceneConfig {
                center_z: l.get("scene", "center_z")?,
                box_length: l.get("scene", "box_length")?,
                box_width: l.get("scene", "box_width")?,
                box_height: l.get("scene", "box_height")?,
                engraving_depth: l.get("scene", "engraving_depth")?,
                tall_height: l.get("scene", "tall_height")?,
                tall_radius: l.get("scene", "tall_radius")?,
                tall_feature: l.get("scene", "tall_feature")?,
                surface_samples: l.get("scene", "surface_samples")?,
            },
            flight: FlightConfig {
                radius: l.get("flight", "radius")?,
                speed: l.get("flight", "speed")?,
                dt: l.get("flight", "dt")?,
                capture_interval: l.get("flight", "capture_interval")?,
                circles: l.get("flight", "circles")?,
                waypoints_per_circle: l.get("flight", "waypoints_per_circle")?,
                arrival_tolerance: l.get("flight", "arrival_tolerance")?,
                initial_drift: l.get("flight", "initial_drift")?,
                dual_altitude_offset: l.get("flight", "dual_altitude_offset")?,
                adapt_from_start: l.flag("flight", "adapt_from_start")?,
                max_visits_per_slice: l.get("flight", "max_visits_per_slice")?,
                hover_time: l.get("flight", "hover_time")?,
            },
            uwb: UwbConfig {
                sigma: l.get("uwb", "sigma")?,
                bias_walk_sigma: l.get("uwb", "bias_walk_sigma")?,
                smoothing_alpha: l.get("uwb", "smoothing_alpha")?,
            },
            sfm: SfmConfig {
                p_base: l.get("sfm", "p_base")?,
                f_ref: l.get("sfm", "f_ref")?,
                rotation_sigma_deg: l.get("sfm", "rotation_sigma_deg")?,
                position_fraction: l.get("sfm", "position_fraction")?,
            },
            capture: CaptureConfig {
                noise_sigma: l.get("capture", "noise_sigma")?,
                point_budget,
            },
            reconstruct: ReconstructConfig {
                slices: l.get("reconstruct", "slices")?,
                regions: l.get("reconstruct", "regions")?,
                time_threshold: l.get("reconstruct", "time_threshold")?,
                voxel_fraction: l.get("reconstruct", "voxel_fraction")?,
                fusion_voxel_fraction: l.get("reconstruct", "fusion_voxel_fraction")?,
                cluster_factor: l.get("reconstruct", "cluster_factor")?,
                cluster_min_size: l.get("reconstruct", "cluster_min_size")?,
                calibrated: match l.raw("reconstruct", "threshold_mode").trim() {
                    "calibrated" => true,
                    "fixed" => false,
                    other => return Err(ScanError::bad_config(format!("unknown threshold_mode '{other}'"))),
                },
                threshold_factor: l.get("reconstruct", "threshold_factor")?,
                threshold_value: l.get("reconstruct", "threshold_value")?,
                r_max_factor: l.get("reconstruct", "r_max_factor")?,
                average_registered: l.flag("reconstruct", "average_registered")?,
                write_snapshots: l.flag("reconstruct", "write_snapshots")?,
            },
            eval: EvalConfig {
                ring_count: l.get("eval", "ring_count")?,
                ring_radius: l.get("eval", "ring_radius")?,
                fov: l.get("eval", "fov")?,
                resolution: l.get("eval", "resolution")?,
                splat_px: l.get("eval", "splat_px")?,
                wd_samples: l.get("eval", "wd_samples")?,
                reference_samples: l.get("eval", "reference_samples")?,
                preprocess: parse_preprocess(l.raw("eval", "preprocess"))?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks that the individual modules would otherwise report late.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(ScanError::bad_config(msg.to_string())) };
        check(matches!(self.uav_count, 1 | 2), "uav_count must be 1 or 2")?;
        check(self.max_time_s > 0.0, "max_time_s must be positive")?;
        check(self.scene.surface_samples > 0, "surface_samples must be positive")?;
        let f = &self.flight;
        check(f.radius > 0.0 && f.speed > 0.0 && f.dt > 0.0, "radius, speed and dt must be positive")?;
        check(f.capture_interval >= f.dt, "capture_interval must be at least dt")?;
        check(f.circles >= 1 && f.waypoints_per_circle >= 2, "need at least one circle of 2 waypoints")?;
        check(f.arrival_tolerance > 0.0, "arrival_tolerance must be positive")?;
        check(f.initial_drift > 0.0, "initial_drift must be positive")?;
        check(f.max_visits_per_slice >= 1, "max_visits_per_slice must be at least 1")?;
        check(f.hover_time >= 0.0, "hover_time must be non-negative")?;
        check(self.capture.noise_sigma >= 0.0, "noise_sigma must be non-negative")?;
        let r = &self.reconstruct;
        check(r.slices >= 1 && r.regions >= 1 && r.slices % r.regions == 0, "slices must be a multiple of regions")?;
        check(r.time_threshold > 0.0, "time_threshold must be positive")?;
        check(
            r.voxel_fraction > 0.0 && r.fusion_voxel_fraction > 0.0 && r.cluster_factor > 0.0,
            "voxel fractions and cluster_factor must be positive",
        )?;
        check(r.r_max_factor > 0.0, "r_max_factor must be positive")?;
        let e = &self.eval;
        check(e.ring_count >= 1 && e.ring_radius > 0.0, "eval ring needs count >= 1 and positive radius")?;
        check(e.resolution >= 7, "eval resolution must be at least the SSIM window")?;
        check(e.wd_samples >= 1 && e.reference_samples >= 1, "eval sample counts must be positive")?;
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_ini_string(&self) -> String {
        let s = &self.scene;
        let f = &self.flight;
        let r = &self.reconstruct;
        let e = &self.eval;
        let preprocess: Vec<String> = e
            .preprocess
            .iter()
            .map(|p| match p {
                Preprocess::HistogramEqualize => "equalize".to_string(),
                Preprocess::Gamma(g) => format!("gamma:{g}"),
                Preprocess::UnsharpMask { radius, amount } => format!("unsharp:{radius}:{amount}"),
            })
            .collect();
        format!(
            "[mission]\nobject = {}\nuav_count = {}\nmode = {}\ncamera_mode = {}\nseed = {}\nimage_budget = {}\nmax_time_s = {}\n\n\
[scene]\ncenter_z = {}\nbox_length = {}\nbox_width = {}\nbox_height = {}\nengraving_depth = {}\ntall_height = {}\ntall_radius = {}\ntall_feature = {}\nsurface_samples = {}\n\n\
[flight]\nradius = {}\nspeed = {}\ndt = {}\ncapture_interval = {}\ncircles = {}\nwaypoints_per_circle = {}\narrival_tolerance = {}\ninitial_drift = {}\ndual_altitude_offset = {}\nadapt_from_start = {}\nmax_visits_per_slice = {}\nhover_time = {}\n\n\
[uwb]\nsigma = {}\nbias_walk_sigma = {}\nsmoothing_alpha = {}\n\n\
[sfm]\np_base = {}\nf_ref = {}\nrotation_sigma_deg = {}\nposition_fraction = {}\n\n\
[capture]\nnoise_sigma = {}\npoint_budget = {}\n\n\
[reconstruct]\nslices = {}\nregions = {}\ntime_threshold = {}\nvoxel_fraction = {}\nfusion_voxel_fraction = {}\ncluster_factor = {}\ncluster_min_size = {}\nthreshold_mode = {}\nthreshold_factor = {}\nthreshold_value = {}\nr_max_factor = {}\naverage_registered = {}\nwrite_snapshots = {}\n\n\
[eval]\nring_count = {}\nring_radius = {}\nfov = {}\nresolution = {}\nsplat_px = {}\nwd_samples = {}\nreference_samples = {}\npreprocess = {}\n",
            self.object.as_str(),
            self.uav_count,
            self.mode.as_str(),
            self.camera_mode.as_str(),
            self.seed,
            self.image_budget.unwrap_or(0),
            self.max_time_s,
            s.center_z,
            s.box_length,
            s.box_width,
            s.box_height,
            s.engraving_depth,
            s.tall_height,
            s.tall_radius,
            s.tall_feature,
            s.surface_samples,
            f.radius,
            f.speed,
            f.dt,
            f.capture_interval,
            f.circles,
            f.waypoints_per_circle,
            f.arrival_tolerance,
            f.initial_drift,
            f.dual_altitude_offset,
            f.adapt_from_start,
            f.max_visits_per_slice,
            f.hover_time,
            self.uwb.sigma,
            self.uwb.bias_walk_sigma,
            self.uwb.smoothing_alpha,
            self.sfm.p_base,
            self.sfm.f_ref,
            self.sfm.rotation_sigma_deg,
            self.sfm.position_fraction,
            self.capture.noise_sigma,
            self.capture.point_budget,
            r.slices,
            r.regions,
            r.time_threshold,
            r.voxel_fraction,
            r.fusion_voxel_fraction,
            r.cluster_factor,
            r.cluster_min_size,
            if r.calibrated { "calibrated" } else { "fixed" },
            r.threshold_factor,
            r.threshold_value,
            r.r_max_factor,
            r.average_registered,
            r.write_snapshots,
            e.ring_count,
            e.ring_radius,
            e.fov,
            e.resolution,
            e.splat_px,
            e.wd_samples,
            e.reference_samples,
            preprocess.join(","),
        )
    }
}

/// Layers `SCANPLAN_<SECTION>_<KEY>` variables onto `ini`. Variables whose
/// section is unknown are ignored; a known section with an unknown key is
/// an error.
pub fn apply_env_overrides<I, K, V>(ini: &mut Ini, env: I) -> Result<()>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let defaults = Ini::load_from_str(DEFAULT_CONFIG).expect("defaults parse");
    for (k, v) in env {
        let Some(rest) = k.as_ref().strip_prefix(ENV_PREFIX) else { continue };
        let rest = rest.to_ascii_lowercase();
        let Some((section, key)) = rest.split_once('_') else { continue };
        if defaults.section(Some(section)).is_none() {
            continue;
        }
        if defaults.get_from(Some(section), key).is_none() {
            return Err(ScanError::bad_config(format!("unknown override {}", k.as_ref())));
        }
        ini.with_section(Some(section)).set(key, v.as_ref());
    }
    Ok(())
}
