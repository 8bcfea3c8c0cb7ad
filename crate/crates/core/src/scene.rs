//! Procedural reference objects, surface sampling and camera visibility.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, ScanError};
use crate::geometry::{Aabb, PointCloud, Pose, Vec3};

pub type Triangle = [Vec3; 3];

const MIN_TRIANGLE_AREA: f64 = 1e-12;
/// Hits closer than this to the target point do not occlude it.
pub const OCCLUSION_EPS: f64 = 1e-4;

pub const ENGRAVING_FEATURE: f64 = 0.9;
pub const FLAT_FEATURE: f64 = 0.4;
pub const TALL_OBJECT_FEATURE: f64 = 0.15;

fn triangle_area(t: &Triangle) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}

fn triangle_normal(t: &Triangle) -> Vec3 {
    (t[1] - t[0]).cross(&(t[2] - t[0])).normalize()
}

/// Triangle mesh with per-triangle feature strength and an occlusion grid.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub triangles: Vec<Triangle>,
    pub feature_strength: Vec<f64>,
    grid: TriangleGrid,
}

impl SceneObject {
    pub fn new(triangles: Vec<Triangle>, feature_strength: Vec<f64>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(ScanError::bad_config("object has no triangles"));
        }
        if triangles.len() != feature_strength.len() {
            return Err(ScanError::bad_config("one feature strength per triangle required"));
        }
        if let Some(i) = triangles.iter().position(|t| !(triangle_area(t) > MIN_TRIANGLE_AREA)) {
            return Err(ScanError::degenerate(format!("triangle {i} has area <= 1e-12")));
        }
        if feature_strength.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(ScanError::bad_config("feature strength outside [0,1]"));
        }
        let grid = TriangleGrid::build(&triangles);
        Ok(Self {
            triangles,
            feature_strength,
            grid,
        })
    }

    pub fn translated(&self, offset: &Vec3) -> SceneObject {
        let triangles = self.triangles.iter().map(|t| t.map(|v| v + offset)).collect();
        SceneObject::new(triangles, self.feature_strength.clone()).expect("translation keeps triangles valid")
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.triangles.iter().flatten()).expect("non-empty by construction")
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(triangle_area).sum()
    }

    /// True when some triangle intersects the open segment from `from` to
    /// `to`, ignoring hits within [`OCCLUSION_EPS`] of `to`.
    pub fn segment_blocked(&self, from: &Vec3, to: &Vec3) -> bool {
        self.grid.segment_blocked(&self.triangles, from, to, OCCLUSION_EPS)
    }
}

/// Box of size `dims` centred at the origin with rectangular recesses cut
/// into the two largest faces.
pub fn build_engraved_box(dims: Vec3, engraving_depth: f64, seed: u64) -> Result<SceneObject> {
    if dims.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(ScanError::bad_config(format!("box dims must be positive, got {dims:?}")));
    }
    if !(engraving_depth >= 0.0) || engraving_depth >= dims.min() / 2.0 {
        return Err(ScanError::bad_config(format!(
            "engraving depth {engraving_depth} must be in [0, {})",
            dims.min() / 2.0
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = dims / 2.0;
    // Face normal axis with the largest face area.
    let areas = [dims.y * dims.z, dims.x * dims.z, dims.x * dims.y];
    let engraved_axis = (0..3).max_by(|&a, &b| areas[a].total_cmp(&areas[b]).then(b.cmp(&a))).unwrap();

    let mut tris = Vec::new();
    let mut feats = Vec::new();
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            if axis == engraved_axis && engraving_depth > 0.0 {
                engraved_face(&mut tris, &mut feats, half, axis, sign, engraving_depth, &mut rng);
            } else {
                let quad = face_quad(half, axis, sign);
                push_quad(&mut tris, &mut feats, quad, FLAT_FEATURE);
            }
        }
    }
    SceneObject::new(tris, feats)
}

/// In-plane axes (u, v) for a face so that u × v points along `sign * axis`.
fn face_frame(axis: usize, sign: f64) -> (usize, usize) {
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    if sign > 0.0 {
        (u, v)
    } else {
        (v, u)
    }
}

fn face_point(axis: usize, sign: f64, offset: f64, u: usize, uval: f64, v: usize, vval: f64, half: Vec3) -> Vec3 {
    let mut p = Vec3::zeros();
    p[axis] = sign * (half[axis] - offset);
    p[u] = uval;
    p[v] = vval;
    p
}

/// Outward-facing quad (counter-clockwise seen from outside).
fn face_quad(half: Vec3, axis: usize, sign: f64) -> [Vec3; 4] {
    let (u, v) = face_frame(axis, sign);
    let c = |a: f64, b: f64| face_point(axis, sign, 0.0, u, a * half[u], v, b * half[v], half);
    [c(-1.0, -1.0), c(1.0, -1.0), c(1.0, 1.0), c(-1.0, 1.0)]
}

fn push_quad(tris: &mut Vec<Triangle>, feats: &mut Vec<f64>, q: [Vec3; 4], feature: f64) {
    tris.push([q[0], q[1], q[2]]);
    tris.push([q[0], q[2], q[3]]);
    feats.push(feature);
    feats.push(feature);
}

fn engraved_face(
    tris: &mut Vec<Triangle>,
    feats: &mut Vec<f64>,
    half: Vec3,
    axis: usize,
    sign: f64,
    depth: f64,
    rng: &mut ChaCha8Rng,
) {
    let (u, v) = face_frame(axis, sign);
    let (len_u, len_v) = (2.0 * half[u], 2.0 * half[v]);
    // Square-ish cells of about 5 cm; border cells stay flat so walls never
    // reach the box edges.
    let nu = ((len_u / 0.05).round() as usize).max(3);
    let nv = ((len_v / 0.05).round() as usize).max(3);
    let (du, dv) = (len_u / nu as f64, len_v / nv as f64);
    let mut recessed = vec![false; nu * nv];
    for j in 1..nv - 1 {
        for i in 1..nu - 1 {
            recessed[j * nu + i] = rng.random::<f64>() < 0.45;
        }
    }
    let is_recessed = |i: isize, j: isize| -> bool {
        i >= 0 && j >= 0 && (i as usize) < nu && (j as usize) < nv && recessed[j as usize * nu + i as usize]
    };
    let at = |off: f64, a: f64, b: f64| face_point(axis, sign, off, u, a, v, b, half);
    for j in 0..nv {
        for i in 0..nu {
            let (u0, u1) = (-half[u] + i as f64 * du, -half[u] + (i + 1) as f64 * du);
            let (v0, v1) = (-half[v] + j as f64 * dv, -half[v] + (j + 1) as f64 * dv);
            if !is_recessed(i as isize, j as isize) {
                push_quad(tris, feats, [at(0.0, u0, v0), at(0.0, u1, v0), at(0.0, u1, v1), at(0.0, u0, v1)], FLAT_FEATURE);
                continue;
            }
            push_quad(
                tris,
                feats,
                [at(depth, u0, v0), at(depth, u1, v0), at(depth, u1, v1), at(depth, u0, v1)],
                ENGRAVING_FEATURE,
            );
            // Walls toward flat neighbours, facing into the recess.
            let (ii, jj) = (i as isize, j as isize);
            if !is_recessed(ii - 1, jj) {
                push_quad(tris, feats, [at(0.0, u0, v0), at(depth, u0, v0), at(depth, u0, v1), at(0.0, u0, v1)], ENGRAVING_FEATURE);
            }
            if !is_recessed(ii + 1, jj) {
                push_quad(tris, feats, [at(0.0, u1, v1), at(depth, u1, v1), at(depth, u1, v0), at(0.0, u1, v0)], ENGRAVING_FEATURE);
            }
            if !is_recessed(ii, jj - 1) {
                push_quad(tris, feats, [at(0.0, u1, v0), at(depth, u1, v0), at(depth, u0, v0), at(0.0, u0, v0)], ENGRAVING_FEATURE);
            }
            if !is_recessed(ii, jj + 1) {
                push_quad(tris, feats, [at(0.0, u0, v1), at(depth, u0, v1), at(depth, u1, v1), at(0.0, u1, v1)], ENGRAVING_FEATURE);
            }
        }
    }
}

/// Radius profile (height fraction, radius fraction) of the stacked
/// stand-in for the anatomical model: pelvis, torso, shoulders, neck, head.
const TALL_PROFILE: [(f64, f64); 9] = [
    (0.00, 0.60),
    (0.18, 0.85),
    (0.38, 0.80),
    (0.58, 1.00),
    (0.70, 0.75),
    (0.76, 0.40),
    (0.82, 0.45),
    (0.90, 0.62),
    (1.00, 0.40),
];

/// Vertical stack of frusta approximating a standing figure, centred at the
/// origin, closed at both ends.
pub fn build_tall_object(height: f64, radius: f64, feature_strength: f64) -> Result<SceneObject> {
    if !(height > 0.0 && height.is_finite()) || !(radius > 0.0 && radius.is_finite()) {
        return Err(ScanError::bad_config(format!(
            "tall object needs positive height and radius, got {height}, {radius}"
        )));
    }
    if !(0.0..=1.0).contains(&feature_strength) {
        return Err(ScanError::bad_config("feature strength outside [0,1]"));
    }
    const SEGMENTS: usize = 24;
    let ring = |(hf, rf): (f64, f64)| -> Vec<Vec3> {
        (0..SEGMENTS)
            .map(|k| {
                let a = TAU * k as f64 / SEGMENTS as f64;
                Vec3::new(rf * radius * a.cos(), rf * radius * a.sin(), (hf - 0.5) * height)
            })
            .collect()
    };
    let rings: Vec<Vec<Vec3>> = TALL_PROFILE.iter().map(|&p| ring(p)).collect();
    let mut tris = Vec::new();
    for w in rings.windows(2) {
        let (lo, hi) = (&w[0], &w[1]);
        for k in 0..SEGMENTS {
            let k1 = (k + 1) % SEGMENTS;
            tris.push([lo[k], lo[k1], hi[k1]]);
            tris.push([lo[k], hi[k1], hi[k]]);
        }
    }
    let bottom = Vec3::new(0.0, 0.0, -0.5 * height);
    let top = Vec3::new(0.0, 0.0, 0.5 * height);
    let (first, last) = (&rings[0], &rings[rings.len() - 1]);
    for k in 0..SEGMENTS {
        let k1 = (k + 1) % SEGMENTS;
        tris.push([bottom, first[k1], first[k]]);
        tris.push([top, last[k], last[k1]]);
    }
    let feats = vec![feature_strength; tris.len()];
    SceneObject::new(tris, feats)
}

/// Area-weighted uniform samples with outward normals and the owning
/// triangle's feature strength.
pub fn sample_surface(obj: &SceneObject, n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(obj.triangles.len());
    let mut total = 0.0;
    for t in &obj.triangles {
        total += triangle_area(t);
        cumulative.push(total);
    }
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c <= target).min(obj.triangles.len() - 1);
        let t = &obj.triangles[idx];
        let r1: f64 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        let p = t[0] * (1.0 - r1) + t[1] * (r1 * (1.0 - r2)) + t[2] * (r1 * r2);
        points.push(p);
        normals.push(triangle_normal(t));
        features.push(obj.feature_strength[idx]);
    }
    PointCloud {
        points,
        normals: Some(normals),
        feature_strength: Some(features),
    }
}

/// Pinhole camera rigidly attached to a pose; looks along the body +x axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose: Pose,
    pub hfov: f64,
    pub vfov: f64,
    pub max_range: f64,
    pub width: usize,
    pub height: usize,
}

pub const DEFAULT_FOV: f64 = 1.5;
pub const DEFAULT_MAX_RANGE: f64 = 2.0;
pub const DEFAULT_RESOLUTION: usize = 320;

impl Camera {
    pub fn new(pose: Pose, hfov: f64, vfov: f64, max_range: f64, width: usize, height: usize) -> Result<Self> {
        let fov_ok = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if !fov_ok(hfov) || !fov_ok(vfov) {
            return Err(ScanError::bad_config("field of view must be in (0, pi)"));
        }
        if !(max_range > 0.0) || width == 0 || height == 0 {
            return Err(ScanError::bad_config("camera range and resolution must be positive"));
        }
        Ok(Self {
            pose,
            hfov,
            vfov,
            max_range,
            width,
            height,
        })
    }

    /// Default intrinsics (1.5 rad FOV, 2 m range, 320x320) at `pose`.
    pub fn with_defaults(pose: Pose) -> Self {
        Self {
            pose,
            hfov: DEFAULT_FOV,
            vfov: DEFAULT_FOV,
            max_range: DEFAULT_MAX_RANGE,
            width: DEFAULT_RESOLUTION,
            height: DEFAULT_RESOLUTION,
        }
    }

    pub fn in_frustum(&self, p: &Vec3) -> bool {
        let b = self.pose.world_to_body(p);
        if b.x <= 0.0 {
            return false;
        }
        (b.y / b.x).abs() <= (self.hfov / 2.0).tan() && (b.z / b.x).abs() <= (self.vfov / 2.0).tan()
    }

    /// Pixel coordinates (column, row) and forward depth of a world point.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let b = self.pose.world_to_body(p);
        if b.x <= 0.0 {
            return None;
        }
        let fx = self.width as f64 / 2.0 / (self.hfov / 2.0).tan();
        let fy = self.height as f64 / 2.0 / (self.vfov / 2.0).tan();
        let col = self.width as f64 / 2.0 - fx * b.y / b.x;
        let row = self.height as f64 / 2.0 - fy * b.z / b.x;
        Some((col, row, b.x))
    }

    /// Frustum, range and front-facing tests without occlusion.
    pub fn sees_unoccluded(&self, p: &Vec3, normal: Option<&Vec3>) -> bool {
        let view = p - self.pose.position;
        if view.norm() > self.max_range || !self.in_frustum(p) {
            return false;
        }
        normal.map_or(true, |n| n.dot(&view) < 0.0)
    }
}

/// Indices (ascending) passing frustum, range and facing tests; the
/// candidates for [`visible_points`].
pub fn candidate_points(cloud: &PointCloud, cam: &Camera) -> Vec<usize> {
    (0..cloud.len())
        .filter(|&i| {
            let n = cloud.normals.as_ref().map(|ns| &ns[i]);
            cam.sees_unoccluded(&cloud.points[i], n)
        })
        .collect()
}

/// Indices (ascending) of points the camera actually sees. Clouds without
/// normals skip the facing test.
pub fn visible_points(cloud: &PointCloud, obj: &SceneObject, cam: &Camera) -> Vec<usize> {
    candidate_points(cloud, cam)
        .into_iter()
        .filter(|&i| !obj.segment_blocked(&cam.pose.position, &cloud.points[i]))
        .collect()
}

/// Möller–Trumbore; returns the segment parameter of the hit, if any.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, t: &Triangle) -> Option<f64> {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - t[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Uniform grid of triangle references, cell size = bounds diagonal / 32.
#[derive(Debug, Clone)]
struct TriangleGrid {
    bounds: Aabb,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl TriangleGrid {
    fn build(triangles: &[Triangle]) -> Self {
        let mut bounds = Aabb::from_points(triangles.iter().flatten()).expect("non-empty");
        let pad = Vec3::repeat(1e-9 + 1e-9 * bounds.diagonal());
        bounds.min -= pad;
        bounds.max += pad;
        let cell = bounds.diagonal() / 32.0;
        let ext = bounds.extents();
        let dims = [0, 1, 2].map(|i| ((ext[i] / cell).ceil() as usize).max(1));
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut grid = Self {
            bounds,
            cell,
            dims,
            cells: Vec::new(),
        };
        for (ti, t) in triangles.iter().enumerate() {
            let tb = Aabb::from_points(t.iter()).unwrap();
            let lo = grid.coords(&tb.min);
            let hi = grid.coords(&tb.max);
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        cells[grid.flat([x, y, z])].push(ti as u32);
                    }
                }
            }
        }
        grid.cells = cells;
        grid
    }

    fn coords(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|i| {
            let f = ((p[i] - self.bounds.min[i]) / self.cell).floor();
            if f < 0.0 {
                0
            } else {
                (f as usize).min(self.dims[i] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn segment_blocked(&self, triangles: &[Triangle], from: &Vec3, to: &Vec3, eps: f64) -> bool {
        let dir = to - from;
        let len = dir.norm();
        if len <= eps {
            return false;
        }
        let t_limit = 1.0 - eps / len;

        // Clip the segment to the grid bounds (slab test).
        let (mut t0, mut t1) = (0.0f64, t_limit);
        for i in 0..3 {
            if dir[i].abs() < 1e-300 {
                if from[i] < self.bounds.min[i] || from[i] > self.bounds.max[i] {
                    return false;
                }
            } else {
                let a = (self.bounds.min[i] - from[i]) / dir[i];
                let b = (self.bounds.max[i] - from[i]) / dir[i];
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if t0 > t1 {
            return false;
        }

        let start = from + dir * t0;
        let mut c = self.coords(&start).map(|v| v as i64);
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for i in 0..3 {
            if dir[i] > 0.0 {
                step[i] = 1;
                let boundary = self.bounds.min[i] + (c[i] + 1) as f64 * self.cell;
                t_max[i] = (boundary - from[i]) / dir[i];
                t_delta[i] = self.cell / dir[i];
            } else if dir[i] < 0.0 {
                step[i] = -1;
                let boundary = self.bounds.min[i] + c[i] as f64 * self.cell;
                t_max[i] = (boundary - from[i]) / dir[i];
                t_delta[i] = -self.cell / dir[i];
            }
        }
        loop {
            let cell = &self.cells[self.flat(c.map(|v| v as usize))];
            for &ti in cell {
                if let Some(t) = ray_triangle(from, &dir, &triangles[ti as usize]) {
                    if t > 1e-12 && t < t_limit {
                        return true;
                    }
                }
            }
            let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[axis] > t1 {
                return false;
            }
            c[axis] += step[axis];
            if c[axis] < 0 || c[axis] >= self.dims[axis] as i64 {
                return false;
            }
            t_max[axis] += t_delta[axis];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::aabb;

    const BOX_DIMS: [f64; 3] = [0.547, 0.203, 0.209];

    fn unit_cube() -> SceneObject {
        build_engraved_box(Vec3::new(1.0, 1.0, 1.0), 0.0, 0).unwrap()
    }

    fn brute_blocked(obj: &SceneObject, from: &Vec3, to: &Vec3) -> bool {
        let dir = to - from;
        let t_limit = 1.0 - OCCLUSION_EPS / dir.norm();
        obj.triangles
            .iter()
            .filter_map(|t| ray_triangle(from, &dir, t))
            .any(|t| t > 1e-12 && t < t_limit)
    }

    #[test]
    fn engraved_box_extents_match_dims() {
        let obj = build_engraved_box(Vec3::from(BOX_DIMS), 0.04, 1).unwrap();
        let ext = obj.bounds().extents();
        for i in 0..3 {
            assert!((ext[i] - BOX_DIMS[i]).abs() < 1e-9);
        }
        assert!(obj.feature_strength.iter().any(|&f| f == ENGRAVING_FEATURE));
        assert!(obj.feature_strength.iter().any(|&f| f == FLAT_FEATURE));
    }

    #[test]
    fn engraved_box_sample_extents() {
        let obj = build_engraved_box(Vec3::from(BOX_DIMS), 0.04, 1).unwrap();
        let ext = aabb(&sample_surface(&obj, 20_000, 3)).unwrap().extents();
        for i in 0..3 {
            assert!((ext[i] - BOX_DIMS[i]).abs() < 0.005, "{ext:?}");
            assert!(ext[i] <= BOX_DIMS[i] + 1e-9);
        }
    }

    #[test]
    fn plain_box_has_twelve_triangles() {
        assert_eq!(unit_cube().triangles.len(), 12);
    }

    #[test]
    fn engraving_too_deep_is_rejected() {
        let dims = Vec3::from(BOX_DIMS);
        assert!(matches!(build_engraved_box(dims, 0.1015, 0), Err(ScanError::BadConfig(_))));
        assert!(matches!(build_engraved_box(dims, 0.2, 0), Err(ScanError::BadConfig(_))));
        assert!(build_engraved_box(Vec3::new(1.0, -1.0, 1.0), 0.0, 0).is_err());
    }

    #[test]
    fn normals_point_outward() {
        let obj = build_engraved_box(Vec3::from(BOX_DIMS), 0.04, 5).unwrap();
        // Flat outer faces: normal points away from the centre.
        for (t, f) in obj.triangles.iter().zip(&obj.feature_strength) {
            if *f == FLAT_FEATURE {
                let c = (t[0] + t[1] + t[2]) / 3.0;
                assert!(triangle_normal(t).dot(&c) > 0.0);
            }
        }
        let tall = build_tall_object(0.9, 0.08, 0.15).unwrap();
        for t in &tall.triangles {
            let c = (t[0] + t[1] + t[2]) / 3.0;
            let n = triangle_normal(t);
            let radial = Vec3::new(c.x, c.y, 0.0);
            assert!(n.dot(&radial) > -1e-9 || n.z.abs() > 0.99);
        }
    }

    #[test]
    fn tall_object_examples() {
        let obj = build_tall_object(0.9, 0.08, TALL_OBJECT_FEATURE).unwrap();
        assert!((obj.bounds().extents().z - 0.9).abs() < 1e-6);
        assert!(obj.bounds().extents().x <= 0.16 + 1e-9);
        assert!(matches!(build_tall_object(0.9, 0.0, 0.15), Err(ScanError::BadConfig(_))));
        assert!(build_tall_object(-1.0, 0.1, 0.15).is_err());
        let zero = build_tall_object(0.9, 0.08, 0.0).unwrap();
        assert!(zero.feature_strength.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn single_triangle_sample_lies_inside() {
        let t = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let obj = SceneObject::new(vec![t], vec![0.5]).unwrap();
        let c = sample_surface(&obj, 1, 9);
        let p = c.points[0];
        assert_eq!(p.z, 0.0);
        assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12);
    }

    #[test]
    fn cube_faces_receive_area_weighted_counts() {
        let obj = unit_cube();
        let n = 10_000;
        let c = sample_surface(&obj, n, 4);
        let mut per_face = [0usize; 6];
        for nrm in c.normals.as_ref().unwrap() {
            let axis = nrm.iamax();
            let face = axis * 2 + usize::from(nrm[axis] < 0.0);
            per_face[face] += 1;
        }
        // Equal areas: expectation n/6 each.
        let expected = n as f64 / 6.0;
        for count in per_face {
            assert!((count as f64 - expected).abs() < 0.05 * expected, "{per_face:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_on_surface() {
        let obj = build_engraved_box(Vec3::from(BOX_DIMS), 0.04, 2).unwrap();
        let a = sample_surface(&obj, 500, 77);
        let b = sample_surface(&obj, 500, 77);
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        for p in &a.points {
            let on_plane = obj.triangles.iter().any(|t| {
                let n = triangle_normal(t);
                (p - t[0]).dot(&n).abs() < 1e-9
            });
            assert!(on_plane);
        }
    }

    #[test]
    fn camera_on_plus_x_never_sees_minus_x_face() {
        let obj = unit_cube();
        let cloud = sample_surface(&obj, 3000, 1);
        let cam = Camera::with_defaults(Pose::facing(Vec3::new(1.5, 0.0, 0.0), &Vec3::zeros()));
        let vis = visible_points(&cloud, &obj, &cam);
        assert!(!vis.is_empty());
        let normals = cloud.normals.as_ref().unwrap();
        for &i in &vis {
            assert!(normals[i].x > -0.5);
            assert!(cloud.points[i].x > -0.5 + 1e-9);
        }
    }

    #[test]
    fn points_behind_camera_excluded() {
        let cloud = PointCloud::with_attributes(
            vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)],
            Some(vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)]),
            None,
        )
        .unwrap();
        let obj = SceneObject::new(
            vec![[Vec3::new(5.0, 5.0, 5.0), Vec3::new(5.1, 5.0, 5.0), Vec3::new(5.0, 5.1, 5.0)]],
            vec![0.5],
        )
        .unwrap();
        let cam = Camera::with_defaults(Pose::from_yaw(Vec3::zeros(), 0.0));
        assert_eq!(visible_points(&cloud, &obj, &cam), vec![1]);
    }

    #[test]
    fn grid_occlusion_matches_brute_force() {
        let obj = build_engraved_box(Vec3::from(BOX_DIMS), 0.04, 11).unwrap();
        let cloud = sample_surface(&obj, 4000, 12);
        for az in [0.0, 0.7, 1.9, 3.3, 4.4] {
            let pos = Vec3::new(0.5 * f64::cos(az), 0.5 * f64::sin(az), 0.03);
            let cam = Camera::with_defaults(Pose::facing(pos, &Vec3::zeros()));
            let fast = visible_points(&cloud, &obj, &cam);
            let brute: Vec<usize> = candidate_points(&cloud, &cam)
                .into_iter()
                .filter(|&i| !brute_blocked(&obj, &pos, &cloud.points[i]))
                .collect();
            assert_eq!(fast, brute, "azimuth {az}");
        }
    }

    #[test]
    fn convex_box_visibility_equals_front_and_side_samples() {
        let obj = unit_cube();
        let cloud = sample_surface(&obj, 5000, 21);
        let cam = Camera::with_defaults(Pose::facing(Vec3::new(6.0, 0.0, 0.0), &Vec3::zeros()));
        let cam = Camera { max_range: 100.0, ..cam };
        let vis = visible_points(&cloud, &obj, &cam);
        let brute: Vec<usize> = (0..cloud.len())
            .filter(|&i| {
                let p = cloud.points[i];
                cam.in_frustum(&p)
                    && cloud.normals.as_ref().unwrap()[i].dot(&(p - cam.pose.position)) < 0.0
                    && !brute_blocked(&obj, &cam.pose.position, &p)
            })
            .collect();
        assert_eq!(vis, brute);
        // Only the +x face faces a camera on the axis.
        let front = cloud.normals.as_ref().unwrap().iter().filter(|n| n.x > 0.99).count();
        assert_eq!(vis.len(), front);
    }

    #[test]
    fn narrower_fov_never_adds_points() {
        let obj = build_engraved_box(Vec3::from(BOX_DIMS), 0.04, 3).unwrap();
        let cloud = sample_surface(&obj, 3000, 4);
        let pose = Pose::facing(Vec3::new(0.1, 0.5, 0.0), &Vec3::zeros());
        let wide = visible_points(&cloud, &obj, &Camera::with_defaults(pose));
        let narrow_cam = Camera::new(pose, 0.6, 0.6, DEFAULT_MAX_RANGE, 320, 320).unwrap();
        let narrow = visible_points(&cloud, &obj, &narrow_cam);
        assert!(narrow.iter().all(|i| wide.contains(i)));
        assert!(narrow.len() < wide.len());
    }

    #[test]
    fn camera_validation() {
        let pose = Pose::from_yaw(Vec3::zeros(), 0.0);
        assert!(Camera::new(pose, 0.0, 1.0, 1.0, 10, 10).is_err());
        assert!(Camera::new(pose, std::f64::consts::PI, 1.0, 1.0, 10, 10).is_err());
        assert!(Camera::new(pose, 1.0, 1.0, 1.0, 10, 10).is_ok());
    }
}
