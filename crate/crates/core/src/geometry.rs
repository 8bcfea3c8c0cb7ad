//! Core 3D types and frame transformations.
//!
//! World frame is right-handed and z-up. Azimuth is measured counter-clockwise
//! from +x. Body frames follow the same convention with +x as the forward
//! (optical) axis.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, ScanError};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHO_TOL: f64 = 1e-9;

/// Rotation about +z by `angle` radians.
pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rodrigues rotation about a (not necessarily unit) axis.
pub fn rot_axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let n = axis.norm();
    if n == 0.0 || angle == 0.0 {
        return Mat3::identity();
    }
    let k = axis / n;
    let kx = Mat3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Mat3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let r = a.transpose() * b;
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Uniformly distributed random rotation (Shoemake quaternion method).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random::<f64>() * TAU;
    let u3: f64 = rng.random::<f64>() * TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = nalgebra::Quaternion::new(a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos());
    nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

/// Rotation about a uniformly random axis by `angle`.
pub fn random_axis_rotation<R: Rng + ?Sized>(rng: &mut R, angle: f64) -> Mat3 {
    rot_axis_angle(&random_unit_vector(rng), angle)
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = gaussian_vec3(rng, 1.0);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Isotropic Gaussian vector with per-axis std `sigma`.
pub fn gaussian_vec3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec3 {
    let x: f64 = StandardNormal.sample(rng);
    let y: f64 = StandardNormal.sample(rng);
    let z: f64 = StandardNormal.sample(rng);
    Vec3::new(x, y, z) * sigma
}

pub fn is_rotation(m: &Mat3, tol: f64) -> bool {
    let should_be_identity = m.transpose() * m;
    (should_be_identity - Mat3::identity()).amax() <= tol && (m.determinant() - 1.0).abs() <= tol
}

/// Wraps an angle into [0, 2π).
pub fn wrap_tau(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Signed smallest difference `to - from`, in (-π, π].
pub fn angle_diff(from: f64, to: f64) -> f64 {
    let d = wrap_tau(to - from);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Azimuth of `p` about the vertical axis through `center`.
pub fn azimuth_about(p: &Vec3, center: &Vec3) -> f64 {
    wrap_tau((p.y - center.y).atan2(p.x - center.x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    /// Body-to-world rotation; column 0 is the forward axis.
    pub orientation: Mat3,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Mat3) -> Result<Self> {
        if !is_rotation(&orientation, ORTHO_TOL) {
            return Err(ScanError::degenerate("pose orientation is not a proper rotation"));
        }
        Ok(Self {
            position,
            orientation,
        })
    }

    /// Level pose with the forward axis at azimuth `yaw`.
    pub fn from_yaw(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            orientation: rot_z(yaw),
        }
    }

    /// Level pose looking horizontally toward `target`.
    pub fn facing(position: Vec3, target: &Vec3) -> Self {
        let yaw = (target.y - position.y).atan2(target.x - position.x);
        Self::from_yaw(position, yaw)
    }

    pub fn yaw(&self) -> f64 {
        self.orientation[(1, 0)].atan2(self.orientation[(0, 0)])
    }

    pub fn forward(&self) -> Vec3 {
        self.orientation.column(0).into_owned()
    }

    pub fn world_to_body(&self, p: &Vec3) -> Vec3 {
        self.orientation.transpose() * (p - self.position)
    }

    pub fn body_to_world(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }
}

/// `p -> scale * rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(ScanError::degenerate(format!("scale must be positive, got {scale}")));
        }
        if !is_rotation(&rotation, ORTHO_TOL) {
            return Err(ScanError::degenerate("rotation is not orthonormal with det +1"));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_vector(&self, n: &Vec3) -> Vec3 {
        self.rotation * n
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rt = self.rotation.transpose();
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose {
            position: self.apply(&pose.position),
            orientation: self.rotation * pose.orientation,
        }
    }

    /// Row-major serialization: scale, 9 rotation entries, translation.
    pub fn to_array(&self) -> [f64; 13] {
        let mut out = [0.0; 13];
        out[0] = self.scale;
        for r in 0..3 {
            for c in 0..3 {
                out[1 + r * 3 + c] = self.rotation[(r, c)];
            }
        }
        out[10] = self.translation.x;
        out[11] = self.translation.y;
        out[12] = self.translation.z;
        out
    }

    pub fn from_array(v: &[f64; 13]) -> Result<Self> {
        let rotation = Mat3::from_row_slice(&v[1..10]);
        Self::new(v[0], rotation, Vec3::new(v[10], v[11], v[12]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extents().norm()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn from_points<'a>(mut pts: impl Iterator<Item = &'a Vec3>) -> Option<Self> {
        let first = pts.next()?;
        let mut b = Aabb {
            min: *first,
            max: *first,
        };
        for p in pts {
            b.grow(p);
        }
        Some(b)
    }
}

/// Points with optional per-point unit normals and feature strengths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub feature_strength: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
            feature_strength: None,
        }
    }

    pub fn with_attributes(
        points: Vec<Vec3>,
        normals: Option<Vec<Vec3>>,
        feature_strength: Option<Vec<f64>>,
    ) -> Result<Self> {
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(ScanError::bad_config("normals length differs from points"));
            }
            if n.iter().any(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(ScanError::bad_config("normals must be unit length"));
            }
        }
        if let Some(f) = &feature_strength {
            if f.len() != points.len() {
                return Err(ScanError::bad_config("feature strengths length differs from points"));
            }
            if f.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(ScanError::bad_config("feature strength outside [0,1]"));
            }
        }
        Ok(Self {
            points,
            normals,
            feature_strength,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Copies the selected indices, carrying attributes along.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            feature_strength: self
                .feature_strength
                .as_ref()
                .map(|f| indices.iter().map(|&i| f[i]).collect()),
        }
    }

    /// Appends `other`. An attribute survives only if both sides carry it
    /// (or `self` was empty).
    pub fn extend(&mut self, other: &PointCloud) {
        let was_empty = self.is_empty();
        self.points.extend_from_slice(&other.points);
        self.normals = match (self.normals.take(), &other.normals) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
        self.feature_strength = match (self.feature_strength.take(), &other.feature_strength) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
    }
}

pub fn centroid(cloud: &PointCloud) -> Result<Vec3> {
    mean_of(&cloud.points)
}

pub fn mean_of(points: &[Vec3]) -> Result<Vec3> {
    if points.is_empty() {
        return Err(ScanError::EmptyInput);
    }
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    Ok(sum / points.len() as f64)
}

pub fn aabb(cloud: &PointCloud) -> Result<Aabb> {
    Aabb::from_points(cloud.points.iter()).ok_or(ScanError::EmptyInput)
}

pub fn apply_similarity(t: &SimilarityTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| t.apply_vector(n)).collect()),
        feature_strength: cloud.feature_strength.clone(),
    }
}

/// Principal axes as columns, ordered by descending variance, det +1.
///
/// The first axis points toward +x (ties toward +y, then +z); the second
/// toward +y (ties toward +z, then +x); the third completes a right-handed
/// frame.
pub fn pca_axes(cloud: &PointCloud) -> Result<Mat3> {
    Ok(pca(cloud)?.0)
}

/// Principal axes together with their (descending) covariance eigenvalues.
pub fn pca(cloud: &PointCloud) -> Result<(Mat3, Vec3)> {
    if cloud.len() < 3 {
        return Err(ScanError::degenerate("PCA needs at least 3 points"));
    }
    let mu = centroid(cloud)?;
    let mut cov = Mat3::zeros();
    for p in &cloud.points {
        let d = p - mu;
        cov += d * d.transpose();
    }
    cov /= cloud.len() as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vec3::new(
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    let scale = values[0].max(f64::MIN_POSITIVE);
    if values[0] <= 1e-24 || values[1] <= 1e-12 * scale {
        return Err(ScanError::degenerate("covariance has rank < 2 (collinear or coincident points)"));
    }

    let mut first: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    let mut second: Vec3 = eig.eigenvectors.column(order[1]).into_owned();
    orient(&mut first, [0, 1, 2]);
    orient(&mut second, [1, 2, 0]);
    let third = first.cross(&second);
    let axes = Mat3::from_columns(&[first, second, third]);
    Ok((axes, values))
}

fn orient(v: &mut Vec3, priority: [usize; 3]) {
    for &axis in &priority {
        if v[axis].abs() > 1e-12 {
            if v[axis] < 0.0 {
                *v = -*v;
            }
            return;
        }
    }
}
