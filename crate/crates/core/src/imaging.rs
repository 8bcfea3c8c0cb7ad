//! Virtual-camera rendering of point clouds and image preprocessing filters.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Result, ScanError};
use crate::geometry::{PointCloud, Pose, Vec3};
use crate::scene::{Camera, DEFAULT_MAX_RANGE};

/// Single-channel image with row-major pixels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(ScanError::DimensionMismatch(width, height, pixels.len(), 1));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ScanError::bad_config("pixel values must lie in [0, 1]"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// `count` cameras evenly spaced in azimuth (starting at +x) on a circle at
/// the centre's height, all looking at the centre.
pub fn virtual_camera_ring(
    center: &Vec3,
    radius: f64,
    count: usize,
    fov: f64,
    resolution: usize,
) -> Result<Vec<Camera>> {
    if count == 0 || !(radius > 0.0) {
        return Err(ScanError::bad_config("camera ring needs count >= 1 and radius > 0"));
    }
    let range = DEFAULT_MAX_RANGE.max(2.0 * radius);
    (0..count)
        .map(|k| {
            let az = std::f64::consts::TAU * k as f64 / count as f64;
            let position = center + Vec3::new(radius * az.cos(), radius * az.sin(), 0.0);
            Camera::new(Pose::facing(position, center), fov, fov, range, resolution, resolution)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RenderMode {
    /// Distance to the nearest hit over max range; background 1.
    Depth,
    /// Lambert term of the nearest hit; background 0. With
    /// `feature_modulated`, the term is scaled by the point's feature
    /// strength (the colour-camera stand-in).
    Intensity { feature_modulated: bool },
}

pub const DEFAULT_SPLAT_PX: usize = 2;

/// Z-buffered splat rendering. Each point covers a disk of `splat_px`
/// pixels around its projection; the nearest point wins.
pub fn render_view(cloud: &PointCloud, cam: &Camera, mode: RenderMode, splat_px: usize) -> Image {
    let background = match mode {
        RenderMode::Depth => 1.0,
        RenderMode::Intensity { .. } => 0.0,
    };
    let mut img = Image::filled(cam.width, cam.height, background);
    let mut zbuf = vec![f64::INFINITY; cam.width * cam.height];
    let r = splat_px as i64;
    for (i, p) in cloud.points.iter().enumerate() {
        let view = p - cam.pose.position;
        let dist = view.norm();
        if dist > cam.max_range || dist == 0.0 {
            continue;
        }
        let Some((col, row, _)) = cam.project(p) else { continue };
        let (ci, cj) = (col.floor() as i64, row.floor() as i64);
        let value = match mode {
            RenderMode::Depth => dist / cam.max_range,
            RenderMode::Intensity { feature_modulated } => {
                let lambert = cloud
                    .normals
                    .as_ref()
                    .map_or(1.0, |n| (n[i].dot(&view) / dist).abs().min(1.0));
                let modulation = match (&cloud.feature_strength, feature_modulated) {
                    (Some(f), true) => 0.25 + 0.75 * f[i].clamp(0.0, 1.0),
                    _ => 1.0,
                };
                lambert * modulation
            }
        };
        for dj in -r..=r {
            for di in -r..=r {
                if di * di + dj * dj > r * r {
                    continue;
                }
                let (x, y) = (ci + di, cj + dj);
                if x < 0 || y < 0 || x >= cam.width as i64 || y >= cam.height as i64 {
                    continue;
                }
                let k = y as usize * cam.width + x as usize;
                if dist < zbuf[k] {
                    zbuf[k] = dist;
                    img.pixels[k] = value.clamp(0.0, 1.0);
                }
            }
        }
    }
    img
}

/// Renders every camera of a ring in parallel.
pub fn render_ring(cloud: &PointCloud, cams: &[Camera], mode: RenderMode, splat_px: usize) -> Vec<Image> {
    cams.par_iter().map(|c| render_view(cloud, c, mode, splat_px)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preprocess {
    UnsharpMask { radius: usize, amount: f64 },
    HistogramEqualize,
    Gamma(f64),
}

fn box_blur(img: &Image, radius: usize) -> Image {
    // Separable mean over in-bounds pixels.
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            let s: f64 = (lo..=hi).map(|xx| img.pixels[y * w + xx]).sum();
            tmp[y * w + x] = s / (hi - lo + 1) as f64;
        }
    }
    let mut out = Image::filled(w, h, 0.0);
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            let s: f64 = (lo..=hi).map(|yy| tmp[yy * w + x]).sum();
            out.pixels[y * w + x] = s / (hi - lo + 1) as f64;
        }
    }
    out
}

fn bin_of(v: f64) -> usize {
    ((v * 256.0) as usize).min(255)
}

fn equalize(img: &Image) -> Image {
    let mut hist = [0usize; 256];
    for &v in &img.pixels {
        hist[bin_of(v)] += 1;
    }
    let n = img.pixels.len().max(1) as f64;
    let mut cdf = [0.0; 256];
    let mut acc = 0;
    for (b, c) in hist.iter().enumerate() {
        acc += c;
        cdf[b] = acc as f64 / n;
    }
    Image {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&v| cdf[bin_of(v)]).collect(),
    }
}

/// Applies the filters in order; the result is clamped to [0, 1].
pub fn preprocess_image(img: &Image, ops: &[Preprocess]) -> Result<Image> {
    for op in ops {
        match *op {
            Preprocess::UnsharpMask { radius, amount } if radius < 1 || !amount.is_finite() => {
                return Err(ScanError::bad_config("unsharp mask needs radius >= 1 and finite amount"))
            }
            Preprocess::Gamma(g) if !(g > 0.0 && g.is_finite()) => {
                return Err(ScanError::bad_config("gamma must be positive"))
            }
            _ => {}
        }
    }
    let mut cur = img.clone();
    for op in ops {
        cur = match *op {
            Preprocess::UnsharpMask { radius, amount } => {
                let blur = box_blur(&cur, radius);
                let pixels = cur
                    .pixels
                    .iter()
                    .zip(&blur.pixels)
                    .map(|(a, b)| (a + amount * (a - b)).clamp(0.0, 1.0))
                    .collect();
                Image { pixels, ..cur }
            }
            Preprocess::HistogramEqualize => equalize(&cur),
            Preprocess::Gamma(g) => Image {
                pixels: cur.pixels.iter().map(|v| v.powf(g).clamp(0.0, 1.0)).collect(),
                ..cur
            },
        };
    }
    Ok(cur)
}

pub fn image_to_pgm(img: &Image) -> String {
    let mut s = format!("P2\n{} {}\n255\n", img.width, img.height);
    for row in 0..img.height {
        let line: Vec<String> = (0..img.width)
            .map(|c| ((img.get(c, row) * 255.0).round() as u8).to_string())
            .collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, image_to_pgm(img)).map_err(|e| ScanError::io(path, e))
}
