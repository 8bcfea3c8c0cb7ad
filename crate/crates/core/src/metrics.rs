//! Image and point-cloud quality metrics and per-run summaries.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::align::{align_clouds, IcpParams};
use crate::assignment::{assignment_cost, solve_assignment};
use crate::error::{Result, ScanError};
use crate::geometry::{apply_similarity, PointCloud, SimilarityTransform, Vec3};
use crate::imaging::{preprocess_image, render_ring, virtual_camera_ring, Image, Preprocess, RenderMode};
use crate::spatial::PointGrid;

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(ScanError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

pub fn psnr(a: &Image, b: &Image, data_range: f64) -> Result<f64> {
    check_dims(a, b)?;
    if a.pixels.is_empty() {
        return Err(ScanError::EmptyInput);
    }
    let mse = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP_DB))
}

/// Summed-area table with a zero border row and column.
fn integral(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(y * w + x);
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

/// Mean and standard deviation of SSIM over all 7x7 windows (stride 1).
pub fn ssim(a: &Image, b: &Image) -> Result<(f64, f64)> {
    check_dims(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(ScanError::DimensionMismatch(w, h, SSIM_WINDOW, SSIM_WINDOW));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (pa, pb) = (&a.pixels, &b.pixels);
    let sa = integral(w, h, |i| pa[i]);
    let sb = integral(w, h, |i| pb[i]);
    let saa = integral(w, h, |i| pa[i] * pa[i]);
    let sbb = integral(w, h, |i| pb[i] * pb[i]);
    let sab = integral(w, h, |i| pa[i] * pb[i]);
    let k = SSIM_WINDOW;
    let n = (k * k) as f64;
    let rect = |s: &[f64], x: usize, y: usize| {
        let w1 = w + 1;
        s[(y + k) * w1 + x + k] - s[y * w1 + x + k] - s[(y + k) * w1 + x] + s[y * w1 + x]
    };
    let mut values = Vec::with_capacity((w - k + 1) * (h - k + 1));
    for y in 0..=h - k {
        for x in 0..=w - k {
            let ma = rect(&sa, x, y) / n;
            let mb = rect(&sb, x, y) / n;
            let va = (rect(&saa, x, y) / n - ma * ma).max(0.0);
            let vb = (rect(&sbb, x, y) / n - mb * mb).max(0.0);
            let cov = rect(&sab, x, y) / n - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            values.push(s);
        }
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
    Ok((m, var.sqrt()))
}

/// Nearest-neighbour distance from every point of `from` into `to`.
fn nn_distances(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    let grid = PointGrid::new(to, 4).expect("non-empty target");
    from.par_iter().map(|p| grid.nearest(p).expect("non-empty grid").1).collect()
}

/// Symmetric Hausdorff distance (exact).
pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(ScanError::EmptyInput);
    }
    let ab = nn_distances(&a.points, &b.points).into_iter().fold(0.0, f64::max);
    let ba = nn_distances(&b.points, &a.points).into_iter().fold(0.0, f64::max);
    Ok(ab.max(ba))
}

/// Mean nearest-neighbour distance averaged over both directions.
pub fn symmetric_chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(ScanError::EmptyInput);
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(nn_distances(&a.points, &b.points)) + mean(nn_distances(&b.points, &a.points))))
}

pub const DEFAULT_WD_SAMPLES: usize = 256;

fn subsample(points: &[Vec3], m: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, points.len(), m)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

/// Exact 1-Wasserstein distance between uniform subsamples of `m` points
/// (fewer if a cloud is smaller) drawn with the same seed from each cloud.
pub fn wasserstein(a: &PointCloud, b: &PointCloud, m: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(ScanError::EmptyInput);
    }
    if m == 0 {
        return Err(ScanError::bad_config("wasserstein needs m >= 1"));
    }
    let m = m.min(a.len()).min(b.len());
    let sa = subsample(&a.points, m, seed);
    let sb = subsample(&b.points, m, seed);
    let cost: Vec<f64> = sa.iter().flat_map(|p| sb.iter().map(move |q| (p - q).norm())).collect();
    let assign = solve_assignment(&cost, m);
    Ok(assignment_cost(&cost, m, &assign) / m as f64)
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

pub const SUMMARY_HEADER: &str =
    "approach,psnr_db,ssim_mean,ssim_std,lpips,hd_m,wd_m,latency_mean_s,latency_std_s,images_taken,images_used";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub approach: String,
    pub psnr_db: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub hd_m: f64,
    pub wd_m: f64,
    pub latency_mean_s: f64,
    pub latency_std_s: f64,
    pub images_taken: usize,
    pub images_used: usize,
}

impl RunSummary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},n/a,{:.6},{:.6},{:.6},{:.6},{},{}",
            self.approach,
            self.psnr_db,
            self.ssim_mean,
            self.ssim_std,
            self.hd_m,
            self.wd_m,
            self.latency_mean_s,
            self.latency_std_s,
            self.images_taken,
            self.images_used
        )
    }
}

/// Parses rows written by `summary_csv`. `path` is only used in errors.
pub fn parse_summary_csv(text: &str, path: &std::path::Path) -> Result<Vec<RunSummary>> {
    let bad = |line: usize, msg: &str| ScanError::Parse {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SUMMARY_HEADER => {}
        _ => return Err(bad(1, "unexpected header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(bad(i + 1, "expected 11 fields"));
        }
        let real = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        let count = |k: usize| f[k].trim().parse::<usize>().map_err(|_| bad(i + 1, "bad count"));
        rows.push(RunSummary {
            approach: f[0].to_string(),
            psnr_db: real(1)?,
            ssim_mean: real(2)?,
            ssim_std: real(3)?,
            hd_m: real(5)?,
            wd_m: real(6)?,
            latency_mean_s: real(7)?,
            latency_std_s: real(8)?,
            images_taken: count(9)?,
            images_used: count(10)?,
        });
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[RunSummary]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub ring_count: usize,
    pub ring_radius: f64,
    pub fov: f64,
    pub resolution: usize,
    pub splat_px: usize,
    pub render_mode: RenderMode,
    pub preprocess: Vec<Preprocess>,
    pub wd_samples: usize,
    pub wd_seed: u64,
    pub icp: IcpParams,
    /// Skip alignment when the reconstruction is already in the reference frame.
    pub align: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            ring_count: 16,
            ring_radius: 1.0,
            fov: 1.5,
            resolution: 320,
            splat_px: crate::imaging::DEFAULT_SPLAT_PX,
            render_mode: RenderMode::Intensity { feature_modulated: false },
            preprocess: Vec::new(),
            wd_samples: DEFAULT_WD_SAMPLES,
            wd_seed: 0,
            icp: IcpParams::default(),
            align: true,
        }
    }
}

/// Everything a finished mission contributes to its summary row.
#[derive(Debug, Clone)]
pub struct RunArtifacts<'a> {
    pub approach: &'a str,
    pub reference: &'a PointCloud,
    /// Centre of the reference object, used for the camera ring.
    pub center: Vec3,
    pub reconstruction: &'a PointCloud,
    pub merge_latencies: &'a [f64],
    pub images_taken: usize,
    pub images_used: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub summary: RunSummary,
    pub alignment: SimilarityTransform,
    pub aligned: PointCloud,
    pub reference_views: Vec<Image>,
    pub reconstructed_views: Vec<Image>,
}

/// Aligns the reconstruction to the reference, renders both around the
/// virtual camera ring and computes every metric.
pub fn summarize_run(run: &RunArtifacts<'_>, params: &EvalParams) -> Result<Evaluation> {
    if run.reconstruction.is_empty() {
        return Err(ScanError::IncompleteRun("reconstruction is empty".into()));
    }
    if run.reference.is_empty() {
        return Err(ScanError::IncompleteRun("reference is empty".into()));
    }
    let alignment = if params.align {
        align_clouds(run.reconstruction, run.reference, &params.icp)?.transform
    } else {
        SimilarityTransform::identity()
    };
    let aligned = apply_similarity(&alignment, run.reconstruction);

    let cams = virtual_camera_ring(&run.center, params.ring_radius, params.ring_count, params.fov, params.resolution)?;
    let prep = |views: Vec<Image>| -> Result<Vec<Image>> {
        views.iter().map(|v| preprocess_image(v, &params.preprocess)).collect()
    };
    let reference_views = prep(render_ring(run.reference, &cams, params.render_mode, params.splat_px))?;
    let reconstructed_views = prep(render_ring(&aligned, &cams, params.render_mode, params.splat_px))?;

    let mut psnrs = Vec::with_capacity(cams.len());
    let mut ssims = Vec::with_capacity(cams.len());
    let mut ssim_stds = Vec::with_capacity(cams.len());
    for (r, c) in reference_views.iter().zip(&reconstructed_views) {
        psnrs.push(psnr(r, c, 1.0)?);
        let (m, s) = ssim(r, c)?;
        ssims.push(m);
        ssim_stds.push(s);
    }
    let (latency_mean_s, latency_std_s) = mean_std(run.merge_latencies);
    let summary = RunSummary {
        approach: run.approach.to_string(),
        psnr_db: mean_std(&psnrs).0,
        ssim_mean: mean_std(&ssims).0,
        ssim_std: mean_std(&ssim_stds).0,
        hd_m: hausdorff(&aligned, run.reference)?,
        wd_m: wasserstein(&aligned, run.reference, params.wd_samples, params.wd_seed)?,
        latency_mean_s,
        latency_std_s,
        images_taken: run.images_taken,
        images_used: run.images_used,
    };
    Ok(Evaluation {
        summary,
        alignment,
        aligned,
        reference_views,
        reconstructed_views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()))
                .collect(),
        )
    }

    fn brute_hausdorff(a: &PointCloud, b: &PointCloud) -> f64 {
        let directed = |x: &PointCloud, y: &PointCloud| {
            x.points
                .iter()
                .map(|p| y.points.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        directed(a, b).max(directed(b, a))
    }

    #[test]
    fn psnr_examples() {
        let z = Image::filled(8, 8, 0.0);
        let o = Image::filled(8, 8, 1.0);
        assert_eq!(psnr(&z, &z, 1.0).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&z, &o, 1.0).unwrap().abs() < 1e-12);
        let t = Image::filled(8, 8, 0.1);
        assert!((psnr(&z, &t, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(matches!(psnr(&z, &Image::filled(4, 8, 0.0), 1.0), Err(ScanError::DimensionMismatch(..))));
    }

    #[test]
    fn ssim_examples() {
        let half = Image::filled(16, 16, 0.5);
        assert_eq!(ssim(&half, &half).unwrap(), (1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Image::from_pixels(32, 32, (0..1024).map(|_| rng.random::<f64>()).collect()).unwrap();
        let (m, s) = ssim(&a, &a).unwrap();
        assert!((m - 1.0).abs() < 1e-9 && s < 1e-9);
        let neg = Image { pixels: a.pixels.iter().map(|p| 1.0 - p).collect(), ..a.clone() };
        assert!(ssim(&a, &neg).unwrap().0 < 0.0);
        assert!(ssim(&Image::filled(5, 5, 0.0), &Image::filled(5, 5, 0.0)).is_err());
    }

    #[test]
    fn hausdorff_examples_and_oracle() {
        let a = PointCloud::new(vec![Vec3::zeros()]);
        let b = PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0)]);
        assert_eq!(hausdorff(&a, &b).unwrap(), 1.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert!(hausdorff(&a, &PointCloud::default()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let x = random_cloud(&mut rng, 64);
            let y = random_cloud(&mut rng, 64);
            assert_eq!(hausdorff(&x, &y).unwrap(), brute_hausdorff(&x, &y));
        }
    }

    #[test]
    fn wasserstein_examples() {
        let a = PointCloud::new(vec![Vec3::zeros()]);
        let b = PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0)]);
        assert_eq!(wasserstein(&a, &b, 1, 0).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = random_cloud(&mut rng, 300);
        assert_eq!(wasserstein(&c, &c, 100, 3).unwrap(), 0.0);
        assert!(wasserstein(&c, &PointCloud::default(), 10, 0).is_err());
    }

    #[test]
    fn wasserstein_symmetric_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let x = random_cloud(&mut rng, 20);
            let y = random_cloud(&mut rng, 20);
            let z = random_cloud(&mut rng, 20);
            let (xy, yx) = (wasserstein(&x, &y, 20, 1).unwrap(), wasserstein(&y, &x, 20, 1).unwrap());
            assert!((xy - yx).abs() < 1e-9);
            let xz = wasserstein(&x, &z, 20, 1).unwrap();
            let yz = wasserstein(&y, &z, 20, 1).unwrap();
            assert!(xz <= xy + yz + 1e-9);
        }
    }

    #[test]
    fn chamfer_zero_on_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = random_cloud(&mut rng, 50);
        assert_eq!(symmetric_chamfer(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn summary_oracle_mode_and_empty() {
        let obj = crate::scene::build_engraved_box(Vec3::new(0.547, 0.203, 0.209), 0.04, 1).unwrap();
        let reference = crate::scene::sample_surface(&obj, 3000, 1);
        let params = EvalParams { resolution: 64, ring_count: 4, align: false, wd_samples: 32, ..EvalParams::default() };
        let run = RunArtifacts {
            approach: "oracle",
            reference: &reference,
            center: Vec3::zeros(),
            reconstruction: &reference,
            merge_latencies: &[],
            images_taken: 0,
            images_used: 0,
        };
        let ev = summarize_run(&run, &params).unwrap();
        assert_eq!(ev.summary.hd_m, 0.0);
        assert_eq!(ev.summary.wd_m, 0.0);
        assert_eq!(ev.summary.psnr_db, PSNR_CAP_DB);
        assert!((ev.summary.ssim_mean - 1.0).abs() < 1e-12);
        let empty = PointCloud::default();
        let bad = RunArtifacts { reconstruction: &empty, ..run };
        assert!(matches!(summarize_run(&bad, &params), Err(ScanError::IncompleteRun(_))));
    }

    #[test]
    fn summary_csv_layout() {
        let row = RunSummary {
            approach: "baseline".into(),
            psnr_db: 20.0,
            ssim_mean: 0.9,
            ssim_std: 0.01,
            hd_m: 0.1,
            wd_m: 0.02,
            latency_mean_s: 0.003,
            latency_std_s: 0.001,
            images_taken: 233,
            images_used: 232,
        };
        let csv = summary_csv(&[row]);
        assert!(csv.starts_with(SUMMARY_HEADER));
        assert!(csv.contains("baseline,20.0000,0.9000,0.0100,n/a,0.100000,0.020000,0.003000,0.001000,233,232"));
    }
}
