//! Experiment matrices: approaches × UAV counts × objects × camera modes,
//! each cell run over a range of seeds, plus the aggregate report.

use std::fmt::Write as _;
use std::path::Path;

use ini::Ini;
use rayon::prelude::*;

use crate::config::{Approach, CameraMode, MissionConfig, ObjectKind};
use crate::error::{Result, ScanError};
use crate::evaluate::evaluate_output;
use crate::metrics::{mean_std, summary_csv, RunSummary};
use crate::mission::run_mission;

pub const MATRIX_SECTION: &str = "matrix";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub mode: Approach,
    pub uav_count: usize,
    pub object: ObjectKind,
    pub camera_mode: CameraMode,
}

impl Cell {
    pub fn label(&self) -> String {
        format!(
            "{}/{}uav/{}/{}",
            self.mode.as_str(),
            self.uav_count,
            self.object.as_str(),
            self.camera_mode.as_str()
        )
    }
}

#[derive(Debug, Clone)]
pub struct MatrixSpec {
    pub base: MissionConfig,
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
}

fn list<T, F: Fn(&str) -> Result<T>>(raw: Option<&str>, default: &str, parse: F) -> Result<Vec<T>> {
    raw.unwrap_or(default)
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

/// `"0-19"`, `"3"` or `"1, 4, 9"`.
pub fn parse_seeds(raw: &str) -> Result<Vec<u64>> {
    let bad = || ScanError::bad_config(format!("bad seed list '{raw}'"));
    let mut seeds = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if b < a {
                    return Err(bad());
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(seeds)
}

impl MatrixSpec {
    /// A matrix spec is a mission config with an extra `[matrix]` section
    /// holding comma-separated `modes`, `uav_counts`, `objects`,
    /// `camera_modes` and `seeds`. Missing lists fall back to the base config.
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let mut ini = Ini::load_from_str(text).map_err(|e| ScanError::bad_config(format!("spec syntax: {e}")))?;
        let matrix = ini
            .delete(Some(MATRIX_SECTION))
            .ok_or_else(|| ScanError::bad_config("spec has no [matrix] section"))?;
        let mut base_text = Vec::new();
        ini.write_to(&mut base_text)
            .map_err(|e| ScanError::bad_config(format!("spec: {e}")))?;
        let base = MissionConfig::from_ini_str(&String::from_utf8_lossy(&base_text))?;

        for (k, _) in matrix.iter() {
            if !matches!(k, "modes" | "uav_counts" | "objects" | "camera_modes" | "seeds") {
                return Err(ScanError::bad_config(format!("unknown key '{k}' in [matrix]")));
            }
        }
        let modes = list(matrix.get("modes"), base.mode.as_str(), str::parse::<Approach>)?;
        let uavs = list(matrix.get("uav_counts"), &base.uav_count.to_string(), |s| {
            s.parse::<usize>()
                .map_err(|_| ScanError::bad_config(format!("bad uav count '{s}'")))
        })?;
        let objects = list(matrix.get("objects"), base.object.as_str(), str::parse::<ObjectKind>)?;
        let cameras = list(matrix.get("camera_modes"), base.camera_mode.as_str(), str::parse::<CameraMode>)?;
        let seeds = match matrix.get("seeds") {
            Some(raw) => parse_seeds(raw)?,
            None => vec![base.seed],
        };

        let mut cells = Vec::new();
        for &mode in &modes {
            for &uav_count in &uavs {
                for &object in &objects {
                    for &camera_mode in &cameras {
                        cells.push(Cell {
                            mode,
                            uav_count,
                            object,
                            camera_mode,
                        });
                    }
                }
            }
        }
        if cells.is_empty() || seeds.is_empty() {
            return Err(ScanError::bad_config("matrix spec yields no runs"));
        }
        let spec = MatrixSpec { base, cells, seeds };
        for c in &spec.cells {
            spec.config(c, spec.seeds[0]).validate()?;
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ScanError::io(path, e))?;
        Self::from_ini_str(&text)
    }

    pub fn config(&self, cell: &Cell, seed: u64) -> MissionConfig {
        let mut cfg = self.base.clone();
        cfg.mode = cell.mode;
        cfg.uav_count = cell.uav_count;
        cfg.object = cell.object;
        cfg.camera_mode = cell.camera_mode;
        cfg.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub cell: String,
    pub seed: u64,
    pub outcome: std::result::Result<RunSummary, String>,
}

fn run_cell(spec: &MatrixSpec, cell: &Cell, seed: u64) -> RunRecord {
    let outcome = run_mission(&spec.config(cell, seed))
        .and_then(|out| evaluate_output(&out, false))
        .map(|e| RunSummary {
            approach: cell.label(),
            ..e.summary
        })
        .map_err(|e| e.to_string());
    RunRecord {
        cell: cell.label(),
        seed,
        outcome,
    }
}

/// Runs every (cell, seed) pair on a pool of `jobs` threads. Failures are
/// recorded and do not stop the batch. Records come back in matrix order.
pub fn run_matrix(spec: &MatrixSpec, jobs: usize) -> Result<Vec<RunRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ScanError::bad_config(format!("thread pool: {e}")))?;
    let work: Vec<(Cell, u64)> = spec
        .cells
        .iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (*c, s)))
        .collect();
    Ok(pool.install(|| work.par_iter().map(|(c, s)| run_cell(spec, c, *s)).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub cell: String,
    pub runs: usize,
    pub psnr: (f64, f64),
    pub ssim: (f64, f64),
    pub hd: (f64, f64),
    pub wd: (f64, f64),
    pub latency: (f64, f64),
    pub images_taken: (f64, f64),
    pub images_used: (f64, f64),
}

/// Per-cell mean and standard deviation across seeds, in first-seen order.
pub fn aggregate(rows: &[RunSummary]) -> Vec<CellStats> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.approach.as_str()) {
            order.push(&r.approach);
        }
    }
    order
        .into_iter()
        .map(|cell| {
            let group: Vec<&RunSummary> = rows.iter().filter(|r| r.approach == cell).collect();
            let stat = |f: fn(&RunSummary) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            CellStats {
                cell: cell.to_string(),
                runs: group.len(),
                psnr: stat(|r| r.psnr_db),
                ssim: stat(|r| r.ssim_mean),
                hd: stat(|r| r.hd_m),
                wd: stat(|r| r.wd_m),
                latency: stat(|r| r.latency_mean_s),
                images_taken: stat(|r| r.images_taken as f64),
                images_used: stat(|r| r.images_used as f64),
            }
        })
        .collect()
}

pub const CELL_STATS_HEADER: &str = "cell,runs,psnr_mean,psnr_std,ssim_mean,ssim_std,hd_mean,hd_std,wd_mean,wd_std,\
latency_mean,latency_std,images_taken_mean,images_taken_std,images_used_mean,images_used_std";

pub fn cell_stats_csv(stats: &[CellStats]) -> String {
    let mut s = format!("{CELL_STATS_HEADER}\n");
    for c in stats {
        let _ = write!(s, "{},{}", c.cell, c.runs);
        for (m, sd) in [c.psnr, c.ssim, c.hd, c.wd, c.latency, c.images_taken, c.images_used] {
            let _ = write!(s, ",{m:.6},{sd:.6}");
        }
        s.push('\n');
    }
    s
}

/// Plain-text table in the layout of the paper's result tables.
pub fn format_table(stats: &[CellStats]) -> String {
    let width = stats.iter().map(|c| c.cell.len()).max().unwrap_or(4).max(8);
    let mut s = format!(
        "{:<width$}  {:>4}  {:>14}  {:>15}  {:>5}  {:>17}  {:>17}  {:>19}  {:>7}  {:>7}\n",
        "approach", "runs", "PSNR [dB]", "SSIM", "LPIPS", "HD [m]", "WD [m]", "latency [s]", "#taken", "#used"
    );
    for c in stats {
        let _ = writeln!(
            s,
            "{:<width$}  {:>4}  {:>6.3} ± {:<5.3}  {:>6.4} ± {:<6.4}  {:>5}  {:>7.4} ± {:<7.4}  {:>7.4} ± {:<7.4}  {:>8.5} ± {:<8.5}  {:>7.1}  {:>7.1}",
            c.cell,
            c.runs,
            c.psnr.0,
            c.psnr.1,
            c.ssim.0,
            c.ssim.1,
            "n/a",
            c.hd.0,
            c.hd.1,
            c.wd.0,
            c.wd.1,
            c.latency.0,
            c.latency.1,
            c.images_taken.0,
            c.images_used.0
        );
    }
    s
}

pub const FAILURES_HEADER: &str = "cell,seed,error";

/// Writes `summary.csv`, `cell_stats.csv` and, if any run failed,
/// `failures.csv` into `dir`.
pub fn write_matrix(dir: &Path, records: &[RunRecord]) -> Result<Vec<CellStats>> {
    std::fs::create_dir_all(dir).map_err(|e| ScanError::io(dir, e))?;
    let rows: Vec<RunSummary> = records.iter().filter_map(|r| r.outcome.clone().ok()).collect();
    let stats = aggregate(&rows);
    let write = |name: &str, text: &str| std::fs::write(dir.join(name), text).map_err(|e| ScanError::io(dir.join(name), e));
    write("summary.csv", &summary_csv(&rows))?;
    write("cell_stats.csv", &cell_stats_csv(&stats))?;
    let failures: Vec<&RunRecord> = records.iter().filter(|r| r.outcome.is_err()).collect();
    if !failures.is_empty() {
        let mut s = format!("{FAILURES_HEADER}\n");
        for r in failures {
            let msg = r.outcome.as_ref().err().map_or(String::new(), |e| e.replace([',', '\n'], ";"));
            let _ = writeln!(s, "{},{},{}", r.cell, r.seed, msg);
        }
        write("failures.csv", &s)?;
    }
    Ok(stats)
}
