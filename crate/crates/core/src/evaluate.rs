//! Post-flight evaluation of a run directory against the ground truth.

use std::path::Path;

use crate::config::{CameraMode, MissionConfig};
use crate::error::{Result, ScanError};
use crate::imaging::{write_pgm, RenderMode};
use crate::metrics::{summarize_run, summary_csv, EvalParams, Evaluation, RunArtifacts};
use crate::mission::{object_center, reference_cloud, MissionOutput};
use crate::ply;

pub fn render_mode(camera: CameraMode) -> RenderMode {
    RenderMode::Intensity {
        feature_modulated: camera == CameraMode::Rgb,
    }
}

pub fn eval_params(cfg: &MissionConfig) -> EvalParams {
    let e = &cfg.eval;
    EvalParams {
        ring_count: e.ring_count,
        ring_radius: e.ring_radius,
        fov: e.fov,
        resolution: e.resolution,
        splat_px: e.splat_px,
        render_mode: render_mode(cfg.camera_mode),
        preprocess: e.preprocess.clone(),
        wd_samples: e.wd_samples,
        wd_seed: cfg.seed,
        ..EvalParams::default()
    }
}

/// Scores an in-memory mission. With `oracle` the reference is compared
/// against itself, which pins every metric to its ideal value.
pub fn evaluate_output(out: &MissionOutput, oracle: bool) -> Result<Evaluation> {
    let cfg = &out.config;
    let reference = reference_cloud(cfg)?;
    let mut params = eval_params(cfg);
    params.align = !oracle;
    let recon = if oracle { &reference } else { &out.final_cloud };
    summarize_run(
        &RunArtifacts {
            approach: cfg.mode.as_str(),
            reference: &reference,
            center: object_center(cfg),
            reconstruction: recon,
            merge_latencies: &out.merge_latencies,
            images_taken: out.images_taken(),
            images_used: out.images_used(),
        },
        &params,
    )
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| ScanError::io(path, e))
}

fn run_info_value(text: &str, key: &str) -> Result<usize> {
    text.lines()
        .filter_map(|l| l.split_once(','))
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.trim().parse().ok())
        .ok_or_else(|| ScanError::IncompleteRun(format!("run_info.csv lacks '{key}'")))
}

/// Merge latencies: the last column of the coverage log.
fn latencies(coverage_csv: &str) -> Vec<f64> {
    coverage_csv
        .lines()
        .skip(1)
        .filter_map(|l| l.rsplit(',').next()?.parse().ok())
        .collect()
}

/// Evaluates a run directory written by `write_run`: writes `summary.csv`,
/// `aligned.ply` and the rendered ring under `views/`.
pub fn evaluate_run(dir: &Path, oracle: bool) -> Result<Evaluation> {
    let final_path = dir.join("final.ply");
    if !final_path.exists() {
        return Err(ScanError::IncompleteRun(format!("{} is missing", final_path.display())));
    }
    let cfg = MissionConfig::from_ini_str(&read(&dir.join("config.effective.ini"))?)?;
    let reconstruction = ply::read_cloud(&final_path)?;
    let info = read(&dir.join("run_info.csv"))?;
    let merge_latencies = latencies(&read(&dir.join("coverage.csv"))?);
    let reference = reference_cloud(&cfg)?;
    let mut params = eval_params(&cfg);
    params.align = !oracle;
    let eval = summarize_run(
        &RunArtifacts {
            approach: cfg.mode.as_str(),
            reference: &reference,
            center: object_center(&cfg),
            reconstruction: if oracle { &reference } else { &reconstruction },
            merge_latencies: &merge_latencies,
            images_taken: run_info_value(&info, "images_taken")?,
            images_used: run_info_value(&info, "images_used")?,
        },
        &params,
    )?;

    std::fs::write(dir.join("summary.csv"), summary_csv(std::slice::from_ref(&eval.summary)))
        .map_err(|e| ScanError::io(dir.join("summary.csv"), e))?;
    ply::write_cloud(&dir.join("aligned.ply"), &eval.aligned)?;
    let views = dir.join("views");
    std::fs::create_dir_all(&views).map_err(|e| ScanError::io(&views, e))?;
    for (k, (r, c)) in eval.reference_views.iter().zip(&eval.reconstructed_views).enumerate() {
        write_pgm(&views.join(format!("reference_{k:02}.pgm")), r)?;
        write_pgm(&views.join(format!("reconstructed_{k:02}.pgm")), c)?;
    }
    Ok(eval)
}
