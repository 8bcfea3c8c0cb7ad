use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scanplan::config::MissionConfig;
use scanplan::evaluate::evaluate_run;
use scanplan::experiment::{aggregate, format_table, run_matrix, write_matrix, MatrixSpec};
use scanplan::metrics::{parse_summary_csv, SUMMARY_HEADER};
use scanplan::mission::{run_mission, write_run};
use scanplan::{Result, ScanError};

/// Simulated UAV scanning missions: fly, reconstruct, evaluate.
#[derive(Parser)]
#[command(name = "scanplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mission and write its artifacts.
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score a finished run directory against the ground truth.
    Evaluate {
        run_dir: PathBuf,
        /// Compare the reference with itself.
        #[arg(long)]
        oracle: bool,
    },
    /// Run an experiment matrix.
    Matrix {
        spec: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(short, long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the aggregate table for a matrix or run directory.
    Report { dir: PathBuf },
    /// Print the default configuration with every key documented.
    Defaults,
}

fn simulate(config: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|e| ScanError::io(config, e))?;
    let cfg = MissionConfig::from_ini_str_with_env(&text, std::env::vars())?;
    let run = run_mission(&cfg)?;
    write_run(out, &run, &text)?;
    println!(
        "{}: {} images taken, {} used, {} uncovered slices, {:.1} s mission time",
        cfg.mode.as_str(),
        run.images_taken(),
        run.images_used(),
        run.final_report.uncovered().len(),
        run.mission_time
    );
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let mut files = vec![dir.join("summary.csv")];
    if let Ok(entries) = std::fs::read_dir(dir) {
        let mut subdirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        subdirs.sort();
        files.extend(subdirs.into_iter().map(|d| d.join("summary.csv")));
    }
    let mut rows = Vec::new();
    for f in files.iter().filter(|f| f.exists()) {
        let text = std::fs::read_to_string(f).map_err(|e| ScanError::io(f, e))?;
        rows.extend(parse_summary_csv(&text, f)?);
    }
    if rows.is_empty() {
        return Err(ScanError::IncompleteRun(format!(
            "no summary.csv under {} (expected header '{SUMMARY_HEADER}')",
            dir.display()
        )));
    }
    print!("{}", format_table(&aggregate(&rows)));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Evaluate { run_dir, oracle } => {
            let eval = evaluate_run(&run_dir, oracle)?;
            println!("{SUMMARY_HEADER}\n{}", eval.summary.csv_row());
            Ok(())
        }
        Command::Matrix { spec, out, jobs } => {
            let spec = MatrixSpec::load(&spec)?;
            let records = run_matrix(&spec, jobs)?;
            let stats = write_matrix(&out, &records)?;
            print!("{}", format_table(&stats));
            let failed = records.iter().filter(|r| r.outcome.is_err()).count();
            if failed > 0 {
                eprintln!("{failed} of {} runs failed, see failures.csv", records.len());
            }
            Ok(())
        }
        Command::Report { dir } => report(&dir),
        Command::Defaults => {
            print!("{}", scanplan::config::DEFAULT_CONFIG);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                ScanError::BadConfig(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
