//! Experiment driver: validate a config, run the inversion pipeline stages,
//! write artifacts with a hashed manifest, or run the verification suite.
//!
//! Exit codes: 0 success, 1 validation error, 2 solver failure,
//! 3 verification/acceptance failure.

mod config;
mod manifest;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{load_run_config, Problem, RunConfig};

#[derive(Parser)]
#[command(
    name = "invpde",
    about = "Deterministic and linearized-Bayesian inversion for PDE-governed problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run derivative and property verification for both model problems.
    Verify {
        /// Negative control: corrupt the adjoint sign and expect failure.
        #[arg(long, hide = true)]
        inject_adjoint_sign_bug: bool,
        /// Also write the finite-difference sweeps as CSV files here.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Execute the pipeline described by a config file.
    Run {
        config: PathBuf,
        /// Validate the config and print the stage plan without solving.
        #[arg(long)]
        dry_run: bool,
    },
    /// Compute misfit-precision spectra for observation windows (advdiff).
    Spectrum {
        config: PathBuf,
        /// Windows as t0:t1 pairs, e.g. --windows 1:4 2:4 3:4
        #[arg(long, num_args = 0..)]
        windows: Vec<String>,
    },
}

fn output_dir(cfg_dir: &Path) -> PathBuf {
    match std::env::var_os("INVPDE_OUTPUT_ROOT") {
        Some(root) if cfg_dir.is_relative() => PathBuf::from(root).join(cfg_dir),
        _ => cfg_dir.to_path_buf(),
    }
}

fn describe_plan(rc: &RunConfig) -> String {
    let mut stages = Vec::new();
    if rc.stages.sample_prior {
        stages.push("sample-prior");
    }
    if rc.stages.map {
        stages.push("map");
    }
    if rc.stages.eigens {
        stages.push("eigens");
    }
    if rc.stages.variance {
        stages.push("variance");
    }
    if rc.stages.sample_posterior {
        stages.push("sample-posterior");
    }
    format!(
        "problem: {}\noutput: {}\nstages: {}",
        match rc.problem {
            Problem::Poisson => "poisson",
            Problem::AdvDiff => "advdiff",
        },
        output_dir(&rc.output_dir).display(),
        stages.join(" -> ")
    )
}

fn cmd_run(config_path: &Path, dry_run: bool) -> ExitCode {
    let rc = match load_run_config(config_path) {
        Ok(rc) => rc,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    println!("{}", describe_plan(&rc));
    if dry_run {
        println!("dry run: config is valid; nothing solved.");
        return ExitCode::SUCCESS;
    }
    let out_dir = output_dir(&rc.output_dir);
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("cannot create output dir {}: {e}", out_dir.display());
        return ExitCode::from(1);
    }

    let result: Result<Vec<PathBuf>, (String, String)> = match rc.problem {
        Problem::Poisson => {
            let cfg = rc.poisson.expect("validated");
            match invpde::poisson::run_experiment(cfg) {
                Ok(out) => {
                    println!(
                        "map: {} Newton iterations ({} inner CG); eigensolve kept {} modes",
                        out.newton_trace.newton_iters(),
                        out.newton_trace.total_cg_iters(),
                        out.kept_rank
                    );
                    for (name, t) in &out.timings {
                        println!("  stage {name}: {t:.2}s");
                    }
                    out.write_artifacts(&out_dir)
                        .map_err(|e| ("artifacts".to_string(), e.to_string()))
                }
                Err(e) => Err((stage_of(&e), e.to_string())),
            }
        }
        Problem::AdvDiff => {
            let cfg = rc.advdiff.expect("validated");
            match invpde::advdiff::run_experiment(cfg) {
                Ok(out) => {
                    println!(
                        "map: {} preconditioned CG iterations; {} window spectra; kept {} modes",
                        out.map_cg_iters,
                        out.window_spectra.len(),
                        out.kept_rank
                    );
                    for (name, t) in &out.timings {
                        println!("  stage {name}: {t:.2}s");
                    }
                    out.write_artifacts(&out_dir)
                        .map_err(|e| ("artifacts".to_string(), e.to_string()))
                }
                Err(e) => Err((stage_of(&e), e.to_string())),
            }
        }
    };

    match result {
        Ok(paths) => match manifest::write_manifest(&out_dir, &paths, "complete") {
            Ok(mp) => {
                println!("wrote {} artifacts; manifest at {}", paths.len(), mp.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("manifest error: {e}");
                ExitCode::from(2)
            }
        },
        Err((stage, message)) => {
            eprintln!("stage {stage} failed: {message}");
            // Keep whatever got written, marked incomplete.
            let existing: Vec<PathBuf> = std::fs::read_dir(&out_dir)
                .map(|rd| {
                    rd.filter_map(|e| e.ok())
                        .map(|e| e.path())
                        .filter(|p| {
                            p.is_file()
                                && p.file_name().map(|n| n != "MANIFEST").unwrap_or(false)
                        })
                        .collect()
                })
                .unwrap_or_default();
            let _ = manifest::write_manifest(
                &out_dir,
                &existing,
                &format!("incomplete: failed at {stage}"),
            );
            ExitCode::from(2)
        }
    }
}

fn stage_of(e: &invpde::poisson::ExperimentError) -> String {
    match e {
        invpde::poisson::ExperimentError::Stage { stage, .. } => stage.to_string(),
    }
}

fn cmd_spectrum(config_path: &Path, windows: &[String]) -> ExitCode {
    if windows.is_empty() {
        eprintln!("usage error: --windows requires at least one t0:t1 pair");
        return ExitCode::from(1);
    }
    let rc = match load_run_config(config_path) {
        Ok(rc) => rc,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    let Some(mut cfg) = rc.advdiff else {
        eprintln!("config error: spectrum requires an advdiff config");
        return ExitCode::from(1);
    };
    let mut parsed = Vec::new();
    for w in windows {
        let Some((a, b)) = w.split_once(':') else {
            eprintln!("usage error: window {w:?} is not of the form t0:t1");
            return ExitCode::from(1);
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(t0), Ok(t1)) if t0 < t1 => parsed.push([t0, t1]),
            _ => {
                eprintln!("usage error: window {w:?} needs numbers t0 < t1");
                return ExitCode::from(1);
            }
        }
    }
    cfg.windows = parsed.clone();
    // Spectra only: the misfit operator does not depend on data or MAP.
    cfg.stages = invpde::poisson::StagePlan {
        sample_prior: false,
        map: false,
        eigens: true,
        variance: false,
        sample_posterior: false,
    };
    let out_dir = output_dir(&rc.output_dir);
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("cannot create output dir {}: {e}", out_dir.display());
        return ExitCode::from(1);
    }
    match invpde::advdiff::run_experiment(cfg) {
        Ok(out) => {
            use std::io::Write;
            let mut paths = Vec::new();
            for (w, spectrum) in parsed.iter().zip(&out.window_spectra) {
                let name =
                    format!("spectrum_{}_{}.csv", format_time(w[0]), format_time(w[1]));
                let p = out_dir.join(name);
                let mut f = match std::fs::File::create(&p) {
                    Ok(f) => std::io::BufWriter::new(f),
                    Err(e) => {
                        eprintln!("cannot write {}: {e}", p.display());
                        return ExitCode::from(2);
                    }
                };
                let _ = writeln!(f, "index,lambda");
                for (i, l) in spectrum.iter().enumerate() {
                    let _ = writeln!(f, "{i},{l:.17e}");
                }
                drop(f);
                println!("wrote {}", p.display());
                paths.push(p);
            }
            let _ = manifest::write_manifest(&out_dir, &paths, "complete");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("spectrum failed: {e}");
            ExitCode::from(2)
        }
    }
}

fn format_time(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{}", t as i64)
    } else {
        format!("{t}").replace('.', "p")
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Verify { inject_adjoint_sign_bug, report_dir } => {
            verify::cmd_verify(inject_adjoint_sign_bug, report_dir.as_deref())
        }
        Cmd::Run { config, dry_run } => cmd_run(&config, dry_run),
        Cmd::Spectrum { config, windows } => cmd_spectrum(&config, &windows),
    }
}
