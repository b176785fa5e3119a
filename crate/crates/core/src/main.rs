//! Command-line front end: single runs, refinement studies, the stability
//! check and a randomized verification of the chain-rule identity.
//!
//! Exit codes: 0 success, 2 bad input, 3 solver non-convergence,
//! 4 positivity loss, 5 I/O failure.

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;
use viscofem::config::RunConfig;
use viscofem::diagnostics::{verify_step, StabilityVerdict};
use viscofem::fields::{SymMat2, TensorFieldP1};
use viscofem::forms::lambda_chain_rule_defect;
use viscofem::io;
use viscofem::mesh::build_crisscross;
use viscofem::runner::{self, StudyMode};
use viscofem::stepper::StepError;

#[derive(Parser)]
#[command(name = "viscofem", about = "finite element solver for unsteady viscoelastic flow with stress diffusion", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// override single keys, e.g. --set beta=0.25 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write the energy ledger (and optional VTK)
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Refinement study against the manufactured solution
    Convergence {
        #[command(flatten)]
        common: CommonOpts,
        /// temporal (halve dt) or spatial (halve h)
        #[arg(long)]
        mode: String,
        /// mesh levels, e.g. 3..5 (spatial mode; fixed k otherwise)
        #[arg(long, value_name = "A..B")]
        k_range: Option<String>,
        /// time levels, e.g. 3..6 (temporal mode; fixed l otherwise)
        #[arg(long, value_name = "A..B")]
        l_range: Option<String>,
    },
    /// Source-free run checked step by step against the energy balance
    Stability {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Randomized check of the discrete chain-rule identity
    VerifyLambda {
        /// mesh refinement level
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// number of random fields
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// RNG seed
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;
const EXIT_POSITIVITY: u8 = 4;
const EXIT_IO: u8 = 5;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}

fn load_config(common: &CommonOpts) -> Result<RunConfig, u8> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::parse_file(path).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_BAD_INPUT
        })?,
        None => RunConfig::default(),
    };
    for ov in &common.overrides {
        let (k, v) = ov.split_once('=').ok_or_else(|| {
            eprintln!("error: override '{ov}' is not key=value");
            EXIT_BAD_INPUT
        })?;
        cfg.set(k.trim(), v.trim()).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_BAD_INPUT
        })?;
    }
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.apply_dt();
    cfg.params.validate().map_err(|e| {
        eprintln!("error: {e}");
        EXIT_BAD_INPUT
    })?;
    Ok(cfg)
}

fn step_error_code(e: &StepError) -> u8 {
    match e {
        StepError::NonConvergence { .. } => EXIT_NO_CONVERGENCE,
        StepError::PositivityLoss { .. } => EXIT_POSITIVITY,
        _ => EXIT_NO_CONVERGENCE,
    }
}

fn ensure_dir(cfg: &RunConfig) -> Result<(), u8> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        eprintln!("error: cannot create {}: {e}", cfg.output_dir.display());
        EXIT_IO
    })
}

fn parse_range(text: &str) -> Result<(usize, usize), u8> {
    let err = || {
        eprintln!("error: range '{text}' must be A..B with A <= B");
        EXIT_BAD_INPUT
    };
    let (a, b) = text.split_once("..").ok_or_else(err)?;
    let a: usize = a.trim().parse().map_err(|_| err())?;
    let b: usize = b.trim().parse().map_err(|_| err())?;
    if a > b {
        return Err(err());
    }
    Ok((a, b))
}

fn run(cli: Cli) -> Result<(), u8> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = load_config(&common)?;
            ensure_dir(&cfg)?;
            let vtk_every = cfg.vtk_every;
            let dir = cfg.output_dir.clone();
            let mut io_failed = false;
            let mut hook = |mesh: &viscofem::mesh::TriMesh,
                            state: &viscofem::stepper::TimeStepState| {
                if vtk_every > 0 && state.step % vtk_every == 0 {
                    let path = dir.join(format!("snapshot_{:05}.vtk", state.step));
                    if let Err(e) = io::write_vtk(&path, mesh, &state.v, &state.p, &state.b) {
                        eprintln!("error: vtk write failed: {e}");
                        io_failed = true;
                    }
                }
                if state.step % 50 == 0 {
                    eprintln!("step {} t={:.5}", state.step, state.time);
                }
            };
            let out = runner::run_simulation(&cfg, Some(&mut hook)).map_err(|e| {
                eprintln!("error: {e}");
                step_error_code(&e)
            })?;
            if io_failed {
                return Err(EXIT_IO);
            }
            let path = cfg.output_dir.join("energy.csv");
            io::write_energy_csv(&path, &cfg, &out.energy).map_err(|e| {
                eprintln!("error: {e}");
                EXIT_IO
            })?;
            eprintln!(
                "done: {} steps, avg picard {:.2}, min eig {:.4e}, {:.2}s",
                out.energy.len(),
                out.avg_picard_iters,
                out.min_eig_b,
                out.runtime_s
            );
            println!("{}", path.display());
            Ok(())
        }
        Command::Convergence {
            common,
            mode,
            k_range,
            l_range,
        } => {
            let cfg = load_config(&common)?;
            ensure_dir(&cfg)?;
            let (mode, range) = match mode.as_str() {
                "temporal" => {
                    let r = l_range.as_deref().unwrap_or("3..6");
                    (StudyMode::Temporal, parse_range(r)?)
                }
                "spatial" => {
                    let r = k_range.as_deref().unwrap_or("3..5");
                    (StudyMode::Spatial, parse_range(r)?)
                }
                other => {
                    eprintln!("error: mode '{other}' must be temporal or spatial");
                    return Err(EXIT_BAD_INPUT);
                }
            };
            let rows = runner::convergence_study(&cfg, mode, range, |msg| eprintln!("{msg}"))
                .map_err(|e| {
                    eprintln!("error: {e}");
                    step_error_code(&e)
                })?;
            let path = cfg.output_dir.join(match mode {
                StudyMode::Temporal => "convergence_temporal.csv",
                StudyMode::Spatial => "convergence_spatial.csv",
            });
            io::write_convergence_csv(&path, &cfg, &rows).map_err(|e| {
                eprintln!("error: {e}");
                EXIT_IO
            })?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Stability { common } => {
            let mut cfg = load_config(&common)?;
            cfg.with_sources = false;
            ensure_dir(&cfg)?;
            let out = runner::run_simulation(&cfg, None).map_err(|e| {
                eprintln!("error: {e}");
                step_error_code(&e)
            })?;
            let mut prev_total = out.energy.first().map_or(0.0, |r| {
                // rhs of the first step: reconstruct from the defect
                r.kinetic + r.kinetic_increment + r.free_energy + r.tensor_increment
                    + cfg.dt() * r.dissipation()
                    - r.defect
            });
            let mut failures = 0usize;
            for row in &out.energy {
                let verdict = verify_step(row, prev_total, false);
                if verdict == StabilityVerdict::Fail {
                    failures += 1;
                    eprintln!(
                        "step {}: balance violated, defect {:.3e}",
                        row.step, row.defect
                    );
                }
                prev_total = row.total_energy;
            }
            let path = cfg.output_dir.join("energy.csv");
            io::write_energy_csv(&path, &cfg, &out.energy).map_err(|e| {
                eprintln!("error: {e}");
                EXIT_IO
            })?;
            println!(
                "stability: {} steps, {} violations",
                out.energy.len(),
                failures
            );
            if failures > 0 {
                return Err(EXIT_NO_CONVERGENCE);
            }
            Ok(())
        }
        Command::VerifyLambda { k, trials, seed } => {
            let mesh = build_crisscross(k as u32);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let beta = 0.5;
            let mut worst = 0.0f64;
            for trial in 0..trials {
                // random positive definite nodal field
                let b = TensorFieldP1 {
                    values: (0..mesh.n_vertices())
                        .map(|_| {
                            let a: f64 = rng.gen_range(0.5..2.0);
                            let c: f64 = rng.gen_range(0.5..2.0);
                            let max_off = (a * c).sqrt() * 0.9;
                            SymMat2::new(a, rng.gen_range(-max_off..max_off), c)
                        })
                        .collect(),
                };
                match lambda_chain_rule_defect(&mesh, &b, beta) {
                    Ok(defect) => {
                        worst = worst.max(defect);
                        if trial < 3 {
                            eprintln!("trial {trial}: defect {defect:.3e}");
                        }
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        return Err(EXIT_BAD_INPUT);
                    }
                }
            }
            println!("verify-lambda: {trials} trials on k={k}, max relative defect {worst:.6e}");
            if worst > 1e-12 {
                eprintln!("error: defect exceeds tolerance 1e-12");
                return Err(EXIT_NO_CONVERGENCE);
            }
            Ok(())
        }
    }
}
