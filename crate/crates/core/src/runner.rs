//! End-to-end experiment drivers: a single simulation run with optional
//! manufactured sources, and the temporal/spatial refinement studies built
//! on top of it. Shared by the command-line binary and the test suites.

use crate::config::RunConfig;
use crate::diagnostics::{self, EnergyRow};
use crate::fields::{LumpedWeights, TensorFieldP1};
use crate::forms::{momentum_load, saddle_dims, tensor_load};
use crate::io::ConvergenceRow;
use crate::mesh::{build_crisscross, TriMesh};
use crate::mms::{self, ErrorAccumulator, SourceParams};
use crate::stepper::{
    initial_velocity, time_step, zero_loads, SolverConfig, StepError, StepLoads, TimeStepState,
};
use std::time::Instant;

/// Everything a finished run exposes to its caller.
pub struct RunOutput {
    pub mesh: TriMesh,
    pub state: TimeStepState,
    pub energy: Vec<EnergyRow>,
    pub errors: ErrorAccumulator,
    pub runtime_s: f64,
    /// min over steps of the nodal minimum eigenvalue
    pub min_eig_b: f64,
    pub avg_picard_iters: f64,
}

/// Observer invoked after every accepted step, e.g. for VTK snapshots.
pub type StepHook<'a> = &'a mut dyn FnMut(&TriMesh, &TimeStepState);

pub fn run_simulation(cfg: &RunConfig, mut hook: Option<StepHook>) -> Result<RunOutput, StepError> {
    let start = Instant::now();
    let mesh = build_crisscross(cfg.mesh_k as u32);
    let weights = LumpedWeights::new(&mesh);
    let mut params = cfg.params;
    params.dt = cfg.dt();
    let solver = SolverConfig {
        picard_tol: cfg.picard_tol,
        picard_max_iter: cfg.picard_max_iter,
        regularization: cfg.regularization,
    };

    let v0 = initial_velocity(&mesh, &weights, |x| mms::exact_velocity(x, 0.0))?;
    let b0 = TensorFieldP1::interpolate(&mesh, |x| mms::exact_tensor(x, 0.0))
        .expect("smooth initial tensor");
    let mut state = TimeStepState::new(v0, b0, &mesh);

    let n_steps = cfg.n_steps();
    let src = SourceParams::from_model(&params);
    let (fv0, fb0) = zero_loads(&mesh);
    let (n_vdofs, _, _) = saddle_dims(&mesh);

    let mut energy = Vec::with_capacity(n_steps);
    let mut errors = ErrorAccumulator::default();
    let mut prev_fe = free_energy_any(&state.b, &weights, &params, cfg)?;
    let mut min_eig = state.b.min_nodal_eigenvalue().0;

    for step in 1..=n_steps {
        let t_new = step as f64 * params.dt;
        let (fv, fb);
        let loads = if cfg.with_sources {
            fv = momentum_load(&mesh, |x| mms::momentum_source(x, t_new, &src), 4);
            let fb_field = TensorFieldP1::interpolate(&mesh, |x| {
                mms::tensor_source(x, t_new, &src)
            })
            .expect("smooth source");
            fb = tensor_load(&fb_field, &weights);
            debug_assert_eq!(fv.len(), n_vdofs);
            StepLoads { f_v: &fv, f_b: &fb }
        } else {
            StepLoads {
                f_v: &fv0,
                f_b: &fb0,
            }
        };

        let v_before = state.v.clone();
        let b_before = state.b.clone();
        time_step(&mesh, &weights, &params, &solver, &mut state, &loads)?;
        min_eig = min_eig.min(state.b.min_nodal_eigenvalue().0);

        let row = match cfg.regularization {
            crate::stepper::Regularization::Off => diagnostics::energy_row(
                &mesh,
                &weights,
                &params,
                step,
                t_new,
                &state.v,
                &v_before,
                &state.b,
                &b_before,
                prev_fe,
                state.last_picard_iters,
            )?,
            crate::stepper::Regularization::Delta(d) => diagnostics::energy_row_delta(
                &mesh,
                &weights,
                &params,
                step,
                t_new,
                &state.v,
                &v_before,
                &state.b,
                &b_before,
                prev_fe,
                state.last_picard_iters,
                d,
            ),
        };
        prev_fe = row.free_energy;
        energy.push(row);

        if cfg.with_sources {
            errors.record(&mesh, &state.v, &state.b, t_new, params.dt);
        }
        if let Some(h) = hook.as_mut() {
            h(&mesh, &state);
        }
    }

    let avg = if n_steps > 0 {
        state.total_picard_iters as f64 / n_steps as f64
    } else {
        0.0
    };
    Ok(RunOutput {
        mesh,
        state,
        energy,
        errors,
        runtime_s: start.elapsed().as_secs_f64(),
        min_eig_b: min_eig,
        avg_picard_iters: avg,
    })
}

fn free_energy_any(
    b: &TensorFieldP1,
    w: &LumpedWeights,
    params: &crate::params::ModelParams,
    cfg: &RunConfig,
) -> Result<f64, StepError> {
    Ok(match cfg.regularization {
        crate::stepper::Regularization::Off => {
            diagnostics::free_energy(b, w, params.mu, params.beta)?
        }
        crate::stepper::Regularization::Delta(d) => {
            diagnostics::free_energy_delta(b, w, params.mu, params.beta, d)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StudyMode {
    /// fixed mesh, halving time steps; the level column is the time level
    Temporal,
    /// fixed time step, halving mesh size; the level column is the mesh level
    Spatial,
}

/// Refinement study with manufactured sources. `range` is inclusive.
pub fn convergence_study(
    base: &RunConfig,
    mode: StudyMode,
    range: (usize, usize),
    mut progress: impl FnMut(&str),
) -> Result<Vec<ConvergenceRow>, StepError> {
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for level in range.0..=range.1 {
        let mut cfg = base.clone();
        cfg.with_sources = true;
        match mode {
            StudyMode::Temporal => cfg.time_l = level,
            StudyMode::Spatial => cfg.mesh_k = level,
        }
        progress(&format!(
            "level {level}: mesh_k={} time_l={} ({} steps)",
            cfg.mesh_k,
            cfg.time_l,
            cfg.n_steps()
        ));
        let out = run_simulation(&cfg, None)?;
        let prev = rows.last();
        let e = &out.errors;
        let row = ConvergenceRow {
            level,
            h: 0.5f64.powi(cfg.mesh_k as i32),
            dt: cfg.dt(),
            err_v_linf_l2: e.v_linf_l2,
            err_v_l2_h1: e.v_l2_h1(),
            err_b_linf_l2: e.b_linf_l2,
            err_b_l2_h1: e.b_l2_h1(),
            eoc_v_linf_l2: prev.map(|p| mms::eoc(p.err_v_linf_l2, e.v_linf_l2)),
            eoc_v_l2_h1: prev.map(|p| mms::eoc(p.err_v_l2_h1, e.v_l2_h1())),
            eoc_b_linf_l2: prev.map(|p| mms::eoc(p.err_b_linf_l2, e.b_linf_l2)),
            eoc_b_l2_h1: prev.map(|p| mms::eoc(p.err_b_l2_h1, e.b_l2_h1())),
            avg_picard_iters: out.avg_picard_iters,
            min_eig_b: out.min_eig_b,
            runtime_s: out.runtime_s,
        };
        progress(&format!(
            "level {level}: err_v={:.3e} err_B={:.3e} picard={:.2}",
            row.err_v_linf_l2, row.err_b_linf_l2, row.avg_picard_iters
        ));
        rows.push(row);
    }
    Ok(rows)
}
