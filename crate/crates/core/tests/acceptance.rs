//! End-to-end acceptance suite. Each test prints a single PASS/FAIL line
//! naming the property it gates, so the whole contract is visible from the
//! test output.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viscofem::config::RunConfig;
use viscofem::diagnostics;
use viscofem::fields::{LumpedWeights, SymMat2, TensorFieldP1, VectorFieldP2};
use viscofem::forms;
use viscofem::mesh::{build_crisscross, TriMesh};
use viscofem::mms;
use viscofem::params::ModelParams;
use viscofem::runner::{self, StudyMode};
use viscofem::stepper::{
    self, Regularization, SolverConfig, StepLoads, TimeStepState,
};

fn report(name: &str, pass: bool, detail: &str) {
    println!("{}: {name} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

#[test]
fn temporal_convergence_first_order_in_velocity() {
    // Error-vs-exact EOCs flatten once the temporal error drops below the
    // fixed spatial floor, which for this low-amplitude solution happens
    // already at the coarsest step; those flattened levels are reported and
    // excluded.  First order in time is then verified directly on the
    // successive differences of the discrete solutions, which live on the
    // same mesh and therefore cancel the spatial floor exactly.
    let mut errs = Vec::new();
    let mut finals = Vec::new();
    for l in 3..=6 {
        let mut cfg = RunConfig::default();
        cfg.mesh_k = 5;
        cfg.time_l = l;
        cfg.with_sources = true;
        eprintln!("[temporal] mesh_k=5 time_l={l} ({} steps)", cfg.n_steps());
        let out = runner::run_simulation(&cfg, None).unwrap();
        errs.push(out.errors.v_linf_l2);
        finals.push((out.mesh, out.state.v));
    }
    let floor = *errs.last().unwrap();
    let eocs: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let flattened: Vec<bool> = errs.windows(2).map(|w| w[0] < 2.0 * floor).collect();
    let errors_ok = eocs
        .iter()
        .zip(&flattened)
        .all(|(&e, &f)| f || in_range(e, 0.8, 1.2));

    let mut diffs = Vec::new();
    for w in finals.windows(2) {
        let (mesh, coarse) = &w[0];
        let (_, fine) = &w[1];
        let mut d = coarse.clone();
        for (x, y) in d.values.iter_mut().zip(&fine.values) {
            x[0] -= y[0];
            x[1] -= y[1];
        }
        diffs.push((2.0 * diagnostics::kinetic_energy(mesh, &d)).sqrt());
    }
    let diff_eocs: Vec<f64> = diffs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let diffs_ok = diff_eocs.iter().all(|&e| in_range(e, 0.8, 1.2));

    report(
        "temporal order of the velocity error",
        errors_ok && diffs_ok,
        &format!(
            "EOC(v, Linf-L2) = {eocs:.3?} (flattened at spatial floor: {flattened:?}), \
             successive-difference EOC = {diff_eocs:.3?}, expected within [0.8, 1.2]"
        ),
    );
}

#[test]
fn spatial_convergence_orders() {
    let mut cfg = RunConfig::default();
    cfg.time_l = 7;
    let rows = runner::convergence_study(&cfg, StudyMode::Spatial, (3, 5), |m| {
        eprintln!("[spatial] {m}")
    })
    .unwrap();
    let last = rows.last().unwrap();
    let e_v_h1 = last.eoc_v_l2_h1.unwrap();
    let e_b_l2 = last.eoc_b_linf_l2.unwrap();
    let e_b_h1 = last.eoc_b_l2_h1.unwrap();
    let e_v_l2 = last.eoc_v_linf_l2.unwrap();
    let ok = in_range(e_v_h1, 1.7, 2.3)
        && in_range(e_b_l2, 1.7, 2.3)
        && in_range(e_b_h1, 0.8, 1.3)
        && e_v_l2 >= 1.7;
    report(
        "spatial orders of the velocity and tensor errors",
        ok,
        &format!(
            "EOC(v,H1)={e_v_h1:.3} in [1.7,2.3]; EOC(B,L2)={e_b_l2:.3} in [1.7,2.3]; \
             EOC(B,H1)={e_b_h1:.3} in [0.8,1.3]; EOC(v,L2)={e_v_l2:.3} >= 1.7"
        ),
    );
}

#[test]
fn energy_balance_holds_every_step() {
    let mut cfg = RunConfig::default();
    cfg.mesh_k = 4;
    cfg.time_l = 4;
    cfg.with_sources = false;
    cfg.apply_dt();
    let out = runner::run_simulation(&cfg, None).unwrap();
    let mut all_pass = true;
    let mut monotone = true;
    let mut prev_total = f64::INFINITY;
    for row in &out.energy {
        // the defect already encodes lhs - rhs with the previous energies
        let scale = 1.0 + row.total_energy.abs();
        if row.defect > diagnostics::ENERGY_TOL * scale {
            all_pass = false;
            eprintln!("step {}: defect {:.3e}", row.step, row.defect);
        }
        if row.total_energy > prev_total + 1e-12 {
            monotone = false;
        }
        prev_total = row.total_energy;
    }
    report(
        "per-step energy balance of the source-free run",
        all_pass && monotone,
        &format!(
            "{} steps, balance within 1e-8 each step: {all_pass}, total energy non-increasing: {monotone}",
            out.energy.len()
        ),
    );
}

#[test]
fn positive_definiteness_is_preserved() {
    let mut cfg = RunConfig::default();
    cfg.mesh_k = 4;
    cfg.time_l = 4;
    cfg.with_sources = false;
    cfg.apply_dt();
    let mesh = build_crisscross(cfg.mesh_k as u32);
    let b0 = TensorFieldP1::interpolate(&mesh, |x| mms::exact_tensor(x, 0.0)).unwrap();
    let (eig0, _) = b0.min_nodal_eigenvalue();
    let out = runner::run_simulation(&cfg, None).unwrap();
    let ok = (eig0 - 0.95).abs() <= 1e-12 && out.min_eig_b > 0.0;
    report(
        "nodal positive definiteness of the tensor",
        ok,
        &format!(
            "initial min eigenvalue {eig0:.15} (expected 0.95), min over the run {:.6e} > 0",
            out.min_eig_b
        ),
    );
}

#[test]
fn chain_rule_identity_on_random_fields() {
    let mesh = build_crisscross(3);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for _ in 0..100 {
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
        worst = worst.max(forms::lambda_chain_rule_defect(&mesh, &b, 0.5).unwrap());
    }
    report(
        "discrete chain-rule identity of the convection tensor",
        worst <= 1e-12,
        &format!("max relative defect over 100 random fields: {worst:.3e} <= 1e-12"),
    );
}

#[test]
fn lambda_consistency_is_first_order() {
    // Lambda_ij approaches delta_ij times the element mean of B as the mesh
    // is refined; the worst deviation over the mesh must shrink at least
    // linearly.
    let field = |x: [f64; 2]| {
        SymMat2::new(
            1.5 + 0.3 * (x[0] * 2.1).sin(),
            0.2 * (x[0] + x[1]).cos(),
            1.4 + 0.25 * (x[1] * 1.7).cos(),
        )
    };
    let mut defects = Vec::new();
    for k in 3..=6 {
        let mesh = build_crisscross(k);
        let b = TensorFieldP1::interpolate(&mesh, field).unwrap();
        let lambda = forms::lambda_field(&mesh, &b, 0.5).unwrap();
        let mut worst = 0.0f64;
        for e in 0..mesh.n_triangles() {
            let t = mesh.triangles[e];
            let mean = (b.values[t[0]] + b.values[t[1]] + b.values[t[2]]) * (1.0 / 3.0);
            for i in 0..2 {
                for j in 0..2 {
                    let target = if i == j { mean } else { SymMat2::zero() };
                    worst = worst.max((lambda[e].comp[i][j] - target).norm());
                }
            }
        }
        defects.push(worst);
    }
    let eocs: Vec<f64> = defects.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let ok = eocs.iter().all(|&e| e >= 0.9);
    report(
        "first-order consistency of the convection tensor",
        ok,
        &format!(
            "defects {:?}, EOCs {:?} all >= 0.9",
            defects
                .iter()
                .map(|d| format!("{d:.3e}"))
                .collect::<Vec<_>>(),
            eocs.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn picard_iteration_counts_stay_low() {
    let mut cfg = RunConfig::default();
    cfg.mesh_k = 4;
    cfg.time_l = 4;
    cfg.with_sources = true;
    cfg.apply_dt();
    let out = runner::run_simulation(&cfg, None).unwrap();
    let ok = out.avg_picard_iters <= 10.0;
    report(
        "fixed-point iteration effort",
        ok,
        &format!("mean iterations per step {:.2} <= 10", out.avg_picard_iters),
    );
}

#[test]
fn nodal_relaxation_recurrence_is_exact() {
    // v = 0, B^0 = 2I, delta2 = 0: the scheme must reproduce
    // B^n = (B^{n-1} + dt delta1 I) / (1 + dt delta1) at every vertex.
    let mesh = build_crisscross(2);
    let w = LumpedWeights::new(&mesh);
    let mut params = ModelParams::default();
    params.dt = 0.1;
    params.delta1 = 1.0;
    params.delta2 = 0.0;
    let config = SolverConfig::default();
    let v0 = VectorFieldP2::zero(&mesh);
    let b0 = TensorFieldP1::constant(&mesh, SymMat2::diag(2.0, 2.0));
    let mut state = TimeStepState::new(v0, b0, &mesh);
    let (fv, fb) = stepper::zero_loads(&mesh);
    let loads = StepLoads { f_v: &fv, f_b: &fb };
    let mut expect = 2.0;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        stepper::time_step(&mesh, &w, &params, &config, &mut state, &loads).unwrap();
        expect = (expect + params.dt * params.delta1) / (1.0 + params.dt * params.delta1);
        for b in &state.b.values {
            worst = worst
                .max((b.m11 - expect).abs())
                .max(b.m12.abs())
                .max((b.m22 - expect).abs());
        }
    }
    report(
        "closed-form relaxation recurrence",
        worst <= 1e-12,
        &format!("max nodal deviation over 10 steps: {worst:.3e} <= 1e-12"),
    );
}

#[test]
fn regularized_fixed_points_match_and_survive_indefinite_data() {
    // at positive definite data well above the cutoff, the regularized and
    // unregularized fixed points coincide to within 10x the iteration
    // tolerance
    let mesh = build_crisscross(2);
    let w = LumpedWeights::new(&mesh);
    let mut params = ModelParams::default();
    params.dt = 0.1 / 5.0 / 8.0;
    let v0 = stepper::initial_velocity(&mesh, &w, |x| mms::exact_velocity(x, 0.0)).unwrap();
    let b0 = TensorFieldP1::interpolate(&mesh, |x| mms::exact_tensor(x, 0.0)).unwrap();
    let (fv, fb) = stepper::zero_loads(&mesh);
    let loads = StepLoads { f_v: &fv, f_b: &fb };

    let tol = SolverConfig::default().picard_tol;
    let mut agree = true;
    let mut worst = 0.0f64;
    let plain = {
        let mut st = TimeStepState::new(v0.clone(), b0.clone(), &mesh);
        stepper::time_step(&mesh, &w, &params, &SolverConfig::default(), &mut st, &loads)
            .unwrap();
        st
    };
    for delta in [1e-2, 1e-4] {
        let mut st = TimeStepState::new(v0.clone(), b0.clone(), &mesh);
        let cfg = SolverConfig {
            regularization: Regularization::Delta(delta),
            ..SolverConfig::default()
        };
        stepper::time_step(&mesh, &w, &params, &cfg, &mut st, &loads).unwrap();
        for (a, b) in plain.b.values.iter().zip(&st.b.values) {
            worst = worst.max((*a - *b).norm());
        }
        for (a, b) in plain.v.values.iter().zip(&st.v.values) {
            worst = worst.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
        if worst > 10.0 * tol {
            agree = false;
        }
    }

    // indefinite start: the cutoff scheme must complete all steps
    let b_bad = TensorFieldP1::constant(&mesh, SymMat2::diag(1.5, -0.25));
    let mut st = TimeStepState::new(VectorFieldP2::zero(&mesh), b_bad, &mesh);
    let cfg = SolverConfig {
        regularization: Regularization::Delta(1e-2),
        ..SolverConfig::default()
    };
    let mut survived = true;
    for _ in 0..10 {
        if stepper::time_step(&mesh, &w, &params, &cfg, &mut st, &loads).is_err() {
            survived = false;
            break;
        }
    }
    report(
        "cutoff regularization agreement and robustness",
        agree && survived,
        &format!(
            "fixed-point deviation {worst:.3e} <= {:.1e}; indefinite start completed: {survived}",
            10.0 * tol
        ),
    );
}

// ---------------------------------------------------------------------------
// Independent dense replica of one complete time step, written against the
// weak formulation with its own shape functions, quadrature and dense linear
// algebra; nothing below calls into the assembly under test.

mod dense_oracle {
    use super::*;

    // 6-point degree-4 rule (barycentric), the same degree the scheme
    // prescribes for its integrals; the inexactly integrated convection
    // term is part of the scheme definition, so the oracle must use a rule
    // of the same degree to land on the same discrete solution.
    pub const QUAD: [([f64; 3], f64); 6] = [
        (
            [0.108103018168070, 0.445948490915965, 0.445948490915965],
            0.223381589678011,
        ),
        (
            [0.445948490915965, 0.108103018168070, 0.445948490915965],
            0.223381589678011,
        ),
        (
            [0.445948490915965, 0.445948490915965, 0.108103018168070],
            0.223381589678011,
        ),
        (
            [0.816847572980459, 0.091576213509771, 0.091576213509771],
            0.109951743655322,
        ),
        (
            [0.091576213509771, 0.816847572980459, 0.091576213509771],
            0.109951743655322,
        ),
        (
            [0.091576213509771, 0.091576213509771, 0.816847572980459],
            0.109951743655322,
        ),
    ];

    pub struct Element {
        pub verts: [[f64; 2]; 3],
        pub area: f64,
        /// gradients of the barycentric coordinates
        pub grad_l: [[f64; 2]; 3],
    }

    impl Element {
        pub fn new(mesh: &TriMesh, e: usize) -> Self {
            let t = mesh.triangles[e];
            let v = [
                mesh.vertices[t[0]],
                mesh.vertices[t[1]],
                mesh.vertices[t[2]],
            ];
            // solve for the affine functions l_i(x) = a_i . x + c_i with
            // l_i(v_j) = delta_ij
            let m = DMatrix::from_row_slice(
                3,
                3,
                &[
                    v[0][0], v[0][1], 1.0, v[1][0], v[1][1], 1.0, v[2][0], v[2][1], 1.0,
                ],
            );
            let inv = m.try_inverse().unwrap();
            let mut grad_l = [[0.0; 2]; 3];
            for i in 0..3 {
                grad_l[i] = [inv[(0, i)], inv[(1, i)]];
            }
            let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1])
                - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
            Element {
                verts: v,
                area: det.abs() / 2.0,
                grad_l,
            }
        }

    }

    /// P2 shape functions in the order vertex 0..2, then the midpoints
    /// opposite vertex 0..2 (matching the mesh edge numbering).
    pub fn shape(l: [f64; 3]) -> [f64; 6] {
        [
            l[0] * (2.0 * l[0] - 1.0),
            l[1] * (2.0 * l[1] - 1.0),
            l[2] * (2.0 * l[2] - 1.0),
            4.0 * l[1] * l[2],
            4.0 * l[0] * l[2],
            4.0 * l[0] * l[1],
        ]
    }

    pub fn shape_grad(l: [f64; 3], el: &Element) -> [[f64; 2]; 6] {
        let g = el.grad_l;
        let mut out = [[0.0; 2]; 6];
        for d in 0..2 {
            out[0][d] = (4.0 * l[0] - 1.0) * g[0][d];
            out[1][d] = (4.0 * l[1] - 1.0) * g[1][d];
            out[2][d] = (4.0 * l[2] - 1.0) * g[2][d];
            out[3][d] = 4.0 * (l[1] * g[2][d] + l[2] * g[1][d]);
            out[4][d] = 4.0 * (l[0] * g[2][d] + l[2] * g[0][d]);
            out[5][d] = 4.0 * (l[0] * g[1][d] + l[1] * g[0][d]);
        }
        out
    }

    pub fn p2_nodes(mesh: &TriMesh, e: usize) -> [usize; 6] {
        let t = mesh.triangles[e];
        let te = mesh.triangle_edges[e];
        [
            t[0],
            t[1],
            t[2],
            mesh.n_vertices() + te[0],
            mesh.n_vertices() + te[1],
            mesh.n_vertices() + te[2],
        ]
    }

    pub fn lumped_weights(mesh: &TriMesh) -> Vec<f64> {
        let mut w = vec![0.0; mesh.n_vertices()];
        for e in 0..mesh.n_triangles() {
            let el = Element::new(mesh, e);
            for &v in &mesh.triangles[e] {
                w[v] += el.area / 3.0;
            }
        }
        w
    }

    type M2 = nalgebra::Matrix2<f64>;

    fn sym_to_m2(s: &SymMat2) -> M2 {
        M2::new(s.m11, s.m12, s.m12, s.m22)
    }

    fn m2_to_sym(m: &M2) -> SymMat2 {
        SymMat2::new(m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)])
    }

    fn frob(a: &M2, b: &M2) -> f64 {
        (a.transpose() * b).trace()
    }

    /// e_c for the tensor dof ordering (11), (12), (22).
    fn basis_m2(c: usize) -> M2 {
        match c {
            0 => M2::new(1.0, 0.0, 0.0, 0.0),
            1 => M2::new(0.0, 1.0, 1.0, 0.0),
            _ => M2::new(0.0, 0.0, 0.0, 1.0),
        }
    }

    /// Independent chain-rule tensor construction on one element.
    pub fn lambda_on_element(
        el: &Element,
        b: [&SymMat2; 3],
        beta: f64,
    ) -> [[M2; 2]; 2] {
        let g_of = |m: &SymMat2| -> M2 {
            let full = sym_to_m2(m);
            full * beta - full.try_inverse().unwrap() * (1.0 - beta)
        };
        let theta_of = |m: &SymMat2| -> f64 {
            let full = sym_to_m2(m);
            0.5 * beta * frob(&full, &full) + (1.0 - beta) * full.determinant().ln()
        };
        // edges from vertex 0 and their duals from the barycentric gradients
        let edges = [
            [
                el.verts[1][0] - el.verts[0][0],
                el.verts[1][1] - el.verts[0][1],
            ],
            [
                el.verts[2][0] - el.verts[0][0],
                el.verts[2][1] - el.verts[0][1],
            ],
        ];
        let duals = [el.grad_l[1], el.grad_l[2]];
        let mut comp = [[M2::zeros(); 2]; 2];
        for k in 0..2 {
            let dg = g_of(b[k + 1]) - g_of(b[0]);
            let dth = theta_of(b[k + 1]) - theta_of(b[0]);
            let m0 = (sym_to_m2(b[k + 1]) + sym_to_m2(b[0])) * 0.5;
            let dg_norm_sq = frob(&dg, &dg);
            let m = if dg_norm_sq == 0.0 {
                m0
            } else {
                let r = dth - frob(&m0, &dg);
                m0 + dg * (r / dg_norm_sq)
            };
            for i in 0..2 {
                for j in 0..2 {
                    comp[i][j] += m * (duals[k][i] * edges[k][j]);
                }
            }
        }
        comp
    }

    pub struct DenseStepResult {
        pub v: Vec<[f64; 2]>,
        pub p: Vec<f64>,
        pub b: Vec<SymMat2>,
    }

    /// One complete semi-implicit step with the alternating linearized
    /// solves, entirely in dense arithmetic. `sweeps` fixed-point sweeps.
    #[allow(clippy::too_many_arguments)]
    pub fn dense_time_step(
        mesh: &TriMesh,
        params: &ModelParams,
        v_prev: &VectorFieldP2,
        b_prev: &TensorFieldP1,
        sweeps: usize,
    ) -> DenseStepResult {
        let nv = mesh.n_vertices();
        let n_nodes = nv + mesh.n_edges();
        let n_vdofs = 2 * n_nodes;
        let n = n_vdofs + nv + 1;
        let w = lumped_weights(mesh);

        let mut boundary = vec![false; n];
        for (a, &is_b) in mesh.boundary_vertex.iter().enumerate() {
            if is_b {
                boundary[2 * a] = true;
                boundary[2 * a + 1] = true;
            }
        }
        for (m, &is_b) in mesh.boundary_edge.iter().enumerate() {
            if is_b {
                boundary[2 * (nv + m)] = true;
                boundary[2 * (nv + m) + 1] = true;
            }
        }

        // saddle matrix (fixed within the step)
        let mut a_mat = DMatrix::<f64>::zeros(n, n);
        for e in 0..mesh.n_triangles() {
            let el = Element::new(mesh, e);
            let nodes = p2_nodes(mesh, e);
            let t = mesh.triangles[e];
            for (l, wq) in QUAD {
                let s = el.area * wq;
                let phi = shape(l);
                let dphi = shape_grad(l, &el);
                let mut vp = [0.0; 2];
                for (i, &node) in nodes.iter().enumerate() {
                    vp[0] += phi[i] * v_prev.values[node][0];
                    vp[1] += phi[i] * v_prev.values[node][1];
                }
                for a in 0..6 {
                    for bn in 0..6 {
                        let mass = phi[a] * phi[bn] / params.dt;
                        let stiff =
                            params.eta * (dphi[a][0] * dphi[bn][0] + dphi[a][1] * dphi[bn][1]);
                        let conv = 0.5 * phi[a] * (vp[0] * dphi[bn][0] + vp[1] * dphi[bn][1])
                            - 0.5 * phi[bn] * (vp[0] * dphi[a][0] + vp[1] * dphi[a][1]);
                        for d in 0..2 {
                            a_mat[(2 * nodes[a] + d, 2 * nodes[bn] + d)] +=
                                s * (mass + stiff + conv);
                        }
                    }
                }
                for c in 0..3 {
                    let pr = n_vdofs + t[c];
                    for bn in 0..6 {
                        for d in 0..2 {
                            let v = s * l[c] * dphi[bn][d];
                            a_mat[(2 * nodes[bn] + d, pr)] -= v;
                            a_mat[(pr, 2 * nodes[bn] + d)] += v;
                        }
                    }
                }
            }
        }
        for a in 0..nv {
            a_mat[(n_vdofs + a, n - 1)] = w[a];
            a_mat[(n - 1, n_vdofs + a)] = w[a];
        }
        for d in 0..n {
            if boundary[d] {
                for j in 0..n {
                    a_mat[(d, j)] = 0.0;
                    a_mat[(j, d)] = 0.0;
                }
                a_mat[(d, d)] = 1.0;
            }
        }
        let a_lu = a_mat.lu();

        let mut b_iter: Vec<SymMat2> = b_prev.values.clone();
        let mut v_new = v_prev.values.clone();
        let mut p_new = vec![0.0; nv];

        for _ in 0..sweeps {
            // momentum right-hand side at the tensor iterate
            let te: Vec<M2> = b_iter
                .iter()
                .map(|m| {
                    let full = sym_to_m2(m);
                    let eye = M2::identity();
                    (full - eye) * (2.0 * params.mu * (1.0 - params.beta))
                        + (full * full - full) * (2.0 * params.mu * params.beta)
                })
                .collect();
            let mut rhs = DVector::<f64>::zeros(n);
            for e in 0..mesh.n_triangles() {
                let el = Element::new(mesh, e);
                let nodes = p2_nodes(mesh, e);
                let t = mesh.triangles[e];
                for (l, wq) in QUAD {
                    let s = el.area * wq;
                    let phi = shape(l);
                    let dphi = shape_grad(l, &el);
                    let mut vp = [0.0; 2];
                    for (i, &node) in nodes.iter().enumerate() {
                        vp[0] += phi[i] * v_prev.values[node][0];
                        vp[1] += phi[i] * v_prev.values[node][1];
                    }
                    let te_q: M2 = te[t[0]] * l[0] + te[t[1]] * l[1] + te[t[2]] * l[2];
                    for a in 0..6 {
                        for d in 0..2 {
                            let mut r = s * vp[d] * phi[a] / params.dt;
                            r -= s * (te_q[(d, 0)] * dphi[a][0] + te_q[(d, 1)] * dphi[a][1]);
                            rhs[2 * nodes[a] + d] += r;
                        }
                    }
                }
            }
            for d in 0..n {
                if boundary[d] {
                    rhs[d] = 0.0;
                }
            }
            let x = a_lu.solve(&rhs).unwrap();
            for node in 0..n_nodes {
                v_new[node] = [x[2 * node], x[2 * node + 1]];
            }
            for a in 0..nv {
                p_new[a] = x[n_vdofs + a];
            }

            // tensor system at the new velocity
            let nb = 3 * nv;
            let mut bm = DMatrix::<f64>::zeros(nb, nb);
            let mut br = DVector::<f64>::zeros(nb);
            // vertex terms
            for a in 0..nv {
                for c in 0..3 {
                    let ec = basis_m2(c);
                    let row = 3 * a + c;
                    br[row] += w[a] / params.dt * frob(&sym_to_m2(&b_prev.values[a]), &ec);
                    br[row] += params.delta1 * w[a] * frob(&M2::identity(), &ec);
                    for cp in 0..3 {
                        let ecp = basis_m2(cp);
                        // frob(ec, ecp) vanishes for c != cp
                        let mut v =
                            (1.0 / params.dt + params.delta1) * w[a] * frob(&ec, &ecp);
                        if params.delta2 != 0.0 {
                            let bit = sym_to_m2(&b_iter[a]);
                            let symprod = (bit * ecp + ecp * bit) * 0.5;
                            v += params.delta2 * w[a] * frob(&(symprod - ecp), &ec);
                        }
                        bm[(row, 3 * a + cp)] += v;
                    }
                }
            }
            // coupling and element terms
            for e in 0..mesh.n_triangles() {
                let el = Element::new(mesh, e);
                let nodes = p2_nodes(mesh, e);
                let t = mesh.triangles[e];
                // integral of grad(v_new) times each hat, of v_new, v_prev
                let mut n_hat = [M2::zeros(); 3];
                let mut v_int_prev = [0.0; 2];
                for (l, wq) in QUAD {
                    let s = el.area * wq;
                    let phi = shape(l);
                    let dphi = shape_grad(l, &el);
                    let mut g = M2::zeros();
                    let mut vp = [0.0; 2];
                    for (i, &node) in nodes.iter().enumerate() {
                        for d in 0..2 {
                            g[(d, 0)] += v_new[node][d] * dphi[i][0];
                            g[(d, 1)] += v_new[node][d] * dphi[i][1];
                            vp[d] += phi[i] * v_prev.values[node][d];
                        }
                    }
                    for c in 0..3 {
                        n_hat[c] += g * (s * l[c]);
                    }
                    v_int_prev[0] += s * vp[0];
                    v_int_prev[1] += s * vp[1];
                }
                // -2 (grad v, I_h[G B]) vertex blocks
                for c_loc in 0..3 {
                    let a = t[c_loc];
                    for c in 0..3 {
                        let ec = basis_m2(c);
                        for cp in 0..3 {
                            let ecp = basis_m2(cp);
                            bm[(3 * a + c, 3 * a + cp)] -=
                                2.0 * frob(&n_hat[c_loc], &(ec * ecp));
                        }
                    }
                }
                // diffusion: P1 stiffness per component with the Frobenius
                // weight of the off-diagonal dof
                for la in 0..3 {
                    for lb in 0..3 {
                        let gg = el.grad_l[la][0] * el.grad_l[lb][0]
                            + el.grad_l[la][1] * el.grad_l[lb][1];
                        for c in 0..3 {
                            let mult = frob(&basis_m2(c), &basis_m2(c));
                            bm[(3 * t[la] + c, 3 * t[lb] + c)] +=
                                params.lambda * el.area * gg * mult;
                        }
                    }
                }
                // chain-rule convection at the iterate, on the rhs
                let lam = lambda_on_element(
                    &el,
                    [&b_iter[t[0]], &b_iter[t[1]], &b_iter[t[2]]],
                    params.beta,
                );
                for la in 0..3 {
                    for c in 0..3 {
                        let ec = basis_m2(c);
                        let mut v = 0.0;
                        for i in 0..2 {
                            for j in 0..2 {
                                v += v_int_prev[i] * frob(&lam[i][j], &ec) * el.grad_l[la][j];
                            }
                        }
                        br[3 * t[la] + c] += v;
                    }
                }
            }
            let xb = bm.lu().solve(&br).unwrap();
            for a in 0..nv {
                b_iter[a] = m2_to_sym(&M2::new(
                    xb[3 * a],
                    xb[3 * a + 1],
                    xb[3 * a + 1],
                    xb[3 * a + 2],
                ));
            }
        }
        DenseStepResult {
            v: v_new,
            p: p_new,
            b: b_iter,
        }
    }
}

#[test]
fn sparse_step_matches_dense_oracle() {
    let mesh = build_crisscross(1);
    let w = LumpedWeights::new(&mesh);
    let mut params = ModelParams::default();
    params.dt = 0.1 / 5.0 / 4.0;
    let v0 = VectorFieldP2::interpolate(&mesh, |x| mms::exact_velocity(x, 0.0)).unwrap();
    let b0 = TensorFieldP1::interpolate(&mesh, |x| mms::exact_tensor(x, 0.0)).unwrap();

    let mut state = TimeStepState::new(v0.clone(), b0.clone(), &mesh);
    let (fv, fb) = stepper::zero_loads(&mesh);
    let loads = StepLoads { f_v: &fv, f_b: &fb };
    stepper::time_step(
        &mesh,
        &w,
        &params,
        &SolverConfig::default(),
        &mut state,
        &loads,
    )
    .unwrap();

    // enough sweeps for the dense iteration to sit on the same fixed point
    let oracle = dense_oracle::dense_time_step(&mesh, &params, &v0, &b0, 40);

    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (a, b) in state.v.values.iter().zip(&oracle.v) {
        for d in 0..2 {
            worst = worst.max((a[d] - b[d]).abs());
            scale = scale.max(b[d].abs());
        }
    }
    for (a, b) in state.p.values.iter().zip(&oracle.p) {
        worst = worst.max((a - b).abs());
        scale = scale.max(b.abs());
    }
    for (a, b) in state.b.values.iter().zip(&oracle.b) {
        worst = worst.max((*a - *b).norm());
        scale = scale.max(b.norm());
    }
    let rel = worst / scale;
    report(
        "agreement with the independent dense assembly",
        rel <= 1e-10,
        &format!("max relative dof deviation {rel:.3e} <= 1e-10"),
    );
}
