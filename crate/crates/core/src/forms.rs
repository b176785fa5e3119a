//! Element-wise assembly of the coupled scheme: the Navier-Stokes saddle
//! system with skew-symmetrized convection and elastic load, the lumped
//! tensor equation with the chain-rule convection tensor, the manufactured
//! source loads and the full nonlinear residuals.

use crate::fields::{
    boundary_vdofs, lumped_inner_tensor, p2_basis, p2_basis_grad, p2_element_nodes, vdof,
    LumpedWeights, SymMat2, TensorFieldP1, VectorFieldP2,
};
use crate::matfunc::{
    build_lambda, build_lambda_delta, LambdaTensor, Mat2, MatFuncError,
};
use crate::mesh::TriMesh;
use crate::params::ModelParams;
use crate::quadrature::triangle_rule;

pub type Triplets = Vec<(usize, usize, f64)>;

/// Quadrature degree for all scheme integrals.
const SCHEME_DEG: usize = 4;

/// Component basis of the symmetric tensor dofs: (11), (12), (22).
/// The off-diagonal basis matrix has both off-diagonal entries set to one.
pub fn tensor_basis(c: usize) -> SymMat2 {
    match c {
        0 => SymMat2::new(1.0, 0.0, 0.0),
        1 => SymMat2::new(0.0, 1.0, 0.0),
        _ => SymMat2::new(0.0, 0.0, 1.0),
    }
}

/// Square sparse system with its right-hand side and dof layout.
pub struct SparseSystem {
    pub n: usize,
    pub triplets: Triplets,
    pub rhs: Vec<f64>,
    pub partition: DofPartition,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DofPartition {
    /// [velocity dofs | pressure dofs | mean constraint multiplier]
    Saddle { n_vdofs: usize, n_pressure: usize },
    /// [3 tensor components per vertex, vertex-major]
    Tensor { n_vertices: usize },
}

pub fn saddle_dims(mesh: &TriMesh) -> (usize, usize, usize) {
    let n_vdofs = 2 * (mesh.n_vertices() + mesh.n_edges());
    let n_pressure = mesh.n_vertices();
    (n_vdofs, n_pressure, n_vdofs + n_pressure + 1)
}

/// Nodal elastic stress T_e = 2 mu (1-beta)(B - I) + 2 mu beta (B^2 - B).
pub fn elastic_stress(b: &TensorFieldP1, params: &ModelParams) -> TensorFieldP1 {
    let c1 = 2.0 * params.mu * (1.0 - params.beta);
    let c2 = 2.0 * params.mu * params.beta;
    b.map(|m| {
        let dev = *m - SymMat2::identity();
        let quad = m.sym_mul(m) - *m;
        dev * c1 + quad * c2
    })
}

/// Cutoff variant: 2 mu (1-beta)([B]_d - I) + 2 mu beta (B [B]_d - B), with
/// the symmetrized product.
pub fn elastic_stress_delta(b: &TensorFieldP1, params: &ModelParams, delta: f64) -> TensorFieldP1 {
    let c1 = 2.0 * params.mu * (1.0 - params.beta);
    let c2 = 2.0 * params.mu * params.beta;
    b.map(|m| {
        let cut = m.cutoff(delta);
        (cut - SymMat2::identity()) * c1 + (m.sym_mul(&cut) - *m) * c2
    })
}

/// Momentum load (f, w) for all velocity test functions, by quadrature of
/// the given degree.
pub fn momentum_load(
    mesh: &TriMesh,
    f: impl Fn([f64; 2]) -> [f64; 2],
    degree: usize,
) -> Vec<f64> {
    let rule = triangle_rule(degree).expect("supported degree");
    let n_vdofs = 2 * (mesh.n_vertices() + mesh.n_edges());
    let mut load = vec![0.0; n_vdofs];
    for e in 0..mesh.n_triangles() {
        let nodes = p2_element_nodes(mesh, e);
        let area = mesh.geom(e).area;
        let t = mesh.triangles[e];
        let p = [
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        ];
        for qp in rule {
            let x = [
                qp.bary[0] * p[0][0] + qp.bary[1] * p[1][0] + qp.bary[2] * p[2][0],
                qp.bary[0] * p[0][1] + qp.bary[1] * p[1][1] + qp.bary[2] * p[2][1],
            ];
            let fx = f(x);
            let phi = p2_basis(qp.bary);
            let s = area * qp.weight;
            for (n, &node) in nodes.iter().enumerate() {
                load[vdof(node, 0)] += s * phi[n] * fx[0];
                load[vdof(node, 1)] += s * phi[n] * fx[1];
            }
        }
    }
    load
}

/// Lumped tensor load <I_h f_B, G>_h for all tensor test functions.
pub fn tensor_load(f_b: &TensorFieldP1, weights: &LumpedWeights) -> Vec<f64> {
    let nv = weights.w.len();
    let mut load = vec![0.0; 3 * nv];
    for a in 0..nv {
        for c in 0..3 {
            load[3 * a + c] = weights.w[a] * f_b.values[a].dot(&tensor_basis(c));
        }
    }
    load
}

/// Monolithic saddle-point system for one semi-implicit momentum step:
/// (1/dt) mass + skew convection at the lagged velocity + eta stiffness,
/// divergence coupling, one zero-mean pressure constraint and v = 0
/// boundary rows. The right-hand side carries the previous velocity, the
/// elastic load at the given stress interpolant and the source load.
pub fn assemble_ns(
    mesh: &TriMesh,
    weights: &LumpedWeights,
    params: &ModelParams,
    v_prev: &VectorFieldP2,
    stress: &TensorFieldP1,
    f_v_load: &[f64],
) -> SparseSystem {
    let (n_vdofs, n_pressure, n) = saddle_dims(mesh);
    let matrix = assemble_ns_matrix(mesh, weights, params, v_prev);
    let rhs = assemble_ns_rhs(mesh, params, v_prev, stress, f_v_load);
    SparseSystem {
        n,
        triplets: matrix,
        rhs,
        partition: DofPartition::Saddle {
            n_vdofs,
            n_pressure,
        },
    }
}

/// The saddle matrix alone; it depends on the time step and the lagged
/// convecting velocity but not on the Picard iterate, so it is factorized
/// once per time step.
pub fn assemble_ns_matrix(
    mesh: &TriMesh,
    weights: &LumpedWeights,
    params: &ModelParams,
    v_prev: &VectorFieldP2,
) -> Triplets {
    let (n_vdofs, _, n) = saddle_dims(mesh);
    let p_off = n_vdofs;
    let gauge = n - 1;
    let rule = triangle_rule(SCHEME_DEG).unwrap();
    let constrained = constrained_mask(mesh, n);

    let mut trip: Triplets = Vec::new();
    let push = |r: usize, c: usize, v: f64, trip: &mut Triplets| {
        if v != 0.0 && !constrained[r] && !constrained[c] {
            trip.push((r, c, v));
        }
    };

    for e in 0..mesh.n_triangles() {
        let nodes = p2_element_nodes(mesh, e);
        let geom = mesh.geom(e);
        let t = mesh.triangles[e];
        let mut local = [[0.0f64; 6]; 6]; // component-diagonal velocity block
        let mut div_block = [[[0.0f64; 2]; 6]; 3]; // [p-vertex][v-node][comp]
        for qp in rule {
            let s = geom.area * qp.weight;
            let phi = p2_basis(qp.bary);
            let dphi = p2_basis_grad(qp.bary, geom);
            let vp = v_prev.eval(mesh, e, qp.bary);
            for a in 0..6 {
                for b in 0..6 {
                    let mass = phi[a] * phi[b] / params.dt;
                    let stiff = params.eta * (dphi[a][0] * dphi[b][0] + dphi[a][1] * dphi[b][1]);
                    // skew form: 1/2 ((vp . grad) u, w) - 1/2 (u, (vp . grad) w)
                    let conv = 0.5 * (vp[0] * dphi[b][0] + vp[1] * dphi[b][1]) * phi[a]
                        - 0.5 * phi[b] * (vp[0] * dphi[a][0] + vp[1] * dphi[a][1]);
                    local[a][b] += s * (mass + stiff + conv);
                }
            }
            for c in 0..3 {
                let psi = qp.bary[c];
                for b in 0..6 {
                    for i in 0..2 {
                        div_block[c][b][i] += s * psi * dphi[b][i];
                    }
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                for i in 0..2 {
                    push(vdof(nodes[a], i), vdof(nodes[b], i), local[a][b], &mut trip);
                }
            }
        }
        for c in 0..3 {
            let pr = p_off + t[c];
            for b in 0..6 {
                for i in 0..2 {
                    let v = div_block[c][b][i];
                    // -(p, div w) and +(div v, q)
                    push(vdof(nodes[b], i), pr, -v, &mut trip);
                    push(pr, vdof(nodes[b], i), v, &mut trip);
                }
            }
        }
    }

    // zero-mean pressure gauge; integral of a hat equals its lumped weight
    for a in 0..mesh.n_vertices() {
        push(p_off + a, gauge, weights.w[a], &mut trip);
        push(gauge, p_off + a, weights.w[a], &mut trip);
    }

    for (d, &c) in constrained.iter().enumerate() {
        if c {
            trip.push((d, d, 1.0));
        }
    }
    trip
}

fn constrained_mask(mesh: &TriMesh, n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for d in boundary_vdofs(mesh) {
        mask[d] = true;
    }
    mask
}

pub fn assemble_ns_rhs(
    mesh: &TriMesh,
    params: &ModelParams,
    v_prev: &VectorFieldP2,
    stress: &TensorFieldP1,
    f_v_load: &[f64],
) -> Vec<f64> {
    let (n_vdofs, _, n) = saddle_dims(mesh);
    let rule = triangle_rule(SCHEME_DEG).unwrap();
    let mut rhs = vec![0.0; n];
    rhs[..n_vdofs].copy_from_slice(&f_v_load[..n_vdofs]);

    for e in 0..mesh.n_triangles() {
        let nodes = p2_element_nodes(mesh, e);
        let geom = mesh.geom(e);
        for qp in rule {
            let s = geom.area * qp.weight;
            let phi = p2_basis(qp.bary);
            let dphi = p2_basis_grad(qp.bary, geom);
            let vp = v_prev.eval(mesh, e, qp.bary);
            let te = stress.eval(mesh, e, qp.bary);
            let te_rows = [[te.m11, te.m12], [te.m12, te.m22]];
            for (a, &node) in nodes.iter().enumerate() {
                for i in 0..2 {
                    // (1/dt)(v_prev, w) - (I_h T_e, grad w)
                    let v = s
                        * (vp[i] * phi[a] / params.dt
                            - (te_rows[i][0] * dphi[a][0] + te_rows[i][1] * dphi[a][1]));
                    rhs[vdof(node, i)] += v;
                }
            }
        }
    }
    for d in boundary_vdofs(mesh) {
        rhs[d] = 0.0;
    }
    rhs
}

/// Integral of each velocity component of a P2 field over each element,
/// and of the velocity gradient weighted by each vertex hat function; the
/// two precomputations consumed by the tensor equation.
pub struct VelocityMoments {
    /// per element: integral of (v_i).
    pub cell_mean: Vec<[f64; 2]>,
    /// per vertex a: N_a = integral of grad(v) * phi_a.
    pub grad_hat: Vec<Mat2<f64>>,
}

pub fn velocity_moments(mesh: &TriMesh, v: &VectorFieldP2) -> VelocityMoments {
    let rule = triangle_rule(SCHEME_DEG).unwrap();
    let mut cell_mean = vec![[0.0; 2]; mesh.n_triangles()];
    let mut grad_hat = vec![Mat2::zero(); mesh.n_vertices()];
    for e in 0..mesh.n_triangles() {
        let geom = mesh.geom(e);
        let t = mesh.triangles[e];
        for qp in rule {
            let s = geom.area * qp.weight;
            let vv = v.eval(mesh, e, qp.bary);
            let gv = v.gradient(mesh, e, qp.bary);
            cell_mean[e][0] += s * vv[0];
            cell_mean[e][1] += s * vv[1];
            for c in 0..3 {
                let w = s * qp.bary[c];
                let m = &mut grad_hat[t[c]];
                for i in 0..2 {
                    for j in 0..2 {
                        m.a[i][j] += w * gv.a[i][j];
                    }
                }
            }
        }
    }
    VelocityMoments {
        cell_mean,
        grad_hat,
    }
}

/// Chain-rule tensor on every element from the nodal values of a positive
/// definite tensor field.
pub fn lambda_field(
    mesh: &TriMesh,
    b: &TensorFieldP1,
    beta: f64,
) -> Result<Vec<LambdaTensor<f64>>, MatFuncError> {
    (0..mesh.n_triangles())
        .map(|e| {
            let t = mesh.triangles[e];
            let g = mesh.geom(e);
            build_lambda(
                &g.edges,
                &g.duals,
                &[b.values[t[0]], b.values[t[1]], b.values[t[2]]],
                beta,
            )
        })
        .collect()
}

pub fn lambda_field_delta(
    mesh: &TriMesh,
    b: &TensorFieldP1,
    beta: f64,
    delta: f64,
) -> Vec<LambdaTensor<f64>> {
    (0..mesh.n_triangles())
        .map(|e| {
            let t = mesh.triangles[e];
            let g = mesh.geom(e);
            build_lambda_delta(
                &g.edges,
                &g.duals,
                &[b.values[t[0]], b.values[t[1]], b.values[t[2]]],
                beta,
                delta,
            )
        })
        .collect()
}

/// Inputs of one linearized tensor solve within the Picard loop.
pub struct TensorSolveInputs<'a> {
    pub v_new: &'a VectorFieldP2,
    pub v_prev: &'a VectorFieldP2,
    pub b_prev: &'a TensorFieldP1,
    pub b_iter: &'a TensorFieldP1,
    pub lambda: &'a [LambdaTensor<f64>],
    /// Lumped source load, length 3 * n_vertices (zeros if no sources).
    pub load: &'a [f64],
}

/// Linear system for the new tensor iterate. The unknown is implicit in the
/// lumped mass, the relaxation terms, the diffusion and the velocity
/// coupling; the chain-rule convection is lagged at `b_iter` (through the
/// prebuilt `lambda`).
pub fn assemble_b(
    mesh: &TriMesh,
    weights: &LumpedWeights,
    params: &ModelParams,
    inp: &TensorSolveInputs,
) -> SparseSystem {
    assemble_b_impl(mesh, weights, params, inp, None)
}

/// Regularized variant: cutoff occurrences of the iterate replace it in the
/// relaxation and coupling terms as in the delta-scheme.
pub fn assemble_regularized_b(
    mesh: &TriMesh,
    weights: &LumpedWeights,
    params: &ModelParams,
    inp: &TensorSolveInputs,
    delta: f64,
) -> SparseSystem {
    assemble_b_impl(mesh, weights, params, inp, Some(delta))
}

fn assemble_b_impl(
    mesh: &TriMesh,
    weights: &LumpedWeights,
    params: &ModelParams,
    inp: &TensorSolveInputs,
    delta: Option<f64>,
) -> SparseSystem {
    let nv = mesh.n_vertices();
    let n = 3 * nv;
    let mut trip: Triplets = Vec::new();
    let mut rhs = vec![0.0; n];
    rhs.copy_from_slice(&inp.load[..n]);

    let moments = velocity_moments(mesh, inp.v_new);

    // vertex-local terms
    for a in 0..nv {
        let wa = weights.w[a];
        let b_it = inp.b_iter.values[a];
        let b_cut = delta.map(|d| b_it.cutoff(d));
        let n_a = &moments.grad_hat[a];
        for c in 0..3 {
            let ec = tensor_basis(c);
            let row = 3 * a + c;
            // (1/dt) <B_prev, G>_h
            rhs[row] += wa / params.dt * inp.b_prev.values[a].dot(&ec);
            match b_cut {
                None => {
                    // + delta1 <I, G>_h on the right-hand side
                    rhs[row] += params.delta1 * wa * SymMat2::identity().dot(&ec);
                }
                Some(cut) => {
                    // delta1 <[B_iter]_d - I, G>_h moves to the right-hand side
                    rhs[row] -=
                        params.delta1 * wa * (cut - SymMat2::identity()).dot(&ec);
                    // coupling 2 (grad v, I_h[G [B_iter]_d]) is lagged
                    rhs[row] += 2.0 * n_a.dot(&ec.mul_full(&cut));
                    // delta2: - <[B_iter]_d, G>_h part of the quadratic term
                    rhs[row] += params.delta2 * wa * cut.dot(&ec);
                }
            }
            for cp in 0..3 {
                let ecp = tensor_basis(cp);
                let col = 3 * a + cp;
                let mut v = 0.0;
                // lumped mass
                if c == cp {
                    v += wa / params.dt * ec.dot(&ecp);
                }
                match b_cut {
                    None => {
                        // delta1 <B, G>_h implicit
                        if c == cp {
                            v += params.delta1 * wa * ec.dot(&ecp);
                        }
                        // delta2 <sym(B_iter B) - B, G>_h implicit
                        if params.delta2 != 0.0 {
                            v += params.delta2
                                * wa
                                * (b_it.sym_mul(&ecp) - ecp).dot(&ec);
                        }
                        // -2 (grad v_new, I_h[G B]) implicit
                        v -= 2.0 * n_a.dot(&ec.mul_full(&ecp));
                    }
                    Some(cut) => {
                        if params.delta2 != 0.0 {
                            v += params.delta2 * wa * cut.sym_mul(&ecp).dot(&ec);
                        }
                    }
                }
                if v != 0.0 {
                    trip.push((row, col, v));
                }
            }
        }
    }

    // diffusion and chain-rule convection, element-wise
    for e in 0..mesh.n_triangles() {
        let t = mesh.triangles[e];
        let geom = mesh.geom(e);
        let area = geom.area;
        for la in 0..3 {
            for lb in 0..3 {
                let gg = geom.grad_p1[la][0] * geom.grad_p1[lb][0]
                    + geom.grad_p1[la][1] * geom.grad_p1[lb][1];
                for c in 0..3 {
                    let mult = if c == 1 { 2.0 } else { 1.0 };
                    trip.push((
                        3 * t[la] + c,
                        3 * t[lb] + c,
                        params.lambda * area * gg * mult,
                    ));
                }
            }
        }
        // + sum_ij <(v_prev)_i Lambda_ij, d_j G> on the right-hand side
        let vint = velocity_cell_integral(mesh, inp.v_prev, e);
        let lam = &inp.lambda[e];
        for la in 0..3 {
            for c in 0..3 {
                let ec = tensor_basis(c);
                let mut v = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        v += vint[i] * lam.comp[i][j].dot(&ec) * geom.grad_p1[la][j];
                    }
                }
                rhs[3 * t[la] + c] += v;
            }
        }
    }

    SparseSystem {
        n,
        triplets: trip,
        rhs,
        partition: DofPartition::Tensor { n_vertices: nv },
    }
}

/// Integral of each component of a P2 velocity over one element.
fn velocity_cell_integral(mesh: &TriMesh, v: &VectorFieldP2, e: usize) -> [f64; 2] {
    let rule = triangle_rule(SCHEME_DEG).unwrap();
    let area = mesh.geom(e).area;
    let mut out = [0.0; 2];
    for qp in rule {
        let vv = v.eval(mesh, e, qp.bary);
        out[0] += area * qp.weight * vv[0];
        out[1] += area * qp.weight * vv[1];
    }
    out
}

/// Divergence functional (div v, psi_a) for every P1 test function.
pub fn divergence_functional(mesh: &TriMesh, v: &VectorFieldP2) -> Vec<f64> {
    let rule = triangle_rule(SCHEME_DEG).unwrap();
    let mut out = vec![0.0; mesh.n_vertices()];
    for e in 0..mesh.n_triangles() {
        let geom = mesh.geom(e);
        let t = mesh.triangles[e];
        for qp in rule {
            let s = geom.area * qp.weight;
            let g = v.gradient(mesh, e, qp.bary);
            let div = g.a[0][0] + g.a[1][1];
            for c in 0..3 {
                out[t[c]] += s * qp.bary[c] * div;
            }
        }
    }
    out
}

/// State at which the full nonlinear residual is evaluated.
pub struct ResidualInputs<'a> {
    pub v: &'a VectorFieldP2,
    pub p: &'a crate::fields::ScalarFieldP1,
    pub b: &'a TensorFieldP1,
    pub v_prev: &'a VectorFieldP2,
    pub b_prev: &'a TensorFieldP1,
    pub f_v_load: &'a [f64],
    pub f_b_load: &'a [f64],
}

/// Full nonlinear residual of the coupled scheme at the given iterate, all
/// nonlinearities evaluated at the iterate itself. Returns the stacked dual
/// coefficients (momentum with boundary rows zeroed, divergence, pressure
/// mean, tensor equation). Fails if the unregularized chain-rule tensor is
/// requested at a non-positive-definite iterate.
pub fn nonlinear_residual(
    mesh: &TriMesh,
    weights: &LumpedWeights,
    params: &ModelParams,
    inp: &ResidualInputs,
    delta: Option<f64>,
) -> Result<Vec<f64>, MatFuncError> {
    let nv = mesh.n_vertices();
    let (n_vdofs, _, _) = saddle_dims(mesh);
    let mut res = Vec::with_capacity(n_vdofs + nv + 1 + 3 * nv);

    // momentum residual via the assembled forms at the iterate
    let stress = match delta {
        None => elastic_stress(inp.b, params),
        Some(d) => elastic_stress_delta(inp.b, params, d),
    };
    let rule = triangle_rule(SCHEME_DEG).unwrap();
    let mut r_v = vec![0.0; n_vdofs];
    for e in 0..mesh.n_triangles() {
        let nodes = p2_element_nodes(mesh, e);
        let geom = mesh.geom(e);
        for qp in rule {
            let s = geom.area * qp.weight;
            let phi = p2_basis(qp.bary);
            let dphi = p2_basis_grad(qp.bary, geom);
            let vv = inp.v.eval(mesh, e, qp.bary);
            let vp = inp.v_prev.eval(mesh, e, qp.bary);
            let gv = inp.v.gradient(mesh, e, qp.bary);
            let pv = inp.p.eval(mesh, e, qp.bary);
            let te = stress.eval(mesh, e, qp.bary);
            let te_rows = [[te.m11, te.m12], [te.m12, te.m22]];
            let conv = [
                vp[0] * gv.a[0][0] + vp[1] * gv.a[0][1],
                vp[0] * gv.a[1][0] + vp[1] * gv.a[1][1],
            ];
            for (a, &node) in nodes.iter().enumerate() {
                for i in 0..2 {
                    let mut r = (vv[i] - vp[i]) / params.dt * phi[a];
                    r += 0.5 * conv[i] * phi[a];
                    r -= 0.5 * vv[i] * (vp[0] * dphi[a][0] + vp[1] * dphi[a][1]);
                    r += params.eta * (gv.a[i][0] * dphi[a][0] + gv.a[i][1] * dphi[a][1]);
                    r -= pv * dphi[a][i];
                    r += te_rows[i][0] * dphi[a][0] + te_rows[i][1] * dphi[a][1];
                    r_v[vdof(node, i)] += s * r;
                }
            }
        }
    }
    for d in boundary_vdofs(mesh) {
        r_v[d] = 0.0;
    }
    for (d, &f) in inp.f_v_load.iter().enumerate() {
        if r_v[d] != 0.0 || f != 0.0 {
            r_v[d] -= f;
        }
    }
    for d in boundary_vdofs(mesh) {
        r_v[d] = 0.0;
    }
    res.extend_from_slice(&r_v);

    res.extend_from_slice(&divergence_functional(mesh, inp.v));
    let mean_p: f64 = inp
        .p
        .values
        .iter()
        .zip(&weights.w)
        .map(|(p, w)| p * w)
        .sum();
    res.push(mean_p);

    // tensor residual
    let lambda = match delta {
        None => lambda_field(mesh, inp.b, params.beta)?,
        Some(d) => lambda_field_delta(mesh, inp.b, params.beta, d),
    };
    let moments = velocity_moments(mesh, inp.v);
    let mut r_b = vec![0.0; 3 * nv];
    for a in 0..nv {
        let wa = weights.w[a];
        let bv = inp.b.values[a];
        let n_a = &moments.grad_hat[a];
        for c in 0..3 {
            let ec = tensor_basis(c);
            let mut r = wa / params.dt * (bv - inp.b_prev.values[a]).dot(&ec);
            match delta {
                None => {
                    r += params.delta1 * wa * (bv - SymMat2::identity()).dot(&ec);
                    if params.delta2 != 0.0 {
                        r += params.delta2 * wa * (bv.sym_mul(&bv) - bv).dot(&ec);
                    }
                    r -= 2.0 * n_a.dot(&ec.mul_full(&bv));
                }
                Some(d) => {
                    let cut = bv.cutoff(d);
                    r += params.delta1 * wa * (cut - SymMat2::identity()).dot(&ec);
                    if params.delta2 != 0.0 {
                        r += params.delta2 * wa * (bv.sym_mul(&cut) - cut).dot(&ec);
                    }
                    r -= 2.0 * n_a.dot(&ec.mul_full(&cut));
                }
            }
            r_b[3 * a + c] += r - inp.f_b_load[3 * a + c];
        }
    }
    for e in 0..mesh.n_triangles() {
        let t = mesh.triangles[e];
        let geom = mesh.geom(e);
        let grad_b = inp.b.gradient(mesh, e);
        let vint = velocity_cell_integral(mesh, inp.v_prev, e);
        let lam = &lambda[e];
        for la in 0..3 {
            for c in 0..3 {
                let ec = tensor_basis(c);
                let mut r = 0.0;
                // lambda (grad B, grad G)
                for j in 0..2 {
                    r += params.lambda * geom.area * grad_b[j].dot(&ec) * geom.grad_p1[la][j];
                }
                // - sum_ij <(v_prev)_i Lambda_ij, d_j G>
                for i in 0..2 {
                    for j in 0..2 {
                        r -= vint[i] * lam.comp[i][j].dot(&ec) * geom.grad_p1[la][j];
                    }
                }
                r_b[3 * t[la] + c] += r;
            }
        }
    }
    res.extend_from_slice(&r_b);
    Ok(res)
}

/// Functional of the chain-rule identity: the convection term evaluated at
/// the interpolant G = I_h[beta B - (1-beta) B^{-1}], which must vanish for
/// discretely divergence-free velocities.
pub fn lambda_identity_functional(
    mesh: &TriMesh,
    v: &VectorFieldP2,
    b: &TensorFieldP1,
    beta: f64,
) -> Result<f64, MatFuncError> {
    let lambda = lambda_field(mesh, b, beta)?;
    let g_field = TensorFieldP1 {
        values: b
            .values
            .iter()
            .map(|m| crate::matfunc::g_map(m, beta))
            .collect::<Result<_, _>>()?,
    };
    let mut total = 0.0;
    for e in 0..mesh.n_triangles() {
        let vint = velocity_cell_integral(mesh, v, e);
        let grad_g = g_field.gradient(mesh, e);
        for i in 0..2 {
            for j in 0..2 {
                total -= vint[i] * lambda[e].comp[i][j].dot(&grad_g[j]);
            }
        }
    }
    Ok(total)
}

/// Worst per-element defect of the chain-rule identity
/// sum_j Lambda_ij : d_j I_h[G(B)] = d_i I_h[theta(B)], relative to the
/// scale of the right-hand side.
pub fn lambda_chain_rule_defect(
    mesh: &TriMesh,
    b: &TensorFieldP1,
    beta: f64,
) -> Result<f64, MatFuncError> {
    let lambda = lambda_field(mesh, b, beta)?;
    let g_field = TensorFieldP1 {
        values: b
            .values
            .iter()
            .map(|m| crate::matfunc::g_map(m, beta))
            .collect::<Result<_, _>>()?,
    };
    let theta: Vec<f64> = b
        .values
        .iter()
        .map(|m| crate::matfunc::theta_map(m, beta))
        .collect::<Result<_, _>>()?;
    let mut worst = 0.0f64;
    for e in 0..mesh.n_triangles() {
        let t = mesh.triangles[e];
        let geom = mesh.geom(e);
        let grad_g = g_field.gradient(mesh, e);
        let mut grad_theta = [0.0; 2];
        for c in 0..3 {
            grad_theta[0] += theta[t[c]] * geom.grad_p1[c][0];
            grad_theta[1] += theta[t[c]] * geom.grad_p1[c][1];
        }
        for i in 0..2 {
            let mut lhs = 0.0;
            for j in 0..2 {
                lhs += lambda[e].comp[i][j].dot(&grad_g[j]);
            }
            let defect = (lhs - grad_theta[i]).abs() / (1.0 + grad_theta[i].abs());
            worst = worst.max(defect);
        }
    }
    Ok(worst)
}

/// Lumped norm squared <A, A>_h of a tensor field.
pub fn lumped_norm_sq(a: &TensorFieldP1, w: &LumpedWeights) -> f64 {
    lumped_inner_tensor(a, a, w).expect("matching mesh")
}
