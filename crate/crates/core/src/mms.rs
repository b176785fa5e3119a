//! Closed-form space-time fields used as a manufactured solution for
//! convergence studies, together with the matching source terms and the
//! discrete error norms.

use crate::fields::{ScalarFieldP1, TensorFieldP1, VectorFieldP2};
use crate::matfunc::{Mat2, SymMat};
use crate::mesh::TriMesh;
use crate::params::ModelParams;
use crate::quadrature::triangle_rule;
use crate::scalar::Real;

// polynomial building blocks of the velocity stream function
fn p_poly<T: Real>(x: T) -> T {
    let one = T::one();
    x * x * (x - one) * (x - one)
}
fn q_poly<T: Real>(x: T) -> T {
    // q = p'/2 = x(x-1)(2x-1)
    let one = T::one();
    x * (x - one) * (T::of(2.0) * x - one)
}
fn q_prime<T: Real>(x: T) -> T {
    T::of(6.0) * x * x - T::of(6.0) * x + T::one()
}
fn q_second<T: Real>(x: T) -> T {
    T::of(12.0) * x - T::of(6.0)
}

/// Velocity: divergence-free, zero on the boundary of the unit square.
pub fn exact_velocity<T: Real>(x: [T; 2], t: T) -> [T; 2] {
    let a = (-t).exp();
    [
        a * p_poly(x[0]) * q_poly(x[1]),
        -a * q_poly(x[0]) * p_poly(x[1]),
    ]
}

pub fn exact_velocity_gradient<T: Real>(x: [T; 2], t: T) -> Mat2<T> {
    let a = (-t).exp();
    let two = T::of(2.0);
    // p' = 2q
    Mat2 {
        a: [
            [
                a * two * q_poly(x[0]) * q_poly(x[1]),
                a * p_poly(x[0]) * q_prime(x[1]),
            ],
            [
                -a * q_prime(x[0]) * p_poly(x[1]),
                -a * two * q_poly(x[0]) * q_poly(x[1]),
            ],
        ],
    }
}

/// Pressure with zero mean over the unit square.
pub fn exact_pressure<T: Real>(x: [T; 2], t: T) -> T {
    let one = T::one();
    let two = T::of(2.0);
    (-t).exp() * (two * x[0] - one) * (two * x[1] - one)
}

fn s_amp<T: Real>(x: [T; 2], t: T) -> T {
    let pi = T::PI();
    T::of(0.05) * (-t).exp() * (pi * x[0]).cos() * (pi * x[1]).cos()
}

fn s_grad<T: Real>(x: [T; 2], t: T) -> [T; 2] {
    let pi = T::PI();
    let a = T::of(0.05) * (-t).exp();
    [
        -a * pi * (pi * x[0]).sin() * (pi * x[1]).cos(),
        -a * pi * (pi * x[0]).cos() * (pi * x[1]).sin(),
    ]
}

/// Tensor: identity plus a smooth trace-free perturbation, uniformly
/// positive definite for all times.
pub fn exact_tensor<T: Real>(x: [T; 2], t: T) -> SymMat<T> {
    let s = s_amp(x, t);
    SymMat::diag(T::one() + s, T::one() - s)
}

pub fn exact_tensor_gradient<T: Real>(x: [T; 2], t: T) -> [SymMat<T>; 2] {
    let g = s_grad(x, t);
    [SymMat::diag(g[0], -g[0]), SymMat::diag(g[1], -g[1])]
}

/// Momentum source making the exact fields solve the flow equation.
pub fn momentum_source<T: Real>(x: [T; 2], t: T, prm: &SourceParams<T>) -> [T; 2] {
    let v = exact_velocity(x, t);
    let gv = exact_velocity_gradient(x, t);
    let a = (-t).exp();
    let two = T::of(2.0);
    let one = T::one();

    // time derivative: every factor carries e^{-t}
    let dvdt = [-v[0], -v[1]];

    // convection (v . grad) v
    let conv = [
        v[0] * gv.a[0][0] + v[1] * gv.a[0][1],
        v[0] * gv.a[1][0] + v[1] * gv.a[1][1],
    ];

    // laplacian; p'' = 12x^2 - 12x + 2, q'' = 12x - 6
    let p1 = p_poly(x[0]);
    let q1 = q_poly(x[0]);
    let p2 = p_poly(x[1]);
    let q2 = q_poly(x[1]);
    let pdd = |z: T| T::of(12.0) * z * z - T::of(12.0) * z + two;
    let lap = [
        a * (pdd(x[0]) * q2 + p1 * q_second(x[1])),
        -a * (q_second(x[0]) * p2 + q1 * pdd(x[1])),
    ];

    let gp = [
        a * two * (two * x[1] - one),
        a * two * (two * x[0] - one),
    ];

    // div T_e with T_e = 2 mu s D + 2 mu beta s^2 I, D = diag(1,-1)
    let s = s_amp(x, t);
    let gs = s_grad(x, t);
    let mu = prm.mu;
    let beta = prm.beta;
    let div_te = [
        two * mu * gs[0] + T::of(4.0) * mu * beta * s * gs[0],
        -two * mu * gs[1] + T::of(4.0) * mu * beta * s * gs[1],
    ];

    [
        dvdt[0] + conv[0] - prm.eta * lap[0] + gp[0] - div_te[0],
        dvdt[1] + conv[1] - prm.eta * lap[1] + gp[1] - div_te[1],
    ]
}

/// Tensor source making the exact fields solve the structure equation.
pub fn tensor_source<T: Real>(x: [T; 2], t: T, prm: &SourceParams<T>) -> SymMat<T> {
    let v = exact_velocity(x, t);
    let gv = exact_velocity_gradient(x, t);
    let b = exact_tensor(x, t);
    let gb = exact_tensor_gradient(x, t);
    let s = s_amp(x, t);
    let two = T::of(2.0);
    let pi = T::PI();

    // d_t B = d_t s * D, with d_t s = -s
    let mut f = SymMat::diag(-s, s);

    // (v . grad) B
    f = f + gb[0] * v[0] + gb[1] * v[1];

    // delta1 (B - I) = delta1 s D
    f = f + SymMat::diag(s, -s) * prm.delta1;

    // delta2 (B^2 - B) = delta2 (s D + s^2 I)
    f = f + (SymMat::diag(s, -s) + SymMat::identity() * (s * s)) * prm.delta2;

    // - (grad v) B - B (grad v)^T  (symmetric by construction)
    let bm = Mat2 {
        a: [[b.m11, b.m12], [b.m12, b.m22]],
    };
    let mut sym = SymMat::zero();
    // (grad v) B + B (grad v)^T has entries g B + (g B)^T
    let mut gb_full = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            gb_full[i][j] = gv.a[i][0] * bm.a[0][j] + gv.a[i][1] * bm.a[1][j];
        }
    }
    sym.m11 = two * gb_full[0][0];
    sym.m12 = gb_full[0][1] + gb_full[1][0];
    sym.m22 = two * gb_full[1][1];
    f = f - sym;

    // - lambda Laplacian(B); Laplacian s = -2 pi^2 s
    let lap_s = -two * pi * pi * s;
    f = f - SymMat::diag(lap_s, -lap_s) * prm.lambda;

    f
}

/// The subset of the model coefficients the sources depend on, generic in
/// the scalar type.
#[derive(Debug, Clone, Copy)]
pub struct SourceParams<T> {
    pub eta: T,
    pub mu: T,
    pub beta: T,
    pub lambda: T,
    pub delta1: T,
    pub delta2: T,
}

impl SourceParams<f64> {
    pub fn from_model(p: &ModelParams) -> Self {
        SourceParams {
            eta: p.eta,
            mu: p.mu,
            beta: p.beta,
            lambda: p.lambda,
            delta1: p.delta1,
            delta2: p.delta2,
        }
    }
}

/// Quadrature degree for error norms and initial interpolation checks.
pub const ERROR_DEG: usize = 6;

/// L2 norm of the velocity error against the exact field at time t.
pub fn velocity_error_l2(mesh: &TriMesh, v: &VectorFieldP2, t: f64) -> f64 {
    let rule = triangle_rule(ERROR_DEG).unwrap();
    let mut acc = 0.0;
    for e in 0..mesh.n_triangles() {
        let geom = mesh.geom(e);
        let tv = mesh.triangles[e];
        for qp in rule {
            let x = phys_point(mesh, &tv, qp.bary);
            let vh = v.eval(mesh, e, qp.bary);
            let vx = exact_velocity(x, t);
            let d = [vh[0] - vx[0], vh[1] - vx[1]];
            acc += geom.area * qp.weight * (d[0] * d[0] + d[1] * d[1]);
        }
    }
    acc.sqrt()
}

/// H1 seminorm of the velocity error.
pub fn velocity_error_h1(mesh: &TriMesh, v: &VectorFieldP2, t: f64) -> f64 {
    let rule = triangle_rule(ERROR_DEG).unwrap();
    let mut acc = 0.0;
    for e in 0..mesh.n_triangles() {
        let geom = mesh.geom(e);
        let tv = mesh.triangles[e];
        for qp in rule {
            let x = phys_point(mesh, &tv, qp.bary);
            let gh = v.gradient(mesh, e, qp.bary);
            let gx = exact_velocity_gradient(x, t);
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let d = gh.a[i][j] - gx.a[i][j];
                    s += d * d;
                }
            }
            acc += geom.area * qp.weight * s;
        }
    }
    acc.sqrt()
}

pub fn tensor_error_l2(mesh: &TriMesh, b: &TensorFieldP1, t: f64) -> f64 {
    let rule = triangle_rule(ERROR_DEG).unwrap();
    let mut acc = 0.0;
    for e in 0..mesh.n_triangles() {
        let geom = mesh.geom(e);
        let tv = mesh.triangles[e];
        for qp in rule {
            let x = phys_point(mesh, &tv, qp.bary);
            let d = b.eval(mesh, e, qp.bary) - exact_tensor(x, t);
            acc += geom.area * qp.weight * d.norm_sq();
        }
    }
    acc.sqrt()
}

pub fn tensor_error_h1(mesh: &TriMesh, b: &TensorFieldP1, t: f64) -> f64 {
    let rule = triangle_rule(ERROR_DEG).unwrap();
    let mut acc = 0.0;
    for e in 0..mesh.n_triangles() {
        let geom = mesh.geom(e);
        let tv = mesh.triangles[e];
        let gh = b.gradient(mesh, e);
        for qp in rule {
            let x = phys_point(mesh, &tv, qp.bary);
            let gx = exact_tensor_gradient(x, t);
            let s = (gh[0] - gx[0]).norm_sq() + (gh[1] - gx[1]).norm_sq();
            acc += geom.area * qp.weight * s;
        }
    }
    acc.sqrt()
}

pub fn pressure_error_l2(mesh: &TriMesh, p: &ScalarFieldP1, t: f64) -> f64 {
    let rule = triangle_rule(ERROR_DEG).unwrap();
    let mut acc = 0.0;
    for e in 0..mesh.n_triangles() {
        let geom = mesh.geom(e);
        let tv = mesh.triangles[e];
        for qp in rule {
            let x = phys_point(mesh, &tv, qp.bary);
            let d = p.eval(mesh, e, qp.bary) - exact_pressure(x, t);
            acc += geom.area * qp.weight * d * d;
        }
    }
    acc.sqrt()
}

fn phys_point(mesh: &TriMesh, t: &[usize; 3], bary: [f64; 3]) -> [f64; 2] {
    let p = [
        mesh.vertices[t[0]],
        mesh.vertices[t[1]],
        mesh.vertices[t[2]],
    ];
    [
        bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
        bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
    ]
}

/// Running accumulator of the space-time error norms over a time loop:
/// max over steps of the L2 error and dt-weighted sum of squared H1
/// seminorms, with the initial step excluded.
#[derive(Debug, Clone, Default)]
pub struct ErrorAccumulator {
    pub v_linf_l2: f64,
    pub v_l2_h1_sq: f64,
    pub b_linf_l2: f64,
    pub b_l2_h1_sq: f64,
    pub n_steps: usize,
}

impl ErrorAccumulator {
    pub fn record(
        &mut self,
        mesh: &TriMesh,
        v: &VectorFieldP2,
        b: &TensorFieldP1,
        t: f64,
        dt: f64,
    ) {
        self.v_linf_l2 = self.v_linf_l2.max(velocity_error_l2(mesh, v, t));
        self.b_linf_l2 = self.b_linf_l2.max(tensor_error_l2(mesh, b, t));
        let eh = velocity_error_h1(mesh, v, t);
        self.v_l2_h1_sq += dt * eh * eh;
        let ebh = tensor_error_h1(mesh, b, t);
        self.b_l2_h1_sq += dt * ebh * ebh;
        self.n_steps += 1;
    }

    pub fn v_l2_h1(&self) -> f64 {
        self.v_l2_h1_sq.sqrt()
    }
    pub fn b_l2_h1(&self) -> f64 {
        self.b_l2_h1_sq.sqrt()
    }
}

/// Experimental order of convergence between two rows of a refinement
/// study, assuming the discretization parameter halves from one to the next.
pub fn eoc(err_coarse: f64, err_fine: f64) -> f64 {
    (err_coarse / err_fine).log2()
}
