//! Pointwise symmetric-matrix calculus: closed-form 2x2 eigendecomposition,
//! spectral cutoff, free energies, and the per-element discrete chain-rule
//! tensor used in the convective term of the tensor equation.

use crate::scalar::Real;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatFuncError {
    #[error("matrix is not positive definite (trace {trace}, det {det})")]
    NotPositiveDefinite { trace: f64, det: f64 },
}

/// Symmetric 2x2 matrix, off-diagonal entry stored once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMat<T> {
    pub m11: T,
    pub m12: T,
    pub m22: T,
}

/// General 2x2 matrix (velocity gradients, products of symmetric matrices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2<T> {
    pub a: [[T; 2]; 2],
}

impl<T: Real> SymMat<T> {
    #[inline]
    pub fn new(m11: T, m12: T, m22: T) -> Self {
        Self { m11, m12, m22 }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::one())
    }

    #[inline]
    pub fn diag(a: T, b: T) -> Self {
        Self::new(a, T::zero(), b)
    }

    #[inline]
    pub fn trace(&self) -> T {
        self.m11 + self.m22
    }

    #[inline]
    pub fn det(&self) -> T {
        self.m11 * self.m22 - self.m12 * self.m12
    }

    /// Frobenius inner product; the off-diagonal entry counts twice.
    #[inline]
    pub fn dot(&self, other: &Self) -> T {
        self.m11 * other.m11 + T::of(2.0) * self.m12 * other.m12 + self.m22 * other.m22
    }

    #[inline]
    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn is_positive_definite(&self) -> bool {
        self.m11 > T::zero() && self.det() > T::zero()
    }

    pub fn inv(&self) -> Result<Self, MatFuncError> {
        let d = self.det();
        if d == T::zero() {
            return Err(MatFuncError::NotPositiveDefinite {
                trace: self.trace().to_f64().unwrap_or(f64::NAN),
                det: 0.0,
            });
        }
        Ok(Self::new(self.m22 / d, -self.m12 / d, self.m11 / d))
    }

    /// Full (generally non-symmetric) product of two symmetric matrices.
    pub fn mul_full(&self, other: &Self) -> Mat2<T> {
        Mat2 {
            a: [
                [
                    self.m11 * other.m11 + self.m12 * other.m12,
                    self.m11 * other.m12 + self.m12 * other.m22,
                ],
                [
                    self.m12 * other.m11 + self.m22 * other.m12,
                    self.m12 * other.m12 + self.m22 * other.m22,
                ],
            ],
        }
    }

    /// Symmetrized product (A B + B A) / 2.
    pub fn sym_mul(&self, other: &Self) -> Self {
        let p = self.mul_full(other);
        Self::new(
            p.a[0][0],
            (p.a[0][1] + p.a[1][0]) * T::of(0.5),
            p.a[1][1],
        )
    }

    /// Eigenvalues in ascending order with orthonormal eigenvector columns.
    pub fn eig(&self) -> Eig<T> {
        let half_tr = (self.m11 + self.m22) * T::of(0.5);
        let half_diff = (self.m11 - self.m22) * T::of(0.5);
        let r = (half_diff * half_diff + self.m12 * self.m12).sqrt();
        let l1 = half_tr - r;
        let l2 = half_tr + r;
        if r == T::zero() {
            return Eig {
                lambda: [l1, l2],
                q: [[T::one(), T::zero()], [T::zero(), T::one()]],
            };
        }
        // Eigenvector for l2; pick the better-conditioned of two valid forms.
        let u = if (l2 - self.m11).abs() >= (l2 - self.m22).abs() {
            [self.m12, l2 - self.m11]
        } else {
            [l2 - self.m22, self.m12]
        };
        let n = (u[0] * u[0] + u[1] * u[1]).sqrt();
        let q2 = [u[0] / n, u[1] / n];
        let q1 = [-q2[1], q2[0]];
        Eig {
            lambda: [l1, l2],
            q: [q1, q2],
        }
    }

    /// Rebuild Q diag(l) Q^T from an eigenbasis.
    pub fn from_eig(lambda: [T; 2], q: [[T; 2]; 2]) -> Self {
        Self::new(
            lambda[0] * q[0][0] * q[0][0] + lambda[1] * q[1][0] * q[1][0],
            lambda[0] * q[0][0] * q[0][1] + lambda[1] * q[1][0] * q[1][1],
            lambda[0] * q[0][1] * q[0][1] + lambda[1] * q[1][1] * q[1][1],
        )
    }

    /// Apply a scalar function to the eigenvalues.
    pub fn spectral_map(&self, f: impl Fn(T) -> T) -> Self {
        let e = self.eig();
        Self::from_eig([f(e.lambda[0]), f(e.lambda[1])], e.q)
    }

    /// Eigenvalue cutoff [.]_delta: eigenvalues below delta are raised to delta.
    pub fn cutoff(&self, delta: T) -> Self {
        let e = self.eig();
        if e.lambda[0] >= delta {
            return *self;
        }
        Self::from_eig(
            [e.lambda[0].max(delta), e.lambda[1].max(delta)],
            e.q,
        )
    }

    /// Spectral power for positive definite input; p in {1/2, -1/2, 3/2, ...}.
    pub fn pow(&self, p: T) -> Result<Self, MatFuncError> {
        let e = self.eig();
        if e.lambda[0] <= T::zero() {
            return Err(self.not_pd());
        }
        Ok(Self::from_eig([e.lambda[0].powf(p), e.lambda[1].powf(p)], e.q))
    }

    pub fn sqrt_pd(&self) -> Result<Self, MatFuncError> {
        self.pow(T::of(0.5))
    }

    fn not_pd(&self) -> MatFuncError {
        MatFuncError::NotPositiveDefinite {
            trace: self.trace().to_f64().unwrap_or(f64::NAN),
            det: self.det().to_f64().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Eig<T> {
    /// Ascending.
    pub lambda: [T; 2],
    /// q[i] is the eigenvector for lambda[i].
    pub q: [[T; 2]; 2],
}

impl<T: Real> Add for SymMat<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.m11 + o.m11, self.m12 + o.m12, self.m22 + o.m22)
    }
}

impl<T: Real> Sub for SymMat<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.m11 - o.m11, self.m12 - o.m12, self.m22 - o.m22)
    }
}

impl<T: Real> Neg for SymMat<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.m11, -self.m12, -self.m22)
    }
}

impl<T: Real> Mul<T> for SymMat<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.m11 * s, self.m12 * s, self.m22 * s)
    }
}

impl<T: Real> Mat2<T> {
    pub fn zero() -> Self {
        Self {
            a: [[T::zero(); 2]; 2],
        }
    }

    /// Full Frobenius contraction of two general matrices.
    pub fn dot(&self, other: &Self) -> T {
        let mut s = T::zero();
        for i in 0..2 {
            for j in 0..2 {
                s += self.a[i][j] * other.a[i][j];
            }
        }
        s
    }

    pub fn dot_sym(&self, s: &SymMat<T>) -> T {
        self.a[0][0] * s.m11
            + (self.a[0][1] + self.a[1][0]) * s.m12
            + self.a[1][1] * s.m22
    }

    pub fn transpose(&self) -> Self {
        Self {
            a: [[self.a[0][0], self.a[1][0]], [self.a[0][1], self.a[1][1]]],
        }
    }

    /// A + A^T as a symmetric matrix... divided by nothing; callers scale.
    pub fn sym_part_twice(&self) -> SymMat<T> {
        SymMat::new(
            self.a[0][0] + self.a[0][0],
            self.a[0][1] + self.a[1][0],
            self.a[1][1] + self.a[1][1],
        )
    }
}

impl<T: Real> Add for Mat2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut r = Self::zero();
        for i in 0..2 {
            for j in 0..2 {
                r.a[i][j] = self.a[i][j] + o.a[i][j];
            }
        }
        r
    }
}

impl<T: Real> Mul<T> for Mat2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        let mut r = Self::zero();
        for i in 0..2 {
            for j in 0..2 {
                r.a[i][j] = self.a[i][j] * s;
            }
        }
        r
    }
}

/// C^1 extension of ln below delta; returns (value, derivative).
pub fn g_delta<T: Real>(s: T, delta: T) -> (T, T) {
    if s >= delta {
        (s.ln(), T::one() / s)
    } else {
        (s / delta + delta.ln() - T::one(), T::one() / delta)
    }
}

/// Helmholtz free energy; requires positive definite input.
pub fn psi<T: Real>(b: &SymMat<T>, mu: T, beta: T) -> Result<T, MatFuncError> {
    let d = b.det();
    if !b.is_positive_definite() {
        return Err(MatFuncError::NotPositiveDefinite {
            trace: b.trace().to_f64().unwrap_or(f64::NAN),
            det: d.to_f64().unwrap_or(f64::NAN),
        });
    }
    let dev = *b - SymMat::identity();
    Ok(mu * (T::one() - beta) * (b.trace() - d.ln() - T::of(2.0))
        + mu * beta * T::of(0.5) * dev.norm_sq())
}

/// Regularized free energy; defined for all symmetric input.
pub fn psi_delta<T: Real>(b: &SymMat<T>, mu: T, beta: T, delta: T) -> T {
    let e = b.eig();
    let tr_g = g_delta(e.lambda[0], delta).0 + g_delta(e.lambda[1], delta).0;
    let dev = *b - SymMat::identity();
    mu * (T::one() - beta) * (b.trace() - tr_g - T::of(2.0))
        + mu * beta * T::of(0.5) * dev.norm_sq()
}

/// Gradient of psi: mu(1-beta)(I - B^-1) + mu beta (B - I).
pub fn psi_prime<T: Real>(b: &SymMat<T>, mu: T, beta: T) -> Result<SymMat<T>, MatFuncError> {
    if !b.is_positive_definite() {
        return Err(MatFuncError::NotPositiveDefinite {
            trace: b.trace().to_f64().unwrap_or(f64::NAN),
            det: b.det().to_f64().unwrap_or(f64::NAN),
        });
    }
    let inv = b.inv()?;
    Ok((SymMat::identity() - inv) * (mu * (T::one() - beta)) + (*b - SymMat::identity()) * (mu * beta))
}

/// Cutoff variant of psi': mu(1-beta)(I - [B]_delta^-1) + mu beta (B - I).
pub fn psi_prime_delta<T: Real>(b: &SymMat<T>, mu: T, beta: T, delta: T) -> SymMat<T> {
    let inv = b.cutoff(delta).inv().expect("cutoff output is invertible");
    (SymMat::identity() - inv) * (mu * (T::one() - beta)) + (*b - SymMat::identity()) * (mu * beta)
}

/// G(B) = beta B - (1-beta) B^-1, the nodal map whose interpolant the
/// chain-rule tensor is paired with.
pub fn g_map<T: Real>(b: &SymMat<T>, beta: T) -> Result<SymMat<T>, MatFuncError> {
    if !b.is_positive_definite() {
        return Err(MatFuncError::NotPositiveDefinite {
            trace: b.trace().to_f64().unwrap_or(f64::NAN),
            det: b.det().to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(*b * beta - b.inv()? * (T::one() - beta))
}

/// theta(B) = (beta/2)|B|^2 + (1-beta) ln det B.
pub fn theta_map<T: Real>(b: &SymMat<T>, beta: T) -> Result<T, MatFuncError> {
    let d = b.det();
    if !b.is_positive_definite() {
        return Err(MatFuncError::NotPositiveDefinite {
            trace: b.trace().to_f64().unwrap_or(f64::NAN),
            det: d.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(beta * T::of(0.5) * b.norm_sq() + (T::one() - beta) * d.ln())
}

/// Cutoff variant of G.
pub fn g_map_delta<T: Real>(b: &SymMat<T>, beta: T, delta: T) -> SymMat<T> {
    let inv = b.cutoff(delta).inv().expect("cutoff output is invertible");
    *b * beta - inv * (T::one() - beta)
}

/// Cutoff variant of theta; tr g_delta(B) replaces ln det B.
pub fn theta_map_delta<T: Real>(b: &SymMat<T>, beta: T, delta: T) -> T {
    let e = b.eig();
    let tr_g = g_delta(e.lambda[0], delta).0 + g_delta(e.lambda[1], delta).0;
    beta * T::of(0.5) * b.norm_sq() + (T::one() - beta) * tr_g
}

/// Per-element chain-rule tensor: a d x d array of symmetric matrices.
#[derive(Debug, Clone, Copy)]
pub struct LambdaTensor<T> {
    pub comp: [[SymMat<T>; 2]; 2],
    /// Largest chain-rule residual skipped by the degenerate-edge guard;
    /// exactly zero for the unregularized construction.
    pub residual_flag: T,
}

/// Relative guard below which the rank-one correction of the regularized
/// construction is numerically meaningless and skipped.
const EPS_GUARD: f64 = 1e-14;

fn assemble_lambda<T: Real>(
    edges: &[[T; 2]; 2],
    duals: &[[T; 2]; 2],
    means: &[SymMat<T>; 2],
    residual_flag: T,
) -> LambdaTensor<T> {
    let mut comp = [[SymMat::zero(); 2]; 2];
    for (k, m) in means.iter().enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                comp[i][j] = comp[i][j] + *m * (duals[k][i] * edges[k][j]);
            }
        }
    }
    LambdaTensor {
        comp,
        residual_flag,
    }
}

/// Build the chain-rule tensor on one element from the three nodal values
/// `b[0..3]` (vertex 0 first, matching the edge vectors P^k - P^0).
///
/// Per edge the midpoint mean of the endpoint values receives a rank-one
/// correction along Delta G so that M_k : Delta G_k = Delta theta_k holds
/// exactly, which yields the discrete chain-rule identity for any
/// discretely divergence-free velocity.
pub fn build_lambda<T: Real>(
    edges: &[[T; 2]; 2],
    duals: &[[T; 2]; 2],
    b: &[SymMat<T>; 3],
    beta: T,
) -> Result<LambdaTensor<T>, MatFuncError> {
    let g0 = g_map(&b[0], beta)?;
    let th0 = theta_map(&b[0], beta)?;
    let mut means = [SymMat::zero(); 2];
    for k in 0..2 {
        let a = b[k + 1];
        let dg = g_map(&a, beta)? - g0;
        let dth = theta_map(&a, beta)? - th0;
        let m0 = (a + b[0]) * T::of(0.5);
        let nrm2 = dg.norm_sq();
        means[k] = if nrm2 == T::zero() {
            m0
        } else {
            let r = dth - m0.dot(&dg);
            m0 + dg * (r / nrm2)
        };
    }
    Ok(assemble_lambda(edges, duals, &means, T::zero()))
}

/// Regularized variant: G and theta are replaced by their cutoff forms and
/// merely symmetric nodal values are accepted. When an edge difference
/// Delta G is numerically degenerate the correction is skipped and the
/// dropped residual is recorded in the flag.
pub fn build_lambda_delta<T: Real>(
    edges: &[[T; 2]; 2],
    duals: &[[T; 2]; 2],
    b: &[SymMat<T>; 3],
    beta: T,
    delta: T,
) -> LambdaTensor<T> {
    let g0 = g_map_delta(&b[0], beta, delta);
    let th0 = theta_map_delta(&b[0], beta, delta);
    let mut means = [SymMat::zero(); 2];
    let mut flag = T::zero();
    for k in 0..2 {
        let a = b[k + 1];
        let dg = g_map_delta(&a, beta, delta) - g0;
        let dth = theta_map_delta(&a, beta, delta) - th0;
        let m0 = (a + b[0]) * T::of(0.5);
        let r = dth - m0.dot(&dg);
        let diff_norm = (a - b[0]).norm();
        means[k] = if dg.norm() < T::of(EPS_GUARD) * (T::one() + diff_norm) {
            flag = flag.max(r.abs());
            m0
        } else {
            m0 + dg * (r / dg.norm_sq())
        };
    }
    assemble_lambda(edges, duals, &means, flag)
}
