//! Discrete function spaces on a triangulation: P1 scalars, P1 continuous
//! symmetric tensors, P2 vectors with zero boundary trace, the nodal
//! interpolation operator and the lumped (vertex-quadrature) semi-inner
//! products.

use crate::matfunc::{Mat2, SymMat};
use crate::mesh::{ElementGeometry, TriMesh};
use thiserror::Error;

pub type SymMat2 = SymMat<f64>;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field defined on a different mesh ({0} vs {1} entries)")]
    MeshMismatch(usize, usize),
    #[error("interpolated function is not finite at vertex {0}")]
    NotFinite(usize),
}

/// One positive weight per vertex: w_a = integral of the hat function,
/// i.e. one third of the area of the triangles containing the vertex.
#[derive(Debug, Clone)]
pub struct LumpedWeights {
    pub w: Vec<f64>,
}

impl LumpedWeights {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut w = vec![0.0; mesh.n_vertices()];
        for (e, t) in mesh.triangles.iter().enumerate() {
            let third = mesh.geom(e).area / 3.0;
            for &v in t {
                w[v] += third;
            }
        }
        Self { w }
    }
}

/// Piecewise linear continuous scalar field, one value per vertex.
#[derive(Debug, Clone)]
pub struct ScalarFieldP1 {
    pub values: Vec<f64>,
}

/// Piecewise linear continuous symmetric tensor field, one matrix per vertex.
#[derive(Debug, Clone)]
pub struct TensorFieldP1 {
    pub values: Vec<SymMat2>,
}

/// Piecewise quadratic vector field: one 2-vector per vertex and per edge
/// midpoint, boundary dofs constrained to zero.
#[derive(Debug, Clone)]
pub struct VectorFieldP2 {
    pub values: Vec<[f64; 2]>,
}

impl ScalarFieldP1 {
    pub fn zero(mesh: &TriMesh) -> Self {
        Self { values: vec![0.0; mesh.n_vertices()] }
    }

    pub fn interpolate(mesh: &TriMesh, f: impl Fn([f64; 2]) -> f64) -> Result<Self, FieldError> {
        let values: Vec<f64> = mesh.vertices.iter().map(|&p| f(p)).collect();
        if let Some(a) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NotFinite(a));
        }
        Ok(Self { values })
    }

    /// Gradient of the linear interpolant, constant per element.
    pub fn gradient(&self, mesh: &TriMesh, element: usize) -> [f64; 2] {
        let t = &mesh.triangles[element];
        let g = mesh.geom(element);
        let mut grad = [0.0; 2];
        for i in 0..3 {
            let v = self.values[t[i]];
            grad[0] += v * g.grad_p1[i][0];
            grad[1] += v * g.grad_p1[i][1];
        }
        grad
    }

    pub fn eval(&self, mesh: &TriMesh, element: usize, bary: [f64; 3]) -> f64 {
        let t = &mesh.triangles[element];
        (0..3).map(|i| bary[i] * self.values[t[i]]).sum()
    }
}

impl TensorFieldP1 {
    pub fn constant(mesh: &TriMesh, m: SymMat2) -> Self {
        Self { values: vec![m; mesh.n_vertices()] }
    }

    pub fn interpolate(
        mesh: &TriMesh,
        f: impl Fn([f64; 2]) -> SymMat2,
    ) -> Result<Self, FieldError> {
        let values: Vec<SymMat2> = mesh.vertices.iter().map(|&p| f(p)).collect();
        if let Some(a) = values
            .iter()
            .position(|v| !(v.m11.is_finite() && v.m12.is_finite() && v.m22.is_finite()))
        {
            return Err(FieldError::NotFinite(a));
        }
        Ok(Self { values })
    }

    /// Map over nodal values (e.g. cutoff, G, elastic stress).
    pub fn map(&self, f: impl Fn(&SymMat2) -> SymMat2) -> Self {
        Self { values: self.values.iter().map(f).collect() }
    }

    pub fn eval(&self, mesh: &TriMesh, element: usize, bary: [f64; 3]) -> SymMat2 {
        let t = &mesh.triangles[element];
        let mut m = SymMat2::zero();
        for i in 0..3 {
            m = m + self.values[t[i]] * bary[i];
        }
        m
    }

    /// Component-wise gradient: result[j] = d_xj B, constant per element.
    pub fn gradient(&self, mesh: &TriMesh, element: usize) -> [SymMat2; 2] {
        let t = &mesh.triangles[element];
        let g = mesh.geom(element);
        let mut grad = [SymMat2::zero(); 2];
        for i in 0..3 {
            let v = self.values[t[i]];
            grad[0] = grad[0] + v * g.grad_p1[i][0];
            grad[1] = grad[1] + v * g.grad_p1[i][1];
        }
        grad
    }

    pub fn min_nodal_eigenvalue(&self) -> (f64, usize) {
        let mut min = f64::INFINITY;
        let mut arg = 0;
        for (a, m) in self.values.iter().enumerate() {
            let l = m.eig().lambda[0];
            if l < min {
                min = l;
                arg = a;
            }
        }
        (min, arg)
    }
}

impl VectorFieldP2 {
    pub fn zero(mesh: &TriMesh) -> Self {
        Self { values: vec![[0.0; 2]; mesh.n_vertices() + mesh.n_edges()] }
    }

    /// Nodal interpolation at vertices and edge midpoints, with boundary
    /// dofs forced to zero.
    pub fn interpolate(
        mesh: &TriMesh,
        f: impl Fn([f64; 2]) -> [f64; 2],
    ) -> Result<Self, FieldError> {
        let mut values = Vec::with_capacity(mesh.n_vertices() + mesh.n_edges());
        for &p in &mesh.vertices {
            values.push(f(p));
        }
        for e in 0..mesh.n_edges() {
            values.push(f(mesh.edge_midpoint(e)));
        }
        if let Some(a) = values
            .iter()
            .position(|v| !(v[0].is_finite() && v[1].is_finite()))
        {
            return Err(FieldError::NotFinite(a));
        }
        let mut field = Self { values };
        field.enforce_zero_boundary(mesh);
        Ok(field)
    }

    pub fn enforce_zero_boundary(&mut self, mesh: &TriMesh) {
        for a in 0..mesh.n_vertices() {
            if mesh.boundary_vertex[a] {
                self.values[a] = [0.0; 2];
            }
        }
        for e in 0..mesh.n_edges() {
            if mesh.boundary_edge[e] {
                self.values[mesh.n_vertices() + e] = [0.0; 2];
            }
        }
    }

    pub fn max_boundary_value(&self, mesh: &TriMesh) -> f64 {
        let mut m: f64 = 0.0;
        for a in 0..mesh.n_vertices() {
            if mesh.boundary_vertex[a] {
                m = m.max(self.values[a][0].abs()).max(self.values[a][1].abs());
            }
        }
        for e in 0..mesh.n_edges() {
            if mesh.boundary_edge[e] {
                let v = self.values[mesh.n_vertices() + e];
                m = m.max(v[0].abs()).max(v[1].abs());
            }
        }
        m
    }

    pub fn eval(&self, mesh: &TriMesh, element: usize, bary: [f64; 3]) -> [f64; 2] {
        let phi = p2_basis(bary);
        let nodes = p2_element_nodes(mesh, element);
        let mut v = [0.0; 2];
        for (n, &node) in nodes.iter().enumerate() {
            v[0] += phi[n] * self.values[node][0];
            v[1] += phi[n] * self.values[node][1];
        }
        v
    }

    /// Velocity gradient (d v_i / d x_j) at a point of an element.
    pub fn gradient(&self, mesh: &TriMesh, element: usize, bary: [f64; 3]) -> Mat2<f64> {
        let dphi = p2_basis_grad(bary, mesh.geom(element));
        let nodes = p2_element_nodes(mesh, element);
        let mut g = Mat2::zero();
        for (n, &node) in nodes.iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    g.a[i][j] += self.values[node][i] * dphi[n][j];
                }
            }
        }
        g
    }
}

/// Global P2 node ids of an element in local order: the three vertices, then
/// the midpoints of edges (1,2), (0,2), (0,1).
#[inline]
pub fn p2_element_nodes(mesh: &TriMesh, element: usize) -> [usize; 6] {
    let t = mesh.triangles[element];
    let te = mesh.triangle_edges[element];
    let nv = mesh.n_vertices();
    [t[0], t[1], t[2], nv + te[0], nv + te[1], nv + te[2]]
}

/// Quadratic Lagrange basis at barycentric coordinates, local order as in
/// `p2_element_nodes`.
#[inline]
pub fn p2_basis(bary: [f64; 3]) -> [f64; 6] {
    let [l0, l1, l2] = bary;
    [
        l0 * (2.0 * l0 - 1.0),
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        4.0 * l1 * l2,
        4.0 * l0 * l2,
        4.0 * l0 * l1,
    ]
}

/// Gradients of the quadratic basis; constant P1 gradients come from the
/// element geometry.
#[inline]
pub fn p2_basis_grad(bary: [f64; 3], geom: &ElementGeometry) -> [[f64; 2]; 6] {
    let [l0, l1, l2] = bary;
    let g = &geom.grad_p1;
    let mut out = [[0.0; 2]; 6];
    for d in 0..2 {
        out[0][d] = (4.0 * l0 - 1.0) * g[0][d];
        out[1][d] = (4.0 * l1 - 1.0) * g[1][d];
        out[2][d] = (4.0 * l2 - 1.0) * g[2][d];
        out[3][d] = 4.0 * (l1 * g[2][d] + l2 * g[1][d]);
        out[4][d] = 4.0 * (l0 * g[2][d] + l2 * g[0][d]);
        out[5][d] = 4.0 * (l0 * g[1][d] + l1 * g[0][d]);
    }
    out
}

/// Velocity dof index of a P2 node and component.
#[inline]
pub fn vdof(node: usize, comp: usize) -> usize {
    2 * node + comp
}

/// Indices of all constrained (boundary) velocity dofs.
pub fn boundary_vdofs(mesh: &TriMesh) -> Vec<usize> {
    let mut out = Vec::new();
    for a in 0..mesh.n_vertices() {
        if mesh.boundary_vertex[a] {
            out.push(vdof(a, 0));
            out.push(vdof(a, 1));
        }
    }
    for e in 0..mesh.n_edges() {
        if mesh.boundary_edge[e] {
            out.push(vdof(mesh.n_vertices() + e, 0));
            out.push(vdof(mesh.n_vertices() + e, 1));
        }
    }
    out
}

/// Lumped semi-inner product of two P1 scalar fields.
pub fn lumped_inner_scalar(
    a: &ScalarFieldP1,
    b: &ScalarFieldP1,
    w: &LumpedWeights,
) -> Result<f64, FieldError> {
    if a.values.len() != w.w.len() || b.values.len() != w.w.len() {
        return Err(FieldError::MeshMismatch(a.values.len(), w.w.len()));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .zip(&w.w)
        .map(|((x, y), wa)| wa * x * y)
        .sum())
}

/// Lumped semi-inner product of two P1 tensor fields (Frobenius contraction).
pub fn lumped_inner_tensor(
    a: &TensorFieldP1,
    b: &TensorFieldP1,
    w: &LumpedWeights,
) -> Result<f64, FieldError> {
    if a.values.len() != w.w.len() || b.values.len() != w.w.len() {
        return Err(FieldError::MeshMismatch(a.values.len(), w.w.len()));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .zip(&w.w)
        .map(|((x, y), wa)| wa * x.dot(y))
        .sum())
}
