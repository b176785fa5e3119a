//! Conforming non-obtuse triangulations of the unit square and the
//! per-element geometric quantities consumed by assembly.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("element id {0} out of range ({1} elements)")]
    ElementOutOfRange(usize, usize),
    #[error("mesh is not conforming: edge ({0}, {1}) is shared by {2} triangles")]
    NonConforming(usize, usize, usize),
    #[error("triangle {0} has an obtuse corner")]
    Obtuse(usize),
}

/// Per-element geometry cache: edge vectors from vertex 0, the dual basis
/// (g^k . e_l = delta_kl), the element area and the three P1 gradients.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    /// e_k = P^k - P^0, k in {1,2}.
    pub edges: [[f64; 2]; 2],
    /// Dual basis; rows of the inverse edge matrix.
    pub duals: [[f64; 2]; 2],
    pub area: f64,
    /// Gradients of the three P1 hat functions, constant per element.
    pub grad_p1: [[f64; 2]; 3],
}

/// Conforming triangulation with vertex, edge and geometry tables.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples in counter-clockwise local order.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_vertex: Vec<bool>,
    /// Unique edges as sorted vertex pairs; index = P2 midpoint dof offset.
    pub edges: Vec<[usize; 2]>,
    pub boundary_edge: Vec<bool>,
    /// Per-triangle edge indices in local order: edge m is opposite local
    /// vertex m, i.e. edge 0 = (v1,v2), edge 1 = (v0,v2), edge 2 = (v0,v1).
    pub triangle_edges: Vec<[usize; 3]>,
    geometry: Vec<ElementGeometry>,
}

impl TriMesh {
    /// Build the mesh tables from a raw triangle list. Local vertex order is
    /// normalized to counter-clockwise by swapping two indices if needed.
    pub fn from_triangles(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>) -> Self {
        for t in &mut triangles {
            if signed_area(&vertices, t) < 0.0 {
                t.swap(1, 2);
            }
        }

        let mut edge_ids = std::collections::HashMap::new();
        let mut edges: Vec<[usize; 2]> = Vec::new();
        let mut edge_count: Vec<usize> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for t in &triangles {
            let locals = [[t[1], t[2]], [t[0], t[2]], [t[0], t[1]]];
            let mut ids = [0usize; 3];
            for (m, pair) in locals.iter().enumerate() {
                let key = if pair[0] < pair[1] {
                    [pair[0], pair[1]]
                } else {
                    [pair[1], pair[0]]
                };
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edge_count.push(0);
                    edges.len() - 1
                });
                edge_count[id] += 1;
                ids[m] = id;
            }
            triangle_edges.push(ids);
        }
        let boundary_edge: Vec<bool> = edge_count.iter().map(|&c| c == 1).collect();
        let mut boundary_vertex = vec![false; vertices.len()];
        for (e, &b) in edges.iter().zip(&boundary_edge) {
            if b {
                boundary_vertex[e[0]] = true;
                boundary_vertex[e[1]] = true;
            }
        }

        let geometry = triangles
            .iter()
            .map(|t| element_geometry_of(&vertices, t))
            .collect();

        Self {
            vertices,
            triangles,
            boundary_vertex,
            edges,
            boundary_edge,
            triangle_edges,
            geometry,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn geometry(&self, element: usize) -> Result<&ElementGeometry, MeshError> {
        self.geometry
            .get(element)
            .ok_or(MeshError::ElementOutOfRange(element, self.triangles.len()))
    }

    /// Cached geometry without the range check, for assembly loops.
    #[inline]
    pub fn geom(&self, element: usize) -> &ElementGeometry {
        &self.geometry[element]
    }

    pub fn edge_midpoint(&self, edge: usize) -> [f64; 2] {
        let [a, b] = self.edges[edge];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        [(pa[0] + pb[0]) * 0.5, (pa[1] + pb[1]) * 0.5]
    }

    /// Each interior edge shared by exactly 2 triangles, boundary edges by 1.
    pub fn check_conforming(&self) -> Result<(), MeshError> {
        let mut count = vec![0usize; self.edges.len()];
        for te in &self.triangle_edges {
            for &e in te {
                count[e] += 1;
            }
        }
        for (i, &c) in count.iter().enumerate() {
            if c != 1 && c != 2 {
                return Err(MeshError::NonConforming(self.edges[i][0], self.edges[i][1], c));
            }
        }
        Ok(())
    }

    /// Every interior angle at most pi/2: edge-pair dot products at each
    /// corner are nonnegative.
    pub fn check_non_obtuse(&self) -> Result<(), MeshError> {
        for (k, t) in self.triangles.iter().enumerate() {
            for c in 0..3 {
                let p = self.vertices[t[c]];
                let q = self.vertices[t[(c + 1) % 3]];
                let r = self.vertices[t[(c + 2) % 3]];
                let u = [q[0] - p[0], q[1] - p[1]];
                let v = [r[0] - p[0], r[1] - p[1]];
                if u[0] * v[0] + u[1] * v[1] < -1e-14 {
                    return Err(MeshError::Obtuse(k));
                }
            }
        }
        Ok(())
    }

    /// Longest edge over all elements.
    pub fn mesh_size(&self) -> f64 {
        let mut h: f64 = 0.0;
        for t in &self.triangles {
            for c in 0..3 {
                let p = self.vertices[t[c]];
                let q = self.vertices[t[(c + 1) % 3]];
                h = h.max(((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt());
            }
        }
        h
    }
}

fn signed_area(vertices: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let p0 = vertices[t[0]];
    let p1 = vertices[t[1]];
    let p2 = vertices[t[2]];
    0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))
}

fn element_geometry_of(vertices: &[[f64; 2]], t: &[usize; 3]) -> ElementGeometry {
    let p0 = vertices[t[0]];
    let p1 = vertices[t[1]];
    let p2 = vertices[t[2]];
    let e1 = [p1[0] - p0[0], p1[1] - p0[1]];
    let e2 = [p2[0] - p0[0], p2[1] - p0[1]];
    let det = e1[0] * e2[1] - e1[1] * e2[0];
    let g1 = [e2[1] / det, -e2[0] / det];
    let g2 = [-e1[1] / det, e1[0] / det];
    ElementGeometry {
        edges: [e1, e2],
        duals: [g1, g2],
        area: 0.5 * det,
        grad_p1: [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2],
    }
}

/// Crisscross triangulation of the unit square: 2^k x 2^k squares, each cut
/// into four triangles by its diagonals (the square center is a vertex).
/// All triangles are right isosceles, so the non-obtuse requirement holds.
pub fn build_crisscross(k: u32) -> TriMesh {
    let n = 1usize << k;
    let h = 1.0 / n as f64;
    let grid = |i: usize, j: usize| j * (n + 1) + i;
    let n_grid = (n + 1) * (n + 1);
    let center = |i: usize, j: usize| n_grid + j * n + i;

    let mut vertices = Vec::with_capacity(n_grid + n * n);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h]);
        }
    }
    for j in 0..n {
        for i in 0..n {
            vertices.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
        }
    }

    let mut triangles = Vec::with_capacity(4 * n * n);
    for j in 0..n {
        for i in 0..n {
            let c00 = grid(i, j);
            let c10 = grid(i + 1, j);
            let c11 = grid(i + 1, j + 1);
            let c01 = grid(i, j + 1);
            let m = center(i, j);
            triangles.push([c00, c10, m]);
            triangles.push([c10, c11, m]);
            triangles.push([c11, c01, m]);
            triangles.push([c01, c00, m]);
        }
    }

    TriMesh::from_triangles(vertices, triangles)
}
