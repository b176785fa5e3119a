//! Output writers: legacy-ASCII VTK snapshots of the fields and CSV tables
//! with the run configuration embedded as comment lines, written so that a
//! rerun with the same inputs produces byte-identical files.

use crate::config::RunConfig;
use crate::fields::{ScalarFieldP1, TensorFieldP1, VectorFieldP2};
use crate::mesh::TriMesh;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

/// One row of a convergence table; columns match `CONVERGENCE_HEADER`.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    pub dt: f64,
    pub err_v_linf_l2: f64,
    pub err_v_l2_h1: f64,
    pub err_b_linf_l2: f64,
    pub err_b_l2_h1: f64,
    /// None in the first row of a study
    pub eoc_v_linf_l2: Option<f64>,
    pub eoc_v_l2_h1: Option<f64>,
    pub eoc_b_linf_l2: Option<f64>,
    pub eoc_b_l2_h1: Option<f64>,
    pub avg_picard_iters: f64,
    pub min_eig_b: f64,
    pub runtime_s: f64,
}

pub const CONVERGENCE_HEADER: &str = "level,h,dt,err_v_LinfL2,err_v_L2H1,err_B_LinfL2,err_B_L2H1,eoc_v_LinfL2,eoc_v_L2H1,eoc_B_LinfL2,eoc_B_L2H1,avg_picard_iters,min_eigB,runtime_s";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => String::new(),
    }
}

impl ConvergenceRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{},{},{},{},{:.4},{:.10e},{:.3}",
            self.level,
            self.h,
            self.dt,
            self.err_v_linf_l2,
            self.err_v_l2_h1,
            self.err_b_linf_l2,
            self.err_b_l2_h1,
            fmt_opt(self.eoc_v_linf_l2),
            fmt_opt(self.eoc_v_l2_h1),
            fmt_opt(self.eoc_b_linf_l2),
            fmt_opt(self.eoc_b_l2_h1),
            self.avg_picard_iters,
            self.min_eig_b,
            self.runtime_s,
        )
    }
}

/// Config header block shared by all CSV outputs.
pub fn config_header(cfg: &RunConfig) -> String {
    let mut s = String::new();
    for (k, v) in cfg.entries() {
        let _ = writeln!(s, "# {k}={v}");
    }
    s
}

pub fn write_convergence_csv(
    path: &Path,
    cfg: &RunConfig,
    rows: &[ConvergenceRow],
) -> io::Result<()> {
    let mut out = config_header(cfg);
    out.push_str(CONVERGENCE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn write_energy_csv(
    path: &Path,
    cfg: &RunConfig,
    rows: &[crate::diagnostics::EnergyRow],
) -> io::Result<()> {
    let mut out = config_header(cfg);
    out.push_str(crate::diagnostics::EnergyRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Legacy-ASCII VTK snapshot: mesh, pressure, velocity at the vertices and
/// the nodal tensor.
pub fn write_vtk(
    path: &Path,
    mesh: &TriMesh,
    v: &VectorFieldP2,
    p: &ScalarFieldP1,
    b: &TensorFieldP1,
) -> io::Result<()> {
    let nv = mesh.n_vertices();
    let nt = mesh.n_triangles();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("flow snapshot\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {nv} double");
    for pt in &mesh.vertices {
        let _ = writeln!(s, "{:.10e} {:.10e} 0.0", pt[0], pt[1]);
    }
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "POINT_DATA {nv}");
    s.push_str("SCALARS pressure double 1\nLOOKUP_TABLE default\n");
    for val in &p.values {
        let _ = writeln!(s, "{val:.10e}");
    }
    s.push_str("VECTORS velocity double\n");
    for val in v.values.iter().take(nv) {
        let _ = writeln!(s, "{:.10e} {:.10e} 0.0", val[0], val[1]);
    }
    s.push_str("TENSORS conformation double\n");
    for m in &b.values {
        let _ = writeln!(s, "{:.10e} {:.10e} 0.0", m.m11, m.m12);
        let _ = writeln!(s, "{:.10e} {:.10e} 0.0", m.m12, m.m22);
        s.push_str("0.0 0.0 0.0\n");
    }
    std::fs::write(path, s)
}
