pub mod config;
pub mod diagnostics;
pub mod fields;
pub mod io;
pub mod forms;
pub mod mms;
pub mod stepper;
pub mod linsolve;
pub mod matfunc;
pub mod mesh;
pub mod params;
pub mod quadrature;
pub mod runner;
pub mod scalar;

pub use fields::SymMat2;

/// 2x2 dense matrix over f64.
pub type Mat2 = matfunc::Mat2<f64>;
