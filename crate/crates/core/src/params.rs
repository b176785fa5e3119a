//! Model and discretization parameters.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("parameter `{name}` = {value} out of range: {constraint}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },
}

/// Physical and discretization parameters of the viscoelastic model.
#[derive(Debug, Clone, Copy)]
pub struct ModelParams {
    /// Shear viscosity, > 0.
    pub eta: f64,
    /// Elastic shear modulus, > 0.
    pub mu: f64,
    /// Oldroyd-B / Giesekus interpolation weight, in (0,1).
    pub beta: f64,
    /// Stress-diffusion coefficient, > 0.
    pub lambda: f64,
    /// Relaxation parameter of the linear term, >= 0.
    pub delta1: f64,
    /// Relaxation parameter of the quadratic term, >= 0.
    pub delta2: f64,
    /// Time step, > 0.
    pub dt: f64,
    /// Final time, > 0.
    pub t_final: f64,
}

impl Default for ModelParams {
    /// Reference configuration: unit coefficients, beta = 1/2, delta2 = 0,
    /// final time 0.1 on the unit square.
    fn default() -> Self {
        Self {
            eta: 1.0,
            mu: 1.0,
            beta: 0.5,
            lambda: 1.0,
            delta1: 1.0,
            delta2: 0.0,
            // time level l = 4: dt = (T/5) * 2^-4
            dt: 0.1 / 5.0 / 16.0,
            t_final: 0.1,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let checks: [(&'static str, f64, bool, &'static str); 7] = [
            ("eta", self.eta, self.eta > 0.0, "must be > 0"),
            ("mu", self.mu, self.mu > 0.0, "must be > 0"),
            (
                "beta",
                self.beta,
                self.beta > 0.0 && self.beta < 1.0,
                "must be in (0,1)",
            ),
            ("lambda", self.lambda, self.lambda > 0.0, "must be > 0"),
            ("delta1", self.delta1, self.delta1 >= 0.0, "must be >= 0"),
            ("delta2", self.delta2, self.delta2 >= 0.0, "must be >= 0"),
            ("dt", self.dt, self.dt > 0.0 && self.t_final > 0.0, "dt and t_final must be > 0"),
        ];
        for (name, value, ok, constraint) in checks {
            if !ok {
                return Err(ParamError::OutOfRange {
                    name,
                    value,
                    constraint,
                });
            }
        }
        Ok(())
    }
}
