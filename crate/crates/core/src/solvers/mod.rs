//! Ground-truth solvers: RK4 method-of-lines integration of the benchmark
//! equations, forward and finite-difference parameter sensitivities, the
//! ODE1 closed form, and stencil residuals.

mod equations;
mod field;
mod residual;
mod rk4;
mod sensitivity;
mod spec;

pub use equations::{burgers_profile, initial_state, EquationSystem};
pub use field::{SensitivityTensor, SolutionField};
pub use residual::{equation_residual, residual_var, TimeAxis};
pub use rk4::{integrate_system, System, Trajectory};
pub use sensitivity::{advance, fd_sensitivities, fd_stencil, forward_sensitivities, integrate, ode1_analytic, trajectory};
pub use spec::{Boundary, EquationKind, EquationSpec, InitialCondition, InitialState, ParameterVector};

/// Default relative step for finite-difference sensitivities.
pub const DEFAULT_FD_STEP: f64 = 1e-3;
