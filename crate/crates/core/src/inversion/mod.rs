//! Parameter recovery by gradient descent through a frozen surrogate.

mod invert;
mod study;
mod surrogate;

pub use invert::{invert, inversion_bounds, Inversion, InversionConfig, RestartOutcome};
pub use study::{inversion_study, study_free_parameters, ParameterSummary, StudyMode, StudyRow, StudySummary, StudyTable};
pub use surrogate::{Observation, Ode1Oracle, OperatorSurrogate, SolverSurrogate, Surrogate, SurrogateOutput};
