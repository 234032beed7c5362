//! Differentiation engine: a reverse-mode tape whose tangent propagation is
//! recorded for second-order use, field-level forward mode for solver
//! sensitivities, and a differentiable complex DFT.

pub mod fft;
pub mod forward;
pub mod gelu;
pub mod gradcheck;
pub mod kernels;
mod tape;

pub use fft::Direction;
pub use forward::DualField;
pub use gradcheck::{gradcheck, second_order_check, GradcheckReport, Primitive};
pub use kernels::SpectralPlan;
pub use tape::{Gradients, Tape, TapeMode, Var};
