//! Classic fixed-step RK4 over dual-number states.
//!
//! States are [`DualField`]s: with zero tangent directions this is plain
//! integration, with `P` directions the same stepping integrates the forward
//! sensitivity system alongside the solution.

use crate::autodiff::DualField;
use crate::error::{Error, Result};

/// Right-hand side `dy/dt = f(t, y; p)`.
pub trait System: Sync {
    fn dim(&self) -> usize;

    /// `p` holds the parameters as a dual vector: its tangents select which
    /// parameters are being differentiated.
    fn rhs(&self, t: f64, y: &DualField, p: &DualField) -> DualField;
}

/// States recorded at every output time.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DualField>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn directions(&self) -> usize {
        self.states[0].directions()
    }

    /// Component `k` of the state over time.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.values()[k]).collect()
    }

    /// Sensitivity of component `k` to direction `q` over time.
    pub fn sensitivity(&self, q: usize, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.tangent(q)[k]).collect()
    }
}

/// Integrates from `y0` at `times[0]`, recording the state at every entry of
/// `times`; each output interval is split into `substeps` equal RK4 steps.
pub fn integrate_system(
    system: &dyn System,
    p: &DualField,
    y0: DualField,
    times: &[f64],
    substeps: usize,
) -> Result<Trajectory> {
    if y0.len() != system.dim() {
        return Err(Error::shape(format!("initial state has {} entries, system needs {}", y0.len(), system.dim())));
    }
    if substeps == 0 {
        return Err(Error::invalid("substep count must be positive"));
    }
    if !y0.is_finite() {
        return Err(Error::BlowUp { step: 0, time: times[0] });
    }
    let mut states = Vec::with_capacity(times.len());
    states.push(y0.clone());
    let mut y = y0;
    let mut step = 0;
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            let t = w[0] + s as f64 * h;
            y = rk4_step(system, p, &y, t, h);
            step += 1;
            if !y.is_finite() {
                return Err(Error::BlowUp { step, time: t + h });
            }
        }
        states.push(y.clone());
    }
    Ok(Trajectory { times: times.to_vec(), states })
}

fn rk4_step(system: &dyn System, p: &DualField, y: &DualField, t: f64, h: f64) -> DualField {
    let k1 = system.rhs(t, y, p);
    let y2 = DualField::linear_combination(&[(1.0, y), (0.5 * h, &k1)]);
    let k2 = system.rhs(t + 0.5 * h, &y2, p);
    let y3 = DualField::linear_combination(&[(1.0, y), (0.5 * h, &k2)]);
    let k3 = system.rhs(t + 0.5 * h, &y3, p);
    let y4 = DualField::linear_combination(&[(1.0, y), (h, &k3)]);
    let k4 = system.rhs(t + h, &y4, p);
    DualField::linear_combination(&[(1.0, y), (h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)])
}
