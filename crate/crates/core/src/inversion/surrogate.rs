use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::operator::{lift_raw, OperatorModel};
use crate::solvers::{forward_sensitivities, integrate, ode1_analytic, EquationKind, EquationSpec, InitialCondition, ParameterVector};
use crate::tensor::Tensor;

/// An observed path: what the operator sees (input steps) and what the
/// inversion must reproduce (the target window).
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub input_steps: Tensor,
    pub target: Tensor,
    /// Initial-condition amplitude, used only by solver-backed surrogates.
    pub amplitude: f64,
}

impl Observation {
    pub fn from_sample(sample: &Sample) -> Self {
        Self { input_steps: sample.input_steps.clone(), target: sample.target.clone(), amplitude: sample.amplitude }
    }
}

/// Prediction over the target window together with `∂u/∂p`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateOutput {
    /// Flattened target window, length `X = S_x·K`.
    pub u: Vec<f64>,
    /// Row-major `(|wanted|, X)`: `∂u/∂p_q` for each requested index `q`.
    pub jacobian: Vec<f64>,
}

fn select_rows(full: &[f64], x: usize, wanted: &[usize]) -> Vec<f64> {
    wanted.iter().flat_map(|&q| full[q * x..(q + 1) * x].iter().copied()).collect()
}

/// A differentiable parameter-to-solution map that inversion can descend through.
pub trait Surrogate: Sync {
    fn spec(&self) -> &EquationSpec;

    /// Prediction for `params`, with derivatives for the parameter indices in `wanted`.
    fn evaluate(&self, obs: &Observation, params: &ParameterVector, wanted: &[usize]) -> Result<SurrogateOutput>;
}

/// Closed-form ODE1 solution.
#[derive(Clone, Debug)]
pub struct Ode1Oracle {
    spec: EquationSpec,
}

impl Ode1Oracle {
    pub fn new(spec: &EquationSpec) -> Result<Self> {
        if spec.kind != EquationKind::Ode1 {
            return Err(Error::invalid(format!("the analytic oracle exists only for ODE1, not {}", spec.kind)));
        }
        spec.validate()?;
        Ok(Self { spec: spec.clone() })
    }
}

impl Surrogate for Ode1Oracle {
    fn spec(&self) -> &EquationSpec {
        &self.spec
    }

    fn evaluate(&self, _obs: &Observation, params: &ParameterVector, wanted: &[usize]) -> Result<SurrogateOutput> {
        let times = &self.spec.times()[self.spec.input_steps..];
        let (field, sens) = ode1_analytic(params, times)?;
        Ok(SurrogateOutput { u: field.values.into_data(), jacobian: select_rows(sens.values.data(), times.len(), wanted) })
    }
}

/// The numerical solver with forward sensitivities, restarted from the
/// equation's own initial condition for every parameter guess.
#[derive(Clone, Debug)]
pub struct SolverSurrogate {
    spec: EquationSpec,
}

impl SolverSurrogate {
    pub fn new(spec: &EquationSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec: spec.clone() })
    }
}

impl Surrogate for SolverSurrogate {
    fn spec(&self) -> &EquationSpec {
        &self.spec
    }

    fn evaluate(&self, obs: &Observation, params: &ParameterVector, wanted: &[usize]) -> Result<SurrogateOutput> {
        let ic = InitialCondition::Standard { amplitude: obs.amplitude };
        let m = self.spec.input_steps;
        let (field, jacobian) = if wanted.is_empty() {
            (integrate(&self.spec, params, &ic)?, Vec::new())
        } else {
            let (field, sens) = forward_sensitivities(&self.spec, params, &ic)?;
            let window = sens.time_window(m);
            let x = window.len() / params.len();
            (field, select_rows(window.data(), x, wanted))
        };
        if !field.is_finite() {
            return Err(Error::Degenerate("solver produced a non-finite path".into()));
        }
        Ok(SurrogateOutput { u: field.time_window(m).into_data(), jacobian })
    }
}

/// A trained operator, frozen.
pub struct OperatorSurrogate<'a> {
    model: &'a OperatorModel,
    spec: EquationSpec,
}

impl<'a> OperatorSurrogate<'a> {
    pub fn new(model: &'a OperatorModel, spec: &EquationSpec) -> Result<Self> {
        model.config.matches(spec)?;
        Ok(Self { model, spec: spec.clone() })
    }
}

impl Surrogate for OperatorSurrogate<'_> {
    fn spec(&self) -> &EquationSpec {
        &self.spec
    }

    fn evaluate(&self, obs: &Observation, params: &ParameterVector, wanted: &[usize]) -> Result<SurrogateOutput> {
        params.check_for(&self.spec)?;
        let lifted = lift_raw(&self.spec, &obs.input_steps, &params.values)?;
        let c_in = lifted.shape()[0];
        let batch = lifted.reshape(&[1, c_in, lifted.len() / c_in])?;
        if wanted.is_empty() {
            return Ok(SurrogateOutput { u: self.model.predict(&batch)?.into_data(), jacobian: Vec::new() });
        }
        let (u, jac) = self.model.predict_with_partial_jacobian(&self.spec, &batch, wanted)?;
        Ok(SurrogateOutput { u: u.into_data(), jacobian: jac.into_data() })
    }
}
