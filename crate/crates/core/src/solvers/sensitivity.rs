use std::f64::consts::PI;

use super::equations::{seeded_parameters, EquationSystem};
use super::field::{SensitivityTensor, SolutionField};
use super::rk4::{integrate_system, Trajectory};
use super::spec::{EquationKind, EquationSpec, InitialCondition, ParameterVector};
use crate::autodiff::DualField;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Integrates `spec` and records the full state (including `∂u/∂t` for
/// second-order equations). With `sensitivities`, every recorded state also
/// carries one tangent row per parameter.
pub fn trajectory(spec: &EquationSpec, p: &ParameterVector, ic: &InitialCondition, sensitivities: bool) -> Result<Trajectory> {
    p.check_for(spec)?;
    let system = EquationSystem::new(spec)?;
    let pd = if sensitivities { seeded_parameters(p) } else { DualField::constant(p.values.clone(), 0) };
    let y0 = system.initial_dual(&pd, ic)?;
    integrate_system(&system, &pd, y0, &spec.times(), system.substeps(p))
}

/// Number of observed state components (the `u` part of the state).
fn observed(spec: &EquationSpec) -> usize {
    spec.nx()
}

fn field_from(spec: &EquationSpec, traj: &Trajectory) -> Result<SolutionField> {
    let (s, nt) = (observed(spec), traj.states.len());
    let mut data = vec![0.0; s * nt];
    for (n, state) in traj.states.iter().enumerate() {
        for j in 0..s {
            data[j * nt + n] = state.values()[j];
        }
    }
    SolutionField::new(Tensor::new(spec.field_shape(), data)?, traj.times.clone(), spec.xs())
}

fn sensitivities_from(spec: &EquationSpec, p: &ParameterVector, traj: &Trajectory) -> Result<SensitivityTensor> {
    let (s, nt, np) = (observed(spec), traj.states.len(), p.len());
    let mut data = vec![0.0; np * s * nt];
    for (n, state) in traj.states.iter().enumerate() {
        for q in 0..np {
            let row = state.tangent(q);
            for j in 0..s {
                data[(q * s + j) * nt + n] = row[j];
            }
        }
    }
    let mut shape = vec![np];
    shape.extend(spec.field_shape());
    Ok(SensitivityTensor { values: Tensor::new(shape, data)?, names: p.names.clone() })
}

pub fn integrate(spec: &EquationSpec, p: &ParameterVector, ic: &InitialCondition) -> Result<SolutionField> {
    field_from(spec, &trajectory(spec, p, ic, false)?)
}

/// Solution and exact (to integrator accuracy) parameter sensitivities from
/// the variational system integrated alongside the state.
pub fn forward_sensitivities(
    spec: &EquationSpec,
    p: &ParameterVector,
    ic: &InitialCondition,
) -> Result<(SolutionField, SensitivityTensor)> {
    let traj = trajectory(spec, p, ic, true)?;
    Ok((field_from(spec, &traj)?, sensitivities_from(spec, p, &traj)?))
}

/// Fourth-order central differences of an arbitrary parameter-to-output map:
/// row `q` of the result is `(−f(q+2h') + 8f(q+h') − 8f(q−h') + f(q−2h')) / 12h'`
/// with `h' = h·max(|q|, 1)`.
pub fn fd_stencil(
    p: &ParameterVector,
    h: f64,
    mut f: impl FnMut(&ParameterVector) -> Result<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut rows = Vec::with_capacity(p.len());
    for q in 0..p.len() {
        let v = p.values[q];
        let hq = h * v.abs().max(1.0);
        let mut eval = |k: f64| f(&p.with_value(q, v + k * hq));
        let (p2, p1, m1, m2) = (eval(2.0)?, eval(1.0)?, eval(-1.0)?, eval(-2.0)?);
        rows.push(
            (0..p2.len())
                .map(|i| (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * hq))
                .collect(),
        );
    }
    Ok(rows)
}

/// Sensitivities by finite differences of repeated solves (four per parameter).
pub fn fd_sensitivities(spec: &EquationSpec, p: &ParameterVector, ic: &InitialCondition, h: f64) -> Result<SensitivityTensor> {
    let rows = fd_stencil(p, h, |pp| Ok(integrate(spec, pp, ic)?.values.into_data()))?;
    let mut shape = vec![p.len()];
    shape.extend(spec.field_shape());
    Ok(SensitivityTensor { values: Tensor::new(shape, rows.concat())?, names: p.names.clone() })
}

/// Closed-form ODE1 solution and sensitivities on the given time stamps.
pub fn ode1_analytic(p: &ParameterVector, times: &[f64]) -> Result<(SolutionField, SensitivityTensor)> {
    let spec = EquationSpec::new(EquationKind::Ode1);
    p.check_for(&spec)?;
    let (a, b, g) = (p.values[0], p.values[1], p.values[2]);
    let u: Vec<f64> = times
        .iter()
        .map(|&t| -(a * PI * t).cos() / PI + (b * PI * t).sin() / PI + (g * PI).sin() + 1.0 / PI)
        .collect();
    let mut jac = Vec::with_capacity(3 * times.len());
    jac.extend(times.iter().map(|&t| t * (a * PI * t).sin()));
    jac.extend(times.iter().map(|&t| t * (b * PI * t).cos()));
    jac.extend(times.iter().map(|_| PI * (g * PI).cos()));
    let field = SolutionField::new(Tensor::vector(u), times.to_vec(), Vec::new())?;
    let sens = SensitivityTensor { values: Tensor::new(vec![3, times.len()], jac)?, names: p.names.clone() };
    Ok((field, sens))
}

/// Advances a full state vector from `t0` to `t1` with the same RK4 substep
/// rule the solver uses for one output interval.
pub fn advance(spec: &EquationSpec, p: &ParameterVector, state: &[f64], t0: f64, t1: f64) -> Result<Vec<f64>> {
    p.check_for(spec)?;
    let system = EquationSystem::new(spec)?;
    let pd = DualField::constant(p.values.clone(), 0);
    let traj = integrate_system(&system, &pd, DualField::constant(state.to_vec(), 0), &[t0, t1], system.substeps(p))?;
    Ok(traj.states[1].values().to_vec())
}
