//! Pointwise equation residuals from grid stencils.
//!
//! Time derivatives use fourth-order central differences, so the two first
//! and two last time points are excluded; spatial derivatives use
//! second-order central differences with periodic wrap or zero ghost values.

use std::f64::consts::PI;

use super::field::SolutionField;
use super::spec::{Boundary, EquationKind, EquationSpec, ParameterVector};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Time axis of a residual grid: first time stamp and spacing.
#[derive(Clone, Copy, Debug)]
pub struct TimeAxis {
    pub t0: f64,
    pub dt: f64,
}

fn combine<'t>(terms: &[(f64, Var<'t>)]) -> Var<'t> {
    let mut acc = terms[0].1.scale(terms[0].0);
    for &(c, v) in &terms[1..] {
        acc = acc + v.scale(c);
    }
    acc
}

/// Residual of `spec`'s equation for a field `u` of shape `(S, T)` (`S = 1`
/// for ODEs), returned on the interior time points as `(S, T − 4)`.
pub fn residual_var<'t>(spec: &EquationSpec, u: Var<'t>, p: &ParameterVector, axis: TimeAxis) -> Result<Var<'t>> {
    p.check_for(spec)?;
    let shape = u.shape();
    if shape.len() != 2 || shape[0] != spec.nx() {
        return Err(Error::shape(format!("residual expects a ({}, T) field, got {:?}", spec.nx(), shape)));
    }
    let (s, nt) = (shape[0], shape[1]);
    if nt < 5 {
        return Err(Error::invalid(format!("residual stencil needs at least 5 time points, got {nt}")));
    }
    let tape = u.tape();
    let m = nt - 4;
    let sh: Vec<Var<'t>> = (0..5).map(|k| u.slice(1, k, m)).collect();
    let dt = axis.dt;
    let ut = combine(&[(1.0, sh[0]), (-8.0, sh[1]), (8.0, sh[3]), (-1.0, sh[4])]).scale(1.0 / (12.0 * dt));
    let utt = combine(&[(-1.0, sh[0]), (16.0, sh[1]), (-30.0, sh[2]), (16.0, sh[3]), (-1.0, sh[4])])
        .scale(1.0 / (12.0 * dt * dt));
    let c = sh[2];
    let times: Vec<f64> = (0..m).map(|n| axis.t0 + (n + 2) as f64 * dt).collect();
    let over_grid = |f: &dyn Fn(usize, f64) -> f64| {
        tape.constant(Tensor::from_fn(&[s, m], |i| f(i / m, times[i % m])))
    };

    let shifted = |offset: isize| -> Var<'t> {
        match spec.bc {
            Boundary::Periodic => {
                if offset > 0 {
                    Var::concat(&[c.slice(0, 1, s - 1), c.slice(0, 0, 1)], 0)
                } else {
                    Var::concat(&[c.slice(0, s - 1, 1), c.slice(0, 0, s - 1)], 0)
                }
            }
            _ => {
                let ghost = tape.constant(Tensor::zeros(&[1, m]));
                if offset > 0 {
                    Var::concat(&[c.slice(0, 1, s - 1), ghost], 0)
                } else {
                    Var::concat(&[ghost, c.slice(0, 0, s - 1)], 0)
                }
            }
        }
    };
    let lap = || {
        let inv = 1.0 / (spec.dx() * spec.dx());
        combine(&[(inv, shifted(-1)), (-2.0 * inv, c), (inv, shifted(1))])
    };
    let ux = || (shifted(1) - shifted(-1)).scale(0.5 / spec.dx());

    let v = &p.values;
    Ok(match spec.kind {
        EquationKind::Ode1 => {
            let (a, b) = (v[0], v[1]);
            ut - over_grid(&|_, t| a * (a * PI * t).sin() + b * (b * PI * t).cos())
        }
        EquationKind::Ode2 => {
            let (alpha, beta, gamma, delta, omega) = (v[0], v[1], v[2], v[3], v[4]);
            let restoring = if spec.duffing_standard {
                c.scale(alpha) + (c * c * c).scale(beta)
            } else {
                over_grid(&|_, t| alpha * t + beta * t.powi(3))
            };
            utt + ut.scale(delta) + restoring - over_grid(&|_, t| gamma * (omega * t).cos())
        }
        EquationKind::Pde1 => {
            let (cc, alpha, beta, gamma, omega) = (v[0], v[1], v[2], v[3], v[4]);
            utt - lap().scale(cc * cc) - ut.scale(alpha) - c.scale(beta) - c.scale(omega).sin().scale(gamma)
        }
        EquationKind::Pde2 | EquationKind::Pde2Zoned => {
            let (alpha, gamma, delta, omega): (Vec<f64>, f64, Vec<f64>, f64) = if spec.kind == EquationKind::Pde2 {
                (vec![v[0]; s], v[1], vec![v[2]; s], v[3])
            } else {
                let z = spec.zones.unwrap_or(1);
                let zone = spec.zone_of_points();
                (zone.iter().map(|&k| v[k]).collect(), v[2 * z], zone.iter().map(|&k| v[z + k]).collect(), v[2 * z + 1])
            };
            let alpha_field = over_grid(&|j, _| alpha[j]);
            ut.scale(1.0 / PI) + alpha_field * c * ux() - lap().scale(gamma)
                - over_grid(&|j, t| delta[j] * (omega * t).sin())
        }
        EquationKind::Pde4 => {
            let (alpha, beta, epsilon) = (v[1], v[2], v[4]);
            ut - lap().scale(epsilon) - c.scale(alpha) + (c * c * c).scale(beta)
        }
    })
}

/// Residual of a solution field on its own grid, shape `(S, N − 4)` (or
/// `(N − 4)` for ODEs).
pub fn equation_residual(spec: &EquationSpec, field: &SolutionField, p: &ParameterVector) -> Result<Tensor> {
    if field.times.len() < 5 {
        return Err(Error::invalid(format!("residual stencil needs at least 5 time points, got {}", field.times.len())));
    }
    let expected_nx = spec.spatial_points.map_or(0, |s| s);
    if field.xs.len() != expected_nx {
        return Err(Error::shape(format!("field has {} spatial points, {} expects {}", field.xs.len(), spec.kind, expected_nx)));
    }
    let axis = TimeAxis { t0: field.times[0], dt: field.times[1] - field.times[0] };
    let tape = Tape::new();
    let nt = field.nt();
    let u = tape.constant(field.values.reshape(&[field.nx(), nt])?);
    let r = residual_var(spec, u, p, axis)?.value();
    let shape = if spec.kind.is_ode() { vec![nt - 4] } else { vec![field.nx(), nt - 4] };
    r.reshape(&shape)
}
