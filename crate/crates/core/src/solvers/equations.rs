//! Right-hand sides and initial conditions of the built-in equations.

use std::f64::consts::PI;

use super::rk4::System;
use super::spec::{Boundary, EquationKind, EquationSpec, InitialCondition, InitialState, ParameterVector};
use crate::autodiff::DualField;
use crate::error::{Error, Result};

/// RK4 real-axis stability limit scaled by a safety factor.
const STABLE_STEP: f64 = 0.8 * 2.78;
/// Extra room on top of the declared range upper bounds when sizing steps.
const RANGE_HEADROOM: f64 = 1.5;
const MIN_PDE_SUBSTEPS: usize = 4;

pub struct EquationSystem {
    spec: EquationSpec,
    xs: Vec<f64>,
    zone_of: Vec<usize>,
}

impl EquationSystem {
    pub fn new(spec: &EquationSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec: spec.clone(), xs: spec.xs(), zone_of: spec.zone_of_points() })
    }

    fn laplacian(&self, u: &DualField) -> DualField {
        let inv = 1.0 / (self.spec.dx() * self.spec.dx());
        let periodic = self.spec.bc == Boundary::Periodic;
        u.map_linear(|r| {
            let s = r.len();
            (0..s)
                .map(|j| {
                    let (l, rt) = neighbours(r, j, periodic);
                    (l - 2.0 * r[j] + rt) * inv
                })
                .collect()
        })
    }

    fn gradient(&self, u: &DualField) -> DualField {
        let inv = 0.5 / self.spec.dx();
        let periodic = self.spec.bc == Boundary::Periodic;
        u.map_linear(|r| {
            (0..r.len())
                .map(|j| {
                    let (l, rt) = neighbours(r, j, periodic);
                    (rt - l) * inv
                })
                .collect()
        })
    }

    /// Initial state as a dual vector carrying the tangent directions of `p`.
    pub fn initial_dual(&self, p: &DualField, ic: &InitialCondition) -> Result<DualField> {
        let dirs = p.directions();
        let amplitude = match ic {
            InitialCondition::Explicit(state) => {
                if state.len() != self.dim() {
                    return Err(Error::shape(format!(
                        "{} initial state needs {} entries, got {}",
                        self.spec.kind,
                        self.dim(),
                        state.len()
                    )));
                }
                return Ok(DualField::constant(state.clone(), dirs));
            }
            InitialCondition::Standard { amplitude } => *amplitude,
        };
        let xs = DualField::constant(self.xs.clone(), dirs);
        let par = |k: usize| p.slice(k, 1);
        Ok(match self.spec.kind {
            EquationKind::Ode1 => par(2).scale(PI).sin(),
            EquationKind::Ode2 => DualField::concat(&[&par(5), &par(6)]),
            EquationKind::Pde1 => {
                let u = DualField::constant(self.xs.iter().map(|x| amplitude * (PI * x).sin()).collect(), dirs);
                DualField::concat(&[&u, &DualField::constant(vec![0.0; self.xs.len()], dirs)])
            }
            EquationKind::Pde2 | EquationKind::Pde2Zoned => {
                DualField::constant(self.xs.iter().map(|&x| burgers_profile(x)).collect(), dirs)
            }
            EquationKind::Pde4 => &par(0) * &(&par(3) * &xs).tanh(),
        })
    }

    /// Substeps per output interval: sized from a bound on the stiffest
    /// eigenvalue, using range upper bounds with headroom so the step count
    /// does not change under small parameter perturbations.
    pub fn substeps(&self, p: &ParameterVector) -> usize {
        let spec = &self.spec;
        if spec.kind.is_ode() {
            return 1;
        }
        let eff = |k: usize| (p.ranges[k][1].abs() * RANGE_HEADROOM).max(p.values[k].abs());
        let dx = spec.dx();
        let diffusion = 4.0 / (dx * dx);
        let rate = match spec.kind {
            EquationKind::Pde1 => 2.0 * eff(0) / dx + eff(1) + eff(2) + eff(3) * eff(4),
            EquationKind::Pde2 => PI * (eff(1) * diffusion + 2.0 * 3.0 * eff(0) / dx),
            EquationKind::Pde2Zoned => {
                let z = spec.zones.unwrap_or(1);
                let alpha = (0..z).map(eff).fold(0.0, f64::max);
                PI * (eff(2 * z) * diffusion + 2.0 * 3.0 * alpha / dx)
            }
            EquationKind::Pde4 => {
                let (c, a, b) = (eff(0), eff(1), eff(2));
                eff(4) * diffusion + a + 3.0 * (b * c * c).max(a)
            }
            EquationKind::Ode1 | EquationKind::Ode2 => unreachable!(),
        };
        let n = (spec.dt() * rate / STABLE_STEP).ceil() as usize;
        n.max(MIN_PDE_SUBSTEPS)
    }
}

fn neighbours(r: &[f64], j: usize, periodic: bool) -> (f64, f64) {
    let s = r.len();
    if periodic {
        (r[(j + s - 1) % s], r[(j + 1) % s])
    } else {
        (if j == 0 { 0.0 } else { r[j - 1] }, if j + 1 == s { 0.0 } else { r[j + 1] })
    }
}

/// Burgers initial profile: a Gaussian pulse (centre 0.5, width 0.3) plus `sin(πx/2)`.
pub fn burgers_profile(x: f64) -> f64 {
    let (x0, sigma) = (0.5, 0.3);
    (-(x - x0).powi(2) / (2.0 * sigma * sigma)).exp() + (0.5 * PI * x).sin()
}

impl System for EquationSystem {
    fn dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn rhs(&self, t: f64, y: &DualField, p: &DualField) -> DualField {
        let par = |k: usize| p.slice(k, 1);
        match self.spec.kind {
            EquationKind::Ode1 => {
                let (a, b) = (par(0), par(1));
                &(&a * &a.scale(PI * t).sin()) + &(&b * &b.scale(PI * t).cos())
            }
            EquationKind::Ode2 => {
                let (x, v) = (y.slice(0, 1), y.slice(1, 1));
                let (alpha, beta, gamma, delta, omega) = (par(0), par(1), par(2), par(3), par(4));
                let drive = &gamma * &omega.scale(t).cos();
                let restoring = if self.spec.duffing_standard {
                    &(&alpha * &x) + &(&beta * &x.powi(3))
                } else {
                    &alpha.scale(t) + &beta.scale(t.powi(3))
                };
                let acc = &(&drive - &(&delta * &v)) - &restoring;
                DualField::concat(&[&v, &acc])
            }
            EquationKind::Pde1 => {
                let s = self.spec.nx();
                let (u, v) = (y.slice(0, s), y.slice(s, s));
                let (c, alpha, beta, gamma, omega) = (par(0), par(1), par(2), par(3), par(4));
                let wave = &(&c * &c) * &self.laplacian(&u);
                let forcing = &gamma * &(&omega * &u).sin();
                let acc = &(&(&wave + &(&alpha * &v)) + &(&beta * &u)) + &forcing;
                DualField::concat(&[&v, &acc])
            }
            EquationKind::Pde2 | EquationKind::Pde2Zoned => {
                let (alpha, gamma, delta, omega) = if self.spec.kind == EquationKind::Pde2 {
                    (par(0), par(1), par(2), par(3))
                } else {
                    let z = self.spec.zones.unwrap_or(1);
                    let deltas: Vec<usize> = self.zone_of.iter().map(|k| z + k).collect();
                    (p.gather(&self.zone_of), par(2 * z), p.gather(&deltas), par(2 * z + 1))
                };
                let advection = &(&alpha * y) * &self.gradient(y);
                let forcing = &delta * &omega.scale(t).sin();
                let du = &(&(&gamma * &self.laplacian(y)) - &advection) + &forcing.broadcast(y.len());
                du.scale(PI)
            }
            EquationKind::Pde4 => {
                let (alpha, beta, epsilon) = (par(1), par(2), par(4));
                &(&(&epsilon * &self.laplacian(y)) + &(&alpha * y)) - &(&beta * &y.powi(3))
            }
        }
    }
}

/// Convenience: the initial state and its parameter derivative.
pub fn initial_state(spec: &EquationSpec, p: &ParameterVector, ic: &InitialCondition) -> Result<InitialState> {
    p.check_for(spec)?;
    let system = EquationSystem::new(spec)?;
    let seeded = seeded_parameters(p);
    let y0 = system.initial_dual(&seeded, ic)?;
    Ok(InitialState { state: y0.values().to_vec(), dstate_dp: y0.tangents().to_vec() })
}

/// Parameters as a dual vector with one tangent direction per parameter.
pub(crate) fn seeded_parameters(p: &ParameterVector) -> DualField {
    let n = p.len();
    let mut tan = vec![0.0; n * n];
    for q in 0..n {
        tan[q * n + q] = 1.0;
    }
    DualField::with_tangents(p.values.clone(), tan, n)
}
