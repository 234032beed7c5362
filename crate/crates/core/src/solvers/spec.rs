use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EquationKind {
    #[serde(rename = "ODE1")]
    Ode1,
    #[serde(rename = "ODE2")]
    Ode2,
    #[serde(rename = "PDE1")]
    Pde1,
    #[serde(rename = "PDE2")]
    Pde2,
    #[serde(rename = "PDE2_zoned")]
    Pde2Zoned,
    #[serde(rename = "PDE4")]
    Pde4,
}

impl EquationKind {
    pub const ALL: [EquationKind; 6] =
        [EquationKind::Ode1, EquationKind::Ode2, EquationKind::Pde1, EquationKind::Pde2, EquationKind::Pde2Zoned, EquationKind::Pde4];

    pub fn name(self) -> &'static str {
        match self {
            EquationKind::Ode1 => "ODE1",
            EquationKind::Ode2 => "ODE2",
            EquationKind::Pde1 => "PDE1",
            EquationKind::Pde2 => "PDE2",
            EquationKind::Pde2Zoned => "PDE2_zoned",
            EquationKind::Pde4 => "PDE4",
        }
    }

    pub fn is_ode(self) -> bool {
        matches!(self, EquationKind::Ode1 | EquationKind::Ode2)
    }

    /// Whether the state carries `(u, ∂u/∂t)`.
    pub fn is_second_order(self) -> bool {
        matches!(self, EquationKind::Ode2 | EquationKind::Pde1)
    }
}

impl fmt::Display for EquationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EquationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        EquationKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_uppercase() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown equation `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    None,
    Periodic,
    DirichletZero,
}

/// Discretization and configuration of one equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquationSpec {
    pub kind: EquationKind,
    /// Number of spatial grid points; `None` for ODEs.
    pub spatial_points: Option<usize>,
    /// Number of time points, endpoints included.
    pub time_points: usize,
    pub t_span: [f64; 2],
    pub bc: Boundary,
    /// Zone count for the zoned Burgers variant.
    pub zones: Option<usize>,
    /// Number of leading time points given to the operator as input.
    pub input_steps: usize,
    /// Replaces `αt + βt³` by `αx + βx³` in ODE2.
    #[serde(default)]
    pub duffing_standard: bool,
}

impl EquationSpec {
    pub fn new(kind: EquationKind) -> Self {
        let (spatial_points, time_points, t_span, bc, zones, input_steps) = match kind {
            EquationKind::Ode1 | EquationKind::Ode2 => (None, 100, [0.0, 1.0], Boundary::None, None, 10),
            EquationKind::Pde1 => (Some(20), 30, [0.0, 1.0], Boundary::DirichletZero, None, 5),
            EquationKind::Pde2 => (Some(40), 30, [0.0, PI], Boundary::Periodic, None, 5),
            EquationKind::Pde2Zoned => (Some(40), 30, [0.0, PI], Boundary::Periodic, Some(8), 5),
            EquationKind::Pde4 => (Some(40), 30, [0.0, 1.0], Boundary::Periodic, None, 5),
        };
        Self { kind, spatial_points, time_points, t_span, bc, zones, input_steps, duffing_standard: false }
    }

    pub fn with_time_points(mut self, n: usize) -> Self {
        self.time_points = n;
        self
    }

    pub fn with_zones(mut self, zones: usize) -> Self {
        self.zones = Some(zones);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("{} spec: {m}", self.kind)));
        if self.input_steps == 0 || self.input_steps >= self.time_points {
            return fail(format!("need 0 < M < N, got M = {}, N = {}", self.input_steps, self.time_points));
        }
        if self.time_points < 5 {
            return fail(format!("at least 5 time points required, got {}", self.time_points));
        }
        if !(self.t_span[1] > self.t_span[0]) {
            return fail(format!("empty time span {:?}", self.t_span));
        }
        match (self.kind.is_ode(), self.spatial_points) {
            (true, Some(_)) => return fail("ODEs have no spatial grid".into()),
            (false, None) => return fail("spatial point count missing".into()),
            (false, Some(s)) if s < 3 => return fail(format!("at least 3 spatial points required, got {s}")),
            _ => {}
        }
        let expected_bc = match self.kind {
            EquationKind::Ode1 | EquationKind::Ode2 => Boundary::None,
            EquationKind::Pde1 => Boundary::DirichletZero,
            _ => Boundary::Periodic,
        };
        if self.bc != expected_bc {
            return fail(format!("boundary {:?} unsupported, expected {:?}", self.bc, expected_bc));
        }
        match (self.kind, self.zones) {
            (EquationKind::Pde2Zoned, Some(z)) if z == 0 || z > self.spatial_points.unwrap_or(0) => {
                fail(format!("zone count {z} must be in 1..=S_x"))
            }
            (EquationKind::Pde2Zoned, None) => fail("zone count missing".into()),
            (k, Some(_)) if k != EquationKind::Pde2Zoned => fail("zones only apply to PDE2_zoned".into()),
            _ => Ok(()),
        }
    }

    /// Spatial extent of the grid (1 for ODEs).
    pub fn nx(&self) -> usize {
        self.spatial_points.unwrap_or(1)
    }

    pub fn target_steps(&self) -> usize {
        self.time_points - self.input_steps
    }

    pub fn dt(&self) -> f64 {
        (self.t_span[1] - self.t_span[0]) / (self.time_points - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.time_points).map(|n| self.t_span[0] + n as f64 * dt).collect()
    }

    /// Grid spacing on `[0, 1]`: periodic grids hold `x_j = j/S`, Dirichlet
    /// grids hold the interior points `x_j = (j+1)/(S+1)`.
    pub fn dx(&self) -> f64 {
        match self.bc {
            Boundary::None => 1.0,
            Boundary::Periodic => 1.0 / self.nx() as f64,
            Boundary::DirichletZero => 1.0 / (self.nx() + 1) as f64,
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        let dx = self.dx();
        match self.bc {
            Boundary::None => Vec::new(),
            Boundary::Periodic => (0..self.nx()).map(|j| j as f64 * dx).collect(),
            Boundary::DirichletZero => (0..self.nx()).map(|j| (j + 1) as f64 * dx).collect(),
        }
    }

    /// Zone index of every spatial point (zoned Burgers only).
    pub fn zone_of_points(&self) -> Vec<usize> {
        let (s, z) = (self.nx(), self.zones.unwrap_or(1));
        (0..s).map(|j| j * z / s).collect()
    }

    /// Observed-grid shape: `(N)` for ODEs, `(S_x, N)` for PDEs.
    pub fn field_shape(&self) -> Vec<usize> {
        match self.spatial_points {
            None => vec![self.time_points],
            Some(s) => vec![s, self.time_points],
        }
    }

    pub fn target_shape(&self) -> Vec<usize> {
        match self.spatial_points {
            None => vec![self.target_steps()],
            Some(s) => vec![s, self.target_steps()],
        }
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let fixed = |names: &[&str]| names.iter().map(|s| s.to_string()).collect();
        match self.kind {
            EquationKind::Ode1 => fixed(&["alpha", "beta", "gamma"]),
            EquationKind::Ode2 => fixed(&["alpha", "beta", "gamma", "delta", "omega", "epsilon", "zeta"]),
            EquationKind::Pde1 => fixed(&["c", "alpha", "beta", "gamma", "omega"]),
            EquationKind::Pde2 => fixed(&["alpha", "gamma", "delta", "omega"]),
            EquationKind::Pde4 => fixed(&["c", "alpha", "beta", "omega", "epsilon"]),
            EquationKind::Pde2Zoned => {
                let z = self.zones.unwrap_or(0);
                let mut names: Vec<String> = (0..z).map(|k| format!("alpha_{k}")).collect();
                names.extend((0..z).map(|k| format!("delta_{k}")));
                names.push("gamma".into());
                names.push("omega".into());
                names
            }
        }
    }

    pub fn parameter_ranges(&self) -> Vec<[f64; 2]> {
        match self.kind {
            EquationKind::Ode1 => vec![[1.0, 3.0], [1.0, 3.0], [0.0, 1.0]],
            EquationKind::Ode2 => {
                vec![[0.02, 0.06], [0.01, 0.03], [20.0, 60.0], [0.5, 1.5], [0.2, 0.6], [0.0, 0.2], [0.0, 0.2]]
            }
            EquationKind::Pde1 => vec![[0.0, 0.25], [0.0, 0.1], [0.0, 0.25], [0.0, 0.25], [0.0, 0.25]],
            EquationKind::Pde2 => vec![[0.1, 1.0], [0.025, 0.25], [0.1, 0.5], [0.01, 0.1]],
            EquationKind::Pde4 => vec![[0.1, 0.9], [0.01, 1.0], [0.01, 1.0], [5.0, 10.0], [0.01, 1.0]],
            EquationKind::Pde2Zoned => {
                let z = self.zones.unwrap_or(0);
                let mut r = vec![[0.1, 1.0]; z];
                r.extend(vec![[0.1, 0.5]; z]);
                r.push([0.025, 0.25]);
                r.push([0.01, 0.1]);
                r
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.parameter_names().len()
    }

    /// Length of the integrated state vector.
    pub fn state_dim(&self) -> usize {
        if self.kind.is_second_order() {
            2 * self.nx()
        } else {
            self.nx()
        }
    }

    /// Parameter vector with the given values and this spec's names/ranges.
    pub fn parameters(&self, values: Vec<f64>) -> Result<ParameterVector> {
        let names = self.parameter_names();
        if values.len() != names.len() {
            return Err(Error::invalid(format!("{} expects {} parameters, got {}", self.kind, names.len(), values.len())));
        }
        Ok(ParameterVector { names, values, ranges: self.parameter_ranges() })
    }
}

/// Named physical parameters with their declared sampling ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub ranges: Vec<[f64; 2]>,
}

impl ParameterVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.values[i])
    }

    pub fn with_value(&self, index: usize, value: f64) -> Self {
        let mut p = self.clone();
        p.values[index] = value;
        p
    }

    pub fn in_range(&self) -> bool {
        self.values.iter().zip(&self.ranges).all(|(v, [a, b])| (a..=b).contains(&v))
    }

    pub(crate) fn check_for(&self, spec: &EquationSpec) -> Result<()> {
        if self.names != spec.parameter_names() {
            return Err(Error::invalid(format!(
                "parameters {:?} do not match {} (expected {:?})",
                self.names,
                spec.kind,
                spec.parameter_names()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter `{}` is not finite", self.names[i])));
        }
        Ok(())
    }
}

/// How the initial state is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// The equation's own (possibly parameter-dependent) initial condition.
    /// `amplitude` scales the PDE1 profile `A·sin(πx)` and is ignored elsewhere.
    Standard { amplitude: f64 },
    /// A fixed state vector of length `state_dim`, independent of the parameters.
    Explicit(Vec<f64>),
}

impl InitialCondition {
    pub fn standard() -> Self {
        InitialCondition::Standard { amplitude: 1.0 }
    }
}

/// Initial state together with its derivative with respect to every parameter
/// (`P × state_dim`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub state: Vec<f64>,
    pub dstate_dp: Vec<f64>,
}
