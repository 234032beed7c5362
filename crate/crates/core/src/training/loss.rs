use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::solvers::{advance, residual_var, Boundary, EquationSpec, ParameterVector, TimeAxis};
use crate::tensor::Tensor;

/// Which loss terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "FNO")]
    Fno,
    #[serde(rename = "SC-FNO")]
    ScFno,
    #[serde(rename = "FNO-PINN")]
    FnoPinn,
    #[serde(rename = "SC-FNO-PINN")]
    ScFnoPinn,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Fno, Regime::ScFno, Regime::FnoPinn, Regime::ScFnoPinn];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Fno => "FNO",
            Regime::ScFno => "SC-FNO",
            Regime::FnoPinn => "FNO-PINN",
            Regime::ScFnoPinn => "SC-FNO-PINN",
        }
    }

    pub fn uses_sensitivity(self) -> bool {
        matches!(self, Regime::ScFno | Regime::ScFnoPinn)
    }

    pub fn uses_equation(self) -> bool {
        matches!(self, Regime::FnoPinn | Regime::ScFnoPinn)
    }

    /// Active terms in the order they enter [`combine`]: `L_u`, then `L_Eq`, then `L_s`.
    pub fn terms(self) -> Vec<LossTerm> {
        let mut t = vec![LossTerm::Solution];
        if self.uses_equation() {
            t.push(LossTerm::Equation);
        }
        if self.uses_sensitivity() {
            t.push(LossTerm::Sensitivity);
        }
        t
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('_', "-");
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == key)
            .ok_or_else(|| Error::invalid(format!("unknown regime `{s}` (expected FNO, SC-FNO, FNO-PINN or SC-FNO-PINN)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    Solution,
    Equation,
    Sensitivity,
}

impl LossTerm {
    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Solution => "loss_u",
            LossTerm::Equation => "loss_eq",
            LossTerm::Sensitivity => "loss_s",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub regime: Regime,
    /// Whether the `s_i` weights are trained; frozen at 1 otherwise.
    pub learnable_coeffs: bool,
    /// Weight of the initial- and boundary-condition penalties inside `L_Eq`.
    pub pinn_alpha: f64,
    /// Fraction of spatial and temporal points supervised by `L_s` each epoch.
    pub supervision_fraction: [f64; 2],
    /// Divide every Jacobian slab by its training-set standard deviation in `L_s`.
    pub standardize_jacobian: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Fno,
            learnable_coeffs: true,
            pinn_alpha: 1.0,
            supervision_fraction: [0.25, 0.25],
            standardize_jacobian: false,
        }
    }
}

impl LossConfig {
    pub fn new(regime: Regime) -> Self {
        Self { regime, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.supervision_fraction.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::invalid(format!("supervision fractions {:?} must lie in (0, 1]", self.supervision_fraction)));
        }
        if !(self.pinn_alpha >= 0.0 && self.pinn_alpha.is_finite()) {
            return Err(Error::invalid(format!("pinn_alpha must be a finite non-negative number, got {}", self.pinn_alpha)));
        }
        Ok(())
    }
}

/// Mean over the batch of per-sample relative L² errors; `pred` and `truth` are `(B, X)`.
pub fn loss_u<'t>(pred: Var<'t>, truth: &Tensor) -> Result<Var<'t>> {
    if pred.shape() != truth.shape() || truth.ndim() != 2 {
        return Err(Error::shape(format!("loss_u: prediction {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    let (b, x) = (truth.shape()[0], truth.shape()[1]);
    let norms: Vec<f64> = truth.data().chunks(x).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Degenerate(format!("sample {i} of the batch has an all-zero target")));
    }
    let tape = pred.tape();
    let diff = pred - tape.constant(truth.clone());
    let per_sample = diff.square().sum_trailing().sqrt();
    let inv = tape.constant(Tensor::vector(norms.iter().map(|n| 1.0 / n).collect()));
    Ok((per_sample * inv).sum().scale(1.0 / b as f64))
}

/// Space–time points supervised by the sensitivity loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionPoints {
    pub xs: Vec<usize>,
    pub ts: Vec<usize>,
    target_steps: usize,
}

impl SupervisionPoints {
    /// Explicit spatial and temporal indices, checked against `spec`'s target grid.
    pub fn new(spec: &EquationSpec, xs: Vec<usize>, ts: Vec<usize>) -> Result<Self> {
        if xs.iter().any(|&j| j >= spec.nx()) || ts.iter().any(|&n| n >= spec.target_steps()) {
            return Err(Error::invalid(format!(
                "supervision points must lie within the {}×{} target grid",
                spec.nx(),
                spec.target_steps()
            )));
        }
        Ok(Self { xs, ts, target_steps: spec.target_steps() })
    }

    pub fn all(spec: &EquationSpec) -> Self {
        Self { xs: (0..spec.nx()).collect(), ts: (0..spec.target_steps()).collect(), target_steps: spec.target_steps() }
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat indices into a `S_x·K` target grid.
    pub fn flat(&self) -> Vec<usize> {
        self.xs.iter().flat_map(|&j| self.ts.iter().map(move |&n| j * self.target_steps + n)).collect()
    }
}

/// `⌈f_x·S_x⌉ × ⌈f_t·K⌉` points drawn uniformly without replacement.
pub fn sample_supervision_points(spec: &EquationSpec, fractions: [f64; 2], epoch_seed: u64) -> Result<SupervisionPoints> {
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::invalid(format!("supervision fractions {fractions:?} must lie in (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut pick = |n: usize, f: f64| {
        let k = ((f * n as f64).ceil() as usize).clamp(1, n);
        let mut idx = sample(&mut rng, n, k).into_vec();
        idx.sort_unstable();
        idx
    };
    let xs = pick(spec.nx(), fractions[0]);
    let ts = pick(spec.target_steps(), fractions[1]);
    Ok(SupervisionPoints { xs, ts, target_steps: spec.target_steps() })
}

/// Mean squared Jacobian error over the sampled points, all parameters and
/// the batch. `pred` holds one `(B, X)` slab per parameter; `truth` is `(B, P, X)`.
pub fn loss_s<'t>(pred: &[Var<'t>], truth: &Tensor, points: &SupervisionPoints) -> Result<Var<'t>> {
    loss_s_scaled(pred, truth, points, None)
}

pub(crate) fn loss_s_scaled<'t>(
    pred: &[Var<'t>],
    truth: &Tensor,
    points: &SupervisionPoints,
    slab_scale: Option<&[f64]>,
) -> Result<Var<'t>> {
    if points.is_empty() {
        return Err(Error::invalid("sensitivity loss needs at least one supervision point"));
    }
    let ts = truth.shape();
    if pred.is_empty() || ts.len() != 3 || ts[1] != pred.len() {
        return Err(Error::shape(format!("loss_s: {} predicted slabs vs truth {:?}", pred.len(), ts)));
    }
    let (b, p, x) = (ts[0], ts[1], ts[2]);
    if pred.iter().any(|v| v.shape() != [b, x]) {
        return Err(Error::shape(format!("loss_s: predicted slabs must be ({b}, {x})")));
    }
    let flat = points.flat();
    if flat.iter().any(|&i| i >= x) {
        return Err(Error::invalid("supervision point outside the target grid"));
    }
    let tape = pred[0].tape();
    let idx: Vec<usize> = (0..b).flat_map(|r| flat.iter().map(move |&i| r * x + i)).collect();
    let mut total: Option<Var<'t>> = None;
    for (q, slab) in pred.iter().enumerate() {
        let scale = slab_scale.map_or(1.0, |s| s[q]);
        let picked = slab.gather(idx.clone(), &[idx.len()]).scale(scale);
        let want = Tensor::from_fn(&[idx.len()], |k| {
            let (r, i) = (k / flat.len(), flat[k % flat.len()]);
            truth.data()[(r * p + q) * x + i] * scale
        });
        let term = (picked - tape.constant(want)).square().sum();
        total = Some(match total {
            Some(t) => t + term,
            None => term,
        });
    }
    Ok(total.expect("at least one slab").scale(1.0 / (b * p * flat.len()) as f64))
}

/// Known quantities of one sample that the equation loss compares against.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicsContext {
    /// Input steps as an `(S_x, M)` field.
    pub input_steps: Tensor,
    pub params: ParameterVector,
    /// Expected first output step, `(S_x)`.
    pub continuation: Tensor,
}

impl PhysicsContext {
    /// For first-order equations the expected first output step is one solver
    /// interval from the last input step. Second-order equations do not
    /// observe `∂u/∂t`, so the last four input steps are continued by cubic
    /// extrapolation instead.
    pub fn new(spec: &EquationSpec, input_steps: &Tensor, params: &ParameterVector) -> Result<Self> {
        let (s, m) = (spec.nx(), spec.input_steps);
        if input_steps.len() != s * m {
            return Err(Error::shape(format!("input steps {:?} do not match {}", input_steps.shape(), spec.kind)));
        }
        let field = input_steps.reshape(&[s, m])?;
        let d = field.data();
        let continuation = if spec.kind.is_second_order() {
            if m < 4 {
                return Err(Error::invalid("the initial-condition penalty needs at least 4 input steps"));
            }
            Tensor::from_fn(&[s], |j| {
                let u = |i: usize| d[j * m + m - 1 - i];
                4.0 * u(0) - 6.0 * u(1) + 4.0 * u(2) - u(3)
            })
        } else {
            let times = spec.times();
            let last: Vec<f64> = (0..s).map(|j| d[j * m + m - 1]).collect();
            Tensor::vector(advance(spec, params, &last, times[m - 1], times[m])?)
        };
        Ok(Self { input_steps: field, params: params.clone(), continuation })
    }
}

/// Components of the equation loss, each a scalar mean over the batch.
pub struct EquationLoss<'t> {
    pub residual: Var<'t>,
    pub initial: Var<'t>,
    pub boundary: Option<Var<'t>>,
}

impl<'t> EquationLoss<'t> {
    pub fn total(&self, alpha: f64) -> Var<'t> {
        let mut penalty = self.initial;
        if let Some(bc) = self.boundary {
            penalty = penalty + bc;
        }
        self.residual + penalty.scale(alpha)
    }
}

/// Cubic extrapolation of four equally spaced rows `u[a], u[a+d], u[a+2d], u[a+3d]`
/// one spacing beyond `u[a]` (away from the others).
fn cubic_beyond<'t>(u: Var<'t>, rows: [usize; 4]) -> Var<'t> {
    let r = |k: usize| u.slice(0, rows[k], 1);
    r(0).scale(4.0) - r(1).scale(6.0) + r(2).scale(4.0) - r(3)
}

/// Equation-residual loss of a predicted `(B, S_x·K)` batch, evaluated on the
/// full grid `[input steps | prediction]` with finite-difference stencils.
pub fn loss_eq_parts<'t>(pred: Var<'t>, spec: &EquationSpec, ctx: &[&PhysicsContext]) -> Result<EquationLoss<'t>> {
    let (s, m, k) = (spec.nx(), spec.input_steps, spec.target_steps());
    let shape = pred.shape();
    if shape.len() != 2 || shape[1] != s * k || shape[0] != ctx.len() || ctx.is_empty() {
        return Err(Error::shape(format!("loss_eq: prediction {shape:?} with {} contexts", ctx.len())));
    }
    let tape = pred.tape();
    let times = spec.times();
    let axis = TimeAxis { t0: times[0], dt: spec.dt() };
    let (mut res, mut ic, mut bc) = (Vec::new(), Vec::new(), Vec::new());
    for (r, c) in ctx.iter().enumerate() {
        if c.input_steps.shape() != [s, m] || c.continuation.len() != s {
            return Err(Error::shape(format!("loss_eq: context {r} does not match {}", spec.kind)));
        }
        let u_hat = pred.slice(0, r, 1).reshape(&[s, k]);
        let field = Var::concat(&[tape.constant(c.input_steps.clone()), u_hat], 1);
        res.push(residual_var(spec, field, &c.params, axis)?.square().mean());
        let expected = tape.constant(c.continuation.reshape(&[s, 1])?);
        ic.push((u_hat.slice(1, 0, 1) - expected).square().mean());

        // Cubic extrapolation to the boundary from the four nearest points.
        match spec.bc {
            Boundary::Periodic if s >= 4 => {
                let wrapped = cubic_beyond(u_hat, [s - 1, s - 2, s - 3, s - 4]);
                bc.push((wrapped - u_hat.slice(0, 0, 1)).square().mean());
            }
            Boundary::DirichletZero if s >= 4 => {
                let left = cubic_beyond(u_hat, [0, 1, 2, 3]);
                let right = cubic_beyond(u_hat, [s - 1, s - 2, s - 3, s - 4]);
                bc.push((left.square().mean() + right.square().mean()).scale(0.5));
            }
            _ => {}
        }
    }
    let avg = |v: Vec<Var<'t>>| -> Option<Var<'t>> {
        let n = v.len() as f64;
        v.into_iter().reduce(|a, c| a + c).map(|t| t.scale(1.0 / n))
    };
    Ok(EquationLoss {
        residual: avg(res).expect("nonempty batch"),
        initial: avg(ic).expect("nonempty batch"),
        boundary: avg(bc),
    })
}

/// `mean(residual²) + α·(L_IC + L_BC)`.
pub fn loss_eq<'t>(pred: Var<'t>, spec: &EquationSpec, ctx: &[&PhysicsContext], pinn_alpha: f64) -> Result<Var<'t>> {
    Ok(loss_eq_parts(pred, spec, ctx)?.total(pinn_alpha))
}

/// `Σ_i L_i / (2 s_i²) + ln(1 + s_i²)` with `s_i = exp(θ_i)`.
pub fn combine<'t>(losses: &[Var<'t>], log_coeffs: &[Var<'t>]) -> Result<Var<'t>> {
    if losses.is_empty() || losses.len() != log_coeffs.len() {
        return Err(Error::invalid(format!("{} losses need as many coefficients, got {}", losses.len(), log_coeffs.len())));
    }
    let mut total: Option<Var<'t>> = None;
    for (l, theta) in losses.iter().zip(log_coeffs) {
        let s2 = theta.scale(2.0).exp();
        let inv = theta.scale(-2.0).exp();
        let term = l.mul_scalar(inv).scale(0.5) + s2.add_scalar(1.0).ln();
        total = Some(match total {
            Some(t) => t + term,
            None => term,
        });
    }
    Ok(total.expect("nonempty"))
}

/// Evaluates [`combine`] on plain numbers.
pub fn combine_values(losses: &[f64], coeffs: &[f64]) -> Result<f64> {
    let tape = Tape::new();
    let l: Vec<Var> = losses.iter().map(|&v| tape.constant(Tensor::scalar(v))).collect();
    let c: Vec<Var> = coeffs.iter().map(|&s| tape.constant(Tensor::scalar(s.ln()))).collect();
    Ok(combine(&l, &c)?.item())
}
