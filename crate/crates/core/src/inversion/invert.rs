use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::surrogate::{Observation, Surrogate};
use crate::error::{Error, Result};
use crate::solvers::{EquationSpec, ParameterVector};
use crate::training::Adam;

/// Settings for one inversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    /// Names of the parameters to estimate; the rest are taken as known.
    pub free: Vec<String>,
    /// Each range `[a, b]` is widened to `[a − m(b − a), b + m(b − a)]`.
    pub margin: f64,
    pub restarts: usize,
    pub steps: usize,
    pub lr: f64,
    /// Levenberg–Marquardt iterations after the Adam phase of every restart.
    pub polish_steps: usize,
    pub seed: u64,
    /// Keep every iterate of every restart.
    pub record_trace: bool,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            free: vec!["alpha".into()],
            margin: 0.2,
            restarts: 4,
            steps: 500,
            lr: 0.05,
            polish_steps: 20,
            seed: 0,
            record_trace: false,
        }
    }
}

impl InversionConfig {
    pub fn with_free<S: Into<String>>(mut self, free: impl IntoIterator<Item = S>) -> Self {
        self.free = free.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self, spec: &EquationSpec) -> Result<()> {
        if self.free.is_empty() {
            return Err(Error::invalid("inversion needs at least one free parameter"));
        }
        let names = spec.parameter_names();
        for (i, f) in self.free.iter().enumerate() {
            if !names.contains(f) {
                return Err(Error::invalid(format!("`{f}` is not a {} parameter (expected one of {names:?})", spec.kind)));
            }
            if self.free[..i].contains(f) {
                return Err(Error::invalid(format!("free parameter `{f}` listed twice")));
            }
        }
        if self.free.len() > sobol_burley::NUM_DIMENSIONS as usize {
            return Err(Error::invalid(format!("at most {} free parameters supported", sobol_burley::NUM_DIMENSIONS)));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::invalid(format!("bound margin must be finite and non-negative, got {}", self.margin)));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restart count must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.steps == 0 && self.polish_steps == 0 {
            return Err(Error::invalid("inversion needs Adam or polish steps"));
        }
        Ok(())
    }
}

/// Declared ranges widened by `margin` times their width on each side.
pub fn inversion_bounds(spec: &EquationSpec, margin: f64) -> Vec<[f64; 2]> {
    spec.parameter_ranges().iter().map(|&[a, b]| [a - margin * (b - a), b + margin * (b - a)]).collect()
}

/// Final state of one restart.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RestartOutcome {
    pub index: usize,
    /// Starting values of the free parameters.
    pub start: Vec<f64>,
    /// Best free-parameter values reached.
    pub estimate: Vec<f64>,
    /// Relative L² misfit at `estimate`.
    pub misfit: f64,
    /// Free-parameter values of every iterate, when requested.
    pub trace: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    /// Known values with the free ones replaced by the best restart's estimate.
    pub estimate: ParameterVector,
    pub free: Vec<String>,
    /// Relative L² misfit of the returned estimate.
    pub misfit: f64,
    pub bounds: Vec<[f64; 2]>,
    /// Restarts that finished with a finite misfit, in order.
    pub restarts: Vec<RestartOutcome>,
    pub discarded: usize,
}

impl Inversion {
    pub fn free_values(&self) -> Vec<f64> {
        self.free.iter().map(|n| self.estimate.get(n).unwrap_or(f64::NAN)).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Problem<'a> {
    surrogate: &'a dyn Surrogate,
    obs: &'a Observation,
    known: &'a ParameterVector,
    free_idx: Vec<usize>,
    bounds: Vec<[f64; 2]>,
    obs_norm: f64,
}

/// Residual and its Jacobian with respect to the unconstrained variables.
struct Linearization {
    /// `Σ r²`, the squared relative misfit.
    f: f64,
    r: Vec<f64>,
    /// Row-major `(F, X)`.
    jz: Vec<f64>,
}

impl Problem<'_> {
    fn to_params(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.free_idx)
            .map(|(&zk, &q)| {
                let [lo, hi] = self.bounds[q];
                let v = lo + (hi - lo) * sigmoid(zk);
                assert!((lo..=hi).contains(&v), "iterate {v} escaped bounds [{lo}, {hi}]");
                v
            })
            .collect()
    }

    fn to_latent(&self, free_values: &[f64]) -> Vec<f64> {
        free_values
            .iter()
            .zip(&self.free_idx)
            .map(|(&v, &q)| {
                let [lo, hi] = self.bounds[q];
                let s = ((v - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
                (s / (1.0 - s)).ln()
            })
            .collect()
    }

    fn parameters(&self, free_values: &[f64]) -> ParameterVector {
        let mut p = self.known.clone();
        for (&q, &v) in self.free_idx.iter().zip(free_values) {
            p.values[q] = v;
        }
        p
    }

    fn linearize(&self, z: &[f64]) -> Result<Linearization> {
        let p = self.parameters(&self.to_params(z));
        let out = self.surrogate.evaluate(self.obs, &p, &self.free_idx)?;
        let x = self.obs.target.len();
        if out.u.len() != x || out.jacobian.len() != z.len() * x {
            return Err(Error::shape(format!(
                "surrogate returned {} values and {} Jacobian entries for a window of {x}",
                out.u.len(),
                out.jacobian.len()
            )));
        }
        let r: Vec<f64> = out.u.iter().zip(self.obs.target.data()).map(|(u, o)| (u - o) / self.obs_norm).collect();
        let f = r.iter().map(|v| v * v).sum();
        let mut jz = Vec::with_capacity(z.len() * x);
        for (k, (&zk, &q)) in z.iter().zip(&self.free_idx).enumerate() {
            let [lo, hi] = self.bounds[q];
            let s = sigmoid(zk);
            let scale = (hi - lo) * s * (1.0 - s) / self.obs_norm;
            jz.extend(out.jacobian[k * x..(k + 1) * x].iter().map(|j| j * scale));
        }
        Ok(Linearization { f, r, jz })
    }

    fn misfit(&self, z: &[f64]) -> Result<f64> {
        let p = self.parameters(&self.to_params(z));
        let out = self.surrogate.evaluate(self.obs, &p, &[])?;
        if out.u.len() != self.obs.target.len() {
            return Err(Error::shape(format!("surrogate returned {} values for a window of {}", out.u.len(), self.obs.target.len())));
        }
        let f: f64 = out.u.iter().zip(self.obs.target.data()).map(|(u, o)| ((u - o) / self.obs_norm).powi(2)).sum();
        Ok(f)
    }
}

/// Failures of a single guess that discard the restart instead of aborting.
fn is_recoverable(e: &Error) -> bool {
    matches!(e, Error::BlowUp { .. } | Error::Degenerate(_) | Error::NonFinite { .. })
}

struct Track {
    best_z: Vec<f64>,
    best_f: f64,
    trace: Option<Vec<Vec<f64>>>,
}

impl Track {
    fn visit(&mut self, problem: &Problem, z: &[f64], f: f64) {
        if let Some(t) = self.trace.as_mut() {
            t.push(problem.to_params(z));
        }
        if f < self.best_f {
            self.best_f = f;
            self.best_z = z.to_vec();
        }
    }
}

fn run_restart(problem: &Problem, z0: Vec<f64>, cfg: &InversionConfig) -> Result<(Vec<f64>, f64, Vec<Vec<f64>>)> {
    let nonfinite = || Error::Degenerate("non-finite misfit".into());
    let mut track = Track { best_z: z0.clone(), best_f: f64::INFINITY, trace: cfg.record_trace.then(Vec::new) };
    let mut z = z0;
    let mut adam = Adam::new(cfg.lr);
    for step in 0..cfg.steps {
        let lin = problem.linearize(&z)?;
        if !lin.f.is_finite() || lin.jz.iter().any(|v| !v.is_finite()) {
            return Err(nonfinite());
        }
        track.visit(problem, &z, lin.f);
        let x = lin.r.len();
        let grad: Vec<f64> =
            (0..z.len()).map(|k| 2.0 * lin.jz[k * x..(k + 1) * x].iter().zip(&lin.r).map(|(j, r)| j * r).sum::<f64>()).collect();
        adam.lr = 0.5 * cfg.lr * (1.0 + (PI * step as f64 / cfg.steps as f64).cos());
        adam.step(&mut [z.as_mut_slice()], &[grad.as_slice()]);
    }
    let f = problem.misfit(&z)?;
    if !f.is_finite() {
        return Err(nonfinite());
    }
    track.visit(problem, &z, f);
    let mut z = track.best_z.clone();
    let mut mu = 1e-3;
    for _ in 0..cfg.polish_steps {
        if track.best_f == 0.0 || mu > 1e12 {
            break;
        }
        let lin = problem.linearize(&z)?;
        let n = z.len();
        let x = lin.r.len();
        let mut a = vec![0.0; n * n];
        let mut g = vec![0.0; n];
        for i in 0..n {
            let ji = &lin.jz[i * x..(i + 1) * x];
            g[i] = ji.iter().zip(&lin.r).map(|(j, r)| j * r).sum();
            for k in 0..n {
                a[i * n + k] = ji.iter().zip(&lin.jz[k * x..(k + 1) * x]).map(|(p, q)| p * q).sum();
            }
        }
        for i in 0..n {
            a[i * n + i] += mu * a[i * n + i].max(1e-12);
        }
        let Some(delta) = solve_dense(a, g.iter().map(|v| -v).collect()) else {
            mu *= 4.0;
            continue;
        };
        let trial: Vec<f64> = z.iter().zip(&delta).map(|(a, b)| a + b).collect();
        match problem.misfit(&trial) {
            Ok(f) if f.is_finite() && f < lin.f => {
                track.visit(problem, &trial, f);
                z = trial;
                mu = (mu / 3.0).max(1e-12);
            }
            Ok(_) => mu *= 4.0,
            Err(e) if is_recoverable(&e) => mu *= 4.0,
            Err(e) => return Err(e),
        }
    }
    Ok((problem.to_params(&track.best_z), track.best_f.sqrt(), track.trace.unwrap_or_default()))
}

/// Gaussian elimination with partial pivoting; `None` for a singular system.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if !(a[piv * n + col].abs() > 0.0) {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Estimates the free parameters by descending the relative misfit between
/// the surrogate's prediction and the observed target window.
///
/// Free parameters are optimized through `p = lo + (hi − lo)·σ(z)`, so every
/// iterate lies inside the widened bounds. Each restart starts at a
/// scrambled Sobol point of the declared ranges, runs Adam with a cosine
/// learning-rate decay and finishes with Levenberg–Marquardt steps. The
/// restart with the lowest misfit wins.
pub fn invert(surrogate: &dyn Surrogate, obs: &Observation, known: &ParameterVector, cfg: &InversionConfig) -> Result<Inversion> {
    let spec = surrogate.spec();
    cfg.validate(spec)?;
    known.check_for(spec)?;
    let target_shape = spec.target_shape();
    if obs.target.shape() != target_shape.as_slice() {
        return Err(Error::shape(format!("observed target {:?} does not match {} ({target_shape:?})", obs.target.shape(), spec.kind)));
    }
    let obs_norm = obs.target.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(obs_norm > 0.0) || !obs_norm.is_finite() {
        return Err(Error::Degenerate("observed target is zero or non-finite".into()));
    }
    let free_idx: Vec<usize> = cfg.free.iter().map(|n| known.index_of(n).expect("validated name")).collect();
    let problem = Problem { surrogate, obs, known, free_idx, bounds: inversion_bounds(spec, cfg.margin), obs_norm };
    let ranges = spec.parameter_ranges();
    let scramble = (cfg.seed ^ (cfg.seed >> 32)) as u32;

    let mut restarts = Vec::with_capacity(cfg.restarts);
    let mut discarded = 0;
    for r in 0..cfg.restarts {
        let start: Vec<f64> = problem
            .free_idx
            .iter()
            .enumerate()
            .map(|(k, &q)| {
                let s = (sobol_burley::sample(r as u32, k as u32, scramble) as f64).clamp(1e-3, 1.0 - 1e-3);
                ranges[q][0] + (ranges[q][1] - ranges[q][0]) * s
            })
            .collect();
        match run_restart(&problem, problem.to_latent(&start), cfg) {
            Ok((estimate, misfit, trace)) => restarts.push(RestartOutcome { index: r, start, estimate, misfit, trace }),
            Err(e) if is_recoverable(&e) => {
                log::debug!("inversion restart {r} discarded: {e}");
                discarded += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let best = restarts
        .iter()
        .min_by(|a, b| a.misfit.total_cmp(&b.misfit))
        .ok_or_else(|| Error::Degenerate(format!("all {} inversion restarts ended with a non-finite misfit", cfg.restarts)))?;
    Ok(Inversion {
        estimate: problem.parameters(&best.estimate),
        free: cfg.free.clone(),
        misfit: best.misfit,
        bounds: problem.bounds.clone(),
        restarts: restarts.clone(),
        discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solve_matches_known_system() {
        let x = solve_dense(vec![0.0, 2.0, 1.0, 3.0, 1.0, 0.0, 1.0, 1.0, 4.0], vec![7.0, 5.0, 15.0]).unwrap();
        let expect = [1.0, 2.0, 3.0];
        assert!(x.iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-12), "{x:?}");
    }

    #[test]
    fn singular_system_is_rejected() {
        assert!(solve_dense(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(0.3) + sigmoid(-0.3) - 1.0).abs() < 1e-15);
    }
}
