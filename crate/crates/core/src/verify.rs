//! Self-checks of the solver and the differentiation engine.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{gradcheck, second_order_check, Direction, Primitive, Tape};
use crate::datagen::sample_parameters;
use crate::error::Result;
use crate::metrics::{r2, rel_l2};
use crate::solvers::{
    fd_sensitivities, forward_sensitivities, integrate, ode1_analytic, EquationKind, EquationSpec, InitialCondition,
    DEFAULT_FD_STEP,
};
use crate::tensor::Tensor;

/// Agreement of one output (the path or a sensitivity slab) with the closed
/// form, pooled over all draws.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlabScore {
    pub name: String,
    pub r2: f64,
    pub rel_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodScores {
    pub method: String,
    pub slabs: Vec<SlabScore>,
    pub seconds: f64,
}

impl MethodScores {
    pub fn min_r2(&self) -> f64 {
        self.slabs.iter().map(|s| s.r2).fold(f64::INFINITY, f64::min)
    }

    pub fn max_rel_l2(&self) -> f64 {
        self.slabs.iter().map(|s| s.rel_l2).fold(0.0, f64::max)
    }
}

/// ODE1 forward-sensitivity and finite-difference solvers against the closed form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverVerification {
    pub n_draws: usize,
    pub seed: u64,
    pub forward: MethodScores,
    pub finite_difference: MethodScores,
    pub fd_step: f64,
}

struct Pooled {
    pred: Vec<Vec<f64>>,
    exact: Vec<Vec<f64>>,
}

fn score(method: &str, names: &[String], pooled: Pooled, seconds: f64) -> Result<MethodScores> {
    let slabs = names
        .iter()
        .zip(pooled.pred.iter().zip(&pooled.exact))
        .map(|(name, (p, e))| Ok(SlabScore { name: name.clone(), r2: r2(p, e)?, rel_l2: rel_l2(p, e)? }))
        .collect::<Result<_>>()?;
    Ok(MethodScores { method: method.into(), slabs, seconds })
}

pub fn solver_verification(n_draws: usize, seed: u64) -> Result<SolverVerification> {
    let spec = EquationSpec::new(EquationKind::Ode1);
    let params = sample_parameters(&spec, n_draws, seed)?;
    let ic = InitialCondition::standard();
    let times = spec.times();
    let mut names = vec!["u".to_string()];
    names.extend(spec.parameter_names());
    let slabs = names.len();

    let exact: Vec<Vec<Vec<f64>>> = params
        .par_iter()
        .map(|p| {
            let (u, s) = ode1_analytic(p, &times)?;
            let mut rows = vec![u.values.into_data()];
            rows.extend((0..s.n_params()).map(|q| s.slab(q).to_vec()));
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let pool = |per_draw: Vec<Vec<Vec<f64>>>| {
        let mut pred = vec![Vec::new(); slabs];
        let mut ex = vec![Vec::new(); slabs];
        for (d, e) in per_draw.into_iter().zip(&exact) {
            for k in 0..slabs {
                pred[k].extend_from_slice(&d[k]);
                ex[k].extend_from_slice(&e[k]);
            }
        }
        Pooled { pred, exact: ex }
    };

    let start = Instant::now();
    let forward: Vec<Vec<Vec<f64>>> = params
        .par_iter()
        .map(|p| {
            let (u, s) = forward_sensitivities(&spec, p, &ic)?;
            let mut rows = vec![u.values.into_data()];
            rows.extend((0..s.n_params()).map(|q| s.slab(q).to_vec()));
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let forward_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let fd: Vec<Vec<Vec<f64>>> = params
        .par_iter()
        .map(|p| {
            let u = integrate(&spec, p, &ic)?;
            let s = fd_sensitivities(&spec, p, &ic, DEFAULT_FD_STEP)?;
            let mut rows = vec![u.values.into_data()];
            rows.extend((0..s.n_params()).map(|q| s.slab(q).to_vec()));
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let fd_secs = start.elapsed().as_secs_f64();

    Ok(SolverVerification {
        n_draws,
        seed,
        forward: score("forward_sensitivity", &names, pool(forward), forward_secs)?,
        finite_difference: score("finite_difference", &names, pool(fd), fd_secs)?,
        fd_step: DEFAULT_FD_STEP,
    })
}

/// Ratio of the ODE1 integration errors on 100- and 200-point grids; close
/// to 16 for a fourth-order method.
pub fn rk4_order_ratio() -> Result<f64> {
    let base = EquationSpec::new(EquationKind::Ode1);
    let p = base.parameters(vec![2.6, 2.9, 0.3])?;
    let err = |n: usize| -> Result<f64> {
        let spec = base.clone().with_time_points(n);
        let u = integrate(&spec, &p, &InitialCondition::standard())?;
        let (exact, _) = ode1_analytic(&p, &spec.times())?;
        rel_l2(u.values.data(), exact.values.data())
    };
    Ok(err(100)? / err(200)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrimitiveScore {
    pub primitive: String,
    pub max_rel_error: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AutodiffVerification {
    pub seeds: u64,
    pub primitives: Vec<PrimitiveScore>,
    pub dft_round_trip: f64,
    pub parseval: f64,
    pub second_order: f64,
}

impl AutodiffVerification {
    pub fn max_gradcheck_error(&self) -> f64 {
        self.primitives
            .iter()
            .map(|p| if p.failure.is_some() { f64::INFINITY } else { p.max_rel_error })
            .fold(0.0, f64::max)
    }
}

/// Gradchecks every primitive over `seeds` seeds, plus DFT round-trip,
/// Parseval and second-order checks.
pub fn autodiff_verification(seeds: u64) -> Result<AutodiffVerification> {
    let mut primitives = Vec::with_capacity(Primitive::ALL.len());
    for &op in Primitive::ALL {
        let mut worst = PrimitiveScore { primitive: format!("{op:?}"), max_rel_error: 0.0, failure: None };
        for seed in 0..seeds {
            let report = gradcheck(op, &op.random_inputs(seed), 1e-5, seed)?;
            worst.max_rel_error = worst.max_rel_error.max(report.max_rel_error);
            if worst.failure.is_none() {
                worst.failure = report.failure;
            }
        }
        primitives.push(worst);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seeds);
    let x = Tensor::from_fn(&[64, 2], |_| rng.gen_range(-1.0..1.0));
    let tape = Tape::new();
    let v = tape.constant(x.clone());
    let freq = v.dft(0, Direction::Forward);
    let back = freq.dft(0, Direction::Inverse).value();
    let energy: f64 = x.data().iter().map(|a| a * a).sum();
    let freq_energy: f64 = freq.value().data().iter().map(|a| a * a).sum::<f64>() / 64.0;

    let mut second_order: f64 = 0.0;
    for seed in 0..seeds.min(5) {
        second_order = second_order.max(second_order_check(seed, 1e-5)?);
    }
    Ok(AutodiffVerification {
        seeds,
        primitives,
        dft_round_trip: back.max_abs_diff(&x),
        parseval: (energy - freq_energy).abs() / energy,
        second_order,
    })
}

/// Everything `senso verify` reports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub solver: SolverVerification,
    pub rk4_order_ratio: f64,
    pub autodiff: AutodiffVerification,
    pub passed: bool,
}

/// Runs all checks and applies the acceptance thresholds: forward-solver
/// R² ≥ 0.99 and relative L² ≤ 0.02 on every slab, FD R² ≥ 0.96, an RK4
/// error ratio in `[12, 20]`, gradchecks below 1e-5, round trip below 1e-12,
/// Parseval below 1e-10 and second order below 1e-4.
pub fn verify_all(n_draws: usize, seed: u64, gradcheck_seeds: u64) -> Result<VerifyReport> {
    let solver = solver_verification(n_draws, seed)?;
    let ratio = rk4_order_ratio()?;
    let autodiff = autodiff_verification(gradcheck_seeds)?;
    let passed = solver.forward.min_r2() >= 0.99
        && solver.forward.max_rel_l2() <= 0.02
        && solver.finite_difference.min_r2() >= 0.96
        && (12.0..=20.0).contains(&ratio)
        && autodiff.max_gradcheck_error() < 1e-5
        && autodiff.dft_round_trip < 1e-12
        && autodiff.parseval < 1e-10
        && autodiff.second_order < 1e-4;
    Ok(VerifyReport { solver, rk4_order_ratio: ratio, autodiff, passed })
}
