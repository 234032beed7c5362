use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{make_sample, Generator, Sample, MAX_RESAMPLE_RATE, PDE1_AMPLITUDE};
use crate::error::{Error, Result};
use crate::metrics::{r2, rel_l2};
use crate::operator::{lift_inputs, OperatorModel};
use crate::solvers::{EquationKind, EquationSpec, ParameterVector};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 8;

/// Accuracy of a surrogate on a set of samples.
///
/// `r2_*` values aggregate over every point of every sample; `rel_l2_*`
/// values average per-sample relative L² errors. Jacobian entries are
/// empty when the samples carry no reference Jacobian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_samples: usize,
    pub r2_u: f64,
    pub rel_l2_u: f64,
    /// Mean of per-sample R² of the solution path.
    pub r2_u_per_sample: f64,
    pub parameter_names: Vec<String>,
    pub r2_jac: Vec<f64>,
    pub rel_l2_jac: Vec<f64>,
    pub mean_r2_jac: Option<f64>,
    pub mean_rel_l2_jac: Option<f64>,
}

impl Metrics {
    /// Minimum Jacobian R² across parameters.
    pub fn min_r2_jac(&self) -> Option<f64> {
        self.r2_jac.iter().copied().reduce(f64::min)
    }

    pub fn r2_jac_of(&self, name: &str) -> Option<f64> {
        self.parameter_names.iter().position(|n| n == name).and_then(|i| self.r2_jac.get(i).copied())
    }

    /// Flat key/value form written to `metrics.json`.
    pub fn to_flat_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("n_samples".into(), self.n_samples.into());
        map.insert("r2_u".into(), self.r2_u.into());
        map.insert("rel_l2_u".into(), self.rel_l2_u.into());
        map.insert("r2_u_per_sample".into(), self.r2_u_per_sample.into());
        for (i, name) in self.parameter_names.iter().enumerate() {
            if let (Some(r), Some(l)) = (self.r2_jac.get(i), self.rel_l2_jac.get(i)) {
                map.insert(format!("r2_jac_{name}"), (*r).into());
                map.insert(format!("rel_l2_jac_{name}"), (*l).into());
            }
        }
        if let (Some(r), Some(l)) = (self.mean_r2_jac, self.mean_rel_l2_jac) {
            map.insert("mean_r2_jac".into(), r.into());
            map.insert("mean_rel_l2_jac".into(), l.into());
        }
        serde_json::Value::Object(map)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_flat_json())?)?;
        Ok(())
    }
}

/// Predictions (and predicted Jacobians when `with_jacobian`) for each sample,
/// computed in parallel chunks.
pub fn predict_samples(
    model: &OperatorModel,
    spec: &EquationSpec,
    samples: &[&Sample],
    with_jacobian: bool,
) -> Result<Vec<(Tensor, Option<Tensor>)>> {
    model.config.matches(spec)?;
    let (c, x) = (model.config.input_channels, model.config.points());
    let chunks: Vec<Result<Vec<(Tensor, Option<Tensor>)>>> = samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let mut data = Vec::with_capacity(chunk.len() * c * x);
            for s in chunk {
                data.extend_from_slice(lift_inputs(s, spec)?.data());
            }
            let batch = Tensor::new(vec![chunk.len(), c, x], data)?;
            let p = spec.n_params();
            if with_jacobian {
                let (pred, jac) = model.predict_with_jacobian(spec, &batch)?;
                Ok((0..chunk.len())
                    .map(|r| {
                        let u = Tensor::vector(pred.data()[r * x..(r + 1) * x].to_vec());
                        let j = Tensor::new(vec![p, x], jac.data()[r * p * x..(r + 1) * p * x].to_vec()).expect("slab");
                        (u, Some(j))
                    })
                    .collect())
            } else {
                let pred = model.predict(&batch)?;
                Ok((0..chunk.len()).map(|r| (Tensor::vector(pred.data()[r * x..(r + 1) * x].to_vec()), None)).collect())
            }
        })
        .collect();
    let mut out = Vec::with_capacity(samples.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Mean per-sample relative L² of the solution path only.
pub fn solution_rel_l2(model: &OperatorModel, spec: &EquationSpec, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let preds = predict_samples(model, spec, samples, false)?;
    let mut acc = 0.0;
    for (s, (u, _)) in samples.iter().zip(&preds) {
        acc += rel_l2(u.data(), s.target.data())?;
    }
    Ok(acc / samples.len() as f64)
}

/// Compares predictions (and predicted Jacobians) with the samples' references.
pub fn evaluate(model: &OperatorModel, spec: &EquationSpec, samples: &[&Sample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let with_jacobian = samples.iter().all(|s| s.jacobian.is_some());
    let preds = predict_samples(model, spec, samples, with_jacobian)?;
    metrics_from_predictions(spec, samples, &preds)
}

/// Metrics of given predictions; Jacobian metrics are filled in when every
/// sample and every prediction carries a Jacobian.
pub fn metrics_from_predictions(spec: &EquationSpec, samples: &[&Sample], preds: &[(Tensor, Option<Tensor>)]) -> Result<Metrics> {
    if samples.is_empty() || samples.len() != preds.len() {
        return Err(Error::invalid(format!("{} samples but {} predictions", samples.len(), preds.len())));
    }
    let preds_u: Vec<&Tensor> = preds.iter().map(|(u, _)| u).collect();
    let mut metrics = solution_metrics(samples, &preds_u)?;
    metrics.parameter_names = spec.parameter_names();
    let with_jacobian = samples.iter().all(|s| s.jacobian.is_some()) && preds.iter().all(|(_, j)| j.is_some());
    if with_jacobian {
        let jacs: Vec<&Tensor> = preds.iter().map(|(_, j)| j.as_ref().expect("checked")).collect();
        let truth: Vec<&Tensor> = samples.iter().map(|s| s.jacobian.as_ref().expect("checked")).collect();
        let (r2s, rels) = jacobian_metrics(&jacs, &truth, spec.n_params())?;
        metrics.mean_r2_jac = Some(r2s.iter().sum::<f64>() / r2s.len() as f64);
        metrics.mean_rel_l2_jac = Some(rels.iter().sum::<f64>() / rels.len() as f64);
        metrics.r2_jac = r2s;
        metrics.rel_l2_jac = rels;
    }
    Ok(metrics)
}

fn solution_metrics(samples: &[&Sample], preds: &[&Tensor]) -> Result<Metrics> {
    let (mut all_p, mut all_t) = (Vec::new(), Vec::new());
    let (mut rel, mut per_r2, mut per_count) = (0.0, 0.0, 0usize);
    for (s, u) in samples.iter().zip(preds) {
        let truth = s.target.data();
        if u.len() != truth.len() {
            return Err(Error::shape(format!("prediction {:?} vs target {:?}", u.shape(), s.target.shape())));
        }
        rel += rel_l2(u.data(), truth)?;
        if let Ok(r) = r2(u.data(), truth) {
            per_r2 += r;
            per_count += 1;
        }
        all_p.extend_from_slice(u.data());
        all_t.extend_from_slice(truth);
    }
    Ok(Metrics {
        n_samples: samples.len(),
        r2_u: r2(&all_p, &all_t)?,
        rel_l2_u: rel / samples.len() as f64,
        r2_u_per_sample: if per_count > 0 { per_r2 / per_count as f64 } else { f64::NAN },
        parameter_names: Vec::new(),
        r2_jac: Vec::new(),
        rel_l2_jac: Vec::new(),
        mean_r2_jac: None,
        mean_rel_l2_jac: None,
    })
}

/// Per-parameter aggregate R² and mean per-sample relative L² of Jacobian
/// slabs; each tensor holds `P` equally sized slabs.
pub fn jacobian_metrics(pred: &[&Tensor], truth: &[&Tensor], n_params: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r2s = Vec::with_capacity(n_params);
    let mut rels = Vec::with_capacity(n_params);
    for q in 0..n_params {
        let (mut all_p, mut all_t) = (Vec::new(), Vec::new());
        let (mut rel, mut count) = (0.0, 0usize);
        for (p, t) in pred.iter().zip(truth) {
            if p.len() != t.len() {
                return Err(Error::shape(format!("Jacobian {:?} vs reference {:?}", p.shape(), t.shape())));
            }
            let slab = t.len() / n_params;
            let (ps, ts) = (&p.data()[q * slab..(q + 1) * slab], &t.data()[q * slab..(q + 1) * slab]);
            if let Ok(r) = rel_l2(ps, ts) {
                rel += r;
                count += 1;
            }
            all_p.extend_from_slice(ps);
            all_t.extend_from_slice(ts);
        }
        if count == 0 {
            return Err(Error::Degenerate(format!("Jacobian slab {q} is identically zero in every sample")));
        }
        r2s.push(r2(&all_p, &all_t)?);
        rels.push(rel / count as f64);
    }
    Ok((r2s, rels))
}

/// `n` parameter vectors drawn from the band `[b, (1 + λ)·b]` above each
/// range's upper edge, with the PDE1 amplitude drawn from its usual range.
pub fn perturbed_parameters(spec: &EquationSpec, lambda: f64, n: usize, seed: u64) -> Result<Vec<(ParameterVector, f64)>> {
    (0..n as u64).map(|i| perturbed_draw(spec, lambda, seed, i)).collect()
}

fn perturbed_draw(spec: &EquationSpec, lambda: f64, seed: u64, stream: u64) -> Result<(ParameterVector, f64)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("perturbation λ must be finite and non-negative, got {lambda}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let values = spec
        .parameter_ranges()
        .iter()
        .map(|&[_, b]| {
            let (lo, hi) = if b >= 0.0 { (b, (1.0 + lambda) * b) } else { ((1.0 + lambda) * b, b) };
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                b
            }
        })
        .collect();
    let amplitude = if spec.kind == EquationKind::Pde1 { rng.gen_range(PDE1_AMPLITUDE[0]..=PDE1_AMPLITUDE[1]) } else { 1.0 };
    Ok((spec.parameters(values)?, amplitude))
}

/// Fresh samples from the perturbed band solved with forward sensitivities;
/// failed solves are redrawn within the usual resampling budget.
pub fn perturbed_samples(spec: &EquationSpec, lambda: f64, n: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let budget = (MAX_RESAMPLE_RATE * n as f64).floor() as usize;
    let results: Vec<Result<(Sample, usize)>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut failures = 0;
            loop {
                let (p, a) = perturbed_draw(spec, lambda, seed, i + failures as u64 * n as u64)?;
                match make_sample(spec, p, a, Generator::ForwardSens, true) {
                    Ok(s) => return Ok((s, failures)),
                    Err(e) if failures < budget => {
                        log::warn!("perturbed sample {i}: {e}; redrawing");
                        failures += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut failures = 0;
    for r in results {
        let (s, f) = r?;
        failures += f;
        samples.push(s);
    }
    if failures > budget {
        return Err(Error::ResampleLimit { rate: failures as f64 / n as f64, failures, n });
    }
    Ok(samples)
}

/// Metrics on `n` fresh draws from the perturbed band.
pub fn perturbed_eval(model: &OperatorModel, spec: &EquationSpec, lambda: f64, n: usize, seed: u64) -> Result<Metrics> {
    let samples = perturbed_samples(spec, lambda, n, seed)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    evaluate(model, spec, &refs)
}
