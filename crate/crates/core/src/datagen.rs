//! Dataset generation and the on-disk dataset container.
//!
//! Every sample draws from its own ChaCha8 stream (`stream = sample index`,
//! offset by `n` for each resampling attempt), so datasets are identical
//! regardless of how generation is scheduled across threads.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{
    fd_sensitivities, forward_sensitivities, integrate, ode1_analytic, EquationKind, EquationSpec, InitialCondition,
    ParameterVector, DEFAULT_FD_STEP,
};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u64 = 1;
/// Largest tolerated fraction of failed solves before generation gives up.
pub const MAX_RESAMPLE_RATE: f64 = 0.05;
/// Range of the PDE1 initial amplitude `A` in `A·sin(πx)`.
pub const PDE1_AMPLITUDE: [f64; 2] = [0.5, 1.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Analytic,
    ForwardSens,
    Fd,
}

impl std::str::FromStr for Generator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Generator::Analytic),
            "forward_sens" | "forward" | "ad" => Ok(Generator::ForwardSens),
            "fd" => Ok(Generator::Fd),
            _ => Err(Error::invalid(format!("unknown generator `{s}` (analytic, forward_sens, fd)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub params: ParameterVector,
    /// Initial-condition draw (the PDE1 amplitude; 1 elsewhere).
    pub amplitude: f64,
    /// `u` on the first `M` time points: `(M)` or `(S_x, M)`.
    pub input_steps: Tensor,
    /// `u` on the remaining `N − M` time points.
    pub target: Tensor,
    /// `∂u/∂p` on the target window: `(P, N − M)` or `(P, S_x, N − M)`.
    pub jacobian: Option<Tensor>,
}

impl Sample {
    pub fn initial_condition(&self) -> InitialCondition {
        InitialCondition::Standard { amplitude: self.amplitude }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: EquationSpec,
    pub samples: Vec<Sample>,
    pub splits: Vec<Split>,
    pub master_seed: u64,
    pub generator: Generator,
    /// Failed solves that were replaced by fresh draws.
    pub resampled: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_jacobian(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.jacobian.is_some())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits.iter().enumerate().filter(|(_, &s)| s == split).map(|(i, _)| i).collect()
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.indices(split).into_iter().map(|i| &self.samples[i]).collect()
    }

    /// Keeps the first `n` training samples and every validation and test
    /// sample (used by data-volume sweeps).
    pub fn with_train_size(&self, n: usize) -> Result<Dataset> {
        let available = self.indices(Split::Train).len();
        if n == 0 || n > available {
            return Err(Error::invalid(format!("requested {n} training samples, dataset has {available}")));
        }
        let mut kept = 0;
        let mut out = self.clone();
        out.samples.clear();
        out.splits.clear();
        for (s, &tag) in self.samples.iter().zip(&self.splits) {
            if tag == Split::Train {
                if kept == n {
                    continue;
                }
                kept += 1;
            }
            out.samples.push(s.clone());
            out.splits.push(tag);
        }
        Ok(out)
    }
}

/// Split tags: the first `round(0.7n)` samples train, the next `round(0.15n)` validate.
pub fn assign_splits(n: usize) -> Vec<Split> {
    let train = (0.7 * n as f64).round() as usize;
    let val = ((0.15 * n as f64).round() as usize).min(n - train);
    (0..n)
        .map(|i| if i < train { Split::Train } else if i < train + val { Split::Val } else { Split::Test })
        .collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw(spec: &EquationSpec, rng: &mut ChaCha8Rng) -> Result<(ParameterVector, f64)> {
    let values = spec.parameter_ranges().iter().map(|&[a, b]| rng.gen_range(a..=b)).collect();
    let amplitude = if spec.kind == EquationKind::Pde1 { rng.gen_range(PDE1_AMPLITUDE[0]..=PDE1_AMPLITUDE[1]) } else { 1.0 };
    Ok((spec.parameters(values)?, amplitude))
}

/// `n` i.i.d. uniform parameter vectors within the declared ranges.
pub fn sample_parameters(spec: &EquationSpec, n: usize, seed: u64) -> Result<Vec<ParameterVector>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    (0..n as u64).map(|i| draw(spec, &mut stream_rng(seed, i)).map(|(p, _)| p)).collect()
}

fn check_generator(spec: &EquationSpec, generator: Generator) -> Result<()> {
    if generator == Generator::Analytic && spec.kind != EquationKind::Ode1 {
        return Err(Error::invalid(format!("the analytic generator exists only for ODE1, not {}", spec.kind)));
    }
    Ok(())
}

/// Solves one parameter draw and splits the path into input and target windows.
pub fn make_sample(
    spec: &EquationSpec,
    params: ParameterVector,
    amplitude: f64,
    generator: Generator,
    with_jacobian: bool,
) -> Result<Sample> {
    check_generator(spec, generator)?;
    let ic = InitialCondition::Standard { amplitude };
    let (field, sens) = match (generator, with_jacobian) {
        (Generator::Analytic, _) => {
            let (f, s) = ode1_analytic(&params, &spec.times())?;
            (f, with_jacobian.then_some(s))
        }
        (Generator::ForwardSens, true) => {
            let (f, s) = forward_sensitivities(spec, &params, &ic)?;
            (f, Some(s))
        }
        (Generator::Fd, true) => (integrate(spec, &params, &ic)?, Some(fd_sensitivities(spec, &params, &ic, DEFAULT_FD_STEP)?)),
        (_, false) => (integrate(spec, &params, &ic)?, None),
    };
    let m = spec.input_steps;
    let full = &field.values;
    let (nx, nt) = (spec.nx(), spec.time_points);
    let mut input = Vec::with_capacity(nx * m);
    for j in 0..nx {
        input.extend_from_slice(&full.data()[j * nt..j * nt + m]);
    }
    let input_shape = if spec.kind.is_ode() { vec![m] } else { vec![nx, m] };
    Ok(Sample {
        params,
        amplitude,
        input_steps: Tensor::new(input_shape, input)?,
        target: field.time_window(m),
        jacobian: sens.map(|s| s.time_window(m)),
    })
}

/// Generates `n` samples with paths (and Jacobians when `with_jacobian`)
/// computed once, replacing failed solves by fresh draws.
pub fn generate(spec: &EquationSpec, n: usize, seed: u64, generator: Generator, with_jacobian: bool) -> Result<Dataset> {
    spec.validate()?;
    check_generator(spec, generator)?;
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let budget = (MAX_RESAMPLE_RATE * n as f64).floor() as usize;
    let results: Vec<Result<(Sample, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut failures = 0;
            loop {
                let stream = i as u64 + (failures as u64) * n as u64;
                let (p, amplitude) = draw(spec, &mut stream_rng(seed, stream))?;
                match make_sample(spec, p, amplitude, generator, with_jacobian) {
                    Ok(sample) => return Ok((sample, failures)),
                    Err(Error::BlowUp { step, time }) => {
                        failures += 1;
                        log::debug!("sample {i}: solver blew up at step {step} (t = {time}), resampling");
                        if failures > budget {
                            return Err(Error::ResampleLimit { rate: failures as f64 / n as f64, failures, n });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut resampled = 0;
    for r in results {
        let (s, f) = r?;
        resampled += f;
        samples.push(s);
    }
    if resampled > budget {
        return Err(Error::ResampleLimit { rate: resampled as f64 / n as f64, failures: resampled, n });
    }
    if resampled > 0 {
        log::info!("{}: resampled {resampled} of {n} draws after solver blow-up", spec.kind);
    }
    Ok(Dataset { spec: spec.clone(), samples, splits: assign_splits(n), master_seed: seed, generator, resampled })
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_length: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u64,
    spec: EquationSpec,
    parameter_names: Vec<String>,
    parameter_ranges: Vec<[f64; 2]>,
    seed: u64,
    generator: Generator,
    resampled: usize,
    arrays: Vec<ArrayEntry>,
    splits: Vec<Split>,
}

fn stack(parts: impl Iterator<Item = Vec<f64>>, n: usize, inner: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let mut shape = vec![n];
    shape.extend_from_slice(inner);
    (shape, parts.flatten().collect())
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n = ds.len();
    let spec = &ds.spec;
    let first = ds.samples.first().ok_or_else(|| Error::invalid("cannot write an empty dataset"))?;
    let mut arrays = vec![
        ("params", stack(ds.samples.iter().map(|s| s.params.values.clone()), n, &[spec.n_params()])),
        ("amplitude", stack(ds.samples.iter().map(|s| vec![s.amplitude]), n, &[])),
        ("input_steps", stack(ds.samples.iter().map(|s| s.input_steps.data().to_vec()), n, first.input_steps.shape())),
        ("target", stack(ds.samples.iter().map(|s| s.target.data().to_vec()), n, first.target.shape())),
    ];
    if ds.has_jacobian() {
        let shape = first.jacobian.as_ref().expect("checked").shape().to_vec();
        arrays.push((
            "jacobian",
            stack(ds.samples.iter().map(|s| s.jacobian.as_ref().expect("checked").data().to_vec()), n, &shape),
        ));
    }
    let mut entries = Vec::new();
    for (name, (shape, data)) in &arrays {
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(format!("{name}.bin")), &bytes)?;
        entries.push(ArrayEntry { name: name.to_string(), shape: shape.clone(), dtype: "f64".into(), byte_length: bytes.len() as u64 });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        spec: spec.clone(),
        parameter_names: spec.parameter_names(),
        parameter_ranges: spec.parameter_ranges(),
        seed: ds.master_seed,
        generator: ds.generator,
        resampled: ds.resampled,
        arrays: entries,
        splits: ds.splits.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn integrity(field: &str, reason: impl Into<String>) -> Error {
    Error::Integrity { field: field.to_string(), reason: reason.into() }
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(MANIFEST_VERSION) => {}
        Some(v) => return Err(Error::UnsupportedVersion(v)),
        None => return Err(integrity("version", "missing or not an integer")),
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| integrity("manifest", e.to_string()))?;
    let spec = manifest.spec;
    spec.validate().map_err(|e| integrity("spec", e.to_string()))?;
    if manifest.parameter_names != spec.parameter_names() {
        return Err(integrity("parameter_names", "do not match the equation"));
    }
    let n = manifest.splits.len();
    let (nx, m, k, p) = (spec.nx(), spec.input_steps, spec.target_steps(), spec.n_params());
    let grid = |t: usize| if spec.kind.is_ode() { vec![t] } else { vec![nx, t] };
    let mut expected: Vec<(&str, Vec<usize>)> = vec![
        ("params", vec![n, p]),
        ("amplitude", vec![n]),
        ("input_steps", [vec![n], grid(m)].concat()),
        ("target", [vec![n], grid(k)].concat()),
    ];
    let has_jacobian = manifest.arrays.iter().any(|a| a.name == "jacobian");
    if has_jacobian {
        expected.push(("jacobian", [vec![n, p], grid(k)].concat()));
    }
    let mut loaded = std::collections::HashMap::new();
    for (name, shape) in &expected {
        let entry = manifest
            .arrays
            .iter()
            .find(|a| a.name == *name)
            .ok_or_else(|| integrity(name, "array missing from manifest"))?;
        if entry.dtype != "f64" {
            return Err(integrity(name, format!("unsupported dtype `{}`", entry.dtype)));
        }
        if &entry.shape != shape {
            return Err(integrity(name, format!("shape {:?} does not match expected {:?}", entry.shape, shape)));
        }
        let len: usize = shape.iter().product();
        if entry.byte_length != 8 * len as u64 {
            return Err(integrity(name, format!("byte_length {} disagrees with shape {:?}", entry.byte_length, shape)));
        }
        let bytes = fs::read(dir.join(format!("{name}.bin")))?;
        if bytes.len() as u64 != entry.byte_length {
            return Err(integrity(name, format!("file holds {} bytes, manifest declares {}", bytes.len(), entry.byte_length)));
        }
        let data: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        loaded.insert(*name, data);
    }
    let per = |name: &str, i: usize| -> Vec<f64> {
        let data = &loaded[name];
        let stride = data.len() / n.max(1);
        data[i * stride..(i + 1) * stride].to_vec()
    };
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let params = spec.parameters(per("params", i))?;
        samples.push(Sample {
            params,
            amplitude: per("amplitude", i)[0],
            input_steps: Tensor::new(grid(m), per("input_steps", i))?,
            target: Tensor::new(grid(k), per("target", i))?,
            jacobian: if has_jacobian { Some(Tensor::new([vec![p], grid(k)].concat(), per("jacobian", i))?) } else { None },
        });
    }
    Ok(Dataset { spec, samples, splits: manifest.splits, master_seed: manifest.seed, generator: manifest.generator, resampled: manifest.resampled })
}
