//! Channel layout of the operator input.
//!
//! For a target window of `K = N − M` time points the lifted input holds, in
//! order: `M` channels each repeating one input time step along the output
//! time axis, the normalized coordinates (`t` for ODEs, `x` then `t` for
//! PDEs), and one channel per lifted parameter field. Scalar parameters are
//! constant channels; the zoned Burgers variant lifts its per-zone `α` and
//! `δ` values as two piecewise-constant fields in `x`.

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::solvers::{EquationKind, EquationSpec};
use crate::tensor::Tensor;

/// Where a physical parameter lives in the lifted input.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamChannel {
    pub channel: usize,
    /// Spatial support (`None` = the whole grid).
    pub support: Option<Vec<usize>>,
}

pub fn coordinate_count(spec: &EquationSpec) -> usize {
    if spec.kind.is_ode() {
        1
    } else {
        2
    }
}

/// Number of parameter channels.
pub fn parameter_field_count(spec: &EquationSpec) -> usize {
    match spec.kind {
        EquationKind::Pde2Zoned => 4,
        _ => spec.n_params(),
    }
}

pub fn input_channels(spec: &EquationSpec) -> usize {
    spec.input_steps + coordinate_count(spec) + parameter_field_count(spec)
}

fn first_param_channel(spec: &EquationSpec) -> usize {
    spec.input_steps + coordinate_count(spec)
}

/// Channel (and spatial support) of every parameter, in parameter order.
pub fn parameter_channels(spec: &EquationSpec) -> Vec<ParamChannel> {
    let base = first_param_channel(spec);
    match spec.kind {
        EquationKind::Pde2Zoned => {
            let z = spec.zones.unwrap_or(1);
            let zone = spec.zone_of_points();
            let support = |k: usize| Some((0..zone.len()).filter(|&j| zone[j] == k).collect());
            let mut out: Vec<ParamChannel> = (0..z).map(|k| ParamChannel { channel: base, support: support(k) }).collect();
            out.extend((0..z).map(|k| ParamChannel { channel: base + 2, support: support(k) }));
            out.push(ParamChannel { channel: base + 1, support: None });
            out.push(ParamChannel { channel: base + 3, support: None });
            out
        }
        _ => (0..spec.n_params()).map(|q| ParamChannel { channel: base + q, support: None }).collect(),
    }
}

/// Value of every parameter channel at spatial index `j`.
fn parameter_fields(spec: &EquationSpec, values: &[f64], j: usize) -> Vec<f64> {
    match spec.kind {
        EquationKind::Pde2Zoned => {
            let z = spec.zones.unwrap_or(1);
            let k = spec.zone_of_points()[j];
            vec![values[k], values[2 * z], values[z + k], values[2 * z + 1]]
        }
        _ => values.to_vec(),
    }
}

/// Lifted input for one sample from its input steps and parameter values:
/// shape `(C_in, K)` for ODEs, `(C_in, S_x, K)` for PDEs.
pub fn lift_raw(spec: &EquationSpec, input_steps: &Tensor, params: &[f64]) -> Result<Tensor> {
    let (m, nx, k) = (spec.input_steps, spec.nx(), spec.target_steps());
    let expected: Vec<usize> = if spec.kind.is_ode() { vec![m] } else { vec![nx, m] };
    if input_steps.shape() != expected.as_slice() {
        return Err(Error::shape(format!("input steps {:?} do not match {} ({:?})", input_steps.shape(), spec.kind, expected)));
    }
    if params.len() != spec.n_params() {
        return Err(Error::shape(format!("{} expects {} parameters, got {}", spec.kind, spec.n_params(), params.len())));
    }
    let c_in = input_channels(spec);
    let pts = nx * k;
    let mut data = vec![0.0; c_in * pts];
    let t_norm = |n: usize| if k > 1 { n as f64 / (k - 1) as f64 } else { 0.0 };
    let x_norm = |j: usize| if nx > 1 { j as f64 / (nx - 1) as f64 } else { 0.0 };
    let coords = coordinate_count(spec);
    for j in 0..nx {
        let fields = parameter_fields(spec, params, j);
        for n in 0..k {
            let at = j * k + n;
            for i in 0..m {
                data[i * pts + at] = input_steps.data()[j * m + i];
            }
            if coords == 1 {
                data[m * pts + at] = t_norm(n);
            } else {
                data[m * pts + at] = x_norm(j);
                data[(m + 1) * pts + at] = t_norm(n);
            }
            for (f, v) in fields.iter().enumerate() {
                data[(m + coords + f) * pts + at] = *v;
            }
        }
    }
    let shape = if spec.kind.is_ode() { vec![c_in, k] } else { vec![c_in, nx, k] };
    Tensor::new(shape, data)
}

pub fn lift_inputs(sample: &Sample, spec: &EquationSpec) -> Result<Tensor> {
    if sample.params.names != spec.parameter_names() {
        return Err(Error::shape(format!("sample parameters {:?} do not match {}", sample.params.names, spec.kind)));
    }
    lift_raw(spec, &sample.input_steps, &sample.params.values)
}

/// Stacks lifted samples into a `(B, C_in, S_x·K)` batch.
pub fn lift_batch<'a>(samples: impl IntoIterator<Item = &'a Sample>, spec: &EquationSpec) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut b = 0;
    for s in samples {
        data.extend_from_slice(lift_inputs(s, spec)?.data());
        b += 1;
    }
    Tensor::new(vec![b, input_channels(spec), spec.nx() * spec.target_steps()], data)
}

/// Tangent directions selecting each parameter's lifted entries, shaped like
/// a `(B, C_in, S_x·K)` batch.
pub fn parameter_tangents(spec: &EquationSpec, batch: usize) -> Vec<Tensor> {
    let c_in = input_channels(spec);
    let (nx, k) = (spec.nx(), spec.target_steps());
    let pts = nx * k;
    parameter_channels(spec)
        .into_iter()
        .map(|pc| {
            let mut t = vec![0.0; batch * c_in * pts];
            let xs: Vec<usize> = pc.support.clone().unwrap_or_else(|| (0..nx).collect());
            for b in 0..batch {
                let base = (b * c_in + pc.channel) * pts;
                for &j in &xs {
                    t[base + j * k..base + (j + 1) * k].iter_mut().for_each(|v| *v = 1.0);
                }
            }
            Tensor::new(vec![batch, c_in, pts], t).expect("tangent shape")
        })
        .collect()
}
