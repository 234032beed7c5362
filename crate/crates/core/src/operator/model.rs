use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lift::{self, parameter_tangents};
use crate::autodiff::{SpectralPlan, Tape, Var};
use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::solvers::{EquationKind, EquationSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub modes_t: usize,
    /// Retained modes along `x` (ignored for ODEs).
    pub modes_x: usize,
    pub width: usize,
    pub layers: usize,
    /// Hidden width of the two-layer projection.
    pub projection_hidden: usize,
    pub input_channels: usize,
    /// Spatial points and target time points of the operator grid.
    pub grid: [usize; 2],
    /// Fixed per-channel standardization `(v − shift)·scale` applied before
    /// lifting; parameter channels are mapped from their range onto `[−1, 1]`.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
}

impl OperatorConfig {
    pub fn for_spec(spec: &EquationSpec) -> Self {
        let c_in = lift::input_channels(spec);
        let mut shift = vec![0.0; c_in];
        let mut scale = vec![1.0; c_in];
        let ranges = spec.parameter_ranges();
        for (q, pc) in lift::parameter_channels(spec).iter().enumerate() {
            let [a, b] = ranges[q];
            if b > a {
                shift[pc.channel] = 0.5 * (a + b);
                scale[pc.channel] = 2.0 / (b - a);
            }
        }
        Self {
            modes_t: 8,
            modes_x: 8,
            width: 20,
            layers: 4,
            projection_hidden: 128,
            input_channels: c_in,
            grid: [spec.nx(), spec.target_steps()],
            input_shift: shift,
            input_scale: scale,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn with_modes(mut self, modes_x: usize, modes_t: usize) -> Self {
        self.modes_x = modes_x;
        self.modes_t = modes_t;
        self
    }

    pub fn with_projection_hidden(mut self, hidden: usize) -> Self {
        self.projection_hidden = hidden;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn points(&self) -> usize {
        self.grid[0] * self.grid[1]
    }

    pub fn plan(&self) -> Result<SpectralPlan> {
        SpectralPlan::new(self.grid[0], self.grid[1], self.modes_x, self.modes_t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.layers == 0 || self.projection_hidden == 0 || self.input_channels == 0 {
            return Err(Error::invalid("operator width, layers, projection and input channels must be positive"));
        }
        if self.input_shift.len() != self.input_channels || self.input_scale.len() != self.input_channels {
            return Err(Error::invalid("input standardization must have one entry per input channel"));
        }
        self.plan().map(|_| ())
    }

    pub fn matches(&self, spec: &EquationSpec) -> Result<()> {
        if self.input_channels != lift::input_channels(spec) || self.grid != [spec.nx(), spec.target_steps()] {
            return Err(Error::shape(format!(
                "operator expects {} channels on grid {:?}; {} provides {} on {:?}",
                self.input_channels,
                self.grid,
                spec.kind,
                lift::input_channels(spec),
                [spec.nx(), spec.target_steps()]
            )));
        }
        Ok(())
    }

    fn weight_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (w, c) = (self.width, self.input_channels);
        let modes = self.plan().map(|p| p.n_modes()).unwrap_or(0);
        let mut out = vec![("lift.weight".to_string(), vec![w, c]), ("lift.bias".to_string(), vec![w])];
        for l in 0..self.layers {
            out.push((format!("layers.{l}.spectral"), vec![w, w, modes, 2]));
            out.push((format!("layers.{l}.weight"), vec![w, w]));
            out.push((format!("layers.{l}.bias"), vec![w]));
        }
        let h = self.projection_hidden;
        out.push(("project.0.weight".into(), vec![h, w]));
        out.push(("project.0.bias".into(), vec![h]));
        out.push(("project.1.weight".into(), vec![1, h]));
        out.push(("project.1.bias".into(), vec![1]));
        out
    }
}

/// Fourier neural operator weights plus the learnable loss coefficients
/// (stored as `ln s_i`).
#[derive(Clone, Debug)]
pub struct OperatorModel {
    pub config: OperatorConfig,
    pub names: Vec<String>,
    pub weights: Vec<Tensor>,
    pub log_coeffs: Vec<f64>,
    pub seed: u64,
    plan: SpectralPlan,
}

impl PartialEq for OperatorModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.names == other.names
            && self.weights == other.weights
            && self.log_coeffs == other.log_coeffs
            && self.seed == other.seed
    }
}

/// Weights bound to a tape.
pub struct BoundModel<'t> {
    pub weights: Vec<Var<'t>>,
}

impl OperatorModel {
    /// Spectral weights `U(−1/width², 1/width²)` (real and imaginary parts);
    /// pointwise weights and biases `U(−1/√fan_in, 1/√fan_in)`, i.e. Kaiming-uniform
    /// with negative slope √5 as in common deep-learning defaults.
    pub fn new(config: OperatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let plan = config.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spectral_bound = 1.0 / (config.width * config.width) as f64;
        let mut names = Vec::new();
        let mut weights = Vec::new();
        for (name, shape) in config.weight_layout() {
            let bound = if name.ends_with("spectral") {
                spectral_bound
            } else {
                let fan_in = match name.as_str() {
                    "lift.weight" | "lift.bias" => config.input_channels,
                    n if n.starts_with("project.1") => config.projection_hidden,
                    _ => config.width,
                };
                1.0 / (fan_in as f64).sqrt()
            };
            weights.push(Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound)));
            names.push(name);
        }
        Ok(Self { config, names, weights, log_coeffs: Vec::new(), seed, plan })
    }

    pub fn for_spec(spec: &EquationSpec, seed: u64) -> Result<Self> {
        Self::new(OperatorConfig::for_spec(spec), seed)
    }

    pub fn n_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn weight(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.weights[i])
    }

    pub fn weight_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.weights[i])
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.all_finite()) && self.log_coeffs.iter().all(|c| c.is_finite())
    }

    /// Puts the weights on `tape`, as differentiable leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundModel<'t> {
        let weights = self.weights.iter().map(|w| if trainable { tape.var(w.clone()) } else { tape.constant(w.clone()) }).collect();
        BoundModel { weights }
    }

    /// `(B, C_in, X)` lifted batch → `(B, X)` prediction.
    pub fn forward_var<'t>(&self, bound: &BoundModel<'t>, x: Var<'t>) -> Var<'t> {
        let tape = x.tape();
        let cfg = &self.config;
        let shape = x.shape();
        assert!(shape.len() == 3 && shape[1] == cfg.input_channels && shape[2] == cfg.points(), "lifted batch shape {shape:?}");
        let (b, c, w) = (shape[0], cfg.input_channels, cfg.width);
        let ws = &bound.weights;
        // Fold the fixed standardization into the lifting map.
        let scale = tape.constant(Tensor::from_fn(&[w, c], |i| cfg.input_scale[i % c]));
        let shift = tape.constant(Tensor::new(vec![c, 1], cfg.input_shift.clone()).expect("shift shape"));
        let lift_w = ws[0] * scale;
        let lift_b = ws[1] - lift_w.matmul(shift).reshape(&[w]);
        let mut v = lift_w.channel_mix(x).add_channel_bias(lift_b);
        for l in 0..cfg.layers {
            let (spec_w, point_w, bias) = (ws[2 + 3 * l], ws[3 + 3 * l], ws[4 + 3 * l]);
            v = (point_w.channel_mix(v) + v.spectral_conv(spec_w, &self.plan)).add_channel_bias(bias).gelu();
        }
        let p = 2 + 3 * cfg.layers;
        let hidden = ws[p].channel_mix(v).add_channel_bias(ws[p + 1]).gelu();
        let out = ws[p + 2].channel_mix(hidden).add_channel_bias(ws[p + 3]);
        out.reshape(&[b, cfg.points()])
    }

    /// Predicted Jacobian slabs `(B, X)`, one per parameter of `spec`, recorded on
    /// the tape so they can be differentiated again.
    pub fn parameter_jacobian_var<'t>(&self, spec: &EquationSpec, x: Var<'t>, out: Var<'t>) -> Result<Vec<Var<'t>>> {
        self.config.matches(spec)?;
        let batch = x.shape()[0];
        x.tape().jvp_many(out, x, &parameter_tangents(spec, batch))
    }

    /// Prediction for a `(B, C_in, X)` batch.
    pub fn predict(&self, lifted: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let out = self.forward_var(&bound, tape.constant(lifted.clone())).value();
        if !out.all_finite() {
            return Err(Error::Degenerate("operator produced non-finite output".into()));
        }
        Ok((*out).clone())
    }

    /// Prediction for one lifted sample, shaped like the target grid.
    pub fn forward(&self, lifted: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        if lifted.len() != cfg.input_channels * cfg.points() || lifted.shape()[0] != cfg.input_channels {
            return Err(Error::shape(format!(
                "lifted input {:?} does not match {} channels × {} points",
                lifted.shape(),
                cfg.input_channels,
                cfg.points()
            )));
        }
        let out = self.predict(&lifted.reshape(&[1, cfg.input_channels, cfg.points()])?)?;
        out.reshape(&lifted.shape()[1..])
    }

    /// Prediction and Jacobian for a `(B, C_in, X)` batch: `((B, X), (B, P, X))`.
    pub fn predict_with_jacobian(&self, spec: &EquationSpec, lifted: &Tensor) -> Result<(Tensor, Tensor)> {
        let all: Vec<usize> = (0..spec.n_params()).collect();
        self.predict_with_partial_jacobian(spec, lifted, &all)
    }

    /// Like [`predict_with_jacobian`](Self::predict_with_jacobian) with only the
    /// listed parameters' slabs: `((B, X), (B, |which|, X))`.
    pub fn predict_with_partial_jacobian(&self, spec: &EquationSpec, lifted: &Tensor, which: &[usize]) -> Result<(Tensor, Tensor)> {
        self.config.matches(spec)?;
        let np = which.len();
        if let Some(&q) = which.iter().find(|&&q| q >= spec.n_params()) {
            return Err(Error::invalid(format!("parameter index {q} out of range for {}", spec.kind)));
        }
        let tape = Tape::recording_tangents();
        let bound = self.bind(&tape, false);
        let x = tape.constant(lifted.clone());
        let out = self.forward_var(&bound, x);
        let b = lifted.shape()[0];
        let mut tangents = parameter_tangents(spec, b);
        let chosen: Vec<Tensor> = which.iter().map(|&q| std::mem::replace(&mut tangents[q], Tensor::scalar(0.0))).collect();
        let slabs = tape.jvp_many(out, x, &chosen)?;
        let pts = self.config.points();
        let mut jac = vec![0.0; b * np * pts];
        for (q, s) in slabs.iter().enumerate() {
            let v = s.value();
            for r in 0..b {
                jac[(r * np + q) * pts..(r * np + q + 1) * pts].copy_from_slice(&v.data()[r * pts..(r + 1) * pts]);
            }
        }
        Ok(((*out.value()).clone(), Tensor::new(vec![b, np, pts], jac)?))
    }

    /// Predicted `∂u/∂p` for one sample: shape `(P, K)` or `(P, S_x, K)`.
    pub fn parameter_jacobian(&self, sample: &Sample, spec: &EquationSpec) -> Result<Tensor> {
        let lifted = lift::lift_inputs(sample, spec)?;
        let batch = lifted.reshape(&[1, self.config.input_channels, self.config.points()])?;
        let (_, jac) = self.predict_with_jacobian(spec, &batch)?;
        let mut shape = vec![spec.n_params()];
        shape.extend(spec.target_shape());
        jac.reshape(&shape)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            loss_coefficients: self.log_coeffs.iter().map(|t| t.exp()).collect(),
            log_coefficients: self.log_coeffs.clone(),
            weights: self.names.iter().zip(&self.weights).map(|(n, w)| (n.clone(), w.shape().to_vec())).collect(),
        };
        fs::write(dir.join("model.json"), serde_json::to_string_pretty(&manifest)?)?;
        let bytes: Vec<u8> = self.weights.iter().flat_map(|w| w.data().iter().flat_map(|v| v.to_le_bytes())).collect();
        fs::write(dir.join("weights.bin"), bytes)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(manifest.version));
        }
        let mut model = Self::new(manifest.config, manifest.seed)?;
        let expected: Vec<(String, Vec<usize>)> =
            model.names.iter().cloned().zip(model.weights.iter().map(|w| w.shape().to_vec())).collect();
        if manifest.weights != expected {
            return Err(Error::Integrity { field: "weights".into(), reason: "manifest layout does not match the config".into() });
        }
        let bytes = fs::read(dir.join("weights.bin"))?;
        let total: usize = model.weights.iter().map(|w| w.len()).sum();
        if bytes.len() != 8 * total {
            return Err(Error::Integrity {
                field: "weights.bin".into(),
                reason: format!("{} bytes, expected {}", bytes.len(), 8 * total),
            });
        }
        let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for w in &mut model.weights {
            w.data_mut().iter_mut().for_each(|v| *v = values.next().expect("length checked"));
        }
        model.log_coeffs = manifest.log_coefficients;
        Ok(model)
    }
}

const CHECKPOINT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    version: u64,
    config: OperatorConfig,
    seed: u64,
    loss_coefficients: Vec<f64>,
    log_coefficients: Vec<f64>,
    weights: Vec<(String, Vec<usize>)>,
}

/// Default operator size for an equation at desk scale: smaller width and
/// projection for the PDE grids.
pub fn desk_config(spec: &EquationSpec) -> OperatorConfig {
    let base = OperatorConfig::for_spec(spec);
    match spec.kind {
        EquationKind::Ode1 | EquationKind::Ode2 => base.with_width(16),
        _ => base.with_width(12).with_modes(6, 6).with_projection_hidden(32),
    }
}
