use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use senso_core::datagen::Generator;
use senso_core::inversion::{InversionConfig, StudyMode};
use senso_core::operator::{desk_config, OperatorConfig};
use senso_core::solvers::{EquationKind, EquationSpec};
use senso_core::training::{LossConfig, Regime, TrainConfig};

/// Operator sizes that replace the equation's desk defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorOverrides {
    pub width: Option<usize>,
    pub modes_x: Option<usize>,
    pub modes_t: Option<usize>,
    pub layers: Option<usize>,
    pub projection_hidden: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    None,
    Lambda,
    TrainSize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub lambda: f64,
    pub n_samples: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { lambda: 0.4, n_samples: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionSettings {
    pub mode: StudyMode,
    pub n_instances: usize,
    pub restarts: usize,
    pub steps: usize,
    pub lr: f64,
    pub margin: f64,
    pub polish_steps: usize,
}

impl Default for InversionSettings {
    fn default() -> Self {
        let d = InversionConfig::default();
        Self {
            mode: StudyMode::Single,
            n_instances: 30,
            restarts: d.restarts,
            steps: d.steps,
            lr: d.lr,
            margin: d.margin,
            polish_steps: d.polish_steps,
        }
    }
}

/// One experiment, as written by the user or as resolved into `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub equation: EquationKind,
    pub time_points: Option<usize>,
    pub zones: Option<usize>,
    pub duffing_standard: bool,
    /// Defaults to the closed form for ODE1 and forward sensitivities elsewhere.
    pub generator: Option<Generator>,
    pub with_jacobian: bool,
    pub n_samples: usize,
    pub seed: u64,
    pub regime: Regime,
    pub operator: OperatorOverrides,
    pub loss: LossConfig,
    pub training: TrainingOverrides,
    pub sweep: SweepConfig,
    pub perturb: PerturbConfig,
    pub inversion: InversionSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            equation: EquationKind::Ode1,
            time_points: None,
            zones: None,
            duffing_standard: false,
            generator: None,
            with_jacobian: true,
            n_samples: 200,
            seed: 0,
            regime: Regime::Fno,
            operator: OperatorOverrides::default(),
            loss: LossConfig::default(),
            training: TrainingOverrides::default(),
            sweep: SweepConfig::default(),
            perturb: PerturbConfig::default(),
            inversion: InversionSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn spec(&self) -> EquationSpec {
        let mut spec = EquationSpec::new(self.equation);
        if let Some(n) = self.time_points {
            spec = spec.with_time_points(n);
        }
        if let Some(z) = self.zones {
            spec = spec.with_zones(z);
        }
        spec.duffing_standard = self.duffing_standard;
        spec
    }

    /// Fills every default so the result replays without consulting defaults,
    /// then checks all invariants.
    pub fn resolve(mut self) -> Result<Self> {
        let spec = self.spec();
        spec.validate()?;
        self.time_points = Some(spec.time_points);
        self.zones = spec.zones;
        self.generator.get_or_insert(if spec.kind == EquationKind::Ode1 { Generator::Analytic } else { Generator::ForwardSens });
        self.loss.regime = self.regime;
        self.loss.validate()?;

        let op = desk_config(&spec);
        let o = &mut self.operator;
        o.width.get_or_insert(op.width);
        o.modes_x.get_or_insert(op.modes_x);
        o.modes_t.get_or_insert(op.modes_t);
        o.layers.get_or_insert(op.layers);
        o.projection_hidden.get_or_insert(op.projection_hidden);
        self.operator_config()?.validate()?;

        let tc = TrainConfig::for_spec(&spec);
        let t = &mut self.training;
        t.epochs.get_or_insert(tc.epochs);
        t.batch_size.get_or_insert(tc.batch_size);
        t.lr.get_or_insert(tc.lr);
        self.train_config().validate()?;

        if self.n_samples == 0 {
            bail!("n_samples must be at least 1");
        }
        if self.regime.uses_sensitivity() && !self.with_jacobian {
            bail!("regime {} needs Jacobians, but with_jacobian is false", self.regime);
        }
        if !(self.perturb.lambda >= 0.0) || self.perturb.n_samples == 0 {
            bail!("perturbation needs lambda >= 0 and at least one sample");
        }
        if self.inversion.n_instances == 0 {
            bail!("inversion needs at least one instance");
        }
        match self.sweep.axis {
            SweepAxis::TrainSize if self.sweep.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) => {
                bail!("train_size sweep values must be positive integers")
            }
            SweepAxis::Lambda if self.sweep.values.iter().any(|v| !(*v >= 0.0)) => bail!("lambda sweep values must be >= 0"),
            _ => {}
        }
        Ok(self)
    }

    pub fn generator(&self) -> Generator {
        self.generator.unwrap_or(Generator::ForwardSens)
    }

    pub fn operator_config(&self) -> Result<OperatorConfig> {
        let spec = self.spec();
        let base = desk_config(&spec);
        let o = &self.operator;
        let cfg = base
            .clone()
            .with_width(o.width.unwrap_or(base.width))
            .with_modes(o.modes_x.unwrap_or(base.modes_x), o.modes_t.unwrap_or(base.modes_t))
            .with_layers(o.layers.unwrap_or(base.layers))
            .with_projection_hidden(o.projection_hidden.unwrap_or(base.projection_hidden));
        cfg.matches(&spec)?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::for_spec(&self.spec());
        TrainConfig {
            epochs: self.training.epochs.unwrap_or(base.epochs),
            batch_size: self.training.batch_size.unwrap_or(base.batch_size),
            lr: self.training.lr.unwrap_or(base.lr),
            seed: self.seed,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { regime: self.regime, ..self.loss.clone() }
    }

    pub fn inversion_config(&self) -> InversionConfig {
        let s = &self.inversion;
        InversionConfig {
            free: Vec::new(),
            margin: s.margin,
            restarts: s.restarts,
            steps: s.steps,
            lr: s.lr,
            polish_steps: s.polish_steps,
            seed: self.seed,
            record_trace: false,
        }
    }
}
