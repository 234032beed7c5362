use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::evaluate::solution_rel_l2;
use super::loss::{
    combine, loss_eq, loss_s_scaled, loss_u, sample_supervision_points, LossConfig, LossTerm, PhysicsContext, SupervisionPoints,
};
use crate::autodiff::{Tape, Var};
use crate::datagen::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::operator::{lift_inputs, OperatorModel};
use crate::solvers::EquationSpec;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds shuffling and supervision-point sampling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, batch_size: 16, lr: 1e-3, seed: 0 }
    }
}

impl TrainConfig {
    /// Defaults with the batch size used for `spec` (smaller for PDE grids).
    pub fn for_spec(spec: &EquationSpec) -> Self {
        let batch_size = if spec.kind.is_ode() { 16 } else { 4 };
        Self { batch_size, ..Self::default() }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Averages over one epoch's training batches plus the validation metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_u: f64,
    pub loss_eq: Option<f64>,
    pub loss_s: Option<f64>,
    /// `s_i` after the epoch, in the order of the active terms.
    pub coeffs: Vec<f64>,
    /// Mean relative L² of the solution on the validation split.
    pub val_rel_l2_u: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n_coeffs = self.records.first().map_or(0, |r| r.coeffs.len());
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = ["epoch", "loss_total", "loss_u", "loss_eq", "loss_s"].map(String::from).to_vec();
        header.extend((0..n_coeffs).map(|i| format!("coeff_{i}")));
        header.extend(["val_rel_l2_u".to_string(), "seconds".to_string()]);
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.records {
            let mut row = vec![r.epoch.to_string(), r.loss_total.to_string(), r.loss_u.to_string(), opt(r.loss_eq), opt(r.loss_s)];
            row.extend(r.coeffs.iter().map(|c| c.to_string()));
            row.extend([r.val_rel_l2_u.to_string(), format!("{:.3}", r.seconds)]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of [`train`]: the weights with the best validation metric.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: OperatorModel,
    pub history: History,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// A training sample with its lifted input and, for equation-loss regimes,
/// its physics context, both computed once.
#[derive(Clone, Debug)]
pub struct TrainItem<'a> {
    pub sample: &'a Sample,
    pub lifted: Tensor,
    pub physics: Option<PhysicsContext>,
}

impl<'a> TrainItem<'a> {
    pub fn new(spec: &EquationSpec, sample: &'a Sample, with_physics: bool) -> Result<Self> {
        let physics = if with_physics { Some(PhysicsContext::new(spec, &sample.input_steps, &sample.params)?) } else { None };
        Ok(Self { sample, lifted: lift_inputs(sample, spec)?, physics })
    }
}

/// Per-slab standard deviation of the training Jacobians.
fn jacobian_scales(items: &[TrainItem], n_params: usize) -> Vec<f64> {
    (0..n_params)
        .map(|q| {
            let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
            for item in items {
                let j = item.sample.jacobian.as_ref().expect("checked by caller");
                let slab = j.len() / n_params;
                for &v in &j.data()[q * slab..(q + 1) * slab] {
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
            let var = (s2 / n - (s / n).powi(2)).max(0.0);
            if var > 0.0 {
                1.0 / var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// Loss values of one batch: total and per-term values in active-term order.
pub struct BatchLoss {
    pub total: f64,
    pub terms: Vec<f64>,
    pub weight_grads: Vec<Tensor>,
    pub coeff_grads: Vec<f64>,
}

/// Forward and backward pass for one batch.
pub fn batch_loss(
    model: &OperatorModel,
    spec: &EquationSpec,
    items: &[&TrainItem],
    loss_cfg: &LossConfig,
    points: &SupervisionPoints,
) -> Result<BatchLoss> {
    batch_loss_scaled(model, spec, items, loss_cfg, points, None)
}

fn batch_loss_scaled(
    model: &OperatorModel,
    spec: &EquationSpec,
    items: &[&TrainItem],
    loss_cfg: &LossConfig,
    points: &SupervisionPoints,
    slab_scale: Option<&[f64]>,
) -> Result<BatchLoss> {
    let terms = loss_cfg.regime.terms();
    if model.log_coeffs.len() != terms.len() {
        return Err(Error::invalid(format!(
            "model carries {} loss coefficients but regime {} has {} terms",
            model.log_coeffs.len(),
            loss_cfg.regime,
            terms.len()
        )));
    }
    if items.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (b, c, x) = (items.len(), model.config.input_channels, model.config.points());
    let tape = if loss_cfg.regime.uses_sensitivity() { Tape::recording_tangents() } else { Tape::new() };
    let bound = model.bind(&tape, true);
    let thetas: Vec<Var> = model
        .log_coeffs
        .iter()
        .map(|&t| if loss_cfg.learnable_coeffs { tape.var(Tensor::scalar(t)) } else { tape.constant(Tensor::scalar(t)) })
        .collect();
    let mut data = Vec::with_capacity(b * c * x);
    for it in items {
        data.extend_from_slice(it.lifted.data());
    }
    let xv = tape.constant(Tensor::new(vec![b, c, x], data)?);
    let out = model.forward_var(&bound, xv);
    let mut truth = Vec::with_capacity(b * x);
    for it in items {
        truth.extend_from_slice(it.sample.target.data());
    }
    let truth = Tensor::new(vec![b, x], truth)?;

    let mut losses = Vec::with_capacity(terms.len());
    for term in &terms {
        losses.push(match term {
            LossTerm::Solution => loss_u(out, &truth)?,
            LossTerm::Equation => {
                let ctx = items
                    .iter()
                    .map(|it| it.physics.as_ref().ok_or_else(|| Error::Precondition("batch item lacks a physics context".into())))
                    .collect::<Result<Vec<_>>>()?;
                loss_eq(out, spec, &ctx, loss_cfg.pinn_alpha)?
            }
            LossTerm::Sensitivity => {
                let p = spec.n_params();
                let mut jac = Vec::with_capacity(b * p * x);
                for it in items {
                    let j = it.sample.jacobian.as_ref().ok_or_else(|| Error::Precondition("sample lacks a Jacobian".into()))?;
                    jac.extend_from_slice(j.data());
                }
                let jac = Tensor::new(vec![b, p, x], jac)?;
                let slabs = model.parameter_jacobian_var(spec, xv, out)?;
                loss_s_scaled(&slabs, &jac, points, slab_scale)?
            }
        });
    }
    let total = combine(&losses, &thetas)?;
    let mut wrt = bound.weights.clone();
    wrt.extend(thetas.iter().copied());
    let grads = tape.grad(total, &wrt)?;
    let mut weight_grads = grads.grads;
    let coeff_grads = weight_grads.split_off(bound.weights.len()).iter().map(|g| g.item()).collect();
    Ok(BatchLoss { total: total.item(), terms: losses.iter().map(|l| l.item()).collect(), weight_grads, coeff_grads })
}

/// Trains `model` on the dataset's training split and returns the weights
/// with the lowest validation error.
pub fn train(mut model: OperatorModel, dataset: &Dataset, loss_cfg: &LossConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    loss_cfg.validate()?;
    cfg.validate()?;
    let spec = &dataset.spec;
    model.config.matches(spec)?;
    let uses_eq = loss_cfg.regime.uses_equation();
    let train_set =
        dataset.split(Split::Train).into_iter().map(|s| TrainItem::new(spec, s, uses_eq)).collect::<Result<Vec<_>>>()?;
    let val_set = dataset.split(Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Precondition("training needs nonempty train and validation splits".into()));
    }
    if loss_cfg.regime.uses_sensitivity() && !dataset.has_jacobian() {
        return Err(Error::Precondition(format!(
            "regime {} needs Jacobians, but the dataset has no `jacobian` array",
            loss_cfg.regime
        )));
    }
    let terms = loss_cfg.regime.terms();
    if model.log_coeffs.len() != terms.len() {
        model.log_coeffs = vec![0.0; terms.len()];
    }
    let slab_scale = (loss_cfg.regime.uses_sensitivity() && loss_cfg.standardize_jacobian)
        .then(|| jacobian_scales(&train_set, spec.n_params()));

    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut best = (model.clone(), usize::MAX, f64::INFINITY);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let points = if loss_cfg.regime.uses_sensitivity() {
            sample_supervision_points(spec, loss_cfg.supervision_fraction, cfg.seed.wrapping_add(epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))?
        } else {
            SupervisionPoints::all(spec)
        };
        let mut sums = vec![0.0; terms.len() + 1];
        let mut batches = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &train_set[i]).collect();
            let bl = batch_loss_scaled(&model, spec, &batch, loss_cfg, &points, slab_scale.as_deref())?;
            let finite = bl.total.is_finite()
                && bl.weight_grads.iter().all(|g| g.all_finite())
                && bl.coeff_grads.iter().all(|g| g.is_finite());
            if !finite {
                return Err(Error::NonFinite { what: "training loss", epoch, batch: bi });
            }
            let mut params: Vec<&mut [f64]> = model.weights.iter_mut().map(|w| w.data_mut()).collect();
            let mut grads: Vec<&[f64]> = bl.weight_grads.iter().map(|g| g.data()).collect();
            let frozen = vec![0.0; bl.coeff_grads.len()];
            grads.push(if loss_cfg.learnable_coeffs { &bl.coeff_grads } else { &frozen });
            params.push(&mut model.log_coeffs);
            adam.step(&mut params, &grads);
            sums[0] += bl.total;
            for (k, t) in bl.terms.iter().enumerate() {
                sums[k + 1] += t;
            }
            batches += 1;
        }
        let val = solution_rel_l2(&model, spec, &val_set)?;
        if !val.is_finite() {
            return Err(Error::NonFinite { what: "validation error", epoch, batch: 0 });
        }
        let avg = |k: usize| sums[k] / batches as f64;
        let term_avg = |t: LossTerm| terms.iter().position(|&x| x == t).map(|k| avg(k + 1));
        let record = EpochRecord {
            epoch,
            loss_total: avg(0),
            loss_u: avg(1),
            loss_eq: term_avg(LossTerm::Equation),
            loss_s: term_avg(LossTerm::Sensitivity),
            coeffs: model.log_coeffs.iter().map(|t| t.exp()).collect(),
            val_rel_l2_u: val,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4e}, val rel L2 {:.4e} ({:.1}s)",
            loss_cfg.regime,
            record.loss_total,
            val,
            record.seconds
        );
        history.records.push(record);
        if val < best.2 {
            best = (model.clone(), epoch, val);
        }
    }
    Ok(TrainOutcome { model: best.0, history, best_epoch: best.1, best_val: best.2 })
}
