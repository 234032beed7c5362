use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use senso_core::datagen::{generate, read_dataset, write_dataset, Dataset, Split};
use senso_core::inversion::{inversion_study, Ode1Oracle, OperatorSurrogate, SolverSurrogate, Surrogate};
use senso_core::operator::OperatorModel;
use senso_core::solvers::{EquationKind, EquationSpec};
use senso_core::training::{evaluate, perturbed_eval, train, Metrics};
use senso_core::verify::verify_all;

use crate::config::{ExperimentConfig, SweepAxis};

/// Offset separating inversion truth draws from the dataset draws of the same seed.
const INVERSION_SEED_OFFSET: u64 = 0x5eed_0001;
/// Offset separating perturbed draws from the dataset draws of the same seed.
const PERTURB_SEED_OFFSET: u64 = 0x5eed_0002;

/// Everything needed to repeat a run: written as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub tool_version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub verify_draws: Option<usize>,
}

impl RunRecord {
    pub fn new(command: &str, config: ExperimentConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            data: None,
            model: None,
            verify_draws: None,
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("cannot access {}", p.display()))
}

/// Creates `out` and refuses locations inside any directory the run reads.
fn prepare_out(out: &Path, inputs: &[&Path]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let out_abs = absolute(out)?;
    for input in inputs {
        let input_abs = absolute(input)?;
        if out_abs.starts_with(&input_abs) {
            bail!("refusing to write into input directory {}", input.display());
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn load_model(dir: &Path) -> Result<(OperatorModel, EquationSpec)> {
    let model = OperatorModel::load(dir).with_context(|| format!("cannot load model from {}", dir.display()))?;
    let spec_path = dir.join("spec.json");
    let text = fs::read_to_string(&spec_path).with_context(|| format!("cannot read {}", spec_path.display()))?;
    let spec: EquationSpec = serde_json::from_str(&text).with_context(|| format!("invalid {}", spec_path.display()))?;
    model.config.matches(&spec)?;
    Ok((model, spec))
}

fn save_model(model: &OperatorModel, spec: &EquationSpec, dir: &Path) -> Result<()> {
    model.save(dir)?;
    write_json(&dir.join("spec.json"), spec)
}

/// Adopts the equation of a dataset or model so the record describes what ran.
fn adopt_spec(cfg: &mut ExperimentConfig, spec: &EquationSpec) {
    cfg.equation = spec.kind;
    cfg.time_points = Some(spec.time_points);
    cfg.zones = spec.zones;
    cfg.duffing_standard = spec.duffing_standard;
}

fn check_spec(cfg: &ExperimentConfig, spec: &EquationSpec, what: &str) -> Result<()> {
    let want = cfg.spec();
    if want != *spec {
        bail!("{what} is for {} but the config describes {}", spec.kind, want.kind);
    }
    Ok(())
}

fn dataset(record: &RunRecord) -> Result<Dataset> {
    let cfg = &record.config;
    match &record.data {
        Some(dir) => {
            let ds = read_dataset(dir).with_context(|| format!("cannot read dataset {}", dir.display()))?;
            check_spec(cfg, &ds.spec, &format!("dataset {}", dir.display()))?;
            Ok(ds)
        }
        None => Ok(generate(&cfg.spec(), cfg.n_samples, cfg.seed, cfg.generator(), cfg.with_jacobian)?),
    }
}

fn train_and_report(record: &RunRecord, ds: &Dataset, out: &Path) -> Result<Metrics> {
    let cfg = &record.config;
    let model = OperatorModel::new(cfg.operator_config()?, cfg.seed)?;
    let outcome = train(model, ds, &cfg.loss_config(), &cfg.train_config())?;
    save_model(&outcome.model, &ds.spec, &out.join("model"))?;
    outcome.history.write_csv(&out.join("history.csv"))?;
    let test = ds.split(Split::Test);
    let metrics = evaluate(&outcome.model, &ds.spec, &test)?;
    metrics.write_json(&out.join("metrics.json"))?;
    log::info!(
        "{} {}: best epoch {} (val rel L² {:.4}), test R²(u) {:.4}",
        ds.spec.kind,
        cfg.regime,
        outcome.best_epoch,
        outcome.best_val,
        metrics.r2_u
    );
    Ok(metrics)
}

fn sweep_row(value: f64, n_train: usize, m: &Metrics) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    vec![
        value.to_string(),
        n_train.to_string(),
        m.r2_u.to_string(),
        m.rel_l2_u.to_string(),
        opt(m.mean_r2_jac),
        opt(m.mean_rel_l2_jac),
        opt(m.min_r2_jac()),
    ]
}

fn write_sweep_csv(path: &Path, axis: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([axis, "n_train", "r2_u", "rel_l2_u", "mean_r2_jac", "mean_rel_l2_jac", "min_r2_jac"])?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs a recorded command, writing its outputs and `run.json` into `out`.
pub fn execute(mut record: RunRecord, out: Option<&Path>) -> Result<()> {
    let mut inputs: Vec<PathBuf> = Vec::new();
    inputs.extend(record.data.clone());
    inputs.extend(record.model.clone());
    if let Some(dir) = &record.model {
        let (_, spec) = load_model(dir)?;
        adopt_spec(&mut record.config, &spec);
    } else if let Some(dir) = &record.data {
        let ds = read_dataset(dir).with_context(|| format!("cannot read dataset {}", dir.display()))?;
        adopt_spec(&mut record.config, &ds.spec);
    }
    record.config = record.config.clone().resolve()?;
    if let Some(out) = out {
        let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        prepare_out(out, &refs)?;
    }
    let need_out = || out.ok_or_else(|| anyhow!("`{}` needs --out", record.command));

    match record.command.as_str() {
        "gen" => {
            let out = need_out()?;
            let cfg = &record.config;
            let ds = generate(&cfg.spec(), cfg.n_samples, cfg.seed, cfg.generator(), cfg.with_jacobian)?;
            write_dataset(&ds, out)?;
            log::info!("{}: wrote {} samples ({} resampled) to {}", cfg.equation, ds.len(), ds.resampled, out.display());
        }
        "train" => {
            let out = need_out()?;
            let ds = dataset(&record)?;
            train_and_report(&record, &ds, out)?;
        }
        "eval" => {
            let out = need_out()?;
            let (model, spec) = load_model(record.model.as_deref().expect("eval has a model"))?;
            let ds = dataset(&record)?;
            check_spec(&record.config, &spec, "model")?;
            evaluate(&model, &spec, &ds.split(Split::Test))?.write_json(&out.join("metrics.json"))?;
        }
        "perturb" => {
            let out = need_out()?;
            let (model, spec) = load_model(record.model.as_deref().expect("perturb has a model"))?;
            let p = &record.config.perturb;
            let m = perturbed_eval(&model, &spec, p.lambda, p.n_samples, record.config.seed.wrapping_add(PERTURB_SEED_OFFSET))?;
            m.write_json(&out.join("metrics.json"))?;
            log::info!("lambda {}: rel L²(u) {:.4}", p.lambda, m.rel_l2_u);
        }
        "sweep" => {
            let out = need_out()?;
            let cfg = &record.config;
            if cfg.sweep.values.is_empty() && cfg.sweep.axis != SweepAxis::None {
                bail!("sweep has no values");
            }
            let mut rows = Vec::new();
            match cfg.sweep.axis {
                SweepAxis::TrainSize => {
                    let ds = dataset(&record)?;
                    for &v in &cfg.sweep.values {
                        let n = v as usize;
                        let dir = out.join(format!("size_{n}"));
                        fs::create_dir_all(&dir)?;
                        let m = train_and_report(&record, &ds.with_train_size(n)?, &dir)?;
                        rows.push(sweep_row(v, n, &m));
                    }
                    write_sweep_csv(&out.join("sweep.csv"), "train_size", &rows)?;
                }
                SweepAxis::Lambda => {
                    let dir = record.model.as_deref().ok_or_else(|| anyhow!("a lambda sweep needs --model"))?;
                    let (model, spec) = load_model(dir)?;
                    for &lambda in &cfg.sweep.values {
                        let sub = out.join(format!("lambda_{lambda}"));
                        fs::create_dir_all(&sub)?;
                        let m = perturbed_eval(&model, &spec, lambda, cfg.perturb.n_samples, cfg.seed.wrapping_add(PERTURB_SEED_OFFSET))?;
                        m.write_json(&sub.join("metrics.json"))?;
                        rows.push(sweep_row(lambda, 0, &m));
                    }
                    write_sweep_csv(&out.join("sweep.csv"), "lambda", &rows)?;
                }
                SweepAxis::None => bail!("sweep needs --sizes or a sweep axis in the config"),
            }
        }
        "invert" => {
            let out = need_out()?;
            let cfg = &record.config;
            let spec = cfg.spec();
            let loaded = record.model.as_deref().map(load_model).transpose()?;
            let solver;
            let oracle;
            let operator;
            let surrogate: &dyn Surrogate = match &loaded {
                Some((model, _)) => {
                    operator = OperatorSurrogate::new(model, &spec)?;
                    &operator
                }
                None if spec.kind == EquationKind::Ode1 => {
                    oracle = Ode1Oracle::new(&spec)?;
                    &oracle
                }
                None => {
                    solver = SolverSurrogate::new(&spec)?;
                    &solver
                }
            };
            let inv = &cfg.inversion;
            let table = inversion_study(
                surrogate,
                inv.mode,
                inv.n_instances,
                cfg.seed.wrapping_add(INVERSION_SEED_OFFSET),
                &cfg.inversion_config(),
            )?;
            table.write(out)?;
            for p in &table.summary.parameters {
                log::info!("{}: R² {:?}, rel L² {:?}", p.name, p.r2, p.rel_l2);
            }
        }
        "verify" => {
            let draws = record.verify_draws.unwrap_or(200);
            let report = verify_all(draws, record.config.seed, 20)?;
            let f = &report.solver;
            for (label, m) in [("forward sensitivities", &f.forward), ("finite differences", &f.finite_difference)] {
                println!("{label} vs ODE1 closed form ({} draws, {:.2}s):", f.n_draws, m.seconds);
                for s in &m.slabs {
                    println!("  {:<6} R² {:.6}  rel L² {:.3e}", s.name, s.r2, s.rel_l2);
                }
            }
            println!("RK4 error ratio N=100/N=200: {:.3}", report.rk4_order_ratio);
            let a = &report.autodiff;
            println!(
                "gradcheck max rel error over {} primitives × {} seeds: {:.3e}",
                a.primitives.len(),
                a.seeds,
                a.max_gradcheck_error()
            );
            println!("DFT round trip {:.3e}, Parseval {:.3e}, second order {:.3e}", a.dft_round_trip, a.parseval, a.second_order);
            println!("verification {}", if report.passed { "PASSED" } else { "FAILED" });
            if let Some(out) = out {
                write_json(&out.join("verify.json"), &report)?;
            }
            if !report.passed {
                bail!("verification failed");
            }
        }
        other => bail!("unknown command `{other}` in run record"),
    }
    if let Some(out) = out {
        write_json(&out.join("run.json"), &record)?;
    }
    Ok(())
}
