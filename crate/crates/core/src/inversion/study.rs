use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::invert::{invert, InversionConfig};
use super::surrogate::{Observation, Surrogate};
use crate::datagen::{generate, Generator};
use crate::error::{Error, Result};
use crate::metrics::{r2, rel_l2};
use crate::solvers::EquationSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMode {
    /// Only `alpha` (the first zone's `alpha_0` for the zoned equation) is free.
    Single,
    /// Every parameter is free.
    All,
}

impl fmt::Display for StudyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyMode::Single => "single",
            StudyMode::All => "all",
        })
    }
}

impl FromStr for StudyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(StudyMode::Single),
            "all" => Ok(StudyMode::All),
            _ => Err(Error::invalid(format!("unknown inversion mode `{s}` (expected `single` or `all`)"))),
        }
    }
}

/// Parameters left free by a study mode.
pub fn study_free_parameters(spec: &EquationSpec, mode: StudyMode) -> Result<Vec<String>> {
    let names = spec.parameter_names();
    match mode {
        StudyMode::All => Ok(names),
        StudyMode::Single => names
            .into_iter()
            .find(|n| n == "alpha" || n == "alpha_0")
            .map(|n| vec![n])
            .ok_or_else(|| Error::invalid(format!("{} has no alpha parameter for a single-parameter study", spec.kind))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub instance: usize,
    pub parameter: String,
    #[serde(rename = "true")]
    pub true_value: f64,
    pub estimated: f64,
    /// Relative L² misfit of the instance's inversion.
    pub misfit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    /// `None` when the true values of the instances do not vary.
    pub r2: Option<f64>,
    pub rel_l2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub equation: String,
    pub mode: StudyMode,
    pub n_instances: usize,
    pub seed: u64,
    pub parameters: Vec<ParameterSummary>,
    pub mean_misfit: f64,
    pub max_misfit: f64,
    pub discarded_restarts: usize,
}

impl StudySummary {
    pub fn r2_of(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).and_then(|p| p.r2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    pub summary: StudySummary,
}

impl StudyTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok(())
    }

    /// Writes `inversion.csv` and `inversion_summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(&dir.join("inversion.csv"))?;
        self.write_summary(&dir.join("inversion_summary.json"))
    }
}

/// Inverts `n_instances` fresh solver paths through `surrogate`.
///
/// Truth parameters come from the usual sampling ranges under `seed`; the
/// observed paths are solver outputs. Only the parameters selected by `mode`
/// are estimated, the rest are passed as known. `cfg.free` is ignored.
pub fn inversion_study(
    surrogate: &dyn Surrogate,
    mode: StudyMode,
    n_instances: usize,
    seed: u64,
    cfg: &InversionConfig,
) -> Result<StudyTable> {
    let spec = surrogate.spec();
    if n_instances == 0 {
        return Err(Error::invalid("an inversion study needs at least one instance"));
    }
    let free = study_free_parameters(spec, mode)?;
    let cfg = InversionConfig { free: free.clone(), ..cfg.clone() };
    cfg.validate(spec)?;
    let truth = generate(spec, n_instances, seed, Generator::ForwardSens, false)?;
    let results: Vec<_> = truth
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let inst_cfg = InversionConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
            invert(surrogate, &Observation::from_sample(sample), &sample.params, &inst_cfg)
        })
        .collect();

    let mut rows = Vec::with_capacity(n_instances * free.len());
    let mut misfits = Vec::with_capacity(n_instances);
    let mut discarded = 0;
    for (i, (res, sample)) in results.into_iter().zip(&truth.samples).enumerate() {
        let inv = res?;
        discarded += inv.discarded;
        misfits.push(inv.misfit);
        for (name, est) in free.iter().zip(inv.free_values()) {
            rows.push(StudyRow {
                instance: i,
                parameter: name.clone(),
                true_value: sample.params.get(name).expect("spec parameter"),
                estimated: est,
                misfit: inv.misfit,
            });
        }
    }
    let parameters = free
        .iter()
        .map(|name| {
            let (est, tru): (Vec<f64>, Vec<f64>) =
                rows.iter().filter(|r| &r.parameter == name).map(|r| (r.estimated, r.true_value)).unzip();
            ParameterSummary { name: name.clone(), r2: r2(&est, &tru).ok(), rel_l2: rel_l2(&est, &tru).ok() }
        })
        .collect();
    let summary = StudySummary {
        equation: spec.kind.name().to_string(),
        mode,
        n_instances,
        seed,
        parameters,
        mean_misfit: misfits.iter().sum::<f64>() / n_instances as f64,
        max_misfit: misfits.iter().copied().fold(0.0, f64::max),
        discarded_restarts: discarded,
    };
    Ok(StudyTable { rows, summary })
}
