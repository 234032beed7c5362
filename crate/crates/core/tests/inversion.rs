use senso_core::datagen::{make_sample, Generator};
use senso_core::inversion::{
    invert, inversion_bounds, inversion_study, study_free_parameters, Inversion, InversionConfig, Observation, Ode1Oracle,
    OperatorSurrogate, SolverSurrogate, StudyMode, Surrogate, SurrogateOutput,
};
use senso_core::operator::{desk_config, OperatorModel};
use senso_core::solvers::{EquationKind, EquationSpec, ParameterVector};
use senso_core::Error;

fn ode1() -> EquationSpec {
    EquationSpec::new(EquationKind::Ode1)
}

fn ode1_observation(values: [f64; 3]) -> (Observation, ParameterVector) {
    let spec = ode1();
    let p = spec.parameters(values.to_vec()).unwrap();
    let s = make_sample(&spec, p.clone(), 1.0, Generator::Analytic, false).unwrap();
    (Observation::from_sample(&s), p)
}

fn quick(free: &[&str]) -> InversionConfig {
    InversionConfig { steps: 150, ..InversionConfig::default() }.with_free(free.iter().copied())
}

#[test]
fn oracle_recovers_alpha() {
    let (obs, truth) = ode1_observation([2.0, 1.7, 0.3]);
    let oracle = Ode1Oracle::new(&ode1()).unwrap();
    let inv = invert(&oracle, &obs, &truth, &InversionConfig::default()).unwrap();
    let alpha = inv.estimate.get("alpha").unwrap();
    assert!((alpha - 2.0).abs() < 1e-2, "alpha = {alpha}");
    assert_eq!(inv.estimate.get("beta"), Some(1.7));
}

#[test]
fn empty_or_unknown_free_set_is_rejected() {
    let (obs, truth) = ode1_observation([2.0, 1.7, 0.3]);
    let oracle = Ode1Oracle::new(&ode1()).unwrap();
    let empty = InversionConfig::default().with_free(Vec::<String>::new());
    assert!(matches!(invert(&oracle, &obs, &truth, &empty), Err(Error::InvalidArgument(_))));
    assert!(invert(&oracle, &obs, &truth, &quick(&["kappa"])).is_err());
    assert!(invert(&oracle, &obs, &truth, &quick(&["alpha", "alpha"])).is_err());
}

#[test]
fn returned_misfit_is_the_minimum_over_restarts() {
    let (obs, truth) = ode1_observation([1.3, 2.6, 0.2]);
    let oracle = Ode1Oracle::new(&ode1()).unwrap();
    let cfg = InversionConfig { restarts: 3, steps: 30, polish_steps: 0, ..quick(&["alpha", "beta"]) };
    let inv = invert(&oracle, &obs, &truth, &cfg).unwrap();
    assert_eq!(inv.restarts.len(), 3);
    assert!(inv.restarts.iter().all(|r| inv.misfit <= r.misfit));
    assert!(inv.restarts.iter().any(|r| r.misfit == inv.misfit));
}

#[test]
fn restarts_start_at_distinct_points_inside_the_ranges() {
    let (obs, truth) = ode1_observation([1.3, 2.6, 0.2]);
    let oracle = Ode1Oracle::new(&ode1()).unwrap();
    let inv = invert(&oracle, &obs, &truth, &InversionConfig { restarts: 4, steps: 1, ..quick(&["alpha", "beta"]) }).unwrap();
    for r in &inv.restarts {
        assert!(r.start.iter().all(|v| (1.0..=3.0).contains(v)), "{:?}", r.start);
    }
    for (i, a) in inv.restarts.iter().enumerate() {
        for b in &inv.restarts[i + 1..] {
            assert_ne!(a.start, b.start);
        }
    }
}

#[test]
fn every_iterate_stays_inside_the_widened_bounds() {
    // Truth sits outside the widened bounds, so no iterate can reach it.
    let spec = ode1();
    let (obs, truth) = ode1_observation([3.9, 1.2, 0.7]);
    let oracle = Ode1Oracle::new(&spec).unwrap();
    let cfg = InversionConfig { record_trace: true, lr: 0.3, ..quick(&["alpha", "beta", "gamma"]) };
    let inv = invert(&oracle, &obs, &truth, &cfg).unwrap();
    let bounds = inversion_bounds(&spec, cfg.margin);
    let mut visited = 0;
    for r in &inv.restarts {
        assert!(!r.trace.is_empty());
        for it in &r.trace {
            for (v, b) in it.iter().zip(&bounds) {
                assert!(*v >= b[0] && *v <= b[1], "{v} outside {b:?}");
            }
            visited += 1;
        }
    }
    assert!(visited > cfg.steps);
    let alpha = inv.estimate.get("alpha").unwrap();
    assert!(alpha >= bounds[0][0] && alpha <= bounds[0][1], "alpha = {alpha}");
}

#[test]
fn bounds_widen_each_range_by_the_margin() {
    let b = inversion_bounds(&ode1(), 0.2);
    assert_eq!(b.len(), 3);
    for (got, want) in b.iter().zip([[0.6, 3.4], [0.6, 3.4], [-0.2, 1.2]]) {
        assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12, "{got:?}");
    }
}

#[test]
fn oracle_data_is_reproduced_to_tiny_misfit() {
    let (obs, truth) = ode1_observation([2.4, 1.1, 0.35]);
    let oracle = Ode1Oracle::new(&ode1()).unwrap();
    let inv = invert(&oracle, &obs, &truth, &InversionConfig::default().with_free(["alpha", "beta"])).unwrap();
    assert!(inv.misfit < 1e-6, "misfit {}", inv.misfit);
    assert!((inv.estimate.get("beta").unwrap() - 1.1).abs() < 1e-4);
}

fn small_operator(spec: &EquationSpec) -> OperatorModel {
    OperatorModel::new(desk_config(spec).with_width(6).with_projection_hidden(12), 3).unwrap()
}

#[test]
fn operator_inverts_its_own_predictions() {
    let spec = ode1();
    let model = small_operator(&spec);
    let surrogate = OperatorSurrogate::new(&model, &spec).unwrap();
    let (mut obs, truth) = ode1_observation([1.8, 2.2, 0.4]);
    obs.target = model_prediction(&surrogate, &obs, &truth, &spec);
    let inv = invert(&surrogate, &obs, &truth, &InversionConfig { steps: 200, ..InversionConfig::default() }).unwrap();
    assert!(inv.misfit < 1e-6, "misfit {}", inv.misfit);
}

fn model_prediction(s: &dyn Surrogate, obs: &Observation, p: &ParameterVector, spec: &EquationSpec) -> senso_core::Tensor {
    let SurrogateOutput { u, .. } = s.evaluate(obs, p, &[]).unwrap();
    senso_core::Tensor::new(spec.target_shape(), u).unwrap()
}

#[test]
fn operator_jacobian_matches_the_descent_direction() {
    let spec = ode1();
    let model = small_operator(&spec);
    let surrogate = OperatorSurrogate::new(&model, &spec).unwrap();
    let (obs, p) = ode1_observation([1.8, 2.2, 0.4]);
    let out = surrogate.evaluate(&obs, &p, &[0]).unwrap();
    let x = out.u.len();
    let h = 1e-5;
    let up = surrogate.evaluate(&obs, &p.with_value(0, 1.8 + h), &[]).unwrap().u;
    let dn = surrogate.evaluate(&obs, &p.with_value(0, 1.8 - h), &[]).unwrap().u;
    for i in 0..x {
        let fd = (up[i] - dn[i]) / (2.0 * h);
        assert!((fd - out.jacobian[i]).abs() < 1e-6 * (1.0 + fd.abs()), "point {i}: {fd} vs {}", out.jacobian[i]);
    }
}

#[test]
fn solver_surrogate_recovers_an_ode2_parameter() {
    let spec = EquationSpec::new(EquationKind::Ode2);
    let p = spec.parameters(vec![0.04, 0.02, 35.0, 1.0, 0.4, 0.1, 0.1]).unwrap();
    let sample = make_sample(&spec, p.clone(), 1.0, Generator::ForwardSens, false).unwrap();
    let surrogate = SolverSurrogate::new(&spec).unwrap();
    let cfg = InversionConfig { restarts: 2, steps: 60, polish_steps: 15, ..InversionConfig::default().with_free(["gamma"]) };
    let inv = invert(&surrogate, &Observation::from_sample(&sample), &p, &cfg).unwrap();
    let g = inv.estimate.get("gamma").unwrap();
    assert!((g - 35.0).abs() < 1e-3, "gamma = {g}, misfit {}", inv.misfit);
}

#[test]
fn inversion_is_deterministic() {
    let (obs, truth) = ode1_observation([2.2, 1.4, 0.6]);
    let oracle = Ode1Oracle::new(&ode1()).unwrap();
    let cfg = InversionConfig { seed: 11, ..quick(&["alpha", "gamma"]) };
    let a: Inversion = invert(&oracle, &obs, &truth, &cfg).unwrap();
    let b = invert(&oracle, &obs, &truth, &cfg).unwrap();
    assert_eq!(a, b);
}

/// Oracle that fails below a threshold of alpha.
struct Fragile {
    inner: Ode1Oracle,
    fail_below: f64,
}

impl Surrogate for Fragile {
    fn spec(&self) -> &EquationSpec {
        self.inner.spec()
    }

    fn evaluate(&self, obs: &Observation, p: &ParameterVector, wanted: &[usize]) -> senso_core::Result<SurrogateOutput> {
        let mut out = self.inner.evaluate(obs, p, wanted)?;
        if p.values[0] < self.fail_below {
            out.u[0] = f64::NAN;
        }
        Ok(out)
    }
}

#[test]
fn nonfinite_restarts_are_discarded() {
    let (obs, truth) = ode1_observation([2.5, 1.4, 0.6]);
    let cfg = InversionConfig { restarts: 6, ..quick(&["alpha"]) };
    let partial = Fragile { inner: Ode1Oracle::new(&ode1()).unwrap(), fail_below: 1.8 };
    let inv = invert(&partial, &obs, &truth, &cfg).unwrap();
    assert!(inv.discarded > 0 && !inv.restarts.is_empty());
    assert_eq!(inv.discarded + inv.restarts.len(), 6);
    assert!(inv.misfit.is_finite());

    let broken = Fragile { inner: Ode1Oracle::new(&ode1()).unwrap(), fail_below: 10.0 };
    assert!(matches!(invert(&broken, &obs, &truth, &cfg), Err(Error::Degenerate(_))));
}

#[test]
fn study_modes_select_free_parameters() {
    assert_eq!(study_free_parameters(&ode1(), StudyMode::Single).unwrap(), vec!["alpha"]);
    assert_eq!(study_free_parameters(&ode1(), StudyMode::All).unwrap().len(), 3);
    let zoned = EquationSpec::new(EquationKind::Pde2Zoned);
    assert_eq!(study_free_parameters(&zoned, StudyMode::Single).unwrap(), vec!["alpha_0"]);
    assert!(study_free_parameters(&EquationSpec::new(EquationKind::Pde1), StudyMode::Single).unwrap() == vec!["alpha"]);
    assert_eq!("ALL".parse::<StudyMode>().unwrap(), StudyMode::All);
    assert!("both".parse::<StudyMode>().is_err());
}

#[test]
fn oracle_study_recovers_alpha_and_writes_outputs() {
    let oracle = Ode1Oracle::new(&ode1()).unwrap();
    let table = inversion_study(&oracle, StudyMode::Single, 12, 5, &InversionConfig { steps: 200, ..Default::default() }).unwrap();
    assert_eq!(table.rows.len(), 12);
    assert!(table.summary.r2_of("alpha").unwrap() > 0.999, "{:?}", table.summary);
    assert!(table.summary.max_misfit < 1e-4);

    let all = inversion_study(&oracle, StudyMode::All, 4, 5, &quick(&[])).unwrap();
    assert_eq!(all.rows.len(), 4 * 3);
    assert!(all.rows.iter().all(|r| r.instance < 4));

    let dir = tempfile::tempdir().unwrap();
    table.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("inversion.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "instance,parameter,true,estimated,misfit");
    assert_eq!(lines.count(), 12);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("inversion_summary.json")).unwrap()).unwrap();
    assert_eq!(json["mode"], "single");
    assert_eq!(json["n_instances"], 12);
}

#[test]
fn study_rejects_zero_instances() {
    let oracle = Ode1Oracle::new(&ode1()).unwrap();
    assert!(inversion_study(&oracle, StudyMode::Single, 0, 1, &InversionConfig::default()).is_err());
}
