use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use senso_core::autodiff::{Tape, Var};
use senso_core::datagen::{generate, Dataset, Generator, Sample, Split};
use senso_core::operator::{desk_config, OperatorModel};
use senso_core::solvers::{integrate, EquationKind, EquationSpec, InitialCondition};
use senso_core::training::*;
use senso_core::{Error, Tensor};

fn ode1_data(n: usize, seed: u64, jac: bool) -> Dataset {
    generate(&EquationSpec::new(EquationKind::Ode1), n, seed, Generator::Analytic, jac).unwrap()
}

fn scalar_loss(f: impl for<'t> Fn(&'t Tape) -> Var<'t>) -> f64 {
    let tape = Tape::new();
    f(&tape).item()
}

#[test]
fn loss_u_examples() {
    let truth = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, 4.0]).unwrap();
    let at = |pred: Tensor| scalar_loss(|t| loss_u(t.constant(pred.clone()), &truth).unwrap());
    assert_eq!(at(truth.clone()), 0.0);
    assert!((at(Tensor::zeros(&[2, 3])) - 1.0).abs() < 1e-15);
    assert!((at(truth.scaled(2.0)) - 1.0).abs() < 1e-15);
    let tape = Tape::new();
    let zero_row = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
    assert!(matches!(loss_u(tape.constant(zero_row.clone()), &zero_row), Err(Error::Degenerate(_))));
}

#[test]
fn supervision_point_counts_and_reseeding() {
    let spec = EquationSpec::new(EquationKind::Pde2);
    let pts = sample_supervision_points(&spec, [0.25, 0.25], 1).unwrap();
    assert_eq!((pts.xs.len(), pts.ts.len(), pts.len()), (10, 7, 70));
    assert_eq!(pts.xs.iter().collect::<HashSet<_>>().len(), 10);
    let all = sample_supervision_points(&spec, [1.0, 1.0], 1).unwrap();
    assert_eq!(all, SupervisionPoints::all(&spec));
    let sets: HashSet<Vec<usize>> = (0..10).map(|e| sample_supervision_points(&spec, [0.25, 0.25], e).unwrap().flat()).collect();
    assert_eq!(sets.len(), 10);
    assert!(sample_supervision_points(&spec, [0.0, 0.5], 1).is_err());
    assert!(sample_supervision_points(&spec, [0.5, 1.5], 1).is_err());
}

#[test]
fn loss_s_examples() {
    let spec = EquationSpec::new(EquationKind::Ode1);
    let truth = Tensor::from_fn(&[1, 1, 90], |i| (i as f64).sin());
    let with_offsets = |offsets: &[(usize, f64)], ts: Vec<usize>| {
        let mut pred = truth.reshape(&[1, 90]).unwrap();
        for &(i, d) in offsets {
            pred.data_mut()[i] += d;
        }
        let points = SupervisionPoints::new(&spec, vec![0], ts).unwrap();
        scalar_loss(|t| loss_s(&[t.constant(pred.clone())], &truth, &points).unwrap())
    };
    assert_eq!(with_offsets(&[], vec![3, 40]), 0.0);
    assert!((with_offsets(&[(5, 2.0), (6, 7.0)], vec![5]) - 4.0).abs() < 1e-12);
    assert!((with_offsets(&[(5, 1.0), (9, -3.0)], vec![5, 9]) - 5.0).abs() < 1e-12);
    let empty = SupervisionPoints::new(&spec, vec![0], vec![]).unwrap();
    let tape = Tape::new();
    assert!(loss_s(&[tape.constant(Tensor::zeros(&[1, 90]))], &truth, &empty).is_err());
    assert!(SupervisionPoints::new(&spec, vec![1], vec![0]).is_err());
}

fn exact_batch(kind: EquationKind, seed: u64) -> (EquationSpec, Vec<Sample>) {
    let spec = EquationSpec::new(kind);
    let generator = if kind == EquationKind::Ode1 { Generator::Analytic } else { Generator::ForwardSens };
    let ds = generate(&spec, 2, seed, generator, false).unwrap();
    (spec, ds.samples)
}

fn eq_loss(spec: &EquationSpec, samples: &[Sample], alpha: f64, scale: f64) -> (f64, f64) {
    let tape = Tape::new();
    let x = samples[0].target.len();
    let pred = Tensor::from_fn(&[samples.len(), x], |i| scale * samples[i / x].target.data()[i % x]);
    let ctx: Vec<PhysicsContext> =
        samples.iter().map(|s| PhysicsContext::new(spec, &s.input_steps.scaled(scale), &s.params).unwrap()).collect();
    let refs: Vec<&PhysicsContext> = ctx.iter().collect();
    let parts = loss_eq_parts(tape.constant(pred), spec, &refs).unwrap();
    (parts.total(alpha).item(), parts.residual.item())
}

#[test]
fn solver_solutions_have_a_small_equation_loss() {
    for kind in [EquationKind::Ode1, EquationKind::Ode2, EquationKind::Pde1] {
        let (spec, samples) = exact_batch(kind, 3);
        let (total, residual) = eq_loss(&spec, &samples, 1.0, 1.0);
        assert!(total <= 1e-5, "{kind}: {total}");
        assert!(residual <= total);
    }
}

#[test]
fn first_order_continuation_matches_the_solver() {
    for kind in [EquationKind::Pde2, EquationKind::Pde4, EquationKind::Pde2Zoned] {
        let (spec, samples) = exact_batch(kind, 5);
        let (with_ic, residual) = eq_loss(&spec, &samples, 1.0, 1.0);
        let (without, _) = eq_loss(&spec, &samples, 0.0, 1.0);
        assert_eq!(without, residual);
        assert!(with_ic - without < 1e-6, "{kind}: IC/BC penalty {}", with_ic - without);
    }
}

#[test]
fn equation_loss_without_penalties_is_the_residual_term() {
    let (spec, samples) = exact_batch(EquationKind::Pde2, 4);
    let mut perturbed = samples.clone();
    perturbed[0].target = perturbed[0].target.map(|v| v + 0.1);
    let (total, residual) = eq_loss(&spec, &perturbed, 0.0, 1.0);
    assert_eq!(total, residual);
    let (with_alpha, _) = eq_loss(&spec, &perturbed, 2.0, 1.0);
    assert!(with_alpha > total);
}

#[test]
fn doubling_a_residual_quadruples_the_equation_term() {
    // With α = β = 0 the ODE1 residual is linear in the path.
    let spec = EquationSpec::new(EquationKind::Ode1);
    let p = spec.parameters(vec![0.0, 0.0, 0.3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = Sample {
        params: p,
        amplitude: 1.0,
        input_steps: Tensor::from_fn(&[10], |_| rng.gen_range(-1.0..1.0)),
        target: Tensor::from_fn(&[90], |_| rng.gen_range(-1.0..1.0)),
        jacobian: None,
    };
    let (_, single) = eq_loss(&spec, std::slice::from_ref(&s), 0.0, 1.0);
    let (_, double) = eq_loss(&spec, std::slice::from_ref(&s), 0.0, 2.0);
    assert!(single > 0.0);
    assert!((double / single - 4.0).abs() < 1e-12);
}

#[test]
fn combine_examples() {
    let (a, b) = (0.37, 1.9);
    let got = combine_values(&[a, b], &[1.0, 1.0]).unwrap();
    assert!((got - (a / 2.0 + b / 2.0 + 2.0 * 2f64.ln())).abs() < 1e-14);
    let big = combine_values(&[1.0], &[1e6]).unwrap();
    assert!(big > 20.0);
    assert!(combine_values(&[1.0, 2.0], &[1.0]).is_err());
}

#[test]
fn combine_gradient_matches_finite_differences() {
    let losses = [0.8, 0.05];
    let thetas = [0.3, -0.7];
    let tape = Tape::new();
    let l: Vec<Var> = losses.iter().map(|&v| tape.constant(Tensor::scalar(v))).collect();
    let th: Vec<Var> = thetas.iter().map(|&v| tape.var(Tensor::scalar(v))).collect();
    let total = combine(&l, &th).unwrap();
    let g = tape.grad(total, &th).unwrap();
    let h = 1e-6;
    for i in 0..2 {
        let at = |d: f64| {
            let s: Vec<f64> = thetas.iter().enumerate().map(|(k, &t)| (t + if k == i { d } else { 0.0 }).exp()).collect();
            combine_values(&losses, &s).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let ad = g.grads[i].item();
        assert!((ad - fd).abs() / fd.abs() < 1e-6, "{ad} vs {fd}");
    }
}

fn batch_of(ds: &Dataset, n: usize) -> Vec<TrainItem<'_>> {
    ds.split(Split::Train).into_iter().take(n).map(|s| TrainItem::new(&ds.spec, s, false).unwrap()).collect()
}

#[test]
fn regime_algebra_with_frozen_coefficients() {
    let ds = ode1_data(12, 2, true);
    let spec = &ds.spec;
    let items = batch_of(&ds, 4);
    let batch: Vec<&TrainItem> = items.iter().collect();
    let points = sample_supervision_points(spec, [0.25, 0.25], 9).unwrap();
    let mut model = OperatorModel::new(desk_config(spec).with_width(6), 1).unwrap();
    let frozen = |regime| LossConfig { learnable_coeffs: false, ..LossConfig::new(regime) };
    model.log_coeffs = vec![0.0];
    let plain = batch_loss(&model, spec, &batch, &frozen(Regime::Fno), &points).unwrap();
    model.log_coeffs = vec![0.0, 0.0];
    let sc = batch_loss(&model, spec, &batch, &frozen(Regime::ScFno), &points).unwrap();
    let l_s = sc.terms[1];
    assert!(l_s > 0.0);
    assert!((sc.total - plain.total - (l_s / 2.0 + 2f64.ln())).abs() < 1e-12);
}

#[test]
fn regime_terms() {
    assert_eq!(Regime::Fno.terms(), vec![LossTerm::Solution]);
    assert_eq!(Regime::ScFno.terms(), vec![LossTerm::Solution, LossTerm::Sensitivity]);
    assert_eq!(Regime::FnoPinn.terms(), vec![LossTerm::Solution, LossTerm::Equation]);
    assert_eq!(Regime::ScFnoPinn.terms(), vec![LossTerm::Solution, LossTerm::Equation, LossTerm::Sensitivity]);
    for r in Regime::ALL {
        assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.name()));
    }
    assert!("sc_fno".parse::<Regime>().is_ok());
    assert!("PINN".parse::<Regime>().is_err());
}

#[test]
fn sensitivity_loss_gradient_matches_finite_differences() {
    let ds = ode1_data(10, 4, true);
    let spec = &ds.spec;
    let items = batch_of(&ds, 2);
    let batch: Vec<&TrainItem> = items.iter().collect();
    let points = sample_supervision_points(spec, [1.0, 0.3], 2).unwrap();
    let mut model = OperatorModel::new(desk_config(spec).with_width(4).with_projection_hidden(8), 3).unwrap();
    model.log_coeffs = vec![0.0, 0.0];
    let cfg = LossConfig { learnable_coeffs: false, ..LossConfig::new(Regime::ScFno) };

    // Isolate L_s: gradient of the SC total minus the FNO total.
    let loss_and_grad = |m: &OperatorModel| {
        let sc = batch_loss(m, spec, &batch, &cfg, &points).unwrap();
        let mut fno_model = m.clone();
        fno_model.log_coeffs = vec![0.0];
        let fno = batch_loss(&fno_model, spec, &batch, &LossConfig { regime: Regime::Fno, ..cfg.clone() }, &points).unwrap();
        let g: Vec<Tensor> = sc.weight_grads.iter().zip(&fno.weight_grads).map(|(a, b)| a.zip_map(b, |x, y| 2.0 * (x - y))).collect();
        (sc.terms[1], g)
    };
    let (_, grads) = loss_and_grad(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dir: Vec<Tensor> = model.weights.iter().map(|w| Tensor::from_fn(w.shape(), |_| rng.gen_range(-1.0..1.0))).collect();
    let directional: f64 = grads.iter().zip(&dir).map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>()).sum();
    let h = 1e-5;
    let shifted = |eps: f64| {
        let mut m = model.clone();
        for (w, d) in m.weights.iter_mut().zip(&dir) {
            *w = w.zip_map(d, |a, b| a + eps * b);
        }
        loss_and_grad(&m).0
    };
    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
    assert!((directional - fd).abs() / fd.abs() < 1e-4, "{directional} vs {fd}");
}

#[test]
fn sc_regime_requires_jacobians() {
    let ds = ode1_data(10, 1, false);
    let model = OperatorModel::new(desk_config(&ds.spec).with_width(4), 0).unwrap();
    let err = train(model, &ds, &LossConfig::new(Regime::ScFno), &TrainConfig::default().with_epochs(1)).unwrap_err();
    assert!(matches!(&err, Error::Precondition(m) if m.contains("jacobian")), "{err}");
}

#[test]
fn history_has_one_record_per_epoch() {
    let ds = ode1_data(10, 1, true);
    for regime in Regime::ALL {
        let model = OperatorModel::new(desk_config(&ds.spec).with_width(4), 0).unwrap();
        let out = train(model, &ds, &LossConfig::new(regime), &TrainConfig::for_spec(&ds.spec).with_epochs(3)).unwrap();
        assert_eq!(out.history.len(), 3);
        assert_eq!(out.model.log_coeffs.len(), regime.terms().len());
        for (e, r) in out.history.records.iter().enumerate() {
            assert_eq!(r.epoch, e);
            assert!(r.val_rel_l2_u.is_finite() && r.val_rel_l2_u > 0.0);
            assert_eq!(r.loss_s.is_some(), regime.uses_sensitivity());
            assert_eq!(r.loss_eq.is_some(), regime.uses_equation());
            assert!(r.coeffs.iter().all(|&c| c > 0.0));
        }
        let best = out.history.records.iter().map(|r| r.val_rel_l2_u).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val, best);
        assert_eq!(out.history.records[out.best_epoch].val_rel_l2_u, best);
    }
}

#[test]
fn training_is_deterministic() {
    let ds = ode1_data(12, 6, true);
    let run = || {
        let model = OperatorModel::new(desk_config(&ds.spec).with_width(4), 2).unwrap();
        train(model, &ds, &LossConfig::new(Regime::ScFno), &TrainConfig::for_spec(&ds.spec).with_epochs(2).with_seed(5)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    let losses = |o: &TrainOutcome| o.history.records.iter().map(|r| (r.loss_total, r.loss_s, r.val_rel_l2_u)).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
}

#[test]
fn single_sample_overfit() {
    let ds = ode1_data(10, 8, false).with_train_size(1).unwrap();
    let model = OperatorModel::new(desk_config(&ds.spec), 1).unwrap();
    let cfg = TrainConfig { epochs: 500, batch_size: 1, ..TrainConfig::default() };
    let out = train(model, &ds, &LossConfig::new(Regime::Fno), &cfg).unwrap();
    let last = out.history.records.last().unwrap().loss_u;
    assert!(last < 0.01, "final train rel L2 {last}");
}

#[test]
fn non_finite_weights_abort_with_location() {
    let ds = ode1_data(10, 1, false);
    let mut model = OperatorModel::new(desk_config(&ds.spec).with_width(4), 0).unwrap();
    model.weights[0].data_mut()[0] = f64::NAN;
    let err = train(model, &ds, &LossConfig::new(Regime::Fno), &TrainConfig::default().with_epochs(1)).unwrap_err();
    assert!(matches!(err, Error::NonFinite { epoch: 0, batch: 0, .. }), "{err}");
}

#[test]
fn metrics_of_oracle_zero_and_negated_predictors() {
    let ds = ode1_data(10, 3, true);
    let spec = &ds.spec;
    let samples: Vec<&Sample> = ds.samples.iter().collect();
    let oracle: Vec<_> = samples.iter().map(|s| (s.target.clone(), s.jacobian.clone())).collect();
    let m = metrics_from_predictions(spec, &samples, &oracle).unwrap();
    assert_eq!((m.r2_u, m.rel_l2_u), (1.0, 0.0));
    assert!(m.r2_jac.iter().all(|&r| r == 1.0) && m.rel_l2_jac.iter().all(|&r| r == 0.0));
    assert_eq!(m.mean_rel_l2_jac, Some(0.0));

    let zero: Vec<_> = samples.iter().map(|s| (Tensor::zeros(s.target.shape()), s.jacobian.as_ref().map(|j| j.map(|_| 0.0)))).collect();
    let m = metrics_from_predictions(spec, &samples, &zero).unwrap();
    assert!((m.rel_l2_u - 1.0).abs() < 1e-15);
    assert!(m.rel_l2_jac.iter().all(|&r| (r - 1.0).abs() < 1e-15));

    let negated: Vec<_> = samples.iter().map(|s| (s.target.clone(), s.jacobian.as_ref().map(|j| j.scaled(-1.0)))).collect();
    let m = metrics_from_predictions(spec, &samples, &negated).unwrap();
    assert!(m.r2_jac.iter().all(|&r| r < 0.0));
    let json = m.to_flat_json();
    assert!(json["r2_jac_alpha"].as_f64().unwrap() < 0.0);
    assert!(json["mean_r2_jac"].is_number());
}

#[test]
fn constant_truth_has_no_r2() {
    let spec = EquationSpec::new(EquationKind::Ode1);
    let mut ds = ode1_data(10, 3, false);
    ds.samples.truncate(1);
    ds.samples[0].target = Tensor::full(&[90], 0.7);
    let s: Vec<&Sample> = ds.samples.iter().collect();
    let preds = vec![(Tensor::full(&[90], 0.6), None)];
    assert!(matches!(metrics_from_predictions(&spec, &s, &preds), Err(Error::Degenerate(_))));
}

#[test]
fn evaluate_reports_all_slabs() {
    let ds = ode1_data(20, 2, true);
    let model = OperatorModel::new(desk_config(&ds.spec).with_width(4), 0).unwrap();
    let m = evaluate(&model, &ds.spec, &ds.split(Split::Test)).unwrap();
    assert_eq!(m.n_samples, ds.indices(Split::Test).len());
    assert_eq!(m.r2_jac.len(), 3);
    assert!(m.r2_u.is_finite() && m.min_r2_jac().unwrap().is_finite());
    assert!(evaluate(&model, &ds.spec, &[]).is_err());
}

#[test]
fn perturbed_band_draws() {
    let spec = EquationSpec::new(EquationKind::Pde2);
    let ranges = spec.parameter_ranges();
    for (p, _) in perturbed_parameters(&spec, 0.0, 5, 1).unwrap() {
        assert!(p.values.iter().zip(&ranges).all(|(v, [_, b])| v == b));
    }
    for (p, _) in perturbed_parameters(&spec, 0.4, 50, 1).unwrap() {
        assert!(p.values.iter().zip(&ranges).all(|(&v, &[_, b])| v >= b && v <= 1.4 * b));
    }
    assert!(perturbed_parameters(&spec, -0.1, 5, 1).is_err());
    let pde1 = EquationSpec::new(EquationKind::Pde1);
    assert!(perturbed_parameters(&pde1, 0.4, 20, 3).unwrap().iter().all(|(_, a)| (0.5..=1.5).contains(a)));
}

#[test]
fn perturbed_eval_uses_fresh_solver_truth() {
    let spec = EquationSpec::new(EquationKind::Ode1);
    let samples = perturbed_samples(&spec, 0.4, 6, 2).unwrap();
    for s in &samples {
        let path = integrate(&spec, &s.params, &InitialCondition::standard()).unwrap();
        assert_eq!(s.target, path.time_window(10));
        assert_eq!(s.jacobian.as_ref().unwrap().shape(), &[3, 90]);
    }
    let model = OperatorModel::new(desk_config(&spec).with_width(4), 0).unwrap();
    let m = perturbed_eval(&model, &spec, 0.4, 6, 2).unwrap();
    assert_eq!(m.n_samples, 6);
}

#[test]
fn history_and_metrics_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = ode1_data(10, 1, true);
    let model = OperatorModel::new(desk_config(&ds.spec).with_width(4), 0).unwrap();
    let out = train(model, &ds, &LossConfig::new(Regime::ScFno), &TrainConfig::for_spec(&ds.spec).with_epochs(2)).unwrap();
    let path = dir.path().join("history.csv");
    out.history.write_csv(&path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header[..5], ["epoch", "loss_total", "loss_u", "loss_eq", "loss_s"]);
    assert!(header.contains(&"coeff_1".to_string()) && header.contains(&"val_rel_l2_u".to_string()));
    assert_eq!(reader.records().count(), 2);
    let m = evaluate(&out.model, &ds.spec, &ds.split(Split::Val)).unwrap();
    let mpath = dir.path().join("metrics.json");
    m.write_json(&mpath).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
    assert_eq!(v["r2_u"].as_f64().unwrap(), m.r2_u);
    assert!(v["rel_l2_jac_gamma"].is_number());
}
