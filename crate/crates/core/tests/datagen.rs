use std::f64::consts::PI;
use std::fs;

use senso_core::datagen::*;
use senso_core::metrics::r2;
use senso_core::solvers::{ode1_analytic, EquationKind, EquationSpec};
use senso_core::Error;

fn ode1() -> EquationSpec {
    EquationSpec::new(EquationKind::Ode1)
}

#[test]
fn parameter_draws_respect_ranges_and_seed() {
    let ps = sample_parameters(&ode1(), 3, 7).unwrap();
    assert_eq!(ps.len(), 3);
    for p in &ps {
        assert!((1.0..=3.0).contains(&p.values[0]) && (1.0..=3.0).contains(&p.values[1]));
        assert!((0.0..=1.0).contains(&p.values[2]));
    }
    assert_eq!(ps, sample_parameters(&ode1(), 3, 7).unwrap());
    assert_ne!(ps, sample_parameters(&ode1(), 3, 8).unwrap());
    assert!(sample_parameters(&ode1(), 0, 7).is_err());
}

#[test]
fn draws_do_not_depend_on_sample_count() {
    let short = sample_parameters(&ode1(), 5, 1).unwrap();
    let long = sample_parameters(&ode1(), 50, 1).unwrap();
    assert_eq!(short[..], long[..5]);
}

#[test]
fn analytic_ode1_dataset() {
    let ds = generate(&ode1(), 10, 3, Generator::Analytic, true).unwrap();
    let counts = [Split::Train, Split::Val, Split::Test].map(|s| ds.indices(s).len());
    assert_eq!(counts[0], 7);
    assert!((1..=2).contains(&counts[1]) && (1..=2).contains(&counts[2]));
    assert_eq!(counts.iter().sum::<usize>(), 10);
    for s in &ds.samples {
        assert_eq!(s.input_steps.shape(), &[10]);
        assert_eq!(s.target.shape(), &[90]);
        let jac = s.jacobian.as_ref().unwrap();
        assert_eq!(jac.shape(), &[3, 90]);
        let expect = PI * (s.params.values[2] * PI).cos();
        assert!(jac.data()[180..].iter().all(|&v| v == expect));
    }
}

#[test]
fn pde2_jacobian_shape() {
    let spec = EquationSpec::new(EquationKind::Pde2);
    let ds = generate(&spec, 4, 1, Generator::ForwardSens, true).unwrap();
    for s in &ds.samples {
        assert_eq!(s.jacobian.as_ref().unwrap().shape(), &[4, 40, 25]);
        assert_eq!(s.input_steps.shape(), &[40, 5]);
    }
}

#[test]
fn analytic_generator_is_ode1_only() {
    let spec = EquationSpec::new(EquationKind::Pde2);
    assert!(matches!(generate(&spec, 4, 1, Generator::Analytic, true), Err(Error::InvalidArgument(_))));
}

#[test]
fn generation_is_deterministic_and_within_ranges() {
    let spec = EquationSpec::new(EquationKind::Pde4);
    let a = generate(&spec, 6, 11, Generator::ForwardSens, true).unwrap();
    let b = generate(&spec, 6, 11, Generator::ForwardSens, true).unwrap();
    assert_eq!(a, b);
    assert!(a.samples.iter().all(|s| s.params.in_range()));
    let pde1 = generate(&EquationSpec::new(EquationKind::Pde1), 6, 2, Generator::ForwardSens, false).unwrap();
    assert!(pde1.samples.iter().all(|s| (0.5..=1.5).contains(&s.amplitude) && s.jacobian.is_none()));
}

#[test]
fn held_out_draws_differ_from_training_draws() {
    let ds = generate(&ode1(), 40, 5, Generator::Analytic, false).unwrap();
    let train: Vec<_> = ds.split(Split::Train).iter().map(|s| s.params.values.clone()).collect();
    for split in [Split::Val, Split::Test] {
        for s in ds.split(split) {
            assert!(!train.contains(&s.params.values));
        }
    }
}

#[test]
fn archived_forward_jacobians_match_closed_form() {
    let ds = generate(&ode1(), 10, 21, Generator::ForwardSens, true).unwrap();
    let times = ode1().times();
    for s in &ds.samples {
        let (_, exact) = ode1_analytic(&s.params, &times).unwrap();
        let jac = s.jacobian.as_ref().unwrap();
        for q in 0..2 {
            let truth = &exact.slab(q)[10..];
            let got = &jac.data()[q * 90..(q + 1) * 90];
            assert!(r2(got, truth).unwrap() >= 0.99);
        }
    }
}

#[test]
fn round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for (spec, generator) in [(ode1(), Generator::Analytic), (EquationSpec::new(EquationKind::Pde1), Generator::Fd)] {
        let ds = generate(&spec, 5, 9, generator, true).unwrap();
        let path = dir.path().join(spec.kind.name());
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            assert!(a.target.data().iter().zip(b.target.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn truncated_array_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&ode1(), 4, 1, Generator::Analytic, true).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let file = dir.path().join("target.bin");
    let bytes = fs::read(&file).unwrap();
    fs::write(&file, &bytes[..bytes.len() - 5]).unwrap();
    match read_dataset(dir.path()) {
        Err(Error::Integrity { field, .. }) => assert_eq!(field, "target"),
        other => panic!("expected integrity error, got {other:?}"),
    }
}

#[test]
fn manifest_shape_mismatch_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&ode1(), 4, 1, Generator::Analytic, true).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let arrays = manifest["arrays"].as_array_mut().unwrap();
    let jac = arrays.iter_mut().find(|a| a["name"] == "jacobian").unwrap();
    jac["shape"] = serde_json::json!([4, 2, 90]);
    fs::write(&path, manifest.to_string()).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Integrity { field, .. }) if field == "jacobian"));
}

#[test]
fn other_manifest_versions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&ode1(), 4, 1, Generator::Analytic, false).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = fs::read_to_string(&path).unwrap().replacen("\"version\": 1", "\"version\": 2", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::UnsupportedVersion(2))));
}

#[test]
fn split_fractions() {
    for n in [1, 2, 7, 10, 33, 100, 500] {
        let s = assign_splits(n);
        let train = s.iter().filter(|&&t| t == Split::Train).count();
        let val = s.iter().filter(|&&t| t == Split::Val).count();
        assert!((train as f64 - 0.7 * n as f64).abs() <= 1.0);
        assert!((val as f64 - 0.15 * n as f64).abs() <= 1.0);
        assert_eq!(s.len(), n);
    }
}

#[test]
fn train_size_subset_keeps_held_out_samples() {
    let ds = generate(&ode1(), 20, 1, Generator::Analytic, false).unwrap();
    let small = ds.with_train_size(5).unwrap();
    assert_eq!(small.indices(Split::Train).len(), 5);
    assert_eq!(small.split(Split::Test), ds.split(Split::Test));
    assert!(ds.with_train_size(0).is_err());
}
