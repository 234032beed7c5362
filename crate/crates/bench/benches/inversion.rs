use criterion::{criterion_group, criterion_main, Criterion};
use senso_core::datagen::{make_sample, Generator};
use senso_core::inversion::{invert, InversionConfig, Observation, Ode1Oracle, OperatorSurrogate};
use senso_core::operator::{desk_config, OperatorModel};
use senso_core::solvers::{EquationKind, EquationSpec};

fn single_alpha(c: &mut Criterion) {
    let spec = EquationSpec::new(EquationKind::Ode1);
    let p = spec.parameters(vec![2.0, 1.5, 0.3]).unwrap();
    let obs = Observation::from_sample(&make_sample(&spec, p.clone(), 1.0, Generator::Analytic, false).unwrap());
    let cfg = InversionConfig { restarts: 1, steps: 100, polish_steps: 5, ..InversionConfig::default() };
    let oracle = Ode1Oracle::new(&spec).unwrap();
    let model = OperatorModel::new(desk_config(&spec), 0).unwrap();
    let operator = OperatorSurrogate::new(&model, &spec).unwrap();

    let mut group = c.benchmark_group("invert_alpha");
    group.sample_size(10);
    group.bench_function("oracle", |b| b.iter(|| invert(&oracle, &obs, &p, &cfg).unwrap()));
    group.bench_function("operator", |b| b.iter(|| invert(&operator, &obs, &p, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, single_alpha);
criterion_main!(benches);
