use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use senso_core::datagen::{generate, Generator};
use senso_core::operator::{desk_config, lift_batch, OperatorModel};
use senso_core::solvers::{EquationKind, EquationSpec};
use senso_core::training::{batch_loss, LossConfig, Regime, SupervisionPoints, TrainItem};

fn prediction(c: &mut Criterion) {
    let mut group = c.benchmark_group("operator");
    group.sample_size(20);
    for kind in [EquationKind::Ode1, EquationKind::Pde2] {
        let spec = EquationSpec::new(kind);
        let ds = generate(&spec, 4, 1, Generator::ForwardSens, false).unwrap();
        let batch = lift_batch(&ds.samples, &spec).unwrap();
        let model = OperatorModel::new(desk_config(&spec), 0).unwrap();
        group.bench_function(BenchmarkId::new("predict_b4", kind.name()), |b| b.iter(|| model.predict(&batch).unwrap()));
        group.bench_function(BenchmarkId::new("predict_with_jacobian_b4", kind.name()), |b| {
            b.iter(|| model.predict_with_jacobian(&spec, &batch).unwrap())
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_loss");
    group.sample_size(10);
    let spec = EquationSpec::new(EquationKind::Ode1);
    let ds = generate(&spec, 16, 1, Generator::Analytic, true).unwrap();
    let model = OperatorModel::new(desk_config(&spec), 0).unwrap();
    let points = SupervisionPoints::all(&spec);
    for regime in Regime::ALL {
        let items: Vec<TrainItem> = ds.samples.iter().map(|s| TrainItem::new(&spec, s, regime.uses_equation()).unwrap()).collect();
        let refs: Vec<&TrainItem> = items.iter().collect();
        let loss = LossConfig::new(regime);
        group.bench_function(BenchmarkId::new("ode1_b16", regime.name()), |b| {
            b.iter(|| batch_loss(&model, &spec, &refs, &loss, &points).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, prediction, training_step);
criterion_main!(benches);
