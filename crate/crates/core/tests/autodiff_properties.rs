use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use senso_core::autodiff::{fft, gradcheck, second_order_check, Direction, Primitive, Tape};
use senso_core::Tensor;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn every_primitive_passes_gradcheck_over_twenty_seeds() {
    for &op in Primitive::ALL {
        for seed in 0..20 {
            let inputs = op.random_inputs(seed);
            let report = gradcheck(op, &inputs, 1e-5, seed).unwrap();
            assert!(report.passed(1e-5), "{op:?} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn gelu_matmul_sum_matches_finite_differences() {
    let w = random(&[4, 4], 11);
    let x = random(&[4, 1], 12);
    let tape = Tape::new();
    let wv = tape.var(w.clone());
    let xv = tape.var(x.clone());
    let loss = wv.matmul(xv).gelu().sum();
    let g = tape.grad(loss, &[wv, xv]).unwrap();
    let f = |w: &Tensor, x: &Tensor| {
        let t = Tape::new();
        t.constant(w.clone()).matmul(t.constant(x.clone())).gelu().sum().item()
    };
    let eps = 1e-5;
    for (which, base) in [(0usize, &w), (1, &x)] {
        for j in 0..base.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus.data_mut()[j] += eps;
            minus.data_mut()[j] -= eps;
            let fd = if which == 0 { (f(&plus, &x) - f(&minus, &x)) / (2.0 * eps) } else { (f(&w, &plus) - f(&w, &minus)) / (2.0 * eps) };
            let ad = g.grads[which].data()[j];
            assert!((ad - fd).abs() / ad.abs().max(1e-8) < 1e-5, "input {which} elem {j}: {ad} vs {fd}");
        }
    }
}

#[test]
fn dft_examples() {
    let tape = Tape::new();
    let ones = tape.constant(Tensor::new(vec![4, 2], vec![1., 0., 1., 0., 1., 0., 1., 0.]).unwrap());
    let out = ones.dft(0, Direction::Forward).value();
    assert_eq!(out.data(), &[4., 0., 0., 0., 0., 0., 0., 0.]);

    // [0, 1, 0, -1] → [0, -2i, 0, 2i], checked against the O(N²) sum.
    let x = [0.0, 1.0, 0.0, -1.0].map(|r| Complex64::new(r, 0.0));
    let brute = fft::naive_dft(&x, Direction::Forward);
    let v = tape.constant(Tensor::new(vec![4, 2], x.iter().flat_map(|c| [c.re, c.im]).collect()).unwrap());
    let out = v.dft(0, Direction::Forward).value();
    for (k, b) in brute.iter().enumerate() {
        assert!((out.data()[2 * k] - b.re).abs() < 1e-14 && (out.data()[2 * k + 1] - b.im).abs() < 1e-14);
    }
    let expected = [0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, 2.0];
    for (a, b) in out.data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn dft_round_trip_and_parseval_length_64() {
    let x = random(&[64, 2], 5);
    let tape = Tape::new();
    let v = tape.constant(x.clone());
    let spec = v.dft(0, Direction::Forward);
    let back = spec.dft(0, Direction::Inverse).value();
    assert!(back.max_abs_diff(&x) < 1e-12);
    let energy: f64 = x.data().iter().map(|a| a * a).sum();
    let spec_energy: f64 = spec.value().data().iter().map(|a| a * a).sum::<f64>() / 64.0;
    assert!((energy - spec_energy).abs() / energy < 1e-10);
}

#[test]
fn gradient_is_linear_in_the_objective() {
    let x0 = random(&[3, 5], 21);
    let (a, b) = (0.7, -1.3);
    let grad_of = |which: u8| {
        let tape = Tape::new();
        let x = tape.var(x0.clone());
        let f = x.gelu().sum();
        let g = (x * x).sin().sum();
        let loss = match which {
            0 => f,
            1 => g,
            _ => f.scale(a) + g.scale(b),
        };
        tape.grad(loss, &[x]).unwrap().grads.remove(0)
    };
    let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..gc.len() {
        let expect = a * gf.data()[i] + b * gg.data()[i];
        assert!((gc.data()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn jvp_with_basis_tangent_equals_gradient_entry() {
    let x0 = random(&[6], 31);
    let tape = Tape::recording_tangents();
    let x = tape.var(x0.clone());
    let f = (x.gelu() * x.sin()).sum();
    let g = tape.grad(f, &[x]).unwrap().grads.remove(0);
    for i in 0..6 {
        let mut e = Tensor::zeros(&[6]);
        e.data_mut()[i] = 1.0;
        let (_, t) = tape.jvp(f, x, &e).unwrap();
        assert!((t.item() - g.data()[i]).abs() < 1e-10);
    }
}

#[test]
fn second_order_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let err = second_order_check(seed, 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fft_round_trip_any_length(n in 1usize..130, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let mut y = x.clone();
        fft::transform(&mut y, Direction::Forward);
        fft::transform(&mut y, Direction::Inverse);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b / n as f64).norm() < 1e-11);
        }
    }

    #[test]
    fn parseval_holds(n in 1usize..100, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let mut y = x.clone();
        fft::transform(&mut y, Direction::Forward);
        let ex: f64 = x.iter().map(|c| c.norm_sqr()).sum();
        let ey: f64 = y.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
        prop_assert!((ex - ey).abs() <= 1e-10 * ex.max(1e-300));
    }
}
