//! Central-difference checks of tape gradients.
//!
//! Errors are reported as `|ad − fd| / max(1, |ad|, |fd|)`: relative for
//! large derivatives, absolute for derivatives below one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fft::Direction;
use super::kernels::SpectralPlan;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Gelu,
    GeluDerivative,
    Sin,
    Exp,
    Ln,
    Sqrt,
    Sum,
    SumTrailing,
    Slice,
    Concat,
    Gather,
    TileRows,
    MulScalar,
    ChannelMix,
    ChannelBias,
    ComplexMul,
    Dft,
    InverseDft,
    Spectral,
}

impl Primitive {
    pub const ALL: &'static [Primitive] = &[
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Div,
        Primitive::MatMul,
        Primitive::Gelu,
        Primitive::GeluDerivative,
        Primitive::Sin,
        Primitive::Exp,
        Primitive::Ln,
        Primitive::Sqrt,
        Primitive::Sum,
        Primitive::SumTrailing,
        Primitive::Slice,
        Primitive::Concat,
        Primitive::Gather,
        Primitive::TileRows,
        Primitive::MulScalar,
        Primitive::ChannelMix,
        Primitive::ChannelBias,
        Primitive::ComplexMul,
        Primitive::Dft,
        Primitive::InverseDft,
        Primitive::Spectral,
    ];

    fn spectral_plan() -> SpectralPlan {
        SpectralPlan::new(4, 6, 2, 3).expect("static plan")
    }

    /// Random inputs of the shapes this primitive is checked with.
    pub fn random_inputs(self, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| rng.gen_range(lo..hi));
        use Primitive::*;
        match self {
            Add | Sub | Mul => vec![rand(&[3, 3], -2.0, 2.0), rand(&[3, 3], -2.0, 2.0)],
            Div => vec![rand(&[3, 3], -2.0, 2.0), rand(&[3, 3], 0.5, 2.0)],
            MatMul => vec![rand(&[3, 4], -1.0, 1.0), rand(&[4, 2], -1.0, 1.0)],
            Gelu | GeluDerivative | Sin | Exp => vec![rand(&[2, 5], -3.0, 3.0)],
            Ln | Sqrt => vec![rand(&[2, 5], 0.2, 3.0)],
            Sum | Slice | Gather => vec![rand(&[3, 4, 2], -1.0, 1.0)],
            SumTrailing | TileRows => vec![rand(&[3, 2, 2], -1.0, 1.0)],
            Concat => vec![rand(&[2, 3], -1.0, 1.0), rand(&[2, 2], -1.0, 1.0)],
            MulScalar => vec![rand(&[2, 3], -1.0, 1.0), rand(&[], -2.0, 2.0)],
            ChannelMix => vec![rand(&[3, 2], -1.0, 1.0), rand(&[2, 2, 5], -1.0, 1.0)],
            ChannelBias => vec![rand(&[2, 3, 4], -1.0, 1.0), rand(&[3], -1.0, 1.0)],
            ComplexMul => vec![rand(&[3, 2], -1.0, 1.0), rand(&[3, 2], -1.0, 1.0)],
            Dft | InverseDft => vec![rand(&[2, 6, 2], -1.0, 1.0)],
            Spectral => {
                let plan = Self::spectral_plan();
                vec![rand(&[2, 3, plan.points()], -1.0, 1.0), rand(&[3, 2, plan.n_modes(), 2], -1.0, 1.0)]
            }
        }
    }

    pub fn apply<'t>(self, x: &[Var<'t>]) -> Var<'t> {
        use Primitive::*;
        match self {
            Add => x[0] + x[1],
            Sub => x[0] - x[1],
            Mul => x[0] * x[1],
            Div => x[0] / x[1],
            MatMul => x[0].matmul(x[1]),
            Gelu => x[0].gelu(),
            GeluDerivative => x[0].gelu_derivative(1),
            Sin => x[0].sin(),
            Exp => x[0].exp(),
            Ln => x[0].ln(),
            Sqrt => x[0].sqrt(),
            Sum => x[0].sum(),
            SumTrailing => x[0].sum_trailing(),
            Slice => x[0].slice(1, 1, 2),
            Concat => Var::concat(&[x[0], x[1]], 1),
            Gather => x[0].gather(vec![0, 5, 5, 23, 11], &[5]),
            TileRows => x[0].tile_rows(3),
            MulScalar => x[0].mul_scalar(x[1]),
            ChannelMix => x[0].channel_mix(x[1]),
            ChannelBias => x[0].add_channel_bias(x[1]),
            ComplexMul => x[0].complex_mul(x[1]),
            Dft => x[0].dft(1, Direction::Forward),
            InverseDft => x[0].dft(1, Direction::Inverse),
            Spectral => x[0].spectral_conv(x[1], &Self::spectral_plan()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub primitive: Primitive,
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    /// Set when a probe produced non-finite values.
    pub failure: Option<String>,
}

impl GradcheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.failure.is_none() && self.max_rel_error < tol
    }
}

fn projected_value(op: Primitive, inputs: &[Tensor], projection: &Tensor) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = op.apply(&vars).value();
    out.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum()
}

/// Compares the reverse-mode gradient of `Σ r ⊙ op(inputs)` (random `r`)
/// against central differences with step `eps`.
pub fn gradcheck(op: Primitive, inputs: &[Tensor], eps: f64, seed: u64) -> Result<GradcheckReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("gradcheck step must be positive, got {eps}")));
    }
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = op.apply(&vars);
    let out_shape = out.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let projection = Tensor::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));
    let loss = (out * tape.constant(projection.clone())).sum();
    let mut report = GradcheckReport { primitive: op, max_rel_error: 0.0, worst: None, failure: None };
    if !loss.item().is_finite() {
        report.failure = Some("non-finite value at the unperturbed inputs".into());
        return Ok(report);
    }
    let grads = tape.grad(loss, &vars)?;
    let mut probe = inputs.to_vec();
    for (i, g) in grads.grads.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = projected_value(op, &probe, &projection);
            probe[i].data_mut()[j] = orig - eps;
            let minus = projected_value(op, &probe, &projection);
            probe[i].data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                report.failure = Some(format!("non-finite value probing input {i} element {j}"));
                return Ok(report);
            }
            let fd = (plus - minus) / (2.0 * eps);
            let ad = g.data()[j];
            let err = (ad - fd).abs() / 1f64.max(ad.abs()).max(fd.abs());
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Second-order check on a small spectral/pointwise block: the weight
/// gradient of `⟨c, J·v⟩` (with `J·v` from [`Tape::jvp`]) is compared with
/// a central difference of the same quantity along a random weight
/// direction. Returns the relative error.
pub fn second_order_check(seed: u64, eps: f64) -> Result<f64> {
    let plan = SpectralPlan::new(1, 12, 1, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let x = rand(&[2, 3, 12]);
    let tangent = rand(&[2, 3, 12]);
    let weights = vec![rand(&[4, 3]), rand(&[3, 4, plan.n_modes(), 2]), rand(&[4]), rand(&[1, 4])];
    let contraction = rand(&[2, 1, 12]);
    let direction: Vec<Tensor> = weights.iter().map(|w| rand(w.shape())).collect();

    let objective = |ws: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Tensor>)> {
        let tape = Tape::recording_tangents();
        let input = tape.constant(x.clone());
        let wv: Vec<Var<'_>> = ws.iter().map(|w| tape.var(w.clone())).collect();
        let lifted = wv[0].channel_mix(input);
        let spectral = input.spectral_conv(wv[1], &plan);
        let hidden = (lifted + spectral).add_channel_bias(wv[2]).gelu();
        let out = wv[3].channel_mix(hidden);
        let (_, tan) = tape.jvp(out, input, &tangent)?;
        let loss = (tan * tape.constant(contraction.clone())).sum();
        let grads = if want_grad { tape.grad(loss, &wv)?.grads } else { Vec::new() };
        Ok((loss.item(), grads))
    };

    let (_, grads) = objective(&weights, true)?;
    let analytic: f64 = grads.iter().zip(&direction).map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>()).sum();
    let shifted = |sign: f64| -> Vec<Tensor> {
        weights.iter().zip(&direction).map(|(w, d)| w.zip_map(d, |a, b| a + sign * eps * b)).collect()
    };
    let (plus, _) = objective(&shifted(1.0), false)?;
    let (minus, _) = objective(&shifted(-1.0), false)?;
    let fd = (plus - minus) / (2.0 * eps);
    Ok((analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-12))
}
