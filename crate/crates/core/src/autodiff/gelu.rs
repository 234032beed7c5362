//! Tanh-approximated GELU and its derivatives.

use std::f64::consts::FRAC_2_PI;

const CUBIC: f64 = 0.044_715;

#[inline]
fn sqrt_2_over_pi() -> f64 {
    FRAC_2_PI.sqrt()
}

/// `0.5·x·(1 + tanh(√(2/π)(x + 0.044715x³)))`
#[inline]
pub fn gelu(x: f64) -> f64 {
    let k = sqrt_2_over_pi();
    0.5 * x * (1.0 + (k * (x + CUBIC * x * x * x)).tanh())
}

/// `order`-th derivative of [`gelu`]; orders 1–3 are closed form, order 4 is
/// a central difference of the third derivative.
pub fn gelu_derivative(x: f64, order: u8) -> f64 {
    let k = sqrt_2_over_pi();
    let u1 = k * (1.0 + 3.0 * CUBIC * x * x);
    let u2 = 6.0 * CUBIC * k * x;
    let u3 = 6.0 * CUBIC * k;
    let h = (k * (x + CUBIC * x * x * x)).tanh();
    let s = 1.0 - h * h;
    let q = -2.0 * h * s * u1 * u1 + s * u2;
    match order {
        0 => gelu(x),
        1 => 0.5 * (1.0 + h) + 0.5 * x * s * u1,
        2 => s * u1 + 0.5 * x * q,
        3 => {
            let dq = -2.0 * s * s * u1.powi(3) + 4.0 * h * h * s * u1.powi(3) - 6.0 * h * s * u1 * u2 + s * u3;
            1.5 * q + 0.5 * x * dq
        }
        4 => {
            let step = 1e-4;
            (gelu_derivative(x + step, 3) - gelu_derivative(x - step, 3)) / (2.0 * step)
        }
        _ => panic!("gelu derivative of order {order} is not supported"),
    }
}
