//! Complex DFT kernels: iterative radix-2 for power-of-two lengths and
//! Bluestein's chirp-z algorithm for everything else.
//!
//! All transforms here are unnormalized; callers apply `1/N` for the inverse.

use std::f64::consts::PI;

use num_complex::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }

    pub fn conjugate(self) -> Self {
        match self {
            Direction::Forward => Direction::Inverse,
            Direction::Inverse => Direction::Forward,
        }
    }
}

/// In-place unnormalized transform `X_k = Σ x_n e^{∓2πikn/N}`.
pub fn transform(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, dir);
    } else {
        bluestein(buf, dir);
    }
}

fn radix2(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = dir.sign() * 2.0 * PI / len as f64;
        let half = len / 2;
        // Twiddles computed directly rather than by repeated multiplication
        // to keep round-off at the 1e-15 level for long transforms.
        let tw: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, ang * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * tw[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn bluestein(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = dir.sign();
    // chirp_k = e^{sign·iπk²/N}; k² reduced mod 2N to keep the angle small.
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, sign * PI * k2 / n as f64)
        })
        .collect();

    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, Direction::Forward);
    radix2(&mut b, Direction::Forward);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2(&mut a, Direction::Inverse);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k] * chirp[k] * scale;
    }
}

/// O(N²) reference sum.
pub fn naive_dft(x: &[Complex64], dir: Direction) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let ang = dir.sign() * 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                    v * Complex64::from_polar(1.0, ang)
                })
                .sum()
        })
        .collect()
}

/// Transform interleaved complex data `[..., 2]` along `axis` (an axis of
/// the complex shape, i.e. excluding the trailing pair axis). Applies `1/N`
/// for the inverse direction.
pub fn dft_interleaved(data: &[f64], complex_shape: &[usize], axis: usize, dir: Direction) -> Vec<f64> {
    let outer: usize = complex_shape[..axis].iter().product();
    let len = complex_shape[axis];
    let inner: usize = complex_shape[axis + 1..].iter().product();
    let mut out = vec![0.0; data.len()];
    let mut line = vec![Complex64::new(0.0, 0.0); len];
    let scale = match dir {
        Direction::Forward => 1.0,
        Direction::Inverse => 1.0 / len as f64,
    };
    for o in 0..outer {
        for i in 0..inner {
            for (k, slot) in line.iter_mut().enumerate() {
                let idx = 2 * ((o * len + k) * inner + i);
                *slot = Complex64::new(data[idx], data[idx + 1]);
            }
            transform(&mut line, dir);
            for (k, v) in line.iter().enumerate() {
                let idx = 2 * ((o * len + k) * inner + i);
                out[idx] = v.re * scale;
                out[idx + 1] = v.im * scale;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn matches_naive_sum_for_benchmark_grid_lengths() {
        for &n in &[1usize, 2, 3, 5, 8, 20, 25, 30, 40, 64, 90, 100] {
            let x = random_signal(n, n as u64);
            for dir in [Direction::Forward, Direction::Inverse] {
                let mut fast = x.clone();
                transform(&mut fast, dir);
                let slow = naive_dft(&x, dir);
                let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(err < 1e-11, "n={n} dir={dir:?} err={err}");
            }
        }
    }

    #[test]
    fn constant_maps_to_dc_bin() {
        let mut x = vec![Complex64::new(1.0, 0.0); 4];
        transform(&mut x, Direction::Forward);
        assert_eq!(x[0], Complex64::new(4.0, 0.0));
        for v in &x[1..] {
            assert!(v.norm() < 1e-15);
        }
    }
}
