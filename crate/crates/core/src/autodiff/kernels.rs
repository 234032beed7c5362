//! Numeric kernels shared by tape primitives.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// `(m,k)·(k,n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `aᵀ` for an `(m,n)` matrix.
pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// `y[r,o,x] = Σ_i w[o,i]·v[r,i,x]`.
pub fn channel_mix(w: &[f64], v: &[f64], rows: usize, cin: usize, cout: usize, points: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cout * points];
    for r in 0..rows {
        for o in 0..cout {
            let dst = &mut out[(r * cout + o) * points..(r * cout + o + 1) * points];
            for i in 0..cin {
                let wi = w[o * cin + i];
                if wi == 0.0 {
                    continue;
                }
                let src = &v[(r * cin + i) * points..(r * cin + i + 1) * points];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wi * s;
                }
            }
        }
    }
    out
}

/// Adjoint of [`channel_mix`] with respect to `v`: `v̄[r,i,x] = Σ_o w[o,i]·ȳ[r,o,x]`.
pub fn channel_mix_adjoint_input(w: &[f64], g: &[f64], rows: usize, cin: usize, cout: usize, points: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cin * points];
    for r in 0..rows {
        for o in 0..cout {
            let src = &g[(r * cout + o) * points..(r * cout + o + 1) * points];
            for i in 0..cin {
                let wi = w[o * cin + i];
                if wi == 0.0 {
                    continue;
                }
                let dst = &mut out[(r * cin + i) * points..(r * cin + i + 1) * points];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wi * s;
                }
            }
        }
    }
    out
}

/// Adjoint of [`channel_mix`] with respect to `w`: `w̄[o,i] = Σ_{r,x} ȳ[r,o,x]·v[r,i,x]`.
pub fn channel_mix_adjoint_weight(v: &[f64], g: &[f64], rows: usize, cin: usize, cout: usize, points: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * cin];
    for r in 0..rows {
        for o in 0..cout {
            let go = &g[(r * cout + o) * points..(r * cout + o + 1) * points];
            for i in 0..cin {
                let vi = &v[(r * cin + i) * points..(r * cin + i + 1) * points];
                out[o * cin + i] += go.iter().zip(vi).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    out
}

/// Partial DFT on a `(nx, nt)` grid (x slow, t fast) restricted to the
/// retained low modes: frequencies `0..mt` along t (the last axis, half
/// spectrum) and `{0..mx} ∪ {nx-mx+1..nx}` along x. A grid with `nx = 1`
/// is a 1-D signal in t.
#[derive(Debug, Clone)]
pub struct SpectralPlan {
    pub nx: usize,
    pub nt: usize,
    pub kx: Vec<usize>,
    pub mt: usize,
    tw_x: Vec<Complex64>,
    tw_t: Vec<Complex64>,
}

impl SpectralPlan {
    pub fn new(nx: usize, nt: usize, modes_x: usize, modes_t: usize) -> Result<Self> {
        if nx == 0 || nt == 0 {
            return Err(Error::invalid("spectral grid axes must be non-empty"));
        }
        let limit = |n: usize| n / 2 + 1;
        if modes_t == 0 || modes_t > limit(nt) {
            return Err(Error::invalid(format!(
                "modes_t = {modes_t} exceeds spectrum of axis length {nt} (max {})",
                limit(nt)
            )));
        }
        let kx = if nx == 1 {
            vec![0]
        } else {
            if modes_x == 0 || modes_x > limit(nx) {
                return Err(Error::invalid(format!(
                    "modes_x = {modes_x} exceeds spectrum of axis length {nx} (max {})",
                    limit(nx)
                )));
            }
            let mut ks: Vec<usize> = (0..modes_x).collect();
            for k in (nx + 1 - modes_x)..nx {
                if !ks.contains(&k) {
                    ks.push(k);
                }
            }
            ks
        };
        let tw = |n: usize| (0..n).map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64)).collect();
        Ok(Self { nx, nt, kx, mt: modes_t, tw_x: tw(nx), tw_t: tw(nt) })
    }

    pub fn points(&self) -> usize {
        self.nx * self.nt
    }

    pub fn n_modes(&self) -> usize {
        self.kx.len() * self.mt
    }

    /// `rows` real fields → retained spectra, `B[r,kx,kt] = Σ v[x,t] e^{-2πi(kx·x/nx + kt·t/nt)}`.
    pub fn forward(&self, v: &[f64], rows: usize) -> Vec<Complex64> {
        let (nx, nt, mt, nk) = (self.nx, self.nt, self.mt, self.kx.len());
        let mut out = vec![Complex64::new(0.0, 0.0); rows * nk * mt];
        let mut partial = vec![Complex64::new(0.0, 0.0); nx * mt];
        for r in 0..rows {
            let field = &v[r * nx * nt..(r + 1) * nx * nt];
            for x in 0..nx {
                let line = &field[x * nt..(x + 1) * nt];
                for kt in 0..mt {
                    let mut acc = Complex64::new(0.0, 0.0);
                    let mut idx = 0;
                    for &val in line {
                        acc += self.tw_t[idx] * val;
                        idx += kt;
                        if idx >= nt {
                            idx -= nt;
                        }
                    }
                    partial[x * mt + kt] = acc;
                }
            }
            let dst = &mut out[r * nk * mt..(r + 1) * nk * mt];
            for (ik, &k) in self.kx.iter().enumerate() {
                for kt in 0..mt {
                    let mut acc = Complex64::new(0.0, 0.0);
                    let mut idx = 0;
                    for x in 0..nx {
                        acc += partial[x * mt + kt] * self.tw_x[idx];
                        idx += k;
                        if idx >= nx {
                            idx -= nx;
                        }
                    }
                    dst[ik * mt + kt] = acc;
                }
            }
        }
        out
    }

    /// Unnormalized real synthesis, `y[x,t] = Re Σ_k S[k] e^{+2πi(...)}`.
    pub fn synthesize(&self, spectra: &[Complex64], rows: usize) -> Vec<f64> {
        let (nx, nt, mt, nk) = (self.nx, self.nt, self.mt, self.kx.len());
        let mut out = vec![0.0; rows * nx * nt];
        let mut partial = vec![Complex64::new(0.0, 0.0); nx * mt];
        for r in 0..rows {
            let src = &spectra[r * nk * mt..(r + 1) * nk * mt];
            partial.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (ik, &k) in self.kx.iter().enumerate() {
                let mut idx = 0;
                for x in 0..nx {
                    let tw = self.tw_x[idx].conj();
                    for kt in 0..mt {
                        partial[x * mt + kt] += src[ik * mt + kt] * tw;
                    }
                    idx += k;
                    if idx >= nx {
                        idx -= nx;
                    }
                }
            }
            let field = &mut out[r * nx * nt..(r + 1) * nx * nt];
            for x in 0..nx {
                let line = &mut field[x * nt..(x + 1) * nt];
                for kt in 0..mt {
                    let c = partial[x * mt + kt];
                    let mut idx = 0;
                    for val in line.iter_mut() {
                        // Re(c · conj(tw))
                        let tw = self.tw_t[idx];
                        *val += c.re * tw.re + c.im * tw.im;
                        idx += kt;
                        if idx >= nt {
                            idx -= nt;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Spectral convolution forward pass. Returns the output field and the
/// retained input spectra (kept for the backward pass).
///
/// `v`: `(rows, cin, nx·nt)`; `w`: interleaved complex `(cin, cout, modes)`.
pub fn spectral_conv(plan: &SpectralPlan, v: &[f64], w: &[f64], rows: usize, cin: usize, cout: usize) -> (Vec<f64>, Vec<Complex64>) {
    let nm = plan.n_modes();
    let spectra = plan.forward(v, rows * cin);
    let mut mixed = vec![Complex64::new(0.0, 0.0); rows * cout * nm];
    for r in 0..rows {
        for i in 0..cin {
            let b = &spectra[(r * cin + i) * nm..(r * cin + i + 1) * nm];
            for o in 0..cout {
                let wbase = 2 * (i * cout + o) * nm;
                let dst = &mut mixed[(r * cout + o) * nm..(r * cout + o + 1) * nm];
                for (k, (d, bk)) in dst.iter_mut().zip(b).enumerate() {
                    *d += bk * Complex64::new(w[wbase + 2 * k], w[wbase + 2 * k + 1]);
                }
            }
        }
    }
    let scale = 1.0 / plan.points() as f64;
    let mut out = plan.synthesize(&mixed, rows * cout);
    out.iter_mut().for_each(|x| *x *= scale);
    (out, spectra)
}

/// Backward pass of [`spectral_conv`]: returns `(v̄, w̄)`.
pub fn spectral_conv_backward(
    plan: &SpectralPlan,
    spectra: &[Complex64],
    w: &[f64],
    g: &[f64],
    rows: usize,
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<f64>) {
    let nm = plan.n_modes();
    let scale = 1.0 / plan.points() as f64;
    let gspec: Vec<Complex64> = plan.forward(g, rows * cout).into_iter().map(|c| c * scale).collect();
    let mut bbar = vec![Complex64::new(0.0, 0.0); rows * cin * nm];
    let mut wbar = vec![0.0; cin * cout * nm * 2];
    for r in 0..rows {
        for i in 0..cin {
            let b = &spectra[(r * cin + i) * nm..(r * cin + i + 1) * nm];
            for o in 0..cout {
                let wbase = 2 * (i * cout + o) * nm;
                let gy = &gspec[(r * cout + o) * nm..(r * cout + o + 1) * nm];
                for k in 0..nm {
                    let wk = Complex64::new(w[wbase + 2 * k], w[wbase + 2 * k + 1]);
                    bbar[(r * cin + i) * nm + k] += gy[k] * wk.conj();
                    let dw = gy[k] * b[k].conj();
                    wbar[wbase + 2 * k] += dw.re;
                    wbar[wbase + 2 * k + 1] += dw.im;
                }
            }
        }
    }
    let vbar = plan.synthesize(&bbar, rows * cin);
    (vbar, wbar)
}
