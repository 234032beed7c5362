//! Forward-mode differentiation over whole fields.
//!
//! A [`DualField`] carries `n` values and, for each of `p` seed directions,
//! a tangent row of length `n`. Evaluating a right-hand side on dual
//! fields yields `f` together with `(∂f/∂u)·S + ∂f/∂p` for every seed at
//! once, which is exactly the forward sensitivity system. Fields with
//! `n = 1` broadcast against longer fields.

use std::ops;

#[derive(Clone, Debug, PartialEq)]
pub struct DualField {
    val: Vec<f64>,
    /// `p × n`, row-major.
    tan: Vec<f64>,
    p: usize,
}

impl DualField {
    pub fn constant(val: Vec<f64>, p: usize) -> Self {
        let n = val.len();
        Self { val, tan: vec![0.0; n * p], p }
    }

    pub fn with_tangents(val: Vec<f64>, tan: Vec<f64>, p: usize) -> Self {
        assert_eq!(tan.len(), val.len() * p, "tangent block must be p × n");
        Self { val, tan, p }
    }

    /// Scalar seeded in direction `index` (an independent variable).
    pub fn seed(value: f64, p: usize, index: usize) -> Self {
        let mut tan = vec![0.0; p];
        tan[index] = 1.0;
        Self { val: vec![value], tan, p }
    }

    pub fn scalar(value: f64, p: usize) -> Self {
        Self::constant(vec![value], p)
    }

    pub fn len(&self) -> usize {
        self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.val.is_empty()
    }

    pub fn directions(&self) -> usize {
        self.p
    }

    pub fn values(&self) -> &[f64] {
        &self.val
    }

    pub fn tangents(&self) -> &[f64] {
        &self.tan
    }

    pub fn tangent(&self, q: usize) -> &[f64] {
        let n = self.len();
        &self.tan[q * n..(q + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.val.iter().chain(&self.tan).all(|x| x.is_finite())
    }

    /// Applies the same linear map to the values and every tangent row.
    pub fn map_linear(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let n = self.len();
        let val = f(&self.val);
        let m = val.len();
        let mut tan = Vec::with_capacity(m * self.p);
        for q in 0..self.p {
            tan.extend(f(&self.tan[q * n..(q + 1) * n]));
        }
        Self { val, tan, p: self.p }
    }

    /// Elementwise `g(u)` with derivative `g'(u)`.
    pub fn map(&self, g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> Self {
        let n = self.len();
        let d: Vec<f64> = self.val.iter().map(|&x| dg(x)).collect();
        let val = self.val.iter().map(|&x| g(x)).collect();
        let mut tan = self.tan.clone();
        for q in 0..self.p {
            for (t, dk) in tan[q * n..(q + 1) * n].iter_mut().zip(&d) {
                *t *= dk;
            }
        }
        Self { val, tan, p: self.p }
    }

    pub fn sin(&self) -> Self {
        self.map(f64::sin, f64::cos)
    }

    pub fn cos(&self) -> Self {
        self.map(f64::cos, |x| -x.sin())
    }

    pub fn tanh(&self) -> Self {
        self.map(f64::tanh, |x| 1.0 - x.tanh().powi(2))
    }

    pub fn exp(&self) -> Self {
        self.map(f64::exp, f64::exp)
    }

    pub fn powi(&self, k: i32) -> Self {
        self.map(|x| x.powi(k), |x| k as f64 * x.powi(k - 1))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { val: self.val.iter().map(|x| c * x).collect(), tan: self.tan.iter().map(|x| c * x).collect(), p: self.p }
    }

    pub fn add_const(&self, c: f64) -> Self {
        Self { val: self.val.iter().map(|x| c + x).collect(), tan: self.tan.clone(), p: self.p }
    }

    /// `Σ cᵢ·xᵢ` over equally shaped fields.
    pub fn linear_combination(terms: &[(f64, &DualField)]) -> Self {
        let first = terms[0].1;
        let mut val = vec![0.0; first.val.len()];
        let mut tan = vec![0.0; first.tan.len()];
        for (c, f) in terms {
            assert_eq!(f.val.len(), val.len());
            for (a, b) in val.iter_mut().zip(&f.val) {
                *a += c * b;
            }
            for (a, b) in tan.iter_mut().zip(&f.tan) {
                *a += c * b;
            }
        }
        Self { val, tan, p: first.p }
    }

    /// Repeats a scalar dual `n` times.
    pub fn broadcast(&self, n: usize) -> Self {
        if self.len() == n {
            return self.clone();
        }
        assert_eq!(self.len(), 1, "only scalars broadcast");
        let val = vec![self.val[0]; n];
        let mut tan = Vec::with_capacity(n * self.p);
        for q in 0..self.p {
            tan.extend(std::iter::repeat(self.tan[q]).take(n));
        }
        Self { val, tan, p: self.p }
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        self.map_linear(|row| row[start..start + len].to_vec())
    }

    pub fn gather(&self, indices: &[usize]) -> Self {
        self.map_linear(|row| indices.iter().map(|&i| row[i]).collect())
    }

    pub fn concat(parts: &[&DualField]) -> Self {
        let p = parts[0].p;
        let n: usize = parts.iter().map(|f| f.len()).sum();
        let mut val = Vec::with_capacity(n);
        let mut tan = Vec::with_capacity(n * p);
        for f in parts {
            assert_eq!(f.p, p, "dual fields disagree on tangent count");
            val.extend_from_slice(&f.val);
        }
        for q in 0..p {
            for f in parts {
                tan.extend_from_slice(f.tangent(q));
            }
        }
        Self { val, tan, p }
    }

    fn zip_with(&self, other: &DualField, f: impl Fn(f64, f64) -> f64, df: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        assert_eq!(self.p, other.p, "dual fields disagree on tangent count");
        let n = self.len().max(other.len());
        assert!(
            (self.len() == n || self.len() == 1) && (other.len() == n || other.len() == 1),
            "incompatible dual lengths {} and {}",
            self.len(),
            other.len()
        );
        let a_at = |k: usize| if self.len() == 1 { 0 } else { k };
        let b_at = |k: usize| if other.len() == 1 { 0 } else { k };
        let mut val = Vec::with_capacity(n);
        let mut da = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        for k in 0..n {
            let (x, y) = (self.val[a_at(k)], other.val[b_at(k)]);
            val.push(f(x, y));
            let (dx, dy) = df(x, y);
            da.push(dx);
            db.push(dy);
        }
        let mut tan = vec![0.0; n * self.p];
        let (na, nb) = (self.len(), other.len());
        for q in 0..self.p {
            for k in 0..n {
                tan[q * n + k] = da[k] * self.tan[q * na + a_at(k)] + db[k] * other.tan[q * nb + b_at(k)];
            }
        }
        Self { val, tan, p: self.p }
    }
}

impl ops::Add for &DualField {
    type Output = DualField;
    fn add(self, rhs: &DualField) -> DualField {
        self.zip_with(rhs, |a, b| a + b, |_, _| (1.0, 1.0))
    }
}

impl ops::Sub for &DualField {
    type Output = DualField;
    fn sub(self, rhs: &DualField) -> DualField {
        self.zip_with(rhs, |a, b| a - b, |_, _| (1.0, -1.0))
    }
}

impl ops::Mul for &DualField {
    type Output = DualField;
    fn mul(self, rhs: &DualField) -> DualField {
        self.zip_with(rhs, |a, b| a * b, |a, b| (b, a))
    }
}

impl ops::Div for &DualField {
    type Output = DualField;
    fn div(self, rhs: &DualField) -> DualField {
        self.zip_with(rhs, |a, b| a / b, |a, b| (1.0 / b, -a / (b * b)))
    }
}

impl ops::Neg for &DualField {
    type Output = DualField;
    fn neg(self) -> DualField {
        self.scale(-1.0)
    }
}
