use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A solution sampled on a structured grid: shape `(N)` for ODEs and
/// `(S_x, N)` for 1-D PDEs.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionField {
    pub values: Tensor,
    pub times: Vec<f64>,
    /// Empty for ODEs.
    pub xs: Vec<f64>,
}

impl SolutionField {
    pub fn new(values: Tensor, times: Vec<f64>, xs: Vec<f64>) -> Result<Self> {
        let expected = if xs.is_empty() { vec![times.len()] } else { vec![xs.len(), times.len()] };
        if values.shape() != expected.as_slice() {
            return Err(Error::shape(format!("field shape {:?} does not match grid {:?}", values.shape(), expected)));
        }
        Ok(Self { values, times, xs })
    }

    pub fn nx(&self) -> usize {
        self.xs.len().max(1)
    }

    pub fn nt(&self) -> usize {
        self.times.len()
    }

    /// Value at spatial index `j` and time index `n`.
    pub fn at(&self, j: usize, n: usize) -> f64 {
        self.values.data()[j * self.nt() + n]
    }

    /// Restriction to time indices `start..` (same spatial extent).
    pub fn time_window(&self, start: usize) -> Tensor {
        window(&self.values, self.nx(), self.nt(), start)
    }

    pub fn is_finite(&self) -> bool {
        self.values.all_finite()
    }
}

/// `∂u/∂p` with one slab per parameter: shape `(P, N)` or `(P, S_x, N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityTensor {
    pub values: Tensor,
    pub names: Vec<String>,
}

impl SensitivityTensor {
    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn slab(&self, q: usize) -> &[f64] {
        let n = self.values.len() / self.n_params();
        &self.values.data()[q * n..(q + 1) * n]
    }

    /// Restriction of every slab to time indices `start..`.
    pub fn time_window(&self, start: usize) -> Tensor {
        let shape = self.values.shape();
        let nt = *shape.last().expect("non-empty shape");
        let rows = self.values.len() / nt;
        let mut out = window(&self.values, rows, nt, start);
        let mut new_shape = shape.to_vec();
        *new_shape.last_mut().unwrap() = nt - start;
        out = out.reshape(&new_shape).expect("same element count");
        out
    }
}

fn window(values: &Tensor, rows: usize, nt: usize, start: usize) -> Tensor {
    let keep = nt - start;
    let mut data = Vec::with_capacity(rows * keep);
    for r in 0..rows {
        data.extend_from_slice(&values.data()[r * nt + start..(r + 1) * nt]);
    }
    let shape = if values.ndim() == 1 { vec![keep] } else { vec![rows, keep] };
    Tensor::new(shape, data).expect("window shape")
}
