//! Wengert tape with reverse-mode gradients and tangent propagation that is
//! itself recorded on the tape.
//!
//! A [`Tape`] is an append-only list of nodes in topological order. Every
//! [`Var`] is a handle into one tape. [`Tape::grad`] runs one reverse sweep;
//! [`Tape::jvp_many`] walks an already-recorded computation forward and
//! appends the tangent computation as ordinary nodes, so the returned
//! tangents can be differentiated again by `grad` (forward-over-reverse).

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops;
use std::rc::Rc;

use num_complex::Complex64;

use super::fft::{self, Direction};
use super::gelu::{gelu, gelu_derivative};
use super::kernels::{self, SpectralPlan};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapeMode {
    Plain,
    TangentRecording,
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// tensor × shape-`[]` variable
    MulScalar(usize, usize),
    Gelu(usize),
    GeluDeriv(usize, u8),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Sum(usize),
    /// `(B, ...) → (B)`
    SumTrailing(usize),
    MatMul(usize, usize),
    /// `(O,I) × (R,I,X) → (R,O,X)`
    ChannelMix(usize, usize),
    /// `(R,C,X) + (C)`
    AddChannelBias(usize, usize),
    Spectral { v: usize, w: usize, plan: Rc<SpectralPlan>, spectra: Rc<Vec<Complex64>> },
    Slice { a: usize, axis: usize, start: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Gather { a: usize, indices: Rc<Vec<usize>> },
    Reshape(usize),
    /// `(B, ...) → (B·times, ...)`, row `b·times + j` copies row `b`.
    TileRows { a: usize, times: usize },
    ComplexMul(usize, usize),
    Dft { a: usize, axis: usize, dir: Direction },
    RealPart(usize),
    ToComplex(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MulScalar(a, b) | MatMul(a, b) | ChannelMix(a, b)
            | AddChannelBias(a, b) | ComplexMul(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | AddScalar(a) | Gelu(a) | GeluDeriv(a, _) | Sin(a) | Cos(a) | Exp(a) | Ln(a)
            | Sqrt(a) | Sum(a) | SumTrailing(a) | Reshape(a) | RealPart(a) | ToComplex(a) => vec![*a],
            Spectral { v, w, .. } => vec![*v, *w],
            Slice { a, .. } | Gather { a, .. } | TileRows { a, .. } | Dft { a, .. } => vec![*a],
            Concat { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
    requires_grad: bool,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    mode: TapeMode,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Result of [`Tape::grad`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Tensor>,
    /// `true` where the requested variable had no path to the loss; the
    /// corresponding gradient is all zeros.
    pub detached: Vec<bool>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), mode: TapeMode::Plain }
    }

    /// A tape on which [`Tape::jvp_many`] may record tangents.
    pub fn recording_tangents() -> Self {
        Self { nodes: RefCell::new(Vec::new()), mode: TapeMode::TangentRecording }
    }

    pub fn mode(&self) -> TapeMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    pub fn scalar_constant(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op: Op::Leaf, value: Rc::new(value), requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node { op, value: Rc::new(value), requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn check_same_tape(&self, v: Var<'_>) {
        assert!(std::ptr::eq(self, v.tape), "variable belongs to a different tape");
    }

    /// Reverse sweep from a shape-`[]` loss.
    pub fn grad(&self, loss: Var<'_>, wrt: &[Var<'_>]) -> Result<Gradients> {
        self.check_same_tape(loss);
        for w in wrt {
            self.check_same_tape(*w);
        }
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape().to_vec();
        if !loss_shape.is_empty() {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let mut wanted: HashMap<usize, Option<Tensor>> = wrt.iter().map(|w| (w.id, None)).collect();
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        adj[loss.id] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            if let Some(slot) = wanted.get_mut(&id) {
                *slot = Some(g.clone());
            }
            if !nodes[id].requires_grad {
                continue;
            }
            backward_node(&nodes, id, g, &mut adj);
        }
        let mut grads = Vec::with_capacity(wrt.len());
        let mut detached = Vec::with_capacity(wrt.len());
        for w in wrt {
            match wanted.get(&w.id).cloned().flatten() {
                Some(g) if nodes[w.id].requires_grad => {
                    grads.push(g);
                    detached.push(false);
                }
                _ => {
                    log::warn!("grad: variable #{} has no path to the loss; returning zeros", w.id);
                    grads.push(Tensor::zeros(nodes[w.id].value.shape()));
                    detached.push(true);
                }
            }
        }
        Ok(Gradients { grads, detached })
    }

    /// Single-tangent convenience wrapper around [`Tape::jvp_many`].
    pub fn jvp<'t>(&'t self, output: Var<'t>, input: Var<'t>, tangent: &Tensor) -> Result<(Tensor, Var<'t>)> {
        let mut outs = self.jvp_many(output, input, std::slice::from_ref(tangent))?;
        Ok(((*output.value()).clone(), outs.remove(0)))
    }

    /// Propagates each tangent from `input` to `output` through the
    /// already-recorded computation. The tangent computation is appended
    /// to the tape, so the returned variables depend on every weight the
    /// primal computation used and can be passed to [`Tape::grad`].
    pub fn jvp_many<'t>(&'t self, output: Var<'t>, input: Var<'t>, tangents: &[Tensor]) -> Result<Vec<Var<'t>>> {
        self.check_same_tape(output);
        self.check_same_tape(input);
        if self.mode != TapeMode::TangentRecording {
            return Err(Error::Precondition("jvp requires a tape in tangent-recording mode".into()));
        }
        let in_shape = input.shape();
        for t in tangents {
            if t.shape() != in_shape.as_slice() {
                return Err(Error::shape(format!(
                    "tangent shape {:?} does not match input shape {:?}",
                    t.shape(),
                    in_shape
                )));
            }
        }
        let end = output.id;
        let ops: Vec<Op> = self.nodes.borrow()[..=end].iter().map(|n| n.op.clone()).collect();
        let mut factors = FactorCache::default();
        let mut results = Vec::with_capacity(tangents.len());
        for t in tangents {
            let mut tan: Vec<Option<Var<'t>>> = vec![None; end + 1];
            tan[input.id] = Some(self.constant(t.clone()));
            for id in input.id + 1..=end {
                tan[id] = tangent_rule(self, id, &ops[id], &tan, &mut factors);
            }
            let out = tan[end].unwrap_or_else(|| self.constant(Tensor::zeros(&output.shape())));
            results.push(out);
        }
        Ok(results)
    }
}

/// Per-node derivative factors shared across tangents, e.g. `gelu'(z)`.
#[derive(Default)]
struct FactorCache<'t> {
    map: HashMap<usize, Var<'t>>,
}

fn var<'t>(tape: &'t Tape, id: usize) -> Var<'t> {
    Var { tape, id }
}

fn tangent_rule<'t>(tape: &'t Tape, id: usize, op: &Op, tan: &[Option<Var<'t>>], cache: &mut FactorCache<'t>) -> Option<Var<'t>> {
    use Op::*;
    let t = |i: usize| tan[i];
    let v = |i: usize| var(tape, i);
    let any = op.inputs().iter().any(|&i| tan[i].is_some());
    if !any {
        return None;
    }
    let mut factor = |key: usize, make: &dyn Fn() -> Var<'t>| *cache.map.entry(key).or_insert_with(|| make());
    let sum2 = |a: Option<Var<'t>>, b: Option<Var<'t>>| match (a, b) {
        (Some(a), Some(b)) => Some(a + b),
        (a, None) => a,
        (None, b) => b,
    };
    Some(match op {
        Leaf => return None,
        Add(a, b) => return sum2(t(*a), t(*b)),
        Sub(a, b) => match (t(*a), t(*b)) {
            (Some(x), Some(y)) => x - y,
            (Some(x), None) => x,
            (None, Some(y)) => -y,
            (None, None) => return None,
        },
        Mul(a, b) => return sum2(t(*a).map(|ta| ta * v(*b)), t(*b).map(|tb| v(*a) * tb)),
        Div(a, b) => {
            let out = v(id);
            let num = match (t(*a), t(*b)) {
                (Some(ta), Some(tb)) => ta - out * tb,
                (Some(ta), None) => ta,
                (None, Some(tb)) => -(out * tb),
                (None, None) => return None,
            };
            num / v(*b)
        }
        Neg(a) => -t(*a)?,
        Scale(a, c) => t(*a)?.scale(*c),
        AddScalar(a) => t(*a)?,
        MulScalar(a, s) => return sum2(t(*a).map(|ta| ta.mul_scalar(v(*s))), t(*s).map(|ts| v(*a).mul_scalar(ts))),
        Gelu(a) => factor(id, &|| v(*a).gelu_derivative(1)) * t(*a)?,
        GeluDeriv(a, k) => factor(id, &|| v(*a).gelu_derivative(k + 1)) * t(*a)?,
        Sin(a) => factor(id, &|| v(*a).cos()) * t(*a)?,
        Cos(a) => -(factor(id, &|| v(*a).sin()) * t(*a)?),
        Exp(a) => v(id) * t(*a)?,
        Ln(a) => t(*a)? / v(*a),
        Sqrt(a) => (t(*a)? / v(id)).scale(0.5),
        Sum(a) => t(*a)?.sum(),
        SumTrailing(a) => t(*a)?.sum_trailing(),
        MatMul(a, b) => return sum2(t(*a).map(|ta| ta.matmul(v(*b))), t(*b).map(|tb| v(*a).matmul(tb))),
        ChannelMix(w, x) => return sum2(t(*w).map(|tw| tw.channel_mix(v(*x))), t(*x).map(|tx| v(*w).channel_mix(tx))),
        AddChannelBias(x, b) => match (t(*x), t(*b)) {
            (Some(tx), Some(tb)) => tx.add_channel_bias(tb),
            (Some(tx), None) => tx,
            (None, Some(tb)) => tape.constant(Tensor::zeros(&v(*x).shape())).add_channel_bias(tb),
            (None, None) => return None,
        },
        Spectral { v: x, w, plan, .. } => {
            let a = t(*x).map(|tx| tx.spectral_conv_with(v(*w), Rc::clone(plan)));
            let b = t(*w).map(|tw| v(*x).spectral_conv_with(tw, Rc::clone(plan)));
            return sum2(a, b);
        }
        Slice { a, axis, start } => {
            let len = v(id).shape()[*axis];
            t(*a)?.slice(*axis, *start, len)
        }
        Concat { inputs, axis } => {
            let parts: Vec<Var<'t>> =
                inputs.iter().map(|&i| t(i).unwrap_or_else(|| tape.constant(Tensor::zeros(&v(i).shape())))).collect();
            Var::concat(&parts, *axis)
        }
        Gather { a, indices } => {
            let shape = v(id).shape();
            t(*a)?.gather_rc(Rc::clone(indices), &shape)
        }
        Reshape(a) => t(*a)?.reshape(&v(id).shape()),
        TileRows { a, times } => t(*a)?.tile_rows(*times),
        ComplexMul(a, b) => return sum2(t(*a).map(|ta| ta.complex_mul(v(*b))), t(*b).map(|tb| v(*a).complex_mul(tb))),
        Dft { a, axis, dir } => t(*a)?.dft(*axis, *dir),
        RealPart(a) => t(*a)?.real_part(),
        ToComplex(a) => t(*a)?.to_complex(),
    })
}

fn accumulate(nodes: &[Node], adj: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut adj[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backward_node(nodes: &[Node], id: usize, g: Tensor, adj: &mut [Option<Tensor>]) {
    use Op::*;
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let out = val(id);
    let mut acc = |i: usize, t: Tensor| accumulate(nodes, adj, i, t);
    match &nodes[id].op {
        Leaf => {}
        Add(a, b) => {
            acc(*b, g.clone());
            acc(*a, g);
        }
        Sub(a, b) => {
            acc(*b, g.scaled(-1.0));
            acc(*a, g);
        }
        Mul(a, b) => {
            acc(*a, g.zip_map(val(*b), |x, y| x * y));
            acc(*b, g.zip_map(val(*a), |x, y| x * y));
        }
        Div(a, b) => {
            acc(*a, g.zip_map(val(*b), |x, y| x / y));
            let gb = Tensor::from_fn(g.shape(), |i| -g.data()[i] * out.data()[i] / val(*b).data()[i]);
            acc(*b, gb);
        }
        Neg(a) => acc(*a, g.scaled(-1.0)),
        Scale(a, c) => acc(*a, g.scaled(*c)),
        AddScalar(a) => acc(*a, g),
        MulScalar(a, s) => {
            let sv = val(*s).item();
            let gs: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
            acc(*s, Tensor::scalar(gs));
            acc(*a, g.scaled(sv));
        }
        Gelu(a) => acc(*a, g.zip_map(val(*a), |x, z| x * gelu_derivative(z, 1))),
        GeluDeriv(a, k) => {
            let k = *k + 1;
            acc(*a, g.zip_map(val(*a), |x, z| x * gelu_derivative(z, k)));
        }
        Sin(a) => acc(*a, g.zip_map(val(*a), |x, z| x * z.cos())),
        Cos(a) => acc(*a, g.zip_map(val(*a), |x, z| -x * z.sin())),
        Exp(a) => acc(*a, g.zip_map(out, |x, e| x * e)),
        Ln(a) => acc(*a, g.zip_map(val(*a), |x, z| x / z)),
        Sqrt(a) => acc(*a, g.zip_map(out, |x, s| 0.5 * x / s)),
        Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
        SumTrailing(a) => {
            let shape = val(*a).shape();
            let per = numel(&shape[1..]);
            acc(*a, Tensor::from_fn(shape, |i| g.data()[i / per]));
        }
        MatMul(a, b) => {
            let (sa, sb) = (val(*a).shape(), val(*b).shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let bt = kernels::transpose(val(*b).data(), k, n);
            acc(*a, Tensor::from_parts(vec![m, k], kernels::matmul(g.data(), &bt, m, n, k)));
            let at = kernels::transpose(val(*a).data(), m, k);
            acc(*b, Tensor::from_parts(vec![k, n], kernels::matmul(&at, g.data(), k, m, n)));
        }
        ChannelMix(w, x) => {
            let (sw, sx) = (val(*w).shape().to_vec(), val(*x).shape().to_vec());
            let (cout, cin, rows, pts) = (sw[0], sw[1], sx[0], sx[2]);
            if nodes[*w].requires_grad {
                let gw = kernels::channel_mix_adjoint_weight(val(*x).data(), g.data(), rows, cin, cout, pts);
                acc(*w, Tensor::from_parts(sw, gw));
            }
            if nodes[*x].requires_grad {
                let gx = kernels::channel_mix_adjoint_input(val(*w).data(), g.data(), rows, cin, cout, pts);
                acc(*x, Tensor::from_parts(sx, gx));
            }
        }
        AddChannelBias(x, b) => {
            let s = g.shape();
            let (rows, c, pts) = (s[0], s[1], s[2]);
            let mut gb = vec![0.0; c];
            for r in 0..rows {
                for (ch, slot) in gb.iter_mut().enumerate() {
                    *slot += g.data()[(r * c + ch) * pts..(r * c + ch + 1) * pts].iter().sum::<f64>();
                }
            }
            acc(*b, Tensor::from_parts(vec![c], gb));
            acc(*x, g);
        }
        Spectral { v, w, plan, spectra } => {
            let sv = val(*v).shape().to_vec();
            let sw = val(*w).shape().to_vec();
            let (rows, cin, cout) = (sv[0], sv[1], sw[1]);
            let (gv, gw) = kernels::spectral_conv_backward(plan, spectra, val(*w).data(), g.data(), rows, cin, cout);
            acc(*v, Tensor::from_parts(sv, gv));
            acc(*w, Tensor::from_parts(sw, gw));
        }
        Slice { a, axis, start } => {
            let shape = val(*a).shape().to_vec();
            let (outer, len, inner) = Tensor::split_at_axis(&shape, *axis);
            let sl = g.shape()[*axis];
            let mut ga = vec![0.0; numel(&shape)];
            for o in 0..outer {
                let src = &g.data()[o * sl * inner..(o + 1) * sl * inner];
                let dst = &mut ga[(o * len + start) * inner..(o * len + start + sl) * inner];
                dst.copy_from_slice(src);
            }
            acc(*a, Tensor::from_parts(shape, ga));
        }
        Concat { inputs, axis } => {
            let gshape = g.shape().to_vec();
            let (outer, total, inner) = Tensor::split_at_axis(&gshape, *axis);
            let mut offset = 0;
            for &i in inputs {
                let shape = val(i).shape().to_vec();
                let len = shape[*axis];
                let mut gi = Vec::with_capacity(numel(&shape));
                for o in 0..outer {
                    gi.extend_from_slice(&g.data()[(o * total + offset) * inner..(o * total + offset + len) * inner]);
                }
                offset += len;
                acc(i, Tensor::from_parts(shape, gi));
            }
        }
        Gather { a, indices } => {
            let shape = val(*a).shape().to_vec();
            let mut ga = vec![0.0; numel(&shape)];
            for (gv, &ix) in g.data().iter().zip(indices.iter()) {
                ga[ix] += gv;
            }
            acc(*a, Tensor::from_parts(shape, ga));
        }
        Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            acc(*a, Tensor::from_parts(shape, g.into_data()));
        }
        TileRows { a, times } => {
            let shape = val(*a).shape().to_vec();
            let per = numel(&shape[1..]);
            let mut ga = vec![0.0; numel(&shape)];
            for (r, chunk) in g.data().chunks(per).enumerate() {
                let b = r / times;
                for (d, s) in ga[b * per..(b + 1) * per].iter_mut().zip(chunk) {
                    *d += s;
                }
            }
            acc(*a, Tensor::from_parts(shape, ga));
        }
        ComplexMul(a, b) => {
            let conj_mul = |x: &Tensor, y: &Tensor| {
                let mut outv = vec![0.0; x.len()];
                for k in 0..x.len() / 2 {
                    let gx = Complex64::new(x.data()[2 * k], x.data()[2 * k + 1]);
                    let yy = Complex64::new(y.data()[2 * k], y.data()[2 * k + 1]).conj();
                    let p = gx * yy;
                    outv[2 * k] = p.re;
                    outv[2 * k + 1] = p.im;
                }
                Tensor::from_parts(x.shape().to_vec(), outv)
            };
            acc(*a, conj_mul(&g, val(*b)));
            acc(*b, conj_mul(&g, val(*a)));
        }
        Dft { a, axis, dir } => {
            let shape = g.shape().to_vec();
            let cshape = &shape[..shape.len() - 1];
            let n = cshape[*axis] as f64;
            // Adjoint of the unnormalized forward sum is the unnormalized
            // conjugate sum; adjoint of the 1/N inverse is forward/N.
            let ga = match dir {
                Direction::Forward => {
                    fft::dft_interleaved(g.data(), cshape, *axis, Direction::Inverse).into_iter().map(|x| x * n).collect()
                }
                Direction::Inverse => {
                    fft::dft_interleaved(g.data(), cshape, *axis, Direction::Forward).into_iter().map(|x| x / n).collect()
                }
            };
            acc(*a, Tensor::from_parts(shape, ga));
        }
        RealPart(a) => {
            let shape = val(*a).shape().to_vec();
            let mut ga = vec![0.0; numel(&shape)];
            for (k, gv) in g.data().iter().enumerate() {
                ga[2 * k] = *gv;
            }
            acc(*a, Tensor::from_parts(shape, ga));
        }
        ToComplex(a) => {
            let shape = val(*a).shape().to_vec();
            let ga = g.data().iter().step_by(2).copied().collect();
            acc(*a, Tensor::from_parts(shape, ga));
        }
    }
}

fn assert_same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn binary(self, other: Var<'t>, op: &str, make: fn(usize, usize) -> Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        self.tape.check_same_tape(other);
        let (a, b) = (self.value(), other.value());
        assert_same_shape(op, &a, &b);
        self.tape.push(make(self.id, other.id), a.zip_map(&b, f))
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(op, v)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    /// Multiplies every element by a shape-`[]` variable.
    pub fn mul_scalar(self, s: Var<'t>) -> Var<'t> {
        self.tape.check_same_tape(s);
        let sv = s.value();
        assert!(sv.is_scalar(), "mul_scalar expects a shape-[] multiplier, got {:?}", sv.shape());
        let c = sv.item();
        let v = self.value().map(|x| x * c);
        self.tape.push(Op::MulScalar(self.id, s.id), v)
    }

    pub fn gelu(self) -> Var<'t> {
        self.unary(Op::Gelu(self.id), gelu)
    }

    /// `order`-th derivative of GELU applied elementwise (order ≥ 1).
    pub fn gelu_derivative(self, order: u8) -> Var<'t> {
        assert!(order >= 1);
        self.unary(Op::GeluDeriv(self.id, order), move |x| gelu_derivative(x, order))
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin(self.id), f64::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos(self.id), f64::cos)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Op::Sum(self.id), Tensor::scalar(s))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums all axes but the first.
    pub fn sum_trailing(self) -> Var<'t> {
        let v = self.value();
        let rows = v.shape()[0];
        let per = v.len() / rows.max(1);
        let data = v.data().chunks(per.max(1)).map(|c| c.iter().sum()).collect();
        self.tape.push(Op::SumTrailing(self.id), Tensor::from_parts(vec![rows], data))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.tape.check_same_tape(other);
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        assert!(sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0], "matmul shapes {sa:?} × {sb:?}");
        let data = kernels::matmul(a.data(), b.data(), sa[0], sa[1], sb[1]);
        self.tape.push(Op::MatMul(self.id, other.id), Tensor::from_parts(vec![sa[0], sb[1]], data))
    }

    /// `self` is a `(cout, cin)` weight; `x` is `(rows, cin, points)`.
    pub fn channel_mix(self, x: Var<'t>) -> Var<'t> {
        self.tape.check_same_tape(x);
        let (w, v) = (self.value(), x.value());
        let (sw, sx) = (w.shape(), v.shape());
        assert!(sw.len() == 2 && sx.len() == 3 && sw[1] == sx[1], "channel_mix shapes {sw:?} × {sx:?}");
        let data = kernels::channel_mix(w.data(), v.data(), sx[0], sw[1], sw[0], sx[2]);
        self.tape.push(Op::ChannelMix(self.id, x.id), Tensor::from_parts(vec![sx[0], sw[0], sx[2]], data))
    }

    /// `self` is `(rows, channels, points)`; `bias` is `(channels)`.
    pub fn add_channel_bias(self, bias: Var<'t>) -> Var<'t> {
        self.tape.check_same_tape(bias);
        let (v, b) = (self.value(), bias.value());
        let s = v.shape();
        assert!(s.len() == 3 && b.shape() == [s[1]], "add_channel_bias shapes {s:?} + {:?}", b.shape());
        let pts = s[2];
        let data = Tensor::from_fn(s, |i| v.data()[i] + b.data()[(i / pts) % s[1]]);
        self.tape.push(Op::AddChannelBias(self.id, bias.id), data)
    }

    /// Spectral convolution of `(rows, cin, nx·nt)` real fields with
    /// complex mode weights `(cin, cout, modes, 2)`.
    pub fn spectral_conv(self, weights: Var<'t>, plan: &SpectralPlan) -> Var<'t> {
        self.spectral_conv_with(weights, Rc::new(plan.clone()))
    }

    pub(crate) fn spectral_conv_with(self, weights: Var<'t>, plan: Rc<SpectralPlan>) -> Var<'t> {
        self.tape.check_same_tape(weights);
        let (v, w) = (self.value(), weights.value());
        let (sv, sw) = (v.shape(), w.shape());
        assert!(
            sv.len() == 3 && sw.len() == 4 && sw[0] == sv[1] && sw[2] == plan.n_modes() && sw[3] == 2 && sv[2] == plan.points(),
            "spectral_conv shapes {sv:?} × {sw:?} (modes {}, points {})",
            plan.n_modes(),
            plan.points()
        );
        let (rows, cin, cout) = (sv[0], sv[1], sw[1]);
        let (out, spectra) = kernels::spectral_conv(&plan, v.data(), w.data(), rows, cin, cout);
        let value = Tensor::from_parts(vec![rows, cout, sv[2]], out);
        self.tape.push(Op::Spectral { v: self.id, w: weights.id, plan, spectra: Rc::new(spectra) }, value)
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Var<'t> {
        let v = self.value();
        let shape = v.shape().to_vec();
        assert!(axis < shape.len() && start + len <= shape[axis], "slice {start}+{len} of axis {axis} in {shape:?}");
        let (outer, full, inner) = Tensor::split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&v.data()[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.tape.push(Op::Slice { a: self.id, axis, start }, Tensor::from_parts(out_shape, data))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| {
            tape.check_same_tape(*p);
            p.value()
        }).collect();
        let base = values[0].shape().to_vec();
        for v in &values {
            let s = v.shape();
            assert!(
                s.len() == base.len() && s.iter().enumerate().all(|(i, &d)| i == axis || d == base[i]),
                "concat shapes {base:?} and {s:?} along {axis}"
            );
        }
        let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
        let (outer, _, inner) = Tensor::split_at_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        tape.push(Op::Concat { inputs: parts.iter().map(|p| p.id).collect(), axis }, Tensor::from_parts(shape, data))
    }

    /// Picks flat (row-major) element indices into a tensor of `out_shape`.
    pub fn gather(self, indices: Vec<usize>, out_shape: &[usize]) -> Var<'t> {
        self.gather_rc(Rc::new(indices), out_shape)
    }

    fn gather_rc(self, indices: Rc<Vec<usize>>, out_shape: &[usize]) -> Var<'t> {
        let v = self.value();
        assert_eq!(numel(out_shape), indices.len(), "gather output shape");
        let data = indices.iter().map(|&i| v.data()[i]).collect();
        self.tape.push(Op::Gather { a: self.id, indices }, Tensor::from_parts(out_shape.to_vec(), data))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = self.value();
        assert_eq!(numel(shape), v.len(), "reshape {:?} → {shape:?}", v.shape());
        self.tape.push(Op::Reshape(self.id), Tensor::from_parts(shape.to_vec(), v.data().to_vec()))
    }

    pub fn tile_rows(self, times: usize) -> Var<'t> {
        let v = self.value();
        let mut shape = v.shape().to_vec();
        let per = numel(&shape[1..]);
        let mut data = Vec::with_capacity(v.len() * times);
        for row in v.data().chunks(per.max(1)) {
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        shape[0] *= times;
        self.tape.push(Op::TileRows { a: self.id, times }, Tensor::from_parts(shape, data))
    }

    /// Elementwise product of interleaved complex tensors `[..., 2]`.
    pub fn complex_mul(self, other: Var<'t>) -> Var<'t> {
        self.tape.check_same_tape(other);
        let (a, b) = (self.value(), other.value());
        assert_same_shape("complex_mul", &a, &b);
        assert_eq!(a.shape().last(), Some(&2), "complex tensors need a trailing axis of 2");
        let mut data = vec![0.0; a.len()];
        for k in 0..a.len() / 2 {
            let p = Complex64::new(a.data()[2 * k], a.data()[2 * k + 1]) * Complex64::new(b.data()[2 * k], b.data()[2 * k + 1]);
            data[2 * k] = p.re;
            data[2 * k + 1] = p.im;
        }
        self.tape.push(Op::ComplexMul(self.id, other.id), Tensor::from_parts(a.shape().to_vec(), data))
    }

    /// DFT of an interleaved complex tensor along `axis` of its complex
    /// shape. Forward is the unnormalized sum; inverse carries `1/N`.
    pub fn dft(self, axis: usize, dir: Direction) -> Var<'t> {
        let v = self.value();
        let shape = v.shape().to_vec();
        assert!(shape.len() >= 2 && shape[shape.len() - 1] == 2 && axis < shape.len() - 1, "dft on shape {shape:?} axis {axis}");
        let data = fft::dft_interleaved(v.data(), &shape[..shape.len() - 1], axis, dir);
        self.tape.push(Op::Dft { a: self.id, axis, dir }, Tensor::from_parts(shape, data))
    }

    pub fn real_part(self) -> Var<'t> {
        let v = self.value();
        let shape = v.shape();
        assert_eq!(shape.last(), Some(&2));
        let data = v.data().iter().step_by(2).copied().collect();
        self.tape.push(Op::RealPart(self.id), Tensor::from_parts(shape[..shape.len() - 1].to_vec(), data))
    }

    pub fn to_complex(self) -> Var<'t> {
        let v = self.value();
        let mut shape = v.shape().to_vec();
        shape.push(2);
        let data = v.data().iter().flat_map(|&x| [x, 0.0]).collect();
        self.tape.push(Op::ToComplex(self.id), Tensor::from_parts(shape, data))
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "add", Op::Add, |a, b| a + b)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "sub", Op::Sub, |a, b| a - b)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "mul", Op::Mul, |a, b| a * b)
    }
}

impl<'t> ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "div", Op::Div, |a, b| a / b)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }
}
