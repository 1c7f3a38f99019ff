//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! Every value on the tape is a row-major `rows × cols` matrix. Parameters are
//! borrowed from a [`ParamSet`] rather than copied; gradients flowing into
//! them are collected into a [`Gradients`] value by [`Graph::backward`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{Gradients, ParamId, ParamSet, Tensor};
use crate::math;
use crate::{Error, Result};

/// Log-probability assigned to masked actions.
///
/// Finite so that `p · log p` stays `0` on masked entries and gradients stay
/// finite; `exp` of it underflows to exactly zero.
pub const MASKED_LOG_PROB: f64 = -1.0e30;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Const,
    /// `x · wᵀ (+ b)`
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Concat(Vec<Var>),
    Slice {
        a: Var,
        start: usize,
    },
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    MaskedLogSoftmax {
        a: Var,
        mask: Vec<bool>,
    },
    Pick {
        a: Var,
        idx: Vec<usize>,
    },
    SumCols(Var),
    SumGroups {
        a: Var,
        group: usize,
    },
    SumAll(Var),
    Clamp {
        a: Var,
        lo: f64,
        hi: f64,
    },
    Min(Var, Var),
    Max(Var, Var),
    ScaleRows {
        a: Var,
        factors: Vec<f64>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Option<Vec<f64>>,
    op: Op,
}

/// A forward computation recorded for differentiation.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

/// Masked log-softmax of one row, shared by the tape op and
/// [`crate::nn::MaskedCategorical`] so both produce identical bits.
pub fn masked_log_softmax_row(logits: &[f64], mask: &[bool], out: &mut [f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for (&z, &m) in logits.iter().zip(mask) {
        if m && z > max {
            max = z;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyMask);
    }
    let mut sum = 0.0;
    for (&z, &m) in logits.iter().zip(mask) {
        if m {
            sum += math::exp(z - max);
        }
    }
    let lse = max + math::ln(sum);
    for ((o, &z), &m) in out.iter_mut().zip(logits).zip(mask) {
        *o = if m { z - lse } else { MASKED_LOG_PROB };
    }
    Ok(())
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0];
        match (&n.value, &n.op) {
            (Some(d), _) => d,
            (None, Op::Param(id)) => self.params.get(*id).data(),
            _ => unreachable!("node without value"),
        }
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Hash of every branch taken by the piecewise operations (ReLU, clamp,
    /// min, max). Evaluations with equal signatures lie on the same smooth
    /// piece of the function.
    pub fn branch_signature(&self) -> u64 {
        use core::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        for n in &self.nodes {
            match &n.op {
                Op::Relu(a) => self.value(*a).iter().for_each(|&x| h.write_u8((x > 0.0) as u8)),
                Op::Clamp { a, lo, hi } => self
                    .value(*a)
                    .iter()
                    .for_each(|&x| h.write_u8(if x < *lo { 0 } else if x > *hi { 2 } else { 1 })),
                Op::Min(a, b) => {
                    for (x, y) in self.value(*a).iter().zip(self.value(*b)) {
                        h.write_u8((x <= y) as u8);
                    }
                }
                Op::Max(a, b) => {
                    for (x, y) in self.value(*a).iter().zip(self.value(*b)) {
                        h.write_u8((x >= y) as u8);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a parameter tensor; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let t = self.params.get(id);
        self.nodes.push(Node {
            rows: t.rows(),
            cols: t.cols(),
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "constant {rows}x{cols} with {} values",
                data.len()
            )));
        }
        Ok(self.push(rows, cols, data, Op::Const))
    }

    pub fn constant_tensor(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Const)
    }

    /// `x · wᵀ + b` with `x: B×K`, `w: O×K`, `b: 1×O`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (bsz, k) = self.shape(x);
        let (o, kw) = self.shape(w);
        if k != kw {
            return Err(shape_err("affine", (bsz, k), (o, kw)));
        }
        if let Some(b) = b {
            let (br, bc) = self.shape(b);
            if br * bc != o {
                return Err(shape_err("affine bias", (1, o), (br, bc)));
            }
        }
        let mut out = vec![0.0; bsz * o];
        {
            let xv = self.value(x);
            let wv = self.value(w);
            let bv = b.map(|b| self.value(b));
            for r in 0..bsz {
                let xr = &xv[r * k..(r + 1) * k];
                let orow = &mut out[r * o..(r + 1) * o];
                for (j, oj) in orow.iter_mut().enumerate() {
                    let mut s = math::dot(xr, &wv[j * k..(j + 1) * k]);
                    if let Some(bv) = bv {
                        s += bv[j];
                    }
                    *oj = s;
                }
            }
        }
        Ok(self.push(bsz, o, out, Op::Affine { x, w, b }))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(shape_err(what, sa, sb));
        }
        Ok(sa)
    }

    fn binary(&mut self, what: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (r, c) = self.same_shape(what, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(r, c, out, op))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(r, c, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("min", a, b, |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("max", a, b, |x, y| if x >= y { x } else { y }, Op::Max(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, math::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, math::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Clamps element-wise; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp { a, lo, hi })
    }

    /// Per-row layer normalisation with learned gain and bias (`1 × C` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (r, c) = self.shape(x);
        for p in [gain, bias] {
            let s = self.shape(p);
            if s.0 * s.1 != c {
                return Err(shape_err("layer_norm params", (1, c), s));
            }
        }
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        {
            let xv = self.value(x);
            let g = self.value(gain);
            let b = self.value(bias);
            for i in 0..r {
                let row = &xv[i * c..(i + 1) * c];
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let rs = 1.0 / math::sqrt(var + EPS);
                rstd[i] = rs;
                for j in 0..c {
                    let h = (row[j] - mean) * rs;
                    xhat[i * c + j] = h;
                    out[i * c + j] = h * g[j] + b[j];
                }
            }
        }
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Concatenates along columns; all inputs must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(shape_err("concat", (rows, cols), (r, c)));
            }
            cols += c;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(rows, cols, out, Op::Concat(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c || len == 0 {
            return Err(Error::Shape(format!("slice {start}+{len} of {c} columns")));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + start + len]);
        }
        Ok(self.push(r, len, out, Op::Slice { a, start }))
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (n, c) = self.shape(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("row index {bad} out of {n}")));
        }
        let v = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&v[i * c..(i + 1) * c]);
        }
        Ok(self.push(idx.len(), c, out, Op::Gather { table, idx: idx.to_vec() }))
    }

    /// Row-wise log-softmax restricted to legal entries; masked entries get
    /// [`MASKED_LOG_PROB`]. Rejects rows whose mask is entirely false.
    pub fn masked_log_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if mask.len() != r * c {
            return Err(Error::Shape(format!("mask of {} for {r}x{c}", mask.len())));
        }
        let mut out = vec![0.0; r * c];
        {
            let v = self.value(a);
            for i in 0..r {
                let s = i * c..(i + 1) * c;
                masked_log_softmax_row(&v[s.clone()], &mask[s.clone()], &mut out[s])?;
            }
        }
        Ok(self.push(r, c, out, Op::MaskedLogSoftmax { a, mask: mask.to_vec() }))
    }

    /// Picks column `idx[i]` from row `i`, giving an `R × 1` node.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(Error::Shape(format!("pick {} indices from {r}x{c}", idx.len())));
        }
        let v = self.value(a);
        let out = idx.iter().enumerate().map(|(i, &j)| v[i * c + j]).collect();
        Ok(self.push(r, 1, out, Op::Pick { a, idx: idx.to_vec() }))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let v = self.value(a);
        let out = (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect();
        self.push(r, 1, out, Op::SumCols(a))
    }

    /// Sums consecutive groups of `group` rows: `(G·n) × C → G × C`.
    pub fn sum_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if group == 0 || r % group != 0 {
            return Err(Error::Shape(format!("{r} rows into groups of {group}")));
        }
        let v = self.value(a);
        let g = r / group;
        let mut out = vec![0.0; g * c];
        for gi in 0..g {
            let o = &mut out[gi * c..(gi + 1) * c];
            o.copy_from_slice(&v[gi * group * c..(gi * group + 1) * c]);
            for k in 1..group {
                let row = &v[(gi * group + k) * c..(gi * group + k + 1) * c];
                for (x, y) in o.iter_mut().zip(row) {
                    *x += y;
                }
            }
        }
        Ok(self.push(g, c, out, Op::SumGroups { a, group }))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(1, 1, vec![s], Op::SumAll(a))
    }

    /// Sum of all elements divided by `denom`.
    pub fn sum_over(&mut self, a: Var, denom: f64) -> Var {
        let s = self.sum_all(a);
        self.scale(s, 1.0 / denom)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        self.sum_over(a, (r * c) as f64)
    }

    /// Multiplies each row by a constant factor (e.g. episode-boundary resets).
    pub fn scale_rows(&mut self, a: Var, factors: &[f64]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if factors.len() != r {
            return Err(Error::Shape(format!("{} row factors for {r} rows", factors.len())));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(v[i * c..(i + 1) * c].iter().map(|x| x * factors[i]));
        }
        Ok(self.push(r, c, out, Op::ScaleRows { a, factors: factors.to_vec() }))
    }

    /// Back-propagates from a `1 × 1` loss node and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.shape(loss);
        if r * c != 1 {
            return Err(Error::Shape(format!("loss must be scalar, got {r}x{c}")));
        }
        let l = self.scalar(loss);
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss ({l})")));
        }
        let mut grads = Gradients::zeros_like(self.params);
        let mut g: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        g.resize_with(loss.0 + 1, || None);
        g[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => {
                    for (a, b) in grads.0[id.0].iter_mut().zip(&gout) {
                        *a += b;
                    }
                }
                Op::Const => {}
                Op::Affine { x, w, b } => {
                    let (bsz, k) = self.shape(*x);
                    let o = node.cols;
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    if needs(*x, &self.nodes) {
                        let gx = acc(&mut g, *x, bsz * k);
                        for r in 0..bsz {
                            let gxr = &mut gx[r * k..(r + 1) * k];
                            for j in 0..o {
                                let d = gout[r * o + j];
                                if d != 0.0 {
                                    math::axpy(d, &wv[j * k..(j + 1) * k], gxr);
                                }
                            }
                        }
                    }
                    let gw = acc(&mut g, *w, o * k);
                    for r in 0..bsz {
                        let xr = &xv[r * k..(r + 1) * k];
                        for j in 0..o {
                            let d = gout[r * o + j];
                            if d != 0.0 {
                                math::axpy(d, xr, &mut gw[j * k..(j + 1) * k]);
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = acc(&mut g, *b, o);
                        for r in 0..bsz {
                            for j in 0..o {
                                gb[j] += gout[r * o + j];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut g, *a, gout.len()), &gout, 1.0);
                    add_into(acc(&mut g, *b, gout.len()), &gout, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut g, *a, gout.len()), &gout, 1.0);
                    add_into(acc(&mut g, *b, gout.len()), &gout, -1.0);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    if needs(*a, &self.nodes) {
                        let ga = acc(&mut g, *a, gout.len());
                        for k in 0..gout.len() {
                            ga[k] += gout[k] * bv[k];
                        }
                    }
                    if needs(*b, &self.nodes) {
                        let gb = acc(&mut g, *b, gout.len());
                        for k in 0..gout.len() {
                            gb[k] += gout[k] * av[k];
                        }
                    }
                }
                Op::Scale(a, s) => add_into(acc(&mut g, *a, gout.len()), &gout, *s),
                Op::AddScalar(a) => add_into(acc(&mut g, *a, gout.len()), &gout, 1.0),
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let ga = acc(&mut g, *a, gout.len());
                    for k in 0..gout.len() {
                        if av[k] > 0.0 {
                            ga[k] += gout[k];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_deref().unwrap();
                    let ga = acc(&mut g, *a, gout.len());
                    for k in 0..gout.len() {
                        ga[k] += gout[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_deref().unwrap();
                    let ga = acc(&mut g, *a, gout.len());
                    for k in 0..gout.len() {
                        ga[k] += gout[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Exp(a) => {
                    let y = node.value.as_deref().unwrap();
                    let ga = acc(&mut g, *a, gout.len());
                    for k in 0..gout.len() {
                        ga[k] += gout[k] * y[k];
                    }
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    let ga = acc(&mut g, *a, gout.len());
                    for k in 0..gout.len() {
                        ga[k] += 2.0 * gout[k] * av[k];
                    }
                }
                Op::Clamp { a, lo, hi } => {
                    let av = self.value(*a);
                    let ga = acc(&mut g, *a, gout.len());
                    for k in 0..gout.len() {
                        if av[k] >= *lo && av[k] <= *hi {
                            ga[k] += gout[k];
                        }
                    }
                }
                Op::Min(a, b) | Op::Max(a, b) => {
                    let is_min = matches!(node.op, Op::Min(..));
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let mut ga = vec![0.0; gout.len()];
                    let mut gb = vec![0.0; gout.len()];
                    for k in 0..gout.len() {
                        let take_a = if is_min { av[k] <= bv[k] } else { av[k] >= bv[k] };
                        if take_a {
                            ga[k] = gout[k];
                        } else {
                            gb[k] = gout[k];
                        }
                    }
                    add_into(acc(&mut g, *a, gout.len()), &ga, 1.0);
                    add_into(acc(&mut g, *b, gout.len()), &gb, 1.0);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let (r, c) = (node.rows, node.cols);
                    let gv = self.value(*gain).to_vec();
                    {
                        let gg = acc(&mut g, *gain, c);
                        for i in 0..r {
                            for j in 0..c {
                                gg[j] += gout[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    {
                        let gb = acc(&mut g, *bias, c);
                        for i in 0..r {
                            for j in 0..c {
                                gb[j] += gout[i * c + j];
                            }
                        }
                    }
                    if needs(*x, &self.nodes) {
                        let gx = acc(&mut g, *x, r * c);
                        let n = c as f64;
                        for i in 0..r {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for j in 0..c {
                                let dh = gout[i * c + j] * gv[j];
                                s1 += dh;
                                s2 += dh * xhat[i * c + j];
                            }
                            for j in 0..c {
                                let dh = gout[i * c + j] * gv[j];
                                gx[i * c + j] +=
                                    rstd[i] * (dh - s1 / n - xhat[i * c + j] * s2 / n);
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let rows = node.rows;
                    let cols = node.cols;
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        let gp = acc(&mut g, p, rows * pc);
                        for i in 0..rows {
                            for j in 0..pc {
                                gp[i * pc + j] += gout[i * cols + off + j];
                            }
                        }
                        off += pc;
                    }
                }
                Op::Slice { a, start } => {
                    let (r, c) = self.shape(*a);
                    let len = node.cols;
                    let ga = acc(&mut g, *a, r * c);
                    for i in 0..r {
                        for j in 0..len {
                            ga[i * c + start + j] += gout[i * len + j];
                        }
                    }
                }
                Op::Gather { table, idx } => {
                    let (n, c) = self.shape(*table);
                    let gt = acc(&mut g, *table, n * c);
                    for (row, &t) in idx.iter().enumerate() {
                        for j in 0..c {
                            gt[t * c + j] += gout[row * c + j];
                        }
                    }
                }
                Op::MaskedLogSoftmax { a, mask } => {
                    let (r, c) = (node.rows, node.cols);
                    let y = node.value.as_deref().unwrap();
                    let ga = acc(&mut g, *a, r * c);
                    for i in 0..r {
                        let mut s = 0.0;
                        for j in 0..c {
                            if mask[i * c + j] {
                                s += gout[i * c + j];
                            }
                        }
                        for j in 0..c {
                            if mask[i * c + j] {
                                ga[i * c + j] += gout[i * c + j] - math::exp(y[i * c + j]) * s;
                            }
                        }
                    }
                }
                Op::Pick { a, idx } => {
                    let (r, c) = self.shape(*a);
                    let ga = acc(&mut g, *a, r * c);
                    for (i, &j) in idx.iter().enumerate() {
                        ga[i * c + j] += gout[i];
                    }
                }
                Op::SumCols(a) => {
                    let (r, c) = self.shape(*a);
                    let ga = acc(&mut g, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += gout[i];
                        }
                    }
                }
                Op::SumGroups { a, group } => {
                    let (r, c) = self.shape(*a);
                    let ga = acc(&mut g, *a, r * c);
                    for i in 0..r {
                        let gi = i / group;
                        for j in 0..c {
                            ga[i * c + j] += gout[gi * c + j];
                        }
                    }
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(*a);
                    let ga = acc(&mut g, *a, r * c);
                    for x in ga.iter_mut() {
                        *x += gout[0];
                    }
                }
                Op::ScaleRows { a, factors } => {
                    let (r, c) = self.shape(*a);
                    let ga = acc(&mut g, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += gout[i * c + j] * factors[i];
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Constants never need gradients; skipping them saves the largest products.
fn needs(v: Var, nodes: &[Node]) -> bool {
    !matches!(nodes[v.0].op, Op::Const)
}

fn acc(g: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    g[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}
