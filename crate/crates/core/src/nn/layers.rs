//! Parameterised building blocks. Each layer owns [`ParamId`]s into the
//! network's [`ParamSet`] and records its forward pass on a [`Graph`].

use alloc::format;
use alloc::vec;

use rand::Rng;

use super::graph::{Graph, Var};
use super::init::orthogonal_init;
use super::tensor::{ParamId, ParamSet, Tensor};
use crate::Result;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), orthogonal_init(outputs, inputs, gain, rng));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[1, outputs]));
        Linear {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.affine(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, width: usize) -> Self {
        let gain = params.add(
            format!("{name}.gain"),
            Tensor::from_vec(&[1, width], vec![1.0; width]).expect("width >= 1"),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[1, width]));
        LayerNorm { gain, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Two hidden layers of Linear → LayerNorm → ReLU.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: [(Linear, LayerNorm); 2],
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let gain = core::f64::consts::SQRT_2;
        let l1 = Linear::new(params, &format!("{name}.0"), inputs, width, gain, rng);
        let n1 = LayerNorm::new(params, &format!("{name}.0.norm"), width);
        let l2 = Linear::new(params, &format!("{name}.1"), width, width, gain, rng);
        let n2 = LayerNorm::new(params, &format!("{name}.1.norm"), width);
        Mlp {
            layers: [(l1, n1), (l2, n2)],
        }
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var> {
        for (lin, norm) in &self.layers {
            let y = lin.forward(g, x)?;
            let y = norm.forward(g, y)?;
            x = g.relu(y);
        }
        Ok(x)
    }
}

/// LSTM cell with gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_ih = params.add(format!("{name}.w_ih"), orthogonal_init(4 * hidden, inputs, 1.0, rng));
        let w_hh = params.add(format!("{name}.w_hh"), orthogonal_init(4 * hidden, hidden, 1.0, rng));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[1, 4 * hidden]));
        LstmCell {
            w_ih,
            w_hh,
            bias,
            inputs,
            hidden,
        }
    }

    /// One step: returns `(h', c')`.
    pub fn forward(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let n = self.hidden;
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let b = g.param(self.bias);
        let gx = g.affine(x, w_ih, Some(b))?;
        let gh = g.affine(h, w_hh, None)?;
        let gates = g.add(gx, gh)?;
        let i = g.slice_cols(gates, 0, n)?;
        let f = g.slice_cols(gates, n, n)?;
        let cand = g.slice_cols(gates, 2 * n, n)?;
        let o = g.slice_cols(gates, 3 * n, n)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c)?;
        let ig = g.mul(i, cand)?;
        let c_next = g.add(fc, ig)?;
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, rows: usize, width: usize, rng: &mut R) -> Self {
        let table = params.add(format!("{name}.table"), orthogonal_init(rows, width, 1.0, rng));
        Embedding { table }
    }

    pub fn forward(&self, g: &mut Graph, idx: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.gather_rows(t, idx)
    }
}
