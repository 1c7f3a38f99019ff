//! Central finite-difference verification of every differentiable operation.
//!
//! Each check draws random inputs, records the forward pass on a [`Graph`],
//! back-propagates, and compares every parameter gradient with the
//! five-point central difference
//! `(f(θ − 2h) − 8f(θ − h) + 8f(θ + h) − f(θ + 2h)) / 12h` at `h = 1e-4`.
//! Its O(h⁴) truncation error allows a step large enough that rounding in
//! `f` stays well below the tolerance even for gradients near the floor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::jrpo::{self, ClipConfig, RatioMode};
use crate::nn::{Graph, Gradients, LayerNorm, Linear, LstmCell, Mlp, NetworkSpec, ParamSet, PolicyNet, Tensor, Var, ValueNet};
use crate::{math, rng_from_seed, Error, Result};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error; below it the comparison is
/// effectively absolute.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: &'static str,
    pub trials: usize,
    /// Draws discarded because a stencil point crossed a kink.
    pub redrawn: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let d = (analytic - numeric).abs();
    d / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of `eval` with finite differences over
/// every scalar of the parameter set reached through `params_mut`. `eval`
/// returns the loss, the gradients when asked for, and the graph's
/// [`Graph::branch_signature`]. `None` means some stencil point crossed a
/// kink, so the draw says nothing about the gradient.
pub fn finite_difference_check<M>(
    model: &mut M,
    params_mut: impl Fn(&mut M) -> &mut ParamSet,
    eval: impl Fn(&M, bool) -> Result<Evaluation>,
) -> Result<Option<f64>> {
    let (_, grads, branches) = eval(model, true)?;
    let analytic = grads.expect("gradient requested").flatten();
    let n = analytic.len();
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let orig = read_flat(params_mut(model), k);
        let mut f = [0.0; 4];
        let mut smooth = true;
        for (slot, d) in f.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
            write_flat(params_mut(model), k, orig + d * STEP);
            let (v, _, b) = eval(model, false)?;
            *slot = v;
            smooth &= b == branches;
        }
        write_flat(params_mut(model), k, orig);
        if !smooth {
            return Ok(None);
        }
        let numeric = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * STEP);
        worst = worst.max(relative_error(analytic[k], numeric));
    }
    Ok(Some(worst))
}

/// Loss, optional gradients and branch signature of one evaluation.
pub type Evaluation = (f64, Option<Gradients>, u64);

fn locate(params: &ParamSet, mut k: usize) -> (usize, usize) {
    for (i, t) in params.tensors().iter().enumerate() {
        if k < t.len() {
            return (i, k);
        }
        k -= t.len();
    }
    panic!("flat index out of range");
}

fn read_flat(params: &mut ParamSet, k: usize) -> f64 {
    let (i, j) = locate(params, k);
    params.tensors()[i].data()[j]
}

fn write_flat(params: &mut ParamSet, k: usize, v: f64) {
    let (i, j) = locate(params, k);
    params.tensors_mut()[i].data_mut()[j] = v;
}

fn gaussian<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()
}

fn random_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(&[rows, cols], gaussian(rng, rows * cols, 1.0)).unwrap()
}

/// `Σ weights ⊙ out` with fixed random weights, so every output entry matters.
fn project(g: &mut Graph, out: Var, weights: &[f64]) -> Result<Var> {
    let (r, c) = g.shape(out);
    let w = g.constant(r, c, weights.to_vec())?;
    let p = g.mul(out, w)?;
    Ok(g.sum_all(p))
}

fn finish(g: &Graph, loss: Var, grad: bool) -> Result<Evaluation> {
    let v = g.scalar(loss);
    let grads = if grad { Some(g.backward(loss)?) } else { None };
    Ok((v, grads, g.branch_signature()))
}

struct OpCase {
    params: ParamSet,
    weights: Vec<f64>,
}

fn check_linear<R: Rng>(rng: &mut R) -> Result<Option<f64>> {
    let (b, k, o) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6));
    let mut params = ParamSet::new();
    let x = params.add("x", random_tensor(rng, b, k));
    let lin = Linear::new(&mut params, "lin", k, o, 1.0, rng);
    for t in params.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&gaussian(rng, n, 1.0));
    }
    let mut case = OpCase { params, weights: gaussian(rng, b * o, 1.0) };
    finite_difference_check(&mut case, |c| &mut c.params, |c, grad| {
        let mut g = Graph::new(&c.params);
        let xv = g.param(x);
        let y = lin.forward(&mut g, xv)?;
        let l = project(&mut g, y, &c.weights)?;
        finish(&g, l, grad)
    })
}

fn check_layer_norm<R: Rng>(rng: &mut R) -> Result<Option<f64>> {
    let (b, c) = (rng.random_range(1..4), rng.random_range(2..7));
    let mut params = ParamSet::new();
    let x = params.add("x", random_tensor(rng, b, c));
    let ln = LayerNorm::new(&mut params, "ln", c);
    for id in [ln.gain, ln.bias] {
        let t = params.get_mut(id);
        let n = t.len();
        t.data_mut().copy_from_slice(&gaussian(rng, n, 1.0));
    }
    let mut case = OpCase { params, weights: gaussian(rng, b * c, 1.0) };
    finite_difference_check(&mut case, |c| &mut c.params, |c, grad| {
        let mut g = Graph::new(&c.params);
        let xv = g.param(x);
        let y = ln.forward(&mut g, xv)?;
        let l = project(&mut g, y, &c.weights)?;
        finish(&g, l, grad)
    })
}

fn check_mlp<R: Rng>(rng: &mut R) -> Result<Option<f64>> {
    let (b, k, w) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(2..6));
    let mut params = ParamSet::new();
    let x = params.add("x", random_tensor(rng, b, k));
    let mlp = Mlp::new(&mut params, "mlp", k, w, rng);
    for t in params.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&gaussian(rng, n, 1.0));
    }
    let mut case = OpCase { params, weights: gaussian(rng, b * w, 1.0) };
    finite_difference_check(&mut case, |c| &mut c.params, |c, grad| {
        let mut g = Graph::new(&c.params);
        let xv = g.param(x);
        let y = mlp.forward(&mut g, xv)?;
        let l = project(&mut g, y, &c.weights)?;
        finish(&g, l, grad)
    })
}

/// LSTM unrolled over `steps`; the loss reads every hidden output and the
/// final cell so gradients traverse the whole recurrence.
pub fn check_lstm<R: Rng>(rng: &mut R, steps: usize) -> Result<Option<f64>> {
    let (b, k, h) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let mut params = ParamSet::new();
    let xs: Vec<_> = (0..steps)
        .map(|t| params.add(alloc::format!("x{t}"), random_tensor(rng, b, k)))
        .collect();
    let h0 = params.add("h0", random_tensor(rng, b, h));
    let c0 = params.add("c0", random_tensor(rng, b, h));
    let cell = LstmCell::new(&mut params, "lstm", k, h, rng);
    for id in [cell.w_ih, cell.w_hh, cell.bias] {
        let t = params.get_mut(id);
        let n = t.len();
        t.data_mut().copy_from_slice(&gaussian(rng, n, 0.7));
    }
    let weights = gaussian(rng, (steps + 1) * b * h, 1.0);
    let mut case = OpCase { params, weights };
    finite_difference_check(&mut case, |c| &mut c.params, |c, grad| {
        let mut g = Graph::new(&c.params);
        let mut hv = g.param(h0);
        let mut cv = g.param(c0);
        let mut terms = Vec::new();
        for (t, &x) in xs.iter().enumerate() {
            let xv = g.param(x);
            let (hn, cn) = cell.forward(&mut g, xv, hv, cv)?;
            hv = hn;
            cv = cn;
            terms.push(project(&mut g, hv, &c.weights[t * b * h..(t + 1) * b * h])?);
        }
        terms.push(project(&mut g, cv, &c.weights[steps * b * h..])?);
        let mut l = terms[0];
        for &t in &terms[1..] {
            l = g.add(l, t)?;
        }
        finish(&g, l, grad)
    })
}

fn check_embedding<R: Rng>(rng: &mut R) -> Result<Option<f64>> {
    let (n, w, b) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..6));
    let mut params = ParamSet::new();
    let emb = crate::nn::Embedding::new(&mut params, "emb", n, w, rng);
    let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
    let mut case = OpCase { params, weights: gaussian(rng, b * w, 1.0) };
    finite_difference_check(&mut case, |c| &mut c.params, |c, grad| {
        let mut g = Graph::new(&c.params);
        let y = emb.forward(&mut g, &idx)?;
        let l = project(&mut g, y, &c.weights)?;
        finish(&g, l, grad)
    })
}

/// Log-probability of a chosen legal action plus entropy, through the masked
/// log-softmax.
fn check_masked_log_prob<R: Rng>(rng: &mut R) -> Result<Option<f64>> {
    let (b, a) = (rng.random_range(1..4), rng.random_range(2..7));
    let mut params = ParamSet::new();
    let z = params.add("logits", random_tensor(rng, b, a));
    let mut mask = vec![false; b * a];
    let mut picks = Vec::with_capacity(b);
    for r in 0..b {
        for j in 0..a {
            mask[r * a + j] = rng.random_bool(0.6);
        }
        let forced = rng.random_range(0..a);
        mask[r * a + forced] = true;
        let legal: Vec<usize> = (0..a).filter(|&j| mask[r * a + j]).collect();
        picks.push(legal[rng.random_range(0..legal.len())]);
    }
    let mut case = OpCase { params, weights: Vec::new() };
    finite_difference_check(&mut case, |c| &mut c.params, |c, grad| {
        let mut g = Graph::new(&c.params);
        let zv = g.param(z);
        let lp = g.masked_log_softmax(zv, &mask)?;
        let chosen = g.pick(lp, &picks)?;
        let p = g.exp(lp);
        let plogp = g.mul(p, lp)?;
        let ent = g.sum_all(plogp);
        let s = g.sum_all(chosen);
        let l = g.sub(s, ent)?;
        finish(&g, l, grad)
    })
}

fn toy_spec<R: Rng>(rng: &mut R, agents: usize) -> NetworkSpec {
    NetworkSpec {
        obs_parts: vec![rng.random_range(1..4), rng.random_range(1..4)],
        encoder_width: 3,
        hidden_width: 3,
        num_actions: rng.random_range(2..5),
        num_agents: agents,
        id_embed_width: 2,
        global_state_width: 4,
    }
}

/// Full clipped joint-ratio loss (with entropy bonus) of a 2-agent, 3-step
/// toy batch, differentiated through the recurrent policy.
pub fn check_jrpo_loss<R: Rng>(rng: &mut R, mode: RatioMode) -> Result<Option<f64>> {
    let spec = toy_spec(rng, 2);
    let mut net = PolicyNet::new(&spec, rng)?;
    for t in net.params_mut().tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&gaussian(rng, n, 0.5));
    }
    let mut batch = jrpo::toy_batch(&spec, 3, rng);
    let clip = ClipConfig {
        ratio_mode: mode,
        ..ClipConfig::default()
    };
    let lp = jrpo::replay_log_probs(&net, &batch)?;
    let n = spec.num_agents;
    let eps = clip.epsilon;
    let kinks = [math::ln(1.0 - eps), math::ln(1.0 + eps)];
    let away = |x: f64| kinks.iter().all(|k| (x - k).abs() > KINK_MARGIN);
    // Redraw old log-probs until no ratio sits on a clip boundary, where
    // the loss is not differentiable.
    for (t, row) in lp.iter().enumerate() {
        loop {
            let d = gaussian(rng, row.len(), 0.3);
            let ok = match mode {
                RatioMode::Joint => d.chunks(n).all(|c| away(c.iter().sum())),
                RatioMode::PerAgent => d.iter().all(|&x| away(x)),
            };
            if ok {
                batch.old_log_probs[t] = row.iter().zip(&d).map(|(l, d)| l - d).collect();
                break;
            }
        }
    }
    finite_difference_check(&mut net, |n| n.params_mut(), |n, grad| {
        let mut g = Graph::new(n.params());
        let out = jrpo::policy_loss_graph(&mut g, n, &batch, &clip, batch.rows() as f64)?;
        finish(&g, out.loss, grad)
    })
}

/// Clipped value loss through the recurrent value network.
pub fn check_value_loss<R: Rng>(rng: &mut R) -> Result<Option<f64>> {
    let spec = toy_spec(rng, 2);
    let mut net = ValueNet::new(&spec, rng)?;
    for t in net.params_mut().tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&gaussian(rng, n, 0.5));
    }
    let mut batch = jrpo::toy_batch(&spec, 3, rng);
    let clip = 0.2;
    let values = current_values(&net, &batch)?;
    for (t, row) in values.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            let ret = batch.returns[t][i];
            loop {
                let old = v + gaussian(rng, 1, 0.3)[0];
                let dv = v - old;
                let vc = old + dv.clamp(-clip, clip);
                let (u, q) = ((v - ret) * (v - ret), (vc - ret) * (vc - ret));
                if (dv.abs() - clip).abs() > KINK_MARGIN && (u - q).abs() > KINK_MARGIN {
                    batch.old_values[t][i] = old;
                    break;
                }
            }
        }
    }
    finite_difference_check(&mut net, |n| n.params_mut(), |n, grad| {
        let mut g = Graph::new(n.params());
        let out = jrpo::value_loss_graph(&mut g, n, &batch, clip, batch.rows() as f64)?;
        finish(&g, out.loss, grad)
    })
}

/// Minimum distance kept between a sampled point and a non-differentiable
/// boundary of the clipped losses.
const KINK_MARGIN: f64 = 1e-2;

/// Value predictions of `net` along the batch, per step.
fn current_values(net: &ValueNet, batch: &jrpo::SeqBatch) -> Result<Vec<Vec<f64>>> {
    let w = batch.windows;
    let hw = net.spec().hidden_width;
    let mut g = Graph::new(net.params());
    let mut h = g.constant(w, hw, batch.value_h0.clone())?;
    let mut c = g.constant(w, hw, batch.value_c0.clone())?;
    let mut out = Vec::with_capacity(batch.len);
    for t in 0..batch.len {
        if t > 0 && batch.resets[t].iter().any(|&f| f != 1.0) {
            h = g.scale_rows(h, &batch.resets[t])?;
            c = g.scale_rows(c, &batch.resets[t])?;
        }
        let step = net.step_graph(&mut g, &batch.globals[t], w, h, c)?;
        h = step.h;
        c = step.c;
        out.push(g.value(step.value).to_vec());
    }
    Ok(out)
}

/// Runs every check on `trials` independent random draws at which the
/// function is smooth across the whole stencil.
pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    type Check = fn(&mut crate::Rng) -> Result<Option<f64>>;
    let checks: [(&'static str, Check); 10] = [
        ("linear", check_linear),
        ("layer_norm", check_layer_norm),
        ("linear_layernorm_relu", check_mlp),
        ("lstm_cell", |r| check_lstm(r, 1)),
        ("lstm_bptt", |r| check_lstm(r, 25)),
        ("embedding", check_embedding),
        ("masked_log_softmax", check_masked_log_prob),
        ("jrpo_loss_joint", |r| check_jrpo_loss(r, RatioMode::Joint)),
        ("jrpo_loss_per_agent", |r| check_jrpo_loss(r, RatioMode::PerAgent)),
        ("value_loss", check_value_loss),
    ];
    let mut reports = Vec::with_capacity(checks.len());
    for (i, (name, check)) in checks.iter().enumerate() {
        let mut rng = rng_from_seed(crate::derive_seed(seed, i as u64));
        let mut worst: f64 = 0.0;
        let (mut done, mut redrawn) = (0, 0);
        while done < trials {
            match check(&mut rng)? {
                Some(e) => {
                    worst = worst.max(e);
                    done += 1;
                }
                None if redrawn < 10 * trials.max(1) => redrawn += 1,
                None => return Err(Error::Precondition(format!("{name}: too many draws on a kink"))),
            }
        }
        reports.push(GradCheckReport {
            name,
            trials,
            redrawn,
            max_rel_error: worst,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_a_few_trials() {
        let reports = run_suite(10, 11).unwrap();
        assert_eq!(reports.len(), 10);
        for r in &reports {
            assert!(r.passed(), "{}: {}", r.name, r.max_rel_error);
        }
    }

    fn quadratic_case() -> (ParamSet, crate::nn::ParamId) {
        let mut params = ParamSet::new();
        let x = params.add("x", Tensor::from_vec(&[1, 3], vec![0.5, -1.0, 2.0]).unwrap());
        (params, x)
    }

    #[test]
    fn planted_gradient_error_is_caught() {
        let (mut params, x) = quadratic_case();
        let e = finite_difference_check(&mut params, |p| p, |p, grad| {
            let mut g = Graph::new(p);
            let v = g.param(x);
            let sq = g.square(v);
            let l = g.sum_all(sq);
            let (f, grads, b) = finish(&g, l, grad)?;
            // Off by 1% on every coordinate.
            let grads = grads.map(|mut gr| {
                gr.0.iter_mut().flatten().for_each(|v| *v *= 1.01);
                gr
            });
            Ok((f, grads, b))
        })
        .unwrap()
        .unwrap();
        assert!(e > 9e-3 && e < 1.1e-2, "{e}");
    }

    #[test]
    fn stencil_across_a_relu_kink_is_rejected() {
        let (mut params, x) = quadratic_case();
        let eval = |p: &ParamSet, grad: bool| {
            let mut g = Graph::new(p);
            let v = g.param(x);
            let r = g.relu(v);
            let l = g.sum_all(r);
            finish(&g, l, grad)
        };
        assert!(finite_difference_check(&mut params, |p| p, eval).unwrap().unwrap() < 1e-10);
        params.get_mut(x).data_mut()[1] = STEP;
        assert_eq!(finite_difference_check(&mut params, |p| p, eval).unwrap(), None);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1.0, 1.0 + 1e-9) < 1e-8);
    }
}
