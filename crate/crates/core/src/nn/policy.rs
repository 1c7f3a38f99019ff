use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::graph::{masked_log_softmax_row, Graph, Var};
use super::layers::{Embedding, Linear, LstmCell, Mlp};
use super::tensor::ParamSet;
use crate::{Error, Result};

/// Shape of the policy and value networks.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NetworkSpec {
    /// Width of each observation part; every part gets its own encoder.
    pub obs_parts: Vec<usize>,
    pub encoder_width: usize,
    pub hidden_width: usize,
    pub num_actions: usize,
    pub num_agents: usize,
    pub id_embed_width: usize,
    /// Width of the global state fed to the value network.
    pub global_state_width: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.obs_parts.is_empty() {
            return Err(Error::config("network.obs_parts", "at least one observation part"));
        }
        if self.obs_parts.iter().any(|&w| w == 0) {
            return Err(Error::config("network.obs_parts", "widths must be >= 1"));
        }
        for (field, v) in [
            ("network.encoder_width", self.encoder_width),
            ("network.hidden_width", self.hidden_width),
            ("network.num_agents", self.num_agents),
            ("network.id_embed_width", self.id_embed_width),
            ("network.global_state_width", self.global_state_width),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        if self.num_actions < 2 {
            return Err(Error::config("network.num_actions", "must be >= 2"));
        }
        Ok(())
    }

    /// Total observation width of one agent (sum of the parts).
    pub fn obs_width(&self) -> usize {
        self.obs_parts.iter().sum()
    }

    /// FNV-1a over the fields in declaration order, each as little-endian u64
    /// (the part list is prefixed by its length).
    pub fn fingerprint(&self) -> u64 {
        use core::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        let mut put = |x: usize| h.write(&(x as u64).to_le_bytes());
        put(self.obs_parts.len());
        for &w in &self.obs_parts {
            put(w);
        }
        put(self.encoder_width);
        put(self.hidden_width);
        put(self.num_actions);
        put(self.num_agents);
        put(self.id_embed_width);
        put(self.global_state_width);
        h.finish()
    }
}

/// LSTM hidden and cell vectors.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(width: usize) -> Self {
        RecurrentState {
            h: vec![0.0; width],
            c: vec![0.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.h.len()
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(|x| x.is_finite())
    }
}

/// Categorical distribution over actions with illegal entries removed.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedCategorical {
    logits: Vec<f64>,
    mask: Vec<bool>,
    log_probs: Vec<f64>,
}

impl MaskedCategorical {
    pub fn new(logits: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if logits.len() != mask.len() {
            return Err(Error::Shape(format!(
                "{} logits with {} mask entries",
                logits.len(),
                mask.len()
            )));
        }
        let mut log_probs = vec![0.0; logits.len()];
        masked_log_softmax_row(&logits, &mask, &mut log_probs)?;
        Ok(MaskedCategorical {
            logits,
            mask,
            log_probs,
        })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn num_actions(&self) -> usize {
        self.logits.len()
    }

    /// Probabilities; exactly zero on masked actions.
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs
            .iter()
            .zip(&self.mask)
            .map(|(&lp, &m)| if m { crate::math::exp(lp) } else { 0.0 })
            .collect()
    }

    pub fn log_prob(&self, action: usize) -> Result<f64> {
        match self.mask.get(action) {
            Some(true) => Ok(self.log_probs[action]),
            _ => Err(Error::IllegalAction {
                team: 0,
                agent: 0,
                action,
            }),
        }
    }

    pub fn entropy(&self) -> f64 {
        self.log_probs
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&lp, _)| -crate::math::exp(lp) * lp)
            .sum()
    }

    /// Inverse-CDF sample over legal actions.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut last = 0;
        for (a, (&lp, &m)) in self.log_probs.iter().zip(&self.mask).enumerate() {
            if !m {
                continue;
            }
            cum += crate::math::exp(lp);
            last = a;
            if u < cum {
                return a;
            }
        }
        last
    }

    /// Most probable legal action (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = usize::MAX;
        for (a, &m) in self.mask.iter().enumerate() {
            if m && (best == usize::MAX || self.logits[a] > self.logits[best]) {
                best = a;
            }
        }
        best
    }
}

/// Graph handles produced by one recurrent policy step.
pub struct PolicyStep {
    pub logits: Var,
    pub log_probs: Var,
    pub h: Var,
    pub c: Var,
}

/// Shared-parameter policy: per-part encoders, LSTM, player-ID embedding
/// appended after the LSTM, masked categorical head.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    spec: NetworkSpec,
    params: ParamSet,
    encoders: Vec<Mlp>,
    lstm: LstmCell,
    embed: Embedding,
    head: Linear,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let encoders = spec
            .obs_parts
            .iter()
            .enumerate()
            .map(|(i, &w)| Mlp::new(&mut params, &format!("enc{i}"), w, spec.encoder_width, rng))
            .collect::<Vec<_>>();
        let lstm_in = spec.encoder_width * spec.obs_parts.len();
        let lstm = LstmCell::new(&mut params, "lstm", lstm_in, spec.hidden_width, rng);
        let embed = Embedding::new(&mut params, "player_id", spec.num_agents, spec.id_embed_width, rng);
        let head = Linear::new(
            &mut params,
            "head",
            spec.hidden_width + spec.id_embed_width,
            spec.num_actions,
            0.01,
            rng,
        );
        Ok(PolicyNet {
            spec: spec.clone(),
            params,
            encoders,
            lstm,
            embed,
            head,
        })
    }

    /// Network with the right structure and every parameter set to zero.
    pub fn zeroed(spec: &NetworkSpec) -> Result<Self> {
        let mut net = Self::new(spec, &mut crate::rng_from_seed(0))?;
        for t in net.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records one step for `rows` agent rows. `obs` is row-major with the
    /// parts of each row concatenated; `mask` is `rows × num_actions`.
    pub fn step_graph(
        &self,
        g: &mut Graph,
        obs: &[f64],
        player_ids: &[usize],
        h: Var,
        c: Var,
        mask: &[bool],
    ) -> Result<PolicyStep> {
        let rows = player_ids.len();
        let width = self.spec.obs_width();
        if obs.len() != rows * width {
            return Err(Error::Shape(format!(
                "observation batch of {} values for {rows} rows of width {width}",
                obs.len()
            )));
        }
        if let Some(&bad) = player_ids.iter().find(|&&p| p >= self.spec.num_agents) {
            return Err(Error::Shape(format!(
                "player id {bad} with {} agents",
                self.spec.num_agents
            )));
        }
        let mut feats = Vec::with_capacity(self.encoders.len());
        let mut off = 0;
        for (enc, &w) in self.encoders.iter().zip(&self.spec.obs_parts) {
            let mut part = Vec::with_capacity(rows * w);
            for r in 0..rows {
                part.extend_from_slice(&obs[r * width + off..r * width + off + w]);
            }
            let x = g.constant(rows, w, part)?;
            feats.push(enc.forward(g, x)?);
            off += w;
        }
        let x = if feats.len() == 1 { feats[0] } else { g.concat(&feats)? };
        let (h, c) = self.lstm.forward(g, x, h, c)?;
        let id = self.embed.forward(g, player_ids)?;
        let z = g.concat(&[h, id])?;
        let logits = self.head.forward(g, z)?;
        let log_probs = g.masked_log_softmax(logits, mask)?;
        Ok(PolicyStep {
            logits,
            log_probs,
            h,
            c,
        })
    }

    /// Batched inference without keeping the tape.
    pub fn forward_batch(
        &self,
        obs: &[f64],
        player_ids: &[usize],
        states: &[RecurrentState],
        mask: &[bool],
    ) -> Result<(Vec<MaskedCategorical>, Vec<RecurrentState>)> {
        let rows = player_ids.len();
        let hw = self.spec.hidden_width;
        let a = self.spec.num_actions;
        if states.len() != rows || states.iter().any(|s| s.width() != hw) {
            return Err(Error::Shape(format!("{} recurrent states for {rows} rows", states.len())));
        }
        if mask.len() != rows * a {
            return Err(Error::Shape(format!("mask of {} for {rows} rows", mask.len())));
        }
        let mut g = Graph::new(&self.params);
        let (h, c) = state_vars(&mut g, states)?;
        let out = self.step_graph(&mut g, obs, player_ids, h, c, mask)?;
        let logits = g.value(out.logits);
        let lp = g.value(out.log_probs);
        let hv = g.value(out.h);
        let cv = g.value(out.c);
        let mut dists = Vec::with_capacity(rows);
        let mut next = Vec::with_capacity(rows);
        for r in 0..rows {
            dists.push(MaskedCategorical {
                logits: logits[r * a..(r + 1) * a].to_vec(),
                mask: mask[r * a..(r + 1) * a].to_vec(),
                log_probs: lp[r * a..(r + 1) * a].to_vec(),
            });
            next.push(RecurrentState {
                h: hv[r * hw..(r + 1) * hw].to_vec(),
                c: cv[r * hw..(r + 1) * hw].to_vec(),
            });
        }
        Ok((dists, next))
    }

    /// Single-agent forward step. `obs_parts` holds one slice per part.
    pub fn forward(
        &self,
        obs_parts: &[&[f64]],
        player_id: usize,
        state: &RecurrentState,
        mask: &[bool],
    ) -> Result<(MaskedCategorical, RecurrentState)> {
        if obs_parts.len() != self.spec.obs_parts.len()
            || obs_parts.iter().zip(&self.spec.obs_parts).any(|(p, &w)| p.len() != w)
        {
            return Err(Error::Shape("observation parts do not match the network spec".into()));
        }
        let obs: Vec<f64> = obs_parts.concat();
        let (mut d, mut s) =
            self.forward_batch(&obs, &[player_id], core::slice::from_ref(state), mask)?;
        Ok((d.pop().unwrap(), s.pop().unwrap()))
    }
}

pub(crate) fn state_vars(g: &mut Graph, states: &[RecurrentState]) -> Result<(Var, Var)> {
    let rows = states.len();
    let w = states.first().map_or(0, RecurrentState::width);
    let mut h = Vec::with_capacity(rows * w);
    let mut c = Vec::with_capacity(rows * w);
    for s in states {
        h.extend_from_slice(&s.h);
        c.extend_from_slice(&s.c);
    }
    Ok((g.constant(rows, w, h)?, g.constant(rows, w, c)?))
}

/// Centralised value network over the global state.
#[derive(Clone, Debug)]
pub struct ValueNet {
    spec: NetworkSpec,
    params: ParamSet,
    encoder: Mlp,
    lstm: LstmCell,
    head: Linear,
}

pub struct ValueStep {
    pub value: Var,
    pub h: Var,
    pub c: Var,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let encoder = Mlp::new(&mut params, "enc", spec.global_state_width, spec.encoder_width, rng);
        let lstm = LstmCell::new(&mut params, "lstm", spec.encoder_width, spec.hidden_width, rng);
        let head = Linear::new(&mut params, "head", spec.hidden_width, 1, 1.0, rng);
        Ok(ValueNet {
            spec: spec.clone(),
            params,
            encoder,
            lstm,
            head,
        })
    }

    pub fn zeroed(spec: &NetworkSpec) -> Result<Self> {
        let mut net = Self::new(spec, &mut crate::rng_from_seed(0))?;
        for t in net.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn step_graph(&self, g: &mut Graph, states: &[f64], rows: usize, h: Var, c: Var) -> Result<ValueStep> {
        let w = self.spec.global_state_width;
        if states.len() != rows * w {
            return Err(Error::Shape(format!(
                "global state batch of {} values for {rows} rows of width {w}",
                states.len()
            )));
        }
        let x = g.constant(rows, w, states.to_vec())?;
        let x = self.encoder.forward(g, x)?;
        let (h, c) = self.lstm.forward(g, x, h, c)?;
        let value = self.head.forward(g, h)?;
        Ok(ValueStep { value, h, c })
    }

    /// Value of each global state row plus the next recurrent states.
    pub fn forward_batch(&self, states: &[f64], rec: &[RecurrentState]) -> Result<(Vec<f64>, Vec<RecurrentState>)> {
        if states.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("value network input".into()));
        }
        let rows = rec.len();
        let hw = self.spec.hidden_width;
        let mut g = Graph::new(&self.params);
        let (h, c) = state_vars(&mut g, rec)?;
        let out = self.step_graph(&mut g, states, rows, h, c)?;
        let values = g.value(out.value).to_vec();
        let hv = g.value(out.h);
        let cv = g.value(out.c);
        let next = (0..rows)
            .map(|r| RecurrentState {
                h: hv[r * hw..(r + 1) * hw].to_vec(),
                c: cv[r * hw..(r + 1) * hw].to_vec(),
            })
            .collect();
        Ok((values, next))
    }

    pub fn forward(&self, global_state: &[f64], state: &RecurrentState) -> Result<(f64, RecurrentState)> {
        let (v, mut s) = self.forward_batch(global_state, core::slice::from_ref(state))?;
        Ok((v[0], s.pop().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(actions: usize) -> NetworkSpec {
        NetworkSpec {
            obs_parts: vec![3, 2],
            encoder_width: 4,
            hidden_width: 5,
            num_actions: actions,
            num_agents: 2,
            id_embed_width: 2,
            global_state_width: 6,
        }
    }

    #[test]
    fn zero_weights_uniform_policy() {
        let net = PolicyNet::zeroed(&spec(5)).unwrap();
        let s = RecurrentState::zeros(5);
        let (d, next) = net.forward(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5]], 1, &s, &[true; 5]).unwrap();
        for p in d.probs() {
            assert!((p - 0.2).abs() < 1e-15);
        }
        assert!(next.h.iter().all(|&x| x == 0.0));
        let mut mask = [false; 5];
        mask[3] = true;
        let (d, _) = net.forward(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5]], 0, &s, &mask).unwrap();
        assert_eq!(d.probs()[3], 1.0);
        assert_eq!(d.log_prob(3).unwrap(), 0.0);
        assert!(d.log_prob(2).is_err());
    }

    #[test]
    fn empty_mask_rejected() {
        let net = PolicyNet::zeroed(&spec(3)).unwrap();
        let r = net.forward(&[&[0.0; 3], &[0.0; 2]], 0, &RecurrentState::zeros(5), &[false; 3]);
        assert_eq!(r.unwrap_err(), Error::EmptyMask);
    }

    #[test]
    fn bad_inputs_rejected() {
        let net = PolicyNet::zeroed(&spec(3)).unwrap();
        let s = RecurrentState::zeros(5);
        assert!(net.forward(&[&[0.0; 2], &[0.0; 2]], 0, &s, &[true; 3]).is_err());
        assert!(net.forward(&[&[0.0; 3], &[0.0; 2]], 2, &s, &[true; 3]).is_err());
        let v = ValueNet::zeroed(&spec(3)).unwrap();
        assert!(matches!(v.forward(&[f64::NAN; 6], &s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = crate::rng_from_seed(9);
        let net = PolicyNet::new(&spec(4), &mut rng).unwrap();
        let s = RecurrentState {
            h: vec![0.1, -0.2, 0.3, 0.0, 0.5],
            c: vec![0.0, 0.4, -0.1, 0.2, 0.0],
        };
        let obs: [&[f64]; 2] = [&[0.3, -1.0, 2.0], &[0.7, 0.1]];
        let a = net.forward(&obs, 1, &s, &[true, false, true, true]).unwrap();
        let b = net.forward(&obs, 1, &s, &[true, false, true, true]).unwrap();
        assert_eq!(a, b);
        let mut r1 = crate::rng_from_seed(5);
        let mut r2 = crate::rng_from_seed(5);
        for _ in 0..100 {
            assert_eq!(a.0.sample(&mut r1), b.0.sample(&mut r2));
        }
        let v = ValueNet::new(&spec(4), &mut rng).unwrap();
        let g = [0.1, 0.2, -0.3, 0.4, 0.0, 1.0];
        assert_eq!(v.forward(&g, &s).unwrap(), v.forward(&g, &s).unwrap());
    }

    #[test]
    fn zero_value_net_outputs_zero() {
        let v = ValueNet::zeroed(&spec(3)).unwrap();
        let (x, s) = v.forward(&[1.0; 6], &RecurrentState::zeros(5)).unwrap();
        assert_eq!(x, 0.0);
        assert!(s.h.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn value_perturbation_matches_gradient() {
        let sp = spec(3);
        let mut net = ValueNet::new(&sp, &mut crate::rng_from_seed(2)).unwrap();
        let g = [0.5, -0.2, 0.1, 0.9, -1.0, 0.3];
        let s = RecurrentState::zeros(5);
        let mut graph = Graph::new(net.params());
        let (h, c) = state_vars(&mut graph, core::slice::from_ref(&s)).unwrap();
        let out = net.step_graph(&mut graph, &g, 1, h, c).unwrap();
        let grads = graph.backward(out.value).unwrap();
        let analytic = grads.0[0][0];
        let delta = 1e-6;
        let w = net.params().tensors()[0].data()[0];
        net.params_mut().tensors_mut()[0].data_mut()[0] = w + delta;
        let up = net.forward(&g, &s).unwrap().0;
        net.params_mut().tensors_mut()[0].data_mut()[0] = w - delta;
        let down = net.forward(&g, &s).unwrap().0;
        let numeric = (up - down) / (2.0 * delta);
        assert!((numeric - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3));
    }

    #[test]
    fn parameter_count_is_a_function_of_spec() {
        let a = PolicyNet::new(&spec(3), &mut crate::rng_from_seed(1)).unwrap();
        let b = PolicyNet::new(&spec(3), &mut crate::rng_from_seed(2)).unwrap();
        assert_eq!(a.params().num_scalars(), b.params().num_scalars());
        // Two encoders of two Linear+LayerNorm layers, LSTM, embedding, head.
        let enc = |i: usize| (i * 4 + 4) + 8 + (4 * 4 + 4) + 8;
        let lstm = 20 * 8 + 20 * 5 + 20;
        let expect = enc(3) + enc(2) + lstm + 2 * 2 + 3 * 7 + 3;
        assert_eq!(a.params().num_scalars(), expect);
    }

    #[test]
    fn sampling_frequencies_match_softmax() {
        let d = MaskedCategorical::new(vec![math_ln3(), 0.0], vec![true, true]).unwrap();
        let n = 1_000_000;
        let mut rng = crate::rng_from_seed(77);
        let ones = (0..n).filter(|_| d.sample(&mut rng) == 1).count() as f64 / n as f64;
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((ones - 0.25).abs() < 3.0 * se, "{ones}");

        let d = MaskedCategorical::new(vec![0.0; 4], vec![true; 4]).unwrap();
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[d.sample(&mut rng)] += 1;
        }
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 3.0 * se);
        }

        let d = MaskedCategorical::new(vec![5.0, -1.0, 2.0], vec![false, true, false]).unwrap();
        assert!((0..1000).all(|_| d.sample(&mut rng) == 1));
    }

    fn math_ln3() -> f64 {
        crate::math::ln(3.0)
    }

    #[test]
    fn log_prob_examples() {
        let d = MaskedCategorical::new(vec![0.0; 9], vec![true; 9]).unwrap();
        assert!((d.log_prob(4).unwrap() - crate::math::ln(1.0 / 9.0)).abs() < 1e-15);
        let e = d.entropy();
        assert!((e - crate::math::ln(9.0)).abs() < 1e-12);
        let mut mask = vec![false; 9];
        mask[2] = true;
        assert_eq!(MaskedCategorical::new(vec![0.0; 9], mask.clone()).unwrap().argmax(), 2);
        let bad = MaskedCategorical::new(vec![0.0; 9], mask).unwrap();
        assert!(matches!(bad.log_prob(0), Err(Error::IllegalAction { .. })));
    }

    proptest! {
        #[test]
        fn masked_probabilities_normalise(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..12),
            bits in proptest::collection::vec(any::<bool>(), 12),
            forced in 0usize..12,
        ) {
            let k = logits.len();
            let mut mask: Vec<bool> = bits[..k].to_vec();
            mask[forced % k] = true;
            let d = MaskedCategorical::new(logits, mask.clone()).unwrap();
            let p = d.probs();
            let mut sum = 0.0;
            for (pi, m) in p.iter().zip(&mask) {
                if *m { sum += pi } else { prop_assert_eq!(*pi, 0.0) }
            }
            prop_assert!((sum - 1.0).abs() < 1e-12);
            let mut rng = crate::rng_from_seed(k as u64);
            for _ in 0..20 {
                prop_assert!(mask[d.sample(&mut rng)]);
            }
        }
    }
}
