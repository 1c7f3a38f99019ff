use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::ParamSet;
use crate::math;
use crate::{Error, Result};

/// Bias-corrected Adam moments for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 1e-4;

    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Applies one update from the gradient slots of `params`.
    ///
    /// Missing gradient slots count as zero. Non-finite gradients abort the
    /// step before any parameter or moment is touched.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len()
            || params.tensors().iter().zip(&self.m).any(|(t, m)| t.len() != m.len())
        {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        for (i, t) in params.tensors().iter().enumerate() {
            if let Some(g) = t.grad() {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of parameter {i}")));
                }
            }
        }
        self.step += 1;
        let bc1 = 1.0 - math::powi(self.beta1, self.step as i32);
        let bc2 = 1.0 - math::powi(self.beta2, self.step as i32);
        for ((t, m), v) in params.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = t.grad().map(<[f64]>::to_vec);
            let data = t.data_mut();
            for k in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                data[k] -= self.lr * mh / (math::sqrt(vh) + self.eps);
            }
        }
        Ok(())
    }
}

const ADAM_MAGIC: &[u8; 4] = b"SPFA";

impl AdamState {
    /// Binary form: magic "SPFA", step (u64), lr, β1, β2, eps (f64), then
    /// every first moment followed by every second moment, all little endian
    /// in parameter order.
    pub fn to_blob(&self) -> Vec<u8> {
        let n: usize = self.m.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(44 + 16 * n);
        out.extend_from_slice(ADAM_MAGIC);
        out.extend_from_slice(&self.step.to_le_bytes());
        for x in [self.lr, self.beta1, self.beta2, self.eps] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for x in self.m.iter().chain(&self.v).flatten() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Reads a blob written by [`AdamState::to_blob`] for `params`.
    pub fn from_blob(bytes: &[u8], params: &ParamSet) -> Result<Self> {
        let n = params.num_scalars();
        if bytes.len() != 44 + 16 * n || &bytes[..4] != ADAM_MAGIC {
            return Err(Error::Blob(format!(
                "optimizer blob of {} bytes does not fit {n} parameters",
                bytes.len()
            )));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let mut st = AdamState::new(params, f(12));
        st.step = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        st.beta1 = f(20);
        st.beta2 = f(28);
        st.eps = f(36);
        let mut at = 44;
        for buf in st.m.iter_mut().chain(st.v.iter_mut()) {
            for x in buf.iter_mut() {
                *x = f(at);
                at += 8;
            }
        }
        Ok(st)
    }
}

/// Functional form: set gradients, then step.
pub fn adam_step(params: &mut ParamSet, grads: super::Gradients, opt: &mut AdamState) -> Result<()> {
    params.set_grads(grads)?;
    opt.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Gradients, Tensor};

    fn scalar_params(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("x", Tensor::from_vec(&[1, 1], vec![x]).unwrap());
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_params(0.5);
        let mut opt = AdamState::new(&p, 0.1);
        adam_step(&mut p, Gradients(vec![vec![1.0]]), &mut opt).unwrap();
        let want = 0.5 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.tensors()[0].data()[0] - want).abs() < 1e-15);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = scalar_params(0.5);
        let mut opt = AdamState::new(&p, 0.1);
        adam_step(&mut p, Gradients(vec![vec![1.0]]), &mut opt).unwrap();
        let before = p.tensors()[0].data()[0];
        let (m0, v0) = (opt.first_moments()[0][0], opt.second_moments()[0][0]);
        let mut q = scalar_params(0.0);
        let mut fresh = AdamState::new(&q, 0.1);
        adam_step(&mut q, Gradients(vec![vec![0.0]]), &mut fresh).unwrap();
        assert_eq!(q.tensors()[0].data()[0], 0.0);
        adam_step(&mut p, Gradients(vec![vec![0.0]]), &mut opt).unwrap();
        assert!((opt.first_moments()[0][0] - 0.9 * m0).abs() < 1e-15);
        assert!((opt.second_moments()[0][0] - 0.999 * v0).abs() < 1e-15);
        // The decayed first moment still carries momentum.
        assert!(p.tensors()[0].data()[0] < before);
    }

    #[test]
    fn blob_round_trip_is_exact() {
        let mut p = ParamSet::new();
        p.add("a", Tensor::from_vec(&[2, 2], vec![0.3, -0.7, 1.0, 2.0]).unwrap());
        p.add("b", Tensor::from_vec(&[1, 3], vec![0.1, 0.2, 0.3]).unwrap());
        let mut opt = AdamState::new(&p, 0.01);
        for k in 0..3 {
            let g = vec![vec![0.1 * k as f64, -0.2, 1.0 / 3.0, 7.0], vec![1e-300, -4.0, 0.5]];
            adam_step(&mut p, Gradients(g), &mut opt).unwrap();
        }
        let back = AdamState::from_blob(&opt.to_blob(), &p).unwrap();
        assert_eq!(back, opt);
        let mut small = ParamSet::new();
        small.add("a", Tensor::from_vec(&[1, 1], vec![0.0]).unwrap());
        assert!(matches!(AdamState::from_blob(&opt.to_blob(), &small), Err(Error::Blob(_))));
    }

    #[test]
    fn identical_pairs_update_identically() {
        let mut p = ParamSet::new();
        p.add("a", Tensor::from_vec(&[1, 2], vec![0.3, -0.7]).unwrap());
        p.add("b", Tensor::from_vec(&[1, 2], vec![0.3, -0.7]).unwrap());
        let mut opt = AdamState::new(&p, 0.01);
        for k in 0..5 {
            let g = vec![0.1 * k as f64, -0.2];
            adam_step(&mut p, Gradients(vec![g.clone(), g]), &mut opt).unwrap();
        }
        assert_eq!(p.tensors()[0].data(), p.tensors()[1].data());
    }

    #[test]
    fn non_finite_gradient_rejected_without_update() {
        let mut p = scalar_params(0.5);
        let mut opt = AdamState::new(&p, 0.1);
        let err = adam_step(&mut p, Gradients(vec![vec![f64::NAN]]), &mut opt);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p.tensors()[0].data()[0], 0.5);
        assert_eq!(opt.step, 0);
        assert_eq!(opt.first_moments()[0][0], 0.0);
    }
}
