use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Grads, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer state for one network (a fixed set of parameters).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    params: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore, params: &[ParamId]) -> Self {
        let zeros = |id: &ParamId| Tensor::zeros(store.get(*id).shape());
        Self {
            config,
            t: 0,
            params: params.to_vec(),
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn second_moment(&self, k: usize) -> &Tensor {
        &self.v[k]
    }

    /// One bias-corrected update of every parameter in this state. Parameters
    /// absent from `grads` are updated with a zero gradient. Fails without
    /// touching any parameter if a gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        for &id in &self.params {
            if let Some(g) = grads.get(id) {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient of `{}`",
                        store.name(id)
                    )));
                }
                if g.shape() != store.get(id).shape() {
                    return Err(Error::shape("adam", store.get(id).shape(), g.shape()));
                }
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (k, &id) in self.params.iter().enumerate() {
            let g = grads.get(id);
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single-tensor Adam step, used where a parameter is managed outside a
/// [`ParamStore`].
pub fn adam_step(
    config: &AdamConfig,
    t: &mut u64,
    m: &mut Tensor,
    v: &mut Tensor,
    param: &mut Tensor,
    grad: &Tensor,
    name: &str,
) -> Result<()> {
    if param.shape() != grad.shape() || m.shape() != param.shape() || v.shape() != param.shape() {
        return Err(Error::shape("adam_step", param.shape(), grad.shape()));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite(format!("gradient of `{name}`")));
    }
    let mut store = ParamStore::new();
    let id = store.add(name, param.clone())?;
    let mut state = AdamState {
        config: *config,
        t: *t,
        params: vec![id],
        m: vec![m.clone()],
        v: vec![v.clone()],
    };
    let mut grads = Grads::new();
    grads.accumulate(id, grad);
    state.step(&mut store, &grads)?;
    *t = state.t;
    *m = state.m.pop().expect("one moment");
    *v = state.v.pop().expect("one moment");
    *param = store.get(id).clone();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(value)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_grad_is_identity() {
        let (mut s, id) = one(0.7);
        let mut st = AdamState::new(AdamConfig::default(), &s, &[id]);
        let mut g = Grads::new();
        g.accumulate(id, &Tensor::scalar(0.0));
        st.step(&mut s, &g).unwrap();
        assert_eq!(s.get(id).item(), 0.7);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        let (mut s, id) = one(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &s, &[id]);
        let mut g = Grads::new();
        g.accumulate(id, &Tensor::scalar(1.0));
        st.step(&mut s, &g).unwrap();
        // m̂ = g = 1, v̂ = g² = 1 → Δ = -lr / (1 + ε)
        assert!((s.get(id).item() - (-0.001 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_do_not_grow() {
        let (mut s, id) = one(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &s, &[id]);
        let mut g = Grads::new();
        g.accumulate(id, &Tensor::scalar(0.3));
        let mut prev = 0.0;
        let mut last_delta = f64::INFINITY;
        for _ in 0..5 {
            st.step(&mut s, &g).unwrap();
            let now = s.get(id).item();
            let delta = (now - prev).abs();
            assert!(delta <= last_delta * (1.0 + 1e-12));
            last_delta = delta;
            prev = now;
        }
        assert!(st.second_moment(0).data()[0] >= 0.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, id) = one(1.0);
        let mut st = AdamState::new(AdamConfig::default(), &s, &[id]);
        let mut g = Grads::new();
        g.accumulate(id, &Tensor::scalar(f64::NAN));
        let err = st.step(&mut s, &g).unwrap_err().to_string();
        assert!(err.contains("`w`"), "{err}");
        assert_eq!(s.get(id).item(), 1.0);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn single_tensor_step_matches_state() {
        let cfg = AdamConfig::default();
        let mut t = 0;
        let mut m = Tensor::zeros(&[2]);
        let mut v = Tensor::zeros(&[2]);
        let mut p = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::new(&[2], vec![0.5, -2.0]).unwrap();
        adam_step(&cfg, &mut t, &mut m, &mut v, &mut p, &g, "p").unwrap();
        assert_eq!(t, 1);
        assert!((p.data()[0] - (1.0 - 0.001 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p.data()[1] - (-1.0 + 0.001 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
    }
}
