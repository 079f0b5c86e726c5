use crate::error::{Error, Result};
use crate::tensor::{ParameterStore, Tensor};
use crate::train::TrainConfig;

/// First and second moments per parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let zeros: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, store: &ParameterStore) -> bool {
        self.m.len() == store.len()
            && self.v.len() == store.len()
            && store.ids().all(|id| {
                let shape = store.value(id).shape();
                self.m[id.index()].shape() == shape && self.v[id.index()].shape() == shape
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// One Adam update from the gradients held in `store`.
///
/// The gradients are first checked for non-finite entries and, when
/// `gradient_clip_norm > 0`, scaled so their global norm does not exceed it.
pub fn adam_step(store: &mut ParameterStore, state: &mut AdamState, config: &TrainConfig) -> Result<StepReport> {
    if !state.matches(store) {
        return Err(Error::ArtifactMismatch("optimizer state does not match the parameters".into()));
    }
    for id in store.ids() {
        if let Some(pos) = store.grad(id).data().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                location: format!("gradient of {}", store.name(id)),
                detail: format!("entry {pos} is {}", store.grad(id).data()[pos]),
            });
        }
    }
    let grad_norm = store.grad_norm();
    let clip = config.gradient_clip_norm;
    let clipped = clip > 0.0 && grad_norm > clip;
    let scale = if clipped { clip / grad_norm } else { 1.0 };

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g: Vec<f64> = store.grad(id).data().iter().map(|g| g * scale).collect();
        let m = state.m[id.index()].data_mut();
        let v = state.v[id.index()].data_mut();
        let p = store.value_mut(id).data_mut();
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
    Ok(StepReport { grad_norm, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::scalar(w)).unwrap();
        s
    }

    fn set_grad(s: &mut ParameterStore, g: f64) {
        let id = s.id("w").unwrap();
        s.grad_mut(id).data_mut()[0] = g;
    }

    fn value(s: &ParameterStore) -> f64 {
        s.value(s.id("w").unwrap()).data()[0]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.7);
        let mut st = AdamState::new(&s);
        s.zero_grads();
        adam_step(&mut s, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(value(&s), 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        set_grad(&mut s, 1.0);
        let cfg = TrainConfig::default();
        adam_step(&mut s, &mut st, &cfg).unwrap();
        // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
        assert!((value(&s) - (1.0 - cfg.learning_rate)).abs() < 1e-10);
    }

    #[test]
    fn quadratic_loss_decreases() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let w = value(&s);
            assert!(w * w < prev);
            prev = w * w;
            set_grad(&mut s, 2.0 * w);
            adam_step(&mut s, &mut st, &cfg).unwrap();
        }
        assert!(value(&s).powi(2) < prev);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        set_grad(&mut s, f64::NAN);
        match adam_step(&mut s, &mut st, &TrainConfig::default()) {
            Err(Error::Numeric { location, .. }) => assert!(location.contains('w')),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(value(&s), 1.0);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_scales_to_norm() {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::row(vec![0.0, 0.0])).unwrap();
        let mut st = AdamState::new(&s);
        let id = s.id("a").unwrap();
        s.grad_mut(id).data_mut().copy_from_slice(&[30.0, 40.0]);
        let r = adam_step(&mut s, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(r.grad_norm, 50.0);
        assert!(r.clipped);
        // first moment after clipping to norm 5: (1 - b1) * (3, 4)
        assert!((st.m[0].data()[0] - 0.1 * 3.0).abs() < 1e-12);
        assert!((st.m[0].data()[1] - 0.1 * 4.0).abs() < 1e-12);
    }
}
