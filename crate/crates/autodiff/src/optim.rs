use crate::error::{shape_err, AutodiffError, Result};
use crate::params::ParamStore;

/// Moment accumulators and step count for [`AdamW`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: OptimizerState,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: OptimizerState::default(),
        }
    }

    /// One update. `grads` must be in store order with matching lengths.
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(shape_err(
                "adamw",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (p, g) in params.params().iter().zip(grads) {
            if g.len() != p.data.len() {
                return Err(shape_err(
                    "adamw",
                    format!("gradient for `{}` has {} values, expected {}", p.name, g.len(), p.data.len()),
                ));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(AutodiffError::NonFiniteGradient(p.name.clone()));
            }
        }
        let st = &mut self.state;
        if st.m.is_empty() {
            st.m = params.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
            st.v = st.m.clone();
        }
        st.step += 1;
        let t = st.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (((p, g), m), v) in params
            .params_mut()
            .iter_mut()
            .zip(grads)
            .zip(st.m.iter_mut())
            .zip(st.v.iter_mut())
        {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] = p.data[i] * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|x| *x *= s);
    }
    norm
}
