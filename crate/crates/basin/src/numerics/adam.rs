use crate::error::{Error, Result};
use crate::numerics::tensor::{ParamId, ParamStore};

/// Adam with bias correction and an exponential per-epoch learning-rate
/// decay: the effective rate after epoch `e` is `learning_rate * decay^e`.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay_factor: f64,
    pub step_count: u64,
    epoch: u32,
    targets: Vec<ParamId>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64, decay_factor: f64, store: &ParamStore, targets: Vec<ParamId>) -> Self {
        let first_moment = targets
            .iter()
            .map(|id| vec![0.0; store.get(*id).numel()])
            .collect();
        let second_moment = targets
            .iter()
            .map(|id| vec![0.0; store.get(*id).numel()])
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_factor,
            step_count: 0,
            epoch: 0,
            targets,
            first_moment,
            second_moment,
        }
    }

    pub fn set_epoch(&mut self, epoch: u32) {
        self.epoch = epoch;
    }

    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate * self.decay_factor.powi(self.epoch as i32)
    }

    /// One update over all target parameters; gradients must be populated.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let lr = self.effective_learning_rate();
        for (slot, id) in self.targets.iter().enumerate() {
            let name = store.name(*id).to_string();
            let param = store.get_mut(*id);
            let data = &mut param.data;
            let grad = param
                .grad
                .as_ref()
                .ok_or(Error::MissingGradient { name })?;
            let m = &mut self.first_moment[slot];
            let v = &mut self.second_moment[slot];
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    pub fn targets(&self) -> &[ParamId] {
        &self.targets
    }
}
