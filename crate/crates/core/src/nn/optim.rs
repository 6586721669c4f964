use crate::nn::params::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// One bias-corrected Adam update over every trainable parameter, using the
/// gradients currently held in the store.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) {
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (_, p) in store.iter_mut() {
        if !p.trainable {
            continue;
        }
        let g = p.grad.data();
        let m = p.first_moment.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = p.second_moment.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (p.first_moment.data(), p.second_moment.data());
        let values: Vec<f64> = p
            .value
            .data()
            .iter()
            .zip(m.iter().zip(v))
            .map(|(x, (mi, vi))| {
                let mhat = mi / c1;
                let vhat = vi / c2;
                x - cfg.lr * mhat / (vhat.sqrt() + cfg.eps)
            })
            .collect();
        p.value.data_mut().copy_from_slice(&values);
    }
}
