/// Learning rate at 1-based `step`: linear warmup over `warmup` steps to
/// `base`, then linear decay reaching 0 at `total`.
pub fn lr_at(base: f64, step: usize, warmup: usize, total: usize) -> f64 {
    if warmup > 0 && step <= warmup {
        return base * step as f64 / warmup as f64;
    }
    if total <= warmup || step >= total {
        return if total <= warmup { base } else { 0.0 };
    }
    base * (total - step) as f64 / (total - warmup) as f64
}

/// Adam with decoupled weight decay over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    decay: Vec<bool>,
    t: u64,
}

impl AdamW {
    /// `decay[i]` selects which parameters receive weight decay.
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64, decay: Vec<bool>) -> Self {
        let n = decay.len();
        AdamW { beta1, beta2, eps, weight_decay, m: vec![0.0; n], v: vec![0.0; n], decay, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let mut update = m_hat / (v_hat.sqrt() + self.eps);
            if self.decay[i] {
                update += self.weight_decay * params[i];
            }
            params[i] -= lr * update;
        }
    }
}
