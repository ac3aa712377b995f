use crate::diff::ParamStore;

/// Adam with global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: ParamStore,
    v: ParamStore,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, clip_norm: Option<f64>) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> f64 {
        let norm = grads.sq_norm().sqrt();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let (Ok(g), Ok(m), Ok(v)) = (grads.get(name), self.m.get_mut(name), self.v.get_mut(name)) else {
                continue;
            };
            let v = v.data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.iter_mut()) {
                let gi = gi * scale;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *pi -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
            }
        }
        norm
    }
}
