use crate::params::ParamStore;
use crate::scalar::Real;

pub trait Optimizer<T: Real> {
    /// Applies one update to every trainable parameter from its stored gradient.
    fn step(&mut self, store: &mut ParamStore<T>);
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
}

/// SGD with heavy-ball momentum: `v = mu * v + g; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    lr: f64,
    momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }
}

impl<T: Real> Optimizer<T> for Sgd<T> {
    fn step(&mut self, store: &mut ParamStore<T>) {
        let lr = T::from_f64_lossy(self.lr);
        let mu = T::from_f64_lossy(self.momentum);
        let ids: Vec<_> = store.ids().collect();
        if self.velocity.len() != ids.len() {
            self.velocity = ids.iter().map(|&id| vec![T::zero(); store.value(id).len()]).collect();
        }
        for (k, id) in ids.into_iter().enumerate() {
            if !store.is_trainable(id) {
                continue;
            }
            let v = &mut self.velocity[k];
            let (p, g) = store.value_and_grad(id);
            for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn step(&mut self, store: &mut ParamStore<T>) {
        let ids: Vec<_> = store.ids().collect();
        if self.m.len() != ids.len() {
            self.m = ids.iter().map(|&id| vec![T::zero(); store.value(id).len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - self.beta1), T::from_f64_lossy(1.0 - self.beta2));
        let (lr, eps) = (T::from_f64_lossy(self.lr), T::from_f64_lossy(self.eps));
        let (c1, c2) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
        for (k, id) in ids.into_iter().enumerate() {
            if !store.is_trainable(id) {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let (p, g) = store.value_and_grad(id);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}
