use super::graph::Tensor;
use super::params::ParamStore;

pub trait Optimizer {
    /// Applies one update using the gradients accumulated in `store`.
    fn step(&mut self, store: &mut ParamStore, lr: f32);
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(weight_decay: f32) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore, lr: f32) {
        if self.m.is_empty() {
            for id in store.ids() {
                self.m.push(Tensor::zeros(store.value(id).raw_dim()));
                self.v.push(Tensor::zeros(store.value(id).raw_dim()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (value, grad) = store.value_and_grad_mut(id);
            ndarray::Zip::from(value)
                .and(grad)
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .for_each(|w, &g, m, v| {
                    let g = g + wd * *w;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

/// SGD with momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    buf: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f32, weight_decay: f32) -> Self {
        Sgd {
            momentum,
            weight_decay,
            buf: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore, lr: f32) {
        if self.buf.is_empty() {
            self.buf = store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).raw_dim()))
                .collect();
        }
        let (mu, wd) = (self.momentum, self.weight_decay);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let (value, grad) = store.value_and_grad_mut(id);
            ndarray::Zip::from(value)
                .and(grad)
                .and(&mut self.buf[k])
                .for_each(|w, &g, b| {
                    let g = g + wd * *w;
                    *b = mu * *b + g;
                    *w -= lr * *b;
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::scalar;
    use crate::nn::{Graph, ParamId};
    use ndarray::IxDyn;

    fn set_grad(store: &mut ParamStore, id: ParamId, g: Tensor) {
        store.zero_grad();
        let mut graph = Graph::new();
        let leaf = graph.param(store, id);
        let root = graph.custom(&[leaf], scalar(0.0), move |_| vec![g.clone()]);
        let grads = graph.backward(root);
        store.accumulate(&grads);
    }

    fn quadratic_descent(opt: &mut dyn Optimizer, lr: f32) -> f32 {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_elem(IxDyn(&[2]), 3.0));
        for _ in 0..500 {
            let grad = store.value(id).mapv(|x| 2.0 * x);
            set_grad(&mut store, id, grad);
            opt.step(&mut store, lr);
        }
        store.value(id)[[0]].abs()
    }

    #[test]
    fn adam_and_sgd_minimize_a_quadratic() {
        assert!(quadratic_descent(&mut Adam::new(0.0), 0.05) < 1e-2);
        assert!(quadratic_descent(&mut Sgd::new(0.9, 0.0), 0.01) < 1e-2);
    }

    #[test]
    fn zero_lr_is_a_null_update() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_elem(IxDyn(&[3]), 0.7));
        set_grad(&mut store, id, Tensor::from_elem(IxDyn(&[3]), 1.0));
        let before = store.value(id).clone();
        Adam::new(1e-5).step(&mut store, 0.0);
        Sgd::new(0.9, 1e-4).step(&mut store, 0.0);
        assert_eq!(store.value(id), &before);
    }
}
