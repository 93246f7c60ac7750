use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

/// Per-parameter gradients aligned with a [`ParamStore`]'s order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
        }
    }

    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self::new(store.len())
    }

    pub fn accumulate(&mut self, id: usize, g: &[T]) {
        match &mut self.grads[id] {
            Some(dst) => {
                for (d, &s) in dst.iter_mut().zip(g) {
                    *d = *d + s;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn merge(&mut self, other: &ParamGrads<T>) {
        for (id, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(id, g);
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v = *v * c);
        }
    }

    pub fn get(&self, id: usize) -> Option<&[T]> {
        self.grads[id].as_deref()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().flatten().all(|v| v.is_finite())
    }
}

/// SGD with momentum and decoupled-from-bias L2 weight decay:
/// `d = g + wd·p`, `buf = μ·buf + d`, `p -= lr·buf`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub weight_decay: f64,
    pub momentum: f64,
    buffers: Vec<Option<Vec<T>>>,
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;

impl<T: Scalar> Sgd<T> {
    pub fn new(weight_decay: f64, momentum: f64) -> Self {
        Self {
            weight_decay,
            momentum,
            buffers: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamGrads<T>, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::Argument(format!("learning rate {lr} must be >= 0")));
        }
        if self.buffers.len() < params.len() {
            self.buffers.resize(params.len(), None);
        }
        for id in 0..params.len() {
            let p = params.by_id(id);
            if !p.trainable {
                continue;
            }
            if grads.get(id).is_none() {
                return Err(Error::Argument(format!("missing gradient for parameter {}", p.name)));
            }
        }
        let (lr, mom) = (T::from_f64(lr), T::from_f64(self.momentum));
        for id in 0..params.len() {
            let p = params.by_id_mut(id);
            if !p.trainable {
                continue;
            }
            let g = grads.get(id).expect("checked above");
            let wd = T::from_f64(if p.decay { self.weight_decay } else { 0.0 });
            let buf = self.buffers[id].get_or_insert_with(|| vec![T::zero(); g.len()]);
            for ((v, &gv), b) in p.values.iter_mut().zip(g).zip(buf.iter_mut()) {
                let d = gv + wd * *v;
                *b = mom * *b + d;
                *v = *v - lr * *b;
            }
        }
        Ok(())
    }
}

/// One plain SGD update on a store with a fresh optimizer; see [`Sgd::step`].
pub fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamGrads<T>,
    lr: f64,
    weight_decay: f64,
    momentum: f64,
) -> Result<()> {
    Sgd::new(weight_decay, momentum).step(params, grads, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Parameter;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(Parameter {
            name: "p".into(),
            shape: vec![1],
            values: vec![v],
            trainable: true,
            decay: true,
        })
        .unwrap();
        s
    }

    fn grad(g: f64) -> ParamGrads<f64> {
        let mut gr = ParamGrads::new(1);
        gr.accumulate(0, &[g]);
        gr
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut s = scalar_store(1.3);
        sgd_step(&mut s, &grad(4.0), 0.0, 0.1, 0.9).unwrap();
        assert_eq!(s.get("p").unwrap().values, vec![1.3]);
    }

    #[test]
    fn plain_step() {
        let mut s = scalar_store(1.0);
        sgd_step(&mut s, &grad(1.0), 0.1, 0.0, 0.0).unwrap();
        assert!((s.get("p").unwrap().values[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_matches_unrolled_recurrence() {
        let (lr, wd, mu) = (0.1, 0.01, 0.9);
        let gs = [1.0, -0.5, 2.0];
        let mut s = scalar_store(1.0);
        let mut opt = Sgd::new(wd, mu);
        for &g in &gs {
            opt.step(&mut s, &grad(g), lr).unwrap();
        }
        // p0 = 1
        let p0: f64 = 1.0;
        let b1 = 1.0 + wd * p0;
        let p1 = p0 - lr * b1;
        let b2 = mu * b1 + (-0.5 + wd * p1);
        let p2 = p1 - lr * b2;
        let b3 = mu * b2 + (2.0 + wd * p2);
        let p3 = p2 - lr * b3;
        assert!((s.get("p").unwrap().values[0] - p3).abs() < 1e-14);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let err = sgd_step(&mut s, &ParamGrads::new(1), 0.1, 0.0, 0.0).unwrap_err();
        assert!(err.to_string().contains('p'));
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut s = scalar_store(1.0);
        s.set_trainable(|_| false);
        sgd_step(&mut s, &ParamGrads::new(1), 0.1, 0.0, 0.0).unwrap();
        assert_eq!(s.get("p").unwrap().values, vec![1.0]);
    }

    #[test]
    fn no_decay_flag_skips_weight_decay() {
        let mut s = scalar_store(2.0);
        s.get_mut("p").unwrap().decay = false;
        sgd_step(&mut s, &grad(0.0), 0.5, 0.1, 0.0).unwrap();
        assert_eq!(s.get("p").unwrap().values, vec![2.0]);
    }
}
