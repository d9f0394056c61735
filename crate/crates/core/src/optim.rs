//! Adam with decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::params::{ParamId, ParamStore};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied as `θ ← θ − lr·wd·θ` before the Adam delta.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// `base^exp` by repeated squaring, so the result does not depend on how
/// the compiler evaluates `powi`.
pub fn powu(base: f64, mut exp: u64) -> f64 {
    let (mut acc, mut b) = (1.0, base);
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

/// Moments for every parameter of one store. Non-trainable entries keep
/// empty moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = |id: ParamId| {
            if store.is_trainable(id) {
                vec![T::zero(); store.value(id).len()]
            } else {
                Vec::new()
            }
        };
        Self {
            config,
            step: 0,
            first: store.ids().map(zeros).collect(),
            second: store.ids().map(zeros).collect(),
        }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> (&[T], &[T]) {
        (&self.first[id.index()], &self.second[id.index()])
    }

    /// Restores state saved from an optimizer over the same store layout.
    pub fn restore(&mut self, step: u64, first: Vec<Vec<T>>, second: Vec<Vec<T>>) -> crate::Result<()> {
        let same = |a: &[Vec<T>], b: &[Vec<T>]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len());
        if !same(&first, &self.first) || !same(&second, &self.second) {
            return Err(crate::Error::Config("optimizer state does not match the parameter layout".into()));
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// One bias-corrected update. `grads` may list a parameter more than
    /// once; contributions are summed. Parameters without a gradient still
    /// see their moments decay, as with a zero gradient.
    pub fn step<'a>(&mut self, store: &mut ParamStore<T>, grads: impl IntoIterator<Item = (ParamId, &'a [T])>) {
        let mut total: Vec<Option<Vec<T>>> = vec![None; self.first.len()];
        for (id, g) in grads {
            match &mut total[id.index()] {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
                slot => *slot = Some(g.to_vec()),
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let corr1 = T::one() - T::of(powu(c.beta1, self.step));
        let corr2 = T::one() - T::of(powu(c.beta2, self.step));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        let decay = T::of(c.lr * c.weight_decay);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            if !store.is_trainable(id) {
                continue;
            }
            let decays = c.weight_decay != 0.0 && store.kind(id).decays();
            let k = id.index();
            let grad = total[k].as_deref();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let theta = store.value_mut(id).data_mut();
            for i in 0..theta.len() {
                let g = grad.map_or(T::zero(), |g| g[i]);
                if decays {
                    theta[i] -= decay * theta[i];
                }
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;
    use crate::{Tape, Tensor};

    fn single(kind: ParamKind, value: f64) -> (ParamStore<f64>, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("p", kind, Tensor::new(&[1], vec![value]).unwrap());
        (store, id)
    }

    #[test]
    fn powu_matches_products() {
        assert_eq!(powu(0.9, 0), 1.0);
        assert_eq!(powu(0.5, 10), 1.0 / 1024.0);
        assert!((powu(0.999, 2000) - 0.999f64.powf(2000.0)).abs() < 1e-12);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.3, -2.0, 1e-3] {
            let (mut store, id) = single(ParamKind::Weight, 1.0);
            let cfg = AdamConfig {
                lr: 0.01,
                weight_decay: 0.0,
                ..AdamConfig::default()
            };
            let mut adam = Adam::new(cfg, &store);
            adam.step(&mut store, [(id, &[g][..])]);
            let delta = store.value(id).data()[0] - 1.0;
            // closed form: -lr * g / (|g| + eps)
            let want = -0.01 * g / (g.abs() + 1e-8);
            assert!((delta - want).abs() < 1e-15, "{delta} vs {want}");
            assert!((delta + 0.01 * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let (mut store, id) = single(ParamKind::Weight, 0.75);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &store);
        for _ in 0..5 {
            adam.step(&mut store, [(id, &[0.0][..])]);
        }
        assert_eq!(store.value(id).data()[0], 0.75);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn decay_skips_norm_parameters() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let (mut w, wid) = single(ParamKind::Weight, 2.0);
        let mut adam = Adam::new(cfg, &w);
        adam.step(&mut w, [(wid, &[0.0][..])]);
        assert_eq!(w.value(wid).data()[0], 2.0 - 0.1 * 0.5 * 2.0);
        for kind in [ParamKind::NormScale, ParamKind::NormShift] {
            let (mut s, sid) = single(kind, 2.0);
            let mut adam = Adam::new(cfg, &s);
            adam.step(&mut s, [(sid, &[0.0][..])]);
            assert_eq!(s.value(sid).data()[0], 2.0);
        }
    }

    #[test]
    fn zero_decay_is_pure_adam() {
        // reference Adam without any decay code path
        let grads = [0.5, -0.25, 1.5, 0.0, -3.0, 0.125];
        let (mut store, id) = single(ParamKind::Weight, 0.3);
        let cfg = AdamConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &store);
        let (mut theta, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            adam.step(&mut store, [(id, &[g][..])]);
            m = 0.9 * m + (1.0 - 0.9) * g;
            v = 0.999 * v + (1.0 - 0.999) * g * g;
            let mh = m / (1.0 - powu(0.9, t as u64 + 1));
            let vh = v / (1.0 - powu(0.999, t as u64 + 1));
            theta -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert_eq!(store.value(id).data()[0].to_bits(), theta.to_bits());
        }
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut store = ParamStore::<f32>::new();
        let a = store.add("a", ParamKind::Weight, Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap());
        let b = store.add("b", ParamKind::NormScale, Tensor::ones(&[2]));
        let before = store.clone();
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..3 {
            adam.step(&mut store, [(a, &[0.5f32, -1.0, 2.0][..]), (b, &[1.0f32, 1.0][..])]);
        }
        for id in store.ids() {
            assert_eq!(store.value(id), before.value(id));
        }
    }

    #[test]
    fn quadratic_bowl_descends_monotonically() {
        let target = [1.0, -2.0, 0.5, 3.0];
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", ParamKind::Weight, Tensor::zeros(&[4]));
        let cfg = AdamConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &store);
        let mut losses = Vec::new();
        for _ in 0..100 {
            let mut tape = Tape::new();
            let x = tape.param(&store, id);
            let t = tape.constant(Tensor::new(&[4], target.to_vec()).unwrap());
            let d = tape.sub(x, t).unwrap();
            let sq = tape.mul(d, d).unwrap();
            let loss = tape.sum(sq);
            losses.push(tape.value(loss).data()[0]);
            tape.backward(loss).unwrap();
            let grads: Vec<(ParamId, Vec<f64>)> = tape.param_grads().map(|(i, g)| (i, g.to_vec())).collect();
            adam.step(&mut store, grads.iter().map(|(i, g)| (*i, g.as_slice())));
        }
        for w in losses[5..].windows(2) {
            assert!(w[1] < w[0], "{} then {}", w[0], w[1]);
        }
        assert!(losses[99] < 0.1 * losses[0]);
    }

    #[test]
    fn repeated_gradients_are_summed() {
        let (mut a, ida) = single(ParamKind::Weight, 0.0);
        let (mut b, idb) = single(ParamKind::Weight, 0.0);
        let cfg = AdamConfig::default();
        let mut adam_a = Adam::new(cfg, &a);
        let mut adam_b = Adam::new(cfg, &b);
        adam_a.step(&mut a, [(ida, &[0.25][..]), (ida, &[0.5][..])]);
        adam_b.step(&mut b, [(idb, &[0.75][..])]);
        assert_eq!(a.value(ida), b.value(idb));
    }
}
