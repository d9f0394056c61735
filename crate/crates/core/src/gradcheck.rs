//! Central finite-difference verification of backward rules, run in `f64`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::params::ParamStore;
use crate::{Result, Tape, Tensor, Var};

/// Denominator floor of [`relative_error`]. Central differences with step
/// 1e-3 on an O(1) loss carry about 1e-12 of f64 roundoff, so gradients
/// below this magnitude are compared absolutely rather than relatively.
pub const GRADIENT_FLOOR: f64 = 1e-7;

/// Roundoff of a central difference grows as `1 / step`; below step 1e-3 the
/// floor grows with it so that gradients which are exactly zero (a bias
/// feeding batch normalization, say) are not judged on noise.
pub const ROUNDOFF_SCALE: f64 = 1e-10;

/// Floor used by [`relative_error_at`] for a given step.
pub fn gradient_floor(step: f64) -> f64 {
    GRADIENT_FLOOR.max(ROUNDOFF_SCALE / step)
}

/// `|analytic - numeric| / max(|analytic|, |numeric|, GRADIENT_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, GRADIENT_FLOOR)
}

/// [`relative_error`] with the floor of [`gradient_floor`]`(step)`.
pub fn relative_error_at(analytic: f64, numeric: f64, step: f64) -> f64 {
    relative_error_floored(analytic, numeric, gradient_floor(step))
}

fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn fold_max(acc: f64, err: f64) -> f64 {
    if acc.is_nan() || err.is_nan() {
        f64::NAN
    } else {
        acc.max(err)
    }
}

fn eval_scalar<F>(f: &mut F, store: &mut ParamStore<f64>, inputs: &[Tensor<f64>]) -> Result<(f64, Option<u64>)>
where
    F: FnMut(&mut Tape<f64>, &mut ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::tracking_branches();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = f(&mut tape, store, &vars)?;
    Ok((tape.value(out).data()[0], tape.branch_fingerprint()))
}

/// Result for one gradient source (an input tensor or a named parameter).
#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry {
    pub name: String,
    /// Worst relative error over the compared elements.
    pub error: f64,
    pub compared: usize,
    /// Elements whose perturbation moved a ReLU or max-pool onto another
    /// linear piece; the central difference is no oracle there.
    pub kinked: usize,
}

/// Worst relative error per gradient source.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    /// Inputs first (`input{k}`), then trainable parameters in store order.
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    /// Max over all entries; NaN if any entry is NaN.
    pub fn worst(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, e| fold_max(acc, e.error))
    }

    pub fn worst_entry(&self) -> Option<&GradEntry> {
        self.entries.iter().max_by(|a, b| {
            a.error
                .partial_cmp(&b.error)
                .unwrap_or(if a.error.is_nan() { core::cmp::Ordering::Greater } else { core::cmp::Ordering::Less })
        })
    }

    pub fn compared(&self) -> usize {
        self.entries.iter().map(|e| e.compared).sum()
    }

    pub fn kinked(&self) -> usize {
        self.entries.iter().map(|e| e.kinked).sum()
    }

    /// Fraction of perturbed elements skipped because a kink was crossed.
    pub fn kinked_fraction(&self) -> f64 {
        let total = self.compared() + self.kinked();
        if total == 0 {
            0.0
        } else {
            self.kinked() as f64 / total as f64
        }
    }
}

struct Accumulator {
    base: Option<u64>,
    entry: GradEntry,
}

impl Accumulator {
    fn new(base: Option<u64>, name: String) -> Self {
        Self {
            base,
            entry: GradEntry {
                name,
                error: 0.0,
                compared: 0,
                kinked: 0,
            },
        }
    }

    fn push(&mut self, analytic: f64, plus: (f64, Option<u64>), minus: (f64, Option<u64>), step: f64) {
        if plus.1 != self.base || minus.1 != self.base {
            self.entry.kinked += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * step);
        self.entry.error = fold_max(self.entry.error, relative_error_at(analytic, numeric, step));
        self.entry.compared += 1;
    }
}

/// Relative error between backward-pass gradients and central differences
/// for every element of `inputs` and every trainable parameter in `store`.
///
/// Elements whose perturbation crosses a kink of a piecewise-linear op are
/// counted in [`GradEntry::kinked`] instead of being compared.
///
/// `f` must be scalar-valued and deterministic (reseed any dropout RNG
/// inside it). A NaN anywhere makes the result NaN.
pub fn gradient_report<F>(
    mut f: F,
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Result<GradReport>
where
    F: FnMut(&mut Tape<f64>, &mut ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::tracking_branches();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, store, &vars)?;
    let base = tape.branch_fingerprint();
    tape.backward(out)?;
    let input_grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| alloc::vec![0.0; t.len()])
        })
        .collect();
    let mut param_grads: Vec<Vec<f64>> = store
        .ids()
        .map(|id| alloc::vec![0.0; store.value(id).len()])
        .collect();
    for (id, g) in tape.param_grads() {
        param_grads[id.index()]
            .iter_mut()
            .zip(g)
            .for_each(|(a, b)| *a += *b);
    }
    drop(tape);

    let mut report = GradReport::default();
    let mut perturbed = inputs.to_vec();
    for (k, analytic) in input_grads.iter().enumerate() {
        let mut acc = Accumulator::new(base, format!("input{k}"));
        for (i, &a) in analytic.iter().enumerate() {
            let orig = perturbed[k].data()[i];
            perturbed[k].data_mut()[i] = orig + step;
            let plus = eval_scalar(&mut f, store, &perturbed)?;
            perturbed[k].data_mut()[i] = orig - step;
            let minus = eval_scalar(&mut f, store, &perturbed)?;
            perturbed[k].data_mut()[i] = orig;
            acc.push(a, plus, minus, step);
        }
        report.entries.push(acc.entry);
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.is_trainable(id) {
            continue;
        }
        let mut acc = Accumulator::new(base, store.name(id).to_string());
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let plus = eval_scalar(&mut f, store, inputs)?;
            store.value_mut(id).data_mut()[i] = orig - step;
            let minus = eval_scalar(&mut f, store, inputs)?;
            store.value_mut(id).data_mut()[i] = orig;
            acc.push(param_grads[id.index()][i], plus, minus, step);
        }
        report.entries.push(acc.entry);
    }
    Ok(report)
}

/// Max relative error of [`gradient_report`].
pub fn check_module_gradients<F>(
    f: F,
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &mut ParamStore<f64>, &[Var]) -> Result<Var>,
{
    Ok(gradient_report(f, store, inputs, step)?.worst())
}

/// [`check_module_gradients`] for parameter-free functions of several inputs.
pub fn check_gradients<F>(mut f: F, inputs: &[Tensor<f64>], step: f64) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    check_module_gradients(|tape, _, vars| f(tape, vars), &mut store, inputs, step)
}

/// Max relative error of the gradient of scalar `f` at `x`.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    check_gradients(|tape, vars| f(tape, vars[0]), core::slice::from_ref(x), step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{Backward, BackwardArgs};
    use alloc::boxed::Box;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::<f64>::uniform(&[3, 5], -3.0, 3.0, &mut rng);
        let err = finite_diff_check(|tape, x| Ok(tape.sum(x)), &x, 1e-3).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn sigmoid_self_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::uniform(&[4, 6], -2.0, 2.0, &mut rng);
        let err = finite_diff_check(
            |tape, x| {
                let s = tape.sigmoid(x);
                Ok(tape.sum(s))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    struct BrokenSquare;

    impl Backward<f64> for BrokenSquare {
        fn name(&self) -> &'static str {
            "broken_square"
        }

        fn backward(&self, args: BackwardArgs<'_, f64>) -> Vec<Option<Vec<f64>>> {
            let x = args.inputs[0].data();
            // sign flipped on purpose
            vec![Some(x.iter().zip(args.grad).map(|(x, g)| -2.0 * x * g).collect())]
        }
    }

    #[test]
    fn detects_wrong_backward_rule() {
        let x = Tensor::<f64>::from_fn(&[4], |i| 0.5 + i as f64);
        let err = finite_diff_check(
            |tape, x| {
                let v = tape.value(x).map(|v| v * v);
                let y = tape.push(v, &[x], Box::new(BrokenSquare));
                Ok(tape.sum(y))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err > 1.0, "{err}");
    }

    #[test]
    fn linearity_of_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::<f64>::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let (a, b) = (0.7, -1.3);
        let grad_of = |which: u8| {
            let mut tape = Tape::<f64>::new();
            let v = tape.leaf(x.clone(), true);
            let f = {
                let s = tape.sigmoid(v);
                tape.sum(s)
            };
            let g = {
                let sq = tape.mul(v, v).unwrap();
                tape.sum(sq)
            };
            let loss = match which {
                0 => f,
                1 => g,
                _ => {
                    let fa = tape.scale(f, a);
                    let gb = tape.scale(g, b);
                    tape.add(fa, gb).unwrap()
                }
            };
            tape.backward(loss).unwrap();
            tape.grad(v).unwrap().to_vec()
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..gf.len() {
            assert!((gc[i] - (a * gf[i] + b * gg[i])).abs() < 1e-6);
        }
    }
}
