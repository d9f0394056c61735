use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::tape::{Backward, BackwardArgs};
use crate::tensor::{broadcastable, for_each_broadcast};
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

struct Binary(BinaryKind);

impl<T: Scalar> Backward<T> for Binary {
    fn name(&self) -> &'static str {
        match self.0 {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let (a, b) = (args.inputs[0], args.inputs[1]);
        let g = args.grad;
        let ga = args.needs[0].then(|| match self.0 {
            BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
            BinaryKind::Mul => {
                let mut out = vec![T::zero(); a.len()];
                let bd = b.data();
                for_each_broadcast(b.shape(), a.shape(), |o, i| out[o] = g[o] * bd[i]);
                out
            }
        });
        let gb = args.needs[1].then(|| {
            let mut out = vec![T::zero(); b.len()];
            let ad = a.data();
            match self.0 {
                BinaryKind::Add => for_each_broadcast(b.shape(), a.shape(), |o, i| out[i] += g[o]),
                BinaryKind::Sub => for_each_broadcast(b.shape(), a.shape(), |o, i| out[i] -= g[o]),
                BinaryKind::Mul => {
                    for_each_broadcast(b.shape(), a.shape(), |o, i| out[i] += g[o] * ad[o])
                }
            }
            out
        });
        vec![ga, gb]
    }
}

struct Scale<T>(T);

impl<T: Scalar> Backward<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(args.grad.iter().map(|&g| g * self.0).collect())]
    }
}

struct AddScalar;

impl<T: Scalar> Backward<T> for AddScalar {
    fn name(&self) -> &'static str {
        "add_scalar"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(args.grad.to_vec())]
    }
}

struct BroadcastTo;

impl<T: Scalar> Backward<T> for BroadcastTo {
    fn name(&self) -> &'static str {
        "broadcast"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let b = args.inputs[0];
        let mut out = vec![T::zero(); b.len()];
        for_each_broadcast(b.shape(), args.output.shape(), |o, i| out[i] += args.grad[o]);
        vec![Some(out)]
    }
}

struct Sum;

impl<T: Scalar> Backward<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![args.grad[0]; args.inputs[0].len()])]
    }
}

struct Reshape;

impl<T: Scalar> Backward<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![Some(args.grad.to_vec())]
    }
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if !broadcastable(bt.shape(), at.shape()) {
            return Err(Error::shape(
                <Binary as Backward<T>>::name(&Binary(kind)),
                at.shape(),
                bt.shape(),
            ));
        }
        let mut out = at.data().to_vec();
        let bd = bt.data();
        match kind {
            BinaryKind::Add => for_each_broadcast(bt.shape(), at.shape(), |o, i| out[o] += bd[i]),
            BinaryKind::Sub => for_each_broadcast(bt.shape(), at.shape(), |o, i| out[o] -= bd[i]),
            BinaryKind::Mul => for_each_broadcast(bt.shape(), at.shape(), |o, i| out[o] *= bd[i]),
        }
        let value = Tensor::new(at.shape(), out)?;
        Ok(self.push(value, &[a, b], Box::new(Binary(kind))))
    }

    /// `a + b`, with `b` broadcast over size-1 axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    /// `a - b`, with `b` broadcast over size-1 axes.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    /// Elementwise product `a ⊙ b`, with `b` broadcast over size-1 axes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|v| v * s);
        self.push(value, &[a], Box::new(Scale(s)))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|v| v + s);
        self.push(value, &[a], Box::new(AddScalar))
    }

    /// Repeats `b` along its size-1 axes to `shape`.
    pub fn broadcast(&mut self, b: Var, shape: &[usize]) -> Result<Var> {
        let bt = self.value(b);
        if !broadcastable(bt.shape(), shape) {
            return Err(Error::Broadcast {
                from: bt.shape().to_vec(),
                to: shape.to_vec(),
            });
        }
        let mut out = vec![T::zero(); shape.iter().product()];
        let bd = bt.data();
        for_each_broadcast(bt.shape(), shape, |o, i| out[o] = bd[i]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, &[b], Box::new(BroadcastTo)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), &[a], Box::new(Sum))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, &[a], Box::new(Reshape)))
    }
}
