use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::tape::{Backward, BackwardArgs};
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

struct Relu;

impl<T: Scalar> Backward<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = args.inputs[0].data();
        let dx = x
            .iter()
            .zip(args.grad)
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect();
        vec![Some(dx)]
    }
}

struct Sigmoid;

impl<T: Scalar> Backward<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let y = args.output.data();
        let dx = y
            .iter()
            .zip(args.grad)
            .map(|(&y, &g)| g * y * (T::one() - y))
            .collect();
        vec![Some(dx)]
    }
}

struct SoftmaxChannels;

impl<T: Scalar> Backward<T> for SoftmaxChannels {
    fn name(&self) -> &'static str {
        "softmax_channels"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let (n, c, h, w) = args.output.dims4().expect("rank 4");
        let hw = h * w;
        let y = args.output.data();
        let g = args.grad;
        let mut dx = vec![T::zero(); y.len()];
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut dot = T::zero();
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    dot += g[i] * y[i];
                }
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    dx[i] = y[i] * (g[i] - dot);
                }
            }
        }
        vec![Some(dx)]
    }
}

struct ChannelScale<T> {
    factors: Vec<T>,
}

impl<T: Scalar> Backward<T> for ChannelScale<T> {
    fn name(&self) -> &'static str {
        "spatial_dropout"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let hw = args.grad.len() / self.factors.len();
        let dx = args
            .grad
            .chunks(hw)
            .zip(&self.factors)
            .flat_map(|(chunk, &f)| chunk.iter().map(move |&g| g * f))
            .collect();
        vec![Some(dx)]
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Tape<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        // NaN passes through rather than being clamped to zero
        let value = self.value(x).map(|v| if v < T::zero() { T::zero() } else { v });
        if self.branch_fingerprint().is_some() {
            let signs: Vec<u64> = self.value(x).data().iter().map(|&v| u64::from(v > T::zero())).collect();
            self.record_branches(signs.into_iter());
        }
        self.push(value, &[x], Box::new(Relu))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, &[x], Box::new(Sigmoid))
    }

    /// Softmax over the channel axis at every (n, h, w).
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4()?;
        let hw = h * w;
        let xd = xt.data();
        let mut y = vec![T::zero(); xd.len()];
        for b in 0..n {
            let base = b * c * hw;
            for p in 0..hw {
                let mut max = T::neg_infinity();
                for ch in 0..c {
                    max = max.max(xd[base + ch * hw + p]);
                }
                let mut total = T::zero();
                for ch in 0..c {
                    let i = base + ch * hw + p;
                    y[i] = (xd[i] - max).exp();
                    total += y[i];
                }
                for ch in 0..c {
                    y[base + ch * hw + p] /= total;
                }
            }
        }
        let value = Tensor::new(&[n, c, h, w], y)?;
        Ok(self.push(value, &[x], Box::new(SoftmaxChannels)))
    }

    /// Multiplies every (n, c) channel plane by `factors[n * C + c]`.
    pub fn scale_channels(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4()?;
        if factors.len() != n * c {
            return Err(Error::shape("scale_channels", &[n, c], &[factors.len()]));
        }
        let data = xt
            .data()
            .chunks(h * w)
            .zip(&factors)
            .flat_map(|(chunk, &f)| chunk.iter().map(move |&v| v * f))
            .collect();
        let value = Tensor::new(&[n, c, h, w], data)?;
        Ok(self.push(value, &[x], Box::new(ChannelScale { factors })))
    }
}
