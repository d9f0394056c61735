use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::tape::{Backward, BackwardArgs};
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

/// Per-channel batch mean and biased variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

struct BatchNormOp<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Gradient flows through the batch statistics (training mode).
    batch_stats: bool,
}

impl<T: Scalar> Backward<T> for BatchNormOp<T> {
    fn name(&self) -> &'static str {
        if self.batch_stats {
            "batch_norm"
        } else {
            "batch_norm_eval"
        }
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let (n, c, h, w) = args.inputs[0].dims4().expect("rank 4");
        let gamma = args.inputs[1].data();
        let hw = h * w;
        let g = args.grad;
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for plane in 0..n * c {
            let ch = plane % c;
            let range = plane * hw..(plane + 1) * hw;
            for (gi, xi) in g[range.clone()].iter().zip(&self.xhat[range]) {
                sum_g[ch] += *gi;
                sum_gx[ch] += *gi * *xi;
            }
        }
        let dx = args.needs[0].then(|| {
            let mut dx = vec![T::zero(); g.len()];
            let m = T::of((n * hw) as f64);
            for plane in 0..n * c {
                let ch = plane % c;
                let k = gamma[ch] * self.inv_std[ch];
                for i in plane * hw..(plane + 1) * hw {
                    dx[i] = if self.batch_stats {
                        k * (g[i] - (sum_g[ch] + self.xhat[i] * sum_gx[ch]) / m)
                    } else {
                        k * g[i]
                    };
                }
            }
            dx
        });
        vec![dx, args.needs[1].then_some(sum_gx), args.needs[2].then_some(sum_g)]
    }
}

fn normalize<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ChannelMismatch {
            op: "batch_norm",
            expected: gamma.len(),
            got: c,
        });
    }
    let hw = h * w;
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    let xd = x.data();
    for plane in 0..n * c {
        let ch = plane % c;
        for i in plane * hw..(plane + 1) * hw {
            xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
            y[i] = gamma[ch] * xhat[i] + beta[ch];
        }
    }
    Ok((y, xhat, inv_std))
}

impl<T: Scalar> Tape<T> {
    /// Training-mode batch normalization over (N, H, W) per channel with the
    /// biased variance estimator. Returns the batch statistics as well.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4()?;
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let hw = h * w;
        let m = T::of((n * hw) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let xd = xt.data();
        for plane in 0..n * c {
            mean[plane % c] += xd[plane * hw..(plane + 1) * hw].iter().copied().sum::<T>();
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for plane in 0..n * c {
            let mu = mean[plane % c];
            var[plane % c] += xd[plane * hw..(plane + 1) * hw]
                .iter()
                .map(|&v| (v - mu) * (v - mu))
                .sum::<T>();
        }
        var.iter_mut().for_each(|v| *v /= m);
        let (y, xhat, inv_std) = normalize(xt, self.value(gamma).data(), self.value(beta).data(), &mean, &var, eps)?;
        let value = Tensor::new(&[n, c, h, w], y)?;
        let out = self.push(
            value,
            &[x, gamma, beta],
            Box::new(BatchNormOp {
                xhat,
                inv_std,
                batch_stats: true,
            }),
        );
        Ok((out, BatchStats { mean, var }))
    }

    /// Inference-mode batch normalization: an affine map built from fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, stats: &BatchStats<T>, eps: T) -> Result<Var> {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4()?;
        let (y, xhat, inv_std) = normalize(
            xt,
            self.value(gamma).data(),
            self.value(beta).data(),
            &stats.mean,
            &stats.var,
            eps,
        )?;
        let value = Tensor::new(&[n, c, h, w], y)?;
        Ok(self.push(
            value,
            &[x, gamma, beta],
            Box::new(BatchNormOp {
                xhat,
                inv_std,
                batch_stats: false,
            }),
        ))
    }
}
