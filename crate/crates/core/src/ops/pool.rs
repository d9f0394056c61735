use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::tape::{Backward, BackwardArgs};
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

struct MaxPool {
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for MaxPool {
    fn name(&self) -> &'static str {
        "max_pool2"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); args.inputs[0].len()];
        for (&src, &g) in self.argmax.iter().zip(args.grad) {
            dx[src] += g;
        }
        vec![Some(dx)]
    }
}

struct AvgPool {
    p: usize,
}

impl<T: Scalar> Backward<T> for AvgPool {
    fn name(&self) -> &'static str {
        "avg_pool"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = args.inputs[0];
        let (n, c, h, w) = x.dims4().expect("rank 4");
        let (oh, ow) = (h / self.p, w / self.p);
        let inv = T::one() / T::of((self.p * self.p) as f64);
        let mut dx = vec![T::zero(); x.len()];
        for plane in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    dx[(plane * h + y) * w + xx] =
                        args.grad[(plane * oh + y / self.p) * ow + xx / self.p] * inv;
                }
            }
        }
        vec![Some(dx)]
    }
}

struct Upsample {
    factor: usize,
}

impl<T: Scalar> Backward<T> for Upsample {
    fn name(&self) -> &'static str {
        "upsample_nearest"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = args.inputs[0];
        let (n, c, h, w) = x.dims4().expect("rank 4");
        let (oh, ow) = (h * self.factor, w * self.factor);
        let mut dx = vec![T::zero(); x.len()];
        for plane in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    dx[(plane * h + y / self.factor) * w + xx / self.factor] +=
                        args.grad[(plane * oh + y) * ow + xx];
                }
            }
        }
        vec![Some(dx)]
    }
}

impl<T: Scalar> Tape<T> {
    /// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        let xd = xt.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = (plane * h + 2 * y) * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (plane * h + 2 * y + dy) * w + 2 * xx + dx;
                        if xd[i] > xd[best] || (xd[i].is_nan() && !xd[best].is_nan()) {
                            best = i;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        self.record_branches(argmax.iter().map(|&i| i as u64));
        Ok(self.push(value, &[x], Box::new(MaxPool { argmax })))
    }

    /// Average pooling with kernel and stride `p`; H and W must be divisible by `p`.
    pub fn avg_pool(&mut self, x: Var, p: usize) -> Result<Var> {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4()?;
        for size in [h, w] {
            if p == 0 || size % p != 0 {
                return Err(Error::Indivisible {
                    op: "avg_pool",
                    size,
                    factor: p,
                });
            }
        }
        let (oh, ow) = (h / p, w / p);
        let xd = xt.data();
        let inv = T::one() / T::of((p * p) as f64);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    out[(plane * oh + y / p) * ow + xx / p] += xd[(plane * h + y) * w + xx];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, &[x], Box::new(AvgPool { p })))
    }

    /// Mean over H x W per channel, giving (N, C, 1, 1).
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let inv = T::one() / T::of((h * w) as f64);
        let means: Vec<T> = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(&[n, c, 1, 1], means)?;
        Ok(self.push(value, &[x], Box::new(GlobalAvg)))
    }

    /// Nearest-neighbour upsampling: each pixel becomes a `factor x factor` block.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 2 {
            return Err(Error::Config(alloc::format!(
                "upsampling factor must be >= 2, got {factor}"
            )));
        }
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4()?;
        let (oh, ow) = (h * factor, w * factor);
        let xd = xt.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for y in 0..oh {
                let row = &xd[(plane * h + y / factor) * w..(plane * h + y / factor + 1) * w];
                for xx in 0..ow {
                    out.push(row[xx / factor]);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, &[x], Box::new(Upsample { factor })))
    }
}

struct GlobalAvg;

impl<T: Scalar> Backward<T> for GlobalAvg {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = args.inputs[0];
        let (_, _, h, w) = x.dims4().expect("rank 4");
        let inv = T::one() / T::of((h * w) as f64);
        let dx = args
            .grad
            .iter()
            .flat_map(|&g| core::iter::repeat_n(g * inv, h * w))
            .collect();
        vec![Some(dx)]
    }
}
