//! Segmentation losses on per-voxel class probabilities.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::tape::{Backward, BackwardArgs};
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

/// Lower clamp applied to probabilities inside the logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Additive smoothing of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    SoftDice,
}

fn check_labels(shape: &[usize], labels: &[u8]) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = match *shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::shape("loss", shape, &[0, 0, 0, 0])),
    };
    if labels.len() != n * h * w {
        return Err(Error::shape("loss labels", &[n, h, w], &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::LabelOutOfRange {
            label: bad as usize,
            classes: c,
        });
    }
    Ok((n, c, h * w))
}

struct CrossEntropy {
    labels: Vec<u8>,
}

impl<T: Scalar> Backward<T> for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let probs = args.inputs[0];
        let (_, c, h, w) = probs.dims4().expect("rank 4");
        let hw = h * w;
        let m = T::of(self.labels.len() as f64);
        let clamp = T::of(LOG_CLAMP);
        let mut dp = vec![T::zero(); probs.len()];
        for (v, &label) in self.labels.iter().enumerate() {
            let i = ((v / hw) * c + label as usize) * hw + v % hw;
            let p = probs.data()[i];
            if p > clamp {
                dp[i] = -args.grad[0] / (m * p);
            }
        }
        vec![Some(dp)]
    }
}

struct SoftDice<T> {
    labels: Vec<u8>,
    /// Per foreground class: (numerator 2I + eps, denominator P + Y + eps).
    ratios: Vec<(T, T)>,
}

impl<T: Scalar> Backward<T> for SoftDice<T> {
    fn name(&self) -> &'static str {
        "soft_dice"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let probs = args.inputs[0];
        let (n, c, h, w) = probs.dims4().expect("rank 4");
        let hw = h * w;
        let classes = T::of(self.ratios.len() as f64);
        let mut dp = vec![T::zero(); probs.len()];
        for b in 0..n {
            for (k, &(num, den)) in self.ratios.iter().enumerate() {
                let ch = k + 1;
                for p in 0..hw {
                    let y = if self.labels[b * hw + p] as usize == ch { T::one() } else { T::zero() };
                    let d_ratio = (T::of(2.0) * y * den - num) / (den * den);
                    dp[(b * c + ch) * hw + p] = -args.grad[0] * d_ratio / classes;
                }
            }
        }
        vec![Some(dp)]
    }
}

impl<T: Scalar> Tape<T> {
    /// Mean over voxels of `-ln p(true class)`, with the log argument clamped at 1e-12.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[u8]) -> Result<Var> {
        let pt = self.value(probs);
        let (_, c, hw) = check_labels(pt.shape(), labels)?;
        let clamp = T::of(LOG_CLAMP);
        let mut total = T::zero();
        for (v, &label) in labels.iter().enumerate() {
            let p = pt.data()[((v / hw) * c + label as usize) * hw + v % hw];
            // NaN must survive the clamp so the caller sees a non-finite loss
            total -= if p < clamp { clamp } else { p }.ln();
        }
        let loss = total / T::of(labels.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            &[probs],
            Box::new(CrossEntropy {
                labels: labels.to_vec(),
            }),
        ))
    }

    /// `1 - (2 sum p y + eps) / (sum p + sum y + eps)` per foreground class,
    /// summed over the whole batch, averaged over classes `1..C`.
    pub fn soft_dice(&mut self, probs: Var, labels: &[u8]) -> Result<Var> {
        let pt = self.value(probs);
        let (n, c, hw) = check_labels(pt.shape(), labels)?;
        let eps = T::of(DICE_SMOOTH);
        let mut ratios = Vec::with_capacity(c.saturating_sub(1));
        for ch in 1..c {
            let (mut inter, mut psum, mut ysum) = (T::zero(), T::zero(), T::zero());
            for b in 0..n {
                for p in 0..hw {
                    let prob = pt.data()[(b * c + ch) * hw + p];
                    psum += prob;
                    if labels[b * hw + p] as usize == ch {
                        inter += prob;
                        ysum += T::one();
                    }
                }
            }
            ratios.push((T::of(2.0) * inter + eps, psum + ysum + eps));
        }
        let classes = T::of(ratios.len().max(1) as f64);
        let loss = ratios
            .iter()
            .map(|&(num, den)| T::one() - num / den)
            .sum::<T>()
            / classes;
        Ok(self.push(
            Tensor::scalar(loss),
            &[probs],
            Box::new(SoftDice {
                labels: labels.to_vec(),
                ratios,
            }),
        ))
    }

    pub fn segmentation_loss(&mut self, kind: LossKind, probs: Var, labels: &[u8]) -> Result<Var> {
        match kind {
            LossKind::CrossEntropy => self.cross_entropy(probs, labels),
            LossKind::SoftDice => self.soft_dice(probs, labels),
        }
    }
}
