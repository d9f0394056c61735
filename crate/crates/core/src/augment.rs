//! Flip and quarter-turn augmentation applied jointly to an image and its labels.

use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result, Scalar, Tensor};

/// One (C, H, W) image with its H x W label grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub labels: Vec<u8>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(image: Tensor<T>, labels: Vec<u8>) -> Result<Self> {
        let (h, w) = match *image.shape() {
            [_, h, w] => (h, w),
            _ => return Err(Error::shape("sample", image.shape(), &[0, 0, 0])),
        };
        if labels.len() != h * w {
            return Err(Error::shape("sample labels", &[h, w], &[labels.len()]));
        }
        Ok(Self { image, labels })
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// Top-left `size x size` window at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        if top + size > h || left + size > w {
            return Err(Error::shape("crop", &[h, w], &[top + size, left + size]));
        }
        let image = Tensor::from_fn(&[c, size, size], |i| {
            let (ch, y, x) = (i / (size * size), (i / size) % size, i % size);
            self.image.data()[(ch * h + top + y) * w + left + x]
        });
        let labels = (0..size * size)
            .map(|i| self.labels[(top + i / size) * w + left + i % size])
            .collect();
        Ok(Self { image, labels })
    }
}

/// A left-right flip followed by `quarter_turns` clockwise 90 degree rotations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augmentation {
    pub flip: bool,
    pub quarter_turns: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentConfig {
    pub flip: bool,
    pub rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip: true, rotate: true }
    }
}

impl Augmentation {
    /// One flip coin and one rotation draw, always consumed in that order.
    pub fn sample<R: Rng + ?Sized>(config: AugmentConfig, rng: &mut R) -> Self {
        let flip = rng.random::<bool>();
        let turns = rng.random_range(0..4u8);
        Self {
            flip: config.flip && flip,
            quarter_turns: if config.rotate { turns } else { 0 },
        }
    }

    pub fn is_identity(self) -> bool {
        !self.flip && self.quarter_turns % 4 == 0
    }

    /// Source index for each destination pixel of an `h x w` grid, plus the
    /// destination dimensions.
    fn mapping(self, h: usize, w: usize) -> Result<(usize, usize, Vec<usize>)> {
        let turns = self.quarter_turns % 4;
        if turns % 2 == 1 && h != w {
            return Err(Error::NonSquare { height: h, width: w });
        }
        let (mut src, mut dh, mut dw): (Vec<usize>, usize, usize) = ((0..h * w).collect(), h, w);
        if self.flip {
            src = (0..h * w).map(|i| src[(i / w) * w + (w - 1 - i % w)]).collect();
        }
        for _ in 0..turns {
            // (i, j) -> (j, H - 1 - i): destination (r, c) reads source (H - 1 - c, r)
            let (sh, sw) = (dh, dw);
            let rotated = (0..sh * sw)
                .map(|k| {
                    let (r, c) = (k / sh, k % sh);
                    src[(sh - 1 - c) * sw + r]
                })
                .collect();
            src = rotated;
            (dh, dw) = (sw, sh);
        }
        Ok((dh, dw, src))
    }

    pub fn apply<T: Scalar>(self, sample: &Sample<T>) -> Result<Sample<T>> {
        if self.is_identity() {
            return Ok(sample.clone());
        }
        let (c, h, w) = (sample.channels(), sample.height(), sample.width());
        let (dh, dw, src) = self.mapping(h, w)?;
        let plane = h * w;
        let image = Tensor::from_fn(&[c, dh, dw], |i| sample.image.data()[(i / plane) * plane + src[i % plane]]);
        let labels = src.iter().map(|&s| sample.labels[s]).collect();
        Ok(Sample { image, labels })
    }
}
