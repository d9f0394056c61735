//! Synthetic phantoms: three concentric structures (outer ring, middle ring,
//! inner disk) on background, seen through noisy multi-channel intensities.
//!
//! Channel 0 brightens monotonically toward the centre. Channel 1 matches
//! it on the rings but inverts the inner disk, so separating the disk from
//! the middle ring needs both channels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::augment::Sample;
use crate::{Error, Result, Tensor};

/// Inclusive radius range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusRange {
    pub min: f64,
    pub max: f64,
}

impl RadiusRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    /// Radii of class 1, 2 and 3 regions (outer ring, middle ring, inner disk).
    pub radii: [RadiusRange; 3],
    /// `means[class][channel]`.
    pub means: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: 2,
            classes: 4,
            radii: [
                RadiusRange::new(20.0, 28.0),
                RadiusRange::new(11.0, 16.0),
                RadiusRange::new(4.0, 8.0),
            ],
            means: vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![1.0, 1.0], vec![1.5, 0.25]],
            noise_sigma: 0.2,
            seed: 1,
        }
    }
}

/// Geometry drawn for one phantom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomGeometry {
    /// Centre in pixel coordinates (row, column).
    pub center: (f64, f64),
    pub radii: [f64; 3],
}

impl PhantomGeometry {
    /// Label of the pixel whose centre is (`y`, `x`).
    pub fn label_at(&self, y: usize, x: usize) -> u8 {
        let (dy, dx) = (y as f64 - self.center.0, x as f64 - self.center.1);
        let d2 = dy * dy + dx * dx;
        let mut label = 0;
        for (k, r) in self.radii.iter().enumerate() {
            if d2 <= r * r {
                label = k as u8 + 1;
            }
        }
        label
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.classes != 4 {
            return bad(format!("phantoms have 4 classes, got {}", self.classes));
        }
        if self.channels < 2 {
            return bad(format!("phantoms need at least 2 channels, got {}", self.channels));
        }
        if self.means.len() != self.classes || self.means.iter().any(|m| m.len() != self.channels) {
            return bad(format!("means must be {} x {}", self.classes, self.channels));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        for r in &self.radii {
            if !(r.min > 0.0 && r.min <= r.max) {
                return bad(format!("bad radius range {r:?}"));
            }
        }
        for pair in self.radii.windows(2) {
            if pair[1].max >= pair[0].min {
                return bad(format!("nested radii must strictly decrease: {:?} then {:?}", pair[0], pair[1]));
            }
        }
        let outer = self.radii[0].max;
        if 2.0 * outer + 2.0 > self.height.min(self.width) as f64 {
            return bad(format!(
                "outer radius {outer} does not fit a {}x{} image",
                self.height, self.width
            ));
        }
        Ok(())
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Draws the geometry of phantom `index`.
    pub fn geometry(&self, index: u64) -> Result<PhantomGeometry> {
        self.validate()?;
        let mut rng = self.rng(index);
        Ok(self.draw_geometry(&mut rng))
    }

    fn draw_geometry(&self, rng: &mut ChaCha8Rng) -> PhantomGeometry {
        let mut radii = [0.0; 3];
        for (r, range) in radii.iter_mut().zip(&self.radii) {
            *r = range.min + (range.max - range.min) * rng.random::<f64>();
        }
        // keep the outer disk, and one pixel of margin, inside the image
        let margin = radii[0] + 1.0;
        let cy = margin + (self.height as f64 - 1.0 - 2.0 * margin) * rng.random::<f64>();
        let cx = margin + (self.width as f64 - 1.0 - 2.0 * margin) * rng.random::<f64>();
        PhantomGeometry {
            center: (cy, cx),
            radii,
        }
    }

    /// Phantom `index`: a (channels, H, W) `f32` image and its labels.
    pub fn generate(&self, index: u64) -> Result<Sample<f32>> {
        self.validate()?;
        let mut rng = self.rng(index);
        let geometry = self.draw_geometry(&mut rng);
        let (h, w) = (self.height, self.width);
        let labels: Vec<u8> = (0..h * w).map(|i| geometry.label_at(i / w, i % w)).collect();
        let noise = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::Config(format!("{e}")))?;
        let mut data = Vec::with_capacity(self.channels * h * w);
        for ch in 0..self.channels {
            for &label in &labels {
                let mean = self.means[label as usize][ch];
                let n = if self.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push((mean + n) as f32);
            }
        }
        Sample::new(Tensor::new(&[self.channels, h, w], data)?, labels)
    }
}
