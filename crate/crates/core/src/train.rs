//! Training loop and evaluation.
//!
//! Every random draw of step `t` comes from generators keyed by
//! `(seed, purpose, t)` (or the epoch, for shuffling), so a run resumed from
//! any step continues exactly as the uninterrupted run would.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{AugmentConfig, Augmentation, Sample};
use crate::layers::ForwardCtx;
use crate::loss::LossKind;
use crate::metrics::MetricsReport;
use crate::net::{argmax_labels, Network, NetworkConfig};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamId, ParamStore};
use crate::{Error, Mode, Result, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub loss: LossKind,
    pub augment: AugmentConfig,
    pub iterations: u64,
    pub batch_size: usize,
    /// Save a checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
    /// Square training patches; `None` trains on whole images.
    pub patch_size: Option<usize>,
    /// Minimum foreground fraction a random patch must reach.
    pub min_foreground: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            loss: LossKind::SoftDice,
            augment: AugmentConfig::default(),
            iterations: 2000,
            batch_size: 8,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
            patch_size: None,
            min_foreground: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for batch norm".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) || !(self.adam.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight_decay must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_foreground) {
            return Err(Error::Config("min_foreground must lie in [0, 1]".into()));
        }
        if self.patch_size == Some(0) {
            return Err(Error::Config("patch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Generator streams, one per purpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    Dropout = 4,
}

/// Generator for `purpose` at position `index`, derived from `seed`.
pub fn stream_rng(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (purpose as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index);
    rng
}

/// Same-shaped samples used for training or evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample<f32>>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample<f32>>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let shape = first.image.shape().to_vec();
            if let Some(bad) = samples.iter().find(|s| s.image.shape() != shape.as_slice()) {
                return Err(Error::shape("dataset", &shape, bad.image.shape()));
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks samples into an (N, C, H, W) tensor and flattened labels.
    pub fn batch(samples: &[Sample<f32>]) -> Result<(Tensor<f32>, Vec<u8>)> {
        let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
        let x = Tensor::stack(&images)?;
        let labels = samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
        Ok((x, labels))
    }
}

/// Dataset indices used by step `step`: consecutive positions of the
/// concatenated per-epoch permutations.
pub fn batch_indices(seed: u64, n: usize, batch: usize, step: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for j in 0..batch as u64 {
        let pos = step * batch as u64 + j;
        let (epoch, offset) = (pos / n as u64, (pos % n as u64) as usize);
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut stream_rng(seed, Stream::Shuffle, epoch));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("filled above").1[offset]);
    }
    out
}

fn random_patch<R: Rng + ?Sized>(sample: &Sample<f32>, size: usize, min_fg: f64, rng: &mut R) -> Result<Sample<f32>> {
    let (h, w) = (sample.height(), sample.width());
    if size > h || size > w {
        return Err(Error::Config(alloc::format!("patch {size} exceeds image {h}x{w}")));
    }
    const ATTEMPTS: usize = 20;
    let mut patch = None;
    for _ in 0..ATTEMPTS {
        let top = rng.random_range(0..=h - size);
        let left = rng.random_range(0..=w - size);
        let candidate = sample.crop(top, left, size)?;
        let fg = candidate.labels.iter().filter(|&&l| l != 0).count() as f64 / (size * size) as f64;
        let done = fg >= min_fg;
        patch = Some(candidate);
        if done {
            break;
        }
    }
    Ok(patch.expect("at least one attempt"))
}

/// Owns the network, its parameters, the optimizer and the loss trace.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: Network,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub config: TrainConfig,
    /// Loss of every completed step, in order.
    pub trace: Vec<f64>,
}

impl Trainer {
    pub fn new(net_config: NetworkConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, Stream::Init, 0);
        let (net, store) = Network::build(net_config, &mut rng)?;
        let adam = Adam::new(config.adam, &store);
        Ok(Self {
            net,
            store,
            adam,
            config,
            trace: Vec::new(),
        })
    }

    /// Completed steps.
    pub fn step(&self) -> u64 {
        self.trace.len() as u64
    }

    /// Assembles the (augmented, possibly cropped) batch of step `step`.
    pub fn make_batch(&self, data: &Dataset, step: u64) -> Result<(Tensor<f32>, Vec<u8>)> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let idx = batch_indices(self.config.seed, data.len(), self.config.batch_size, step);
        let mut rng = stream_rng(self.config.seed, Stream::Augment, step);
        let mut batch = Vec::with_capacity(idx.len());
        for i in idx {
            let mut s = match self.config.patch_size {
                Some(p) => random_patch(&data.samples[i], p, self.config.min_foreground, &mut rng)?,
                None => data.samples[i].clone(),
            };
            let aug = Augmentation::sample(self.config.augment, &mut rng);
            s = aug.apply(&s)?;
            batch.push(s);
        }
        Dataset::batch(&batch)
    }

    /// Runs one optimization step and returns its loss.
    pub fn train_step(&mut self, data: &Dataset) -> Result<f64> {
        let step = self.step();
        let (x, labels) = self.make_batch(data, step)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let mut ctx = ForwardCtx::new(Mode::Train, stream_rng(self.config.seed, Stream::Dropout, step));
        let probs = self.net.forward(&mut tape, &mut self.store, xv, &mut ctx)?;
        let loss = tape.segmentation_loss(self.config.loss, probs, &labels)?;
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: step });
        }
        tape.backward(loss)?;
        let grads: Vec<(ParamId, &[f32])> = tape.param_grads().collect();
        self.adam.step(&mut self.store, grads);
        self.trace.push(value);
        Ok(value)
    }

    /// Trains until `config.iterations` steps are complete, calling
    /// `checkpoint` after every `checkpoint_every`-th step.
    pub fn run(&mut self, data: &Dataset, mut checkpoint: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        while self.step() < self.config.iterations {
            self.train_step(data)?;
            let every = self.config.checkpoint_every;
            if every > 0 && self.step() % every == 0 {
                checkpoint(self)?;
            }
        }
        Ok(())
    }

    pub fn evaluate(&mut self, data: &Dataset, batch: usize) -> Result<MetricsReport> {
        evaluate(&self.net, &mut self.store, data, batch)
    }
}

/// Inference-mode predictions (argmax labels) for every sample.
pub fn predict_labels(net: &Network, store: &mut ParamStore<f32>, data: &Dataset, batch: usize) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(batch.max(1)) {
        let (x, _) = Dataset::batch(chunk)?;
        let probs = net.predict(store, &x)?;
        let labels = argmax_labels(&probs)?;
        let hw = labels.len() / chunk.len();
        out.extend(labels.chunks(hw).map(<[u8]>::to_vec));
    }
    Ok(out)
}

/// Per-class metrics of inference-mode predictions against the labels.
pub fn evaluate(net: &Network, store: &mut ParamStore<f32>, data: &Dataset, batch: usize) -> Result<MetricsReport> {
    let predictions = predict_labels(net, store, data, batch)?;
    let mut report = MetricsReport::new(net.config.num_classes);
    for (pred, sample) in predictions.iter().zip(&data.samples) {
        report.add_sample(pred, &sample.labels, sample.height(), sample.width(), 1.0)?;
    }
    Ok(report)
}
