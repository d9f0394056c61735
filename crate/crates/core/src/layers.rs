//! Parameterized layers: convolution, transposed-convolution stack, batch
//! normalization and spatial dropout.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use crate::ops::{BatchStats, Conv2dGeometry};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::{Error, Mode, Result, Scalar, Tape, Tensor, Var};

/// Batch-norm numerical guard.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Values captured around one recalibration point, for inspection.
#[derive(Clone, Debug)]
pub struct Probe<T> {
    pub block: String,
    /// Expanded features before recalibration.
    pub pre: Tensor<T>,
    /// Excitation at full resolution (channel SE factors broadcast over H x W).
    pub excitation: Tensor<T>,
    /// `pre ⊙ excitation`.
    pub post: Tensor<T>,
}

/// Per-pass state: mode flag, dropout RNG and optional probe capture.
pub struct ForwardCtx<T> {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
    pub capture: bool,
    pub probes: Vec<Probe<T>>,
}

impl<T: Scalar> ForwardCtx<T> {
    pub fn new(mode: Mode, rng: ChaCha8Rng) -> Self {
        Self {
            mode,
            rng,
            capture: false,
            probes: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        use rand::SeedableRng;
        Self::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0))
    }

    pub fn capturing(mut self) -> Self {
        self.capture = true;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero fill of `floor(d (k - 1) / 2)` per side.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn same(kernel: usize, dilation: usize, out_channels: usize) -> Self {
        Self {
            kernel,
            dilation,
            out_channels,
            stride: 1,
            padding: Padding::Same,
        }
    }

    pub fn pointwise(out_channels: usize) -> Self {
        Self::same(1, 1, out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.dilation == 0 || self.out_channels == 0 || self.stride == 0 {
            return Err(Error::Config(format!("invalid convolution spec {self:?}")));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Conv2dGeometry {
        match self.padding {
            Padding::Same => Conv2dGeometry {
                stride: self.stride,
                ..Conv2dGeometry::same(self.kernel, self.dilation)
            },
            Padding::Valid => Conv2dGeometry::valid(self.kernel, self.stride, self.dilation),
        }
    }
}

fn init_bound(fan_in: usize) -> f64 {
    num_traits::Float::sqrt(3.0 / fan_in as f64)
}

/// Initialization gain for convolutions whose output goes straight into batch
/// normalization. Such weights are scale-invariant, so Adam's roughly constant
/// step size turns into an angular step of `lr / |w|`; starting them small
/// lets a small learning rate still reorient the filters within a few thousand
/// steps. Layers without a following normalization keep unit gain.
pub const NORMALIZED_INIT_GAIN: f64 = 0.1;

/// Convolution with per-output-channel bias. Weights are (n, C', k, k).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub in_channels: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Conv2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_gain(store, name, in_channels, spec, 1.0, rng)
    }

    /// As [`Conv2d::new`] with the uniform bound scaled by `gain`.
    pub fn with_gain<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        spec: ConvSpec,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let k = spec.kernel;
        let weight = store.add_uniform(
            &format!("{name}.weight"),
            ParamKind::Weight,
            &[spec.out_channels, in_channels, k, k],
            gain * init_bound(in_channels * k * k),
            rng,
        );
        let bias = store.add(&format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[spec.out_channels]));
        Ok(Self {
            spec,
            in_channels,
            weight,
            bias,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, Some(b), self.spec.geometry())
    }

    pub fn param_count(&self) -> usize {
        self.spec.out_channels * self.in_channels * self.spec.kernel * self.spec.kernel + self.spec.out_channels
    }
}

/// Batch normalization with learnable scale/shift and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    scale: ParamId,
    shift: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            channels,
            scale: store.add(&format!("{name}.scale"), ParamKind::NormScale, Tensor::ones(&[channels])),
            shift: store.add(&format!("{name}.shift"), ParamKind::NormShift, Tensor::zeros(&[channels])),
            running_mean: store.add(
                &format!("{name}.running_mean"),
                ParamKind::RunningStat,
                Tensor::zeros(&[channels]),
            ),
            running_var: store.add(
                &format!("{name}.running_var"),
                ParamKind::RunningStat,
                Tensor::ones(&[channels]),
            ),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn scale(&self) -> ParamId {
        self.scale
    }

    pub fn shift(&self) -> ParamId {
        self.shift
    }

    pub fn running_stats<T: Scalar>(&self, store: &ParamStore<T>) -> BatchStats<T> {
        BatchStats {
            mean: store.value(self.running_mean).data().to_vec(),
            var: store.value(self.running_var).data().to_vec(),
        }
    }

    pub fn set_running_stats<T: Scalar>(&self, store: &mut ParamStore<T>, stats: &BatchStats<T>) {
        store.value_mut(self.running_mean).data_mut().copy_from_slice(&stats.mean);
        store.value_mut(self.running_var).data_mut().copy_from_slice(&stats.var);
    }

    /// Training mode normalizes with batch statistics and updates the
    /// running estimates; inference mode uses the running estimates only.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(store, self.scale);
        let beta = tape.param(store, self.shift);
        let eps = T::of(self.eps);
        match mode {
            Mode::Train => {
                let (y, batch) = tape.batch_norm_train(x, gamma, beta, eps)?;
                let m = T::of(self.momentum);
                let keep = T::one() - m;
                let mut running = self.running_stats(store);
                for (r, b) in running.mean.iter_mut().zip(&batch.mean) {
                    *r = keep * *r + m * *b;
                }
                for (r, b) in running.var.iter_mut().zip(&batch.var) {
                    *r = keep * *r + m * *b;
                }
                self.set_running_stats(store, &running);
                Ok(y)
            }
            Mode::Eval => {
                let stats = self.running_stats(store);
                tape.batch_norm_eval(x, gamma, beta, &stats, eps)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTransposeSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    /// Number of stacked doubling stages.
    pub stages: usize,
}

impl ConvTransposeSpec {
    /// Kernel 3, stride 2, `stages` doubling stages.
    pub fn doubling(out_channels: usize, stages: usize) -> Self {
        Self {
            kernel: 3,
            stride: 2,
            out_channels,
            stages,
        }
    }

    fn geometry(&self) -> Conv2dGeometry {
        Conv2dGeometry {
            kernel: self.kernel,
            stride: self.stride,
            dilation: 1,
            pad: (self.kernel - 1) / 2,
        }
    }

    /// Extra rows added so each stage multiplies the size by exactly `stride`.
    fn output_padding(&self) -> usize {
        self.stride + 2 * ((self.kernel - 1) / 2) - self.kernel
    }
}

#[derive(Clone, Debug)]
struct ConvTransposeStage {
    in_channels: usize,
    weight: ParamId,
    bias: ParamId,
    norm: BatchNorm,
}

/// `stages` repetitions of (transposed conv -> batch norm).
#[derive(Clone, Debug)]
pub struct ConvTransposeBlock {
    pub spec: ConvTransposeSpec,
    stages: Vec<ConvTransposeStage>,
}

impl ConvTransposeBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        spec: ConvTransposeSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.stages == 0 || spec.kernel % 2 == 0 || spec.stride < 2 {
            return Err(Error::Config(format!("invalid transposed convolution spec {spec:?}")));
        }
        let k = spec.kernel;
        let mut stages = Vec::with_capacity(spec.stages);
        let mut cin = in_channels;
        for i in 0..spec.stages {
            let weight = store.add_uniform(
                &format!("{name}.{i}.weight"),
                ParamKind::Weight,
                &[cin, spec.out_channels, k, k],
                NORMALIZED_INIT_GAIN * init_bound(cin * k * k),
                rng,
            );
            let bias = store.add(
                &format!("{name}.{i}.bias"),
                ParamKind::Bias,
                Tensor::zeros(&[spec.out_channels]),
            );
            let norm = BatchNorm::new(store, &format!("{name}.{i}.bn"), spec.out_channels);
            stages.push(ConvTransposeStage {
                in_channels: cin,
                weight,
                bias,
                norm,
            });
            cin = spec.out_channels;
        }
        Ok(Self { spec, stages })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, mut x: Var, mode: Mode) -> Result<Var> {
        let geom = self.spec.geometry();
        for stage in &self.stages {
            let w = tape.param(store, stage.weight);
            let b = tape.param(store, stage.bias);
            let up = tape.conv_transpose2d(x, w, Some(b), geom, self.spec.output_padding())?;
            x = stage.norm.forward(tape, store, up, mode)?;
        }
        Ok(x)
    }

    pub fn param_count(&self) -> usize {
        let k2 = self.spec.kernel * self.spec.kernel;
        self.stages
            .iter()
            .map(|s| s.in_channels * self.spec.out_channels * k2 + self.spec.out_channels + s.norm.param_count())
            .sum()
    }
}

/// Zeroes whole channels with probability `rate` and scales survivors by
/// `1 / (1 - rate)` in training mode; identity in inference mode.
pub fn spatial_dropout<T: Scalar, R: RngCore + ?Sized>(
    tape: &mut Tape<T>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidRate(rate));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let (n, c, _, _) = tape.value(x).dims4()?;
    let keep = T::of(1.0 / (1.0 - rate));
    let factors = (0..n * c)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    tape.scale_channels(x, factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_module_gradients;
    use rand::SeedableRng;

    #[test]
    fn transposed_block_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let mut store = ParamStore::<f32>::new();
        let one = ConvTransposeBlock::new(&mut store, "t1", 5, ConvTransposeSpec::doubling(3, 1), &mut rng).unwrap();
        let two = ConvTransposeBlock::new(&mut store, "t2", 5, ConvTransposeSpec::doubling(3, 2), &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::uniform(&[2, 5, 8, 8], -1.0, 1.0, &mut rng));
        let y1 = one.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        let y2 = two.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        assert_eq!(tape.shape(y1), &[2, 3, 16, 16]);
        assert_eq!(tape.shape(y2), &[2, 3, 32, 32]);
        assert_eq!(one.param_count(), 5 * 3 * 9 + 3 + 6);
        assert_eq!(two.param_count(), 5 * 3 * 9 + 3 + 6 + 3 * 3 * 9 + 3 + 6);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let x = Tensor::<f32>::uniform(&[2, 4, 3, 3], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let a = spatial_dropout(&mut tape, v, 0.0, Mode::Train, &mut rng).unwrap();
        let b = spatial_dropout(&mut tape, v, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(tape.value(a), &x);
        assert_eq!(tape.value(b), &x);
        assert_eq!(spatial_dropout(&mut tape, v, 1.0, Mode::Train, &mut rng), Err(Error::InvalidRate(1.0)));
    }

    #[test]
    fn dropout_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let trials = 10_000;
        let mut dropped = 0;
        for _ in 0..trials {
            let y = spatial_dropout(&mut tape, v, 0.05, Mode::Train, &mut rng).unwrap();
            let d = tape.value(y).data();
            assert!(d.iter().all(|&e| e == d[0]), "whole channel dropped or kept");
            if d[0] == 0.0 {
                dropped += 1;
            } else {
                assert!((d[0] - 1.0 / 0.95).abs() < 1e-6);
            }
        }
        let freq = dropped as f64 / trials as f64;
        assert!((freq - 0.05).abs() < 0.01, "{freq}");
    }

    #[test]
    fn layer_gradients_including_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::new(&mut store, "c", 2, ConvSpec::same(3, 2, 3), &mut rng).unwrap();
        let bn = BatchNorm::new(&mut store, "bn", 3);
        let up = ConvTransposeBlock::new(&mut store, "up", 3, ConvTransposeSpec::doubling(2, 1), &mut rng).unwrap();
        crate::gradsuite::randomize_weights(&mut store, 74);
        // non-trivial affine parameters
        for id in [bn.scale(), bn.shift(), conv.bias()] {
            let t = store.value_mut(id);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.1 * (i as f64 + 1.0);
            }
        }
        let x = Tensor::<f64>::uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut rng);
        let probe = Tensor::<f64>::uniform(&[2, 2, 8, 8], -1.0, 1.0, &mut rng);
        let err = check_module_gradients(
            |tape, store, v| {
                let y = conv.forward(tape, store, v[0])?;
                let y = bn.forward(tape, store, y, Mode::Train)?;
                let y = tape.relu(y);
                let y = up.forward(tape, store, y, Mode::Train)?;
                let p = tape.constant(probe.clone());
                let y = tape.mul(y, p)?;
                Ok(tape.mean(y))
            },
            &mut store,
            &[x],
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn running_stats_update_only_in_training() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 1, 1, 2], alloc::vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        bn.forward(&mut tape, &mut store, x, Mode::Eval).unwrap();
        assert_eq!(bn.running_stats(&store).mean, alloc::vec![0.0]);
        bn.forward(&mut tape, &mut store, x, Mode::Train).unwrap();
        let stats = bn.running_stats(&store);
        assert!((stats.mean[0] - 0.4).abs() < 1e-12);
        assert!((stats.var[0] - (0.9 + 0.1 * 5.0)).abs() < 1e-12);
    }
}
