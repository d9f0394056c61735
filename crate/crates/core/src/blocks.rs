//! Recombination and recalibration blocks.
//!
//! An RR block expands its input to `m C'` channels with a 1x1 convolution,
//! recalibrates the expanded features with one of the excitation pathways
//! below, then compresses back to `C'` channels with a second 1x1
//! convolution. All excitation values come out of a sigmoid, so they lie
//! in (0, 1) and act as soft per-feature gates.
//!
//! * Channel SE squeezes every channel to its spatial mean and produces one
//!   factor per channel.
//! * SegSE squeezes with a dilated 3x3 convolution into a bottleneck, so the
//!   factors form a full-resolution map per channel.
//! * Variant 1 is SegSE with a 1x1 squeeze (no spatial context).
//! * Variant 2 gathers context by `p x p` average pooling and restores the
//!   resolution with `p / 2` doubling transposed-convolution stages.

use alloc::format;
use alloc::string::{String, ToString};

use rand::Rng;

use crate::layers::{BatchNorm, Conv2d, ConvSpec, ConvTransposeBlock, ConvTransposeSpec, ForwardCtx, Probe, NORMALIZED_INIT_GAIN};
use crate::params::ParamStore;
use crate::{Error, Mode, Result, Scalar, Tape, Var};

/// Expansion factor `m` used throughout.
pub const DEFAULT_EXPANSION: usize = 4;
/// Reduction factor `r` of the excitation bottleneck.
pub const DEFAULT_REDUCTION: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Identity passthrough.
    None,
    RecombOnly,
    RrSe,
    RrSegSe,
    RrVar1,
    RrVar2,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::None,
        BlockKind::RecombOnly,
        BlockKind::RrSe,
        BlockKind::RrSegSe,
        BlockKind::RrVar1,
        BlockKind::RrVar2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::None => "none",
            BlockKind::RecombOnly => "recomb_only",
            BlockKind::RrSe => "rr_se",
            BlockKind::RrSegSe => "rr_segse",
            BlockKind::RrVar1 => "rr_var1",
            BlockKind::RrVar2 => "rr_var2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown block kind {s:?}")))
    }

    pub fn recalibrates(self) -> bool {
        matches!(self, BlockKind::RrSe | BlockKind::RrSegSe | BlockKind::RrVar1 | BlockKind::RrVar2)
    }
}

impl core::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One block placement. `dilation` and `pool` belong to the placement scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub kind: BlockKind,
    /// Expansion factor `m`.
    pub expansion: usize,
    /// Reduction factor `r`.
    pub reduction: usize,
    /// SegSE dilation `d`.
    pub dilation: usize,
    /// Variant 2 pooling size `p`.
    pub pool: usize,
}

impl BlockConfig {
    pub fn new(kind: BlockKind) -> Self {
        Self {
            kind,
            expansion: DEFAULT_EXPANSION,
            reduction: DEFAULT_REDUCTION,
            dilation: 1,
            pool: 2,
        }
    }

    pub fn with_placement(mut self, dilation: usize, pool: usize) -> Self {
        self.dilation = dilation;
        self.pool = pool;
        self
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.expansion == 0 || self.reduction == 0 || self.dilation == 0 {
            return Err(Error::Config(format!("m, r and d must be >= 1 in {self:?}")));
        }
        if self.kind == BlockKind::RrVar2 && (self.pool < 2 || self.pool % 2 != 0) {
            return Err(Error::Config(format!("Variant 2 pooling size must be even, got {}", self.pool)));
        }
        if self.kind.recalibrates() {
            bottleneck_width(self.expansion * channels, self.reduction)?;
        }
        Ok(())
    }
}

/// `floor(channels / r)`; zero is rejected.
pub fn bottleneck_width(channels: usize, reduction: usize) -> Result<usize> {
    match channels / reduction.max(1) {
        0 => Err(Error::Config(format!(
            "bottleneck floor({channels}/{reduction}) is zero"
        ))),
        w => Ok(w),
    }
}

/// Two 1x1 convolutions: `C' -> m C' -> C'`, no nonlinearity between.
#[derive(Clone, Debug)]
pub struct Recombination {
    pub expand: Conv2d,
    pub compress: Conv2d,
}

/// Scale of the random part of the recombination weights, relative to the
/// fan-in uniform bound. The deterministic part replicates and re-averages
/// channels; the recombination is linear and not followed by normalization,
/// so at small learning rates its initial mixing is what the rest of the
/// network has to live with.
pub const RECOMBINATION_NOISE_GAIN: f64 = 0.1;

impl Recombination {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        expansion: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let wide = expansion * channels;
        let expand = Conv2d::with_gain(
            store,
            &format!("{name}.expand"),
            channels,
            ConvSpec::pointwise(wide),
            RECOMBINATION_NOISE_GAIN,
            rng,
        )?;
        let compress = Conv2d::with_gain(
            store,
            &format!("{name}.compress"),
            wide,
            ConvSpec::pointwise(channels),
            RECOMBINATION_NOISE_GAIN,
            rng,
        )?;
        // Expanded channel j copies input channel j mod C; compression averages
        // the copies back, so the block starts close to the identity.
        let share = T::of(1.0 / expansion as f64);
        let w = store.value_mut(expand.weight()).data_mut();
        for j in 0..wide {
            w[j * channels + j % channels] += T::one();
        }
        let w = store.value_mut(compress.weight()).data_mut();
        for i in 0..channels {
            for j in (i..wide).step_by(channels) {
                w[i * wide + j] += share;
            }
        }
        Ok(Self { expand, compress })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let wide = self.expand.forward(tape, store, x)?;
        self.compress.forward(tape, store, wide)
    }

    pub fn param_count(&self) -> usize {
        self.expand.param_count() + self.compress.param_count()
    }
}

/// Channel squeeze-and-excitation: `s = σ(W2 δ(W1 mean_hw(x)))`, shape (N, C, 1, 1).
#[derive(Clone, Debug)]
pub struct ChannelExcitation {
    pub reduce: Conv2d,
    pub restore: Conv2d,
}

impl ChannelExcitation {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let width = bottleneck_width(channels, reduction)?;
        Ok(Self {
            reduce: Conv2d::new(store, &format!("{name}.reduce"), channels, ConvSpec::pointwise(width), rng)?,
            restore: Conv2d::new(store, &format!("{name}.restore"), width, ConvSpec::pointwise(channels), rng)?,
        })
    }

    pub fn excite<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let z = tape.global_avg_pool(x)?;
        let h = self.reduce.forward(tape, store, z)?;
        let h = tape.relu(h);
        let s = self.restore.forward(tape, store, h)?;
        Ok(tape.sigmoid(s))
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.restore.param_count()
    }
}

/// Full-resolution excitation `S = σ(conv1x1(δ(BN(conv_{k,d}(x)))))`.
/// SegSE uses `k = 3` with the placement dilation; Variant 1 uses `k = d = 1`.
#[derive(Clone, Debug)]
pub struct SpatialExcitation {
    pub squeeze: Conv2d,
    pub norm: BatchNorm,
    pub restore: Conv2d,
}

impl SpatialExcitation {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let width = bottleneck_width(channels, reduction)?;
        Ok(Self {
            squeeze: Conv2d::with_gain(
                store,
                &format!("{name}.squeeze"),
                channels,
                ConvSpec::same(kernel, dilation, width),
                NORMALIZED_INIT_GAIN,
                rng,
            )?,
            norm: BatchNorm::new(store, &format!("{name}.bn"), width),
            restore: Conv2d::new(store, &format!("{name}.restore"), width, ConvSpec::pointwise(channels), rng)?,
        })
    }

    /// SegSE pathway: dilated 3x3 squeeze.
    pub fn segse<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(store, name, channels, reduction, 3, dilation, rng)
    }

    /// Variant 1: the SegSE pathway with a 1x1 squeeze.
    pub fn variant1<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(store, name, channels, reduction, 1, 1, rng)
    }

    pub fn excite<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let z = self.squeeze.forward(tape, store, x)?;
        let z = self.norm.forward(tape, store, z, mode)?;
        let z = tape.relu(z);
        let s = self.restore.forward(tape, store, z)?;
        Ok(tape.sigmoid(s))
    }

    pub fn param_count(&self) -> usize {
        self.squeeze.param_count() + self.norm.param_count() + self.restore.param_count()
    }
}

/// Variant 2: `p x p` average pooling, 1x1 bottleneck with BN + ReLU,
/// `p / 2` transposed-convolution doubling stages, 1x1 restore, sigmoid.
#[derive(Clone, Debug)]
pub struct PooledExcitation {
    pub pool: usize,
    pub squeeze: Conv2d,
    pub norm: BatchNorm,
    pub upsample: ConvTransposeBlock,
    pub restore: Conv2d,
}

impl PooledExcitation {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        pool: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if pool < 2 || pool % 2 != 0 {
            return Err(Error::Config(format!("pooling size must be even, got {pool}")));
        }
        let width = bottleneck_width(channels, reduction)?;
        Ok(Self {
            pool,
            squeeze: Conv2d::with_gain(
                store,
                &format!("{name}.squeeze"),
                channels,
                ConvSpec::pointwise(width),
                NORMALIZED_INIT_GAIN,
                rng,
            )?,
            norm: BatchNorm::new(store, &format!("{name}.bn"), width),
            upsample: ConvTransposeBlock::new(
                store,
                &format!("{name}.up"),
                width,
                ConvTransposeSpec::doubling(width, pool / 2),
                rng,
            )?,
            restore: Conv2d::new(store, &format!("{name}.restore"), width, ConvSpec::pointwise(channels), rng)?,
        })
    }

    /// Number of doubling stages, `p / 2`.
    pub fn stages(&self) -> usize {
        self.upsample.spec.stages
    }

    pub fn excite<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let pooled = tape.avg_pool(x, self.pool)?;
        let z = self.squeeze.forward(tape, store, pooled)?;
        let z = self.norm.forward(tape, store, z, mode)?;
        let z = tape.relu(z);
        let up = self.upsample.forward(tape, store, z, mode)?;
        let s = self.restore.forward(tape, store, up)?;
        let s = tape.sigmoid(s);
        let (_, _, h, w) = tape.value(x).dims4()?;
        let (_, _, sh, sw) = tape.value(s).dims4()?;
        if (sh, sw) != (h, w) {
            // p is not a power of two: the doubling stages overshoot or undershoot
            return Err(Error::shape("variant 2 excitation", &[h, w], &[sh, sw]));
        }
        Ok(s)
    }

    pub fn param_count(&self) -> usize {
        self.squeeze.param_count() + self.norm.param_count() + self.upsample.param_count() + self.restore.param_count()
    }
}

/// Channel recalibration `u_c = x_c s_c` with `s` of shape (N, C, 1, 1).
pub fn se_recalibrate<T: Scalar>(tape: &mut Tape<T>, x: Var, s: Var) -> Result<Var> {
    let (n, c, _, _) = tape.value(x).dims4()?;
    if tape.shape(s) != [n, c, 1, 1] {
        return Err(Error::shape("se_recalibrate", &[n, c, 1, 1], tape.shape(s)));
    }
    tape.mul(x, s)
}

/// Elementwise recalibration `U = X ⊙ S`; shapes must match exactly.
pub fn segse_recalibrate<T: Scalar>(tape: &mut Tape<T>, x: Var, s: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(s) {
        return Err(Error::shape("segse_recalibrate", tape.shape(x), tape.shape(s)));
    }
    tape.mul(x, s)
}

#[derive(Clone, Debug)]
pub enum Excitation {
    Channel(ChannelExcitation),
    Spatial(SpatialExcitation),
    Pooled(PooledExcitation),
}

impl Excitation {
    pub fn excite<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        match self {
            Excitation::Channel(e) => e.excite(tape, store, x),
            Excitation::Spatial(e) => e.excite(tape, store, x, mode),
            Excitation::Pooled(e) => e.excite(tape, store, x, mode),
        }
    }

    pub fn recalibrate<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, s: Var) -> Result<Var> {
        match self {
            Excitation::Channel(_) => se_recalibrate(tape, x, s),
            _ => segse_recalibrate(tape, x, s),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Excitation::Channel(e) => e.param_count(),
            Excitation::Spatial(e) => e.param_count(),
            Excitation::Pooled(e) => e.param_count(),
        }
    }
}

/// Expand -> recalibrate -> compress. Output shape always equals input shape.
#[derive(Clone, Debug)]
pub struct RrBlock {
    pub name: String,
    pub config: BlockConfig,
    pub channels: usize,
    pub recombination: Option<Recombination>,
    pub excitation: Option<Excitation>,
}

impl RrBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        config: BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate(channels)?;
        let recombination = match config.kind {
            BlockKind::None => None,
            _ => Some(Recombination::new(store, name, channels, config.expansion, rng)?),
        };
        let wide = config.expansion * channels;
        let ename = format!("{name}.excite");
        let excitation = match config.kind {
            BlockKind::None | BlockKind::RecombOnly => None,
            BlockKind::RrSe => Some(Excitation::Channel(ChannelExcitation::new(
                store,
                &ename,
                wide,
                config.reduction,
                rng,
            )?)),
            BlockKind::RrSegSe => Some(Excitation::Spatial(SpatialExcitation::segse(
                store,
                &ename,
                wide,
                config.reduction,
                config.dilation,
                rng,
            )?)),
            BlockKind::RrVar1 => Some(Excitation::Spatial(SpatialExcitation::variant1(
                store,
                &ename,
                wide,
                config.reduction,
                rng,
            )?)),
            BlockKind::RrVar2 => Some(Excitation::Pooled(PooledExcitation::new(
                store,
                &ename,
                wide,
                config.reduction,
                config.pool,
                rng,
            )?)),
        };
        Ok(Self {
            name: name.to_string(),
            config,
            channels,
            recombination,
            excitation,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var> {
        let Some(recomb) = &self.recombination else {
            return Ok(x);
        };
        let wide = recomb.expand.forward(tape, store, x)?;
        let wide = match &self.excitation {
            None => wide,
            Some(excitation) => {
                let s = excitation.excite(tape, store, wide, ctx.mode)?;
                let post = excitation.recalibrate(tape, wide, s)?;
                if ctx.capture {
                    let shape = tape.shape(wide).to_vec();
                    let full = tape.broadcast(s, &shape)?;
                    ctx.probes.push(Probe {
                        block: self.name.clone(),
                        pre: tape.value(wide).clone(),
                        excitation: tape.value(full).clone(),
                        post: tape.value(post).clone(),
                    });
                }
                post
            }
        };
        recomb.compress.forward(tape, store, wide)
    }

    pub fn param_count(&self) -> usize {
        self.recombination.as_ref().map_or(0, Recombination::param_count)
            + self.excitation.as_ref().map_or(0, Excitation::param_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_module_gradients;
    use crate::{Tensor};
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_weights<T: Scalar>(store: &mut ParamStore<T>, conv: &Conv2d) {
        for id in [conv.weight(), conv.bias()] {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    #[test]
    fn recombination_shape_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let mut store = ParamStore::<f64>::new();
        let r = Recombination::new(&mut store, "r", 8, 4, &mut rng).unwrap();
        assert_eq!(r.expand.spec.out_channels, 32);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::uniform(&[1, 8, 16, 16], -1.0, 1.0, &mut rng));
        let y = r.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), &[1, 8, 16, 16]);

        // m = 1 with identity weights
        let id = Recombination::new(&mut store, "id", 3, 1, &mut rng).unwrap();
        for conv in [&id.expand, &id.compress] {
            let w = store.value_mut(conv.weight());
            w.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = if i % 4 == 0 { 1.0 } else { 0.0 });
        }
        let x = Tensor::<f64>::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let xv = tape.constant(x.clone());
        let y = id.forward(&mut tape, &store, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn recombination_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let mut store = ParamStore::<f64>::new();
        let r = Recombination::new(&mut store, "r", 4, 4, &mut rng).unwrap();
        // zero biases so the map is linear rather than affine
        for conv in [&r.expand, &r.compress] {
            store.value_mut(conv.bias()).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::<f64>::uniform(&[2, 4, 5, 5], -1.0, 1.0, &mut rng);
        let y = Tensor::<f64>::uniform(&[2, 4, 5, 5], -1.0, 1.0, &mut rng);
        let (a, b) = (0.3, -2.1);
        let mut tape = Tape::new();
        let run = |tape: &mut Tape<f64>, t: Tensor<f64>| {
            let v = tape.constant(t);
            let o = r.forward(tape, &store, v).unwrap();
            tape.value(o).clone()
        };
        let combo = Tensor::from_fn(&[2, 4, 5, 5], |i| a * x.data()[i] + b * y.data()[i]);
        let lhs = run(&mut tape, combo);
        let fx = run(&mut tape, x);
        let fy = run(&mut tape, y);
        for i in 0..lhs.len() {
            assert!((lhs.data()[i] - (a * fx.data()[i] + b * fy.data()[i])).abs() < 1e-5);
        }
    }

    #[test]
    fn channel_excitation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let mut store = ParamStore::<f64>::new();
        let se = ChannelExcitation::new(&mut store, "se", 20, 10, &mut rng).unwrap();
        assert!(ChannelExcitation::new(&mut store, "bad", 9, 10, &mut rng).is_err());

        // direct dense-algebra oracle
        let x = Tensor::<f64>::uniform(&[2, 20, 3, 5], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let s = se.excite(&mut tape, &store, xv).unwrap();
        assert_eq!(tape.shape(s), &[2, 20, 1, 1]);
        let w1 = store.value(se.reduce.weight()).data().to_vec();
        let b1 = store.value(se.reduce.bias()).data().to_vec();
        let w2 = store.value(se.restore.weight()).data().to_vec();
        let b2 = store.value(se.restore.bias()).data().to_vec();
        for n in 0..2 {
            let z: Vec<f64> = (0..20)
                .map(|c| x.data()[(n * 20 + c) * 15..(n * 20 + c + 1) * 15].iter().sum::<f64>() / 15.0)
                .collect();
            let hidden: Vec<f64> = (0..2)
                .map(|j| (b1[j] + (0..20).map(|c| w1[j * 20 + c] * z[c]).sum::<f64>()).max(0.0))
                .collect();
            for c in 0..20 {
                let logit = b2[c] + (0..2).map(|j| w2[c * 2 + j] * hidden[j]).sum::<f64>();
                let want = 1.0 / (1.0 + (-logit).exp());
                let got = tape.value(s).data()[n * 20 + c];
                assert!((got - want).abs() < 1e-12);
                assert!(got > 0.0 && got < 1.0);
            }
        }

        // zero weights give 0.5; constant channels squeeze to the constant
        zero_weights(&mut store, &se.reduce);
        zero_weights(&mut store, &se.restore);
        let c = tape.constant(Tensor::from_fn(&[1, 20, 4, 4], |i| (i / 16) as f64));
        let z = tape.global_avg_pool(c).unwrap();
        assert_eq!(tape.value(z).data(), (0..20).map(|i| i as f64).collect::<Vec<_>>().as_slice());
        let s = se.excite(&mut tape, &store, c).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn channel_recalibration_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let x = Tensor::<f64>::uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let ones = tape.constant(Tensor::ones(&[1, 3, 1, 1]));
        let y = se_recalibrate(&mut tape, xv, ones).unwrap();
        assert_eq!(tape.value(y), &x);
        let mask = tape.constant(Tensor::new(&[1, 3, 1, 1], vec![1.0, 0.0, 1.0]).unwrap());
        let y = se_recalibrate(&mut tape, xv, mask).unwrap();
        let yd = tape.value(y).data();
        assert!(yd[16..32].iter().all(|&v| v == 0.0));
        assert_eq!(&yd[..16], &x.data()[..16]);
        assert_eq!(&yd[32..], &x.data()[32..]);
    }

    #[test]
    fn spatial_excitation_zero_path_and_adaptivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let mut store = ParamStore::<f64>::new();
        let seg = SpatialExcitation::segse(&mut store, "seg", 20, 10, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut delta = Tensor::<f64>::zeros(&[2, 20, 12, 12]);
        for n in 0..2 {
            for c in 0..20 {
                delta.data_mut()[(n * 20 + c) * 144 + 5 * 12 + 6] = 1.0 + c as f64;
            }
        }
        let xv = tape.constant(delta);
        let s = seg.excite(&mut tape, &mut store, xv, Mode::Train).unwrap();
        assert_eq!(tape.shape(s), &[2, 20, 12, 12]);
        let sd = tape.value(s).data();
        assert!(sd.iter().all(|&v| v > 0.0 && v < 1.0));
        let plane = &sd[..144];
        let mean = plane.iter().sum::<f64>() / 144.0;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 144.0;
        assert!(var > 1e-4, "{var}");

        zero_weights(&mut store, &seg.squeeze);
        let s = seg.excite(&mut tape, &mut store, xv, Mode::Train).unwrap();
        // Z = relu(BN(0)) = relu(shift) = 0, so S = σ(restore bias = 0)
        assert!(tape.value(s).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn variant1_is_pointwise_and_matches_k1_segse() {
        let mut rng = ChaCha8Rng::seed_from_u64(85);
        let mut store = ParamStore::<f64>::new();
        let v1 = SpatialExcitation::variant1(&mut store, "v1", 10, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let k1 = SpatialExcitation::new(&mut store, "k1", 10, 5, 1, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let x = Tensor::<f64>::uniform(&[1, 10, 6, 6], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let a = v1.excite(&mut tape, &mut store, xv, Mode::Eval).unwrap();
        let b = k1.excite(&mut tape, &mut store, xv, Mode::Eval).unwrap();
        assert_eq!(tape.value(a), tape.value(b));

        let mut moved = x.clone();
        moved.data_mut()[2 * 6 + 3] += 5.0; // channel 0, pixel (2, 3)
        let mv = tape.constant(moved);
        let c = v1.excite(&mut tape, &mut store, mv, Mode::Eval).unwrap();
        for ch in 0..10 {
            for p in 0..36 {
                let i = ch * 36 + p;
                let changed = tape.value(a).data()[i] != tape.value(c).data()[i];
                assert_eq!(changed, p == 2 * 6 + 3, "channel {ch} pixel {p}");
            }
        }
    }

    #[test]
    fn variant2_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(86);
        let mut store = ParamStore::<f32>::new();
        let p4 = PooledExcitation::new(&mut store, "p4", 8, 4, 4, &mut rng).unwrap();
        let p2 = PooledExcitation::new(&mut store, "p2", 8, 4, 2, &mut rng).unwrap();
        assert_eq!((p4.stages(), p2.stages()), (2, 1));
        assert!(PooledExcitation::new(&mut store, "p3", 8, 4, 3, &mut rng).is_err());
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::uniform(&[2, 8, 16, 16], -1.0, 1.0, &mut rng));
        let s = p4.excite(&mut tape, &mut store, x, Mode::Train).unwrap();
        assert_eq!(tape.shape(s), &[2, 8, 16, 16]);
        assert!(tape.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
        let bad = tape.constant(Tensor::zeros(&[2, 8, 6, 6]));
        assert!(matches!(
            p4.excite(&mut tape, &mut store, bad, Mode::Train),
            Err(Error::Indivisible { .. })
        ));
    }

    #[test]
    fn segse_recalibration_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(87);
        let x = Tensor::<f64>::uniform(&[1, 2, 3, 3], -1.0, 1.0, &mut rng);
        let mask = Tensor::<f64>::from_fn(&[1, 2, 3, 3], |i| (i % 3 == 0) as u8 as f64);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let ones = tape.constant(Tensor::ones(&[1, 2, 3, 3]));
        let y = segse_recalibrate(&mut tape, xv, ones).unwrap();
        assert_eq!(tape.value(y), &x);
        let mv = tape.constant(mask.clone());
        let y = segse_recalibrate(&mut tape, xv, mv).unwrap();
        for i in 0..18 {
            assert_eq!(tape.value(y).data()[i], x.data()[i] * mask.data()[i]);
        }
        let wrong = tape.constant(Tensor::ones(&[1, 2, 1, 1]));
        assert!(segse_recalibrate(&mut tape, xv, wrong).is_err());

        let s = Tensor::<f64>::uniform(&[1, 2, 3, 3], 0.1, 0.9, &mut rng);
        let mut store = ParamStore::new();
        let probe = Tensor::<f64>::uniform(&[1, 2, 3, 3], -1.0, 1.0, &mut rng);
        let err = check_module_gradients(
            |t, _, v| {
                let u = segse_recalibrate(t, v[0], v[1])?;
                let p = t.constant(probe.clone());
                let u = t.mul(u, p)?;
                Ok(t.sum(u))
            },
            &mut store,
            &[x, s],
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn rr_block_shapes_for_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let mut store = ParamStore::<f32>::new();
        let x = Tensor::<f32>::uniform(&[2, 16, 24, 24], -1.0, 1.0, &mut rng);
        for kind in BlockKind::ALL {
            let cfg = BlockConfig::new(kind).with_placement(3, 4);
            let block = RrBlock::new(&mut store, kind.as_str(), 16, cfg, &mut rng).unwrap();
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let mut ctx = ForwardCtx::new(Mode::Train, ChaCha8Rng::seed_from_u64(1));
            let y = block.forward(&mut tape, &mut store, xv, &mut ctx).unwrap();
            assert_eq!(tape.shape(y), &[2, 16, 24, 24], "{kind}");
            if kind == BlockKind::None {
                assert_eq!(tape.value(y), &x);
            }
        }
    }

    #[test]
    fn rr_segse_scale_one_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        let mut store = ParamStore::<f32>::new();
        let cfg = BlockConfig::new(BlockKind::RrSegSe).with_placement(3, 4);
        let block = RrBlock::new(&mut store, "rr1", 16, cfg, &mut rng).unwrap();
        let Some(Excitation::Spatial(seg)) = &block.excitation else {
            panic!("expected a spatial excitation");
        };
        assert_eq!(block.recombination.as_ref().unwrap().expand.spec.out_channels, 64);
        assert_eq!(seg.squeeze.spec.out_channels, 6);
        assert_eq!(seg.squeeze.spec.dilation, 3);
        assert_eq!(seg.squeeze.spec.kernel, 3);
    }
}
