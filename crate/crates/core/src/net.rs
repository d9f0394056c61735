//! Encoder-decoder segmentation network with additive skips and one RR block
//! per decoder scale.
//!
//! Scale `s` (1-based) runs at resolution `H / 2^(s-1)` with
//! `round(base_width * width_scale * width_multiplier^(s-1))` channels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::blocks::{BlockConfig, BlockKind, RrBlock};
use crate::layers::{spatial_dropout, BatchNorm, Conv2d, ConvSpec, ForwardCtx, NORMALIZED_INIT_GAIN};
use crate::params::ParamStore;
use crate::{Error, Mode, Result, Scalar, Tape, Tensor, Var};

/// Spatial dropout rate applied after every RR block.
pub const DEFAULT_DROPOUT: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_width: usize,
    pub width_multiplier: usize,
    pub scales: usize,
    /// Block kind, `m` and `r`. Dilation and pooling come from the per-scale lists.
    pub block: BlockConfig,
    pub per_scale_d: Vec<usize>,
    pub per_scale_p: Vec<usize>,
    pub width_scale: f64,
    pub dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            num_classes: 4,
            base_width: 8,
            width_multiplier: 2,
            scales: 3,
            block: BlockConfig::new(BlockKind::RrSegSe),
            per_scale_d: vec![3, 2, 1],
            per_scale_p: vec![4, 2, 2],
            width_scale: 1.0,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

impl NetworkConfig {
    pub fn with_kind(mut self, kind: BlockKind) -> Self {
        self.block.kind = kind;
        self
    }

    /// Channel count at 1-based scale `s`.
    pub fn width(&self, s: usize) -> usize {
        let growth = self.width_multiplier.pow(s as u32 - 1) as f64;
        let raw = self.base_width as f64 * self.width_scale * growth;
        (num_traits::Float::round(raw) as usize).max(1)
    }

    /// Block configuration for 1-based scale `s`.
    pub fn block_at(&self, s: usize) -> BlockConfig {
        self.block.with_placement(self.per_scale_d[s - 1], self.per_scale_p[s - 1])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.in_channels == 0 || self.base_width == 0 || self.scales == 0 || self.width_multiplier == 0 {
            return bad("in_channels, base_width, scales and width_multiplier must be positive");
        }
        if self.per_scale_d.len() != self.scales || self.per_scale_p.len() != self.scales {
            return Err(Error::Config(format!(
                "per-scale lists need {} entries, got d={:?} p={:?}",
                self.scales, self.per_scale_d, self.per_scale_p
            )));
        }
        if !(self.width_scale.is_finite() && self.width_scale > 0.0) {
            return bad("width_scale must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidRate(self.dropout));
        }
        for s in 1..=self.scales {
            self.block_at(s).validate(self.width(s))?;
        }
        Ok(())
    }

    /// Checks that an `h x w` input survives every pooling step (and every
    /// Variant 2 pooling window), naming the first scale that fails.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        for s in 1..=self.scales {
            let shift = s - 1;
            for size in [h, w] {
                let here = size >> shift;
                if s < self.scales && here % 2 != 0 {
                    return Err(Error::Divisibility { scale: s, size: here, factor: 2 });
                }
                let p = self.per_scale_p[s - 1];
                if self.block.kind == BlockKind::RrVar2 && here % p != 0 {
                    return Err(Error::Divisibility { scale: s, size: here, factor: p });
                }
                if here == 0 {
                    return Err(Error::Divisibility { scale: s, size: 0, factor: 2 });
                }
            }
        }
        Ok(())
    }
}

/// Convolution, batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub norm: BatchNorm,
}

impl ConvBnRelu {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::with_gain(
                store,
                &format!("{name}.conv"),
                in_ch,
                ConvSpec::same(3, 1, out_ch),
                NORMALIZED_INIT_GAIN,
                rng,
            )?,
            norm: BatchNorm::new(store, &format!("{name}.bn"), out_ch),
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv.forward(tape, store, x)?;
        let y = self.norm.forward(tape, store, y, mode)?;
        Ok(tape.relu(y))
    }

    fn param_count(&self) -> usize {
        self.conv.param_count() + self.norm.param_count()
    }
}

/// Two conv-BN-ReLU stages.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub first: ConvBnRelu,
    pub second: ConvBnRelu,
}

impl DoubleConv {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            first: ConvBnRelu::new(store, &format!("{name}.0"), in_ch, out_ch, rng)?,
            second: ConvBnRelu::new(store, &format!("{name}.1"), out_ch, out_ch, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let y = self.first.forward(tape, store, x, mode)?;
        self.second.forward(tape, store, y, mode)
    }

    fn param_count(&self) -> usize {
        self.first.param_count() + self.second.param_count()
    }
}

/// Upsample, 1x1 adapter, skip addition, two conv stages.
#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub adapter: Conv2d,
    pub convs: DoubleConv,
}

/// Weight with which each head input channel votes for its class.
///
/// Adam moves every weight by roughly `lr` per step, so at small learning
/// rates the head keeps its initial layout for the whole run. A random head
/// can leave a class with no channel that favours it, and that class then
/// collapses onto the all-zero ReLU code. The head therefore starts
/// balanced: channel `k` votes `+HEAD_VOTE` for class `k mod classes` and
/// `-HEAD_VOTE / (classes - 1)` for every other class.
pub const HEAD_VOTE: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    /// Index `s - 1` holds scale `s`.
    pub encoder: Vec<DoubleConv>,
    /// Index `s - 1` holds scale `s`, for `s < scales`.
    pub decoder: Vec<DecoderStage>,
    /// Index `s - 1` holds block `rr{s}`.
    pub blocks: Vec<RrBlock>,
    pub head: Conv2d,
}

impl Network {
    /// Builds the module graph and registers its parameters in `store`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(config: NetworkConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let scales = config.scales;
        let mut encoder = Vec::with_capacity(scales);
        let mut in_ch = config.in_channels;
        for s in 1..=scales {
            encoder.push(DoubleConv::new(store, &format!("enc{s}"), in_ch, config.width(s), rng)?);
            in_ch = config.width(s);
        }
        let mut decoder = Vec::with_capacity(scales - 1);
        for s in 1..scales {
            let (w, below) = (config.width(s), config.width(s + 1));
            decoder.push(DecoderStage {
                adapter: Conv2d::new(store, &format!("dec{s}.adapter"), below, ConvSpec::pointwise(w), rng)?,
                convs: DoubleConv::new(store, &format!("dec{s}"), w, w, rng)?,
            });
        }
        let mut blocks = Vec::with_capacity(scales);
        for s in 1..=scales {
            blocks.push(RrBlock::new(store, &format!("rr{s}"), config.width(s), config.block_at(s), rng)?);
        }
        let head = Conv2d::new(store, "head", config.width(1), ConvSpec::pointwise(config.num_classes), rng)?;
        let (classes, width) = (config.num_classes, config.width(1));
        let (favour, against) = (T::of(HEAD_VOTE), T::of(-HEAD_VOTE / (classes - 1) as f64));
        for (i, w) in store.value_mut(head.weight()).data_mut().iter_mut().enumerate() {
            let (c, k) = (i / width, i % width);
            *w = if k % classes == c { favour } else { against };
        }
        Ok(Self {
            config,
            encoder,
            decoder,
            blocks,
            head,
        })
    }

    /// Builds into a fresh store.
    pub fn build<T: Scalar, R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let net = Self::new(config, &mut store, rng)?;
        Ok((net, store))
    }

    pub fn block_names(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.name.as_str()).collect()
    }

    /// Class probabilities, shape (N, num_classes, H, W).
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                op: "network input",
                expected: self.config.in_channels,
                got: c,
            });
        }
        self.config.check_input(h, w)?;
        let scales = self.config.scales;
        let mode = ctx.mode;
        let mut skips = Vec::with_capacity(scales - 1);
        let mut y = x;
        for (s, stage) in self.encoder.iter().enumerate() {
            y = stage.forward(tape, store, y, mode)?;
            if s + 1 < scales {
                skips.push(y);
                y = tape.max_pool2(y)?;
            }
        }
        y = self.recalibrate(tape, store, y, scales, ctx)?;
        for s in (1..scales).rev() {
            let stage = &self.decoder[s - 1];
            y = tape.upsample_nearest(y, 2)?;
            y = stage.adapter.forward(tape, store, y)?;
            y = tape.add(y, skips[s - 1])?;
            y = stage.convs.forward(tape, store, y, mode)?;
            y = self.recalibrate(tape, store, y, s, ctx)?;
        }
        let logits = self.head.forward(tape, store, y)?;
        tape.softmax_channels(logits)
    }

    fn recalibrate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        s: usize,
        ctx: &mut ForwardCtx<T>,
    ) -> Result<Var> {
        let y = self.blocks[s - 1].forward(tape, store, x, ctx)?;
        spatial_dropout(tape, y, self.config.dropout, ctx.mode, &mut ctx.rng)
    }

    /// Inference-mode probabilities for a batch of images.
    pub fn predict<T: Scalar>(&self, store: &mut ParamStore<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let probs = self.forward(&mut tape, store, x, &mut ForwardCtx::eval())?;
        Ok(tape.value(probs).clone())
    }

    /// Trainable scalar count of the whole network.
    pub fn parameter_count(&self) -> usize {
        self.encoder.iter().map(DoubleConv::param_count).sum::<usize>()
            + self
                .decoder
                .iter()
                .map(|d| d.adapter.param_count() + d.convs.param_count())
                .sum::<usize>()
            + self.blocks.iter().map(RrBlock::param_count).sum::<usize>()
            + self.head.param_count()
    }
}

/// Per-voxel argmax over the class axis, shape (N, H, W) flattened.
pub fn argmax_labels<T: Scalar>(probs: &Tensor<T>) -> Result<Vec<u8>> {
    let (n, c, h, w) = probs.dims4()?;
    let hw = h * w;
    let d = probs.data();
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for ch in 1..c {
                if d[(b * c + ch) * hw + p] > d[(b * c + best) * hw + p] {
                    best = ch;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}

/// Trainable parameter count of the network `config` describes.
pub fn count_parameters(config: &NetworkConfig) -> Result<usize> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let (net, _) = Network::build::<f32, _>(config.clone(), &mut rng)?;
    Ok(net.parameter_count())
}

/// Smallest-error `width_scale` (scanned in steps of 0.01 up to 4.0) for
/// which `config` has about `target` trainable parameters. Returns the
/// scale and the resulting count.
pub fn match_width_scale(config: &NetworkConfig, target: usize) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    let mut cfg = config.clone();
    for step in 25..=400 {
        cfg.width_scale = step as f64 / 100.0;
        if cfg.validate().is_err() {
            continue;
        }
        let count = count_parameters(&cfg)?;
        let better = best.is_none_or(|(_, c)| count.abs_diff(target) < c.abs_diff(target));
        if better {
            best = Some((cfg.width_scale, count));
        }
        if count > target && count.abs_diff(target) > target / 2 {
            break;
        }
    }
    best.ok_or_else(|| Error::Config("no valid width_scale".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn output_shape_and_simplex() {
        let (net, mut store) = Network::build::<f32, _>(NetworkConfig::default(), &mut rng(1)).unwrap();
        let x = Tensor::uniform(&[1, 2, 64, 64], -1.0, 1.0, &mut rng(2));
        let p = net.predict(&mut store, &x).unwrap();
        assert_eq!(p.shape(), &[1, 4, 64, 64]);
        for v in 0..4096 {
            let s: f32 = (0..4).map(|c| p.data()[c * 4096 + v]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let again = net.predict(&mut store, &x).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn fresh_network_is_not_collapsed() {
        let (net, mut store) = Network::build::<f32, _>(NetworkConfig::default(), &mut rng(3)).unwrap();
        let x = Tensor::uniform(&[2, 2, 32, 32], -1.0, 1.0, &mut rng(4));
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let mut ctx = ForwardCtx::new(Mode::Train, rng(5));
        let p = net.forward(&mut tape, &mut store, xv, &mut ctx).unwrap();
        let pd = tape.value(p).data();
        for c in 0..4 {
            let mean: f32 = (0..2)
                .flat_map(|n| pd[(n * 4 + c) * 1024..(n * 4 + c + 1) * 1024].iter())
                .sum::<f32>()
                / 2048.0;
            assert!((0.15..=0.35).contains(&mean), "class {c}: {mean}");
        }
    }

    #[test]
    fn every_kind_keeps_shapes() {
        for kind in BlockKind::ALL {
            let cfg = NetworkConfig::default().with_kind(kind);
            let (net, mut store) = Network::build::<f32, _>(cfg, &mut rng(6)).unwrap();
            let x = Tensor::uniform(&[2, 2, 16, 16], -1.0, 1.0, &mut rng(7));
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let mut ctx = ForwardCtx::new(Mode::Train, rng(8));
            let p = net.forward(&mut tape, &mut store, xv, &mut ctx).unwrap();
            assert_eq!(tape.shape(p), &[2, 4, 16, 16], "{kind}");
        }
    }

    #[test]
    fn divisibility_names_the_scale() {
        let (net, mut store) = Network::build::<f32, _>(NetworkConfig::default(), &mut rng(9)).unwrap();
        let err = net.predict(&mut store, &Tensor::zeros(&[1, 2, 18, 16])).unwrap_err();
        assert_eq!(err, Error::Divisibility { scale: 2, size: 9, factor: 2 });
        let cfg = NetworkConfig::default().with_kind(BlockKind::RrVar2);
        // 8 -> 4 -> 2 is fine for pooling, but scale 1 needs p = 4 | 8 and scale 3 needs 2 | 2
        assert!(cfg.check_input(8, 8).is_ok());
        assert_eq!(
            cfg.check_input(12, 12).unwrap_err(),
            Error::Divisibility { scale: 3, size: 3, factor: 2 }
        );
        assert_eq!(
            cfg.check_input(4, 4).unwrap_err(),
            Error::Divisibility { scale: 3, size: 1, factor: 2 }
        );
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = NetworkConfig::default();
        cfg.num_classes = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = NetworkConfig::default();
        cfg.per_scale_d = vec![3, 2];
        assert!(cfg.validate().is_err());
        // m * C' = 4 * 2 = 8 < r = 10 leaves an empty bottleneck
        let mut cfg = NetworkConfig::default();
        cfg.base_width = 2;
        assert!(cfg.validate().is_err());
        assert!(cfg.clone().with_kind(BlockKind::RecombOnly).validate().is_ok());
    }

    #[test]
    fn parameter_names_are_stable() {
        let (_, a) = Network::build::<f32, _>(NetworkConfig::default(), &mut rng(10)).unwrap();
        let (_, b) = Network::build::<f32, _>(NetworkConfig::default(), &mut rng(11)).unwrap();
        let names = |s: &ParamStore<f32>| s.ids().map(|id| s.name(id).to_string()).collect::<Vec<_>>();
        assert_eq!(names(&a), names(&b));
        assert!(a.find("rr1.excite.squeeze.weight").is_some());
    }

    #[test]
    fn registry_matches_count() {
        for kind in BlockKind::ALL {
            let (net, store) = Network::build::<f32, _>(NetworkConfig::default().with_kind(kind), &mut rng(12)).unwrap();
            assert_eq!(net.parameter_count(), store.trainable_count(), "{kind}");
        }
    }

    /// Hand enumeration of every layer, independent of the module code.
    fn spreadsheet(kind: BlockKind) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let bn = |c: usize| 2 * c;
        let cbr = |cin, cout| conv(cin, cout, 3) + bn(cout);
        let widths = [8, 16, 32];
        let ps = [4, 2, 2];
        let mut total = 0;
        let mut cin = 2;
        for &w in &widths {
            total += cbr(cin, w) + cbr(w, w);
            cin = w;
        }
        for s in 0..2 {
            total += conv(widths[s + 1], widths[s], 1) + 2 * cbr(widths[s], widths[s]);
        }
        total += conv(8, 4, 1);
        for s in 0..3 {
            let c = widths[s];
            let wide = 4 * c;
            let n = wide / 10;
            let recomb = conv(c, wide, 1) + conv(wide, c, 1);
            total += match kind {
                BlockKind::None => 0,
                BlockKind::RecombOnly => recomb,
                BlockKind::RrSe => recomb + conv(wide, n, 1) + conv(n, wide, 1),
                BlockKind::RrSegSe => recomb + conv(wide, n, 3) + bn(n) + conv(n, wide, 1),
                BlockKind::RrVar1 => recomb + conv(wide, n, 1) + bn(n) + conv(n, wide, 1),
                BlockKind::RrVar2 => {
                    recomb + conv(wide, n, 1) + bn(n) + (ps[s] / 2) * (conv(n, n, 3) + bn(n)) + conv(n, wide, 1)
                }
            };
        }
        total
    }

    #[test]
    fn counts_match_spreadsheet() {
        for kind in BlockKind::ALL {
            let cfg = NetworkConfig::default().with_kind(kind);
            assert_eq!(count_parameters(&cfg).unwrap(), spreadsheet(kind), "{kind}");
        }
        // the two configurations differ only by the RR blocks
        let delta = spreadsheet(BlockKind::RrSegSe) - spreadsheet(BlockKind::None);
        let none = count_parameters(&NetworkConfig::default().with_kind(BlockKind::None)).unwrap();
        let rr = count_parameters(&NetworkConfig::default()).unwrap();
        assert_eq!(rr - none, delta);
    }

    #[test]
    fn wide_baseline_matches_within_two_percent() {
        let target = count_parameters(&NetworkConfig::default()).unwrap();
        let base = NetworkConfig::default().with_kind(BlockKind::None);
        let (scale, count) = match_width_scale(&base, target).unwrap();
        assert!(scale > 1.0);
        let rel = count.abs_diff(target) as f64 / target as f64;
        assert!(rel < 0.02, "scale {scale}: {count} vs {target}");
    }

    #[test]
    fn tiny_network_gradients() {
        let o = crate::gradsuite::run_unit(crate::gradsuite::Scope::Network, "tiny_network", false).unwrap();
        let bad: Vec<_> = o.report.entries.iter().filter(|e| !(e.error < 1e-4)).collect();
        assert!(bad.is_empty(), "{bad:?}");
        assert!(o.report.kinked_fraction() < 0.05, "{}", o.report.kinked_fraction());
    }
}
