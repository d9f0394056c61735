//! Randomized shape and range properties of the RR blocks, plus the fixed
//! witness for spatially varying SegSE excitation.
//!
//! The acceptance harness includes this file, so the entry points are plain
//! functions and the `#[test]`s only wrap them.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segse_core::blocks::{BlockConfig, BlockKind, RrBlock};
use segse_core::gradsuite::randomize_weights;
use segse_core::layers::ForwardCtx;
use segse_core::params::ParamStore;
use segse_core::{Mode, Tape, Tensor};

/// Property cases run by the test and by the acceptance harness.
pub const CASES: u32 = 500;
pub const SOFTMAX_TOLERANCE: f64 = 1e-6;
/// Per-channel variance of S over (h, w) the witness must exceed.
pub const ADAPTIVITY_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct Case {
    kind: BlockKind,
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    dilation: usize,
    pool: usize,
    seed: u64,
    unit_gain: bool,
    train: bool,
    logit_scale: f64,
}

fn case() -> impl Strategy<Value = Case> {
    (
        (0..BlockKind::ALL.len(), 1..=3usize, 3..=12usize, 2..=16usize, 2..=16usize),
        (1..=3usize, prop_oneof![Just(2usize), Just(4)], any::<u64>(), any::<bool>(), any::<bool>(), 0.1..50.0f64),
    )
        .prop_map(|((k, batch, channels, h, w), (dilation, pool, seed, unit_gain, train, logit_scale))| {
            let kind = BlockKind::ALL[k];
            // Variant 2 pools by p and upsamples back, so it needs multiples of p
            let fit = |s: usize| if kind == BlockKind::RrVar2 { (s / pool).max(1) * pool } else { s };
            Case {
                kind,
                batch,
                channels,
                height: fit(h),
                width: fit(w),
                dilation,
                pool,
                seed,
                unit_gain,
                // training-mode batch norm needs more than one sample
                train: train && batch > 1,
                logit_scale,
            }
        })
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if ok {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

/// Checks one case: shape, excitation range, SE constancy, softmax sums.
pub fn check_case(c: &Case) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut store = ParamStore::<f64>::new();
    let config = BlockConfig::new(c.kind).with_placement(c.dilation, c.pool);
    let block = RrBlock::new(&mut store, "rr", c.channels, config, &mut rng).map_err(|e| TestCaseError::fail(e.to_string()))?;
    if c.unit_gain {
        randomize_weights(&mut store, c.seed ^ 1);
    }
    let shape = [c.batch, c.channels, c.height, c.width];
    let x = Tensor::<f64>::uniform(&shape, -2.0, 2.0, &mut rng);
    let mode = if c.train { Mode::Train } else { Mode::Eval };
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mut ctx = ForwardCtx::new(mode, ChaCha8Rng::seed_from_u64(c.seed)).capturing();
    let y = block.forward(&mut tape, &mut store, xv, &mut ctx).map_err(|e| TestCaseError::fail(e.to_string()))?;
    ensure(tape.shape(y) == shape, || format!("output shape {:?} for input {shape:?}", tape.shape(y)))?;
    if c.kind == BlockKind::None {
        ensure(tape.value(y) == &x, || "kind none is not the identity".into())?;
    }
    ensure(ctx.probes.len() == usize::from(c.kind.recalibrates()), || format!("{} probes", ctx.probes.len()))?;
    if let Some(p) = ctx.probes.first() {
        let s = p.excitation.data();
        if let Some(v) = s.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(TestCaseError::fail(format!("excitation value {v} outside (0, 1)")));
        }
        if c.kind == BlockKind::RrSe {
            let plane = c.height * c.width;
            for (pre, post) in p.pre.data().chunks(plane).zip(p.post.data().chunks(plane)) {
                let ratios: Vec<f64> = pre.iter().zip(post).filter(|(x, _)| **x != 0.0).map(|(x, u)| u / x).collect();
                if let Some(&first) = ratios.first() {
                    let spread = ratios.iter().map(|r| (r - first).abs()).fold(0.0, f64::max);
                    ensure(spread <= 4.0 * f64::EPSILON * first, || format!("SE ratio varies by {spread} over a channel"))?;
                }
            }
        }
    }
    // the block output read as logits, in the f32 precision of training
    let logits: Vec<f32> = tape.value(y).data().iter().map(|&v| (v * c.logit_scale) as f32).collect();
    let mut t32 = Tape::<f32>::new();
    let lv = t32.constant(Tensor::new(&shape, logits).unwrap());
    let probs = t32.softmax_channels(lv).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let p = t32.value(probs).data();
    let plane = c.height * c.width;
    for n in 0..c.batch {
        for i in 0..plane {
            let column = (0..c.channels).map(|k| p[(n * c.channels + k) * plane + i] as f64);
            let (mut sum, mut low) = (0.0, f64::INFINITY);
            for v in column {
                sum += v;
                low = low.min(v);
            }
            ensure(low >= 0.0 && (sum - 1.0).abs() <= SOFTMAX_TOLERANCE, || format!("softmax column sums to {sum}, min {low}"))?;
        }
    }
    Ok(())
}

/// Runs [`CASES`]-style randomized cases with a fixed generator.
pub fn run_properties(cases: u32) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&case(), |c| check_case(&c)).map_err(|e| e.to_string())
}

/// Largest per-channel population variance of S over (h, w) for an
/// rr_segse block fed a single bright pixel.
pub fn segse_witness_variance() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut store = ParamStore::<f64>::new();
    let config = BlockConfig::new(BlockKind::RrSegSe).with_placement(2, 2);
    let block = RrBlock::new(&mut store, "rr", 8, config, &mut rng).unwrap();
    randomize_weights(&mut store, 2025);
    let (h, w) = (16, 16);
    let mut x = Tensor::<f64>::zeros(&[1, 8, h, w]);
    for c in 0..8 {
        x.data_mut()[c * h * w + 5 * w + 9] = 3.0;
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let mut ctx = ForwardCtx::eval().capturing();
    block.forward(&mut tape, &mut store, xv, &mut ctx).unwrap();
    let s = ctx.probes[0].excitation.data();
    s.chunks(h * w)
        .map(|plane| {
            let mean = plane.iter().sum::<f64>() / plane.len() as f64;
            plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane.len() as f64
        })
        .fold(0.0, f64::max)
}

#[test]
fn randomized_block_properties() {
    run_properties(CASES).unwrap();
}

#[test]
fn segse_excitation_varies_in_space() {
    let v = segse_witness_variance();
    assert!(v > ADAPTIVITY_THRESHOLD, "largest per-channel variance {v}");
}
