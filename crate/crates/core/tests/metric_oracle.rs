//! Overlap and surface-distance metrics against brute-force definitions on
//! random mask pairs up to 32x32. Equality is exact.
//!
//! Included by the acceptance harness; [`run_pairs`] is the entry point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segse_core::metrics::{ClassMetrics, Mask, Score};

pub const PAIRS: u64 = 200;

/// Masks of several textures: empty, full, noise of random density, or a
/// union of random rectangles.
fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    let data = match rng.random_range(0..10) {
        0 => vec![false; h * w],
        1 => vec![true; h * w],
        2..=5 => {
            let density = rng.random_range(0.0..1.0);
            (0..h * w).map(|_| rng.random_bool(density)).collect()
        }
        _ => {
            let mut d = vec![false; h * w];
            for _ in 0..rng.random_range(1..4) {
                let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
                let (y1, x1) = (rng.random_range(y0..h) + 1, rng.random_range(x0..w) + 1);
                for y in y0..y1 {
                    d[y * w + x0..y * w + x1].fill(true);
                }
            }
            d
        }
    };
    Mask::new(h, w, data).unwrap()
}

fn on(m: &Mask, y: i64, x: i64) -> bool {
    y >= 0 && x >= 0 && y < m.height as i64 && x < m.width as i64 && m.data[y as usize * m.width + x as usize]
}

/// Foreground pixels with a background (or off-grid) 4-neighbour.
fn border(m: &Mask) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for y in 0..m.height as i64 {
        for x in 0..m.width as i64 {
            if on(m, y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| !on(m, y + dy, x + dx)) {
                out.push((y, x));
            }
        }
    }
    out
}

/// Every distance from one border to the nearest point of the other, both
/// directions, by exhaustive search.
fn pooled_distances(a: &Mask, b: &Mask) -> Option<Vec<f64>> {
    let (ba, bb) = (border(a), border(b));
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let nearest = |p: &(i64, i64), set: &[(i64, i64)]| {
        let d2 = set.iter().map(|q| (p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)).min().unwrap();
        (d2 as f64).sqrt()
    };
    let mut d: Vec<f64> = ba.iter().map(|p| nearest(p, &bb)).chain(bb.iter().map(|p| nearest(p, &ba))).collect();
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Some(d)
}

struct Expected {
    dice: Option<f64>,
    ppv: Option<f64>,
    sensitivity: Option<f64>,
    hd95: Option<f64>,
    assd: Option<f64>,
}

fn expected(a: &Mask, b: &Mask) -> Expected {
    let (mut tp, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&p, &r) in a.data.iter().zip(&b.data) {
        tp += (p && r) as usize;
        na += p as usize;
        nb += r as usize;
    }
    let ratio = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    let dice = if na + nb == 0 { Some(1.0) } else { Some(2.0 * tp as f64 / (na + nb) as f64) };
    let distances = pooled_distances(a, b);
    // 95th percentile: linear interpolation at rank 0.95 (n - 1)
    let hd95 = distances.as_ref().map(|d| {
        let rank = 0.95 * (d.len() - 1) as f64;
        let i = rank.floor() as usize;
        let j = (i + 1).min(d.len() - 1);
        d[i] + (rank - i as f64) * (d[j] - d[i])
    });
    let assd = distances.as_ref().map(|d| d.iter().sum::<f64>() / d.len() as f64);
    Expected {
        dice,
        ppv: ratio(tp, na),
        sensitivity: ratio(tp, nb),
        hd95,
        assd,
    }
}

/// Compares pair `index`; `Err` describes the first mismatch.
pub fn check_pair(index: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(index);
    let (h, w) = (rng.random_range(1..=32), rng.random_range(1..=32));
    let (a, b) = (random_mask(&mut rng, h, w), random_mask(&mut rng, h, w));
    let got = ClassMetrics::compute(&a, &b).map_err(|e| e.to_string())?;
    let want = expected(&a, &b);
    let rows: [(&str, Score, Option<f64>); 5] = [
        ("dice", got.dice, want.dice),
        ("ppv", got.ppv, want.ppv),
        ("sensitivity", got.sensitivity, want.sensitivity),
        ("hd95", got.hd95, want.hd95),
        ("assd", got.assd, want.assd),
    ];
    for (name, score, expect) in rows {
        if score.value() != expect {
            return Err(format!("pair {index} ({h}x{w}): {name} = {score:?}, brute force {expect:?}"));
        }
    }
    Ok(())
}

pub fn run_pairs(pairs: u64) -> Result<(), String> {
    (0..pairs).try_for_each(check_pair)
}

#[test]
fn metrics_equal_brute_force() {
    run_pairs(PAIRS).unwrap();
}
