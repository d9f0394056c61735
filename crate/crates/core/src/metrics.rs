//! Overlap and surface-distance metrics on 2D binary masks.
//!
//! Surface distances use an exact Euclidean distance transform, so every
//! distance is `sqrt` of an integer squared distance times the spacing.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::{Error, Result};

/// Binary mask on an `height x width` grid with isotropic pixel spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
    pub spacing: f64,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DataLength {
                shape: vec![height, width],
                len: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
            spacing: 1.0,
        })
    }

    pub fn with_spacing(mut self, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Config(alloc::format!("spacing must be positive, got {spacing}")));
        }
        self.spacing = spacing;
        Ok(self)
    }

    /// Pixels of `labels` equal to `class`.
    pub fn from_labels(labels: &[u8], height: usize, width: usize, class: u8) -> Result<Self> {
        Self::new(height, width, labels.iter().map(|&l| l == class).collect())
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    fn get(&self, y: isize, x: isize) -> bool {
        y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width && self.data[y as usize * self.width + x as usize]
    }

    fn check_same(&self, other: &Mask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape("metric", &[self.height, self.width], &[other.height, other.width]));
        }
        Ok(())
    }
}

/// A metric value with its definedness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Score {
    Value(f64),
    /// Defined by convention because both masks are empty.
    Vacuous(f64),
    Undefined,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) | Score::Vacuous(v) => Some(v),
            Score::Undefined => None,
        }
    }

    pub fn is_vacuous(self) -> bool {
        matches!(self, Score::Vacuous(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn confusion(pred: &Mask, reference: &Mask) -> Result<Confusion> {
    pred.check_same(reference)?;
    let mut c = Confusion { tp: 0, fp: 0, fn_: 0 };
    for (&p, &r) in pred.data.iter().zip(&reference.data) {
        match (p, r) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// `2|A∩B| / (|A| + |B|)`; both empty gives a vacuous 1.
pub fn dice(pred: &Mask, reference: &Mask) -> Result<Score> {
    let c = confusion(pred, reference)?;
    let denom = 2 * c.tp + c.fp + c.fn_;
    Ok(if denom == 0 {
        Score::Vacuous(1.0)
    } else {
        Score::Value(2.0 * c.tp as f64 / denom as f64)
    })
}

/// (PPV, sensitivity); an empty denominator makes that entry undefined.
pub fn ppv_sensitivity(pred: &Mask, reference: &Mask) -> Result<(Score, Score)> {
    let c = confusion(pred, reference)?;
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            Score::Undefined
        } else {
            Score::Value(num as f64 / den as f64)
        }
    };
    Ok((ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_)))
}

/// Foreground pixels with at least one background 4-neighbour; outside the
/// grid counts as background. Row-major order.
pub fn surface(mask: &Mask) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            let (yi, xi) = (y as isize, x as isize);
            if mask.get(yi, xi)
                && !(mask.get(yi - 1, xi) && mask.get(yi + 1, xi) && mask.get(yi, xi - 1) && mask.get(yi, xi + 1))
            {
                out.push((y, x));
            }
        }
    }
    out
}

/// Squared distance transform of a 1D sampled function (lower envelope of
/// parabolas). `f[i]` is `INF` where there is no site.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let mut first = None;
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(start) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = start;
    for q in start + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                // k > 0 here: z[0] is -inf
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in pixels) from every pixel to the
/// nearest of `sites`; infinite when `sites` is empty.
pub fn squared_distance_transform(height: usize, width: usize, sites: &[(usize, usize)]) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; height * width];
    for &(y, x) in sites {
        grid[y * width + x] = 0.0;
    }
    let n = height.max(width);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    let mut col = vec![0.0; height];
    let mut out = vec![0.0; n];
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        edt_1d(&col, &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    let mut row = vec![0.0; width];
    for y in 0..height {
        row.copy_from_slice(&grid[y * width..(y + 1) * width]);
        edt_1d(&row, &mut out[..width], &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&out[..width]);
    }
    grid
}

/// Pooled directed surface distances `{d(a, ∂B)} ∪ {d(b, ∂A)}`, sorted
/// ascending. `None` when either surface is empty.
pub fn surface_distances(pred: &Mask, reference: &Mask) -> Result<Option<Vec<f64>>> {
    pred.check_same(reference)?;
    let (sa, sb) = (surface(pred), surface(reference));
    if sa.is_empty() || sb.is_empty() {
        return Ok(None);
    }
    let (h, w) = (pred.height, pred.width);
    let to_b = squared_distance_transform(h, w, &sb);
    let to_a = squared_distance_transform(h, w, &sa);
    let mut d: Vec<f64> = sa
        .iter()
        .map(|&(y, x)| to_b[y * w + x])
        .chain(sb.iter().map(|&(y, x)| to_a[y * w + x]))
        .map(|d2| Float::sqrt(d2) * pred.spacing)
        .collect();
    d.sort_by(f64::total_cmp);
    Ok(Some(d))
}

/// Percentile `q` in [0, 100] of sorted data with linear interpolation
/// between order statistics at rank `q/100 · (n-1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = Float::floor(rank) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Mean of sorted data, summed in ascending order.
pub fn mean_sorted(sorted: &[f64]) -> f64 {
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

pub fn hd95(pred: &Mask, reference: &Mask) -> Result<Score> {
    Ok(match surface_distances(pred, reference)? {
        Some(d) => Score::Value(percentile_sorted(&d, 95.0)),
        None => Score::Undefined,
    })
}

pub fn assd(pred: &Mask, reference: &Mask) -> Result<Score> {
    Ok(match surface_distances(pred, reference)? {
        Some(d) => Score::Value(mean_sorted(&d)),
        None => Score::Undefined,
    })
}

/// All metrics for one (sample, class) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub dice: Score,
    pub ppv: Score,
    pub sensitivity: Score,
    pub hd95: Score,
    pub assd: Score,
}

impl ClassMetrics {
    pub fn compute(pred: &Mask, reference: &Mask) -> Result<Self> {
        let (ppv, sensitivity) = ppv_sensitivity(pred, reference)?;
        let distances = surface_distances(pred, reference)?;
        let (hd95, assd) = match distances {
            Some(d) => (Score::Value(percentile_sorted(&d, 95.0)), Score::Value(mean_sorted(&d))),
            None => (Score::Undefined, Score::Undefined),
        };
        Ok(Self {
            dice: dice(pred, reference)?,
            ppv,
            sensitivity,
            hd95,
            assd,
        })
    }

    pub fn scores(&self) -> [Score; 5] {
        [self.dice, self.ppv, self.sensitivity, self.hd95, self.assd]
    }
}

pub const METRIC_NAMES: [&str; 5] = ["dice", "ppv", "sensitivity", "hd95", "assd"];

/// Per-sample, per-class metrics for foreground classes `1..classes`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub classes: usize,
    /// `samples[i][k]` holds class `k + 1` of sample `i`.
    pub samples: Vec<Vec<ClassMetrics>>,
}

impl MetricsReport {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            samples: Vec::new(),
        }
    }

    /// Adds one sample given its predicted and reference label grids.
    pub fn add_sample(&mut self, pred: &[u8], reference: &[u8], height: usize, width: usize, spacing: f64) -> Result<()> {
        let mut row = Vec::with_capacity(self.classes.saturating_sub(1));
        for class in 1..self.classes {
            let p = Mask::from_labels(pred, height, width, class as u8)?.with_spacing(spacing)?;
            let r = Mask::from_labels(reference, height, width, class as u8)?.with_spacing(spacing)?;
            row.push(ClassMetrics::compute(&p, &r)?);
        }
        self.samples.push(row);
        Ok(())
    }

    /// Mean over samples of metric `m` (index into [`METRIC_NAMES`]) for
    /// foreground class `class`, over defined entries. Vacuous values count
    /// as defined.
    pub fn class_mean(&self, class: usize, m: usize) -> Option<f64> {
        let values: Vec<f64> = self
            .samples
            .iter()
            .filter_map(|row| row[class - 1].scores()[m].value())
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    /// Count of defined entries behind [`MetricsReport::class_mean`].
    pub fn class_defined(&self, class: usize, m: usize) -> usize {
        self.samples
            .iter()
            .filter(|row| row[class - 1].scores()[m].value().is_some())
            .count()
    }

    /// Mean over foreground classes of the per-class means.
    pub fn mean(&self, m: usize) -> Option<f64> {
        let values: Vec<f64> = (1..self.classes).filter_map(|c| self.class_mean(c, m)).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    /// Mean foreground Dice.
    pub fn mean_dice(&self) -> Option<f64> {
        self.mean(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
        let mut data = vec![false; h * w];
        for &(y, x) in on {
            data[y * w + x] = true;
        }
        Mask::new(h, w, data).unwrap()
    }

    fn square(h: usize, w: usize, top: usize, left: usize, size: usize) -> Mask {
        let on: Vec<_> = (top..top + size).flat_map(|y| (left..left + size).map(move |x| (y, x))).collect();
        mask(h, w, &on)
    }

    #[test]
    fn dice_cases() {
        let a = square(8, 8, 1, 1, 3);
        assert_eq!(dice(&a, &a).unwrap(), Score::Value(1.0));
        let b = square(8, 8, 5, 5, 2);
        assert_eq!(dice(&a, &b).unwrap(), Score::Value(0.0));
        let p = mask(4, 4, &[(0, 0), (0, 1), (0, 2), (0, 3)]);
        let q = mask(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(dice(&p, &q).unwrap(), Score::Value(0.5));
        let empty = mask(4, 4, &[]);
        assert_eq!(dice(&empty, &empty).unwrap(), Score::Vacuous(1.0));
        assert!(dice(&empty, &mask(4, 5, &[])).is_err());
    }

    #[test]
    fn ppv_sensitivity_cases() {
        let a = square(8, 8, 1, 1, 3);
        assert_eq!(ppv_sensitivity(&a, &a).unwrap(), (Score::Value(1.0), Score::Value(1.0)));
        let big = square(8, 8, 0, 0, 5);
        let (ppv, sens) = ppv_sensitivity(&big, &a).unwrap();
        assert_eq!(sens, Score::Value(1.0));
        assert!(ppv.value().unwrap() < 1.0);
        let empty = mask(8, 8, &[]);
        assert_eq!(ppv_sensitivity(&empty, &empty).unwrap(), (Score::Undefined, Score::Undefined));
    }

    #[test]
    fn surface_cases() {
        assert_eq!(surface(&mask(5, 5, &[(2, 3)])), vec![(2, 3)]);
        let sq = square(6, 6, 1, 1, 4);
        let s = surface(&sq);
        assert_eq!(s.len(), 12);
        assert!(!s.contains(&(2, 2)) && !s.contains(&(3, 3)));
        assert!(surface(&mask(3, 3, &[])).is_empty());
        // touching the border: the border row is surface
        let full = square(3, 3, 0, 0, 3);
        assert_eq!(surface(&full).len(), 8);
    }

    #[test]
    fn distance_cases() {
        let a = square(10, 10, 2, 2, 4);
        assert_eq!(hd95(&a, &a).unwrap(), Score::Value(0.0));
        assert_eq!(assd(&a, &a).unwrap(), Score::Value(0.0));
        let p = mask(10, 10, &[(4, 2)]);
        let q = mask(10, 10, &[(4, 5)]);
        assert_eq!(hd95(&p, &q).unwrap(), Score::Value(3.0));
        let left: Vec<_> = (0..10).map(|y| (y, 2)).collect();
        let right: Vec<_> = (0..10).map(|y| (y, 5)).collect();
        assert_eq!(assd(&mask(10, 10, &left), &mask(10, 10, &right)).unwrap(), Score::Value(3.0));
        assert_eq!(hd95(&p, &mask(10, 10, &[])).unwrap(), Score::Undefined);
        let scaled = mask(10, 10, &[(4, 2)]).with_spacing(0.5).unwrap();
        let scaled_q = mask(10, 10, &[(4, 5)]).with_spacing(0.5).unwrap();
        assert_eq!(hd95(&scaled, &scaled_q).unwrap(), Score::Value(1.5));
    }

    #[test]
    fn percentile_interpolates() {
        let d: Vec<f64> = (0..21).map(f64::from).collect();
        assert_eq!(percentile_sorted(&d, 95.0), 19.0);
        assert_eq!(percentile_sorted(&[1.0, 3.0], 50.0), 2.0);
        assert_eq!(percentile_sorted(&[4.0], 95.0), 4.0);
    }

    #[test]
    fn translation_never_improves_hd95() {
        // convex reference: a disk
        let disk: Vec<_> = (0..32)
            .flat_map(|y| (0..32).map(move |x| (y, x)))
            .filter(|&(y, x)| {
                let (dy, dx) = (y as f64 - 15.5, x as f64 - 15.5);
                dy * dy + dx * dx <= 36.0
            })
            .collect();
        let reference = mask(32, 32, &disk);
        let base = hd95(&reference, &reference).unwrap().value().unwrap();
        for t in 1..=8 {
            let moved: Vec<_> = disk.iter().map(|&(y, x)| (y, x + t)).collect();
            let v = hd95(&mask(32, 32, &moved), &reference).unwrap().value().unwrap();
            assert!(v >= base);
        }
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
        let density = rng.random_range(0.0..0.6);
        Mask::new(h, w, (0..h * w).map(|_| rng.random_bool(density)).collect()).unwrap()
    }

    fn brute_surface(m: &Mask) -> Vec<(usize, usize)> {
        let at = |y: i64, x: i64| {
            y >= 0 && x >= 0 && y < m.height as i64 && x < m.width as i64 && m.data[y as usize * m.width + x as usize]
        };
        let mut out = Vec::new();
        for y in 0..m.height as i64 {
            for x in 0..m.width as i64 {
                if at(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dy, dx)| !at(y + dy, x + dx)) {
                    out.push((y as usize, x as usize));
                }
            }
        }
        out
    }

    fn brute_distances(a: &Mask, b: &Mask) -> Option<Vec<f64>> {
        let (sa, sb) = (brute_surface(a), brute_surface(b));
        if sa.is_empty() || sb.is_empty() {
            return None;
        }
        let nearest = |p: (usize, usize), set: &[(usize, usize)]| {
            set.iter()
                .map(|&q| {
                    let (dy, dx) = (p.0 as i64 - q.0 as i64, p.1 as i64 - q.1 as i64);
                    dy * dy + dx * dx
                })
                .min()
                .unwrap()
        };
        let mut d: Vec<f64> = sa
            .iter()
            .map(|&p| nearest(p, &sb))
            .chain(sb.iter().map(|&p| nearest(p, &sa)))
            .map(|d2| (d2 as f64).sqrt() * a.spacing)
            .collect();
        d.sort_by(f64::total_cmp);
        Some(d)
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        for _ in 0..50 {
            let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
            let sites: Vec<_> = (0..rng.random_range(1..6))
                .map(|_| (rng.random_range(0..h), rng.random_range(0..w)))
                .collect();
            let got = squared_distance_transform(h, w, &sites);
            for y in 0..h {
                for x in 0..w {
                    let want = sites
                        .iter()
                        .map(|&(sy, sx)| ((y as i64 - sy as i64).pow(2) + (x as i64 - sx as i64).pow(2)) as f64)
                        .fold(f64::INFINITY, f64::min);
                    assert_eq!(got[y * w + x], want);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracles(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, w) = (rng.random_range(1..=32), rng.random_range(1..=32));
            let a = random_mask(&mut rng, h, w);
            let b = random_mask(&mut rng, h, w);
            prop_assert_eq!(surface(&a), brute_surface(&a));
            let d = surface_distances(&a, &b).unwrap();
            prop_assert_eq!(&d, &brute_distances(&a, &b));
            let swapped = surface_distances(&b, &a).unwrap();
            prop_assert_eq!(&d, &swapped);
            let (ppv, sens) = ppv_sensitivity(&a, &b).unwrap();
            if let (Some(p), Some(s), Some(dc)) = (ppv.value(), sens.value(), dice(&a, &b).unwrap().value()) {
                if p + s > 0.0 {
                    prop_assert!((dc - 2.0 * p * s / (p + s)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn report_aggregates() {
        let reference: Vec<u8> = (0..64).map(|i| (i % 8 / 2) as u8).collect();
        let mut report = MetricsReport::new(4);
        report.add_sample(&reference, &reference, 8, 8, 1.0).unwrap();
        report.add_sample(&vec![0; 64], &reference, 8, 8, 1.0).unwrap();
        assert_eq!(report.class_mean(1, 0), Some(0.5));
        assert_eq!(report.class_defined(2, 3), 1);
        assert_eq!(report.class_mean(3, 3), Some(0.0));
        assert_eq!(report.mean_dice(), Some(0.5));
    }
}
