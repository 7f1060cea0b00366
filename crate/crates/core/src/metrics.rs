//! Segmentation quality measures and the paired signed-rank test.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::distance_map::{boundary_of_mask, Contour};
use crate::error::{Error, Result};
use crate::raster::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub dice: f64,
    pub jaccard: f64,
    pub precision: f64,
    pub sensitivity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub dice: f64,
    pub jaccard: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub mean_distance: f64,
    pub assd: f64,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 6] = ["dice", "jaccard", "precision", "sensitivity", "md", "assd"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.dice,
            self.jaccard,
            self.precision,
            self.sensitivity,
            self.mean_distance,
            self.assd,
        ]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn overlap_metrics(pred: &BinaryMask, truth: &BinaryMask) -> Result<Overlap> {
    check_dims(pred, truth)?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data.iter().zip(&truth.data) {
        p += a as usize;
        g += b as usize;
        both += (a && b) as usize;
    }
    if g == 0 {
        return Err(Error::domain("ground-truth mask is empty"));
    }
    Ok(Overlap {
        dice: ratio(2 * both, p + g),
        jaccard: ratio(both, p + g - both),
        precision: ratio(both, p),
        sensitivity: ratio(both, g),
    })
}

fn check_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::shape(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean over `from` of the exact distance to the nearest pixel of `to`.
pub fn directed_mean_distance(from: &Contour, to: &Contour) -> f64 {
    let total: f64 = from
        .points
        .iter()
        .map(|&(x, y)| {
            to.points
                .iter()
                .map(|&(u, v)| ((x - u) * (x - u) + (y - v) * (y - v)) as f64)
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / from.points.len() as f64
}

/// Boundary-based distances between contour sets: the directed mean
/// distance from prediction to truth, and the symmetric average.
pub fn contour_distances(pred: &Contour, truth: &Contour) -> (f64, f64) {
    let forward = directed_mean_distance(pred, truth);
    let backward = directed_mean_distance(truth, pred);
    (forward, 0.5 * (forward + backward))
}

/// `(mean_distance, assd)` between mask boundaries.
pub fn boundary_distances(pred: &BinaryMask, truth: &BinaryMask) -> Result<(f64, f64)> {
    check_dims(pred, truth)?;
    let pb = boundary_of_mask(pred)?;
    let tb = boundary_of_mask(truth)?;
    Ok(contour_distances(&pb, &tb))
}

/// Full report. An empty prediction has no boundary, so its distances are
/// reported as infinite.
pub fn evaluate(pred: &BinaryMask, truth: &BinaryMask) -> Result<MetricsReport> {
    let o = overlap_metrics(pred, truth)?;
    let (mean_distance, assd) = if pred.is_empty() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        boundary_distances(pred, truth)?
    };
    Ok(MetricsReport {
        dice: o.dice,
        jaccard: o.jaccard,
        precision: o.precision,
        sensitivity: o.sensitivity,
        mean_distance,
        assd,
    })
}

// ---------------------------------------------------------------------------
// Summary

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation, summed in input order.
    pub fn of(xs: &[f64]) -> MeanStd {
        if xs.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

pub fn summarize(reports: &[MetricsReport]) -> [MeanStd; 6] {
    let cols: Vec<Vec<f64>> = (0..6)
        .map(|k| reports.iter().map(|r| r.values()[k]).collect())
        .collect();
    [0, 1, 2, 3, 4, 5].map(|k| MeanStd::of(&cols[k]))
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Number of non-zero differences.
    pub n_effective: usize,
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_two_sided: f64,
    /// True when every difference is zero.
    pub degenerate: bool,
    /// True when `p_two_sided` came from exact enumeration.
    pub exact: bool,
}

/// Largest sample size for which the null distribution is enumerated.
pub const EXACT_LIMIT: usize = 12;

/// Twice the average ranks of `|d|`, so tied ranks stay integral.
pub fn doubled_ranks(abs_diffs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs_diffs.len()).collect();
    order.sort_by(|&a, &b| abs_diffs[a].total_cmp(&abs_diffs[b]));
    let mut ranks = vec![0u64; abs_diffs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs_diffs[order[j + 1]] == abs_diffs[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged, doubled.
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided paired test of `a - b`, dropping zero differences. Exact for
/// up to [`EXACT_LIMIT`] non-zero pairs, otherwise the normal approximation
/// with tie and continuity corrections.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::domain(format!(
            "paired samples need equal non-zero lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n_effective: 0,
            statistic: 0.0,
            p_two_sided: 1.0,
            degenerate: true,
            exact: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let plus: u64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let w2 = plus.min(total - plus);
    let statistic = w2 as f64 / 2.0;

    if n <= EXACT_LIMIT {
        let counts = signed_rank_null(&ranks);
        let tail: u64 = counts
            .iter()
            .enumerate()
            .filter(|&(t, _)| (t as u64) <= w2 || (t as u64) >= total - w2)
            .map(|(_, &c)| c)
            .sum();
        let p = tail as f64 / (1u64 << n) as f64;
        return Ok(WilcoxonResult {
            n_effective: n,
            statistic,
            p_two_sided: p.min(1.0),
            degenerate: false,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    Ok(WilcoxonResult {
        n_effective: n,
        statistic,
        p_two_sided: p,
        degenerate: false,
        exact: false,
    })
}

/// Number of sign assignments giving each value of the doubled positive
/// rank sum.
fn signed_rank_null(doubled_ranks: &[u64]) -> Vec<u64> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for t in (0..=reach).rev() {
            if counts[t] > 0 {
                counts[t + r] += counts[t];
            }
        }
        reach += r;
    }
    counts
}
