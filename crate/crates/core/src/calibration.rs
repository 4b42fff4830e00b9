//! Decision thresholds at a target false match rate, error rates at a
//! threshold, and relative threshold sweeps.
//!
//! A comparison is a match when `score >= threshold`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Offset applied above the top score when no false match is allowed.
pub const ABOVE_MAX_MARGIN: f64 = 1e-6;
/// Sweep anchors: convenience end at this FMR, security end at this FNMR.
pub const SWEEP_ANCHOR_RATE: f64 = 0.1;

fn check_target(target: f64) -> Result<()> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidTarget(target));
    }
    Ok(())
}

fn sorted_desc<T: Scalar>(scores: &[T]) -> Vec<T> {
    let mut s = scores.to_vec();
    s.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    s
}

/// Midpoint of `hi > lo` that is guaranteed to lie in `(lo, hi]`.
fn split_point<T: Scalar>(hi: T, lo: T) -> T {
    let mid = (hi + lo) / T::lit(2.0);
    if mid > lo {
        mid
    } else {
        hi
    }
}

/// Threshold with achieved FMR at most `target_fmr`.
///
/// With scores sorted descending and `k = floor(N * target)`, the threshold
/// splits the k-th and (k+1)-th scores; on ties k slides down until the tie
/// breaks. `k = 0` puts the threshold just above the top score.
pub fn threshold_at_fmr<T: Scalar>(nonmated: &[T], target_fmr: f64) -> Result<T> {
    if nonmated.is_empty() {
        return Err(Error::EmptyScores);
    }
    check_target(target_fmr)?;
    let s = sorted_desc(nonmated);
    let n = s.len();
    let mut k = (((n as f64) * target_fmr).floor() as usize).min(n - 1);
    // s is 0-based: s[k-1] is the k-th largest, s[k] the (k+1)-th
    while k > 0 && s[k - 1] <= s[k] {
        k -= 1;
    }
    if k == 0 {
        return Ok(s[0] + T::lit(ABOVE_MAX_MARGIN));
    }
    Ok(split_point(s[k - 1], s[k]))
}

/// Threshold with achieved FNMR at most `target_fnmr` (mirror of
/// [`threshold_at_fmr`] on the low tail of mated scores).
pub fn threshold_at_fnmr<T: Scalar>(mated: &[T], target_fnmr: f64) -> Result<T> {
    if mated.is_empty() {
        return Err(Error::EmptyScores);
    }
    check_target(target_fnmr)?;
    let mut s = mated.to_vec();
    s.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut k = (((s.len() as f64) * target_fnmr).floor() as usize).min(s.len() - 1);
    while k > 0 && s[k - 1] >= s[k] {
        k -= 1;
    }
    if k == 0 {
        return Ok(s[0]);
    }
    Ok(split_point(s[k], s[k - 1]))
}

/// Fraction of non-mated scores `>= t`.
pub fn fmr_at_threshold<T: Scalar>(nonmated: &[T], t: T) -> Result<f64> {
    if nonmated.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(nonmated.iter().filter(|&&s| s >= t).count() as f64 / nonmated.len() as f64)
}

/// Fraction of mated scores `< t`.
pub fn fnmr_at_threshold<T: Scalar>(mated: &[T], t: T) -> Result<f64> {
    if mated.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(mated.iter().filter(|&&s| s < t).count() as f64 / mated.len() as f64)
}

/// Ascending score list answering rate queries in O(log N).
#[derive(Debug, Clone)]
pub struct SortedScores(Vec<f64>);

impl SortedScores {
    pub fn new(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyScores);
        }
        let mut v = scores.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        Ok(Self(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn fraction_at_or_above(&self, t: f64) -> f64 {
        (self.0.len() - self.0.partition_point(|&s| s < t)) as f64 / self.0.len() as f64
    }

    pub fn fraction_below(&self, t: f64) -> f64 {
        self.0.partition_point(|&s| s < t) as f64 / self.0.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub frs_name: String,
    pub threshold: f64,
    pub target_fmr: f64,
    pub achieved_fmr: f64,
    pub fnmr: f64,
    pub n_nonmated: usize,
    pub n_mated: usize,
}

pub fn operating_point(
    frs_name: &str,
    nonmated: &[f64],
    mated: &[f64],
    target_fmr: f64,
) -> Result<OperatingPoint> {
    let threshold = threshold_at_fmr(nonmated, target_fmr)?;
    Ok(OperatingPoint {
        frs_name: frs_name.to_string(),
        threshold,
        target_fmr,
        achieved_fmr: fmr_at_threshold(nonmated, threshold)?,
        fnmr: fnmr_at_threshold(mated, threshold)?,
        n_nonmated: nonmated.len(),
        n_mated: mated.len(),
    })
}

/// Score material of one recognizer for a sweep.
#[derive(Debug, Clone)]
pub struct FrsScores {
    pub frs_name: String,
    pub mated: Vec<f64>,
    pub nonmated: Vec<f64>,
}

/// Per-recognizer sweep anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAnchors {
    pub frs_name: String,
    /// Convenience end (FMR = 10%), never above `base`.
    pub min: f64,
    pub base: f64,
    /// Security end (FNMR = 10%), never below `base`.
    pub max: f64,
}

impl SweepAnchors {
    pub fn threshold(&self, offset: f64) -> f64 {
        if offset == 0.0 {
            self.base
        } else if offset > 0.0 {
            self.base + offset * (self.max - self.base)
        } else {
            self.base + offset * (self.base - self.min)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStep {
    pub offset: f64,
    pub thresholds: Vec<f64>,
    pub avg_fmr: f64,
    pub avg_fnmr: f64,
}

pub fn sweep_anchors(scores: &FrsScores, target_fmr: f64) -> Result<SweepAnchors> {
    let base = threshold_at_fmr(&scores.nonmated, target_fmr)?;
    let min = threshold_at_fmr(&scores.nonmated, SWEEP_ANCHOR_RATE)?.min(base);
    let max = threshold_at_fnmr(&scores.mated, SWEEP_ANCHOR_RATE)?.max(base);
    Ok(SweepAnchors {
        frs_name: scores.frs_name.clone(),
        min,
        base,
        max,
    })
}

/// `n_steps` offsets evenly spaced over `[lo, hi]` (both ends included).
pub fn sweep_offsets(lo: f64, hi: f64, n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 || lo.is_nan() || hi.is_nan() || lo > hi || lo < -1.0 || hi > 1.0 {
        return Err(Error::InvalidConfig(format!(
            "sweep needs n_steps >= 1 and -1 <= lo <= hi <= 1, got [{lo}, {hi}] x {n_steps}"
        )));
    }
    if n_steps == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n_steps)
        .map(|i| {
            if i == n_steps - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n_steps - 1) as f64
            }
        })
        .collect())
}

/// Thresholds and FRS-averaged FMR/FNMR at each offset. Offset 0 is the
/// base operating point; +1 is the FNMR=10% point, -1 the FMR=10% point.
pub fn threshold_sweep(
    per_frs: &[FrsScores],
    target_fmr: f64,
    offsets: &[f64],
) -> Result<(Vec<SweepAnchors>, Vec<SweepStep>)> {
    if per_frs.is_empty() {
        return Err(Error::EmptyScores);
    }
    let anchors = per_frs
        .iter()
        .map(|s| sweep_anchors(s, target_fmr))
        .collect::<Result<Vec<_>>>()?;
    let sorted = per_frs
        .iter()
        .map(|s| {
            Ok((
                SortedScores::new(&s.nonmated)?,
                SortedScores::new(&s.mated)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let nf = per_frs.len() as f64;
    let steps = offsets
        .iter()
        .map(|&offset| {
            let thresholds: Vec<f64> = anchors.iter().map(|a| a.threshold(offset)).collect();
            let (mut fmr, mut fnmr) = (0.0, 0.0);
            for (t, (nm, m)) in thresholds.iter().zip(&sorted) {
                fmr += nm.fraction_at_or_above(*t);
                fnmr += m.fraction_below(*t);
            }
            SweepStep {
                offset,
                thresholds,
                avg_fmr: fmr / nf,
                avg_fnmr: fnmr / nf,
            }
        })
        .collect();
    Ok((anchors, steps))
}
