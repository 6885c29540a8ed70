//! Frame-repetition scoring and periodic-map constructions.
//!
//! The score runs in two steps: a static filter over 8 uniformly sampled
//! frames, then a period-aligned match of a candidate repeated sequence
//! against the clip head. 100 means no detected repetition. The periodic-map
//! constructor builds attention maps satisfying row-wise periodicity and
//! relative positional invariance exactly, turning the output-periodicity
//! derivation into a checkable numerical fact.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How frame distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceMode {
    /// Per-pixel RMS rescaled to the 0-255 range, so one threshold transfers
    /// across resolutions and value ranges.
    #[serde(rename = "rms-normalized")]
    RmsNormalized,
    /// Plain Euclidean distance over all pixels.
    #[serde(rename = "raw-l2")]
    RawL2,
}

/// A clip as flat per-frame pixel vectors with a declared value range.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Vec<f64>>,
    value_range: (f64, f64),
}

impl FrameSequence {
    pub fn new(frames: Vec<Vec<f64>>, value_range: (f64, f64)) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("no frames".into()));
        }
        let len = frames[0].len();
        if len == 0 {
            return Err(Error::InvalidInput("empty frames".into()));
        }
        if frames.iter().any(|f| f.len() != len) {
            return Err(Error::Shape("frames differ in pixel count".into()));
        }
        if frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("frames contain non-finite pixels".into()));
        }
        let (lo, hi) = value_range;
        if !(hi > lo && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bad value range ({lo}, {hi})"
            )));
        }
        Ok(Self { frames, value_range })
    }

    /// Frames with 0-255 pixel values.
    pub fn from_u8_range(frames: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(frames, (0.0, 255.0))
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.frames[i]
    }

    /// Distance between two frames under the chosen convention.
    pub fn distance(&self, a: usize, b: usize, mode: DistanceMode) -> f64 {
        let fa = &self.frames[a];
        let fb = &self.frames[b];
        let ss: f64 = fa.iter().zip(fb).map(|(x, y)| (x - y) * (x - y)).sum();
        match mode {
            DistanceMode::RawL2 => ss.sqrt(),
            DistanceMode::RmsNormalized => {
                let span = self.value_range.1 - self.value_range.0;
                (ss / fa.len() as f64).sqrt() * (255.0 / span)
            }
        }
    }
}

/// Distance threshold matched to human perception for 0-255 RMS distances.
pub const DEFAULT_THRESHOLD: f64 = 55.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NoRepeatParams {
    pub threshold: f64,
    /// Half-width of the candidate-start search around the period; when
    /// absent, 10% of the period (at least one frame).
    pub search_radius: Option<usize>,
    pub distance: DistanceMode,
}

impl Default for NoRepeatParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            search_radius: None,
            distance: DistanceMode::RmsNormalized,
        }
    }
}

/// Result of the repetition metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub is_static: bool,
    /// 0-100; absent for static clips, which are excluded from averages.
    pub norepeat_score: Option<f64>,
    pub candidate_start: Option<usize>,
    pub repeated_count: usize,
}

/// Uniformly spaced sample indices, endpoints included.
fn sample_indices(n: usize, count: usize) -> Vec<usize> {
    (0..count)
        .map(|k| ((k as f64) * (n - 1) as f64 / (count - 1) as f64).round() as usize)
        .collect()
}

/// Two-step repetition metric: static filtering, then period-aligned
/// repeated-frame counting. The score is `100 * (1 - repeated / total)`.
pub fn norepeat_score(
    seq: &FrameSequence,
    dominant_period: usize,
    params: &NoRepeatParams,
) -> Result<RepetitionReport> {
    let n = seq.frame_count();
    if n < 9 {
        return Err(Error::InvalidInput(format!(
            "need at least 9 frames, got {n}"
        )));
    }
    if dominant_period == 0 || dominant_period >= n {
        return Err(Error::InvalidInput(format!(
            "dominant period {dominant_period} must lie in [1, {})",
            n
        )));
    }

    // step 1: static filter over 8 uniform samples
    let samples = sample_indices(n, 8);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (ai, &a) in samples.iter().enumerate() {
        for &b in &samples[ai + 1..] {
            total += seq.distance(a, b, params.distance);
            pairs += 1;
        }
    }
    if (total / pairs as f64) < params.threshold {
        return Ok(RepetitionReport {
            is_static: true,
            norepeat_score: None,
            candidate_start: None,
            repeated_count: 0,
        });
    }

    // step 2: find the best-matching start near the dominant period, then
    // compare the candidate sequence frame-by-frame against the clip head
    let radius = params
        .search_radius
        .unwrap_or_else(|| ((dominant_period as f64 * 0.1).round() as usize).max(1));
    let lo = dominant_period.saturating_sub(radius).max(1);
    let hi = (dominant_period + radius).min(n - 1);
    let start = (lo..=hi)
        .min_by(|&a, &b| {
            seq.distance(a, 0, params.distance)
                .total_cmp(&seq.distance(b, 0, params.distance))
        })
        .expect("non-empty candidate range");

    let repeated = (0..n - start)
        .filter(|&k| seq.distance(start + k, k, params.distance) < params.threshold)
        .count();
    let score = 100.0 * (1.0 - repeated as f64 / n as f64);
    Ok(RepetitionReport {
        is_static: false,
        norepeat_score: Some(score),
        candidate_start: Some(start),
        repeated_count: repeated,
    })
}

/// Build a row-stochastic map satisfying, exactly,
/// `P[i][j] == P[i+p][j+p]` for every diagonal shift and
/// `P[i][j] == P[i][j+T]`.
///
/// The map depends on `(j - i) mod T` only, with the profile taken from the
/// seed row averaged over congruence classes. Both properties plus unit row
/// sums force the period to divide the sequence length, so that is required.
pub fn construct_periodic_map(
    l_prime: usize,
    period: usize,
    seed_row: &[f64],
) -> Result<Array2<f64>> {
    if l_prime == 0 || period == 0 || period > l_prime {
        return Err(Error::InvalidInput(format!(
            "need 1 <= period <= length, got period {period}, length {l_prime}"
        )));
    }
    if l_prime % period != 0 {
        return Err(Error::InvalidInput(format!(
            "period {period} must divide the length {l_prime}; otherwise unit row sums \
             and diagonal invariance cannot both hold exactly"
        )));
    }
    if seed_row.len() != l_prime {
        return Err(Error::Shape(format!(
            "seed row has {} entries, expected {l_prime}",
            seed_row.len()
        )));
    }
    if seed_row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput(
            "seed row must be non-negative and finite".into(),
        ));
    }

    // project the seed onto period-T functions by averaging congruence classes
    let mut profile = vec![0.0; period];
    for (j, &v) in seed_row.iter().enumerate() {
        profile[j % period] += v;
    }
    let copies = (l_prime / period) as f64;
    for p in profile.iter_mut() {
        *p /= copies;
    }
    let total: f64 = profile.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("seed row sums to zero".into()));
    }
    let row_sum = copies * total;

    Ok(Array2::from_shape_fn((l_prime, l_prime), |(i, j)| {
        let r = (j as i64 - i as i64).rem_euclid(period as i64) as usize;
        profile[r] / row_sum
    }))
}

/// Worst row deviation `max_i ||O[i+T] - O[i]||_2` of the attention output
/// `O = P V`. An empty index range (period at or beyond the row count)
/// yields zero by convention.
pub fn periodic_output_deviation(
    map: &Array2<f64>,
    values: &Array2<f64>,
    period: usize,
) -> Result<f64> {
    if map.ncols() != values.nrows() {
        return Err(Error::Shape(format!(
            "map is {}x{} but values have {} rows",
            map.nrows(),
            map.ncols(),
            values.nrows()
        )));
    }
    let n = map.nrows();
    if period >= n {
        return Ok(0.0);
    }
    let output = map.dot(values);
    let mut worst = 0.0f64;
    for i in 0..n - period {
        let diff: f64 = output
            .row(i + period)
            .iter()
            .zip(output.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        worst = worst.max(diff.sqrt());
    }
    Ok(worst)
}
