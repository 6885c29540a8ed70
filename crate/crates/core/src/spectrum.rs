//! Statistical row-attention pattern estimation and harmonic analysis.
//!
//! The mean attention logit between a query and the keys `dt` frames away at
//! the same spatial location decomposes as `sum_i a_i cos(f_i dt + b_i) + C`,
//! with one term per temporal rotary plane and a constant absorbing the
//! spatial planes. This module estimates that decomposition from pre-rotation
//! query/key samples, classifies a frequency set as harmonic or not, and
//! detects periods numerically by lattice scan.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::{GridShape, RopeSpec};

/// Trigonometric decomposition of the mean row-attention logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectralPatternRaw")]
pub struct SpectralPattern {
    pub freqs: Vec<f64>,
    pub amps: Vec<f64>,
    pub phases: Vec<f64>,
    pub offset: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectralPatternRaw {
    freqs: Vec<f64>,
    amps: Vec<f64>,
    phases: Vec<f64>,
    offset: f64,
}

impl TryFrom<SpectralPatternRaw> for SpectralPattern {
    type Error = Error;

    fn try_from(raw: SpectralPatternRaw) -> Result<Self> {
        SpectralPattern::new(raw.freqs, raw.amps, raw.phases, raw.offset)
    }
}

impl SpectralPattern {
    pub fn new(freqs: Vec<f64>, amps: Vec<f64>, phases: Vec<f64>, offset: f64) -> Result<Self> {
        if freqs.len() != amps.len() || freqs.len() != phases.len() {
            return Err(Error::Shape(format!(
                "component lists must share one length, got {}/{}/{}",
                freqs.len(),
                amps.len(),
                phases.len()
            )));
        }
        if freqs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::InvalidInput("frequencies must be positive and finite".into()));
        }
        if amps.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidInput("amplitudes must be non-negative and finite".into()));
        }
        if phases.iter().any(|b| !b.is_finite()) || !offset.is_finite() {
            return Err(Error::InvalidInput("phases and offset must be finite".into()));
        }
        Ok(Self { freqs, amps, phases, offset })
    }

    /// Zero-phase pattern, the regime in which peak identities are exact.
    pub fn cosine(freqs: Vec<f64>, amps: Vec<f64>, offset: f64) -> Result<Self> {
        let phases = vec![0.0; freqs.len()];
        Self::new(freqs, amps, phases, offset)
    }

    /// Evaluate the decomposition at a (real-valued) frame displacement.
    pub fn evaluate(&self, dt: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.amps)
            .zip(&self.phases)
            .map(|((&f, &a), &b)| a * (f * dt + b).cos())
            .sum::<f64>()
            + self.offset
    }

    /// Upper envelope `sum(amps) + offset`, attained at harmonic alignment
    /// displacements when the set is harmonic and phases vanish.
    pub fn peak_value(&self) -> f64 {
        self.amps.iter().sum::<f64>() + self.offset
    }

    pub fn total_amplitude(&self) -> f64 {
        self.amps.iter().sum()
    }
}

/// How a frequency set relates to its fundamental.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarmonicClass {
    #[serde(rename = "exact-harmonic")]
    ExactHarmonic,
    #[serde(rename = "approximate-harmonic")]
    ApproximateHarmonic,
    #[serde(rename = "inharmonic")]
    Inharmonic,
}

/// Outcome of [`harmonic_analysis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicReport {
    pub classification: HarmonicClass,
    pub fundamental_freq: f64,
    pub fundamental_period: f64,
    pub dominant_index: usize,
    pub dominant_share: f64,
    pub effective_period: f64,
}

/// Default relative tolerance for calling a frequency ratio "close" to an
/// integer. Calibrated so that a ratio of 3.16 (deviation 0.053 from 3)
/// counts as approximately harmonic.
pub const DEFAULT_INTEGER_TOL: f64 = 0.06;

/// Tolerance below which a ratio counts as exactly integral.
pub const EXACT_RATIO_TOL: f64 = 1e-9;

fn nearest_positive_integer(ratio: f64) -> f64 {
    ratio.round().max(1.0)
}

/// Classify a pattern's frequency set and locate its dominant component.
///
/// A set is exactly harmonic when every ratio to the smallest frequency is an
/// integer (to within [`EXACT_RATIO_TOL`] absolutely), approximately harmonic
/// when each ratio deviates from its nearest positive integer by at most
/// `integer_tol` relatively, and inharmonic otherwise. The dominant share
/// pools the amplitudes of the largest-amplitude frequency and every
/// component whose ratio to it passes the same integer test.
pub fn harmonic_analysis(p: &SpectralPattern, integer_tol: f64) -> Result<HarmonicReport> {
    if p.freqs.is_empty() {
        return Err(Error::InvalidInput("empty spectral pattern".into()));
    }
    let fundamental = p.freqs.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut exact = true;
    let mut approximate = true;
    for &f in &p.freqs {
        let ratio = f / fundamental;
        let n = nearest_positive_integer(ratio);
        if (ratio - n).abs() > EXACT_RATIO_TOL {
            exact = false;
        }
        if (ratio - n).abs() / n > integer_tol {
            approximate = false;
        }
    }
    let classification = if exact {
        HarmonicClass::ExactHarmonic
    } else if approximate {
        HarmonicClass::ApproximateHarmonic
    } else {
        HarmonicClass::Inharmonic
    };

    // amplitude ties resolve to the lowest frequency (longest period)
    let dominant_index = p
        .amps
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.total_cmp(b)
                .then_with(|| p.freqs[*ib].total_cmp(&p.freqs[*ia]))
        })
        .map(|(i, _)| i)
        .expect("non-empty");
    let dominant_freq = p.freqs[dominant_index];

    let total: f64 = p.amps.iter().sum();
    let dominant_share = if total > 0.0 {
        let pooled: f64 = p
            .freqs
            .iter()
            .zip(&p.amps)
            .filter(|(&f, _)| {
                let ratio = f / dominant_freq;
                let n = nearest_positive_integer(ratio);
                (ratio - n).abs() / n <= integer_tol
            })
            .map(|(_, &a)| a)
            .sum();
        pooled / total
    } else {
        0.0
    };

    let tau = 2.0 * std::f64::consts::PI;
    Ok(HarmonicReport {
        classification,
        fundamental_freq: fundamental,
        fundamental_period: tau / fundamental,
        dominant_index,
        dominant_share,
        effective_period: tau / dominant_freq,
    })
}

/// Smallest period on the sampling lattice, if any.
///
/// Scans candidates `T = k * step` for `k = 1..=horizon/step` and accepts the
/// first whose worst-case mismatch `|f(x + T) - f(x)|` over the lattice
/// `x in [0, horizon]` stays within `eps`. A dense scan rather than an FFT:
/// signals here are cheap to evaluate and the scan matches the periodicity
/// definition directly.
pub fn detect_period<F>(f: F, horizon: f64, step: f64, eps: f64) -> Result<Option<f64>>
where
    F: Fn(f64) -> f64,
{
    if !(horizon > 0.0 && step > 0.0 && horizon.is_finite() && step.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "horizon and step must be positive and finite, got {horizon}, {step}"
        )));
    }
    let n = (horizon / step).floor() as usize;
    let mut samples = Vec::with_capacity(2 * n + 1);
    for k in 0..=2 * n {
        let v = f(k as f64 * step);
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "signal is non-finite at {}",
                k as f64 * step
            )));
        }
        samples.push(v);
    }
    for cand in 1..=n {
        let ok = (0..=n).all(|k| (samples[k + cand] - samples[k]).abs() <= eps);
        if ok {
            return Ok(Some(cand as f64 * step));
        }
    }
    Ok(None)
}

/// Lattice-period search over an already-sampled signal (unit step).
/// Candidates run to half the signal length so every candidate is checked
/// against at least as many displacements as it spans.
pub fn detect_period_in_samples(samples: &[f64], eps: f64) -> Result<Option<usize>> {
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("samples contain non-finite values".into()));
    }
    let n = samples.len();
    for cand in 1..=n / 2 {
        let ok = (0..n - cand).all(|k| (samples[k + cand] - samples[k]).abs() <= eps);
        if ok {
            return Ok(Some(cand));
        }
    }
    Ok(None)
}

/// Frames hit by nonzero multiples of the effective period within a clip.
pub fn harmonic_positions(report: &HarmonicReport, seq_len_frames: usize) -> Vec<usize> {
    let period = report.effective_period;
    let mut out = Vec::new();
    let mut m = 1u64;
    loop {
        let pos = (m as f64 * period).round();
        if pos >= seq_len_frames as f64 {
            break;
        }
        let pos = pos as usize;
        if out.last() != Some(&pos) {
            out.push(pos);
        }
        m += 1;
    }
    out
}

/// Pooled decomposition estimate plus the diagnostics needed to judge it:
/// the spread of the per-displacement means the constancy approximation
/// collapses, and per-amplitude standard errors from spatial replicates.
#[derive(Debug, Clone)]
pub struct PatternEstimate {
    pub pattern: SpectralPattern,
    /// Variance across frame displacements of the per-displacement cosine
    /// coefficient means, one entry per temporal plane.
    pub e1_variance: Vec<f64>,
    /// Same for the sine coefficients.
    pub e2_variance: Vec<f64>,
    /// Standard error of each recovered amplitude, from the spread over
    /// spatial locations. Infinite when the grid has a single location.
    pub amp_se: Vec<f64>,
    /// Number of ordered frame pairs pooled per spatial location.
    pub pairs_per_location: usize,
}

struct PlaneAccum {
    e1_sum: f64,
    e2_sum: f64,
    // per displacement bin (index dt + t_len - 1)
    e1_bins: Vec<f64>,
    e2_bins: Vec<f64>,
    // per spatial location
    e1_cols: Vec<f64>,
    e2_cols: Vec<f64>,
}

/// Estimate the trigonometric decomposition from pre-rotation queries and
/// keys laid out in grid flat order.
///
/// The cosine/sine coefficients are empirical means of the even/odd product
/// combinations over every ordered frame pair at the same spatial location;
/// amplitudes and phases follow by the auxiliary-angle identity and the
/// offset pools the spatial planes' cosine coefficients.
pub fn estimate_pattern(
    queries: ArrayView2<'_, f64>,
    keys: ArrayView2<'_, f64>,
    grid: &GridShape,
    spec: &RopeSpec,
) -> Result<PatternEstimate> {
    if spec.d_t == 0 {
        return Err(Error::InvalidSpec("spec has no temporal planes".into()));
    }
    let tokens = grid.token_count();
    let dim = spec.head_dim();
    for (name, m) in [("queries", &queries), ("keys", &keys)] {
        if m.nrows() != tokens || m.ncols() != dim {
            return Err(Error::Shape(format!(
                "{name} is {}x{}, expected {tokens}x{dim}",
                m.nrows(),
                m.ncols()
            )));
        }
    }

    let t_len = grid.t_len;
    let n_cols = grid.h_len * grid.w_len;
    let n_planes = spec.d_t / 2;
    let n_bins = 2 * t_len - 1;
    let pairs_per_location = t_len * t_len;

    let mut accums: Vec<PlaneAccum> = (0..n_planes)
        .map(|_| PlaneAccum {
            e1_sum: 0.0,
            e2_sum: 0.0,
            e1_bins: vec![0.0; n_bins],
            e2_bins: vec![0.0; n_bins],
            e1_cols: vec![0.0; n_cols],
            e2_cols: vec![0.0; n_cols],
        })
        .collect();

    // Spatial planes contribute only their cosine coefficient; their pooled
    // mean factorizes over frame pairs.
    let n_spatial = (spec.d_h + spec.d_w) / 2;
    let mut spatial_sums = vec![0.0; n_spatial];

    for h in 0..grid.h_len {
        for w in 0..grid.w_len {
            let col = h * grid.w_len + w;
            let rows: Vec<usize> = (0..t_len).map(|t| grid.flatten(t, h, w)).collect();
            for (plane, accum) in accums.iter_mut().enumerate() {
                let even = 2 * plane;
                let odd = even + 1;
                let mut col_e1 = 0.0;
                let mut col_e2 = 0.0;
                for (t1, &r1) in rows.iter().enumerate() {
                    let q0 = queries[(r1, even)];
                    let q1 = queries[(r1, odd)];
                    for (t2, &r2) in rows.iter().enumerate() {
                        let k0 = keys[(r2, even)];
                        let k1 = keys[(r2, odd)];
                        let e1 = q0 * k0 + q1 * k1;
                        let e2 = q1 * k0 - q0 * k1;
                        let bin = t2 + t_len - 1 - t1; // dt = t2 - t1, shifted
                        accum.e1_bins[bin] += e1;
                        accum.e2_bins[bin] += e2;
                        col_e1 += e1;
                        col_e2 += e2;
                    }
                }
                accum.e1_cols[col] = col_e1 / pairs_per_location as f64;
                accum.e2_cols[col] = col_e2 / pairs_per_location as f64;
                accum.e1_sum += col_e1;
                accum.e2_sum += col_e2;
            }
            for (s, sum) in spatial_sums.iter_mut().enumerate() {
                let even = spec.d_t + 2 * s;
                let odd = even + 1;
                let (mut sq0, mut sq1, mut sk0, mut sk1) = (0.0, 0.0, 0.0, 0.0);
                for &r in &rows {
                    sq0 += queries[(r, even)];
                    sq1 += queries[(r, odd)];
                    sk0 += keys[(r, even)];
                    sk1 += keys[(r, odd)];
                }
                *sum += (sq0 * sk0 + sq1 * sk1) / pairs_per_location as f64;
            }
        }
    }

    let total_pairs = (n_cols * pairs_per_location) as f64;
    let mut amps = Vec::with_capacity(n_planes);
    let mut phases = Vec::with_capacity(n_planes);
    let mut e1_variance = Vec::with_capacity(n_planes);
    let mut e2_variance = Vec::with_capacity(n_planes);
    let mut amp_se = Vec::with_capacity(n_planes);

    for (plane, accum) in accums.iter().enumerate() {
        let _ = plane;
        let e1 = accum.e1_sum / total_pairs;
        let e2 = accum.e2_sum / total_pairs;
        let amp = e1.hypot(e2);
        amps.push(amp);
        phases.push(f64::atan2(-e2, e1));

        // Per-displacement means, weighted variance around the pooled value.
        let mut var1 = 0.0;
        let mut var2 = 0.0;
        for (bin_idx, (&b1, &b2)) in accum.e1_bins.iter().zip(&accum.e2_bins).enumerate() {
            let dt_abs = bin_idx.abs_diff(t_len - 1);
            let count = (n_cols * (t_len - dt_abs)) as f64;
            let m1 = b1 / count;
            let m2 = b2 / count;
            var1 += (m1 - e1).powi(2);
            var2 += (m2 - e2).powi(2);
        }
        e1_variance.push(var1 / n_bins as f64);
        e2_variance.push(var2 / n_bins as f64);

        // Standard error via independent spatial replicates.
        if n_cols < 2 {
            amp_se.push(f64::INFINITY);
        } else {
            let se_of = |cols: &[f64], mean: f64| {
                let ss: f64 = cols.iter().map(|c| (c - mean).powi(2)).sum();
                (ss / (n_cols - 1) as f64 / n_cols as f64).sqrt()
            };
            let se1 = se_of(&accum.e1_cols, e1);
            let se2 = se_of(&accum.e2_cols, e2);
            let se = if amp > 0.0 {
                ((e1 * se1).powi(2) + (e2 * se2).powi(2)).sqrt() / amp
            } else {
                se1.hypot(se2)
            };
            amp_se.push(se);
        }
    }

    let offset: f64 = spatial_sums.iter().map(|s| s / n_cols as f64).sum();
    let pattern = SpectralPattern::new(spec.freq_t.clone(), amps, phases, offset)?;
    Ok(PatternEstimate {
        pattern,
        e1_variance,
        e2_variance,
        amp_se,
        pairs_per_location,
    })
}
