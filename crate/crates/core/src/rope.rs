//! Multimodal rotary position embedding over (t, h, w) token grids.
//!
//! The head dimension is split into temporal/height/width subspaces, each
//! carrying its own frequency series. Every 2-component plane `(2i, 2i+1)`
//! of a query or key vector is rotated by `freq[i] * position` along the
//! axis that owns the plane. [`logit_closed_form`] gives the equivalent
//! trigonometric expansion of a rotated dot product, which is what the
//! spectrum module estimates statistically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token grid of a latent video: `t_len` frames, each `h_len * w_len` tokens.
///
/// Flattening is t-major, then h, then w:
/// `flat = (t * h_len + h) * w_len + w`. Every flat index in
/// `0..token_count()` maps bijectively back to `(t, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub t_len: usize,
    pub h_len: usize,
    pub w_len: usize,
}

impl GridShape {
    pub fn new(t_len: usize, h_len: usize, w_len: usize) -> Result<Self> {
        if t_len == 0 || h_len == 0 || w_len == 0 {
            return Err(Error::InvalidInput(format!(
                "grid dimensions must be positive, got ({t_len}, {h_len}, {w_len})"
            )));
        }
        Ok(Self { t_len, h_len, w_len })
    }

    /// 1-D grid with a single spatial token per frame.
    pub fn temporal(t_len: usize) -> Result<Self> {
        Self::new(t_len, 1, 1)
    }

    pub fn token_count(&self) -> usize {
        self.t_len * self.h_len * self.w_len
    }

    pub fn flatten(&self, t: usize, h: usize, w: usize) -> usize {
        debug_assert!(t < self.t_len && h < self.h_len && w < self.w_len);
        (t * self.h_len + h) * self.w_len + w
    }

    pub fn unflatten(&self, flat: usize) -> (usize, usize, usize) {
        debug_assert!(flat < self.token_count());
        let per_frame = self.h_len * self.w_len;
        let t = flat / per_frame;
        let rem = flat % per_frame;
        (t, rem / self.w_len, rem % self.w_len)
    }

    /// Frame index of a flat token index.
    pub fn frame_of(&self, flat: usize) -> usize {
        flat / (self.h_len * self.w_len)
    }
}

/// Per-axis frequency series and dimension split.
///
/// Frequencies are stored explicitly rather than re-derived from a base, so
/// hand-built series (harmonic, inharmonic, single-axis) travel through the
/// same code path as theta-derived ones and share one JSON format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RopeSpecRaw")]
pub struct RopeSpec {
    pub d_t: usize,
    pub d_h: usize,
    pub d_w: usize,
    pub freq_t: Vec<f64>,
    pub freq_h: Vec<f64>,
    pub freq_w: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RopeSpecRaw {
    d_t: usize,
    d_h: usize,
    d_w: usize,
    freq_t: Vec<f64>,
    freq_h: Vec<f64>,
    freq_w: Vec<f64>,
}

impl TryFrom<RopeSpecRaw> for RopeSpec {
    type Error = Error;

    fn try_from(raw: RopeSpecRaw) -> Result<Self> {
        for (name, d, len) in [
            ("d_t", raw.d_t, raw.freq_t.len()),
            ("d_h", raw.d_h, raw.freq_h.len()),
            ("d_w", raw.d_w, raw.freq_w.len()),
        ] {
            if d != 2 * len {
                return Err(Error::InvalidSpec(format!(
                    "{name} = {d} does not match its frequency list of length {len}"
                )));
            }
        }
        RopeSpec::from_frequencies(raw.freq_t, raw.freq_h, raw.freq_w)
    }
}

fn axis_frequencies(theta: f64, d: usize, axis: &str) -> Result<Vec<f64>> {
    if d % 2 != 0 {
        return Err(Error::InvalidSpec(format!("{axis} dimension {d} is odd")));
    }
    if d > 0 && !(theta > 1.0) {
        return Err(Error::InvalidSpec(format!(
            "{axis} theta must exceed 1, got {theta}"
        )));
    }
    // theta^(-2i/d) computed through exp2 so that power-of-two bases produce
    // exact power-of-two frequencies (their ratios are then exact as well).
    let log2_theta = theta.log2();
    Ok((0..d / 2)
        .map(|i| (-(2.0 * i as f64) / d as f64 * log2_theta).exp2())
        .collect())
}

impl RopeSpec {
    /// Exponential frequency schedule `freq[i] = theta^(-2i / d)` per axis.
    pub fn from_thetas(
        theta_t: f64,
        theta_h: f64,
        theta_w: f64,
        d_t: usize,
        d_h: usize,
        d_w: usize,
    ) -> Result<Self> {
        if d_t < 2 {
            return Err(Error::InvalidSpec(format!(
                "temporal dimension must be at least 2, got {d_t}"
            )));
        }
        Ok(Self {
            d_t,
            d_h,
            d_w,
            freq_t: axis_frequencies(theta_t, d_t, "temporal")?,
            freq_h: axis_frequencies(theta_h, d_h, "height")?,
            freq_w: axis_frequencies(theta_w, d_w, "width")?,
        })
    }

    /// Single-axis spec: all planes temporal. Used for 1-D analyses.
    pub fn temporal_only(theta: f64, d_t: usize) -> Result<Self> {
        Self::from_thetas(theta, theta, theta, d_t, 0, 0)
    }

    /// Wrap explicit frequency lists. Monotonicity is not enforced here so
    /// hand-built series (e.g. deliberately inharmonic ones) are accepted;
    /// only positivity and finiteness are required.
    pub fn from_frequencies(
        freq_t: Vec<f64>,
        freq_h: Vec<f64>,
        freq_w: Vec<f64>,
    ) -> Result<Self> {
        for (axis, freqs) in [("freq_t", &freq_t), ("freq_h", &freq_h), ("freq_w", &freq_w)] {
            if let Some(f) = freqs.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
                return Err(Error::InvalidSpec(format!(
                    "{axis} contains a non-positive or non-finite frequency {f}"
                )));
            }
        }
        Ok(Self {
            d_t: 2 * freq_t.len(),
            d_h: 2 * freq_h.len(),
            d_w: 2 * freq_w.len(),
            freq_t,
            freq_h,
            freq_w,
        })
    }

    /// Head dimension covered by this spec.
    pub fn head_dim(&self) -> usize {
        self.d_t + self.d_h + self.d_w
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rope spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.head_dim() {
            return Err(Error::Shape(format!(
                "vector length {len} does not match head dimension {}",
                self.head_dim()
            )));
        }
        Ok(())
    }
}

fn rotate_planes(out: &mut [f64], freqs: &[f64], pos: i64, offset: usize) {
    let p = pos as f64;
    for (i, &freq) in freqs.iter().enumerate() {
        let (sin, cos) = (freq * p).sin_cos();
        let a = out[offset + 2 * i];
        let b = out[offset + 2 * i + 1];
        out[offset + 2 * i] = a * cos - b * sin;
        out[offset + 2 * i + 1] = a * sin + b * cos;
    }
}

/// Rotate `x` for a token at grid position `(t, h, w)`.
///
/// Each 2-plane is rotated by `freq * position` along its axis; the map is an
/// isometry and the resulting dot products depend only on relative positions.
pub fn apply_rope(x: &[f64], pos: (i64, i64, i64), spec: &RopeSpec) -> Result<Vec<f64>> {
    spec.check_dim(x.len())?;
    let mut out = x.to_vec();
    rotate_planes(&mut out, &spec.freq_t, pos.0, 0);
    rotate_planes(&mut out, &spec.freq_h, pos.1, spec.d_t);
    rotate_planes(&mut out, &spec.freq_w, pos.2, spec.d_t + spec.d_h);
    Ok(out)
}

fn axis_logit(q: &[f64], k: &[f64], freqs: &[f64], delta: i64, offset: usize) -> f64 {
    let d = delta as f64;
    let mut acc = 0.0;
    for (i, &freq) in freqs.iter().enumerate() {
        let q0 = q[offset + 2 * i];
        let q1 = q[offset + 2 * i + 1];
        let k0 = k[offset + 2 * i];
        let k1 = k[offset + 2 * i + 1];
        let (sin, cos) = (freq * d).sin_cos();
        // even/even + odd/odd products ride the cosine, the cross terms the sine
        acc += (q0 * k0 + q1 * k1) * cos + (q1 * k0 - q0 * k1) * sin;
    }
    acc
}

/// Closed-form attention logit between pre-rotation `q` and `k` whose
/// positions differ by `(dt, dh, dw)`.
///
/// Equals `dot(apply_rope(q, p), apply_rope(k, p + delta))` for every base
/// position `p`; the expansion is what makes the statistical row pattern a
/// sum of cosines in the frame displacement.
pub fn logit_closed_form(
    q: &[f64],
    k: &[f64],
    dt: i64,
    dh: i64,
    dw: i64,
    spec: &RopeSpec,
) -> Result<f64> {
    spec.check_dim(q.len())?;
    spec.check_dim(k.len())?;
    Ok(axis_logit(q, k, &spec.freq_t, dt, 0)
        + axis_logit(q, k, &spec.freq_h, dh, spec.d_t)
        + axis_logit(q, k, &spec.freq_w, dw, spec.d_t + spec.d_h))
}
