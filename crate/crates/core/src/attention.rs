//! Exact reference attention with optional logit decay and intervention
//! masks.
//!
//! This path materializes the full attention map, so it is capped at desk
//! scale; it exists to be analyzable (per-row dispersion stats, retained
//! maps) and to serve as the oracle the tiled kernel is checked against.

use ndarray::{Array2, ArrayView1};

use crate::decay::{DecayPolicy, PositionMode};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::rope::GridShape;

/// Default cap on the sequence length for which an L' x L' map may be built.
pub const DEFAULT_MAP_CAP: usize = 8192;

/// One attention head's worth of inputs on a token grid.
#[derive(Debug, Clone)]
pub struct AttentionProblem<F> {
    pub queries: Array2<F>,
    pub keys: Array2<F>,
    pub values: Array2<F>,
    pub grid: GridShape,
    pub scale: F,
}

impl<F: Real> AttentionProblem<F> {
    pub fn new(
        queries: Array2<F>,
        keys: Array2<F>,
        values: Array2<F>,
        grid: GridShape,
        scale: F,
    ) -> Result<Self> {
        let tokens = grid.token_count();
        if queries.nrows() != tokens || keys.nrows() != tokens || values.nrows() != tokens {
            return Err(Error::Shape(format!(
                "rows ({}, {}, {}) must all equal the token count {tokens}",
                queries.nrows(),
                keys.nrows(),
                values.nrows()
            )));
        }
        if queries.ncols() != keys.ncols() {
            return Err(Error::Shape(format!(
                "query dim {} != key dim {}",
                queries.ncols(),
                keys.ncols()
            )));
        }
        if !(scale > F::zero()) {
            return Err(Error::InvalidInput("scale must be positive".into()));
        }
        Ok(Self { queries, keys, values, grid, scale })
    }

    /// Standard 1/sqrt(D) scaling.
    pub fn with_default_scale(
        queries: Array2<F>,
        keys: Array2<F>,
        values: Array2<F>,
        grid: GridShape,
    ) -> Result<Self> {
        let d = queries.ncols();
        let scale = F::of(1.0 / (d as f64).sqrt());
        Self::new(queries, keys, values, grid, scale)
    }

    pub fn seq_len(&self) -> usize {
        self.grid.token_count()
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        for (name, m) in [
            ("queries", &self.queries),
            ("keys", &self.keys),
            ("values", &self.values),
        ] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{name} contain non-finite values")));
            }
        }
        Ok(())
    }
}

/// Which displacements count as "inside the training window".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub train_window: u64,
    pub mode: PositionMode,
}

impl WindowSpec {
    pub fn from_policy(policy: &DecayPolicy) -> Self {
        Self { train_window: policy.train_window, mode: policy.position_mode }
    }

    pub fn contains(&self, i: usize, j: usize, grid: &GridShape) -> bool {
        let delta = match self.mode {
            PositionMode::TokenIndex => i as i64 - j as i64,
            PositionMode::TemporalFrame => grid.frame_of(i) as i64 - grid.frame_of(j) as i64,
        };
        2 * delta.unsigned_abs() <= self.train_window
    }
}

/// Masking interventions used to probe where attention mass matters.
#[derive(Debug, Clone, PartialEq)]
pub enum InterventionMask {
    /// Mask keys whose frame displacement from the query hits a nonzero
    /// multiple of the period.
    HarmonicPositions { period: f64 },
    /// Mask the given proportion of the largest out-of-window logits per row
    /// (post-decay ranking by default, by distance when `rank_by_position`).
    OutOfWindowProportion { proportion: f64, rank_by_position: bool },
    /// Keep only the leading fraction of each row.
    LeadingFraction { fraction: f64 },
    /// Keep only the trailing fraction of each row.
    TrailingFraction { fraction: f64 },
    /// Keep only in-window keys.
    WindowOnly,
    /// Keep only the largest fraction of each row by original (pre-decay)
    /// score.
    TopFraction { fraction: f64 },
}

impl InterventionMask {
    fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
            Ok(())
        };
        match *self {
            InterventionMask::HarmonicPositions { period } => {
                if !(period > 0.0 && period.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "period must be positive and finite, got {period}"
                    )));
                }
                Ok(())
            }
            InterventionMask::OutOfWindowProportion { proportion, .. } => {
                check("proportion", proportion)
            }
            InterventionMask::LeadingFraction { fraction }
            | InterventionMask::TrailingFraction { fraction }
            | InterventionMask::TopFraction { fraction } => check("fraction", fraction),
            InterventionMask::WindowOnly => Ok(()),
        }
    }

    fn needs_window(&self) -> bool {
        matches!(
            self,
            InterventionMask::OutOfWindowProportion { .. } | InterventionMask::WindowOnly
        )
    }

    fn is_score_dependent(&self) -> bool {
        matches!(
            self,
            InterventionMask::OutOfWindowProportion { .. } | InterventionMask::TopFraction { .. }
        )
    }
}

/// A materialized masking decision: either a static boolean matrix (true =
/// masked) or a rule applied per row once scores are known.
pub enum MaskPlan {
    Static(Array2<bool>),
    PerRowScores(InterventionMask),
}

/// Materialize a mask. Position-based kinds become boolean matrices;
/// score-dependent kinds are deferred to the attention loop.
pub fn build_intervention_mask(
    mask: &InterventionMask,
    grid: &GridShape,
    window: Option<&WindowSpec>,
) -> Result<MaskPlan> {
    mask.validate()?;
    if mask.needs_window() && window.is_none() {
        return Err(Error::InvalidInput(
            "this mask kind needs a training-window context".into(),
        ));
    }
    if mask.is_score_dependent() {
        return Ok(MaskPlan::PerRowScores(mask.clone()));
    }
    let n = grid.token_count();
    let plan = match *mask {
        InterventionMask::HarmonicPositions { period } => {
            // displacements |frame(i) - frame(j)| at round(m * period), m >= 1
            let mut hit = vec![false; grid.t_len];
            let mut m = 1u64;
            loop {
                let pos = (m as f64 * period).round();
                if pos >= grid.t_len as f64 {
                    break;
                }
                if pos >= 1.0 {
                    hit[pos as usize] = true;
                }
                m += 1;
            }
            Array2::from_shape_fn((n, n), |(i, j)| {
                let df = grid.frame_of(i).abs_diff(grid.frame_of(j));
                hit[df]
            })
        }
        InterventionMask::WindowOnly => {
            let win = window.expect("checked above");
            Array2::from_shape_fn((n, n), |(i, j)| !win.contains(i, j, grid))
        }
        InterventionMask::LeadingFraction { fraction } => {
            let keep = (n as f64 * fraction).ceil() as usize;
            Array2::from_shape_fn((n, n), |(_, j)| j >= keep)
        }
        InterventionMask::TrailingFraction { fraction } => {
            let keep = (n as f64 * fraction).ceil() as usize;
            Array2::from_shape_fn((n, n), |(_, j)| j < n - keep.min(n))
        }
        _ => unreachable!("score-dependent kinds handled above"),
    };
    Ok(MaskPlan::Static(plan))
}

/// Apply a score-dependent rule to one row, marking masked keys in `masked`.
fn apply_score_rule<F: Real>(
    rule: &InterventionMask,
    row_index: usize,
    decayed: ArrayView1<'_, F>,
    raw_scaled: ArrayView1<'_, F>,
    grid: &GridShape,
    window: Option<&WindowSpec>,
    masked: &mut [bool],
) {
    let n = decayed.len();
    match *rule {
        InterventionMask::OutOfWindowProportion { proportion, rank_by_position } => {
            let win = window.expect("validated at plan time");
            let mut out: Vec<usize> =
                (0..n).filter(|&j| !win.contains(row_index, j, grid)).collect();
            let k = (proportion * out.len() as f64).round() as usize;
            if rank_by_position {
                out.sort_by(|&a, &b| {
                    let da = a.abs_diff(row_index);
                    let db = b.abs_diff(row_index);
                    db.cmp(&da).then(a.cmp(&b))
                });
            } else {
                out.sort_by(|&a, &b| {
                    decayed[b].partial_cmp(&decayed[a]).unwrap().then(a.cmp(&b))
                });
            }
            for &j in out.iter().take(k) {
                masked[j] = true;
            }
        }
        InterventionMask::TopFraction { fraction } => {
            let keep = (n as f64 * fraction).ceil() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                raw_scaled[b].partial_cmp(&raw_scaled[a]).unwrap().then(a.cmp(&b))
            });
            for &j in order.iter().skip(keep) {
                masked[j] = true;
            }
        }
        _ => unreachable!("only score-dependent kinds reach here"),
    }
}

/// Per-row dispersion diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowStats {
    pub in_window_mass: f64,
    pub entropy: f64,
}

/// Attention output; the map and row stats are populated on request.
#[derive(Debug, Clone)]
pub struct AttentionOutput<F> {
    pub output: Array2<F>,
    pub map: Option<Array2<F>>,
    pub row_stats: Option<Vec<RowStats>>,
    /// Rows whose keys were all masked; their output is zero.
    pub all_masked_rows: Vec<usize>,
}

/// Knobs for the reference path.
#[derive(Debug, Clone)]
pub struct ReferenceOptions {
    pub keep_map: bool,
    /// Hard cap on L' for the O(L'^2) map; larger problems must go tiled.
    pub map_cap: usize,
    /// Window context for row stats when no policy supplies one.
    pub window: Option<WindowSpec>,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { keep_map: false, map_cap: DEFAULT_MAP_CAP, window: None }
    }
}

impl ReferenceOptions {
    pub fn keeping_map() -> Self {
        Self { keep_map: true, ..Self::default() }
    }
}

/// In-window probability mass and Shannon entropy of one attention row.
/// The row is expected to sum to 1; `window_member[j]` marks in-window keys.
pub fn row_dispersion_stats(row: &[f64], window_member: &[bool]) -> RowStats {
    debug_assert_eq!(row.len(), window_member.len());
    let mut mass = 0.0;
    let mut entropy = 0.0;
    for (&p, &inside) in row.iter().zip(window_member) {
        if inside {
            mass += p;
        }
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    RowStats { in_window_mass: mass, entropy }
}

/// Exact attention: logits, scaling, sign-gated decay, masking, row softmax,
/// output. Deterministic for a fixed input; masked entries become -inf so
/// shapes never change.
pub fn attend_reference<F: Real>(
    prob: &AttentionProblem<F>,
    policy: Option<&DecayPolicy>,
    mask: Option<&InterventionMask>,
    opts: &ReferenceOptions,
) -> Result<AttentionOutput<F>> {
    let n = prob.seq_len();
    if n > opts.map_cap {
        return Err(Error::Resource(format!(
            "sequence length {n} exceeds the reference cap {}; use the tiled path",
            opts.map_cap
        )));
    }
    prob.check_finite()?;
    if let Some(policy) = policy {
        policy.check_grid(&prob.grid)?;
    }

    let window = policy.map(WindowSpec::from_policy).or(opts.window);
    let plan = match mask {
        Some(m) => Some(build_intervention_mask(m, &prob.grid, window.as_ref())?),
        None => None,
    };

    // S = Q K^T, scaled. The sign gate reads these scaled logits; the scale
    // is positive so the sign matches the raw logits exactly.
    let mut scores = prob.queries.dot(&prob.keys.t());
    scores.mapv_inplace(|s| s * prob.scale);
    let raw_scaled = if matches!(plan, Some(MaskPlan::PerRowScores(InterventionMask::TopFraction { .. })))
    {
        Some(scores.clone())
    } else {
        None
    };

    if let Some(policy) = policy {
        for i in 0..n {
            let mut row = scores.row_mut(i);
            let signs: Vec<bool> = row.iter().map(|s| *s >= F::zero()).collect();
            let factors = policy.factor_row(i, 0..n, &signs, &prob.grid)?;
            for (s, f) in row.iter_mut().zip(factors) {
                *s = *s * F::of(f);
            }
        }
    }

    let mut all_masked_rows = Vec::new();
    let d_v = prob.values.ncols();
    let mut output = Array2::<F>::zeros((n, d_v));
    let mut map = opts.keep_map.then(|| Array2::<F>::zeros((n, n)));
    let mut row_stats = window.map(|_| Vec::with_capacity(n));

    let mut masked = vec![false; n];
    let mut probs = vec![0.0f64; n];
    for i in 0..n {
        masked.fill(false);
        match &plan {
            Some(MaskPlan::Static(m)) => {
                for j in 0..n {
                    masked[j] = m[(i, j)];
                }
            }
            Some(MaskPlan::PerRowScores(rule)) => apply_score_rule(
                rule,
                i,
                scores.row(i),
                raw_scaled.as_ref().map(|r| r.row(i)).unwrap_or_else(|| scores.row(i)),
                &prob.grid,
                window.as_ref(),
                &mut masked,
            ),
            None => {}
        }

        let row = scores.row(i);
        let mut max = F::neg_infinity();
        for j in 0..n {
            if !masked[j] && row[j] > max {
                max = row[j];
            }
        }
        if max == F::neg_infinity() {
            all_masked_rows.push(i);
            probs.fill(0.0);
        } else {
            let mut denom = 0.0f64;
            for j in 0..n {
                let e = if masked[j] {
                    0.0
                } else {
                    (row[j] - max).as_f64().exp()
                };
                probs[j] = e;
                denom += e;
            }
            for p in probs.iter_mut() {
                *p /= denom;
            }
        }

        for (j, &p) in probs.iter().enumerate() {
            if p != 0.0 {
                let weight = F::of(p);
                for (out, &v) in output.row_mut(i).iter_mut().zip(prob.values.row(j)) {
                    *out = *out + weight * v;
                }
            }
        }
        if let Some(map) = map.as_mut() {
            for j in 0..n {
                map[(i, j)] = F::of(probs[j]);
            }
        }
        if let (Some(stats), Some(win)) = (row_stats.as_mut(), window.as_ref()) {
            let member: Vec<bool> = (0..n).map(|j| win.contains(i, j, &prob.grid)).collect();
            stats.push(row_dispersion_stats(&probs, &member));
        }
    }

    Ok(AttentionOutput { output, map, row_stats, all_masked_rows })
}
