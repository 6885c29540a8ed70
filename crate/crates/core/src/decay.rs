//! Position-dependent decay of attention logits.
//!
//! Out-of-window query/key pairs with non-negative logits get their logit
//! multiplied by a factor below one; pairs inside the training window, and
//! all negative logits, are left alone. Displacements falling in a band of
//! half-width `gamma` around a nonzero multiple of the period receive the
//! stronger factor `beta`. Shared by the reference and tiled attention paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::GridShape;

/// What `i - j` means: raw flat token indices, or the temporal frames the
/// tokens live in. The training window and the period are frame quantities
/// for 3-D grids, so temporal-frame is the default there; token-index is the
/// natural reading for 1-D sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionMode {
    #[serde(rename = "token-index")]
    TokenIndex,
    #[serde(rename = "temporal-frame")]
    TemporalFrame,
}

/// Shape of the out-of-window decay as a function of `|i - j| / seq_len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DecayStrategy {
    Constant { alpha: f64 },
    Linear { alpha1: f64, alpha2: f64 },
    Parabolic { alpha1: f64, alpha2: f64 },
}

impl DecayStrategy {
    fn validate(&self) -> Result<()> {
        let check = |name: &str, a: f64| -> Result<()> {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidPolicy(format!(
                    "{name} must lie in (0, 1], got {a}"
                )));
            }
            Ok(())
        };
        match *self {
            DecayStrategy::Constant { alpha } => check("alpha", alpha),
            DecayStrategy::Linear { alpha1, alpha2 }
            | DecayStrategy::Parabolic { alpha1, alpha2 } => {
                check("alpha1", alpha1)?;
                check("alpha2", alpha2)
            }
        }
    }

    /// Smallest factor the strategy can produce over any displacement.
    fn min_factor(&self) -> f64 {
        match *self {
            DecayStrategy::Constant { alpha } => alpha,
            DecayStrategy::Linear { alpha1, alpha2 }
            | DecayStrategy::Parabolic { alpha1, alpha2 } => alpha1.min(alpha2),
        }
    }
}

/// Everything needed to evaluate the decay factor for a query/key pair.
///
/// Immutable after construction and cheap to share across workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DecayPolicyRaw")]
pub struct DecayPolicy {
    pub strategy: DecayStrategy,
    pub beta: Option<f64>,
    pub gamma: u32,
    pub period: Option<f64>,
    pub train_window: u64,
    pub seq_len: u64,
    pub position_mode: PositionMode,
    pub first_frame_factor: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecayPolicyRaw {
    strategy: DecayStrategy,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    gamma: u32,
    #[serde(default)]
    period: Option<f64>,
    train_window: u64,
    seq_len: u64,
    position_mode: PositionMode,
    #[serde(default)]
    first_frame_factor: Option<f64>,
}

impl TryFrom<DecayPolicyRaw> for DecayPolicy {
    type Error = Error;

    fn try_from(raw: DecayPolicyRaw) -> Result<Self> {
        let policy = DecayPolicy {
            strategy: raw.strategy,
            beta: raw.beta,
            gamma: raw.gamma,
            period: raw.period,
            train_window: raw.train_window,
            seq_len: raw.seq_len,
            position_mode: raw.position_mode,
            first_frame_factor: raw.first_frame_factor,
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl DecayPolicy {
    pub fn new(
        strategy: DecayStrategy,
        train_window: u64,
        seq_len: u64,
        position_mode: PositionMode,
    ) -> Result<Self> {
        let policy = Self {
            strategy,
            beta: None,
            gamma: 0,
            period: None,
            train_window,
            seq_len,
            position_mode,
            first_frame_factor: None,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// Constant decay in temporal-frame mode, the common configuration.
    pub fn constant(alpha: f64, train_window: u64, seq_len: u64) -> Result<Self> {
        Self::new(
            DecayStrategy::Constant { alpha },
            train_window,
            seq_len,
            PositionMode::TemporalFrame,
        )
    }

    /// Attach the stronger decay `beta` on bands of half-width `gamma` around
    /// nonzero multiples of `period`.
    pub fn with_risk_band(mut self, beta: f64, period: f64, gamma: u32) -> Result<Self> {
        self.beta = Some(beta);
        self.period = Some(period);
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    /// Override the plain out-of-window factor for pairs touching frame 0
    /// (temporal-frame mode only).
    pub fn with_first_frame_factor(mut self, factor: f64) -> Result<Self> {
        self.first_frame_factor = Some(factor);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.train_window == 0 {
            return Err(Error::InvalidPolicy("train_window must be positive".into()));
        }
        if self.seq_len == 0 {
            return Err(Error::InvalidPolicy("seq_len must be positive".into()));
        }
        if let Some(beta) = self.beta {
            let period = self.period.ok_or_else(|| {
                Error::InvalidPolicy("beta requires a period".into())
            })?;
            if !(period > 0.0 && period.is_finite()) {
                return Err(Error::InvalidPolicy(format!(
                    "period must be positive and finite, got {period}"
                )));
            }
            // beta <= min effective alpha; equality admits the identity
            // policy alpha = beta = 1.
            if !(beta > 0.0 && beta <= self.strategy.min_factor()) {
                return Err(Error::InvalidPolicy(format!(
                    "beta must satisfy 0 < beta <= alpha at every displacement, got {beta}"
                )));
            }
        }
        if let Some(f) = self.first_frame_factor {
            if !f.is_finite() {
                return Err(Error::InvalidPolicy(
                    "first_frame_factor must be finite".into(),
                ));
            }
        }
        Ok(())
    }

    /// Strategy factor at a displacement, before window/sign/risk rules.
    pub fn base_factor(&self, delta: i64) -> f64 {
        let u = delta.unsigned_abs() as f64 / self.seq_len as f64;
        match self.strategy {
            DecayStrategy::Constant { alpha } => alpha,
            DecayStrategy::Linear { alpha1, alpha2 } => alpha1 * u + alpha2 * (1.0 - u),
            DecayStrategy::Parabolic { alpha1, alpha2 } => {
                alpha1 * u * u + alpha2 * (1.0 - u * u)
            }
        }
    }

    /// True when the displacement lies within the training window, inclusive
    /// at `|delta| = train_window / 2`.
    pub fn in_window(&self, delta: i64) -> bool {
        2 * delta.unsigned_abs() <= self.train_window
    }

    /// True when the displacement falls within `gamma` of a nonzero multiple
    /// of the rounded period (bands sit symmetrically at +/- m*T).
    pub fn in_risk_band(&self, delta: i64) -> bool {
        let Some(period) = self.period else { return false };
        if self.beta.is_none() {
            return false;
        }
        let rounded = period.round().max(1.0) as u64;
        let abs = delta.unsigned_abs();
        let m = (abs as f64 / rounded as f64).round().max(1.0) as u64;
        abs.abs_diff(m * rounded) <= u64::from(self.gamma)
    }

    /// Decay factor for a displacement. Precedence: training window or a
    /// negative logit keeps the factor at 1, then the risk band applies
    /// `beta`, then the strategy's base factor.
    pub fn factor_at(&self, delta: i64, logit_nonneg: bool) -> f64 {
        self.factor_at_full(delta, logit_nonneg, false)
    }

    /// As [`factor_at`](Self::factor_at), with the first-frame override: when
    /// the pair touches frame 0 and an override is configured, it replaces
    /// the base factor (but not the window, sign, or risk rules).
    pub fn factor_at_full(
        &self,
        delta: i64,
        logit_nonneg: bool,
        touches_first_frame: bool,
    ) -> f64 {
        if !logit_nonneg || self.in_window(delta) {
            return 1.0;
        }
        if self.in_risk_band(delta) {
            return self.beta.expect("risk band implies beta");
        }
        if touches_first_frame {
            if let Some(f) = self.first_frame_factor {
                return f;
            }
        }
        self.base_factor(delta)
    }

    /// Vectorized factors for one query row over `key_range`, as consumed by
    /// the tiled kernel block by block. `signs[k]` is true when the raw logit
    /// against key `key_range.start + k` is non-negative.
    pub fn factor_row(
        &self,
        query_index: usize,
        key_range: std::ops::Range<usize>,
        signs: &[bool],
        grid: &GridShape,
    ) -> Result<Vec<f64>> {
        let count = grid.token_count();
        if query_index >= count || key_range.end > count {
            return Err(Error::Bounds(format!(
                "query {query_index} / keys {key_range:?} exceed token count {count}"
            )));
        }
        if signs.len() != key_range.len() {
            return Err(Error::Shape(format!(
                "signs length {} does not match key range length {}",
                signs.len(),
                key_range.len()
            )));
        }
        let use_first_frame =
            self.first_frame_factor.is_some() && self.position_mode == PositionMode::TemporalFrame;
        let query_frame = grid.frame_of(query_index);
        Ok(key_range
            .clone()
            .zip(signs)
            .map(|(j, &nonneg)| {
                let delta = displacement_unchecked(query_index, j, grid, self.position_mode);
                let touches =
                    use_first_frame && (query_frame == 0 || grid.frame_of(j) == 0);
                self.factor_at_full(delta, nonneg, touches)
            })
            .collect())
    }

    /// Sequence length (in the policy's position unit) implied by a grid.
    pub fn expected_seq_len(&self, grid: &GridShape) -> u64 {
        match self.position_mode {
            PositionMode::TokenIndex => grid.token_count() as u64,
            PositionMode::TemporalFrame => grid.t_len as u64,
        }
    }

    /// Check that the policy's `seq_len` matches the grid it is applied to.
    pub fn check_grid(&self, grid: &GridShape) -> Result<()> {
        let expected = self.expected_seq_len(grid);
        if self.seq_len != expected {
            return Err(Error::InvalidPolicy(format!(
                "policy seq_len {} does not match grid ({} expected for {:?} mode)",
                self.seq_len, expected, self.position_mode
            )));
        }
        Ok(())
    }
}

fn displacement_unchecked(i: usize, j: usize, grid: &GridShape, mode: PositionMode) -> i64 {
    match mode {
        PositionMode::TokenIndex => i as i64 - j as i64,
        PositionMode::TemporalFrame => grid.frame_of(i) as i64 - grid.frame_of(j) as i64,
    }
}

/// Signed displacement `i - j` between two flat token indices, in the chosen
/// position unit.
pub fn displacement(i: usize, j: usize, grid: &GridShape, mode: PositionMode) -> Result<i64> {
    let count = grid.token_count();
    if i >= count || j >= count {
        return Err(Error::Bounds(format!(
            "token indices ({i}, {j}) out of range for {count} tokens"
        )));
    }
    Ok(displacement_unchecked(i, j, grid, mode))
}
