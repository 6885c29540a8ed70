//! Shared plumbing: output sinks, dtype flag, rope-spec sources, and the
//! decay-policy flag bundle that maps 1:1 onto policy fields.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use focal_core::decay::{DecayPolicy, DecayStrategy, PositionMode};
use focal_core::rope::RopeSpec;
use serde::Deserialize;

use crate::exit::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

/// Write to `--out` or stdout.
pub fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            fs::write(path, content)?;
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Where a rope spec comes from: an explicit JSON file or theta/dimension
/// flags.
#[derive(Debug, Args)]
pub struct SpecSource {
    /// Rope spec as a JSON file with explicit frequency lists.
    #[arg(long, value_name = "PATH")]
    pub spec_json: Option<PathBuf>,
    /// Temporal frequency base (exponential schedule).
    #[arg(long)]
    pub theta_t: Option<f64>,
    /// Temporal sub-dimension (even).
    #[arg(long)]
    pub d_t: Option<usize>,
    #[arg(long)]
    pub theta_h: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub d_h: usize,
    #[arg(long)]
    pub theta_w: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub d_w: usize,
}

impl SpecSource {
    pub fn load(&self) -> Result<RopeSpec, Failure> {
        if let Some(path) = &self.spec_json {
            let text = fs::read_to_string(path)?;
            return RopeSpec::from_json(&text)
                .map_err(|e| Failure::config(format!("{}: {e}", path.display())));
        }
        let (Some(theta_t), Some(d_t)) = (self.theta_t, self.d_t) else {
            return Err(Failure::config(
                "provide either --spec-json or --theta-t with --d-t",
            ));
        };
        let theta_h = self.theta_h.unwrap_or(theta_t);
        let theta_w = self.theta_w.unwrap_or(theta_t);
        Ok(RopeSpec::from_thetas(theta_t, theta_h, theta_w, d_t, self.d_h, self.d_w)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Constant,
    Linear,
    Parabolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PositionModeArg {
    TokenIndex,
    TemporalFrame,
}

impl From<PositionModeArg> for PositionMode {
    fn from(arg: PositionModeArg) -> Self {
        match arg {
            PositionModeArg::TokenIndex => PositionMode::TokenIndex,
            PositionModeArg::TemporalFrame => PositionMode::TemporalFrame,
        }
    }
}

/// Decay-policy flags; each maps straight onto one policy field.
#[derive(Debug, Args, Clone)]
pub struct PolicyFlags {
    /// Out-of-window decay factor (constant strategy) or alpha1 for
    /// linear/parabolic.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Second strategy coefficient (linear/parabolic only).
    #[arg(long)]
    pub alpha2: Option<f64>,
    /// Stronger decay applied on the risk bands.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Half-width of the risk bands, in position units.
    #[arg(long)]
    pub gamma: Option<u32>,
    /// Risk-band period.
    #[arg(long)]
    pub period: Option<f64>,
    /// Training window length (the window keeps |i-j| <= window/2).
    #[arg(long)]
    pub window: Option<u64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    pub position_mode: Option<PositionModeArg>,
    /// Override factor for pairs touching frame 0 (temporal mode).
    #[arg(long)]
    pub first_frame_factor: Option<f64>,
}

impl PolicyFlags {
    pub fn any_set(&self) -> bool {
        self.alpha.is_some()
            || self.alpha2.is_some()
            || self.beta.is_some()
            || self.gamma.is_some()
            || self.period.is_some()
            || self.window.is_some()
            || self.strategy.is_some()
            || self.position_mode.is_some()
            || self.first_frame_factor.is_some()
    }

    /// Build a policy from flags alone. `seq_len` comes from the problem.
    pub fn build(&self, seq_len: u64) -> Result<DecayPolicy, Failure> {
        let alpha = self.alpha.unwrap_or(0.9);
        let strategy = match self.strategy.unwrap_or(StrategyArg::Constant) {
            StrategyArg::Constant => DecayStrategy::Constant { alpha },
            StrategyArg::Linear => DecayStrategy::Linear {
                alpha1: alpha,
                alpha2: self.alpha2.unwrap_or(0.95),
            },
            StrategyArg::Parabolic => DecayStrategy::Parabolic {
                alpha1: alpha,
                alpha2: self.alpha2.unwrap_or(0.95),
            },
        };
        let window = self
            .window
            .ok_or_else(|| Failure::config("--window is required when building a policy"))?;
        let mode = self
            .position_mode
            .map(PositionMode::from)
            .unwrap_or(PositionMode::TemporalFrame);
        let mut policy = DecayPolicy::new(strategy, window, seq_len, mode)?;
        if let Some(beta) = self.beta {
            let period = self
                .period
                .ok_or_else(|| Failure::config("--beta requires --period"))?;
            policy = policy.with_risk_band(beta, period, self.gamma.unwrap_or(0))?;
        }
        if let Some(f) = self.first_frame_factor {
            policy = policy.with_first_frame_factor(f)?;
        }
        Ok(policy)
    }

    /// Apply flag overrides on top of a config-supplied policy.
    pub fn apply_over(&self, base: &DecayPolicy) -> Result<DecayPolicy, Failure> {
        let mut raw = serde_json::to_value(base).expect("policy serializes");
        let obj = raw.as_object_mut().unwrap();
        if let Some(strategy) = self.strategy {
            let alpha = self.alpha.unwrap_or(0.9);
            let value = match strategy {
                StrategyArg::Constant => serde_json::json!({"kind": "constant", "alpha": alpha}),
                StrategyArg::Linear => serde_json::json!({
                    "kind": "linear", "alpha1": alpha, "alpha2": self.alpha2.unwrap_or(0.95)
                }),
                StrategyArg::Parabolic => serde_json::json!({
                    "kind": "parabolic", "alpha1": alpha, "alpha2": self.alpha2.unwrap_or(0.95)
                }),
            };
            obj.insert("strategy".into(), value);
        } else if let Some(alpha) = self.alpha {
            obj.insert(
                "strategy".into(),
                serde_json::json!({"kind": "constant", "alpha": alpha}),
            );
        }
        if let Some(beta) = self.beta {
            obj.insert("beta".into(), serde_json::json!(beta));
        }
        if let Some(gamma) = self.gamma {
            obj.insert("gamma".into(), serde_json::json!(gamma));
        }
        if let Some(period) = self.period {
            obj.insert("period".into(), serde_json::json!(period));
        }
        if let Some(window) = self.window {
            obj.insert("train_window".into(), serde_json::json!(window));
        }
        if let Some(mode) = self.position_mode {
            let name = match mode {
                PositionModeArg::TokenIndex => "token-index",
                PositionModeArg::TemporalFrame => "temporal-frame",
            };
            obj.insert("position_mode".into(), serde_json::json!(name));
        }
        if let Some(f) = self.first_frame_factor {
            obj.insert("first_frame_factor".into(), serde_json::json!(f));
        }
        serde_json::from_value(raw).map_err(|e| Failure::config(format!("policy overrides: {e}")))
    }
}
