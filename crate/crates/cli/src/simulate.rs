//! `simulate`: plant a spectral pattern, run the attention sweep over decay
//! factors (and optionally masking proportions), and emit dispersion stats
//! plus the detected period as CSV.

use std::path::PathBuf;

use clap::Args;
use focal_core::attention::{
    attend_reference, AttentionProblem, InterventionMask, ReferenceOptions, RowStats,
};
use focal_core::decay::{DecayPolicy, DecayStrategy};
use focal_core::rope::RopeSpec;
use focal_core::spectrum::detect_period_in_samples;
use focal_core::synth::{make_problem, plant_pattern, rotate_qk, PlantSpec, ValueMode};
use focal_core::tensorio::write_array2;
use focal_core::tiled::{attend_tiled_with, TileConfig, TiledOptions};
use focal_core::Error;
use serde::Deserialize;

use crate::common::{emit, read_config, PolicyFlags};
use crate::exit::{CmdResult, Failure};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment description (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Use the tiled path (required beyond the reference cap).
    #[arg(long)]
    pub tiled: bool,
    /// Write each sweep point's full attention map into this directory
    /// (reference path only).
    #[arg(long, value_name = "DIR")]
    pub save_maps: Option<PathBuf>,
    #[command(flatten)]
    pub policy_flags: PolicyFlags,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    rope: RopeSpec,
    plant: PlantSpec,
    policy: DecayPolicy,
    /// Constant decay factors to sweep.
    alphas: Vec<f64>,
    /// Optional out-of-window masking proportions to sweep (at the policy's
    /// configured strategy).
    #[serde(default)]
    mask_proportions: Vec<f64>,
    #[serde(default = "default_value_dim")]
    value_dim: usize,
    #[serde(default)]
    value_seed: u64,
    /// Mismatch tolerance for the period scan over binned logits; defaults
    /// to 1e-9 times the planted amplitude sum.
    #[serde(default)]
    period_eps: Option<f64>,
}

fn default_value_dim() -> usize {
    8
}

/// Mean raw logit per non-negative frame displacement at equal spatial
/// locations; the signal whose period the scan inspects.
fn binned_mean_logits(prob: &AttentionProblem<f64>) -> Vec<f64> {
    let grid = prob.grid;
    let mut sums = vec![0.0; grid.t_len];
    let mut counts = vec![0usize; grid.t_len];
    for h in 0..grid.h_len {
        for w in 0..grid.w_len {
            let rows: Vec<usize> = (0..grid.t_len).map(|t| grid.flatten(t, h, w)).collect();
            for (t1, &i) in rows.iter().enumerate() {
                for (t2, &j) in rows.iter().enumerate().skip(t1) {
                    let dot: f64 = prob
                        .queries
                        .row(i)
                        .iter()
                        .zip(prob.keys.row(j))
                        .map(|(a, b)| a * b)
                        .sum();
                    sums[t2 - t1] += dot;
                    counts[t2 - t1] += 1;
                }
            }
        }
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

fn mean_stats(stats: &[RowStats]) -> (f64, f64) {
    let n = stats.len() as f64;
    let mass = stats.iter().map(|s| s.in_window_mass).sum::<f64>() / n;
    let entropy = stats.iter().map(|s| s.entropy).sum::<f64>() / n;
    (mass, entropy)
}

fn run_point(
    prob: &AttentionProblem<f64>,
    policy: &DecayPolicy,
    mask: Option<&InterventionMask>,
    args: &SimulateArgs,
    label: &str,
) -> Result<(f64, f64), Failure> {
    if args.tiled {
        if mask.is_some() {
            return Err(Failure::config(
                "mask sweeps need the reference path (drop --tiled)",
            ));
        }
        let opts = TiledOptions { collect_row_stats: true, ..Default::default() };
        let out = attend_tiled_with(prob, Some(policy), TileConfig::new(64, 64)?, &opts)?;
        Ok(mean_stats(&out.row_stats.expect("stats requested")))
    } else {
        let opts = ReferenceOptions { keep_map: args.save_maps.is_some(), ..Default::default() };
        let out = match attend_reference(prob, Some(policy), mask, &opts) {
            Ok(out) => out,
            Err(Error::Resource(msg)) => {
                return Err(Failure {
                    code: crate::exit::RESOURCE,
                    message: format!("{msg} (re-run with --tiled)"),
                })
            }
            Err(e) => return Err(e.into()),
        };
        if let (Some(dir), Some(map)) = (&args.save_maps, &out.map) {
            std::fs::create_dir_all(dir)?;
            write_array2(&dir.join(format!("map_{label}.tnsr")), map)?;
        }
        Ok(mean_stats(&out.row_stats.expect("policy implies stats")))
    }
}

pub fn run(args: &SimulateArgs) -> CmdResult {
    let config: SimulateConfig = read_config(&args.config)?;
    let spec: &RopeSpec = &config.rope;
    let grid = config.plant.grid;

    let (q, k) = plant_pattern(&config.plant, spec)?;
    let (qr, kr) = rotate_qk(&q, &k, &grid, spec)?;
    let prob = make_problem(
        qr,
        kr,
        ValueMode::Random { d_v: config.value_dim },
        grid,
        config.value_seed,
    )?;

    let base_policy = args.policy_flags.apply_over(&config.policy)?;
    base_policy.check_grid(&grid).map_err(Failure::from)?;

    let eps = config
        .period_eps
        .unwrap_or_else(|| 1e-9 * config.plant.target_amps.iter().sum::<f64>().max(1.0));
    let signal = binned_mean_logits(&prob);
    let detected = detect_period_in_samples(&signal, eps)?;
    let period_cell = detected.map_or(String::new(), |p| p.to_string());

    let mut csv = String::from("kind,alpha_or_p,mean_in_window_mass,mean_entropy,detected_period\n");
    for &alpha in &config.alphas {
        let mut policy = base_policy.clone();
        policy.strategy = DecayStrategy::Constant { alpha };
        let policy = serde_json::from_value::<DecayPolicy>(serde_json::to_value(&policy).unwrap())
            .map_err(|e| Failure::config(format!("alpha {alpha}: {e}")))?;
        let (mass, entropy) =
            run_point(&prob, &policy, None, args, &format!("alpha_{alpha}"))?;
        csv.push_str(&format!("alpha,{alpha},{mass:.12},{entropy:.12},{period_cell}\n"));
    }
    for &p in &config.mask_proportions {
        let mask = InterventionMask::OutOfWindowProportion {
            proportion: p,
            rank_by_position: false,
        };
        let (mass, entropy) =
            run_point(&prob, &base_policy, Some(&mask), args, &format!("p_{p}"))?;
        csv.push_str(&format!("mask_p,{p},{mass:.12},{entropy:.12},{period_cell}\n"));
    }
    emit(&args.out, &csv)
}
