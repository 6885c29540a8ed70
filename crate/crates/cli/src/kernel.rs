//! `kernel-check`: sweep random (problem, policy, tile) triples and compare
//! the tiled kernel against the reference, printing a per-case error table.
//! Nonzero exit when any case exceeds tolerance; the worst instance is
//! dumped for replay when an output directory is given.

use std::path::PathBuf;

use clap::Args;
use focal_core::attention::{attend_reference, AttentionProblem, ReferenceOptions};
use focal_core::decay::{DecayPolicy, DecayStrategy, PositionMode};
use focal_core::rope::GridShape;
use focal_core::synth::problem_to_f32;
use focal_core::tensorio::write_array2;
use focal_core::tiled::{attend_tiled_with, FaultInjection, TileConfig, TiledOptions};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::common::{emit, DtypeArg};
use crate::exit::{CmdResult, Failure};

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Number of random cases.
    #[arg(long, default_value_t = 50)]
    pub cases: usize,
    /// Upper bound on the sequence length sampled (log-uniform from 64).
    #[arg(long, default_value_t = 1024)]
    pub max_seq: usize,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
    /// Max-abs-error tolerance; defaults to 1e-10 (f64) or 1e-3 (f32).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Corrupt one decay factor to prove the check can fail.
    #[arg(long)]
    pub inject_fault: bool,
    /// Directory for the worst-case dump on failure.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

struct Case {
    prob: AttentionProblem<f64>,
    policy: DecayPolicy,
    cfg: TileConfig,
}

fn random_case(rng: &mut ChaCha8Rng, max_seq: usize) -> Case {
    let (h, w) = *[(1usize, 1usize), (2, 2), (4, 2), (4, 4)].choose(rng).unwrap();
    let hw = h * w;
    let lo = (64.0 / hw as f64).max(2.0).ln();
    let hi = (max_seq as f64 / hw as f64).max(4.0).ln();
    let t_len = ((lo + rng.random::<f64>() * (hi - lo)).exp().round() as usize).max(2);
    let grid = GridShape::new(t_len, h, w).unwrap();
    let n = grid.token_count();
    let d = *[16usize, 32, 64].choose(rng).unwrap();
    let d_v = *[8usize, 16, 32].choose(rng).unwrap();
    let q = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
    let k = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
    let v = Array2::from_shape_fn((n, d_v), |_| rng.random::<f64>() * 2.0 - 1.0);
    let prob = AttentionProblem::with_default_scale(q, k, v, grid).unwrap();

    let mode = if rng.random::<f64>() < 0.75 {
        PositionMode::TemporalFrame
    } else {
        PositionMode::TokenIndex
    };
    let seq_len = match mode {
        PositionMode::TemporalFrame => t_len as u64,
        PositionMode::TokenIndex => n as u64,
    };
    let alpha = 0.5 + rng.random::<f64>() * 0.5;
    let strategy = match rng.random_range(0..3) {
        0 => DecayStrategy::Constant { alpha },
        1 => DecayStrategy::Linear { alpha1: alpha, alpha2: (alpha + 0.05).min(1.0) },
        _ => DecayStrategy::Parabolic { alpha1: alpha, alpha2: (alpha + 0.05).min(1.0) },
    };
    let mut policy = DecayPolicy::new(
        strategy,
        rng.random_range(1..=seq_len.max(2)),
        seq_len,
        mode,
    )
    .unwrap();
    if rng.random::<bool>() && seq_len >= 3 {
        let beta = 0.2 + rng.random::<f64>() * (alpha - 0.2);
        policy = policy
            .with_risk_band(beta, rng.random_range(2..=seq_len) as f64, rng.random_range(0..=4))
            .unwrap();
    }

    let sizes = [16usize, 32, 64, 128];
    let cfg = TileConfig::new(*sizes.choose(rng).unwrap(), *sizes.choose(rng).unwrap()).unwrap();
    Case { prob, policy, cfg }
}

fn dump_case(dir: &PathBuf, case: &Case) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    write_array2(&dir.join("queries.tnsr"), &case.prob.queries)?;
    write_array2(&dir.join("keys.tnsr"), &case.prob.keys)?;
    write_array2(&dir.join("values.tnsr"), &case.prob.values)?;
    let meta = serde_json::json!({
        "grid": case.prob.grid,
        "scale": case.prob.scale,
        "policy": case.policy,
        "b_q": case.cfg.b_q,
        "b_kv": case.cfg.b_kv,
    });
    std::fs::write(dir.join("case.json"), serde_json::to_string_pretty(&meta).unwrap())?;
    Ok(())
}

pub fn run(args: &KernelArgs) -> CmdResult {
    let tol = args.tol.unwrap_or(match args.dtype {
        DtypeArg::F64 => 1e-10,
        DtypeArg::F32 => 1e-3,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let ref_opts = ReferenceOptions::default();

    let mut table = String::from("case,L_prime,D,b_q,b_kv,max_abs_err\n");
    let mut worst = 0.0f64;
    let mut worst_case: Option<Case> = None;
    for index in 0..args.cases {
        let case = random_case(&mut rng, args.max_seq);
        let tiled_opts = TiledOptions {
            fault: args
                .inject_fault
                .then(|| FaultInjection { query: 0, key: case.prob.seq_len() - 1 }),
            ..Default::default()
        };
        let err = match args.dtype {
            DtypeArg::F64 => {
                let reference =
                    attend_reference(&case.prob, Some(&case.policy), None, &ref_opts)?;
                let tiled =
                    attend_tiled_with(&case.prob, Some(&case.policy), case.cfg, &tiled_opts)?;
                reference
                    .output
                    .iter()
                    .zip(tiled.output.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            }
            DtypeArg::F32 => {
                let prob32 = problem_to_f32(&case.prob);
                let reference = attend_reference(&prob32, Some(&case.policy), None, &ref_opts)?;
                let tiled =
                    attend_tiled_with(&prob32, Some(&case.policy), case.cfg, &tiled_opts)?;
                reference
                    .output
                    .iter()
                    .zip(tiled.output.iter())
                    .map(|(a, b)| (a - b).abs() as f64)
                    .fold(0.0, f64::max)
            }
        };
        table.push_str(&format!(
            "{index},{},{},{},{},{err:.3e}\n",
            case.prob.seq_len(),
            case.prob.queries.ncols(),
            case.cfg.b_q,
            case.cfg.b_kv
        ));
        if err >= worst {
            worst = err;
            worst_case = Some(case);
        }
    }

    table.push_str(&format!("# worst {worst:.3e}, tolerance {tol:.1e}\n"));
    if worst <= tol {
        table.push_str("# PASS\n");
        emit(&None, &table)?;
        Ok(())
    } else {
        table.push_str("# FAIL\n");
        emit(&None, &table)?;
        if let (Some(dir), Some(case)) = (&args.out, &worst_case) {
            dump_case(dir, case)?;
            eprintln!("worst case dumped to {}", dir.display());
        }
        Err(Failure::tolerance(format!(
            "max abs error {worst:.3e} exceeds {tol:.1e}"
        )))
    }
}
