//! `bench`: wall-time and auxiliary-memory table for the reference and tiled
//! paths across sequence lengths, with and without a decay policy.
//! Informational, not gating; accuracy vs the reference rides along where
//! the reference is feasible.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use focal_core::attention::{attend_reference, AttentionProblem, ReferenceOptions, DEFAULT_MAP_CAP};
use focal_core::decay::DecayPolicy;
use focal_core::rope::GridShape;
use focal_core::synth::problem_to_f32;
use focal_core::tiled::{attend_tiled, TileConfig};
use focal_core::Error;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::common::{emit, DtypeArg, PolicyFlags};
use crate::exit::CmdResult;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Sequence lengths to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 1024, 4096])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub b_q: usize,
    #[arg(long, default_value_t = 64)]
    pub b_kv: usize,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 16)]
    pub d_v: usize,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    /// Reference-path cap; larger sizes get a resource-error row.
    #[arg(long, default_value_t = DEFAULT_MAP_CAP)]
    pub map_cap: usize,
    #[command(flatten)]
    pub policy_flags: PolicyFlags,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn policy_for(args: &BenchArgs, t_len: u64) -> DecayPolicy {
    if args.policy_flags.any_set() {
        args.policy_flags
            .build(t_len)
            .unwrap_or_else(|e| panic!("bad policy flags: {}", e.message))
    } else {
        DecayPolicy::constant(0.9, (t_len / 3).max(1), t_len)
            .unwrap()
            .with_risk_band(0.6, (t_len as f64 / 4.0).max(2.0), 4)
            .unwrap()
    }
}

pub fn run(args: &BenchArgs) -> CmdResult {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let cfg = TileConfig::new(args.b_q, args.b_kv)?;
    let mut csv = String::from(
        "path,policy,L_prime,b_q,b_kv,dtype,wall_time_ms,peak_aux_bytes,max_abs_err_vs_ref,note\n",
    );
    let dtype_name = match args.dtype {
        DtypeArg::F64 => "f64",
        DtypeArg::F32 => "f32",
    };

    for &n in &args.sizes {
        let grid = GridShape::temporal(n).unwrap();
        let q = Array2::from_shape_fn((n, args.d), |_| rng.random::<f64>() - 0.5);
        let k = Array2::from_shape_fn((n, args.d), |_| rng.random::<f64>() - 0.5);
        let v = Array2::from_shape_fn((n, args.d_v), |_| rng.random::<f64>() - 0.5);
        let prob = AttentionProblem::with_default_scale(q, k, v, grid).unwrap();
        let policy = policy_for(args, n as u64);
        let ref_opts = ReferenceOptions { map_cap: args.map_cap, ..Default::default() };

        match args.dtype {
            DtypeArg::F64 => bench_rows(&mut csv, &prob, &policy, cfg, &ref_opts, dtype_name)?,
            DtypeArg::F32 => {
                let prob32 = problem_to_f32(&prob);
                bench_rows(&mut csv, &prob32, &policy, cfg, &ref_opts, dtype_name)?
            }
        }
    }
    emit(&args.out, &csv)
}

fn bench_rows<F: focal_core::num::Real>(
    csv: &mut String,
    prob: &AttentionProblem<F>,
    policy: &DecayPolicy,
    cfg: TileConfig,
    ref_opts: &ReferenceOptions,
    dtype: &str,
) -> CmdResult {
    let n = prob.seq_len();
    let mut reference_out = None;

    for use_policy in [false, true] {
        let pol = use_policy.then_some(policy);
        let pol_name = if use_policy { "constant+band" } else { "none" };

        let start = Instant::now();
        let reference = attend_reference(prob, pol, None, ref_opts);
        let ref_ms = start.elapsed().as_secs_f64() * 1e3;
        match reference {
            Ok(out) => {
                // the reference's dominant transient is the L' x L' logit matrix
                let aux = n * n * std::mem::size_of::<F>();
                csv.push_str(&format!(
                    "reference,{pol_name},{n},,,{dtype},{ref_ms:.2},{aux},0.0,\n"
                ));
                if use_policy {
                    reference_out = Some(out.output);
                }
            }
            Err(Error::Resource(_)) => {
                csv.push_str(&format!(
                    "reference,{pol_name},{n},,,{dtype},,,,resource-error: above cap {}\n",
                    ref_opts.map_cap
                ));
            }
            Err(e) => return Err(e.into()),
        }
    }

    for use_policy in [false, true] {
        let pol = use_policy.then_some(policy);
        let pol_name = if use_policy { "constant+band" } else { "none" };
        let start = Instant::now();
        let tiled = attend_tiled(prob, pol, cfg)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let err_cell = match (&reference_out, use_policy) {
            (Some(reference), true) => {
                let err = reference
                    .iter()
                    .zip(tiled.output.iter())
                    .map(|(a, b)| (*a - *b).abs().as_f64())
                    .fold(0.0, f64::max);
                format!("{err:.3e}")
            }
            _ => String::new(),
        };
        csv.push_str(&format!(
            "tiled,{pol_name},{n},{},{},{dtype},{ms:.2},{},{err_cell},\n",
            cfg.b_q, cfg.b_kv, tiled.peak_aux_bytes
        ));
    }
    Ok(())
}
