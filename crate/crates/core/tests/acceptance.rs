//! Acceptance suite. One test per criterion; each prints a pass/fail line
//! (visible with `cargo test --test acceptance -- --nocapture`) and asserts
//! at the stated tolerance.

use focal_core::attention::{attend_reference, AttentionProblem, ReferenceOptions};
use focal_core::decay::{DecayPolicy, DecayStrategy, PositionMode};
use focal_core::repetition::{
    construct_periodic_map, norepeat_score, periodic_output_deviation, FrameSequence,
    NoRepeatParams,
};
use focal_core::rope::{GridShape, RopeSpec};
use focal_core::spectrum::{
    detect_period, estimate_pattern, harmonic_analysis, SpectralPattern, DEFAULT_INTEGER_TOL,
};
use focal_core::synth::{plant_pattern, problem_to_f32, rotate_qk, PlantSpec};
use focal_core::tiled::{attend_tiled, TileConfig};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const TAU: f64 = std::f64::consts::TAU;

fn report(criterion: &str, ok: bool, detail: &str) {
    let tag = if ok { "[PASS]" } else { "[FAIL]" };
    println!("{tag} {criterion}: {detail}");
    assert!(ok, "{criterion}: {detail}");
}

fn max_abs_diff64(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs_diff32(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max)
}

fn random_policy(rng: &mut ChaCha8Rng, grid: &GridShape) -> DecayPolicy {
    let mode = if rng.random::<f64>() < 0.75 {
        PositionMode::TemporalFrame
    } else {
        PositionMode::TokenIndex
    };
    let seq_len = match mode {
        PositionMode::TemporalFrame => grid.t_len as u64,
        PositionMode::TokenIndex => grid.token_count() as u64,
    };
    let lo = 0.5 + rng.random::<f64>() * 0.5;
    let hi = (lo + rng.random::<f64>() * (1.0 - lo)).min(1.0);
    let strategy = match rng.random_range(0..3) {
        0 => DecayStrategy::Constant { alpha: lo },
        1 => DecayStrategy::Linear { alpha1: lo, alpha2: hi },
        _ => DecayStrategy::Parabolic { alpha1: lo, alpha2: hi },
    };
    let window = rng.random_range(1..=seq_len.max(2));
    let mut policy = DecayPolicy::new(strategy, window, seq_len, mode).unwrap();
    if rng.random::<bool>() && seq_len >= 3 {
        let beta = 0.2 + rng.random::<f64>() * (lo - 0.2);
        let period = rng.random_range(2..=seq_len) as f64;
        let gamma = rng.random_range(0..=4);
        policy = policy.with_risk_band(beta, period, gamma).unwrap();
    }
    policy
}

fn random_kernel_case(
    case: usize,
    rng: &mut ChaCha8Rng,
) -> (AttentionProblem<f64>, DecayPolicy, TileConfig) {
    let (h, w) = *[(1, 1), (2, 2), (4, 2), (4, 4)].choose(rng).unwrap();
    let hw = h * w;
    let (t_len, d) = if case == 0 {
        // pin the upper end of the range once
        (4096 / hw, 64)
    } else {
        let lo = (64.0 / hw as f64).max(2.0).ln();
        let hi = (4096.0 / hw as f64).ln();
        let t = (lo + rng.random::<f64>() * (hi - lo)).exp().round() as usize;
        (t.max(2), *[16, 32, 64].choose(rng).unwrap())
    };
    let grid = GridShape::new(t_len, h, w).unwrap();
    let n = grid.token_count();
    let d_v = *[8, 16, 32].choose(rng).unwrap();
    let q = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
    let k = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
    let v = Array2::from_shape_fn((n, d_v), |_| rng.random::<f64>() * 2.0 - 1.0);
    let prob = AttentionProblem::with_default_scale(q, k, v, grid).unwrap();
    let policy = random_policy(rng, &grid);
    let sizes = [16usize, 32, 64, 128];
    let cfg = TileConfig::new(*sizes.choose(rng).unwrap(), *sizes.choose(rng).unwrap()).unwrap();
    (prob, policy, cfg)
}

#[test]
fn acceptance_1_kernel_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_001);
    let opts = ReferenceOptions::default();
    let mut worst64 = 0.0f64;
    let mut worst32 = 0.0f64;
    for case in 0..100 {
        let (prob, policy, cfg) = random_kernel_case(case, &mut rng);
        let reference = attend_reference(&prob, Some(&policy), None, &opts).unwrap();
        let tiled = attend_tiled(&prob, Some(&policy), cfg).unwrap();
        worst64 = worst64.max(max_abs_diff64(&reference.output, &tiled.output));

        let prob32 = problem_to_f32(&prob);
        let reference32 = attend_reference(&prob32, Some(&policy), None, &opts).unwrap();
        let tiled32 = attend_tiled(&prob32, Some(&policy), cfg).unwrap();
        worst32 = worst32.max(max_abs_diff32(&reference32.output, &tiled32.output));
    }
    report(
        "criterion 1 (kernel oracle equivalence)",
        worst64 <= 1e-10 && worst32 <= 1e-3,
        &format!("100 cases: max err f64 {worst64:.3e} (tol 1e-10), f32 {worst32:.3e} (tol 1e-3)"),
    );
}

#[test]
fn acceptance_2_memory_contract() {
    let cfg = TileConfig::new(64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_002);
    let mut sizes = Vec::new();
    for t_len in [1024usize, 4096, 16384] {
        let grid = GridShape::temporal(t_len).unwrap();
        let q = Array2::from_shape_fn((t_len, 16), |_| rng.random::<f64>() - 0.5);
        let k = Array2::from_shape_fn((t_len, 16), |_| rng.random::<f64>() - 0.5);
        let v = Array2::from_shape_fn((t_len, 8), |_| rng.random::<f64>() - 0.5);
        let prob = AttentionProblem::with_default_scale(q, k, v, grid).unwrap();
        let out = attend_tiled(&prob, None, cfg).unwrap();
        sizes.push(out.peak_aux_bytes);
    }
    let flat = sizes[0] == sizes[1] && sizes[1] == sizes[2];
    // far below even the smallest L' x L' buffer on the sweep
    let bounded = sizes[2] < 1024 * 1024 * 8;
    report(
        "criterion 2 (memory contract)",
        flat && bounded,
        &format!(
            "peak aux bytes {:?} across L' = 1024/4096/16384 with 64x64 tiles",
            sizes
        ),
    );
}

#[test]
fn acceptance_3_proposition_1_numerics() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_003);
    let mut worst_residual = 0.0f64;
    let mut worst_peak = 0.0f64;

    for _ in 0..10 {
        let base = 0.05 + rng.random::<f64>() * 1.45;
        let mut multiples: Vec<f64> = vec![1.0];
        while multiples.len() < 4 {
            let m = rng.random_range(2..=12) as f64;
            if !multiples.contains(&m) {
                multiples.push(m);
            }
        }
        let freqs: Vec<f64> = multiples.iter().map(|m| m * base).collect();
        let amps: Vec<f64> = (0..4).map(|_| 0.1 + rng.random::<f64>() * 1.9).collect();
        let offset = rng.random::<f64>() - 0.5;
        let p = SpectralPattern::cosine(freqs, amps, offset).unwrap();
        let total = p.total_amplitude();
        let period = TAU / base;

        for _ in 0..1000 {
            let dt = (rng.random::<f64>() - 0.5) * 20.0 * period;
            let residual = (p.evaluate(dt + period) - p.evaluate(dt)).abs() / total;
            worst_residual = worst_residual.max(residual);
        }
        for m in 1..=5 {
            let peak_err = (p.evaluate(m as f64 * period) - p.peak_value()).abs() / total;
            worst_peak = worst_peak.max(peak_err);
        }
    }

    // fixed inharmonic sets; every ratio at least 0.2 from every integer
    let inharmonic: [&[f64]; 4] = [
        &[1.618_034, 1.0],
        &[2.414_214, 1.414_214, 1.0],
        &[2.718_282, 1.0],
        &[3.302_776, 2.236_068, 1.0],
    ];
    let mut none_found = true;
    for freqs in inharmonic {
        let amps = vec![1.0; freqs.len()];
        let p = SpectralPattern::cosine(freqs.to_vec(), amps, 0.0).unwrap();
        let fundamental = TAU / freqs.last().unwrap();
        let found = detect_period(
            |x| p.evaluate(x),
            10.0 * fundamental,
            fundamental / 64.0,
            1e-6 * p.total_amplitude(),
        )
        .unwrap();
        if found.is_some() {
            none_found = false;
        }
    }

    report(
        "criterion 3 (proposition-1 numerics)",
        worst_residual <= 1e-9 && worst_peak <= 1e-9 && none_found,
        &format!(
            "harmonic residual {worst_residual:.3e}, peak error {worst_peak:.3e} (tol 1e-9 rel), \
             no period detected for 4 inharmonic sets over 10 fundamental periods"
        ),
    );
}

#[test]
fn acceptance_4_paper_anchored_spec_check() {
    let spec = RopeSpec::temporal_only(256.0, 16).unwrap();
    let mut ratios_exact = true;
    for i in 0..8usize {
        if spec.freq_t[i] / spec.freq_t[7] != (1u64 << (7 - i)) as f64 {
            ratios_exact = false;
        }
    }
    let fundamental_period = TAU / spec.freq_t[7];
    let period_ok = (fundamental_period - 804.25).abs() <= 0.5;

    let approx = SpectralPattern::cosine(vec![3.16, 1.0], vec![1.0, 1.0], 0.0).unwrap();
    let class = harmonic_analysis(&approx, DEFAULT_INTEGER_TOL)
        .unwrap()
        .classification;
    let approx_ok = class == focal_core::spectrum::HarmonicClass::ApproximateHarmonic;

    report(
        "criterion 4 (paper-anchored spec check)",
        ratios_exact && period_ok && approx_ok,
        &format!(
            "theta 256 / d 16: ratios exactly 2^(7-i), fundamental period {fundamental_period:.2} \
             within 804.25 +/- 0.5, ratio 3.16 classed {class:?}"
        ),
    );
}

#[test]
fn acceptance_5_periodic_map_theorem_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_005);
    let mut worst_dev = 0.0f64;
    for _ in 0..50 {
        let period = rng.random_range(1..=12usize);
        let l = period * rng.random_range(2..=8usize);
        let seed_row: Vec<f64> = (0..l).map(|_| 0.05 + rng.random::<f64>()).collect();
        let map = construct_periodic_map(l, period, &seed_row).unwrap();
        let values = Array2::from_shape_fn((l, 6), |_| rng.random::<f64>() * 2.0 - 1.0);
        let dev = periodic_output_deviation(&map, &values, period).unwrap();
        worst_dev = worst_dev.max(dev);
    }

    let mut worst_c = 0.0f64;
    for _ in 0..10 {
        let period = rng.random_range(2..=8usize);
        let l = period * rng.random_range(3..=6usize);
        let seed_row: Vec<f64> = (0..l).map(|_| 0.05 + rng.random::<f64>()).collect();
        let mut map = construct_periodic_map(l, period, &seed_row).unwrap();
        let values = Array2::from_shape_fn((l, 5), |_| rng.random::<f64>() * 2.0 - 1.0);
        let eps = 1e-6;
        let j = rng.random_range(0..l);
        let i = rng.random_range(0..l);
        map[(i, j)] += eps;
        let dev = periodic_output_deviation(&map, &values, period).unwrap();
        let row_norm = values.row(j).iter().map(|x| x * x).sum::<f64>().sqrt();
        worst_c = worst_c.max(dev / (eps * row_norm));
    }

    report(
        "criterion 5 (periodic-map output theorem)",
        worst_dev <= 1e-12 && worst_c <= 1.0 + 1e-9,
        &format!(
            "50 cases: worst output deviation {worst_dev:.3e} (tol 1e-12); \
             perturbation constant c = {worst_c:.6} (theory: <= 1)"
        ),
    );
}

#[test]
fn acceptance_6_concentration_monotonicity() {
    let t_len = 24usize;
    let grid = GridShape::temporal(t_len).unwrap();
    let base = TAU / 8.0;
    let spec =
        RopeSpec::from_frequencies(vec![4.0 * base, 2.0 * base, base], vec![], vec![]).unwrap();
    let alphas = [0.5, 0.8, 0.9, 0.95, 1.0];

    let mut all_strict = true;
    for seed in 0..20u64 {
        let ps = PlantSpec {
            target_amps: vec![1.0, 1.0, 2.0],
            spatial_constants: vec![],
            phases: None,
            noise_std: 0.05,
            grid,
            seed,
        };
        let (q, k) = plant_pattern(&ps, &spec).unwrap();
        let (qr, kr) = rotate_qk(&q, &k, &grid, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let v = Array2::from_shape_fn((t_len, 6), |_| rng.random::<f64>() - 0.5);
        let prob = AttentionProblem::with_default_scale(qr, kr, v, grid).unwrap();

        let mut masses = Vec::new();
        for alpha in alphas {
            let policy = DecayPolicy::constant(alpha, 8, t_len as u64).unwrap();
            let out =
                attend_reference(&prob, Some(&policy), None, &ReferenceOptions::default())
                    .unwrap();
            let mean = out
                .row_stats
                .unwrap()
                .iter()
                .map(|s| s.in_window_mass)
                .sum::<f64>()
                / t_len as f64;
            masses.push(mean);
        }
        // mass must strictly decrease as alpha increases
        for pair in masses.windows(2) {
            if !(pair[1] < pair[0]) {
                all_strict = false;
            }
        }
    }
    report(
        "criterion 6 (concentration monotonicity)",
        all_strict,
        "20 planted problems: mean in-window mass strictly decreasing in alpha over \
         {0.5, 0.8, 0.9, 0.95, 1.0}",
    );
}

#[test]
fn acceptance_7_spectral_round_trip() {
    let grid = GridShape::new(12, 4, 4).unwrap();
    let spec = RopeSpec::from_thetas(128.0, 64.0, 64.0, 6, 0, 0).unwrap();
    let truth = vec![2.0, 1.0, 0.5];

    let noiseless = PlantSpec {
        target_amps: truth.clone(),
        spatial_constants: vec![],
        phases: None,
        noise_std: 0.0,
        grid,
        seed: 0,
    };
    let (q, k) = plant_pattern(&noiseless, &spec).unwrap();
    let est = estimate_pattern(q.view(), k.view(), &grid, &spec).unwrap();
    let worst_exact = est
        .pattern
        .amps
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut noisy_ok = true;
    let mut worst_sigmas = 0.0f64;
    for seed in 0..10u64 {
        let noisy = PlantSpec { noise_std: 0.1, seed, ..noiseless.clone() };
        let (q, k) = plant_pattern(&noisy, &spec).unwrap();
        let est = estimate_pattern(q.view(), k.view(), &grid, &spec).unwrap();
        for ((got, want), se) in est.pattern.amps.iter().zip(&truth).zip(&est.amp_se) {
            let sigmas = (got - want).abs() / se;
            worst_sigmas = worst_sigmas.max(sigmas);
            if sigmas > 5.0 {
                noisy_ok = false;
            }
        }
    }
    report(
        "criterion 7 (spectral round trip)",
        worst_exact <= 1e-9 && noisy_ok,
        &format!(
            "noiseless error {worst_exact:.3e} (tol 1e-9); noisy recovery worst \
             {worst_sigmas:.2} standard errors (tol 5) over 10 seeds"
        ),
    );
}

/// Deterministic synthetic clips, shared with the CLI fixture generator.
pub fn fixture_frames(kind: &str) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0f1c);
    let noise =
        |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..64).map(|_| rng.random::<f64>() * 255.0).collect() };
    match kind {
        "repeat" => {
            let base: Vec<Vec<f64>> = (0..8).map(|_| noise(&mut rng)).collect();
            (0..32).map(|i| base[i % 8].clone()).collect()
        }
        "noise" => (0..32).map(|_| noise(&mut rng)).collect(),
        "constant" => vec![vec![127.0; 64]; 32],
        other => panic!("unknown fixture {other}"),
    }
}

#[test]
fn acceptance_8_norepeat_metric() {
    let params = NoRepeatParams::default();

    let repeat = FrameSequence::from_u8_range(fixture_frames("repeat")).unwrap();
    let r1 = norepeat_score(&repeat, 8, &params).unwrap();
    let repeat_ok = !r1.is_static && r1.norepeat_score == Some(25.0);

    let noise = FrameSequence::from_u8_range(fixture_frames("noise")).unwrap();
    let r2 = norepeat_score(&noise, 8, &params).unwrap();
    let noise_ok = !r2.is_static && r2.norepeat_score == Some(100.0);

    let constant = FrameSequence::from_u8_range(fixture_frames("constant")).unwrap();
    let r3 = norepeat_score(&constant, 8, &params).unwrap();
    let constant_ok = r3.is_static && r3.norepeat_score.is_none();

    report(
        "criterion 8 (norepeat metric)",
        repeat_ok && noise_ok && constant_ok && params.threshold == 55.0,
        &format!(
            "repeat fixture {:?}, noise fixture {:?}, constant static {}; threshold 55",
            r1.norepeat_score, r2.norepeat_score, r3.is_static
        ),
    );
}

#[test]
fn acceptance_9_decay_policy_table() {
    let policy = DecayPolicy::constant(0.9, 30, 120)
        .unwrap()
        .with_risk_band(0.6, 33.0, 4)
        .unwrap();
    // hand-verified: (|delta|, factor for nonneg logit, factor for negative
    // logit); symmetric under delta sign flip.
    // 8: inside the window (2*8 <= 30). 35: in the band [29, 37] around 33.
    // 45: plain out-of-window. 66: in the band [62, 70] around 2 * 33.
    let expected = [(8i64, 1.0f64, 1.0f64), (35, 0.6, 1.0), (45, 0.9, 1.0), (66, 0.6, 1.0)];

    let mut ok = true;
    let mut rendered = String::new();
    for &(delta, want_pos, want_neg) in &expected {
        for d in [delta, -delta] {
            let got_pos = policy.factor_at(d, true);
            let got_neg = policy.factor_at(d, false);
            if got_pos != want_pos || got_neg != want_neg {
                ok = false;
            }
            rendered.push_str(&format!("d={d}: +{got_pos}/-{got_neg} "));
        }
    }
    report(
        "criterion 9 (decay policy table)",
        ok,
        &format!("L=30 T=33 gamma=4 alpha=0.9 beta=0.6 -> {rendered}"),
    );
}
