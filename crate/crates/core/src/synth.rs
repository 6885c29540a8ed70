//! Synthetic attention problems with planted spectral structure.
//!
//! Planting writes per-plane constants into pre-rotation queries and keys so
//! the statistical row pattern has chosen amplitudes, phases, and offset;
//! estimation should recover them exactly in the noiseless limit and within
//! sampling error under Gaussian noise. This is what makes the analytic
//! claims testable without any trained model.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::AttentionProblem;
use crate::error::{Error, Result};
use crate::rope::{apply_rope, GridShape, RopeSpec};

/// What to plant: temporal amplitudes (one per temporal plane), spatial
/// cosine constants (their sum becomes the pattern offset), optional phases,
/// and i.i.d. Gaussian noise on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub target_amps: Vec<f64>,
    #[serde(default)]
    pub spatial_constants: Vec<f64>,
    #[serde(default)]
    pub phases: Option<Vec<f64>>,
    #[serde(default)]
    pub noise_std: f64,
    pub grid: GridShape,
    pub seed: u64,
}

impl PlantSpec {
    pub fn noiseless(target_amps: Vec<f64>, grid: GridShape) -> Self {
        Self {
            target_amps,
            spatial_constants: Vec::new(),
            phases: None,
            noise_std: 0.0,
            grid,
            seed: 0,
        }
    }
}

/// Build pre-rotation query/key matrices whose estimated pattern has the
/// planted amplitudes and phases.
///
/// Per temporal plane `i` every query row carries `(sqrt(a_i), 0)` and every
/// key row `(sqrt(a_i) cos(b_i), sqrt(a_i) sin(b_i))`, so the plane's cosine
/// coefficient is `a_i cos(b_i)` and its sine coefficient `-a_i sin(b_i)`,
/// which the auxiliary-angle inversion maps back to exactly `(a_i, b_i)`.
pub fn plant_pattern(ps: &PlantSpec, spec: &RopeSpec) -> Result<(Array2<f64>, Array2<f64>)> {
    let n_planes = spec.d_t / 2;
    if ps.target_amps.len() != n_planes {
        return Err(Error::Shape(format!(
            "{} amplitudes planted but the spec has {n_planes} temporal planes",
            ps.target_amps.len()
        )));
    }
    let n_spatial = (spec.d_h + spec.d_w) / 2;
    if ps.spatial_constants.len() != n_spatial {
        return Err(Error::Shape(format!(
            "{} spatial constants planted but the spec has {n_spatial} spatial planes",
            ps.spatial_constants.len()
        )));
    }
    if let Some(a) = ps.target_amps.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::InvalidInput(format!("negative or non-finite amplitude {a}")));
    }
    if let Some(phases) = &ps.phases {
        if phases.len() != n_planes {
            return Err(Error::Shape(format!(
                "{} phases planted but the spec has {n_planes} temporal planes",
                phases.len()
            )));
        }
    }
    if !(ps.noise_std.is_finite() && ps.noise_std >= 0.0) {
        return Err(Error::InvalidInput(format!("bad noise_std {}", ps.noise_std)));
    }

    let tokens = ps.grid.token_count();
    let dim = spec.head_dim();
    let mut q_row = vec![0.0; dim];
    let mut k_row = vec![0.0; dim];
    for (i, &amp) in ps.target_amps.iter().enumerate() {
        let c = amp.sqrt();
        let phase = ps.phases.as_ref().map_or(0.0, |p| p[i]);
        q_row[2 * i] = c;
        k_row[2 * i] = c * phase.cos();
        k_row[2 * i + 1] = c * phase.sin();
    }
    for (s, &constant) in ps.spatial_constants.iter().enumerate() {
        let c = constant.abs().sqrt();
        q_row[spec.d_t + 2 * s] = c;
        k_row[spec.d_t + 2 * s] = c * constant.signum();
    }

    let mut queries = Array2::from_shape_fn((tokens, dim), |(_, c)| q_row[c]);
    let mut keys = Array2::from_shape_fn((tokens, dim), |(_, c)| k_row[c]);
    if ps.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(ps.seed);
        let normal = Normal::new(0.0, ps.noise_std).expect("validated std");
        queries.mapv_inplace(|x| x + normal.sample(&mut rng));
        keys.mapv_inplace(|x| x + normal.sample(&mut rng));
    }
    Ok((queries, keys))
}

/// Rotate pre-rotation query/key rows at their grid positions, producing the
/// matrices an attention problem actually consumes.
pub fn rotate_qk(
    queries: &Array2<f64>,
    keys: &Array2<f64>,
    grid: &GridShape,
    spec: &RopeSpec,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let tokens = grid.token_count();
    if queries.nrows() != tokens || keys.nrows() != tokens {
        return Err(Error::Shape(format!(
            "expected {tokens} rows, got ({}, {})",
            queries.nrows(),
            keys.nrows()
        )));
    }
    let mut q_rot = queries.clone();
    let mut k_rot = keys.clone();
    for flat in 0..tokens {
        let (t, h, w) = grid.unflatten(flat);
        let pos = (t as i64, h as i64, w as i64);
        let q = apply_rope(queries.row(flat).as_slice().unwrap(), pos, spec)?;
        let k = apply_rope(keys.row(flat).as_slice().unwrap(), pos, spec)?;
        q_rot.row_mut(flat).assign(&ndarray::ArrayView1::from(&q));
        k_rot.row_mut(flat).assign(&ndarray::ArrayView1::from(&k));
    }
    Ok((q_rot, k_rot))
}

/// How values are generated for a synthetic problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueMode {
    /// Seeded Gaussian values of the given width.
    #[serde(rename = "random")]
    Random { d_v: usize },
    /// One-hot frame signatures: row for a token in frame t is e_t, so the
    /// output rows read as per-frame attention mass and frame-periodicity of
    /// the map is directly visible in the output.
    #[serde(rename = "frame-tagged")]
    FrameTagged,
}

/// Assemble an attention problem from (already rotated) queries and keys
/// plus generated values, with the standard 1/sqrt(D) scale.
pub fn make_problem(
    queries: Array2<f64>,
    keys: Array2<f64>,
    value_mode: ValueMode,
    grid: GridShape,
    seed: u64,
) -> Result<AttentionProblem<f64>> {
    let tokens = grid.token_count();
    if queries.nrows() != tokens || keys.nrows() != tokens {
        return Err(Error::Shape(format!(
            "expected {tokens} rows, got ({}, {})",
            queries.nrows(),
            keys.nrows()
        )));
    }
    let values = match value_mode {
        ValueMode::Random { d_v } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0).unwrap();
            Array2::from_shape_fn((tokens, d_v), |_| normal.sample(&mut rng))
        }
        ValueMode::FrameTagged => Array2::from_shape_fn((tokens, grid.t_len), |(row, c)| {
            if grid.frame_of(row) == c {
                1.0
            } else {
                0.0
            }
        }),
    };
    AttentionProblem::with_default_scale(queries, keys, values, grid)
}

/// Convert a 64-bit problem to 32 bits for reduced-precision checks.
pub fn problem_to_f32(prob: &AttentionProblem<f64>) -> AttentionProblem<f32> {
    AttentionProblem {
        queries: prob.queries.mapv(|x| x as f32),
        keys: prob.keys.mapv(|x| x as f32),
        values: prob.values.mapv(|x| x as f32),
        grid: prob.grid,
        scale: prob.scale as f32,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::estimate_pattern;
    use approx::assert_abs_diff_eq;

    const TAU: f64 = std::f64::consts::TAU;

    fn harmonic_spec(base: f64) -> RopeSpec {
        RopeSpec::from_frequencies(vec![8.0 * base, 4.0 * base, 2.0 * base, base], vec![], vec![])
            .unwrap()
    }

    #[test]
    fn noiseless_round_trip_recovers_amplitudes_and_zero_phases() {
        let grid = GridShape::new(10, 2, 2).unwrap();
        let spec = RopeSpec::from_thetas(128.0, 32.0, 32.0, 6, 2, 2).unwrap();
        let ps = PlantSpec {
            target_amps: vec![2.0, 1.0, 0.5],
            spatial_constants: vec![0.3, -0.1],
            phases: None,
            noise_std: 0.0,
            grid,
            seed: 1,
        };
        let (q, k) = plant_pattern(&ps, &spec).unwrap();
        let est = estimate_pattern(q.view(), k.view(), &grid, &spec).unwrap();
        for (got, want) in est.pattern.amps.iter().zip(&ps.target_amps) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-9);
        }
        for phase in &est.pattern.phases {
            assert_abs_diff_eq!(phase, &0.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(est.pattern.offset, 0.2, epsilon = 1e-9);
        // the constancy approximation is exact for planted data
        for v in est.e1_variance.iter().chain(&est.e2_variance) {
            assert_abs_diff_eq!(v, &0.0, epsilon = 1e-18);
        }
    }

    #[test]
    fn single_amplitude_plant() {
        let grid = GridShape::new(8, 1, 1).unwrap();
        let spec = RopeSpec::from_thetas(64.0, 64.0, 64.0, 8, 0, 0).unwrap();
        let mut amps = vec![0.0; 4];
        amps[0] = 1.0;
        let ps = PlantSpec::noiseless(amps, grid);
        let (q, k) = plant_pattern(&ps, &spec).unwrap();
        let est = estimate_pattern(q.view(), k.view(), &grid, &spec).unwrap();
        assert_abs_diff_eq!(est.pattern.amps[0], 1.0, epsilon = 1e-9);
        for a in &est.pattern.amps[1..] {
            assert_abs_diff_eq!(a, &0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_amplitudes_leave_only_the_offset() {
        let grid = GridShape::new(6, 2, 1).unwrap();
        let spec = RopeSpec::from_thetas(64.0, 32.0, 32.0, 4, 2, 2).unwrap();
        let ps = PlantSpec {
            target_amps: vec![0.0, 0.0],
            spatial_constants: vec![0.4, 0.35],
            phases: None,
            noise_std: 0.0,
            grid,
            seed: 0,
        };
        let (q, k) = plant_pattern(&ps, &spec).unwrap();
        let est = estimate_pattern(q.view(), k.view(), &grid, &spec).unwrap();
        for dt in [-3.0, 0.0, 1.5, 4.0] {
            assert_abs_diff_eq!(est.pattern.evaluate(dt), 0.75, epsilon = 1e-9);
        }
    }

    #[test]
    fn planted_phases_are_recovered() {
        let grid = GridShape::new(9, 2, 2).unwrap();
        let spec = RopeSpec::from_thetas(128.0, 128.0, 128.0, 4, 0, 0).unwrap();
        let ps = PlantSpec {
            target_amps: vec![1.5, 0.75],
            spatial_constants: vec![],
            phases: Some(vec![0.5, -0.3]),
            noise_std: 0.0,
            grid,
            seed: 0,
        };
        let (q, k) = plant_pattern(&ps, &spec).unwrap();
        let est = estimate_pattern(q.view(), k.view(), &grid, &spec).unwrap();
        assert_abs_diff_eq!(est.pattern.phases[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(est.pattern.phases[1], -0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(est.pattern.amps[0], 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(est.pattern.amps[1], 0.75, epsilon = 1e-9);
    }

    #[test]
    fn harmonic_plant_peaks_at_sum_of_amplitudes() {
        let base = TAU / 12.0;
        let spec = harmonic_spec(base);
        let grid = GridShape::new(12, 1, 1).unwrap();
        let ps = PlantSpec::noiseless(vec![1.0, 1.0, 1.0, 4.0], grid);
        let (q, k) = plant_pattern(&ps, &spec).unwrap();
        let est = estimate_pattern(q.view(), k.view(), &grid, &spec).unwrap();
        for m in 1..=5 {
            let dt = m as f64 * 12.0;
            assert_abs_diff_eq!(est.pattern.evaluate(dt), 7.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn noisy_recovery_within_five_standard_errors() {
        let grid = GridShape::new(12, 4, 4).unwrap();
        let spec = RopeSpec::from_thetas(128.0, 64.0, 64.0, 6, 0, 0).unwrap();
        let truth = vec![2.0, 1.0, 0.5];
        for seed in 0..8 {
            let ps = PlantSpec {
                target_amps: truth.clone(),
                spatial_constants: vec![],
                phases: None,
                noise_std: 0.1,
                grid,
                seed,
            };
            let (q, k) = plant_pattern(&ps, &spec).unwrap();
            let est = estimate_pattern(q.view(), k.view(), &grid, &spec).unwrap();
            for ((got, want), se) in est.pattern.amps.iter().zip(&truth).zip(&est.amp_se) {
                assert!(
                    (got - want).abs() <= 5.0 * se,
                    "seed {seed}: |{got} - {want}| > 5 * {se}"
                );
            }
        }
    }

    #[test]
    fn negative_amplitude_rejected() {
        let grid = GridShape::temporal(4).unwrap();
        let spec = RopeSpec::from_thetas(64.0, 64.0, 64.0, 4, 0, 0).unwrap();
        let ps = PlantSpec::noiseless(vec![1.0, -0.5], grid);
        assert!(matches!(plant_pattern(&ps, &spec), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let grid = GridShape::new(5, 2, 1).unwrap();
        let spec = RopeSpec::from_thetas(64.0, 32.0, 32.0, 4, 2, 2).unwrap();
        let ps = PlantSpec {
            target_amps: vec![1.0, 0.5],
            spatial_constants: vec![0.2, 0.2],
            phases: None,
            noise_std: 0.3,
            grid,
            seed: 42,
        };
        let (q1, k1) = plant_pattern(&ps, &spec).unwrap();
        let (q2, k2) = plant_pattern(&ps, &spec).unwrap();
        assert_eq!(q1, q2);
        assert_eq!(k1, k2);

        let p1 = make_problem(q1, k1.clone(), ValueMode::Random { d_v: 6 }, grid, 7).unwrap();
        let p2 = make_problem(q2, k2, ValueMode::Random { d_v: 6 }, grid, 7).unwrap();
        assert_eq!(p1.values, p2.values);
    }

    #[test]
    fn zero_values_give_zero_output() {
        use crate::attention::{attend_reference, ReferenceOptions};
        let grid = GridShape::temporal(6).unwrap();
        let spec = RopeSpec::from_thetas(64.0, 64.0, 64.0, 4, 0, 0).unwrap();
        let ps = PlantSpec::noiseless(vec![1.0, 0.5], grid);
        let (q, k) = plant_pattern(&ps, &spec).unwrap();
        let (qr, kr) = rotate_qk(&q, &k, &grid, &spec).unwrap();
        let mut prob = make_problem(qr, kr, ValueMode::Random { d_v: 3 }, grid, 0).unwrap();
        prob.values.fill(0.0);
        let out = attend_reference(&prob, None, None, &ReferenceOptions::default()).unwrap();
        assert!(out.output.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_tagged_values_are_one_hot_per_frame() {
        let grid = GridShape::new(3, 2, 1).unwrap();
        let spec = RopeSpec::from_thetas(64.0, 32.0, 32.0, 4, 2, 0).unwrap();
        let ps = PlantSpec {
            target_amps: vec![1.0, 0.5],
            spatial_constants: vec![0.1],
            phases: None,
            noise_std: 0.0,
            grid,
            seed: 0,
        };
        let (q, k) = plant_pattern(&ps, &spec).unwrap();
        let prob = make_problem(q, k, ValueMode::FrameTagged, grid, 0).unwrap();
        assert_eq!(prob.values.ncols(), 3);
        for row in 0..grid.token_count() {
            for c in 0..3 {
                let want = if grid.frame_of(row) == c { 1.0 } else { 0.0 };
                assert_eq!(prob.values[(row, c)], want);
            }
        }
    }
}
