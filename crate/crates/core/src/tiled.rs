//! Memory-bounded attention: blocked key/value iteration with an online
//! softmax (running max, running normalizer, rescaled accumulator) and
//! per-block decay, equivalent to the reference path without ever holding an
//! L' x L' buffer.
//!
//! Query blocks are independent work units; key blocks are folded in a fixed
//! ascending order, so outputs are deterministic for any worker count.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::attention::{AttentionProblem, RowStats, WindowSpec};
use crate::decay::{DecayPolicy, PositionMode};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::rope::GridShape;

/// Block sizes for the tiled sweep. Neither has to divide the sequence
/// length; ragged tail blocks are processed with explicit bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    pub b_q: usize,
    pub b_kv: usize,
}

impl TileConfig {
    pub fn new(b_q: usize, b_kv: usize) -> Result<Self> {
        if b_q == 0 || b_kv == 0 {
            return Err(Error::InvalidInput(format!(
                "tile sizes must be at least 1, got ({b_q}, {b_kv})"
            )));
        }
        Ok(Self { b_q, b_kv })
    }
}

/// Online-softmax state for one output row: running max, running
/// normalizer, and the un-normalized output accumulator.
#[derive(Debug, Clone)]
pub struct RowState<F> {
    pub max: F,
    pub norm: F,
    pub acc: Vec<F>,
    // optional diagnostics, accumulated with the same rescaling as `norm`
    window_mass: F,
    score_weighted: F,
}

impl<F: Real> RowState<F> {
    pub fn new(d_v: usize) -> Self {
        Self {
            max: F::neg_infinity(),
            norm: F::zero(),
            acc: vec![F::zero(); d_v],
            window_mass: F::zero(),
            score_weighted: F::zero(),
        }
    }

    /// Fold one block of logits (and the matching value rows) into the
    /// state. `-inf` logits contribute nothing; a block of them leaves the
    /// state untouched.
    pub fn absorb_block(&mut self, logits: &[F], values: ArrayView2<'_, F>) {
        self.absorb_block_with(logits, values, None);
    }

    fn absorb_block_with(
        &mut self,
        logits: &[F],
        values: ArrayView2<'_, F>,
        in_window: Option<&[bool]>,
    ) {
        debug_assert_eq!(logits.len(), values.nrows());
        let block_max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
        let new_max = self.max.max(block_max);
        if new_max == F::neg_infinity() {
            return; // nothing finite seen yet
        }
        let rescale = if self.max == F::neg_infinity() {
            F::zero()
        } else {
            (self.max - new_max).exp()
        };
        self.norm = self.norm * rescale;
        self.window_mass = self.window_mass * rescale;
        self.score_weighted = self.score_weighted * rescale;
        for a in self.acc.iter_mut() {
            *a = *a * rescale;
        }
        for (k, &s) in logits.iter().enumerate() {
            if s == F::neg_infinity() {
                continue;
            }
            let w = (s - new_max).exp();
            self.norm = self.norm + w;
            self.score_weighted = self.score_weighted + w * s;
            if let Some(members) = in_window {
                if members[k] {
                    self.window_mass = self.window_mass + w;
                }
            }
            for (a, &v) in self.acc.iter_mut().zip(values.row(k)) {
                *a = *a + w * v;
            }
        }
        self.max = new_max;
    }

    /// Normalized output row, or `None` when every logit seen was masked.
    pub fn finish(&self) -> Option<Vec<F>> {
        if self.norm == F::zero() {
            return None;
        }
        Some(self.acc.iter().map(|&a| a / self.norm).collect())
    }

    fn stats(&self) -> Option<RowStats> {
        if self.norm == F::zero() {
            return Some(RowStats { in_window_mass: 0.0, entropy: 0.0 });
        }
        let norm = self.norm.as_f64();
        let mass = self.window_mass.as_f64() / norm;
        // entropy = ln Z - E[s]; ln Z = max + ln(norm) in shifted coordinates
        let mean_score = self.score_weighted.as_f64() / norm;
        let entropy = self.max.as_f64() + norm.ln() - mean_score;
        Some(RowStats { in_window_mass: mass, entropy })
    }
}

/// Apply the decay policy to one block of raw scaled logits in place, using
/// only block-local index arithmetic. `q_start`/`kv_start` are the global
/// offsets of the block.
pub fn apply_decay_block<F: Real>(
    block: &mut Array2<F>,
    q_start: usize,
    kv_start: usize,
    policy: &DecayPolicy,
    grid: &GridShape,
) {
    let per_frame = grid.h_len * grid.w_len;
    let use_first_frame =
        policy.first_frame_factor.is_some() && policy.position_mode == PositionMode::TemporalFrame;
    for (r, mut row) in block.rows_mut().into_iter().enumerate() {
        let i = q_start + r;
        let (i_pos, i_frame) = match policy.position_mode {
            PositionMode::TokenIndex => (i as i64, i / per_frame),
            PositionMode::TemporalFrame => ((i / per_frame) as i64, i / per_frame),
        };
        for (c, s) in row.iter_mut().enumerate() {
            let j = kv_start + c;
            let (j_pos, j_frame) = match policy.position_mode {
                PositionMode::TokenIndex => (j as i64, j / per_frame),
                PositionMode::TemporalFrame => ((j / per_frame) as i64, j / per_frame),
            };
            let touches = use_first_frame && (i_frame == 0 || j_frame == 0);
            let factor =
                policy.factor_at_full(i_pos - j_pos, *s >= F::zero(), touches);
            *s = *s * F::of(factor);
        }
    }
}

/// Test hook: adds 1 to the decayed logit at one (query, key) coordinate so
/// equivalence checks can prove they would catch a wrong kernel.
#[derive(Debug, Clone, Copy)]
pub struct FaultInjection {
    pub query: usize,
    pub key: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TiledOptions {
    /// Accumulate per-row in-window mass and entropy online (no map needed).
    pub collect_row_stats: bool,
    /// Window context when no policy provides one.
    pub window: Option<WindowSpec>,
    pub fault: Option<FaultInjection>,
}

/// Tiled attention output. No map is ever produced on this path.
#[derive(Debug, Clone)]
pub struct TiledOutput<F> {
    pub output: Array2<F>,
    pub all_masked_rows: Vec<usize>,
    pub row_stats: Option<Vec<RowStats>>,
    /// Largest transient allocation of any single worker, in bytes.
    /// Independent of the sequence length for fixed tile and head sizes.
    pub peak_aux_bytes: usize,
}

pub fn attend_tiled<F: Real>(
    prob: &AttentionProblem<F>,
    policy: Option<&DecayPolicy>,
    cfg: TileConfig,
) -> Result<TiledOutput<F>> {
    attend_tiled_with(prob, policy, cfg, &TiledOptions::default())
}

struct BlockResult {
    masked_rows: Vec<usize>,
    stats: Vec<RowStats>,
    aux_bytes: usize,
}

pub fn attend_tiled_with<F: Real>(
    prob: &AttentionProblem<F>,
    policy: Option<&DecayPolicy>,
    cfg: TileConfig,
    opts: &TiledOptions,
) -> Result<TiledOutput<F>> {
    TileConfig::new(cfg.b_q, cfg.b_kv)?;
    prob.check_finite()?;
    if let Some(policy) = policy {
        policy.check_grid(&prob.grid)?;
    }
    let window = if opts.collect_row_stats {
        let w = policy.map(WindowSpec::from_policy).or(opts.window);
        if w.is_none() {
            return Err(Error::InvalidInput(
                "row stats need a policy or an explicit window".into(),
            ));
        }
        w
    } else {
        None
    };

    let n = prob.seq_len();
    let d_v = prob.values.ncols();
    let grid = prob.grid;
    let scale = prob.scale;

    let mut out_vec = vec![F::zero(); n * d_v];
    let results: Vec<BlockResult> = out_vec
        .par_chunks_mut(cfg.b_q * d_v)
        .enumerate()
        .map(|(block_idx, out_chunk)| {
            let q_start = block_idx * cfg.b_q;
            let q_end = (q_start + cfg.b_q).min(n);
            let rows = q_end - q_start;

            // per-worker transient buffers; sizes depend on tiles and head
            // dims only, never on n
            let q_block = prob
                .queries
                .slice(ndarray::s![q_start..q_end, ..])
                .mapv(|x| x * scale);
            let mut states: Vec<RowState<F>> =
                (0..rows).map(|_| RowState::new(d_v)).collect();
            let mut members_buf: Vec<bool> = Vec::new();
            let mut peak_block_elems = 0usize;

            let mut kv_start = 0usize;
            while kv_start < n {
                let kv_end = (kv_start + cfg.b_kv).min(n);
                let k_block = prob.keys.slice(ndarray::s![kv_start..kv_end, ..]);
                let v_block = prob.values.slice(ndarray::s![kv_start..kv_end, ..]);
                let mut s_block = q_block.dot(&k_block.t());
                peak_block_elems = peak_block_elems.max(s_block.len());

                if let Some(policy) = policy {
                    apply_decay_block(&mut s_block, q_start, kv_start, policy, &grid);
                }
                if let Some(f) = opts.fault {
                    if (q_start..q_end).contains(&f.query)
                        && (kv_start..kv_end).contains(&f.key)
                    {
                        let cell = &mut s_block[(f.query - q_start, f.key - kv_start)];
                        *cell = *cell + F::one();
                    }
                }

                for (r, state) in states.iter_mut().enumerate() {
                    let logits = s_block.row(r);
                    let logits = logits.as_slice().expect("block rows are contiguous");
                    if let Some(win) = window.as_ref() {
                        members_buf.clear();
                        members_buf.extend(
                            (kv_start..kv_end).map(|j| win.contains(q_start + r, j, &grid)),
                        );
                        state.absorb_block_with(logits, v_block, Some(&members_buf));
                    } else {
                        state.absorb_block(logits, v_block);
                    }
                }
                kv_start = kv_end;
            }

            let elem = std::mem::size_of::<F>();
            let aux_bytes = q_block.len() * elem
                + peak_block_elems * elem
                + rows * d_v * elem            // accumulators
                + rows * 4 * elem              // max / norm / mass / score
                + members_buf.capacity();

            let mut masked_rows = Vec::new();
            let mut stats = Vec::new();
            for (r, state) in states.iter().enumerate() {
                match state.finish() {
                    Some(row) => {
                        out_chunk[r * d_v..(r + 1) * d_v].copy_from_slice(&row);
                    }
                    None => masked_rows.push(q_start + r),
                }
                if window.is_some() {
                    stats.push(state.stats().expect("stats requested"));
                }
            }
            BlockResult { masked_rows, stats, aux_bytes }
        })
        .collect();

    let mut all_masked_rows = Vec::new();
    let mut stats_acc = window.map(|_| Vec::with_capacity(n));
    let mut peak_aux_bytes = 0;
    for r in results {
        all_masked_rows.extend(r.masked_rows);
        if let Some(acc) = stats_acc.as_mut() {
            acc.extend(r.stats);
        }
        peak_aux_bytes = peak_aux_bytes.max(r.aux_bytes);
    }

    let output = Array2::from_shape_vec((n, d_v), out_vec).expect("exact size");
    Ok(TiledOutput { output, all_masked_rows, row_stats: stats_acc, peak_aux_bytes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{attend_reference, ReferenceOptions};
    use crate::decay::DecayStrategy;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, grid: GridShape, d: usize, d_v: usize) -> AttentionProblem<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.token_count();
        let q = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let k = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
        let v = Array2::from_shape_fn((n, d_v), |_| rng.random::<f64>() * 2.0 - 1.0);
        AttentionProblem::with_default_scale(q, k, v, grid).unwrap()
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn unit_policy_matches_reference() {
        let grid = GridShape::new(10, 3, 2).unwrap();
        let prob = random_problem(1, grid, 8, 5);
        let policy = DecayPolicy::constant(1.0, 4, 10).unwrap();
        let reference =
            attend_reference(&prob, None, None, &ReferenceOptions::default()).unwrap();
        let tiled =
            attend_tiled(&prob, Some(&policy), TileConfig::new(7, 9).unwrap()).unwrap();
        assert!(max_abs_diff(&reference.output, &tiled.output) <= 1e-10);
    }

    #[test]
    fn random_policies_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..25 {
            let t_len = rng.random_range(4..20);
            let h = rng.random_range(1..4);
            let w = rng.random_range(1..4);
            let grid = GridShape::new(t_len, h, w).unwrap();
            let prob = random_problem(case, grid, 16, 8);

            let strategy = match case % 3 {
                0 => DecayStrategy::Constant { alpha: 0.9 },
                1 => DecayStrategy::Linear { alpha1: 0.85, alpha2: 0.95 },
                _ => DecayStrategy::Parabolic { alpha1: 0.85, alpha2: 0.95 },
            };
            let window = rng.random_range(2..=t_len as u64);
            let mut policy =
                DecayPolicy::new(strategy, window, t_len as u64, PositionMode::TemporalFrame)
                    .unwrap();
            if case % 2 == 0 {
                policy = policy
                    .with_risk_band(0.6, rng.random_range(3..10) as f64, rng.random_range(0..3))
                    .unwrap();
            }

            let cfg = TileConfig::new(rng.random_range(1..8), rng.random_range(1..8)).unwrap();
            let reference =
                attend_reference(&prob, Some(&policy), None, &ReferenceOptions::default())
                    .unwrap();
            let tiled = attend_tiled(&prob, Some(&policy), cfg).unwrap();
            let err = max_abs_diff(&reference.output, &tiled.output);
            assert!(err <= 1e-10, "case {case}: err {err}");
        }
    }

    #[test]
    fn block_size_independence() {
        let grid = GridShape::new(17, 2, 2).unwrap();
        let prob = random_problem(7, grid, 8, 4);
        let policy = DecayPolicy::constant(0.9, 6, 17)
            .unwrap()
            .with_risk_band(0.6, 7.0, 1)
            .unwrap();
        let base = attend_tiled(&prob, Some(&policy), TileConfig::new(1, 1).unwrap()).unwrap();
        for (bq, bkv) in [(2, 3), (5, 5), (16, 4), (64, 64), (17, 68)] {
            let other =
                attend_tiled(&prob, Some(&policy), TileConfig::new(bq, bkv).unwrap()).unwrap();
            assert!(max_abs_diff(&base.output, &other.output) <= 1e-10);
        }
    }

    #[test]
    fn overflow_prone_logits_stay_finite_and_match_extended_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = GridShape::temporal(12).unwrap();
        let n = grid.token_count();
        // logit magnitudes around 1e4
        let q = Array2::from_shape_fn((n, 4), |_| (rng.random::<f64>() - 0.5) * 200.0);
        let k = Array2::from_shape_fn((n, 4), |_| (rng.random::<f64>() - 0.5) * 200.0);
        let v = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>() - 0.5);
        let prob = AttentionProblem::new(q, k, v, grid, 1.0).unwrap();
        let tiled = attend_tiled(&prob, None, TileConfig::new(5, 3).unwrap()).unwrap();
        assert!(tiled.output.iter().all(|v| v.is_finite()));
        let reference =
            attend_reference(&prob, None, None, &ReferenceOptions::default()).unwrap();
        assert!(max_abs_diff(&reference.output, &tiled.output) <= 1e-10);

        // f32 inputs against the f64 oracle
        let qf = prob.queries.mapv(|x| x as f32);
        let kf = prob.keys.mapv(|x| x as f32);
        let vf = prob.values.mapv(|x| x as f32);
        let prob32 = AttentionProblem::new(qf, kf, vf, grid, 1.0f32).unwrap();
        let tiled32 = attend_tiled(&prob32, None, TileConfig::new(4, 4).unwrap()).unwrap();
        assert!(tiled32.output.iter().all(|v| v.is_finite()));
        let as64 = tiled32.output.mapv(f64::from);
        assert!(max_abs_diff(&reference.output, &as64) <= 1e-3);
    }

    #[test]
    fn merge_single_block_is_direct_softmax() {
        let logits = [0.3f64, -1.2, 2.0, 0.5];
        let values = Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64 * 0.25 - 0.5);
        let mut state = RowState::new(2);
        state.absorb_block(&logits, values.view());
        let out = state.finish().unwrap();

        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for c in 0..2 {
            let direct: f64 = (0..4).map(|k| exps[k] / z * values[(k, c)]).sum();
            assert_abs_diff_eq!(out[c], direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn merge_two_blocks_equals_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let all: Vec<f64> = (0..10).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
        let values = Array2::from_shape_fn((10, 3), |_| rng.random::<f64>() - 0.5);

        let mut split = RowState::new(3);
        split.absorb_block(&all[..4], values.slice(ndarray::s![..4, ..]));
        split.absorb_block(&all[4..], values.slice(ndarray::s![4.., ..]));

        let mut whole = RowState::new(3);
        whole.absorb_block(&all, values.view());

        let a = split.finish().unwrap();
        let b = whole.finish().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(split.norm * (split.max).exp(), whole.norm * whole.max.exp(), epsilon = 1e-12);
    }

    #[test]
    fn fully_masked_block_leaves_state_unchanged() {
        let values = Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64);
        let mut state = RowState::new(2);
        state.absorb_block(&[1.0, 0.5, -0.5], values.view());
        let before = state.clone();
        state.absorb_block(&[f64::NEG_INFINITY; 3], values.view());
        assert_eq!(before.max, state.max);
        assert_eq!(before.norm, state.norm);
        assert_eq!(before.acc, state.acc);

        // a never-fed row reports itself as fully masked
        let empty: RowState<f64> = RowState::new(2);
        assert!(empty.finish().is_none());
    }

    #[test]
    fn decay_block_in_window_is_untouched() {
        let grid = GridShape::temporal(32).unwrap();
        let policy = DecayPolicy::constant(0.5, 64, 32).unwrap();
        let mut block = Array2::from_elem((4, 8), 1.25f64);
        let expected = block.clone();
        apply_decay_block(&mut block, 10, 8, &policy, &grid);
        assert_eq!(block, expected);
    }

    #[test]
    fn decay_block_matches_scalar_factors() {
        let grid = GridShape::new(16, 2, 1).unwrap();
        let policy = DecayPolicy::constant(0.9, 8, 16)
            .unwrap()
            .with_risk_band(0.6, 6.0, 1)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = grid.token_count();
        let raw = Array2::from_shape_fn((6, 9), |_| rng.random::<f64>() * 2.0 - 1.0);
        let (q0, k0) = (n - 6, 3);
        let mut block = raw.clone();
        apply_decay_block(&mut block, q0, k0, &policy, &grid);
        for r in 0..6 {
            for c in 0..9 {
                let i = q0 + r;
                let j = k0 + c;
                let delta = crate::decay::displacement(
                    i,
                    j,
                    &grid,
                    crate::decay::PositionMode::TemporalFrame,
                )
                .unwrap();
                let factor = policy.factor_at(delta, raw[(r, c)] >= 0.0);
                assert_abs_diff_eq!(block[(r, c)], raw[(r, c)] * factor, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn risk_band_hits_exactly_2gamma_plus_1_diagonals() {
        let grid = GridShape::temporal(64).unwrap();
        let gamma = 4u32;
        let policy = DecayPolicy::constant(0.9, 10, 64)
            .unwrap()
            .with_risk_band(0.6, 20.0, gamma)
            .unwrap();
        // all-positive logits so the sign gate never masks the band
        let mut block = Array2::from_elem((16, 16), 2.0f64);
        apply_decay_block(&mut block, 16, 0, &policy, &grid);
        let mut beta_diagonals = std::collections::BTreeSet::new();
        for r in 0..16 {
            for c in 0..16 {
                let delta = (16 + r) as i64 - c as i64; // ranges 1..=31
                if (block[(r, c)] - 2.0 * 0.6).abs() < 1e-12 {
                    beta_diagonals.insert(delta);
                }
            }
        }
        // band m=1 around 20 with gamma 4: deltas 16..=24
        assert_eq!(beta_diagonals.len(), (2 * gamma + 1) as usize);
        assert_eq!(
            beta_diagonals.iter().cloned().collect::<Vec<_>>(),
            (16..=24).collect::<Vec<_>>()
        );
    }

    #[test]
    fn permuting_within_frame_keys_and_values_preserves_output() {
        let grid = GridShape::new(6, 2, 2).unwrap();
        let prob = random_problem(77, grid, 8, 4);
        let policy = DecayPolicy::constant(0.9, 2, 6).unwrap();
        let base = attend_tiled(&prob, Some(&policy), TileConfig::new(4, 4).unwrap()).unwrap();

        // permute tokens within each frame; frame displacements (and hence
        // every decay factor) are unchanged
        let n = grid.token_count();
        let mut perm: Vec<usize> = (0..n).collect();
        for f in 0..grid.t_len {
            let start = f * 4;
            perm[start..start + 4].rotate_left(f % 4);
        }
        let gather = |m: &Array2<f64>| {
            let mut out = m.clone();
            for (dst, &src) in perm.iter().enumerate() {
                out.row_mut(dst).assign(&m.row(src));
            }
            out
        };
        let permuted = AttentionProblem::new(
            prob.queries.clone(),
            gather(&prob.keys),
            gather(&prob.values),
            grid,
            prob.scale,
        )
        .unwrap();
        let got = attend_tiled(&permuted, Some(&policy), TileConfig::new(4, 4).unwrap()).unwrap();
        assert!(max_abs_diff(&base.output, &got.output) <= 1e-10);
    }

    #[test]
    fn aux_memory_is_flat_in_sequence_length() {
        let cfg = TileConfig::new(16, 16).unwrap();
        let mut sizes = Vec::new();
        for t_len in [64, 256, 1024] {
            let grid = GridShape::temporal(t_len).unwrap();
            let prob = random_problem(t_len as u64, grid, 8, 8);
            let out = attend_tiled(&prob, None, cfg).unwrap();
            sizes.push(out.peak_aux_bytes);
        }
        assert_eq!(sizes[0], sizes[1]);
        assert_eq!(sizes[1], sizes[2]);
        // far below any L' x L' footprint
        assert!(sizes[0] < 1024 * 1024);
    }

    #[test]
    fn online_row_stats_match_reference_map() {
        let grid = GridShape::temporal(20).unwrap();
        let prob = random_problem(55, grid, 8, 4);
        let policy = DecayPolicy::constant(0.8, 6, 20).unwrap();
        let reference = attend_reference(
            &prob,
            Some(&policy),
            None,
            &ReferenceOptions::default(),
        )
        .unwrap();
        let opts = TiledOptions { collect_row_stats: true, ..Default::default() };
        let tiled =
            attend_tiled_with(&prob, Some(&policy), TileConfig::new(6, 7).unwrap(), &opts)
                .unwrap();
        let a = reference.row_stats.unwrap();
        let b = tiled.row_stats.unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x.in_window_mass, y.in_window_mass, epsilon = 1e-10);
            assert_abs_diff_eq!(x.entropy, y.entropy, epsilon = 1e-10);
        }
    }

    #[test]
    fn fault_injection_breaks_equivalence() {
        let grid = GridShape::temporal(16).unwrap();
        let prob = random_problem(60, grid, 8, 4);
        let reference =
            attend_reference(&prob, None, None, &ReferenceOptions::default()).unwrap();
        let opts = TiledOptions {
            fault: Some(FaultInjection { query: 3, key: 11 }),
            ..Default::default()
        };
        let tiled =
            attend_tiled_with(&prob, None, TileConfig::new(4, 4).unwrap(), &opts).unwrap();
        assert!(max_abs_diff(&reference.output, &tiled.output) > 1e-6);
    }

    #[test]
    fn rejects_invalid_tiles_and_nonfinite_input()
    {
        let grid = GridShape::temporal(4).unwrap();
        let prob = random_problem(1, grid, 4, 2);
        assert!(TileConfig::new(0, 4).is_err());
        let mut bad = prob.clone();
        bad.values[(1, 1)] = f64::INFINITY;
        assert!(matches!(
            attend_tiled(&bad, None, TileConfig::new(2, 2).unwrap()),
            Err(Error::Numeric(_))
        ));
    }
}
