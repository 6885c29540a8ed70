//! Python bindings: the core types and operations, with numpy arrays on the
//! boundary. Build the cdylib and import it as `focal_py` (see
//! python/smoke_test.py for the loading dance without maturin).

use focal_core::attention::{
    attend_reference, AttentionProblem, InterventionMask, ReferenceOptions,
};
use focal_core::decay::{self, DecayPolicy, DecayStrategy, PositionMode};
use focal_core::repetition::{
    construct_periodic_map, norepeat_score, periodic_output_deviation, DistanceMode,
    FrameSequence, NoRepeatParams,
};
use focal_core::rope::{self, GridShape, RopeSpec};
use focal_core::spectrum::{
    self, detect_period_in_samples, estimate_pattern, harmonic_analysis, HarmonicClass,
    SpectralPattern, DEFAULT_INTEGER_TOL,
};
use focal_core::synth::{self, PlantSpec, ValueMode};
use focal_core::tiled::{attend_tiled, TileConfig};
use focal_core::Error;
use ndarray::Array2;
use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray2};
use pyo3::exceptions::{PyIOError, PyMemoryError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: Error) -> PyErr {
    match &err {
        Error::Numeric(_) => pyo3::exceptions::PyArithmeticError::new_err(err.to_string()),
        Error::Resource(_) => PyMemoryError::new_err(err.to_string()),
        Error::Io(_) => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

#[pyclass(name = "GridShape", frozen)]
#[derive(Clone)]
struct PyGridShape {
    inner: GridShape,
}

#[pymethods]
impl PyGridShape {
    #[new]
    #[pyo3(signature = (t_len, h_len=1, w_len=1))]
    fn new(t_len: usize, h_len: usize, w_len: usize) -> PyResult<Self> {
        Ok(Self { inner: GridShape::new(t_len, h_len, w_len).map_err(to_py)? })
    }

    #[getter]
    fn t_len(&self) -> usize {
        self.inner.t_len
    }

    #[getter]
    fn h_len(&self) -> usize {
        self.inner.h_len
    }

    #[getter]
    fn w_len(&self) -> usize {
        self.inner.w_len
    }

    fn token_count(&self) -> usize {
        self.inner.token_count()
    }

    fn flatten(&self, t: usize, h: usize, w: usize) -> usize {
        self.inner.flatten(t, h, w)
    }

    fn unflatten(&self, flat: usize) -> (usize, usize, usize) {
        self.inner.unflatten(flat)
    }

    fn __repr__(&self) -> String {
        format!(
            "GridShape(t_len={}, h_len={}, w_len={})",
            self.inner.t_len, self.inner.h_len, self.inner.w_len
        )
    }
}

#[pyclass(name = "RopeSpec", frozen)]
#[derive(Clone)]
struct PyRopeSpec {
    inner: RopeSpec,
}

#[pymethods]
impl PyRopeSpec {
    #[staticmethod]
    #[pyo3(signature = (theta_t, d_t, theta_h=None, d_h=0, theta_w=None, d_w=0))]
    fn from_thetas(
        theta_t: f64,
        d_t: usize,
        theta_h: Option<f64>,
        d_h: usize,
        theta_w: Option<f64>,
        d_w: usize,
    ) -> PyResult<Self> {
        let spec = RopeSpec::from_thetas(
            theta_t,
            theta_h.unwrap_or(theta_t),
            theta_w.unwrap_or(theta_t),
            d_t,
            d_h,
            d_w,
        )
        .map_err(to_py)?;
        Ok(Self { inner: spec })
    }

    #[staticmethod]
    #[pyo3(signature = (freq_t, freq_h=vec![], freq_w=vec![]))]
    fn from_frequencies(freq_t: Vec<f64>, freq_h: Vec<f64>, freq_w: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: RopeSpec::from_frequencies(freq_t, freq_h, freq_w).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: RopeSpec::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn freq_t(&self) -> Vec<f64> {
        self.inner.freq_t.clone()
    }

    #[getter]
    fn freq_h(&self) -> Vec<f64> {
        self.inner.freq_h.clone()
    }

    #[getter]
    fn freq_w(&self) -> Vec<f64> {
        self.inner.freq_w.clone()
    }

    #[getter]
    fn head_dim(&self) -> usize {
        self.inner.head_dim()
    }
}

#[pyfunction]
fn apply_rope<'py>(
    py: Python<'py>,
    x: Vec<f64>,
    pos: (i64, i64, i64),
    spec: &PyRopeSpec,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let out = rope::apply_rope(&x, pos, &spec.inner).map_err(to_py)?;
    Ok(numpy::PyArray1::from_vec(py, out))
}

#[pyfunction]
fn logit_closed_form(
    q: Vec<f64>,
    k: Vec<f64>,
    dt: i64,
    dh: i64,
    dw: i64,
    spec: &PyRopeSpec,
) -> PyResult<f64> {
    rope::logit_closed_form(&q, &k, dt, dh, dw, &spec.inner).map_err(to_py)
}

#[pyclass(name = "DecayPolicy", frozen)]
#[derive(Clone)]
struct PyDecayPolicy {
    inner: DecayPolicy,
}

fn parse_mode(mode: &str) -> PyResult<PositionMode> {
    match mode {
        "temporal-frame" => Ok(PositionMode::TemporalFrame),
        "token-index" => Ok(PositionMode::TokenIndex),
        other => Err(PyValueError::new_err(format!(
            "position_mode must be 'temporal-frame' or 'token-index', got {other}"
        ))),
    }
}

#[pymethods]
impl PyDecayPolicy {
    #[new]
    #[pyo3(signature = (
        train_window,
        seq_len,
        alpha=0.9,
        strategy="constant",
        alpha2=None,
        beta=None,
        period=None,
        gamma=0,
        position_mode="temporal-frame",
        first_frame_factor=None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        train_window: u64,
        seq_len: u64,
        alpha: f64,
        strategy: &str,
        alpha2: Option<f64>,
        beta: Option<f64>,
        period: Option<f64>,
        gamma: u32,
        position_mode: &str,
        first_frame_factor: Option<f64>,
    ) -> PyResult<Self> {
        let strategy = match strategy {
            "constant" => DecayStrategy::Constant { alpha },
            "linear" => DecayStrategy::Linear {
                alpha1: alpha,
                alpha2: alpha2.unwrap_or(0.95),
            },
            "parabolic" => DecayStrategy::Parabolic {
                alpha1: alpha,
                alpha2: alpha2.unwrap_or(0.95),
            },
            other => {
                return Err(PyValueError::new_err(format!(
                    "strategy must be constant/linear/parabolic, got {other}"
                )))
            }
        };
        let mut policy =
            DecayPolicy::new(strategy, train_window, seq_len, parse_mode(position_mode)?)
                .map_err(to_py)?;
        if let Some(beta) = beta {
            let period = period.ok_or_else(|| PyValueError::new_err("beta requires period"))?;
            policy = policy.with_risk_band(beta, period, gamma).map_err(to_py)?;
        }
        if let Some(f) = first_frame_factor {
            policy = policy.with_first_frame_factor(f).map_err(to_py)?;
        }
        Ok(Self { inner: policy })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("policy serializes")
    }

    fn base_factor(&self, delta: i64) -> f64 {
        self.inner.base_factor(delta)
    }

    fn factor_at(&self, delta: i64, logit_nonneg: bool) -> f64 {
        self.inner.factor_at(delta, logit_nonneg)
    }

    #[pyo3(signature = (query_index, key_start, key_end, signs, grid))]
    fn factor_row(
        &self,
        query_index: usize,
        key_start: usize,
        key_end: usize,
        signs: Vec<bool>,
        grid: &PyGridShape,
    ) -> PyResult<Vec<f64>> {
        self.inner
            .factor_row(query_index, key_start..key_end, &signs, &grid.inner)
            .map_err(to_py)
    }
}

#[pyfunction]
fn displacement(i: usize, j: usize, grid: &PyGridShape, mode: &str) -> PyResult<i64> {
    decay::displacement(i, j, &grid.inner, parse_mode(mode)?).map_err(to_py)
}

#[pyclass(name = "SpectralPattern", frozen)]
#[derive(Clone)]
struct PySpectralPattern {
    inner: SpectralPattern,
}

#[pymethods]
impl PySpectralPattern {
    #[new]
    #[pyo3(signature = (freqs, amps, phases=None, offset=0.0))]
    fn new(
        freqs: Vec<f64>,
        amps: Vec<f64>,
        phases: Option<Vec<f64>>,
        offset: f64,
    ) -> PyResult<Self> {
        let phases = phases.unwrap_or_else(|| vec![0.0; freqs.len()]);
        Ok(Self {
            inner: SpectralPattern::new(freqs, amps, phases, offset).map_err(to_py)?,
        })
    }

    fn evaluate(&self, dt: f64) -> f64 {
        self.inner.evaluate(dt)
    }

    fn peak_value(&self) -> f64 {
        self.inner.peak_value()
    }

    #[getter]
    fn freqs(&self) -> Vec<f64> {
        self.inner.freqs.clone()
    }

    #[getter]
    fn amps(&self) -> Vec<f64> {
        self.inner.amps.clone()
    }

    #[getter]
    fn phases(&self) -> Vec<f64> {
        self.inner.phases.clone()
    }

    #[getter]
    fn offset(&self) -> f64 {
        self.inner.offset
    }
}

#[pyclass(name = "HarmonicReport", frozen)]
struct PyHarmonicReport {
    #[pyo3(get)]
    classification: String,
    #[pyo3(get)]
    fundamental_freq: f64,
    #[pyo3(get)]
    fundamental_period: f64,
    #[pyo3(get)]
    dominant_index: usize,
    #[pyo3(get)]
    dominant_share: f64,
    #[pyo3(get)]
    effective_period: f64,
}

#[pymethods]
impl PyHarmonicReport {
    fn __repr__(&self) -> String {
        format!(
            "HarmonicReport(classification='{}', fundamental_period={:.4}, dominant_share={:.4})",
            self.classification, self.fundamental_period, self.dominant_share
        )
    }
}

#[pyfunction]
#[pyo3(signature = (pattern, integer_tol=DEFAULT_INTEGER_TOL))]
fn harmonic_analysis_py(pattern: &PySpectralPattern, integer_tol: f64) -> PyResult<PyHarmonicReport> {
    let report = harmonic_analysis(&pattern.inner, integer_tol).map_err(to_py)?;
    Ok(PyHarmonicReport {
        classification: match report.classification {
            HarmonicClass::ExactHarmonic => "exact-harmonic".into(),
            HarmonicClass::ApproximateHarmonic => "approximate-harmonic".into(),
            HarmonicClass::Inharmonic => "inharmonic".into(),
        },
        fundamental_freq: report.fundamental_freq,
        fundamental_period: report.fundamental_period,
        dominant_index: report.dominant_index,
        dominant_share: report.dominant_share,
        effective_period: report.effective_period,
    })
}

#[pyfunction]
fn harmonic_positions(report: &PyHarmonicReport, seq_len_frames: usize) -> Vec<usize> {
    let inner = spectrum::HarmonicReport {
        classification: HarmonicClass::ExactHarmonic,
        fundamental_freq: report.fundamental_freq,
        fundamental_period: report.fundamental_period,
        dominant_index: report.dominant_index,
        dominant_share: report.dominant_share,
        effective_period: report.effective_period,
    };
    spectrum::harmonic_positions(&inner, seq_len_frames)
}

#[pyfunction]
fn detect_period_samples(samples: Vec<f64>, eps: f64) -> PyResult<Option<usize>> {
    detect_period_in_samples(&samples, eps).map_err(to_py)
}

#[pyfunction]
fn detect_period_pattern(
    pattern: &PySpectralPattern,
    horizon: f64,
    step: f64,
    eps: f64,
) -> PyResult<Option<f64>> {
    let p = pattern.inner.clone();
    spectrum::detect_period(move |x| p.evaluate(x), horizon, step, eps).map_err(to_py)
}

#[pyfunction]
fn estimate_pattern_py<'py>(
    py: Python<'py>,
    queries: PyReadonlyArray2<'py, f64>,
    keys: PyReadonlyArray2<'py, f64>,
    grid: &PyGridShape,
    spec: &PyRopeSpec,
) -> PyResult<Bound<'py, PyDict>> {
    let est = estimate_pattern(queries.as_array(), keys.as_array(), &grid.inner, &spec.inner)
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("pattern", PySpectralPattern { inner: est.pattern })?;
    out.set_item("e1_variance", est.e1_variance)?;
    out.set_item("e2_variance", est.e2_variance)?;
    out.set_item("amp_se", est.amp_se)?;
    out.set_item("pairs_per_location", est.pairs_per_location)?;
    Ok(out)
}

fn problem_from_numpy(
    queries: PyReadonlyArray2<'_, f64>,
    keys: PyReadonlyArray2<'_, f64>,
    values: PyReadonlyArray2<'_, f64>,
    grid: &PyGridShape,
    scale: Option<f64>,
) -> PyResult<AttentionProblem<f64>> {
    let q: Array2<f64> = queries.as_array().to_owned();
    let k: Array2<f64> = keys.as_array().to_owned();
    let v: Array2<f64> = values.as_array().to_owned();
    match scale {
        Some(s) => AttentionProblem::new(q, k, v, grid.inner, s),
        None => AttentionProblem::with_default_scale(q, k, v, grid.inner),
    }
    .map_err(to_py)
}

fn mask_from_args(kind: Option<&str>, param: f64) -> PyResult<Option<InterventionMask>> {
    let Some(kind) = kind else { return Ok(None) };
    let mask = match kind {
        "harmonic-positions" => InterventionMask::HarmonicPositions { period: param },
        "out-of-window-proportion" => InterventionMask::OutOfWindowProportion {
            proportion: param,
            rank_by_position: false,
        },
        "leading-fraction" => InterventionMask::LeadingFraction { fraction: param },
        "trailing-fraction" => InterventionMask::TrailingFraction { fraction: param },
        "window-only" => InterventionMask::WindowOnly,
        "top-fraction" => InterventionMask::TopFraction { fraction: param },
        other => {
            return Err(PyValueError::new_err(format!("unknown mask kind {other}")))
        }
    };
    Ok(Some(mask))
}

#[pyfunction]
#[pyo3(signature = (queries, keys, values, grid, scale=None, policy=None, mask_kind=None,
                    mask_param=0.0, keep_map=false))]
#[allow(clippy::too_many_arguments)]
fn attend_reference_py<'py>(
    py: Python<'py>,
    queries: PyReadonlyArray2<'py, f64>,
    keys: PyReadonlyArray2<'py, f64>,
    values: PyReadonlyArray2<'py, f64>,
    grid: &PyGridShape,
    scale: Option<f64>,
    policy: Option<&PyDecayPolicy>,
    mask_kind: Option<&str>,
    mask_param: f64,
    keep_map: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let prob = problem_from_numpy(queries, keys, values, grid, scale)?;
    let mask = mask_from_args(mask_kind, mask_param)?;
    let opts = ReferenceOptions { keep_map, ..Default::default() };
    let out = attend_reference(&prob, policy.map(|p| &p.inner), mask.as_ref(), &opts)
        .map_err(to_py)?;

    let result = PyDict::new(py);
    result.set_item("output", out.output.into_pyarray(py))?;
    if let Some(map) = out.map {
        result.set_item("map", map.into_pyarray(py))?;
    }
    if let Some(stats) = out.row_stats {
        let mass: Vec<f64> = stats.iter().map(|s| s.in_window_mass).collect();
        let entropy: Vec<f64> = stats.iter().map(|s| s.entropy).collect();
        result.set_item("in_window_mass", mass)?;
        result.set_item("entropy", entropy)?;
    }
    result.set_item("all_masked_rows", out.all_masked_rows)?;
    Ok(result)
}

#[pyfunction]
#[pyo3(signature = (queries, keys, values, grid, scale=None, policy=None, b_q=64, b_kv=64))]
#[allow(clippy::too_many_arguments)]
fn attend_tiled_py<'py>(
    py: Python<'py>,
    queries: PyReadonlyArray2<'py, f64>,
    keys: PyReadonlyArray2<'py, f64>,
    values: PyReadonlyArray2<'py, f64>,
    grid: &PyGridShape,
    scale: Option<f64>,
    policy: Option<&PyDecayPolicy>,
    b_q: usize,
    b_kv: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let prob = problem_from_numpy(queries, keys, values, grid, scale)?;
    let cfg = TileConfig::new(b_q, b_kv).map_err(to_py)?;
    let out = attend_tiled(&prob, policy.map(|p| &p.inner), cfg).map_err(to_py)?;
    let result = PyDict::new(py);
    result.set_item("output", out.output.into_pyarray(py))?;
    result.set_item("peak_aux_bytes", out.peak_aux_bytes)?;
    result.set_item("all_masked_rows", out.all_masked_rows)?;
    Ok(result)
}

#[pyfunction]
#[pyo3(signature = (target_amps, grid, spec, spatial_constants=vec![], phases=None,
                    noise_std=0.0, seed=0))]
fn plant_pattern_py<'py>(
    py: Python<'py>,
    target_amps: Vec<f64>,
    grid: &PyGridShape,
    spec: &PyRopeSpec,
    spatial_constants: Vec<f64>,
    phases: Option<Vec<f64>>,
    noise_std: f64,
    seed: u64,
) -> PyResult<(Bound<'py, PyArray2<f64>>, Bound<'py, PyArray2<f64>>)> {
    let ps = PlantSpec {
        target_amps,
        spatial_constants,
        phases,
        noise_std,
        grid: grid.inner,
        seed,
    };
    let (q, k) = synth::plant_pattern(&ps, &spec.inner).map_err(to_py)?;
    Ok((q.into_pyarray(py), k.into_pyarray(py)))
}

#[pyfunction]
fn rotate_qk_py<'py>(
    py: Python<'py>,
    queries: PyReadonlyArray2<'py, f64>,
    keys: PyReadonlyArray2<'py, f64>,
    grid: &PyGridShape,
    spec: &PyRopeSpec,
) -> PyResult<(Bound<'py, PyArray2<f64>>, Bound<'py, PyArray2<f64>>)> {
    let q = queries.as_array().to_owned();
    let k = keys.as_array().to_owned();
    let (qr, kr) = synth::rotate_qk(&q, &k, &grid.inner, &spec.inner).map_err(to_py)?;
    Ok((qr.into_pyarray(py), kr.into_pyarray(py)))
}

#[pyfunction]
#[pyo3(signature = (queries, keys, grid, seed=0, d_v=8, frame_tagged=false))]
fn make_problem_values<'py>(
    py: Python<'py>,
    queries: PyReadonlyArray2<'py, f64>,
    keys: PyReadonlyArray2<'py, f64>,
    grid: &PyGridShape,
    seed: u64,
    d_v: usize,
    frame_tagged: bool,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let mode = if frame_tagged {
        ValueMode::FrameTagged
    } else {
        ValueMode::Random { d_v }
    };
    let prob = synth::make_problem(
        queries.as_array().to_owned(),
        keys.as_array().to_owned(),
        mode,
        grid.inner,
        seed,
    )
    .map_err(to_py)?;
    Ok(prob.values.into_pyarray(py))
}

#[pyclass(name = "RepetitionReport", frozen)]
struct PyRepetitionReport {
    #[pyo3(get)]
    is_static: bool,
    #[pyo3(get)]
    norepeat_score: Option<f64>,
    #[pyo3(get)]
    candidate_start: Option<usize>,
    #[pyo3(get)]
    repeated_count: usize,
}

#[pymethods]
impl PyRepetitionReport {
    fn __repr__(&self) -> String {
        format!(
            "RepetitionReport(is_static={}, norepeat_score={:?}, candidate_start={:?}, \
             repeated_count={})",
            self.is_static, self.norepeat_score, self.candidate_start, self.repeated_count
        )
    }
}

#[pyfunction]
#[pyo3(signature = (frames, period, threshold=55.0, search_radius=None, raw_l2=false,
                    value_range=(0.0, 255.0)))]
fn norepeat_score_py(
    frames: PyReadonlyArray2<'_, f64>,
    period: usize,
    threshold: f64,
    search_radius: Option<usize>,
    raw_l2: bool,
    value_range: (f64, f64),
) -> PyResult<PyRepetitionReport> {
    let array = frames.as_array();
    let clip: Vec<Vec<f64>> = array.rows().into_iter().map(|r| r.to_vec()).collect();
    let seq = FrameSequence::new(clip, value_range).map_err(to_py)?;
    let params = NoRepeatParams {
        threshold,
        search_radius,
        distance: if raw_l2 { DistanceMode::RawL2 } else { DistanceMode::RmsNormalized },
    };
    let report = norepeat_score(&seq, period, &params).map_err(to_py)?;
    Ok(PyRepetitionReport {
        is_static: report.is_static,
        norepeat_score: report.norepeat_score,
        candidate_start: report.candidate_start,
        repeated_count: report.repeated_count,
    })
}

#[pyfunction]
fn construct_periodic_map_py<'py>(
    py: Python<'py>,
    l_prime: usize,
    period: usize,
    seed_row: Vec<f64>,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let map = construct_periodic_map(l_prime, period, &seed_row).map_err(to_py)?;
    Ok(map.into_pyarray(py))
}

#[pyfunction]
fn periodic_output_deviation_py(
    map: PyReadonlyArray2<'_, f64>,
    values: PyReadonlyArray2<'_, f64>,
    period: usize,
) -> PyResult<f64> {
    periodic_output_deviation(&map.as_array().to_owned(), &values.as_array().to_owned(), period)
        .map_err(to_py)
}

#[pymodule]
fn focal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridShape>()?;
    m.add_class::<PyRopeSpec>()?;
    m.add_class::<PyDecayPolicy>()?;
    m.add_class::<PySpectralPattern>()?;
    m.add_class::<PyHarmonicReport>()?;
    m.add_class::<PyRepetitionReport>()?;
    m.add_function(wrap_pyfunction!(apply_rope, m)?)?;
    m.add_function(wrap_pyfunction!(logit_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(displacement, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_analysis_py, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_positions, m)?)?;
    m.add_function(wrap_pyfunction!(detect_period_samples, m)?)?;
    m.add_function(wrap_pyfunction!(detect_period_pattern, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_pattern_py, m)?)?;
    m.add_function(wrap_pyfunction!(attend_reference_py, m)?)?;
    m.add_function(wrap_pyfunction!(attend_tiled_py, m)?)?;
    m.add_function(wrap_pyfunction!(plant_pattern_py, m)?)?;
    m.add_function(wrap_pyfunction!(rotate_qk_py, m)?)?;
    m.add_function(wrap_pyfunction!(make_problem_values, m)?)?;
    m.add_function(wrap_pyfunction!(norepeat_score_py, m)?)?;
    m.add_function(wrap_pyfunction!(construct_periodic_map_py, m)?)?;
    m.add_function(wrap_pyfunction!(periodic_output_deviation_py, m)?)?;
    Ok(())
}
