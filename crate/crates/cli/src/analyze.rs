//! `analyze-spec`: classify a rotary spec's frequency set and list the
//! repetition-risk positions inside a clip of the given length.

use std::path::PathBuf;

use clap::Args;
use focal_core::spectrum::{
    harmonic_analysis, harmonic_positions, HarmonicReport, SpectralPattern, DEFAULT_INTEGER_TOL,
};
use serde::Serialize;

use crate::common::{emit, SpecSource};
use crate::exit::{CmdResult, Failure};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub spec: SpecSource,
    /// Clip length in latent frames for the position lists.
    #[arg(long, default_value_t = 132)]
    pub seq_len: usize,
    /// Relative tolerance for near-integer frequency ratios.
    #[arg(long, default_value_t = DEFAULT_INTEGER_TOL)]
    pub integer_tol: f64,
    /// Per-plane amplitudes for dominance analysis (comma-separated).
    /// All-ones when omitted, which leaves the classification meaningful but
    /// the dominant index arbitrary among equals.
    #[arg(long, value_delimiter = ',')]
    pub amps: Option<Vec<f64>>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AnalyzeOutput {
    report: HarmonicReport,
    seq_len: usize,
    /// Multiples of the fundamental period inside the clip.
    fundamental_positions: Vec<usize>,
    /// Multiples of the dominant (effective) period inside the clip: the
    /// positions a risk band would target.
    risk_positions: Vec<usize>,
}

pub fn run(args: &AnalyzeArgs) -> CmdResult {
    let spec = args.spec.load()?;
    if spec.freq_t.is_empty() {
        return Err(Failure::config("spec has no temporal frequencies"));
    }
    let amps = match &args.amps {
        Some(a) => {
            if a.len() != spec.freq_t.len() {
                return Err(Failure::config(format!(
                    "{} amplitudes given for {} temporal planes",
                    a.len(),
                    spec.freq_t.len()
                )));
            }
            a.clone()
        }
        None => vec![1.0; spec.freq_t.len()],
    };
    let pattern = SpectralPattern::new(spec.freq_t.clone(), amps, vec![0.0; spec.freq_t.len()], 0.0)?;
    let report = harmonic_analysis(&pattern, args.integer_tol)?;

    let fundamental_view = HarmonicReport {
        effective_period: report.fundamental_period,
        ..report.clone()
    };
    let output = AnalyzeOutput {
        fundamental_positions: harmonic_positions(&fundamental_view, args.seq_len),
        risk_positions: harmonic_positions(&report, args.seq_len),
        seq_len: args.seq_len,
        report,
    };
    let mut text = serde_json::to_string_pretty(&output).expect("report serializes");
    text.push('\n');
    emit(&args.out, &text)
}
