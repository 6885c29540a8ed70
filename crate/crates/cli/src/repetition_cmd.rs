//! `repetition`: score a frame source and emit the report as JSON.

use std::path::PathBuf;

use clap::Args;
use focal_core::repetition::{norepeat_score, DistanceMode, NoRepeatParams, DEFAULT_THRESHOLD};
use focal_core::tensorio::{read_frame_dir, read_frames};

use crate::common::emit;
use crate::exit::CmdResult;

#[derive(Debug, Args)]
pub struct RepetitionArgs {
    /// A frame-major tensor container, or a directory with manifest.json.
    #[arg(long, value_name = "PATH")]
    pub frames: PathBuf,
    /// Dominant period in frames.
    #[arg(long)]
    pub period: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Search half-width around the period; 10% of the period when omitted.
    #[arg(long)]
    pub search_radius: Option<usize>,
    /// Euclidean distance over all pixels instead of range-normalized RMS.
    #[arg(long)]
    pub raw_l2: bool,
    /// Declared pixel range lower bound for container input.
    #[arg(long, default_value_t = 0.0)]
    pub range_lo: f64,
    /// Declared pixel range upper bound for container input.
    #[arg(long, default_value_t = 255.0)]
    pub range_hi: f64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn run(args: &RepetitionArgs) -> CmdResult {
    let seq = if args.frames.is_dir() {
        read_frame_dir(&args.frames)?
    } else {
        read_frames(&args.frames, (args.range_lo, args.range_hi))?
    };
    let params = NoRepeatParams {
        threshold: args.threshold,
        search_radius: args.search_radius,
        distance: if args.raw_l2 { DistanceMode::RawL2 } else { DistanceMode::RmsNormalized },
    };
    let report = norepeat_score(&seq, args.period, &params)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    emit(&args.out, &text)
}
