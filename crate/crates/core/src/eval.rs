//! Overlap metrics, success curves and one-pass / multi-start evaluation.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io::Sequence;
use crate::net::Model;
use crate::tracker::{self, Rect, TrackerConfig, TrackerState};

pub const NUM_THRESHOLDS: usize = 100;
pub const PRECISION_RADIUS: f64 = 20.0;

/// Intersection over union.
pub fn iou(a: &Rect, b: &Rect) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return Ok(0.0);
    }
    let inter = iw * ih;
    Ok((inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0))
}

/// Euclidean distance between box centres in pixels.
pub fn center_error(a: &Rect, b: &Rect) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Threshold `i` of the success curve, `i / 99`.
pub fn threshold(i: usize) -> f64 {
    i as f64 / (NUM_THRESHOLDS - 1) as f64
}

/// Fraction of overlaps `≥ i/99` for each `i`, and the mean of those fractions.
pub fn success_curve(overlaps: &[f64]) -> Result<(Vec<f64>, f64)> {
    if overlaps.is_empty() {
        return Err(Error::EmptyInput("overlap list"));
    }
    let n = overlaps.len() as f64;
    let curve: Vec<f64> = (0..NUM_THRESHOLDS)
        .map(|i| {
            let t = threshold(i);
            overlaps.iter().filter(|&&o| o >= t).count() as f64 / n
        })
        .collect();
    let auc = curve.iter().sum::<f64>() / NUM_THRESHOLDS as f64;
    Ok((curve, auc))
}

/// Fraction of centre errors within 20 pixels, boundary included.
pub fn precision20(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("centre error list"));
    }
    Ok(errors.iter().filter(|&&e| e <= PRECISION_RADIUS).count() as f64 / errors.len() as f64)
}

/// One run from the first frame, or runs from `n` equispaced start frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    Ope,
    Tre(usize),
}

impl EvalMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ope" => Ok(Self::Ope),
            _ => s
                .strip_prefix("tre")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n >= 1)
                .map(Self::Tre)
                .ok_or_else(|| Error::Parse(format!("unknown evaluation mode {s:?}"))),
        }
    }

    /// 1-based start frames for a sequence of `len` frames: `1 + ⌊j·len/n⌋`.
    pub fn start_frames(&self, len: usize) -> Vec<usize> {
        match *self {
            Self::Ope => vec![1],
            Self::Tre(n) => (0..n).map(|j| 1 + j * len / n).collect(),
        }
    }
}

/// A tracker that can be started on a frame and stepped through the rest.
pub trait TrackerFactory: Sync {
    type Session: TrackSession;
    /// `frame_index` is the 0-based index of `frame` in its sequence.
    fn start(&self, frame_index: usize, frame: &GrayImage, rect: Rect) -> Result<Self::Session>;
}

pub trait TrackSession {
    fn next(&mut self, frame_index: usize, frame: &GrayImage) -> Result<Rect>;
}

/// Runs the learned tracker with fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct ModelTracker {
    pub model: Arc<Model>,
    pub config: TrackerConfig,
}

impl TrackerFactory for ModelTracker {
    type Session = TrackerState;
    fn start(&self, _: usize, frame: &GrayImage, rect: Rect) -> Result<TrackerState> {
        tracker::init(frame, rect, self.model.clone(), self.config.clone())
    }
}

impl TrackSession for TrackerState {
    fn next(&mut self, _: usize, frame: &GrayImage) -> Result<Rect> {
        self.step(frame)
    }
}

/// Replays a stored trajectory, one box per frame of the sequence.
#[derive(Debug, Clone)]
pub struct Replay(pub Vec<Rect>);

#[derive(Debug, Clone)]
pub struct ReplaySession<'a>(&'a [Rect]);

impl<'a> TrackerFactory for &'a Replay {
    type Session = ReplaySession<'a>;
    fn start(&self, _: usize, _: &GrayImage, _: Rect) -> Result<ReplaySession<'a>> {
        Ok(ReplaySession(&self.0))
    }
}

impl TrackSession for ReplaySession<'_> {
    fn next(&mut self, frame_index: usize, _: &GrayImage) -> Result<Rect> {
        self.0.get(frame_index).copied().ok_or(Error::FrameCountMismatch {
            frames: frame_index + 1,
            rects: self.0.len(),
        })
    }
}

/// Scores of one run. The start frame itself is not scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub start_frame: usize,
    pub overlaps: Vec<f64>,
    /// Absent for frames after the run was terminated.
    pub center_errors: Vec<Option<f64>>,
}

/// Runs from `start_frame` (1-based) to the end. The first frame with zero
/// overlap ends the run, and every remaining frame scores zero.
pub fn run_from<F: TrackerFactory>(seq: &Sequence, factory: &F, start_frame: usize) -> Result<RunRecord> {
    let first = start_frame - 1;
    let mut session = factory.start(first, &seq.frames[first], seq.rects[first])?;
    let remaining = seq.len() - start_frame;
    let mut overlaps = Vec::with_capacity(remaining);
    let mut center_errors = Vec::with_capacity(remaining);
    for i in start_frame..seq.len() {
        let pred = session.next(i, &seq.frames[i])?;
        let o = iou(&pred, &seq.rects[i])?;
        overlaps.push(o);
        center_errors.push(Some(center_error(&pred, &seq.rects[i])));
        if o == 0.0 {
            break;
        }
    }
    overlaps.resize(remaining, 0.0);
    center_errors.resize(remaining, None);
    Ok(RunRecord {
        start_frame,
        overlaps,
        center_errors,
    })
}

/// Pooled evaluation of one or more runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub precision20: f64,
    pub num_runs: usize,
    pub start_frames: Vec<usize>,
    pub curve: Vec<f64>,
    pub runs: Vec<RunRecord>,
}

impl EvalReport {
    /// Pools every frame of every run. Frames after termination count as misses.
    pub fn from_runs(runs: Vec<RunRecord>) -> Result<Self> {
        let overlaps: Vec<f64> = runs.iter().flat_map(|r| r.overlaps.iter().copied()).collect();
        let errors: Vec<f64> = runs
            .iter()
            .flat_map(|r| r.center_errors.iter().map(|e| e.unwrap_or(f64::INFINITY)))
            .collect();
        let (curve, auc) = success_curve(&overlaps)?;
        Ok(Self {
            auc,
            precision20: precision20(&errors)?,
            num_runs: runs.len(),
            start_frames: runs.iter().map(|r| r.start_frame).collect(),
            curve,
            runs,
        })
    }

    /// Mean of all pooled overlaps.
    pub fn mean_overlap(&self) -> f64 {
        let n: usize = self.runs.iter().map(|r| r.overlaps.len()).sum();
        self.runs.iter().flat_map(|r| &r.overlaps).sum::<f64>() / n as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `threshold,success` rows.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("threshold,success\n");
        for (i, v) in self.curve.iter().enumerate() {
            s.push_str(&format!("{},{}\n", threshold(i), v));
        }
        s
    }
}

/// Evaluates one sequence. Start points run in parallel; results keep start order.
pub fn run_eval<F: TrackerFactory>(seq: &Sequence, factory: &F, mode: EvalMode) -> Result<EvalReport> {
    if let EvalMode::Tre(0) = mode {
        return Err(Error::InvalidConfig("TRE needs at least one start frame".into()));
    }
    let runs = mode
        .start_frames(seq.len())
        .into_par_iter()
        .filter(|&s| s < seq.len())
        .map(|s| run_from(seq, factory, s))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_runs(runs)
}

/// Per-sequence reports for a suite, evaluated in parallel, returned in input order.
pub fn run_suite<F: TrackerFactory>(seqs: &[Sequence], factory: &F, mode: EvalMode) -> Result<Vec<EvalReport>> {
    if seqs.is_empty() {
        return Err(Error::EmptyInput("sequence list"));
    }
    seqs.par_iter().map(|s| run_eval(s, factory, mode)).collect()
}

/// Mean per-sequence AUC.
pub fn mean_auc(reports: &[EvalReport]) -> f64 {
    reports.iter().map(|r| r.auc).sum::<f64>() / reports.len() as f64
}
