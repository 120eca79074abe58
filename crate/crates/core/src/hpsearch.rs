//! Random search over the online tracker's hyperparameters.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{mean_auc, run_suite, EvalMode, ModelTracker};
use crate::io::Sequence;
use crate::net::Model;
use crate::tracker::TrackerConfig;

/// Closed sampling interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn check(&self, field: &'static str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::InvalidRange {
                field,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub scale_step: Interval,
    pub scale_penalty: Interval,
    pub scale_lr: Interval,
    pub win_weight: Interval,
    pub template_lr: Interval,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            scale_step: Interval::new(1.01, 1.10),
            scale_penalty: Interval::new(0.95, 1.00),
            scale_lr: Interval::new(0.40, 0.90),
            win_weight: Interval::new(0.15, 0.35),
            template_lr: Interval::new(0.0, 0.02),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        self.scale_step.check("scale_step")?;
        self.scale_penalty.check("scale_penalty")?;
        self.scale_lr.check("scale_lr")?;
        self.win_weight.check("win_weight")?;
        self.template_lr.check("template_lr")?;
        if self.scale_step.lo <= 1.0 {
            return Err(Error::InvalidRange {
                field: "scale_step",
                lo: self.scale_step.lo,
                hi: self.scale_step.hi,
            });
        }
        let unit = |iv: &Interval, field| {
            if iv.lo < 0.0 || iv.hi > 1.0 {
                Err(Error::InvalidRange { field, lo: iv.lo, hi: iv.hi })
            } else {
                Ok(())
            }
        };
        unit(&self.scale_lr, "scale_lr")?;
        unit(&self.win_weight, "win_weight")?;
        unit(&self.template_lr, "template_lr")?;
        if self.scale_penalty.lo <= 0.0 || self.scale_penalty.hi > 1.0 {
            return Err(Error::InvalidRange {
                field: "scale_penalty",
                lo: self.scale_penalty.lo,
                hi: self.scale_penalty.hi,
            });
        }
        Ok(())
    }

    pub fn contains(&self, c: &TrackerConfig) -> bool {
        self.scale_step.contains(c.scale_step)
            && self.scale_penalty.contains(c.scale_penalty)
            && self.scale_lr.contains(c.scale_lr)
            && self.win_weight.contains(c.win_weight)
            && self.template_lr.contains(c.template_lr)
    }
}

/// Independent uniform draw of each searched field, in declaration order.
/// Other fields keep their defaults.
pub fn sample_config<R: Rng>(ranges: &ParamRanges, rng: &mut R) -> Result<TrackerConfig> {
    ranges.validate()?;
    Ok(TrackerConfig {
        scale_step: ranges.scale_step.sample(rng),
        scale_penalty: ranges.scale_penalty.sample(rng),
        scale_lr: ranges.scale_lr.sample(rng),
        win_weight: ranges.win_weight.sample(rng),
        template_lr: ranges.template_lr.sample(rng),
        ..TrackerConfig::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub sample_index: usize,
    pub config: TrackerConfig,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub best_config: TrackerConfig,
    pub best_score: f64,
    /// One row per sample, in sample order.
    pub table: Vec<SearchRow>,
}

impl SearchOutcome {
    pub fn table_csv(&self) -> String {
        let mut s = String::from(
            "sample_index,scale_step,scale_penalty,scale_lr,win_weight,template_lr,mean_auc\n",
        );
        for r in &self.table {
            let c = &r.config;
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.sample_index, c.scale_step, c.scale_penalty, c.scale_lr, c.win_weight, c.template_lr, r.mean_auc
            )
            .expect("string write");
        }
        s
    }

    /// Counts of mean AUC in `bins` equal-width bins over `[0, 1]`.
    pub fn histogram_csv(&self, bins: usize) -> String {
        let bins = bins.max(1);
        let mut counts = vec![0usize; bins];
        for r in &self.table {
            counts[((r.mean_auc * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in counts.iter().enumerate() {
            writeln!(s, "{},{},{}", i as f64 / bins as f64, (i + 1) as f64 / bins as f64, c)
                .expect("string write");
        }
        s
    }
}

/// Picks the highest score; ties go to the lowest index.
pub fn best_of(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores explicit candidate configs by mean per-sequence AUC.
pub fn evaluate_candidates(
    model: &Arc<Model>,
    seqs: &[Sequence],
    candidates: Vec<TrackerConfig>,
    mode: EvalMode,
) -> Result<SearchOutcome> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("candidate configurations"));
    }
    if seqs.is_empty() {
        return Err(Error::EmptyInput("validation sequences"));
    }
    let scores = candidates
        .par_iter()
        .map(|config| {
            let factory = ModelTracker {
                model: model.clone(),
                config: config.clone(),
            };
            Ok(mean_auc(&run_suite(seqs, &factory, mode)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    let best_index = best_of(&scores).expect("non-empty");
    let table: Vec<SearchRow> = candidates
        .into_iter()
        .zip(&scores)
        .enumerate()
        .map(|(i, (config, &mean_auc))| SearchRow {
            sample_index: i,
            config,
            mean_auc,
        })
        .collect();
    Ok(SearchOutcome {
        best_index,
        best_config: table[best_index].config.clone(),
        best_score: scores[best_index],
        table,
    })
}

/// Samples `n_samples` configs from `ranges` and scores each.
pub fn random_search(
    model: &Arc<Model>,
    seqs: &[Sequence],
    ranges: &ParamRanges,
    n_samples: usize,
    seed: u64,
    mode: EvalMode,
) -> Result<SearchOutcome> {
    if n_samples == 0 {
        return Err(Error::EmptyInput("sample count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = (0..n_samples)
        .map(|_| sample_config(ranges, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    evaluate_candidates(model, seqs, candidates, mode)
}
