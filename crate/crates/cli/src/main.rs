use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cfnet::eval::{run_eval, EvalMode, ModelTracker, Replay, TrackSession, TrackerFactory};
use cfnet::hpsearch::{random_search, ParamRanges};
use cfnet::io::{self, Sequence};
use cfnet::net::{
    load_checkpoint, pairs_from_sequences, save_checkpoint, sgd_train, synth_sequence, Model, NetConfig,
    SceneConfig, TrainConfig,
};
use cfnet::oracle::gradcheck_cf;
use cfnet::tracker::TrackerConfig;

#[derive(Parser)]
#[command(name = "cfnet", version, about = "Differentiable correlation filter toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the filter's analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trials: u64,
    },
    /// Run the built-in consistency checks.
    Selftest,
    /// Write a synthetic sequence directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        #[arg(long)]
        seed: u64,
        /// Add identical-looking distractor patches.
        #[arg(long)]
        distractors: bool,
    },
    /// Train the feature network and write a checkpoint plus loss.csv beside it.
    Train {
        /// A sequence directory, or a directory of sequence directories.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        constant_alpha: bool,
        #[arg(long)]
        learn_y: bool,
        #[arg(long, default_value_t = TrainConfig::default().lr)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        /// Largest frame gap between the two images of a pair.
        #[arg(long, default_value_t = 3)]
        max_gap: usize,
    },
    /// Track the object of a sequence from its first ground-truth box.
    Track {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tracker: TrackerFlags,
    },
    /// Score a results file against a sequence's ground truth.
    Eval {
        #[arg(long, required_unless_present = "ckpt")]
        results: Option<PathBuf>,
        #[arg(long)]
        seq: PathBuf,
        /// ope, tre3, tre20 (or treN)
        #[arg(long, default_value = "ope")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        /// Rerun this model from every start frame instead of replaying the results.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        tracker: TrackerFlags,
    },
    /// Random search over tracker hyperparameters.
    Hpsearch {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated sequence directories, or a file listing one per line.
        #[arg(long)]
        seqs: String,
        #[arg(long, default_value_t = 300)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "tre3")]
        mode: String,
        /// Also write a histogram of mean AUC here.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
}

/// Tracker hyperparameters; flags override the config file, which overrides defaults.
#[derive(Args, Clone, Default)]
struct TrackerFlags {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scale_step: Option<f64>,
    #[arg(long)]
    scale_penalty: Option<f64>,
    #[arg(long)]
    scale_lr: Option<f64>,
    #[arg(long)]
    win_weight: Option<f64>,
    #[arg(long)]
    template_lr: Option<f64>,
}

impl TrackerFlags {
    fn resolve(&self) -> Result<TrackerConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("--config: cannot read {}", path.display()))?;
                io::parse_tracker_config(&text, TrackerConfig::default()).context("--config")?
            }
            None => TrackerConfig::default(),
        };
        let overrides = [
            (self.scale_step, &mut cfg.scale_step),
            (self.scale_penalty, &mut cfg.scale_penalty),
            (self.scale_lr, &mut cfg.scale_lr),
            (self.win_weight, &mut cfg.win_weight),
            (self.template_lr, &mut cfg.template_lr),
        ];
        for (flag, field) in overrides {
            if let Some(v) = flag {
                *field = v;
            }
        }
        cfg.validate().context("tracker hyperparameters")?;
        Ok(cfg)
    }
}

fn load_seq(flag: &str, dir: &Path) -> Result<Sequence> {
    io::load_sequence(dir).with_context(|| format!("{flag}: cannot load sequence {}", dir.display()))
}

fn load_model(path: &Path) -> Result<Arc<Model>> {
    Ok(Arc::new(
        load_checkpoint(path).with_context(|| format!("--ckpt: cannot load {}", path.display()))?,
    ))
}

fn parse_mode(s: &str) -> Result<EvalMode> {
    EvalMode::parse(s).with_context(|| format!("--mode: expected ope, tre3, tre20 or treN, got {s:?}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes()).with_context(|| format!("cannot write {}", path.display()))
}

/// A single sequence directory, or every sequence directory directly inside `dir`.
fn training_sequences(dir: &Path) -> Result<Vec<Sequence>> {
    if dir.join(io::GROUNDTRUTH_FILE).is_file() {
        return Ok(vec![load_seq("--data", dir)?]);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("--data: cannot read {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(io::GROUNDTRUTH_FILE).is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        bail!("--data: no sequence directories in {}", dir.display());
    }
    subdirs.iter().map(|d| load_seq("--data", d)).collect()
}

fn sequence_list(arg: &str) -> Result<Vec<PathBuf>> {
    let p = Path::new(arg);
    let items: Vec<String> = if p.is_file() {
        std::fs::read_to_string(p)
            .with_context(|| format!("--seqs: cannot read {arg}"))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect()
    } else {
        arg.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
    };
    if items.is_empty() {
        bail!("--seqs: empty sequence list");
    }
    Ok(items.into_iter().map(PathBuf::from).collect())
}

fn track_all(model: Arc<Model>, config: TrackerConfig, seq: &Sequence) -> Result<Vec<cfnet::tracker::Rect>> {
    let factory = ModelTracker { model, config };
    let mut session = factory.start(0, &seq.frames[0], seq.rects[0])?;
    let mut out = vec![seq.rects[0]];
    for (i, frame) in seq.frames.iter().enumerate().skip(1) {
        out.push(session.next(i, frame)?);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gradcheck { m, k, lambda, seed, trials } => {
            if trials == 0 {
                bail!("--trials: must be at least 1");
            }
            if !(lambda > 0.0 && lambda.is_finite()) {
                bail!("--lambda: must be positive and finite, got {lambda}");
            }
            if m == 0 || k == 0 {
                bail!("--m and --k: must be at least 1");
            }
            let mut worst_x: f64 = 0.0;
            let mut worst_y: f64 = 0.0;
            for s in seed..seed + trials {
                let r = gradcheck_cf(m, k, lambda, s).context("gradcheck")?;
                worst_x = worst_x.max(r.max_rel_err_x);
                worst_y = worst_y.max(r.max_rel_err_y);
            }
            println!("max_rel_err_x {worst_x:e}");
            println!("max_rel_err_y {worst_y:e}");
            println!("max_rel_err {:e}", worst_x.max(worst_y));
            if worst_x.max(worst_y) > 1e-4 {
                bail!("gradient check exceeded 1e-4");
            }
        }
        Command::Selftest => {
            let checks = cfnet::selftest::run();
            for c in &checks {
                let tag = if c.passed() { "PASS" } else { "FAIL" };
                println!("{tag} {}: {:e} (tolerance {:e})", c.name, c.value, c.tolerance);
            }
            if !checks.iter().all(|c| c.passed()) {
                bail!("selftest failed");
            }
        }
        Command::Synth { out, frames, seed, distractors } => {
            let cfg = SceneConfig {
                distractors: usize::from(distractors),
                ..SceneConfig::default()
            };
            let s = synth_sequence(&cfg, frames, seed).context("--frames")?;
            io::write_sequence(&out, &s.frames, &s.boxes)
                .with_context(|| format!("--out: cannot write {}", out.display()))?;
        }
        Command::Train { data, epochs, seed, out, constant_alpha, learn_y, lr, pairs, max_gap } => {
            let net = NetConfig {
                constant_alpha,
                learn_y,
                ..NetConfig::default()
            };
            let seqs = training_sequences(&data)?;
            let dataset = pairs_from_sequences(&seqs, &net, pairs, max_gap, seed).context("--pairs")?;
            let model = Model::init(net, seed)?;
            let cfg = TrainConfig {
                epochs,
                lr,
                seed,
                ..TrainConfig::default()
            };
            let outcome = sgd_train(&dataset, &model, &cfg).context("training")?;
            save_checkpoint(&outcome.model, &out)
                .with_context(|| format!("--out: cannot write {}", out.display()))?;
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in outcome.loss_trace.iter().enumerate() {
                writeln!(csv, "{},{}", i + 1, l)?;
            }
            let loss_path = out.parent().unwrap_or(Path::new("")).join("loss.csv");
            write(&loss_path, &csv)?;
            if let (Some(first), Some(last)) = (outcome.loss_trace.first(), outcome.loss_trace.last()) {
                println!("loss {first} -> {last}");
            }
        }
        Command::Track { ckpt, seq, out, tracker } => {
            let config = tracker.resolve()?;
            let model = load_model(&ckpt)?;
            let seq = load_seq("--seq", &seq)?;
            let rects = track_all(model, config, &seq)?;
            write(&out, &io::results_to_csv(&rects))?;
        }
        Command::Eval { results, seq, mode, out, curve, ckpt, tracker } => {
            let mode = parse_mode(&mode)?;
            let seq = load_seq("--seq", &seq)?;
            let report = match ckpt {
                Some(path) => {
                    let factory = ModelTracker {
                        model: load_model(&path)?,
                        config: tracker.resolve()?,
                    };
                    run_eval(&seq, &factory, mode)?
                }
                None => {
                    let results = results.expect("clap requires --results without --ckpt");
                    let text = std::fs::read_to_string(&results)
                        .with_context(|| format!("--results: cannot read {}", results.display()))?;
                    let rects = io::results_from_csv(&text).context("--results")?;
                    if rects.len() != seq.len() {
                        bail!("--results: {} rows for a {}-frame sequence", rects.len(), seq.len());
                    }
                    run_eval(&seq, &&Replay(rects), mode)?
                }
            };
            write(&out, &report.to_json())?;
            write(&curve, &report.curve_csv())?;
            println!("auc {} precision20 {}", report.auc, report.precision20);
        }
        Command::Hpsearch { ckpt, seqs, samples, seed, out, mode, histogram } => {
            let mode = parse_mode(&mode)?;
            if samples == 0 {
                bail!("--samples: must be at least 1");
            }
            let model = load_model(&ckpt)?;
            let seqs = sequence_list(&seqs)?
                .iter()
                .map(|d| load_seq("--seqs", d))
                .collect::<Result<Vec<_>>>()?;
            let outcome = random_search(&model, &seqs, &ParamRanges::default(), samples, seed, mode)?;
            write(&out, &outcome.table_csv())?;
            if let Some(h) = histogram {
                write(&h, &outcome.histogram_csv(20))?;
            }
            let c = &outcome.best_config;
            println!(
                "best sample {} mean_auc {} scale_step {} scale_penalty {} scale_lr {} win_weight {} template_lr {}",
                outcome.best_index, outcome.best_score, c.scale_step, c.scale_penalty, c.scale_lr, c.win_weight, c.template_lr
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
