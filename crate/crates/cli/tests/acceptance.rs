//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cfnet::cf::{cf_forward, cf_forward_with_response, CfConfig, ScoreCalibration};
use cfnet::eval::{mean_auc, run_eval, run_suite, success_curve, EvalMode, ModelTracker, Replay};
use cfnet::image::GrayImage;
use cfnet::io::Sequence;
use cfnet::net::{
    backward_loss, forward_loss, make_synthetic_dataset, sgd_train, synth_sequence, DatasetConfig, LabelMap, Model,
    NetConfig, SceneConfig, TrainConfig, TrainPair,
};
use cfnet::oracle::{direct_cf, gradcheck_cf, max_relative_error, numeric_gradient, random_instance};
use cfnet::spectral::{circ_conv, circ_xcorr, dft2, idft2};
use cfnet::tracker::{Rect, TrackerConfig};
use cfnet::{MultiChannelMap, Plane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_plane(m: usize, rng: &mut ChaCha8Rng) -> Plane {
    Plane::from_fn(m, |_, _| rng.random_range(-1.0..1.0))
}

fn forward_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for m in [4, 8, 16] {
        for k in [1, 3, 8] {
            for seed in 0..20 {
                let (x, y, _) = random_instance(m, k, 1000 * m as u64 + 100 * k as u64 + seed);
                let (w, _) = cf_forward_with_response(&x, &y, 0.1).unwrap();
                worst = worst.max(w.max_abs_diff(&direct_cf(&x, &y, 0.1).unwrap()));
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-9 && t < Duration::from_secs(60),
        format!("max abs diff {worst:.3e} (≤ 1e-9), {:.1}s (< 60s)", t.as_secs_f64()),
    )
}

fn backward_gradcheck() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for m in [4, 8] {
        for k in [1, 2, 3] {
            for lambda in [0.01, 0.1, 10.0] {
                for seed in 0..5 {
                    worst = worst.max(gradcheck_cf(m, k, lambda, seed).unwrap().worst());
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-4 && t < Duration::from_secs(120),
        format!("max rel err {worst:.3e} (≤ 1e-4), {:.1}s (< 120s)", t.as_secs_f64()),
    )
}

fn end_to_end_gradient() -> Outcome {
    let cfg = NetConfig {
        channels: 2,
        ..NetConfig::default()
    };
    let mut model = Model::init(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for b in &mut model.features.biases {
        *b = rng.random_range(-0.05..0.05);
    }
    model.calibration = ScoreCalibration { s: 0.8, b: -0.1 };
    let e = cfg.exemplar_image_side();
    let u0 = cfg.zero_displacement() as f64;
    let pair = TrainPair::new(
        Plane::from_fn(e, |_, _| rng.random_range(0.0..1.0)),
        Plane::from_fn(2 * e, |_, _| rng.random_range(0.0..1.0)),
        LabelMap::disc(cfg.search_feature_side(), (u0 - 1.0, u0 + 2.0), cfg.label_radius()).unwrap(),
    )
    .unwrap();
    let (_, cache) = forward_loss(&pair, &model).unwrap();
    let analytic = backward_loss(&cache, &model, 1.0).unwrap().to_vec();
    let numeric = numeric_gradient(
        |v| {
            let mut m = model.clone();
            m.set_params_vec(v).unwrap();
            forward_loss(&pair, &m).unwrap().0
        },
        &model.params_vec(),
        1e-6,
    )
    .unwrap();
    let err = max_relative_error(&analytic, &numeric);
    outcome(
        err <= 1e-3,
        format!("{} parameters, feature side {}, max rel err {err:.3e} (≤ 1e-3)", analytic.len(), cfg.feature_side),
    )
}

/// Textbook 2-D DFT, returned as (re, im) pairs in row-major order.
fn naive_dft(p: &Plane) -> Vec<(f64, f64)> {
    let m = p.side();
    let mut out = Vec::with_capacity(m * m);
    for kr in 0..m {
        for kc in 0..m {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..m {
                for c in 0..m {
                    let phase = -2.0 * std::f64::consts::PI * ((kr * r + kc * c) % m) as f64 / m as f64;
                    re += p[(r, c)] * phase.cos();
                    im += p[(r, c)] * phase.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

fn direct_product(a: &Plane, b: &Plane, conv: bool) -> Plane {
    let m = a.side();
    Plane::from_fn(m, |ur, uc| {
        let mut s = 0.0;
        for tr in 0..m {
            for tc in 0..m {
                let (br, bc) = if conv {
                    ((ur + m - tr) % m, (uc + m - tc) % m)
                } else {
                    ((ur + tr) % m, (uc + tc) % m)
                };
                s += a[(tr, tc)] * b[(br, bc)];
            }
        }
        s
    })
}

fn spectral_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut parseval, mut products, mut round_trip, mut vs_naive) = (0f64, 0f64, 0f64, 0f64);
    for m in 2..=16 {
        for _ in 0..3 {
            let (a, b) = (random_plane(m, &mut rng), random_plane(m, &mut rng));
            let (na, nb) = (naive_dft(&a), naive_dft(&b));
            let spectral: f64 = na.iter().zip(&nb).map(|(x, y)| x.0 * y.0 + x.1 * y.1).sum::<f64>() / (m * m) as f64;
            let spatial = a.dot(&b);
            parseval = parseval.max((spatial - spectral).abs() / spatial.abs().max(1e-300));
            let fa = dft2(&a);
            let fast_inner = fa.inner(&dft2(&b)).re / (m * m) as f64;
            parseval = parseval.max((spatial - fast_inner).abs() / spatial.abs().max(1e-300));
            for (z, n) in fa.as_slice().iter().zip(&na) {
                vs_naive = vs_naive.max((z.re - n.0).abs().max((z.im - n.1).abs()));
            }
            products = products
                .max(circ_xcorr(&a, &b).unwrap().max_abs_diff(&direct_product(&a, &b, false)))
                .max(circ_conv(&a, &b).unwrap().max_abs_diff(&direct_product(&a, &b, true)));
            round_trip = round_trip.max(idft2(&fa).unwrap().max_abs_diff(&a));
        }
    }
    outcome(
        parseval <= 1e-10 && products <= 1e-12 && round_trip <= 1e-12 && vs_naive <= 1e-10,
        format!(
            "parseval rel {parseval:.2e} (≤ 1e-10), conv/xcorr {products:.2e} (≤ 1e-12), round trip {round_trip:.2e} (≤ 1e-12), fft vs textbook dft {vs_naive:.2e}"
        ),
    )
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..500);
        let o: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let mean = o.iter().sum::<f64>() / n as f64;
        worst = worst.max((success_curve(&o).unwrap().1 - mean).abs());
    }

    let len = 40;
    let truth: Vec<Rect> = (0..len).map(|i| Rect::new(2.0 * i as f64, 5.0, 10.0, 10.0)).collect();
    let seq = Sequence::new(vec![GrayImage::filled(2, 2, 0.0); len], truth.clone()).unwrap();
    let jitter: Vec<Rect> = truth
        .iter()
        .map(|r| Rect::new(r.x + rng.random_range(-3.0..3.0), r.y + rng.random_range(-3.0..3.0), 10.0, 10.0))
        .collect();
    let replay = Replay(jitter);
    let tre1_equals_ope = run_eval(&seq, &&replay, EvalMode::Tre(1)).unwrap() == run_eval(&seq, &&replay, EvalMode::Ope).unwrap();

    // Perfect until frame k, lost there, back on target afterwards.
    let k = 17;
    let mut lost = truth.clone();
    lost[k - 1] = Rect::new(500.0, 500.0, 10.0, 10.0);
    let r = run_eval(&seq, &&Replay(lost), EvalMode::Ope).unwrap();
    let o = &r.runs[0].overlaps;
    let termination = o[..k - 2].iter().all(|&v| v == 1.0) && o[k - 2..].iter().all(|&v| v == 0.0);
    let expected: Vec<f64> = (2..=len).map(|f| if f < k { 1.0 } else { 0.0 }).collect();
    let termination = termination && o == &expected && r.auc == success_curve(&expected).unwrap().1;

    outcome(
        worst <= 0.01 && tre1_equals_ope && termination,
        format!(
            "max |auc − mean| {worst:.2e} (≤ 0.01), TRE(1) == OPE: {tre1_equals_ope}, lost-at-frame-{k} termination: {termination}"
        ),
    )
}

fn held_out(distractors: usize, seed0: u64) -> Vec<Sequence> {
    let cfg = SceneConfig {
        distractors,
        ..SceneConfig::default()
    };
    (0..5)
        .map(|i| {
            let s = synth_sequence(&cfg, 60, seed0 + i).unwrap();
            Sequence::new(s.frames, s.boxes).unwrap()
        })
        .collect()
}

fn desk_training() -> Outcome {
    let start = Instant::now();
    let net = NetConfig::default();
    let data = make_synthetic_dataset(&DatasetConfig::default(), &net, 61).unwrap();
    let model = Model::init(net.clone(), 62).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        seed: 63,
        ..TrainConfig::default()
    };
    let out = sgd_train(&data, &model, &cfg).unwrap();
    let trace = &out.loss_trace;
    let ratio = trace[trace.len() - 1] / trace[0];
    let factory = ModelTracker {
        model: Arc::new(out.model),
        config: TrackerConfig::default(),
    };
    let reports = run_suite(&held_out(0, 600), &factory, EvalMode::Tre(3)).unwrap();
    let auc = mean_auc(&reports);
    let t = start.elapsed();
    outcome(
        ratio <= 0.5 && auc >= 0.80 && t < Duration::from_secs(600),
        format!(
            "{} pairs, m = {}: loss {:.4} → {:.4} (ratio {ratio:.3} ≤ 0.5), TRE-3 AUC {auc:.4} (≥ 0.80) on 5×60 frames, {:.0}s (< 600s)",
            data.len(),
            net.feature_side,
            trace[0],
            trace[trace.len() - 1],
            t.as_secs_f64()
        ),
    )
}

/// Trains `net` on `data` at each candidate rate and keeps the lowest final training loss.
fn train_best_rate(data: &[TrainPair], net: &NetConfig) -> (Model, f64, f64) {
    let model = Model::init(net.clone(), 72).unwrap();
    [0.3, 0.03]
        .into_iter()
        .filter_map(|lr| {
            let cfg = TrainConfig {
                epochs: 20,
                lr,
                seed: 73,
                ..TrainConfig::default()
            };
            let out = sgd_train(data, &model, &cfg).ok()?;
            let last = *out.loss_trace.last()?;
            last.is_finite().then_some((out.model, lr, last))
        })
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .expect("at least one rate trains")
}

fn adaptation_directionality() -> Outcome {
    let suite = held_out(2, 700);
    let data_cfg = DatasetConfig {
        distractors: true,
        ..DatasetConfig::default()
    };
    let mut results = Vec::new();
    for constant_alpha in [false, true] {
        let net = NetConfig {
            constant_alpha,
            ..NetConfig::default()
        };
        let data = make_synthetic_dataset(&data_cfg, &net, 71).unwrap();
        let (model, lr, loss) = train_best_rate(&data, &net);
        let factory = ModelTracker {
            model: Arc::new(model),
            config: TrackerConfig::default(),
        };
        let auc = mean_auc(&run_suite(&suite, &factory, EvalMode::Tre(3)).unwrap());
        results.push((auc, lr, loss));
    }
    let (adaptive, constant) = (results[0], results[1]);
    outcome(
        adaptive.0 >= constant.0,
        format!(
            "distractor suite TRE-3 AUC: adaptive {:.4} (lr {}, final loss {:.4}) vs constant-α {:.4} (lr {}, final loss {:.4})",
            adaptive.0, adaptive.1, adaptive.2, constant.0, constant.1, constant.2
        ),
    )
}

fn median_time(x: &MultiChannelMap, cfg: &CfConfig, reps: usize) -> Vec<f64> {
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(cf_forward(std::hint::black_box(x), cfg).unwrap());
            t.elapsed().as_secs_f64()
        })
        .collect()
}

fn channel_cost() -> Outcome {
    let m = 64;
    let cfg = CfConfig::new(m, 0.01).unwrap();
    let (x2, _, _) = random_instance(m, 2, 8);
    let (x16, _, _) = random_instance(m, 16, 9);
    median_time(&x16, &cfg, 5);
    let (mut t2, mut t16) = (Vec::new(), Vec::new());
    // Interleaved so that background load affects both sizes alike.
    for _ in 0..50 {
        t2.extend(median_time(&x2, &cfg, 1));
        t16.extend(median_time(&x16, &cfg, 1));
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (v[v.len() / 2 - 1] + v[v.len() / 2]) / 2.0
    };
    let (a, b) = (median(&mut t2), median(&mut t16));
    let ratio = b / a;
    outcome(
        ratio <= 16.0,
        format!("m = 64 median {:.3} ms (k=2) vs {:.3} ms (k=16), ratio {ratio:.2} (≤ 16)", a * 1e3, b * 1e3),
    )
}

fn cfnet(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_cfnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let runs: Vec<Vec<(String, Vec<u8>)>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let d = dir.path();
            let ok = cfnet(&["synth", "--out", "train/a", "--frames", "20", "--seed", "3"], d)
                && cfnet(&["synth", "--out", "train/b", "--frames", "20", "--seed", "4", "--distractors"], d)
                && cfnet(&["synth", "--out", "val", "--frames", "20", "--seed", "5"], d)
                && cfnet(
                    &["train", "--data", "train", "--epochs", "3", "--seed", "6", "--pairs", "24", "--out", "ckpt/model.json"],
                    d,
                )
                && cfnet(&["track", "--ckpt", "ckpt/model.json", "--seq", "val", "--out", "results.csv"], d)
                && cfnet(
                    &["hpsearch", "--ckpt", "ckpt/model.json", "--seqs", "val", "--samples", "3", "--seed", "7", "--out", "table.csv"],
                    d,
                );
            assert!(ok, "a CLI command failed");
            read_tree(d)
        })
        .collect();
    let files = runs[0].len();
    let expected = ["ckpt/loss.csv", "ckpt/model.json", "results.csv", "table.csv", "val/groundtruth_rect.txt"];
    let complete = expected.iter().all(|f| runs[0].iter().any(|(p, _)| p == f));
    outcome(
        runs[0] == runs[1] && complete,
        format!("synth, train, track, hpsearch: {files} output files byte-identical across two runs: {}", runs[0] == runs[1]),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 forward oracle equivalence", forward_oracle),
        ("2 backward correctness", backward_gradcheck),
        ("3 end-to-end gradient", end_to_end_gradient),
        ("4 spectral identities", spectral_identities),
        ("5 metric identities", metric_identities),
        ("6 desk-scale training", desk_training),
        ("7 adaptation directionality", adaptation_directionality),
        ("8 channel-cost linearity", channel_cost),
        ("9 reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = std::panic::catch_unwind(run).unwrap_or_else(|_| outcome(false, "panicked".into()));
        println!("{} criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
