//! Quick internal consistency checks against the dense and brute-force references.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cf::cf_forward_with_response;
use crate::eval::{run_eval, success_curve, EvalMode, Replay};
use crate::image::GrayImage;
use crate::io::Sequence;
use crate::oracle::{direct_cf, direct_conv, direct_xcorr, gradcheck_cf, random_instance};
use crate::spectral::{circ_conv, circ_xcorr, dft2, idft2, Plane};
use crate::tracker::Rect;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

fn random_plane(m: usize, rng: &mut ChaCha8Rng) -> Plane {
    Plane::from_fn(m, |_, _| rng.random_range(-1.0..1.0))
}

fn forward_vs_dense() -> f64 {
    let mut worst: f64 = 0.0;
    for m in [4, 8] {
        for k in [1, 3] {
            for seed in 0..3 {
                let (x, y, _) = random_instance(m, k, seed);
                let fast = cf_forward_with_response(&x, &y, 0.1).map(|(w, _)| w);
                let dense = direct_cf(&x, &y, 0.1);
                worst = match (fast, dense) {
                    (Ok(a), Ok(b)) => worst.max(a.max_abs_diff(&b)),
                    _ => f64::INFINITY,
                };
            }
        }
    }
    worst
}

fn gradients() -> f64 {
    [(4, 1, 0.1), (4, 2, 0.01), (8, 2, 10.0)]
        .iter()
        .enumerate()
        .map(|(seed, &(m, k, l))| {
            gradcheck_cf(m, k, l, seed as u64).map_or(f64::INFINITY, |r| r.worst())
        })
        .fold(0.0, f64::max)
}

fn parseval(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for m in [3, 8, 16] {
        let (a, b) = (random_plane(m, rng), random_plane(m, rng));
        let spatial = a.dot(&b);
        let spectral = dft2(&a).inner(&dft2(&b)).re / (m * m) as f64;
        worst = worst.max((spatial - spectral).abs() / spatial.abs().max(1e-300));
    }
    worst
}

fn products(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for m in [2, 5, 16] {
        let (a, b) = (random_plane(m, rng), random_plane(m, rng));
        let pairs = [
            (circ_xcorr(&a, &b), direct_xcorr(&a, &b)),
            (circ_conv(&a, &b), direct_conv(&a, &b)),
        ];
        for pair in pairs {
            worst = match pair {
                (Ok(f), Ok(d)) => worst.max(f.max_abs_diff(&d)),
                _ => f64::INFINITY,
            };
        }
    }
    worst
}

fn round_trip(rng: &mut ChaCha8Rng) -> f64 {
    [4, 7, 16]
        .iter()
        .map(|&m| {
            let a = random_plane(m, rng);
            idft2(&dft2(&a)).map_or(f64::INFINITY, |b| b.max_abs_diff(&a))
        })
        .fold(0.0, f64::max)
}

fn auc_vs_mean(rng: &mut ChaCha8Rng) -> f64 {
    (0..100)
        .map(|_| {
            let n = rng.random_range(1..200);
            let o: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
            let mean = o.iter().sum::<f64>() / n as f64;
            (success_curve(&o).expect("non-empty").1 - mean).abs()
        })
        .fold(0.0, f64::max)
}

/// 0 when a one-start multi-start run equals a single run and a target lost at
/// frame 5 zeroes every later frame, 1 otherwise.
fn protocol() -> f64 {
    let rects: Vec<Rect> = (0..12).map(|i| Rect::new(i as f64, 0.0, 8.0, 8.0)).collect();
    let seq = match Sequence::new(vec![GrayImage::filled(2, 2, 0.0); 12], rects.clone()) {
        Ok(s) => s,
        Err(_) => return 1.0,
    };
    let mut traj = rects;
    traj[4] = Rect::new(50.0, 50.0, 8.0, 8.0);
    let replay = Replay(traj);
    let ope = run_eval(&seq, &&replay, EvalMode::Ope);
    let tre1 = run_eval(&seq, &&replay, EvalMode::Tre(1));
    match (ope, tre1) {
        (Ok(a), Ok(b)) if a == b && a.runs[0].overlaps[3..].iter().all(|&o| o == 0.0) => 0.0,
        _ => 1.0,
    }
}

/// Runs every check; deterministic.
pub fn run() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    vec![
        Check { name: "filter vs dense solve (max abs)", value: forward_vs_dense(), tolerance: 1e-9 },
        Check { name: "backward vs finite differences (max rel)", value: gradients(), tolerance: 1e-4 },
        Check { name: "parseval (max rel)", value: parseval(&mut rng), tolerance: 1e-10 },
        Check { name: "fft products vs direct sums (max abs)", value: products(&mut rng), tolerance: 1e-12 },
        Check { name: "dft round trip (max abs)", value: round_trip(&mut rng), tolerance: 1e-12 },
        Check { name: "auc vs mean overlap (max abs)", value: auc_vs_mean(&mut rng), tolerance: 0.01 },
        Check { name: "single-start and termination protocol", value: protocol(), tolerance: 0.0 },
    ]
}
