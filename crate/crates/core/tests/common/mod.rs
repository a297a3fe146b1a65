//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cyclic Jacobi eigendecomposition of a symmetric `n x n` matrix.
/// Returns eigenvalues in descending order with matching unit eigenvectors
/// (row `k` of the returned matrix).
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| (a[k * n + k], (0..n).map(|i| v[i * n + k]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs.into_iter().unzip()
}

/// Sample covariance with the `n - 1` denominator, straightforward loops.
pub fn covariance(samples: &[f64], d: usize) -> Vec<f64> {
    let n = samples.len() / d;
    let mut mean = vec![0.0; d];
    for row in samples.chunks(d) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / n as f64;
        }
    }
    let mut c = vec![0.0; d * d];
    for row in samples.chunks(d) {
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    c
}

/// Covariance of `x` projected onto the complement of the constant vector:
/// `P C P` with `P = I - 11^T / d`.
pub fn residual_covariance(c: &[f64], d: usize) -> Vec<f64> {
    let p = |i: usize, j: usize| (i == j) as u8 as f64 - 1.0 / d as f64;
    let mut pc = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            pc[i * d + j] = (0..d).map(|k| p(i, k) * c[k * d + j]).sum();
        }
    }
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| pc[i * d + k] * p(k, j)).sum();
        }
    }
    out
}

/// AUC by comparing every (positive, negative) pair.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut doubled: u64 = 0;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        if yi {
            pos += 1;
        } else {
            neg += 1;
        }
        if !yi {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj {
                continue;
            }
            doubled += if scores[i] > scores[j] {
                2
            } else if scores[i] == scores[j] {
                1
            } else {
                0
            };
        }
    }
    doubled as f64 / (2 * pos * neg) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSplit {
    pub feature: usize,
    /// Largest value sent left.
    pub lo: f64,
    /// Smallest value sent right.
    pub hi: f64,
    pub gain: f64,
}

/// First-round root split by trying every feature and every gap between
/// distinct values. Gradients come from the log-odds prior. Ties (within
/// `rtol`) go to the lowest feature, then the lowest threshold.
pub fn exhaustive_root_split(
    features: &[f64],
    d: usize,
    labels: &[bool],
    lambda: f64,
    min_child_weight: f64,
    rtol: f64,
) -> Option<OracleSplit> {
    let n = labels.len();
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let base = ((pos / n as f64) / (1.0 - pos / n as f64)).ln() as f32 as f64;
    let p = 1.0 / (1.0 + (-base).exp());
    let g: Vec<f64> = labels.iter().map(|&y| p - y as u8 as f64).collect();
    let h = p * (1.0 - p);
    let gt: f64 = g.iter().sum();
    let ht = h * n as f64;
    let obj = |g: f64, h: f64| g * g / (h + lambda);

    let mut all = Vec::new();
    for f in 0..d {
        let mut values: Vec<f64> = (0..n).map(|i| features[i * d + f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let left: Vec<usize> = (0..n).filter(|&i| features[i * d + f] <= lo).collect();
            let gl: f64 = left.iter().map(|&i| g[i]).sum();
            let hl = h * left.len() as f64;
            let (gr, hr) = (gt - gl, ht - hl);
            if hl < min_child_weight || hr < min_child_weight {
                continue;
            }
            let gain = 0.5 * (obj(gl, hl) + obj(gr, hr) - obj(gt, ht));
            if gain > 0.0 {
                all.push(OracleSplit { feature: f, lo, hi, gain });
            }
        }
    }
    let best = all.iter().map(|s| s.gain).fold(f64::NEG_INFINITY, f64::max);
    all.into_iter()
        .filter(|s| s.gain >= best - rtol * best.abs())
        .min_by(|a, b| a.feature.cmp(&b.feature).then(a.lo.total_cmp(&b.lo)))
}

/// f32 threshold for a gap: the rounded midpoint, nudged up if rounding
/// landed on `lo`.
pub fn gap_threshold(lo: f64, hi: f64) -> f32 {
    let t = ((lo + hi) / 2.0) as f32;
    if t as f64 > lo {
        t
    } else {
        t.next_up()
    }
}

/// Random dataset with a mix of continuous and small-integer features.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<f64>, Vec<bool>) {
    let discrete: Vec<bool> = (0..d).map(|_| rng.gen_bool(0.3)).collect();
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = discrete
            .iter()
            .map(|&disc| {
                if disc {
                    rng.gen_range(0..4) as f64
                } else {
                    rng.gen_range(-2.0..2.0)
                }
            })
            .collect();
        let z: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.gen_range(-0.7..0.7);
        y.push(z > 0.0);
        x.extend(row);
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        y[0] = !y[0];
    }
    (x, y)
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_defakehop")
}

pub fn run_cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run_cli(args);
    assert!(
        out.status.success(),
        "defakehop {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Generates a synthetic dataset through the CLI and returns the manifest path.
pub fn gen_synth(dir: &Path, seed: u64, amplitude: f64, videos: usize, test_videos: usize, frames: usize) -> PathBuf {
    run_ok(&[
        "gen-synth",
        "--out",
        path_str(dir),
        "--seed",
        &seed.to_string(),
        "--amplitude",
        &amplitude.to_string(),
        "--videos",
        &videos.to_string(),
        "--test-videos",
        &test_videos.to_string(),
        "--frames",
        &frames.to_string(),
    ]);
    dir.join("manifest.jsonl")
}

/// Mean logistic loss from raw margins, via softplus and compensated
/// summation so that rounding stays far below per-round loss changes.
pub fn margin_log_loss(margins: &[f64], labels: &[bool]) -> f64 {
    let softplus = |z: f64| z.max(0.0) + (-z.abs()).exp().ln_1p();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (&m, &y) in margins.iter().zip(labels) {
        let v = if y { softplus(-m) } else { softplus(m) };
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    (sum + comp) / margins.len() as f64
}
