//! Brute-force reference implementations shared by the property tests and
//! the acceptance suite. They read the raw parameter layouts directly and
//! accumulate in f64.

#![allow(dead_code)]

pub mod gradcheck;

use filterforward_core::rng::SplitMix64;
use filterforward_core::tensor::{ConvParams, FcParams, Tensor};

fn padded(input: &Tensor, i: i64, j: i64, c: usize) -> f64 {
    if i < 0 || j < 0 || i >= input.height() as i64 || j >= input.width() as i64 {
        0.0
    } else {
        input.get(i as usize, j as usize, c) as f64
    }
}

pub fn conv2d(input: &Tensor, p: &ConvParams) -> Tensor {
    let (k, s, m, f) = (p.kernel_size, p.stride, p.in_channels, p.filters);
    let r = (k / 2) as i64;
    let oh = input.height().div_ceil(s);
    let ow = input.width().div_ceil(s);
    Tensor::from_fn(oh, ow, f, |i, j, o| {
        let mut acc = p.bias[o] as f64;
        for ky in 0..k {
            for kx in 0..k {
                for c in 0..m {
                    let y = (i * s) as i64 + ky as i64 - r;
                    let x = (j * s) as i64 + kx as i64 - r;
                    acc +=
                        padded(input, y, x, c) * p.weights[((ky * k + kx) * m + c) * f + o] as f64;
                }
            }
        }
        acc as f32
    })
}

pub fn separable_conv2d(input: &Tensor, p: &ConvParams) -> Tensor {
    let (k, s, m, f) = (p.kernel_size, p.stride, p.in_channels, p.filters);
    let r = (k / 2) as i64;
    let oh = input.height().div_ceil(s);
    let ow = input.width().div_ceil(s);
    let dw_len = k * k * m;
    Tensor::from_fn(oh, ow, f, |i, j, o| {
        let mut acc = p.bias[o] as f64;
        for c in 0..m {
            let mut d = 0.0f64;
            for ky in 0..k {
                for kx in 0..k {
                    let y = (i * s) as i64 + ky as i64 - r;
                    let x = (j * s) as i64 + kx as i64 - r;
                    d += padded(input, y, x, c) * p.weights[(ky * k + kx) * m + c] as f64;
                }
            }
            acc += d * p.weights[dw_len + c * f + o] as f64;
        }
        acc as f32
    })
}

pub fn fully_connected(input: &Tensor, p: &FcParams) -> Vec<f32> {
    let len = input.height() * input.width() * input.channels();
    (0..p.hidden_units)
        .map(|n| {
            let mut acc = p.bias[n] as f64;
            for i in 0..input.height() {
                for j in 0..input.width() {
                    for c in 0..input.channels() {
                        let flat = (i * input.width() + j) * input.channels() + c;
                        acc += input.get(i, j, c) as f64 * p.weights[n * len + flat] as f64;
                    }
                }
            }
            acc as f32
        })
        .collect()
}

pub fn k_vote(labels: &[bool], n: usize, k: usize) -> Vec<bool> {
    let half = (n / 2) as i64;
    (0..labels.len() as i64)
        .map(|t| {
            let mut count = 0;
            for u in t - half..=t + half {
                if u >= 0 && (u as usize) < labels.len() && labels[u as usize] {
                    count += 1;
                }
            }
            count >= k
        })
        .collect()
}

pub struct FrameScores {
    pub precision: f64,
    pub recalls: Vec<f64>,
    pub mean_recall: f64,
    pub f1: f64,
}

/// Metrics from raw per-frame label vectors, frame by frame.
pub fn frame_scores(truth: &[bool], predicted: &[bool], alpha: f64, beta: f64) -> FrameScores {
    let mut recalls = Vec::new();
    let mut t = 0;
    while t < truth.len() {
        if !truth[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < truth.len() && truth[t] {
            t += 1;
        }
        let hits = (start..t).filter(|&u| predicted[u]).count();
        let existence = if hits > 0 { 1.0 } else { 0.0 };
        recalls.push(alpha * existence + beta * (hits as f64 / (t - start) as f64));
    }
    let predicted_count = predicted.iter().filter(|&&p| p).count();
    let correct = (0..truth.len())
        .filter(|&u| truth[u] && predicted[u])
        .count();
    let precision = if predicted_count == 0 {
        1.0
    } else {
        correct as f64 / predicted_count as f64
    };
    let mean_recall = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let f1 = if precision + mean_recall == 0.0 {
        0.0
    } else {
        2.0 * precision * mean_recall / (precision + mean_recall)
    };
    FrameScores {
        precision,
        recalls,
        mean_recall,
        f1,
    }
}

pub fn random_tensor(rng: &mut SplitMix64, h: usize, w: usize, c: usize, bound: f64) -> Tensor {
    Tensor::from_fn(h, w, c, |_, _, _| rng.uniform(-bound, bound) as f32)
}

pub fn random_vec(rng: &mut SplitMix64, n: usize, bound: f64) -> Vec<f32> {
    (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect()
}

/// Random conv instance with dims <= 8 and values in [-2, 2].
pub fn random_conv(rng: &mut SplitMix64, separable: bool) -> (Tensor, ConvParams) {
    let h = 1 + rng.below(8) as usize;
    let w = 1 + rng.below(8) as usize;
    let m = 1 + rng.below(4) as usize;
    let f = 1 + rng.below(4) as usize;
    let k = [1, 3, 5][rng.below(3) as usize];
    let s = 1 + rng.below(3) as usize;
    let input = random_tensor(rng, h, w, m, 2.0);
    let bias = random_vec(rng, f, 2.0);
    let p = if separable {
        ConvParams::separable(
            k,
            s,
            m,
            f,
            random_vec(rng, k * k * m, 2.0),
            random_vec(rng, m * f, 2.0),
            bias,
        )
    } else {
        ConvParams::standard(k, s, m, f, random_vec(rng, k * k * m * f, 2.0), bias)
    }
    .unwrap();
    (input, p)
}

pub fn random_fc(rng: &mut SplitMix64) -> (Tensor, FcParams) {
    let h = 1 + rng.below(8) as usize;
    let w = 1 + rng.below(8) as usize;
    let c = 1 + rng.below(4) as usize;
    let n = 1 + rng.below(4) as usize;
    let input = random_tensor(rng, h, w, c, 2.0);
    let p = FcParams::new(
        n,
        random_vec(rng, n * h * w * c, 2.0),
        random_vec(rng, n, 2.0),
    )
    .unwrap();
    (input, p)
}

/// Random label vector made of runs, so segments of varied length appear.
pub fn random_runs(rng: &mut SplitMix64, len: usize, max_segments: usize) -> Vec<bool> {
    let mut v = vec![false; len];
    let segments = rng.below(max_segments as u64 + 1) as usize;
    for _ in 0..segments {
        if len == 0 {
            break;
        }
        let start = rng.below(len as u64) as usize;
        let run = 1 + rng.below(20) as usize;
        for x in v.iter_mut().skip(start).take(run) {
            *x = true;
        }
    }
    v
}
