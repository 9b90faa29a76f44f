//! Scalar-loop reference implementations shared by the integration tests.
#![allow(dead_code)]

use fusionnas::Tensor64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor64 {
    Tensor64::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn dims(t: &Tensor64) -> (usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2])
}

pub fn add(x: &Tensor64, y: &Tensor64) -> Tensor64 {
    Tensor64::from_fn(x.shape(), |i| x.get(i) + y.get(i))
}

pub fn scale(x: &Tensor64, s: f64) -> Tensor64 {
    Tensor64::from_fn(x.shape(), |i| x.get(i) * s)
}

/// `out[n, o, l] = sum_c x[n, c, l] w[c, o] (+ b[o])`.
pub fn channel_map(x: &Tensor64, w: &Tensor64, b: Option<&Tensor64>) -> Tensor64 {
    let (n, c, l) = dims(x);
    Tensor64::from_fn(&[n, w.shape()[1], l], |i| {
        let (r, o, p) = (i[0], i[1], i[2]);
        let mut acc = b.map_or(0.0, |b| b.get(&[o]));
        for k in 0..c {
            acc += x.get(&[r, k, p]) * w.get(&[k, o]);
        }
        acc
    })
}

/// Single-head attention, query `x`, key and value `y`, positions along L.
pub fn attention(x: &Tensor64, y: &Tensor64) -> Tensor64 {
    let (n, c, l) = dims(x);
    let mut out = Tensor64::zeros(&[n, c, l]);
    for r in 0..n {
        for i in 0..l {
            let scores: Vec<f64> = (0..l)
                .map(|j| (0..c).map(|k| x.get(&[r, k, i]) * y.get(&[r, k, j])).sum::<f64>() / (c as f64).sqrt())
                .collect();
            let a = softmax(&scores);
            for k in 0..c {
                out.set(&[r, k, i], (0..l).map(|j| a[j] * y.get(&[r, k, j])).sum());
            }
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn glu(x: &Tensor64, y: &Tensor64, w1: &Tensor64, w2: &Tensor64) -> Tensor64 {
    let a = channel_map(x, w1, None);
    let b = channel_map(y, w2, None);
    Tensor64::from_fn(a.shape(), |i| a.get(i) * sigmoid(b.get(i)))
}

pub fn concat_fc(x: &Tensor64, y: &Tensor64, w: &Tensor64, b: &Tensor64) -> Tensor64 {
    let (n, c, l) = dims(x);
    Tensor64::from_fn(&[n, c, l], |i| {
        let (r, o, p) = (i[0], i[1], i[2]);
        let mut acc = b.get(&[o]);
        for k in 0..c {
            acc += x.get(&[r, k, p]) * w.get(&[k, o]) + y.get(&[r, k, p]) * w.get(&[c + k, o]);
        }
        acc.max(0.0)
    })
}

/// Mean over L then `pooled W + b`.
pub fn head(fused: &Tensor64, w: &Tensor64, b: &Tensor64) -> Tensor64 {
    let (n, c, l) = dims(fused);
    let k = w.shape()[1];
    Tensor64::from_fn(&[n, k], |i| {
        let (r, o) = (i[0], i[1]);
        b.get(&[o]) + (0..c).map(|ch| (0..l).map(|p| fused.get(&[r, ch, p])).sum::<f64>() / l as f64 * w.get(&[ch, o])).sum::<f64>()
    })
}

pub fn linf(a: &Tensor64, b: &Tensor64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
