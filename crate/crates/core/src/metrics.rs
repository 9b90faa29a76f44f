//! Classification metrics.

use crate::error::{FusionError, Result};
use crate::network::Labels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise argmax of `(N, K)` logits.
pub fn predict_classes<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let (n, k) = rows(logits)?;
    Ok((0..n)
        .map(|i| crate::cell::argmax(&logits.data()[i * k..(i + 1) * k]).expect("k > 0"))
        .collect())
}

/// Positive where the logit is positive.
pub fn predict_multilabel<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<Vec<bool>>> {
    let (_, k) = rows(logits)?;
    Ok(logits.data().chunks(k).map(|r| r.iter().map(|v| *v > T::zero()).collect()).collect())
}

fn rows<T: Scalar>(logits: &Tensor<T>) -> Result<(usize, usize)> {
    match logits.shape() {
        &[n, k] if k > 0 => Ok((n, k)),
        s => Err(FusionError::shape("logits", format!("expected (N, K), got {s:?}"))),
    }
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Per-class F1 averaged with class-support weights.
pub fn weighted_f1_multiclass(pred: &[usize], truth: &[usize], n_classes: usize) -> f64 {
    let mut tp = vec![0; n_classes];
    let mut fp = vec![0; n_classes];
    let mut fn_ = vec![0; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let total = truth.len();
    if total == 0 {
        return 0.0;
    }
    (0..n_classes)
        .map(|c| (tp[c] + fn_[c]) as f64 * f1(tp[c], fp[c], fn_[c]))
        .sum::<f64>()
        / total as f64
}

/// Per-label F1 averaged with positive-support weights.
pub fn weighted_f1_multilabel(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> f64 {
    let k = truth.first().map_or(0, Vec::len);
    let mut num = 0.0;
    let mut support_total = 0;
    for c in 0..k {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, t) in pred.iter().zip(truth) {
            match (p[c], t[c]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let support = tp + fn_;
        num += support as f64 * f1(tp, fp, fn_);
        support_total += support;
    }
    if support_total == 0 {
        0.0
    } else {
        num / support_total as f64
    }
}

/// Accuracy for multiclass tasks, weighted F1 for multilabel tasks.
pub fn task_metric<T: Scalar>(logits: &Tensor<T>, labels: &Labels) -> Result<f64> {
    let (n, _) = rows(logits)?;
    if n != labels.len() {
        return Err(FusionError::shape("metric", format!("{n} predictions for {} labels", labels.len())));
    }
    Ok(match labels {
        Labels::Multiclass(t) => accuracy(&predict_classes(logits)?, t),
        Labels::Multilabel(t) => weighted_f1_multilabel(&predict_multilabel(logits)?, t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_f1_hand_computed() {
        // truth support: class 0 x4, class 1 x3, class 2 x3
        let truth = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
        let pred = [0, 0, 1, 2, 1, 1, 0, 2, 2, 1];
        // class 0: tp 2, fp 1, fn 2 -> 4/7
        // class 1: tp 2, fp 2, fn 1 -> 4/7
        // class 2: tp 2, fp 1, fn 1 -> 4/6
        let expected = (4.0 * 4.0 / 7.0 + 3.0 * 4.0 / 7.0 + 3.0 * 4.0 / 6.0) / 10.0;
        assert!((weighted_f1_multiclass(&pred, &truth, 3) - expected).abs() < 1e-12);
        assert!((accuracy(&pred, &truth) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn multilabel_f1() {
        let truth = vec![vec![true, false], vec![true, true], vec![false, true]];
        let pred = vec![vec![true, true], vec![false, true], vec![false, true]];
        // label 0: tp 1, fn 1 -> 2/3, support 2; label 1: tp 2, fp 1 -> 4/5, support 2
        let expected = (2.0 * 2.0 / 3.0 + 2.0 * 0.8) / 4.0;
        assert!((weighted_f1_multilabel(&pred, &truth) - expected).abs() < 1e-12);
    }

    #[test]
    fn task_metric_dispatch() {
        let logits = Tensor::<f64>::from_f64(&[2, 2], &[1.0, -1.0, -0.5, 0.5]).unwrap();
        assert_eq!(task_metric(&logits, &Labels::Multiclass(vec![0, 0])).unwrap(), 0.5);
        let ml = Labels::Multilabel(vec![vec![true, false], vec![false, true]]);
        assert_eq!(task_metric(&logits, &ml).unwrap(), 1.0);
    }
}
