//! Classification metrics for evaluation reports.

use halluc_core::hallucinate::argmax;
use halluc_core::{Error, Result};

fn check(scores: &[Vec<f64>], n: usize, classes: usize) -> Result<()> {
    if scores.len() != n {
        return Err(Error::DimensionMismatch {
            context: "score rows".into(),
            expected: n,
            got: scores.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| s.len() != classes) {
        return Err(Error::DimensionMismatch {
            context: "scores per clip".into(),
            expected: classes,
            got: bad.len(),
        });
    }
    Ok(())
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(l) => Err(Error::OutOfRange(format!("label {l} with {classes} classes"))),
        None => Ok(()),
    }
}

/// Fraction of clips whose top-scoring class is the label.
pub fn accuracy(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<f64> {
    check(scores, labels.len(), classes)?;
    check_labels(labels, classes)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = scores.iter().zip(labels).filter(|(s, &l)| argmax(s) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy per class, averaged over the classes present in `labels`.
pub fn mean_per_class_accuracy(scores: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<f64> {
    check(scores, labels.len(), classes)?;
    check_labels(labels, classes)?;
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (s, &l) in scores.iter().zip(labels) {
        totals[l] += 1;
        hits[l] += usize::from(argmax(s) == l);
    }
    let present: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    Ok(if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 })
}

/// Average precision of one ranking: the mean of precision@k over the ranks
/// `k` of the relevant items. Ties keep input order. `None` when nothing is
/// relevant.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let positives = relevant.iter().filter(|&&r| r).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Macro-averaged average precision over classes with at least one positive.
/// `targets[i][c]` marks clip `i` as belonging to class `c`.
pub fn mean_average_precision(scores: &[Vec<f64>], targets: &[Vec<bool>], classes: usize) -> Result<f64> {
    check(scores, targets.len(), classes)?;
    if let Some(bad) = targets.iter().find(|t| t.len() != classes) {
        return Err(Error::DimensionMismatch {
            context: "targets per clip".into(),
            expected: classes,
            got: bad.len(),
        });
    }
    let aps: Vec<f64> = (0..classes)
        .filter_map(|c| {
            let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
            let rel: Vec<bool> = targets.iter().map(|t| t[c]).collect();
            average_precision(&col, &rel)
        })
        .collect();
    Ok(if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 })
}

pub fn one_hot_targets(labels: &[usize], classes: usize) -> Result<Vec<Vec<bool>>> {
    check_labels(labels, classes)?;
    Ok(labels.iter().map(|&l| (0..classes).map(|c| c == l).collect()).collect())
}
