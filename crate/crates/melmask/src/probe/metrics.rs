//! Task metrics: ranking scores for tagging, accuracy, weighted key score,
//! and coefficient of determination for regression.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type MetricMap = BTreeMap<String, f64>;

/// ROC-AUC by midrank (Mann-Whitney); ties share their average rank.
/// Returns None when only one class is present.
pub fn roc_auc(scores: &[f32], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&i| labels[i]).map(|i| ranks[i]).sum();
    let p = pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Average precision: mean of precision-at-k over the positive items, with
/// items ranked by descending score (ties broken by ascending index).
/// Returns None when no positives are present.
pub fn average_precision(scores: &[f32], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / pos as f64)
}

/// Keys 0..24: tonic = key % 12, mode = key / 12 (0 major, 1 minor).
pub const NUM_KEYS: usize = 24;

/// Weighted key score for one prediction: exact 1.0, perfect fifth above
/// (same mode) 0.5, relative major/minor 0.3, parallel major/minor 0.2,
/// anything else 0.
pub fn key_score(predicted: usize, reference: usize) -> f64 {
    let (pt, pm) = (predicted % 12, predicted / 12);
    let (rt, rm) = (reference % 12, reference / 12);
    if predicted == reference {
        1.0
    } else if pm == rm && pt == (rt + 7) % 12 {
        0.5
    } else if rm == 0 && pm == 1 && pt == (rt + 9) % 12 {
        0.3 // relative minor of a major reference
    } else if rm == 1 && pm == 0 && pt == (rt + 3) % 12 {
        0.3 // relative major of a minor reference
    } else if pt == rt && pm != rm {
        0.2
    } else {
        0.0
    }
}

/// R^2 = 1 - SS_res / SS_tot for one target; a constant target gives 0.
pub fn r_squared(predictions: &[f32], targets: &[f32]) -> f64 {
    let n = targets.len() as f64;
    let mean = targets.iter().map(|&t| f64::from(t)).sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|&t| (f64::from(t) - mean).powi(2)).sum();
    let ss_res: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (f64::from(p) - f64::from(t)).powi(2))
        .sum();
    if ss_tot == 0.0 {
        return 0.0;
    }
    1.0 - ss_res / ss_tot
}

/// Macro-averaged AUC and AP over tag columns of an N x T score matrix.
/// Tags with a single class present are skipped and counted.
pub fn multilabel_metrics(scores: &[f32], labels: &[f32], n: usize, tags: usize) -> Result<MetricMap> {
    let mut aucs = Vec::new();
    let mut aps = Vec::new();
    let mut skipped = 0usize;
    for t in 0..tags {
        let col_scores: Vec<f32> = (0..n).map(|i| scores[i * tags + t]).collect();
        let col_labels: Vec<bool> = (0..n).map(|i| labels[i * tags + t] > 0.5).collect();
        match (
            roc_auc(&col_scores, &col_labels),
            average_precision(&col_scores, &col_labels),
        ) {
            (Some(auc), Some(ap)) => {
                aucs.push(auc);
                aps.push(ap);
            }
            _ => skipped += 1,
        }
    }
    if aucs.is_empty() {
        return Err(Error::Task(
            "every tag has a single class; no ranking metric is defined".into(),
        ));
    }
    let mut m = MetricMap::new();
    m.insert("auc".into(), aucs.iter().sum::<f64>() / aucs.len() as f64);
    m.insert("ap".into(), aps.iter().sum::<f64>() / aps.len() as f64);
    m.insert("tags_skipped".into(), skipped as f64);
    Ok(m)
}

pub fn multiclass_metrics(predicted: &[usize], reference: &[usize]) -> MetricMap {
    let hits = predicted
        .iter()
        .zip(reference)
        .filter(|(p, r)| p == r)
        .count();
    let mut m = MetricMap::new();
    m.insert("accuracy".into(), hits as f64 / reference.len() as f64);
    m
}

pub fn key_metrics(predicted: &[usize], reference: &[usize]) -> MetricMap {
    let total: f64 = predicted
        .iter()
        .zip(reference)
        .map(|(&p, &r)| key_score(p, r))
        .sum();
    let hits = predicted
        .iter()
        .zip(reference)
        .filter(|(p, r)| p == r)
        .count();
    let mut m = MetricMap::new();
    m.insert("weighted_score".into(), total / reference.len() as f64);
    m.insert("accuracy".into(), hits as f64 / reference.len() as f64);
    m
}

/// Per-target R^2 plus their mean. Two targets are reported under the
/// emotion-task names (arousal, valence); other counts are indexed.
pub fn regression_metrics(predictions: &[f32], targets: &[f32], n: usize, k: usize) -> MetricMap {
    let mut m = MetricMap::new();
    let mut sum = 0.0;
    for j in 0..k {
        let p: Vec<f32> = (0..n).map(|i| predictions[i * k + j]).collect();
        let t: Vec<f32> = (0..n).map(|i| targets[i * k + j]).collect();
        let r2 = r_squared(&p, &t);
        sum += r2;
        let name = match (k, j) {
            (2, 0) => "r2_arousal".to_string(),
            (2, 1) => "r2_valence".to_string(),
            _ => format!("r2_{j}"),
        };
        m.insert(name, r2);
    }
    m.insert("r2_mean".into(), sum / k as f64);
    m
}
