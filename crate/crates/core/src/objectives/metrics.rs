use std::cmp::Ordering;

use super::losses::{LOG_CLAMP, SI_SDR_EPS};
use crate::error::{Error, Result};

pub const SDR_EPS: f64 = 1e-16;

fn centred(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len().max(1) as f64;
    x.iter().map(|v| v - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(Error::Length(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// SI-SDR in dB; the negation of the training loss.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_len(est, reference)?;
    let (e, r) = (centred(est), centred(reference));
    let energy = dot(&r, &r);
    if energy == 0.0 {
        return Err(Error::Degenerate("reference is all zero after mean removal".into()));
    }
    let alpha = dot(&e, &r) / (energy + SI_SDR_EPS);
    let target: Vec<f64> = r.iter().map(|v| alpha * v).collect();
    let noise: Vec<f64> = e.iter().zip(&target).map(|(a, b)| a - b).collect();
    Ok(20.0 * (dot(&target, &target).sqrt() / (dot(&noise, &noise).sqrt() + SI_SDR_EPS)).log10())
}

/// Plain SDR in dB.
pub fn sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_len(est, reference)?;
    let err: f64 = est.iter().zip(reference).map(|(e, r)| (r - e) * (r - e)).sum();
    Ok(10.0 * (dot(reference, reference) / (err + SDR_EPS)).log10())
}

/// Energy suppression of an estimate for a silent target, relative to the mixture.
pub fn suppression_db(est: &[f64], mixture: &[f64]) -> Result<f64> {
    check_len(est, mixture)?;
    let mix = dot(mixture, mixture);
    if mix == 0.0 {
        return Err(Error::Degenerate("silent mixture".into()));
    }
    Ok(-10.0 * (dot(est, est) / mix + SDR_EPS).log10())
}

/// Mean binary cross-entropy on plain values.
pub fn asd_loss_value(pred: &[f64], labels: &[u8]) -> Result<f64> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(Error::Length(format!("{} predictions vs {} labels", pred.len(), labels.len())));
    }
    let total: f64 = pred
        .iter()
        .zip(labels)
        .map(|(&p, &l)| {
            let y = f64::from(l);
            y * p.max(LOG_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLAMP).ln()
        })
        .sum();
    Ok(-total / pred.len() as f64)
}

/// Groups of tied scores in descending order: `(positives, negatives)`.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Result<Vec<(u64, u64)>> {
    if scores.len() != labels.len() {
        return Err(Error::Length(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Format(format!("non-finite score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = f64::NAN;
    for i in order {
        if scores[i] != last {
            groups.push((0, 0));
            last = scores[i];
        }
        let g = groups.last_mut().expect("group pushed");
        if labels[i] != 0 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    Ok(groups)
}

fn class_counts(groups: &[(u64, u64)], metric: &str) -> Result<(u64, u64)> {
    let p: u64 = groups.iter().map(|g| g.0).sum();
    let n: u64 = groups.iter().map(|g| g.1).sum();
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!("{metric} needs both classes ({p} positive, {n} negative)")));
    }
    Ok((p, n))
}

/// Step-wise AP; tied scores share one threshold.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let groups = tie_groups(scores, labels)?;
    let (p, _) = class_counts(&groups, "average precision")?;
    let (mut tp, mut fp, mut ap, mut prev_recall) = (0u64, 0u64, 0.0, 0.0);
    for (gp, gn) in groups {
        tp += gp;
        fp += gn;
        let recall = tp as f64 / p as f64;
        ap += (recall - prev_recall) * (tp as f64 / (tp + fp) as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Area under the trapezoidal ROC curve.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let groups = tie_groups(scores, labels)?;
    let (p, n) = class_counts(&groups, "ROC AUC")?;
    // twice the count of correctly ordered pairs, ties counting one half
    let mut twice = 0u64;
    let mut neg_below = n;
    for (gp, gn) in groups {
        neg_below -= gn;
        twice += gp * (2 * neg_below + gn);
    }
    Ok(twice as f64 / (2 * p * n) as f64)
}

/// F1 of `score ≥ threshold`; 0 when there are no true positives.
pub fn f1_at_threshold(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Length(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}
