//! CC, KL divergence, NSS and AUC-Judd between a predicted saliency map and
//! ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::salmap::SaliencyMap;
use crate::sphere::{to_equirect, PixelCoord, SpherePoint};

/// Additive regularizer used when turning maps into distributions for KL.
pub const KL_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cc: f64,
    pub kl: f64,
    pub nss: f64,
    pub auc: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pearson correlation over pixels.
pub fn cc(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    pred.same_dims(gt)?;
    let (mp, sp) = mean_std(pred.data());
    let (mg, sg) = mean_std(gt.data());
    if sp == 0.0 || sg == 0.0 {
        return Err(Error::numerical("CC is undefined for a constant map"));
    }
    let n = pred.data().len() as f64;
    let cov = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| (p - mp) * (g - mg))
        .sum::<f64>()
        / n;
    Ok((cov / (sp * sg)).clamp(-1.0, 1.0))
}

fn regularized_distribution(map: &SaliencyMap, eps: f64) -> Result<Vec<f64>> {
    if map.data().iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid("KL needs finite non-negative maps"));
    }
    let shifted: Vec<f64> = map.data().iter().map(|v| v + eps).collect();
    let total: f64 = shifted.iter().sum();
    if !(total > 0.0) {
        return Err(Error::numerical("KL of an all-zero map without eps"));
    }
    Ok(shifted.into_iter().map(|v| v / total).collect())
}

/// `KL(gt || pred)` after turning each map into a distribution with `eps`
/// added to every pixel.
pub fn kl(pred: &SaliencyMap, gt: &SaliencyMap, eps: f64) -> Result<f64> {
    pred.same_dims(gt)?;
    let p = regularized_distribution(pred, eps)?;
    let g = regularized_distribution(gt, eps)?;
    Ok(g.iter()
        .zip(&p)
        .filter(|(g, _)| **g > 0.0)
        .map(|(g, p)| g * (g / p).ln())
        .sum())
}

fn fixation_cells(map: &SaliencyMap, fixations: &[PixelCoord]) -> Result<Vec<usize>> {
    if fixations.is_empty() {
        return Err(Error::invalid("at least one fixation is required"));
    }
    let (w, h) = (map.width(), map.height());
    fixations
        .iter()
        .map(|f| {
            if !(0.0..=w as f64).contains(&f.x) || !(0.0..=h as f64).contains(&f.y) {
                return Err(Error::invalid(format!("fixation ({}, {}) outside map", f.x, f.y)));
            }
            let (c, r) = f.to_raster(w, h);
            Ok(r * w + c)
        })
        .collect()
}

/// Mean z-scored prediction at the fixation pixels.
pub fn nss(pred: &SaliencyMap, fixations: &[PixelCoord]) -> Result<f64> {
    let cells = fixation_cells(pred, fixations)?;
    let (m, s) = mean_std(pred.data());
    if s == 0.0 {
        return Err(Error::numerical("NSS is undefined for a constant prediction"));
    }
    Ok(cells.iter().map(|&i| (pred.data()[i] - m) / s).sum::<f64>() / cells.len() as f64)
}

/// AUC-Judd: ROC over every distinct prediction value with fixations as
/// positives (with multiplicity) and all non-fixated pixels as negatives.
pub fn auc_judd(pred: &SaliencyMap, fixations: &[PixelCoord]) -> Result<f64> {
    let cells = fixation_cells(pred, fixations)?;
    let mut fixated = vec![false; pred.data().len()];
    for &c in &cells {
        fixated[c] = true;
    }
    // (score, is_positive) sorted by descending score
    let mut scored: Vec<(f64, bool)> = cells.iter().map(|&c| (pred.data()[c], true)).collect();
    scored.extend(
        pred.data()
            .iter()
            .zip(&fixated)
            .filter(|(_, f)| !**f)
            .map(|(v, _)| (*v, false)),
    );
    let n_pos = cells.len() as f64;
    let n_neg = (scored.len() - cells.len()) as f64;
    if n_neg == 0.0 {
        return Err(Error::invalid("AUC needs at least one non-fixated pixel"));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let thr = scored[i].0;
        while i < scored.len() && scored[i].0 == thr {
            if scored[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / n_pos, fp / n_neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

/// Pixel positions of sphere fixations on a `width x height` map.
pub fn fixation_pixels(fixations: &[SpherePoint], width: usize, height: usize) -> Vec<PixelCoord> {
    fixations.iter().map(|p| to_equirect(*p, width, height)).collect()
}

/// All four metrics; NSS and AUC use the ground-truth fixation list.
pub fn evaluate(pred: &SaliencyMap, gt: &SaliencyMap, fixations: &[SpherePoint]) -> Result<MetricReport> {
    let px = fixation_pixels(fixations, pred.width(), pred.height());
    Ok(MetricReport {
        cc: cc(pred, gt)?,
        kl: kl(pred, gt, KL_EPS)?,
        nss: nss(pred, &px)?,
        auc: auc_judd(pred, &px)?,
    })
}

pub struct EvalItem<'a> {
    pub pred: &'a SaliencyMap,
    pub gt: &'a SaliencyMap,
    pub fixations: &'a [SpherePoint],
}

/// Evaluates independent (prediction, ground truth) pairs.
pub fn evaluate_batch(items: &[EvalItem<'_>], mode: ExecMode) -> Vec<Result<MetricReport>> {
    exec::map(mode, items, |it| evaluate(it.pred, it.gt, it.fixations))
}

/// Per-metric mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: MetricReport,
    pub std: MetricReport,
    pub count: usize,
}

pub fn summarize(reports: &[MetricReport]) -> Option<MetricSummary> {
    if reports.is_empty() {
        return None;
    }
    let stat = |f: fn(&MetricReport) -> f64| {
        let v: Vec<f64> = reports.iter().map(f).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (mean, std)
    };
    let (cc_m, cc_s) = stat(|r| r.cc);
    let (kl_m, kl_s) = stat(|r| r.kl);
    let (nss_m, nss_s) = stat(|r| r.nss);
    let (auc_m, auc_s) = stat(|r| r.auc);
    Some(MetricSummary {
        mean: MetricReport { cc: cc_m, kl: kl_m, nss: nss_m, auc: auc_m },
        std: MetricReport { cc: cc_s, kl: kl_s, nss: nss_s, auc: auc_s },
        count: reports.len(),
    })
}
