//! Evaluation surface: per-class F1 reports, top-k oracle curves, and
//! two agreement statistics (Cohen's kappa, Spearman's rho).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision/recall/F1 for one class, with the number of gold instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Full evaluation of one prediction list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Unweighted mean of per-class F1 over eligible classes.
    pub macro_f1: f64,
    /// Support-weighted mean of per-class F1.
    pub weighted_f1: f64,
    /// Fraction of exactly correct predictions.
    pub accuracy: f64,
    /// One entry per class, in label order; supports sum to `n`.
    pub per_class: Vec<ClassMetrics>,
    pub n: usize,
}

/// Averaging options for [`f1_report_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct F1Options {
    /// Average macro-F1 over all C classes instead of only the classes
    /// present in gold or predictions.
    pub all_classes: bool,
}

/// Per-class F1 with the 0/0 → 0 convention. Macro-F1 averages over
/// classes present in gold or predictions; classes absent from both are
/// excluded unless [`F1Options::all_classes`] is set.
pub fn f1_report(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<MetricsReport> {
    f1_report_with(gold, pred, num_classes, F1Options::default())
}

/// [`f1_report`] with explicit averaging options.
pub fn f1_report_with(
    gold: &[usize],
    pred: &[usize],
    num_classes: usize,
    opts: F1Options,
) -> Result<MetricsReport> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gold labels vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::EmptyInput("gold labels"));
    }
    let n = gold.len();
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fne = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    let mut correct = 0usize;
    for (&g, &p) in gold.iter().zip(pred) {
        if g >= num_classes || p >= num_classes {
            return Err(Error::BadLabel(format!(
                "label out of range for C={num_classes}: gold={g}, pred={p}"
            )));
        }
        support[g] += 1;
        if g == p {
            tp[g] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fne[g] += 1;
        }
    }

    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let precision = ratio(tp[c], tp[c] + fp[c]);
        let recall = ratio(tp[c], tp[c] + fne[c]);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            label: c,
            precision,
            recall,
            f1,
            support: support[c],
        });
    }

    let eligible: Vec<usize> = (0..num_classes)
        .filter(|&c| opts.all_classes || support[c] > 0 || tp[c] + fp[c] > 0)
        .collect();
    let macro_f1 = if eligible.is_empty() {
        0.0
    } else {
        eligible.iter().map(|&c| per_class[c].f1).sum::<f64>() / eligible.len() as f64
    };
    let weighted_f1 = per_class
        .iter()
        .map(|m| m.support as f64 * m.f1)
        .sum::<f64>()
        / n as f64;

    Ok(MetricsReport {
        macro_f1,
        weighted_f1,
        accuracy: correct as f64 / n as f64,
        per_class,
        n,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One point of a top-k oracle curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkPoint {
    pub k: usize,
    pub oracle_accuracy: f64,
    pub oracle_macro_f1: f64,
}

/// Oracle performance if the gold label were chosen whenever it appears
/// among the k highest-scored labels (ties broken by the lowest index);
/// otherwise the plain argmax stands.
pub fn topk_oracle(logits: &[Vec<f64>], gold: &[usize], ks: &[usize]) -> Result<Vec<TopkPoint>> {
    if logits.len() != gold.len() {
        return Err(Error::LengthMismatch(format!(
            "{} logit rows vs {} gold labels",
            logits.len(),
            gold.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::EmptyInput("logits"));
    }
    let c = logits[0].len();
    for &k in ks {
        if k == 0 || k > c {
            return Err(Error::BadK(format!("k={k} outside [1, {c}]")));
        }
    }
    // Label indices ordered by descending logit, ties by lowest index.
    let rankings: Vec<Vec<usize>> = logits
        .iter()
        .map(|z| {
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
            order
        })
        .collect();

    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut preds = Vec::with_capacity(gold.len());
        let mut hits = 0usize;
        for (ranking, &g) in rankings.iter().zip(gold) {
            if ranking[..k].contains(&g) {
                hits += 1;
                preds.push(g);
            } else {
                preds.push(ranking[0]);
            }
        }
        let report = f1_report(gold, &preds, c)?;
        points.push(TopkPoint {
            k,
            oracle_accuracy: hits as f64 / gold.len() as f64,
            oracle_macro_f1: report.macro_f1,
        });
    }
    Ok(points)
}

/// A human/model pair of ordinal difficulty ratings on the 0–3 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingPair {
    pub human: u8,
    pub model: u8,
}

impl RatingPair {
    pub fn new(human: u8, model: u8) -> Result<Self> {
        if human > 3 || model > 3 {
            return Err(Error::BadLabel(format!(
                "ratings must be in 0..=3, got ({human}, {model})"
            )));
        }
        Ok(RatingPair { human, model })
    }
}

/// Unweighted Cohen's kappa: `(p_o - p_e) / (1 - p_e)` with chance
/// agreement from the marginal products.
pub fn cohens_kappa(pairs: &[RatingPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("rating pairs"));
    }
    let n = pairs.len() as f64;
    let mut marg_h = [0usize; 4];
    let mut marg_m = [0usize; 4];
    let mut agree = 0usize;
    for p in pairs {
        marg_h[p.human as usize] += 1;
        marg_m[p.model as usize] += 1;
        if p.human == p.model {
            agree += 1;
        }
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = (0..4)
        .map(|c| (marg_h[c] as f64 / n) * (marg_m[c] as f64 / n))
        .sum();
    if p_e >= 1.0 {
        return Err(Error::DegenerateMarginals);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(format!(
            "{} xs vs {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::ZeroVariance("fewer than two observations"));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

/// 1-based fractional ranks; tied values share the mean of their ranks.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean of (i+1)..=(j+1)
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance("constant rank vector"));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}
