//! Detection metrics with bootstrap confidence intervals.
//!
//! Machine text is the positive class and scores are machine evidence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Machine,
    Human,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledScores {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl LabeledScores {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Self {
        LabeledScores {
            positives,
            negatives,
        }
    }

    pub fn from_entries<I: IntoIterator<Item = (f64, Label)>>(entries: I) -> Self {
        let mut s = LabeledScores::default();
        for (v, l) in entries {
            match l {
                Label::Machine => s.positives.push(v),
                Label::Human => s.negatives.push(v),
            }
        }
        s
    }

    fn check(&self) -> Result<()> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(Error::degenerate(format!(
                "need both classes, have {} machine and {} human scores",
                self.positives.len(),
                self.negatives.len()
            )));
        }
        if self.positives.iter().chain(&self.negatives).any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN score".into()));
        }
        Ok(())
    }
}

/// Area under the ROC curve by the rank-sum formula with midranks, so ties
/// count one half.
pub fn auroc(s: &LabeledScores) -> Result<f64> {
    s.check()?;
    let (np, nn) = (s.positives.len(), s.negatives.len());
    let mut all: Vec<(f64, bool)> = s
        .positives
        .iter()
        .map(|&v| (v, true))
        .chain(s.negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (np * (np + 1)) as f64 / 2.0;
    Ok(u / (np as f64 * nn as f64))
}

/// True-positive rate at the lowest threshold whose empirical FPR stays
/// within `fpr`: `⌊fpr·N_neg⌋` negatives may lie strictly above it, and a
/// positive counts only when strictly above it.
pub fn tpr_at_fpr(s: &LabeledScores, fpr: f64) -> Result<f64> {
    s.check()?;
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::config(format!("fpr target {fpr} outside (0,1)")));
    }
    let mut neg = s.negatives.clone();
    neg.sort_by(|a, b| b.total_cmp(a));
    let allowed = ((fpr * neg.len() as f64) + 1e-9).floor() as usize;
    let threshold = neg[allowed.min(neg.len() - 1)];
    let hits = s.positives.iter().filter(|&&p| p > threshold).count();
    Ok(hits as f64 / s.positives.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auroc,
    TprAtFpr(f64),
}

impl Metric {
    pub fn eval(self, s: &LabeledScores) -> Result<f64> {
        match self {
            Metric::Auroc => auroc(s),
            Metric::TprAtFpr(f) => tpr_at_fpr(s, f),
        }
    }
}

/// `q`-quantile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Stratified percentile bootstrap: machine and human scores are resampled
/// separately with their own counts. Replicate `i` draws from the seed's
/// ChaCha stream `i`, so results are independent of scheduling.
pub fn bootstrap_ci(s: &LabeledScores, metric: Metric, n_iter: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    s.check()?;
    if n_iter == 0 {
        return Err(Error::config("bootstrap needs at least one iteration"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("confidence level {level} outside (0,1)")));
    }
    let draw = |rng: &mut ChaCha8Rng, v: &[f64]| -> Vec<f64> {
        (0..v.len()).map(|_| v[rng.random_range(0..v.len())]).collect()
    };
    let mut stats: Vec<f64> = (0..n_iter)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let rep = LabeledScores::new(draw(&mut rng, &s.positives), draw(&mut rng, &s.negatives));
            metric.eval(&rep)
        })
        .collect::<Result<_>>()?;
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((percentile(&stats, alpha), percentile(&stats, 1.0 - alpha)))
}

/// Point estimate with its interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    pub fn compute(s: &LabeledScores, metric: Metric, n_iter: usize, level: f64, seed: u64) -> Result<Self> {
        let value = metric.eval(s)?;
        let (lo, hi) = bootstrap_ci(s, metric, n_iter, level, seed)?;
        Ok(Estimate { value, lo, hi })
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ({:.3}–{:.3})", self.value, self.lo, self.hi)
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub generator: String,
    pub tpr_at_01: Estimate,
    pub tpr_at_1: Estimate,
    pub auroc: Estimate,
}

pub fn metric_row(
    method: impl Into<String>,
    generator: impl Into<String>,
    s: &LabeledScores,
    n_iter: usize,
    level: f64,
    seed: u64,
) -> Result<MetricRow> {
    Ok(MetricRow {
        method: method.into(),
        generator: generator.into(),
        tpr_at_01: Estimate::compute(s, Metric::TprAtFpr(0.001), n_iter, level, seed)?,
        tpr_at_1: Estimate::compute(s, Metric::TprAtFpr(0.01), n_iter, level, seed)?,
        auroc: Estimate::compute(s, Metric::Auroc, n_iter, level, seed)?,
    })
}

pub fn format_table(rows: &[MetricRow]) -> String {
    let mut out = String::from("method\tgenerator\tTPR@0.1%\tTPR@1%\tAUROC\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.method, r.generator, r.tpr_at_01, r.tpr_at_1, r.auroc
        ));
    }
    out
}
