//! Calibrated and naive text-level detectors.
//!
//! All `*_evidence` helpers return machine evidence: larger means more
//! machine-like, so AUROC above one half means the detector is useful.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{HeadKind, Observation, Predictor};
use crate::corpus::{TextRecord, TokenRecord};
use crate::dmap::{global_dmap_score, token_bins, BinPartition, BinVector};
use crate::error::{Error, Result};
use crate::features::{FeaturePipeline, FeatureVector};
use crate::scorers::{fast_detect_gpt_full, mean_score, TokenScorer};

/// A token statistic that can be locally calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScorerKind {
    Token(TokenScorer),
    Dmap,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 5] = [
        ScorerKind::Token(TokenScorer::LogSurprisal),
        ScorerKind::Token(TokenScorer::LogRank),
        ScorerKind::Token(TokenScorer::FdTok),
        ScorerKind::Token(TokenScorer::NprTok),
        ScorerKind::Dmap,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ScorerKind::Token(s) => s.id(),
            ScorerKind::Dmap => "dmap",
        }
    }

    pub fn head(self, part: &BinPartition) -> HeadKind {
        match self {
            ScorerKind::Token(_) => HeadKind::Gaussian,
            ScorerKind::Dmap => HeadKind::Categorical { bins: part.n_bins() },
        }
    }

    /// What a predictor for this scorer sees for one token.
    pub fn observe(self, t: &TokenRecord, part: &BinPartition) -> Result<Observation> {
        match self {
            ScorerKind::Token(s) => Ok(Observation::Scalar(s.score(t)?.value)),
            ScorerKind::Dmap => Ok(Observation::Bins(token_bins(t, part)?)),
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "dmap" {
            return Ok(ScorerKind::Dmap);
        }
        s.parse().map(ScorerKind::Token)
    }
}

impl Serialize for ScorerKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for ScorerKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Uncalibrated baselines reported next to the calibrated detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NaiveScorer {
    /// Mean token score, or global DMAP for `dmap`.
    Of(ScorerKind),
    /// Whole-text Fast-DetectGPT statistic.
    FdFull,
}

impl NaiveScorer {
    pub fn id(self) -> &'static str {
        match self {
            NaiveScorer::Of(k) => k.id(),
            NaiveScorer::FdFull => "fd_full",
        }
    }
}

/// DMAP references needed by the global DMAP baseline.
#[derive(Debug, Clone, Copy)]
pub struct DmapRefs<'a> {
    pub partition: &'a BinPartition,
    pub human: &'a BinVector,
    pub machine: &'a BinVector,
}

/// Machine evidence of an uncalibrated detector.
pub fn naive_evidence(text: &TextRecord, scorer: NaiveScorer, refs: Option<DmapRefs<'_>>) -> Result<f64> {
    match scorer {
        NaiveScorer::Of(ScorerKind::Token(s)) => Ok(s.machine_sign() * mean_score(text, s)?.value),
        NaiveScorer::Of(ScorerKind::Dmap) => {
            let r = refs.ok_or_else(|| Error::invalid("global DMAP needs reference vectors"))?;
            Ok(-global_dmap_score(text, r.human, r.machine, r.partition)?)
        }
        NaiveScorer::FdFull => fast_detect_gpt_full(text),
    }
}

/// The raw aggregate score (same orientation as the underlying statistic).
pub fn naive_score(text: &TextRecord, scorer: NaiveScorer, refs: Option<DmapRefs<'_>>) -> Result<f64> {
    match scorer {
        NaiveScorer::Of(ScorerKind::Token(s)) => Ok(mean_score(text, s)?.value),
        NaiveScorer::Of(ScorerKind::Dmap) => Ok(-naive_evidence(text, scorer, refs)?),
        NaiveScorer::FdFull => fast_detect_gpt_full(text),
    }
}

/// The pair of local density models for one scorer and one generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorBundle {
    pub scorer: ScorerKind,
    pub generator: String,
    pub pipeline: FeaturePipeline,
    pub partition: BinPartition,
    pub human: Predictor,
    pub machine: Predictor,
}

impl DetectorBundle {
    pub fn new(
        scorer: ScorerKind,
        generator: impl Into<String>,
        pipeline: FeaturePipeline,
        partition: BinPartition,
        human: Predictor,
        machine: Predictor,
    ) -> Result<Self> {
        let b = DetectorBundle {
            scorer,
            generator: generator.into(),
            pipeline,
            partition,
            human,
            machine,
        };
        b.check()?;
        Ok(b)
    }

    pub fn check(&self) -> Result<()> {
        let head = self.scorer.head(&self.partition);
        for p in [&self.human, &self.machine] {
            if p.head != head {
                return Err(Error::invalid(format!(
                    "predictor head {:?} does not fit scorer {}",
                    p.head, self.scorer
                )));
            }
            if p.input_dim() != self.pipeline.dim() {
                return Err(Error::Dimension {
                    what: "predictor input",
                    expected: self.pipeline.dim(),
                    found: p.input_dim(),
                });
            }
        }
        Ok(())
    }

    /// The same bundle with the two predictors exchanged.
    pub fn swapped(&self) -> Self {
        DetectorBundle {
            human: self.machine.clone(),
            machine: self.human.clone(),
            ..self.clone()
        }
    }
}

/// Optional robustness hook: clip every token's log-ratio to `[-cap, cap]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Lambda4Options {
    pub token_cap: Option<f64>,
}

pub fn text_features(pipeline: &FeaturePipeline, text: &TextRecord) -> Result<Vec<FeatureVector>> {
    text.tokens.iter().map(|t| pipeline.features(t)).collect()
}

/// Per-token log-ratios `log P(g|Z,H) − log P(g|Z,M)`.
pub fn lambda4_contributions(
    text: &TextRecord,
    features: &[FeatureVector],
    b: &DetectorBundle,
) -> Result<Vec<f64>> {
    if text.tokens.is_empty() {
        return Err(Error::invalid(format!("text '{}' is empty", text.text_id)));
    }
    text.tokens
        .iter()
        .zip(features)
        .map(|(t, z)| {
            let obs = b
                .scorer
                .observe(t, &b.partition)
                .map_err(|e| e.with_context(format!("text '{}'", text.text_id)))?;
            Ok(b.human.log_density(&z.z, &obs)? - b.machine.log_density(&z.z, &obs)?)
        })
        .collect()
}

/// Calibrated humanness `Λ4`, summed over tokens.
pub fn lambda4_score(text: &TextRecord, b: &DetectorBundle) -> Result<f64> {
    lambda4_score_with(text, b, &Lambda4Options::default())
}

pub fn lambda4_score_with(text: &TextRecord, b: &DetectorBundle, opts: &Lambda4Options) -> Result<f64> {
    let feats = text_features(&b.pipeline, text)?;
    lambda4_from_features(text, &feats, b, opts)
}

/// `Λ4` with features already computed (they depend only on the pipeline).
pub fn lambda4_from_features(
    text: &TextRecord,
    features: &[FeatureVector],
    b: &DetectorBundle,
    opts: &Lambda4Options,
) -> Result<f64> {
    let c = lambda4_contributions(text, features, b)?;
    Ok(match opts.token_cap {
        Some(cap) => c.iter().map(|v| v.clamp(-cap, cap)).sum(),
        None => c.iter().sum(),
    })
}

/// How per-generator machine evidence is pooled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleRule {
    /// Strongest evidence against any known generator.
    #[default]
    Max,
    Mean,
}

impl EnsembleRule {
    pub fn combine(self, evidence: &[f64]) -> Result<f64> {
        if evidence.is_empty() {
            return Err(Error::invalid("no generator scores to combine"));
        }
        Ok(match self {
            EnsembleRule::Max => evidence.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            EnsembleRule::Mean => evidence.iter().sum::<f64>() / evidence.len() as f64,
        })
    }
}

/// Machine evidence against several generators at once.
pub fn multi_generator_score(text: &TextRecord, bundles: &[DetectorBundle], rule: EnsembleRule) -> Result<f64> {
    if bundles.is_empty() {
        return Err(Error::invalid("multi-generator scoring needs at least one bundle"));
    }
    let ev = bundles
        .iter()
        .map(|b| lambda4_score(text, b).map(|l| -l))
        .collect::<Result<Vec<_>>>()?;
    rule.combine(&ev)
}

/// Which predictor a diagnostic is run against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Human,
    Machine,
}

/// Range of the z-score histogram; values outside land in the end bins.
pub const ZSCORE_RANGE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::config("histogram needs bins > 0 and hi > lo"));
        }
        let mut counts = vec![0; bins];
        let w = (hi - lo) / bins as f64;
        for v in values {
            let i = ((v - lo) / w).floor();
            let i = if i.is_nan() { 0.0 } else { i.clamp(0.0, (bins - 1) as f64) };
            counts[i as usize] += 1;
        }
        Ok(Histogram { lo, hi, counts })
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }

    /// `lo\thi\tcount` rows.
    pub fn to_tsv(&self) -> String {
        let e = self.bin_edges();
        let mut out = String::from("lo\thi\tcount\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:.4}\t{:.4}\t{c}\n", e[i], e[i + 1]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZScoreReport {
    pub z: Vec<f64>,
    pub histogram: Histogram,
    pub mean: f64,
    pub sd: f64,
    pub skew: f64,
}

/// `(g − μ)/σ` for every token of the corpus against one Gaussian predictor.
pub fn zscore_diagnostic(corpus: &[TextRecord], b: &DetectorBundle, side: Side, bins: usize) -> Result<ZScoreReport> {
    let ScorerKind::Token(scorer) = b.scorer else {
        return Err(Error::invalid("z-score diagnostic needs a Gaussian-head bundle"));
    };
    let pred = match side {
        Side::Human => &b.human,
        Side::Machine => &b.machine,
    };
    let per_text: Vec<Vec<f64>> = corpus
        .par_iter()
        .map(|text| {
            text.tokens
                .iter()
                .map(|t| {
                    let z = b.pipeline.features(t)?;
                    let g = scorer.score(t)?.value;
                    Ok(pred.gaussian(&z.z)?.z_score(g))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let z: Vec<f64> = per_text.into_iter().flatten().collect();
    if z.is_empty() {
        return Err(Error::invalid("no tokens to diagnose"));
    }
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let m2 = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = z.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let sd = m2.sqrt();
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let histogram = Histogram::new(&z, -ZSCORE_RANGE, ZSCORE_RANGE, bins)?;
    Ok(ZScoreReport {
        z,
        histogram,
        mean,
        sd,
        skew,
    })
}
