//! Fitting every predictor for a corpus, and the model file that holds them.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{train_dataset, Dataset, Predictor, TrainConfig, TrainReport};
use crate::corpus::{cap_tokens, sources, TextRecord, HUMAN};
use crate::detector::{text_features, DetectorBundle, DmapRefs, ScorerKind};
use crate::dmap::{dmap_reference, BinPartition, BinVector};
use crate::error::{Error, Result};
use crate::features::{FeaturePipeline, FeatureVector, DEFAULT_PCA_DIM, DEFAULT_TOP_K};

pub const BUNDLE_FORMAT: &str = "localcal-bundle";
pub const BUNDLE_VERSION: u32 = 1;
/// Floats are stored as shortest round-trip decimal text.
pub const NUMERIC_ENCODING: &str = "decimal";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub format: String,
    pub version: u32,
    pub numeric_encoding: String,
}

impl Default for BundleHeader {
    fn default() -> Self {
        BundleHeader {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            numeric_encoding: NUMERIC_ENCODING.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub pca_dim: usize,
    pub top_k: usize,
    pub partition: BinPartition,
    pub train: TrainConfig,
    pub scorers: Vec<ScorerKind>,
    pub cap_tokens: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            pca_dim: DEFAULT_PCA_DIM,
            top_k: DEFAULT_TOP_K,
            partition: BinPartition::default(),
            train: TrainConfig::default(),
            scorers: ScorerKind::ALL.to_vec(),
            cap_tokens: Some(200),
        }
    }
}

/// Everything needed to score new text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub header: BundleHeader,
    pub pipeline: FeaturePipeline,
    pub partition: BinPartition,
    /// Smoothed DMAP reference per source.
    pub references: BTreeMap<String, BinVector>,
    pub train: TrainConfig,
    pub cap_tokens: Option<usize>,
    /// `predictors[scorer][source]`.
    pub predictors: BTreeMap<ScorerKind, BTreeMap<String, Predictor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub scorer: ScorerKind,
    pub source: String,
    pub n_tokens: usize,
    pub report: TrainReport,
}

/// Fit PCA, DMAP references and one predictor per (scorer, source).
pub fn fit_bundle(corpus: &[TextRecord], opts: &FitOptions) -> Result<(ModelBundle, Vec<FitReport>)> {
    let srcs = sources(corpus);
    if !srcs.iter().any(|s| s == HUMAN) {
        return Err(Error::invalid("training corpus has no human source"));
    }
    if srcs.len() < 2 {
        return Err(Error::invalid("training corpus needs at least one generator"));
    }
    if opts.scorers.is_empty() {
        return Err(Error::config("no scorers selected"));
    }
    let capped: Vec<TextRecord>;
    let corpus = match opts.cap_tokens {
        Some(0) => return Err(Error::config("cap_tokens must be positive")),
        Some(c) => {
            capped = corpus.iter().map(|t| cap_tokens(t, c)).collect();
            &capped[..]
        }
        None => corpus,
    };
    let mut srcs = srcs;
    srcs.sort();

    let pipeline = FeaturePipeline::fit(corpus, opts.pca_dim, opts.top_k)?;
    let mut references = BTreeMap::new();
    let mut by_source: BTreeMap<String, (Vec<&TextRecord>, Vec<FeatureVector>)> = BTreeMap::new();
    for s in &srcs {
        let texts: Vec<&TextRecord> = corpus.iter().filter(|t| &t.source == s).collect();
        let owned: Vec<TextRecord> = texts.iter().map(|t| (*t).clone()).collect();
        references.insert(s.clone(), dmap_reference(&owned, &opts.partition)?);
        let feats: Vec<Vec<FeatureVector>> = texts
            .par_iter()
            .map(|t| text_features(&pipeline, t))
            .collect::<Result<_>>()?;
        by_source.insert(s.clone(), (texts, feats.into_iter().flatten().collect()));
    }

    let jobs: Vec<(ScorerKind, &String)> = opts
        .scorers
        .iter()
        .flat_map(|&k| srcs.iter().map(move |s| (k, s)))
        .collect();
    let fitted: Vec<(Predictor, FitReport)> = jobs
        .par_iter()
        .map(|&(scorer, source)| {
            let (texts, feats) = &by_source[source];
            let head = scorer.head(&opts.partition);
            let mut ds = Dataset::new(pipeline.dim(), head);
            let tokens = texts.iter().flat_map(|t| t.tokens.iter());
            for (tok, z) in tokens.zip(feats) {
                ds.push(&z.z, &scorer.observe(tok, &opts.partition)?)?;
            }
            let (p, report) = train_dataset(&ds, head, &opts.train)?;
            Ok((
                p,
                FitReport {
                    scorer,
                    source: source.clone(),
                    n_tokens: ds.len(),
                    report,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut predictors: BTreeMap<ScorerKind, BTreeMap<String, Predictor>> = BTreeMap::new();
    let mut reports = Vec::with_capacity(fitted.len());
    for (p, r) in fitted {
        predictors.entry(r.scorer).or_default().insert(r.source.clone(), p);
        reports.push(r);
    }
    Ok((
        ModelBundle {
            header: BundleHeader::default(),
            pipeline,
            partition: opts.partition.clone(),
            references,
            train: opts.train.clone(),
            cap_tokens: opts.cap_tokens,
            predictors,
        },
        reports,
    ))
}

impl ModelBundle {
    pub fn scorers(&self) -> Vec<ScorerKind> {
        self.predictors.keys().copied().collect()
    }

    pub fn generators(&self) -> Vec<String> {
        self.references.keys().filter(|s| *s != HUMAN).cloned().collect()
    }

    pub fn detector(&self, scorer: ScorerKind, generator: &str) -> Result<DetectorBundle> {
        let per = self
            .predictors
            .get(&scorer)
            .ok_or_else(|| Error::invalid(format!("bundle has no predictors for scorer {scorer}")))?;
        let get = |s: &str| {
            per.get(s)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("bundle has no {scorer} predictor for source '{s}'")))
        };
        DetectorBundle::new(
            scorer,
            generator,
            self.pipeline.clone(),
            self.partition.clone(),
            get(HUMAN)?,
            get(generator)?,
        )
    }

    pub fn dmap_refs(&self, generator: &str) -> Result<DmapRefs<'_>> {
        let get = |s: &str| {
            self.references
                .get(s)
                .ok_or_else(|| Error::invalid(format!("bundle has no DMAP reference for '{s}'")))
        };
        Ok(DmapRefs {
            partition: &self.partition,
            human: get(HUMAN)?,
            machine: get(generator)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let header: BundleHeader = serde_json::from_value(
            v.get("header")
                .cloned()
                .ok_or_else(|| Error::missing("header"))?,
        )?;
        if header.format != BUNDLE_FORMAT {
            return Err(Error::invalid(format!("not a model bundle (format '{}')", header.format)));
        }
        if header.version != BUNDLE_VERSION {
            return Err(Error::invalid(format!("unsupported bundle version {}", header.version)));
        }
        if header.numeric_encoding != NUMERIC_ENCODING {
            return Err(Error::invalid(format!("unsupported numeric encoding '{}'", header.numeric_encoding)));
        }
        let b: ModelBundle = serde_json::from_value(v)?;
        for scorer in b.scorers() {
            for g in b.generators() {
                if b.predictors[&scorer].contains_key(&g) {
                    b.detector(scorer, &g)?;
                }
            }
        }
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
