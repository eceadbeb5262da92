//! Token feature vectors and hidden-space diagnostics.
//!
//! A token's feature vector is the PCA projection of its hidden vector
//! followed by the top-k next-token probabilities.

mod kmeans;
mod pca;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{TextRecord, TokenRecord};
use crate::error::{Error, Result};

pub use kmeans::{assign, farthest_point_seeds, kmeans, KMeans, MAX_ITERATIONS, SHIFT_TOLERANCE};
pub use pca::{covariance, fit_pca, fit_pca_rows, PcaModel};

pub const DEFAULT_PCA_DIM: usize = 25;
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_CLUSTERS: usize = 50;

/// `[projection (d) | top-k probabilities (k)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub z: Vec<f64>,
    pub d: usize,
    pub k: usize,
}

impl FeatureVector {
    pub fn projection(&self) -> &[f64] {
        &self.z[..self.d]
    }

    pub fn topk(&self) -> &[f64] {
        &self.z[self.d..]
    }
}

pub fn build_features(t: &TokenRecord, m: &PcaModel, k: usize) -> Result<FeatureVector> {
    if t.topk_probs.len() < k {
        return Err(Error::MissingField {
            field: "topk_probs",
            context: Some(format!(
                "need {k} entries, record has {}",
                t.topk_probs.len()
            )),
        });
    }
    let mut z = m.project(&t.hidden)?;
    z.extend_from_slice(&t.topk_probs[..k]);
    Ok(FeatureVector { z, d: m.d(), k })
}

/// Fitted PCA plus the number of top probabilities appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub pca: PcaModel,
    pub k: usize,
}

impl FeaturePipeline {
    /// Fit PCA on every token position of the corpus, pooled across sources.
    pub fn fit(corpus: &[TextRecord], d: usize, k: usize) -> Result<Self> {
        let rows = corpus
            .iter()
            .flat_map(|t| t.tokens.iter())
            .map(|t| t.hidden.as_slice());
        let pca = fit_pca_rows(rows, d)?;
        Ok(FeaturePipeline { pca, k })
    }

    pub fn dim(&self) -> usize {
        self.pca.d() + self.k
    }

    pub fn features(&self, t: &TokenRecord) -> Result<FeatureVector> {
        build_features(t, &self.pca, self.k)
    }
}

/// One row of the cluster table.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRow {
    pub cluster_id: usize,
    pub n_tokens: usize,
    /// Share of the cluster's tokens from each source.
    pub proportion: BTreeMap<String, f64>,
    /// Mean observed log-probability per source (`None` when a source has no
    /// token in the cluster).
    pub mean_logp: BTreeMap<String, Option<f64>>,
}

/// k-means breakdown of the projected hidden space, largest cluster first.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub k: usize,
    pub sources: Vec<String>,
    pub rows: Vec<ClusterRow>,
    pub pooled_mean_logp: BTreeMap<String, f64>,
}

impl ClusterReport {
    /// Clusters whose per-source mean-logp ordering disagrees with the pooled
    /// ordering of `a` versus `b`.
    pub fn reversed_clusters(&self, a: &str, b: &str) -> Vec<usize> {
        let (Some(pa), Some(pb)) = (self.pooled_mean_logp.get(a), self.pooled_mean_logp.get(b))
        else {
            return Vec::new();
        };
        let pooled = pa.total_cmp(pb);
        self.rows
            .iter()
            .filter(|r| {
                match (
                    r.mean_logp.get(a).copied().flatten(),
                    r.mean_logp.get(b).copied().flatten(),
                ) {
                    (Some(x), Some(y)) => {
                        let local = x.total_cmp(&y);
                        local != std::cmp::Ordering::Equal && local == pooled.reverse()
                    }
                    _ => false,
                }
            })
            .map(|r| r.cluster_id)
            .collect()
    }

    /// Tab-separated table: cluster, token count, then proportion and mean
    /// log p per source.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("cluster_id\ttokens");
        for s in &self.sources {
            write!(out, "\tprop_{s}").unwrap();
        }
        for s in &self.sources {
            write!(out, "\tmean_logp_{s}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{}\t{}", r.cluster_id, r.n_tokens).unwrap();
            for s in &self.sources {
                write!(out, "\t{:.6}", r.proportion[s]).unwrap();
            }
            for s in &self.sources {
                match r.mean_logp[s] {
                    Some(v) => write!(out, "\t{v:.6}").unwrap(),
                    None => out.push_str("\tNA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Cluster every token's PCA projection into `k` regions and tabulate
/// source mix and mean log-probability per region.
pub fn cluster_report(
    corpus: &[TextRecord],
    pca: &PcaModel,
    k: usize,
    seed: u64,
) -> Result<ClusterReport> {
    let sources = crate::corpus::sources(corpus);
    if sources.len() < 2 {
        return Err(Error::invalid("cluster report needs at least two sources"));
    }
    let mut points = Vec::new();
    let mut meta = Vec::new();
    for (si, s) in sources.iter().enumerate() {
        for text in corpus.iter().filter(|t| &t.source == s) {
            for tok in &text.tokens {
                points.push(pca.project(&tok.hidden)?);
                meta.push((si, tok.logp_obs));
            }
        }
    }
    let km = kmeans(&points, k, seed)?;

    let ns = sources.len();
    let mut counts = vec![vec![0usize; ns]; k];
    let mut sums = vec![vec![0.0; ns]; k];
    let mut pooled = vec![(0.0, 0usize); ns];
    for (&c, &(si, lp)) in km.assignments.iter().zip(&meta) {
        counts[c][si] += 1;
        sums[c][si] += lp;
        pooled[si].0 += lp;
        pooled[si].1 += 1;
    }
    let mut rows: Vec<ClusterRow> = (0..k)
        .map(|c| {
            let total: usize = counts[c].iter().sum();
            let mut proportion = BTreeMap::new();
            let mut mean_logp = BTreeMap::new();
            for (si, s) in sources.iter().enumerate() {
                let n = counts[c][si];
                proportion.insert(
                    s.clone(),
                    if total > 0 { n as f64 / total as f64 } else { 0.0 },
                );
                mean_logp.insert(s.clone(), (n > 0).then(|| sums[c][si] / n as f64));
            }
            ClusterRow {
                cluster_id: c,
                n_tokens: total,
                proportion,
                mean_logp,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.n_tokens.cmp(&a.n_tokens).then(a.cluster_id.cmp(&b.cluster_id)));
    let pooled_mean_logp = sources
        .iter()
        .zip(&pooled)
        .map(|(s, &(sum, n))| (s.clone(), sum / n.max(1) as f64))
        .collect();
    Ok(ClusterReport {
        k,
        sources,
        rows,
        pooled_mean_logp,
    })
}
