//! Synthetic corpora with known local score distributions.
//!
//! Each token sits in one of a few Gaussian clusters of hidden space, and its
//! log-probability is drawn from a per-cluster, per-source distribution. The
//! remaining record fields are back-filled from a surrogate vocabulary that
//! is consistent with the drawn probability; they are syntactically valid but
//! carry no information beyond `logp_obs` and the noise used to build them.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TextRecord, TokenRecord, HUMAN, RANK_ONE_EPS};
use crate::detector::{lambda4_score, DetectorBundle};
use crate::error::{Error, Result};
use crate::eval::{auroc, LabeledScores};

/// Log-probabilities are clipped to this range before back-filling so that
/// every record keeps some probability mass outside the observed token.
pub const MIN_LOGP: f64 = -30.0;
pub const MAX_LOGP: f64 = -0.01005033585350145; // ln 0.99

/// Exponent `τ` of the mass-above trend.
pub const MASS_ABOVE_EXPONENT: f64 = 0.25;
/// Share of the mass-above position that is uniform noise.
pub const MASS_ABOVE_JITTER: f64 = 0.5;
/// Tail tokens of the surrogate vocabulary have at most this fraction of
/// the observed token's probability.
pub const TAIL_RATIO: f64 = 0.1;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDist {
    pub mean: f64,
    pub sd: f64,
}

impl ScoreDist {
    fn log_pdf(self, g: f64) -> f64 {
        let r = (g - self.mean) / self.sd;
        -LN_SQRT_2PI - self.sd.ln() - 0.5 * r * r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub center: Vec<f64>,
    pub spread: f64,
    /// Mixture weight of this cluster per source.
    pub weight: BTreeMap<String, f64>,
    /// Score distribution of this cluster per source.
    pub score: BTreeMap<String, ScoreDist>,
}

/// Shape of the score noise around each cluster's mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreNoise {
    #[default]
    Gaussian,
    /// Standardised lognormal with log-scale `shape`: right-skewed, same mean
    /// and sd as the Gaussian case.
    Lognormal { shape: f64 },
}

impl ScoreNoise {
    fn draw<R: Rng>(self, rng: &mut R) -> f64 {
        let n: f64 = StandardNormal.sample(rng);
        match self {
            ScoreNoise::Gaussian => n,
            ScoreNoise::Lognormal { shape } => {
                let s2 = shape * shape;
                let mean = (0.5 * s2).exp();
                let sd = ((s2.exp() - 1.0) * s2.exp()).sqrt();
                ((shape * n).exp() - mean) / sd
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub clusters: Vec<ClusterSpec>,
    pub tokens_per_text: usize,
    pub seed: u64,
    #[serde(default = "default_topk")]
    pub topk: usize,
    #[serde(default)]
    pub noise: ScoreNoise,
}

fn default_topk() -> usize {
    5
}

impl SyntheticWorld {
    pub fn hidden_dim(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.center.len())
    }

    /// Source labels, sorted.
    pub fn sources(&self) -> Vec<String> {
        self.clusters
            .first()
            .map(|c| c.weight.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn generators(&self) -> Vec<String> {
        self.sources().into_iter().filter(|s| s != HUMAN).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(format!("synthetic world: {m}")));
        if self.clusters.is_empty() {
            return bad("no clusters".into());
        }
        if self.tokens_per_text == 0 {
            return bad("tokens_per_text must be positive".into());
        }
        let sources = self.sources();
        if !sources.iter().any(|s| s == HUMAN) || sources.len() < 2 {
            return bad("needs a 'human' source and at least one generator".into());
        }
        let dim = self.hidden_dim();
        if dim == 0 {
            return bad("cluster centers must be non-empty".into());
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.center.len() != dim {
                return bad(format!("cluster {i} center has dimension {}", c.center.len()));
            }
            if !(c.spread > 0.0) || c.center.iter().any(|v| !v.is_finite()) {
                return bad(format!("cluster {i} needs a positive spread and finite center"));
            }
            if c.weight.keys().ne(sources.iter()) || c.score.keys().ne(sources.iter()) {
                return bad(format!("cluster {i} does not list every source"));
            }
            for (s, d) in &c.score {
                if !(d.sd > 0.0) || !d.mean.is_finite() {
                    return bad(format!("cluster {i}, source {s}: sd must be positive"));
                }
            }
            if c.weight.values().any(|w| !(*w >= 0.0)) {
                return bad(format!("cluster {i} has a negative weight"));
            }
        }
        for s in &sources {
            let total: f64 = self.clusters.iter().map(|c| c.weight[s]).sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("weights of source {s} sum to {total}"));
            }
        }
        if let ScoreNoise::Lognormal { shape } = self.noise {
            if !(shape > 0.0) {
                return bad("lognormal shape must be positive".into());
            }
        }
        Ok(())
    }

    /// Closed-form pooled mean of the score for one source.
    pub fn pooled_mean(&self, source: &str) -> f64 {
        self.clusters
            .iter()
            .map(|c| c.weight[source] * c.score[source].mean)
            .sum()
    }

    fn log_posterior(&self, h: &[f64], source: &str) -> Vec<f64> {
        let d = h.len() as f64;
        let logs: Vec<f64> = self
            .clusters
            .iter()
            .map(|c| {
                let w = c.weight[source];
                if w == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let sq: f64 = h.iter().zip(&c.center).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - d * c.spread.ln() - 0.5 * sq / (c.spread * c.spread)
            })
            .collect();
        let lse = log_sum_exp(&logs);
        logs.into_iter().map(|l| l - lse).collect()
    }

    /// `log Σ_c P(c | h, S) N(g; μ_cS, σ_cS)` under the true mixture.
    pub fn log_density(&self, h: &[f64], g: f64, source: &str) -> f64 {
        let post = self.log_posterior(h, source);
        let terms: Vec<f64> = post
            .iter()
            .zip(&self.clusters)
            .map(|(lp, c)| lp + c.score[source].log_pdf(g))
            .collect();
        log_sum_exp(&terms)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Geometric top-k profile used by every back-filled record. It is the same
/// for all tokens so that it leaks nothing about the source.
fn topk_profile(k: usize) -> Vec<f64> {
    (0..k).map(|j| 0.5f64.powi(j as i32 + 1)).collect()
}

/// `Σ_{j=lo+1}^{hi} ln j`.
fn log_factorial_range(lo: f64, hi: f64) -> f64 {
    libm::lgamma(hi + 1.0) - libm::lgamma(lo + 1.0)
}

/// Build a record whose observed token has log-probability `g`.
///
/// The surrogate vocabulary has about `√(a/p)` tokens sharing the mass above
/// `a` (each more likely than the observed token), then the observed token,
/// then a tail of at least `k` tokens sharing the remainder, each with at
/// most a tenth of the observed probability. Mass
/// above is `(1 − p)` times a blend of the decreasing trend `1 − p^τ` and a
/// uniform draw, so less likely tokens tend to sit deeper in the
/// distribution as they do under a real model. Draws below `p` are set to
/// zero since a
/// single more-likely token cannot carry less mass than the observed one
/// (likewise for draws too small to tell apart from rank one).
pub fn backfill_token<R: Rng>(g: f64, hidden: Vec<f64>, topk: usize, rng: &mut R) -> TokenRecord {
    let p = g.clamp(MIN_LOGP, MAX_LOGP).exp();
    let u: f64 = rng.random();
    let trend = 1.0 - p.powf(MASS_ABOVE_EXPONENT);
    let mut a = (1.0 - p) * ((1.0 - MASS_ABOVE_JITTER) * trend + MASS_ABOVE_JITTER * u) * (1.0 - 1e-12);
    let n_above = if a > p && a > 10.0 * RANK_ONE_EPS {
        (a / p).sqrt().round().clamp(1.0, (a / p).ceil() - 1.0)
    } else {
        a = 0.0;
        0.0
    };
    let r = (1.0 - a - p).max(0.0);
    let n_rest = if r > 0.0 { (r / (TAIL_RATIO * p)).ceil().max(topk as f64) } else { 0.0 };

    let mut mu = p * p.ln();
    let mut m2 = p * p.ln().powi(2);
    let mut mu_rank = p * (n_above + 1.0).ln();
    if n_above > 0.0 {
        let q = a / n_above;
        mu += a * q.ln();
        m2 += a * q.ln().powi(2);
        mu_rank += q * log_factorial_range(0.0, n_above);
    }
    if n_rest > 0.0 {
        let q = r / n_rest;
        mu += r * q.ln();
        m2 += r * q.ln().powi(2);
        mu_rank += q * log_factorial_range(n_above + 1.0, n_above + 1.0 + n_rest);
    }
    TokenRecord {
        p_obs: p,
        logp_obs: p.ln(),
        rank_obs: n_above as u64 + 1,
        mass_above: a,
        mu_logp: Some(mu),
        m2_logp: Some(m2.max(mu * mu)),
        mu_logrank: Some(mu_rank),
        topk_probs: topk_profile(topk),
        hidden,
    }
}

fn text_rng(seed: u64, source_index: usize, text_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((source_index as u64) << 32) | text_index as u64);
    rng
}

/// `n_texts` texts per source. Texts with the same index share a prompt
/// group across sources. Every text has its own random stream, so output is
/// independent of the thread count.
pub fn generate_world(w: &SyntheticWorld, n_texts: usize) -> Result<Vec<TextRecord>> {
    w.validate()?;
    let sources = w.sources();
    let dim = w.hidden_dim();
    let jobs: Vec<(usize, usize)> = (0..sources.len())
        .flat_map(|s| (0..n_texts).map(move |i| (s, i)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(si, i)| {
            let source = &sources[si];
            let weights: Vec<f64> = w.clusters.iter().map(|c| c.weight[source]).collect();
            let mut rng = text_rng(w.seed, si, i);
            let tokens = (0..w.tokens_per_text)
                .map(|_| {
                    let c = &w.clusters[pick(&weights, &mut rng)];
                    let hidden: Vec<f64> = (0..dim)
                        .map(|j| {
                            let n: f64 = StandardNormal.sample(&mut rng);
                            c.center[j] + c.spread * n
                        })
                        .collect();
                    let d = c.score[source];
                    let g = d.mean + d.sd * w.noise.draw(&mut rng);
                    backfill_token(g, hidden, w.topk, &mut rng)
                })
                .collect();
            TextRecord {
                text_id: format!("{source}-{i:05}"),
                source: source.clone(),
                domain: "synthetic".into(),
                prompt_group: format!("g{i:05}"),
                tokens,
            }
        })
        .collect())
}

/// `Λ4` with the true local densities of `w` in place of learned ones, for
/// human against `generator`.
pub fn exact_lambda4(w: &SyntheticWorld, text: &TextRecord, generator: &str) -> Result<f64> {
    if w.noise != ScoreNoise::Gaussian {
        return Err(Error::invalid("exact densities are only available for Gaussian noise"));
    }
    if !w.sources().iter().any(|s| s == generator) || generator == HUMAN {
        return Err(Error::invalid(format!("unknown generator '{generator}'")));
    }
    let dim = w.hidden_dim();
    let mut total = 0.0;
    for t in &text.tokens {
        if t.hidden.len() != dim {
            return Err(Error::Dimension {
                what: "hidden vector",
                expected: dim,
                found: t.hidden.len(),
            });
        }
        total += w.log_density(&t.hidden, t.logp_obs, HUMAN) - w.log_density(&t.hidden, t.logp_obs, generator);
    }
    Ok(total)
}

/// Machine-evidence scores `(machine texts, human texts)` for a scoring rule.
pub fn labeled<F>(corpus: &[TextRecord], generator: &str, f: F) -> Result<LabeledScores>
where
    F: Fn(&TextRecord) -> Result<f64> + Sync,
{
    let scored: Vec<(bool, f64)> = corpus
        .par_iter()
        .filter(|t| t.is_human() || t.source == generator)
        .map(|t| Ok((t.is_human(), f(t)?)))
        .collect::<Result<_>>()?;
    let mut s = LabeledScores::default();
    for (human, v) in scored {
        if human {
            s.negatives.push(v);
        } else {
            s.positives.push(v);
        }
    }
    Ok(s)
}

/// AUROC of the exact oracle minus AUROC of the trained detector on `test`.
pub fn bayes_gap(test: &[TextRecord], b: &DetectorBundle, w: &SyntheticWorld) -> Result<f64> {
    let g = b.generator.as_str();
    let oracle = auroc(&labeled(test, g, |t| exact_lambda4(w, t, g).map(|l| -l))?)?;
    let trained = auroc(&labeled(test, g, |t| lambda4_score(t, b).map(|l| -l))?)?;
    Ok(oracle - trained)
}

pub const SIMPSON_GENERATOR: &str = "machine";
pub const SIMPSON_TEXTS_PER_SOURCE: usize = 2000;

/// Two well-separated clusters. Inside each, machine text is more probable
/// than human text by 0.22 nats, but humans favour the cluster whose scores
/// are 1.2 nats higher, so pooled machine text looks slightly less probable.
pub fn simpson_world() -> SyntheticWorld {
    let dim = 16;
    let center = |x: f64| {
        let mut c = vec![0.0; dim];
        c[0] = x;
        c[1] = 0.5 * x;
        c
    };
    let cluster = |x: f64, wh: f64, wm: f64, mean_h: f64, mean_m: f64| ClusterSpec {
        center: center(x),
        spread: 1.0,
        weight: BTreeMap::from([(HUMAN.to_string(), wh), (SIMPSON_GENERATOR.to_string(), wm)]),
        score: BTreeMap::from([
            (HUMAN.to_string(), ScoreDist { mean: mean_h, sd: 1.0 }),
            (SIMPSON_GENERATOR.to_string(), ScoreDist { mean: mean_m, sd: 1.0 }),
        ]),
    };
    SyntheticWorld {
        clusters: vec![
            cluster(3.0, 0.6, 0.4, -3.4, -3.18),
            cluster(-3.0, 0.4, 0.6, -4.6, -4.38),
        ],
        tokens_per_text: 200,
        seed: 20240611,
        topk: 5,
        noise: ScoreNoise::Gaussian,
    }
}

/// A random world whose clusters shift machine scores in different
/// directions and by different amounts. Every generator in `generators`
/// gets its own shifts. All sources share the cluster weights, so hidden
/// states alone say nothing about the source and every difference lies in
/// the local score distributions.
pub fn random_world(seed: u64, n_clusters: usize, hidden_dim: usize, tokens_per_text: usize, generators: &[&str]) -> SyntheticWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sources: Vec<String> = generators.iter().map(|s| s.to_string()).collect();
    sources.push(HUMAN.to_string());
    let mut weights: Vec<f64> = (0..n_clusters).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    let clusters = (0..n_clusters)
        .map(|c| {
            let center: Vec<f64> = (0..hidden_dim).map(|_| 3.0 * unit.sample(&mut rng)).collect();
            let base = rng.random_range(-5.5..-2.5);
            let sd_h = rng.random_range(0.7..1.3);
            let mut score = BTreeMap::from([(HUMAN.to_string(), ScoreDist { mean: base, sd: sd_h })]);
            for g in generators {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let shift = sign * rng.random_range(0.3..0.8);
                let sd = sd_h * rng.random_range(0.8..1.2);
                score.insert(g.to_string(), ScoreDist { mean: base + shift, sd });
            }
            ClusterSpec {
                center,
                spread: 1.0,
                weight: sources.iter().map(|s| (s.clone(), weights[c])).collect(),
                score,
            }
        })
        .collect();
    SyntheticWorld {
        clusters,
        tokens_per_text,
        seed,
        topk: 5,
        noise: ScoreNoise::Gaussian,
    }
}

/// An explicit next-token distribution for pure-sampling experiments.
///
/// Ranks follow a stable sort by decreasing probability (ties broken by
/// index) and `mass_above` is the mass of all earlier-ranked tokens, so the
/// DMAP interval of a sampled token is uniform on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
    mu_logp: f64,
    m2_logp: f64,
    mu_logrank: f64,
}

impl TokenDistribution {
    pub fn new(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::invalid("probabilities must be positive"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {s}")));
        }
        let mut sorted = probs.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut prefix = Vec::with_capacity(sorted.len());
        let mut acc = 0.0;
        for p in &sorted {
            prefix.push(acc);
            acc += p;
        }
        let mu_logp = sorted.iter().map(|p| p * p.ln()).sum();
        let m2_logp = sorted.iter().map(|p| p * p.ln().powi(2)).sum();
        let mu_logrank = sorted
            .iter()
            .enumerate()
            .map(|(i, p)| p * ((i + 1) as f64).ln())
            .sum();
        Ok(TokenDistribution {
            sorted,
            prefix,
            mu_logp,
            m2_logp,
            mu_logrank,
        })
    }

    /// Dirichlet(1, …, 1) draw over `n` tokens.
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Result<Self> {
        let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let t: f64 = e.iter().sum();
        let mut p: Vec<f64> = e.iter().map(|v| v / t).collect();
        // Absorb rounding so the probabilities sum to one.
        let s: f64 = p.iter().sum();
        p[0] += 1.0 - s;
        TokenDistribution::new(&p)
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Record for the token at (0-based) rank position `i`.
    pub fn record(&self, i: usize, hidden: Vec<f64>, topk: usize) -> TokenRecord {
        let p = self.sorted[i];
        let above = if i == 0 { 0.0 } else { self.prefix[i].min(1.0 - p) };
        TokenRecord {
            p_obs: p,
            logp_obs: p.ln(),
            rank_obs: i as u64 + 1,
            mass_above: above,
            mu_logp: Some(self.mu_logp),
            m2_logp: Some(self.m2_logp.max(self.mu_logp * self.mu_logp)),
            mu_logrank: Some(self.mu_logrank),
            topk_probs: self.sorted.iter().take(topk).copied().collect(),
            hidden,
        }
    }

    /// Sample the observed token from the distribution itself.
    pub fn sample<R: Rng>(&self, rng: &mut R, hidden: Vec<f64>, topk: usize) -> TokenRecord {
        let i = pick(&self.sorted, rng);
        self.record(i, hidden, topk)
    }
}
