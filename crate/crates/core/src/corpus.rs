//! Token and text evidence records, the line-delimited wire format, and the
//! corpus-level protocol helpers (token capping, prompt-group splits).
//!
//! One line of the wire format holds one text:
//!
//! ```text
//! {"text_id":"t1","source":"human","domain":"news","prompt_group":"g1",
//!  "tokens":[{"p_obs":0.5,"logp_obs":-0.6931,"rank_obs":1,"mass_above":0.0,
//!             "mu_logp":-0.69,"m2_logp":0.48,"mu_logrank":0.35,
//!             "topk_probs":[0.5,0.3],"hidden":[0.1,-0.2]}]}
//! ```
//!
//! `mu_logp`, `m2_logp` and `mu_logrank` may be omitted by extractors that skip
//! full-vocabulary sums; scorers that need them fail with a named-field error.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability-sum invariants (extractors compute in f32).
pub const PROB_EPS: f64 = 1e-6;
/// Tolerance for "mass above is zero" when the observed token is top-ranked.
pub const RANK_ONE_EPS: f64 = 1e-9;
/// Tolerance on the variance non-negativity check.
pub const VARIANCE_EPS: f64 = 1e-9;

pub const HUMAN: &str = "human";

/// Everything a detector model can emit about one observed token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub p_obs: f64,
    pub logp_obs: f64,
    /// 1-based rank by decreasing model probability.
    pub rank_obs: u64,
    /// Probability of all tokens strictly more likely than the observed one.
    pub mass_above: f64,
    /// `Σ p(v) log p(v)` over the vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_logp: Option<f64>,
    /// `Σ p(v) (log p(v))²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m2_logp: Option<f64>,
    /// `Σ p(v) log r(v)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_logrank: Option<f64>,
    pub topk_probs: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl TokenRecord {
    /// Check every per-token invariant. On failure returns the offending
    /// field name and a description.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let p = self.p_obs;
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(("p_obs", format!("{p} not in (0,1]")));
        }
        if !self.logp_obs.is_finite() || (self.logp_obs - p.ln()).abs() > PROB_EPS {
            return Err((
                "logp_obs",
                format!("{} differs from ln(p_obs) = {}", self.logp_obs, p.ln()),
            ));
        }
        let a = self.mass_above;
        if !a.is_finite() || a < 0.0 {
            return Err(("mass_above", format!("{a} is negative or non-finite")));
        }
        if a + p > 1.0 + PROB_EPS {
            return Err((
                "mass_above",
                format!("mass_above + p_obs = {} exceeds 1", a + p),
            ));
        }
        if self.rank_obs == 0 {
            return Err(("rank_obs", "rank must be >= 1".into()));
        }
        if (self.rank_obs == 1) != (a <= RANK_ONE_EPS) {
            return Err((
                "rank_obs",
                format!(
                    "rank {} inconsistent with mass_above {a}",
                    self.rank_obs
                ),
            ));
        }
        let mut sum = 0.0;
        let mut prev = f64::INFINITY;
        for &q in &self.topk_probs {
            if !(q.is_finite() && q > 0.0 && q <= 1.0) {
                return Err(("topk_probs", format!("entry {q} not in (0,1]")));
            }
            if q > prev {
                return Err(("topk_probs", "entries must be non-increasing".into()));
            }
            prev = q;
            sum += q;
        }
        if sum > 1.0 + PROB_EPS {
            return Err(("topk_probs", format!("sum {sum} exceeds 1")));
        }
        if self.rank_obs > 1 {
            if let Some(&top) = self.topk_probs.first() {
                if top + PROB_EPS < p {
                    return Err((
                        "topk_probs",
                        format!("top probability {top} below p_obs {p} for rank > 1"),
                    ));
                }
            }
        }
        for (name, v) in [
            ("mu_logp", self.mu_logp),
            ("m2_logp", self.m2_logp),
            ("mu_logrank", self.mu_logrank),
        ] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err((name, format!("{v} is not finite")));
                }
            }
        }
        if let (Some(mu), Some(m2)) = (self.mu_logp, self.m2_logp) {
            if m2 < mu * mu - VARIANCE_EPS {
                return Err((
                    "m2_logp",
                    format!("second moment {m2} below squared mean {}", mu * mu),
                ));
            }
        }
        if self.hidden.iter().any(|h| !h.is_finite()) {
            return Err(("hidden", "non-finite activation".into()));
        }
        Ok(())
    }

    /// Upper end of the DMAP interval, `mass_above + p_obs`.
    pub fn interval_end(&self) -> f64 {
        self.mass_above + self.p_obs
    }
}

/// An ordered token sequence with its provenance labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRecord {
    pub text_id: String,
    /// `"human"` or a generator name.
    pub source: String,
    pub domain: String,
    pub prompt_group: String,
    pub tokens: Vec<TokenRecord>,
}

impl TextRecord {
    pub fn is_human(&self) -> bool {
        self.source == HUMAN
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        self.tokens.first().map(|t| t.hidden.len())
    }

    fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: String| Error::Validation {
            text_id: self.text_id.clone(),
            field: field.to_string(),
            message,
        };
        if self.tokens.is_empty() {
            return Err(fail("tokens", "text has no tokens".into()));
        }
        let dim = self.tokens[0].hidden.len();
        for (i, t) in self.tokens.iter().enumerate() {
            t.check()
                .map_err(|(field, msg)| fail(field, format!("token {i}: {msg}")))?;
            if t.hidden.len() != dim {
                return Err(fail(
                    "hidden",
                    format!("token {i} has length {}, expected {dim}", t.hidden.len()),
                ));
            }
        }
        Ok(())
    }
}

/// Train/test split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub cap_tokens: Option<usize>,
}

// Wire-side mirrors that collect unrecognised keys.

#[derive(Deserialize)]
struct WireToken {
    #[serde(flatten)]
    token: TokenRecord,
    #[serde(flatten)]
    extra: BTreeMap<String, IgnoredAny>,
}

#[derive(Deserialize)]
struct WireText {
    text_id: String,
    source: String,
    domain: String,
    prompt_group: String,
    tokens: Vec<WireToken>,
    #[serde(flatten)]
    extra: BTreeMap<String, IgnoredAny>,
}

/// Result of parsing a record stream, with the non-fatal findings.
#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub texts: Vec<TextRecord>,
    /// Keys seen in the stream that the schema does not know.
    pub unknown_keys: BTreeSet<String>,
    /// Optional moment fields absent from at least one token.
    pub missing_optional: BTreeSet<&'static str>,
}

struct ParsedLine {
    text: TextRecord,
    unknown: BTreeSet<String>,
    missing: BTreeSet<&'static str>,
}

fn parse_line(line_no: usize, line: &str) -> Result<ParsedLine> {
    let wire: WireText = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let mut unknown: BTreeSet<String> = wire.extra.into_keys().collect();
    let mut missing = BTreeSet::new();
    let mut tokens = Vec::with_capacity(wire.tokens.len());
    for wt in wire.tokens {
        unknown.extend(wt.extra.into_keys().map(|k| format!("tokens.{k}")));
        let t = wt.token;
        if t.mu_logp.is_none() {
            missing.insert("mu_logp");
        }
        if t.m2_logp.is_none() {
            missing.insert("m2_logp");
        }
        if t.mu_logrank.is_none() {
            missing.insert("mu_logrank");
        }
        tokens.push(t);
    }
    let text = TextRecord {
        text_id: wire.text_id,
        source: wire.source,
        domain: wire.domain,
        prompt_group: wire.prompt_group,
        tokens,
    };
    text.validate()?;
    Ok(ParsedLine {
        text,
        unknown,
        missing,
    })
}

/// Parse and validate a line-delimited record stream.
///
/// Blank lines are skipped. Lines are validated in parallel; the returned
/// texts keep stream order.
pub fn parse_corpus_detailed<R: BufRead>(reader: R) -> Result<ParsedCorpus> {
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    let parsed: Vec<ParsedLine> = lines
        .par_iter()
        .map(|(no, l)| parse_line(*no, l))
        .collect::<Result<_>>()?;

    let mut out = ParsedCorpus::default();
    let mut ids = HashSet::new();
    let mut dim = None;
    for p in parsed {
        if !ids.insert(p.text.text_id.clone()) {
            return Err(Error::Validation {
                text_id: p.text.text_id,
                field: "text_id".into(),
                message: "duplicate text_id".into(),
            });
        }
        let d = p.text.hidden_dim().unwrap_or(0);
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Validation {
                    text_id: p.text.text_id,
                    field: "hidden".into(),
                    message: format!("hidden length {d} differs from corpus length {expected}"),
                })
            }
            _ => {}
        }
        out.unknown_keys.extend(p.unknown);
        out.missing_optional.extend(p.missing);
        out.texts.push(p.text);
    }
    for key in &out.unknown_keys {
        log::warn!("ignoring unknown key '{key}'");
    }
    Ok(out)
}

/// Parse and validate a record stream, discarding the warnings.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<TextRecord>> {
    parse_corpus_detailed(reader).map(|p| p.texts)
}

/// Emit texts in the wire format, one per line.
pub fn write_corpus<W: Write>(mut writer: W, texts: &[TextRecord]) -> Result<()> {
    for t in texts {
        serde_json::to_writer(&mut writer, t)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Keep the first `min(n, len)` tokens.
pub fn cap_tokens(text: &TextRecord, n: usize) -> TextRecord {
    assert!(n >= 1, "token cap must be positive");
    TextRecord {
        tokens: text.tokens.iter().take(n).cloned().collect(),
        ..text.clone()
    }
}

/// Split by prompt group so that no group straddles train and test.
///
/// Distinct groups are sorted, shuffled with the seed, and the first
/// `round(train_fraction * groups)` go to train (kept within `[1, groups-1]`
/// whenever there are at least two groups). The optional token cap is applied
/// to both halves.
pub fn split_by_prompt_group(
    corpus: &[TextRecord],
    spec: &SplitSpec,
) -> Result<(Vec<TextRecord>, Vec<TextRecord>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction {} outside (0,1)",
            spec.train_fraction
        )));
    }
    if let Some(0) = spec.cap_tokens {
        return Err(Error::config("cap_tokens must be positive"));
    }
    let groups: BTreeSet<&str> = corpus.iter().map(|t| t.prompt_group.as_str()).collect();
    let mut groups: Vec<&str> = groups.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    groups.shuffle(&mut rng);

    let n = groups.len();
    let mut n_train = (spec.train_fraction * n as f64).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let train_groups: HashSet<&str> = groups[..n_train.min(n)].iter().copied().collect();

    let prep = |t: &TextRecord| match spec.cap_tokens {
        Some(c) => cap_tokens(t, c),
        None => t.clone(),
    };
    let (train, test): (Vec<_>, Vec<_>) = corpus
        .iter()
        .partition(|t| train_groups.contains(t.prompt_group.as_str()));
    Ok((
        train.into_iter().map(prep).collect(),
        test.into_iter().map(prep).collect(),
    ))
}

/// Distinct source labels in order of first appearance.
pub fn sources(corpus: &[TextRecord]) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for t in corpus {
        if !seen.iter().any(|s| s == &t.source) {
            seen.push(t.source.clone());
        }
    }
    seen
}
