//! Baseline token-level score functions and their text-level aggregates.
//!
//! All logarithms are natural. `fd_tok` and `npr_tok` read their centering
//! terms from the record; they are never recomputed here.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{TextRecord, TokenRecord};
use crate::error::{Error, Result};

/// Scalar token scorers, the ones a Gaussian calibrator can model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScorer {
    LogSurprisal,
    LogRank,
    FdTok,
    NprTok,
}

impl TokenScorer {
    pub const ALL: [TokenScorer; 4] = [
        TokenScorer::LogSurprisal,
        TokenScorer::LogRank,
        TokenScorer::FdTok,
        TokenScorer::NprTok,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TokenScorer::LogSurprisal => "log_surprisal",
            TokenScorer::LogRank => "log_rank",
            TokenScorer::FdTok => "fd_tok",
            TokenScorer::NprTok => "npr_tok",
        }
    }

    pub fn score(self, t: &TokenRecord) -> Result<TokenScore> {
        match self {
            TokenScorer::LogSurprisal => Ok(score_log_surprisal(t)),
            TokenScorer::LogRank => Ok(score_log_rank(t)),
            TokenScorer::FdTok => score_fd_token(t),
            TokenScorer::NprTok => score_npr_token(t),
        }
    }

    /// Sign that turns the raw mean into machine evidence (larger = more
    /// machine-like). Generated text sits higher in the detector's
    /// distribution: higher log-probability, lower rank.
    pub fn machine_sign(self) -> f64 {
        match self {
            TokenScorer::LogSurprisal | TokenScorer::FdTok => 1.0,
            TokenScorer::LogRank | TokenScorer::NprTok => -1.0,
        }
    }
}

impl fmt::Display for TokenScorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TokenScorer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TokenScorer::ALL
            .into_iter()
            .find(|t| t.id() == s)
            .ok_or_else(|| Error::config(format!("unknown token scorer '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenScore {
    pub value: f64,
    pub scorer: TokenScorer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextScore {
    pub value: f64,
    pub scorer: TokenScorer,
    pub n_tokens: usize,
}

pub fn score_log_surprisal(t: &TokenRecord) -> TokenScore {
    TokenScore {
        value: t.logp_obs,
        scorer: TokenScorer::LogSurprisal,
    }
}

pub fn score_log_rank(t: &TokenRecord) -> TokenScore {
    TokenScore {
        value: (t.rank_obs as f64).ln(),
        scorer: TokenScorer::LogRank,
    }
}

/// Log-probability centred on the distribution's expected log-probability.
pub fn score_fd_token(t: &TokenRecord) -> Result<TokenScore> {
    let mu = t.mu_logp.ok_or_else(|| Error::missing("mu_logp"))?;
    Ok(TokenScore {
        value: t.logp_obs - mu,
        scorer: TokenScorer::FdTok,
    })
}

/// Log-rank centred on the distribution's expected log-rank.
pub fn score_npr_token(t: &TokenRecord) -> Result<TokenScore> {
    let mu = t.mu_logrank.ok_or_else(|| Error::missing("mu_logrank"))?;
    Ok(TokenScore {
        value: (t.rank_obs as f64).ln() - mu,
        scorer: TokenScorer::NprTok,
    })
}

pub fn aggregate_mean(scores: &[TokenScore]) -> Result<TextScore> {
    let first = scores
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate an empty score list"))?;
    if scores.iter().any(|s| s.scorer != first.scorer) {
        return Err(Error::invalid("mixed scorer ids in one aggregate"));
    }
    let sum: f64 = scores.iter().map(|s| s.value).sum();
    Ok(TextScore {
        value: sum / scores.len() as f64,
        scorer: first.scorer,
        n_tokens: scores.len(),
    })
}

/// Score every token of a text with one scorer.
pub fn score_text(text: &TextRecord, scorer: TokenScorer) -> Result<Vec<TokenScore>> {
    text.tokens
        .iter()
        .map(|t| scorer.score(t))
        .collect::<Result<_>>()
        .map_err(|e| e.with_context(format!("text '{}'", text.text_id)))
}

pub fn mean_score(text: &TextRecord, scorer: TokenScorer) -> Result<TextScore> {
    aggregate_mean(&score_text(text, scorer)?)
}

/// Analytic Fast-DetectGPT: the summed centred log-probability divided by the
/// square root of the summed per-token variances of log p under the model.
/// Inter-token covariance is ignored.
pub fn fast_detect_gpt_full(text: &TextRecord) -> Result<f64> {
    let mut num = 0.0;
    let mut var = 0.0;
    for t in &text.tokens {
        let ctx = || format!("text '{}'", text.text_id);
        let mu = t
            .mu_logp
            .ok_or_else(|| Error::missing("mu_logp").with_context(ctx()))?;
        let m2 = t
            .m2_logp
            .ok_or_else(|| Error::missing("m2_logp").with_context(ctx()))?;
        num += t.logp_obs - mu;
        var += (m2 - mu * mu).max(0.0);
    }
    if !(var > 0.0) {
        return Err(Error::degenerate(format!(
            "text '{}' has zero total variance",
            text.text_id
        )));
    }
    Ok(num / var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tok(p: f64, rank: u64, above: f64) -> TokenRecord {
        TokenRecord {
            p_obs: p,
            logp_obs: p.ln(),
            rank_obs: rank,
            mass_above: above,
            mu_logp: None,
            m2_logp: None,
            mu_logrank: None,
            topk_probs: vec![],
            hidden: vec![],
        }
    }

    /// Observed 0.1-token of the two-point distribution (0.9, 0.1).
    fn two_point_tail() -> TokenRecord {
        let mut t = tok(0.1, 2, 0.9);
        t.mu_logp = Some(0.9 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        t.m2_logp = Some(0.9 * 0.9f64.ln().powi(2) + 0.1 * 0.1f64.ln().powi(2));
        t.mu_logrank = Some(0.1 * 2f64.ln());
        t
    }

    #[test]
    fn log_surprisal_values() {
        assert_eq!(score_log_surprisal(&tok(1.0, 1, 0.0)).value, 0.0);
        assert_abs_diff_eq!(score_log_surprisal(&tok(0.5, 1, 0.0)).value, -std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(
            score_log_surprisal(&tok((-3.0f64).exp(), 1, 0.0)).value,
            -3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_rank_values() {
        assert_eq!(score_log_rank(&tok(0.5, 1, 0.0)).value, 0.0);
        assert_abs_diff_eq!(score_log_rank(&tok(0.1, 2, 0.5)).value, std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(score_log_rank(&tok(0.01, 10, 0.5)).value, std::f64::consts::LN_10, epsilon = 1e-15);
    }

    #[test]
    fn fd_token_values() {
        let mut certain = tok(1.0, 1, 0.0);
        certain.mu_logp = Some(0.0);
        assert_eq!(score_fd_token(&certain).unwrap().value, 0.0);

        let mut uniform = tok(0.25, 1, 0.0);
        uniform.mu_logp = Some(0.25f64.ln());
        assert_abs_diff_eq!(score_fd_token(&uniform).unwrap().value, 0.0, epsilon = 1e-12);

        // ln 0.1 - (0.9 ln 0.9 + 0.1 ln 0.1), evaluated independently.
        assert_abs_diff_eq!(
            score_fd_token(&two_point_tail()).unwrap().value,
            -1.9775021196025973,
            epsilon = 1e-12
        );
        assert!(matches!(
            score_fd_token(&tok(0.5, 1, 0.0)),
            Err(Error::MissingField { field: "mu_logp", .. })
        ));
    }

    #[test]
    fn npr_token_values() {
        let mut top = tok(1.0, 1, 0.0);
        top.mu_logrank = Some(0.0);
        assert_eq!(score_npr_token(&top).unwrap().value, 0.0);
        assert_abs_diff_eq!(
            score_npr_token(&two_point_tail()).unwrap().value,
            0.6238324625039507,
            epsilon = 1e-12
        );
        let mut centred = tok(0.2, 3, 0.5);
        centred.mu_logrank = Some(3f64.ln());
        assert_abs_diff_eq!(score_npr_token(&centred).unwrap().value, 0.0, epsilon = 1e-12);
        assert!(matches!(
            score_npr_token(&tok(0.5, 1, 0.0)),
            Err(Error::MissingField { field: "mu_logrank", .. })
        ));
    }

    #[test]
    fn mean_aggregation() {
        let mk = |v: f64| TokenScore {
            value: v,
            scorer: TokenScorer::LogSurprisal,
        };
        assert_eq!(aggregate_mean(&[mk(0.0), mk(0.0), mk(0.0)]).unwrap().value, 0.0);
        let s = aggregate_mean(&[mk(-1.0), mk(-3.0)]).unwrap();
        assert_eq!(s.value, -2.0);
        assert_eq!(s.n_tokens, 2);
        assert!(aggregate_mean(&[]).is_err());
        let mixed = [
            mk(1.0),
            TokenScore {
                value: 1.0,
                scorer: TokenScorer::LogRank,
            },
        ];
        assert!(aggregate_mean(&mixed).is_err());
    }

    #[test]
    fn fd_full_two_point_value() {
        let text = TextRecord {
            text_id: "x".into(),
            source: "human".into(),
            domain: "d".into(),
            prompt_group: "g".into(),
            tokens: vec![two_point_tail()],
        };
        // For a two-point distribution (p, q) observing q, the score is -sqrt(p/q).
        assert_abs_diff_eq!(fast_detect_gpt_full(&text).unwrap(), -3.0, epsilon = 1e-9);
    }

    #[test]
    fn fd_full_zero_variance_is_degenerate() {
        let mut t = tok(1.0, 1, 0.0);
        t.mu_logp = Some(0.0);
        t.m2_logp = Some(0.0);
        let text = TextRecord {
            text_id: "x".into(),
            source: "human".into(),
            domain: "d".into(),
            prompt_group: "g".into(),
            tokens: vec![t.clone(), t],
        };
        assert!(matches!(fast_detect_gpt_full(&text), Err(Error::Degenerate(_))));
    }

    #[test]
    fn scorer_ids_round_trip() {
        for s in TokenScorer::ALL {
            assert_eq!(s.id().parse::<TokenScorer>().unwrap(), s);
        }
        assert!("fd_full".parse::<TokenScorer>().is_err());
    }
}
