//! DMAP interval binning.
//!
//! Each token occupies the interval `[a, a + p]` of cumulative probability,
//! where `a` is the mass of strictly more likely tokens. A partition of
//! `[0, 1]` turns that interval into a vector of per-bin proportions. Under
//! pure sampling the interval's position is uniform, so width-normalised
//! histograms are flat in expectation.

use serde::{Deserialize, Serialize};

use crate::corpus::{TextRecord, TokenRecord, PROB_EPS};
use crate::error::{Error, Result};

/// Smoothing mass added to each reference bin before renormalising.
pub const REFERENCE_SMOOTHING: f64 = 1e-6;

/// Strictly increasing bin edges from 0 to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BinPartition {
    edges: Vec<f64>,
}

impl BinPartition {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::config("a partition needs at least two edges"));
        }
        if edges[0] != 0.0 || *edges.last().unwrap() != 1.0 {
            return Err(Error::config("partition edges must start at 0 and end at 1"));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("partition edges must be strictly increasing"));
        }
        Ok(BinPartition { edges })
    }

    /// `n` equal-width bins.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("bin count must be positive"));
        }
        let mut edges: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        edges.push(1.0);
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn bin_of(&self, x: f64) -> usize {
        let n = self.n_bins();
        self.edges[1..n].partition_point(|&e| e <= x)
    }
}

impl Default for BinPartition {
    /// Six bins resolving the upper tail: `[0, .5, .75, .9, .95, .975, 1]`.
    fn default() -> Self {
        BinPartition {
            edges: vec![0.0, 0.5, 0.75, 0.9, 0.95, 0.975, 1.0],
        }
    }
}

impl TryFrom<Vec<f64>> for BinPartition {
    type Error = Error;
    fn try_from(edges: Vec<f64>) -> Result<Self> {
        BinPartition::new(edges)
    }
}

impl From<BinPartition> for Vec<f64> {
    fn from(p: BinPartition) -> Vec<f64> {
        p.edges
    }
}

/// A vector of per-bin values (proportions, masses, or densities depending on
/// where it came from).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinVector {
    pub q: Vec<f64>,
}

impl BinVector {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.q.iter().sum()
    }
}

/// Fraction of `[mass_above, mass_above + p_obs]` falling in each bin.
///
/// The interval is clipped to `[0, 1]` (extractors may overshoot by float
/// error) and proportions are normalised by the clipped length.
pub fn bin_proportions(mass_above: f64, p_obs: f64, part: &BinPartition) -> Result<BinVector> {
    if !(p_obs > 0.0) {
        return Err(Error::invalid(format!("interval of zero length (p_obs = {p_obs})")));
    }
    if mass_above < 0.0 || mass_above + p_obs > 1.0 + PROB_EPS {
        return Err(Error::invalid(format!(
            "interval [{mass_above}, {}] outside [0, 1]",
            mass_above + p_obs
        )));
    }
    let lo = mass_above.min(1.0);
    let hi = (mass_above + p_obs).min(1.0);
    let mut q = vec![0.0; part.n_bins()];
    if hi <= lo {
        // Only reachable when a rounds to 1: the whole (tiny) interval is the top of the last bin.
        q[part.bin_of(lo)] = 1.0;
        return Ok(BinVector { q });
    }
    let first = part.bin_of(lo);
    let mut total = 0.0;
    for b in first..part.n_bins() {
        let (e0, e1) = (part.edges[b], part.edges[b + 1]);
        if e0 >= hi {
            break;
        }
        let overlap = hi.min(e1) - lo.max(e0);
        if overlap > 0.0 {
            q[b] = overlap;
            total += overlap;
        }
    }
    for v in &mut q {
        *v /= total;
    }
    Ok(BinVector { q })
}

pub fn token_bins(t: &TokenRecord, part: &BinPartition) -> Result<BinVector> {
    bin_proportions(t.mass_above, t.p_obs, part)
}

fn mean_proportions<'a>(
    tokens: impl Iterator<Item = &'a TokenRecord>,
    part: &BinPartition,
) -> Result<(Vec<f64>, usize)> {
    let mut acc = vec![0.0; part.n_bins()];
    let mut n = 0usize;
    for t in tokens {
        let q = token_bins(t, part)?;
        for (a, v) in acc.iter_mut().zip(&q.q) {
            *a += v;
        }
        n += 1;
    }
    if n > 0 {
        for a in &mut acc {
            *a /= n as f64;
        }
    }
    Ok((acc, n))
}

/// Width-normalised histogram: mean proportion per bin divided by bin width.
pub fn dmap_histogram(records: &[TokenRecord], part: &BinPartition) -> Result<BinVector> {
    if records.is_empty() {
        return Err(Error::invalid("histogram of an empty token list"));
    }
    let (mean, _) = mean_proportions(records.iter(), part)?;
    let q = mean
        .iter()
        .zip(part.widths())
        .map(|(m, w)| m / w)
        .collect();
    Ok(BinVector { q })
}

/// Mean per-token proportions over every token of a corpus, renormalised.
pub fn dmap_reference_raw(corpus: &[TextRecord], part: &BinPartition) -> Result<BinVector> {
    let (mut mean, n) = mean_proportions(corpus.iter().flat_map(|t| t.tokens.iter()), part)?;
    if n == 0 {
        return Err(Error::invalid("reference from an empty corpus"));
    }
    let s: f64 = mean.iter().sum();
    for m in &mut mean {
        *m /= s;
    }
    Ok(BinVector { q: mean })
}

/// Add `eps` to each bin and renormalise, so cross-entropies stay finite.
pub fn smooth(v: &BinVector, eps: f64) -> BinVector {
    let s: f64 = v.q.iter().map(|x| x + eps).sum();
    BinVector {
        q: v.q.iter().map(|x| (x + eps) / s).collect(),
    }
}

/// Smoothed probability-mass reference vector for a corpus.
pub fn dmap_reference(corpus: &[TextRecord], part: &BinPartition) -> Result<BinVector> {
    Ok(smooth(&dmap_reference_raw(corpus, part)?, REFERENCE_SMOOTHING))
}

/// `CE(q, q_m) - CE(q, q_h)`: positive when the token looks more human.
pub fn dmap_token_humanness(q: &BinVector, q_h: &BinVector, q_m: &BinVector) -> Result<f64> {
    if q.len() != q_h.len() || q.len() != q_m.len() {
        return Err(Error::Dimension {
            what: "dmap reference",
            expected: q.len(),
            found: if q.len() != q_h.len() { q_h.len() } else { q_m.len() },
        });
    }
    if q_h.q.iter().chain(&q_m.q).any(|&r| !(r > 0.0)) {
        return Err(Error::invalid("reference vectors must be strictly positive"));
    }
    Ok(q
        .q
        .iter()
        .zip(q_h.q.iter().zip(&q_m.q))
        .map(|(qb, (h, m))| qb * (h.ln() - m.ln()))
        .sum())
}

/// Global DMAP detector: mean per-token humanness over the text.
pub fn global_dmap_score(
    text: &TextRecord,
    q_h: &BinVector,
    q_m: &BinVector,
    part: &BinPartition,
) -> Result<f64> {
    if text.tokens.is_empty() {
        return Err(Error::invalid(format!("text '{}' is empty", text.text_id)));
    }
    let mut sum = 0.0;
    for t in &text.tokens {
        sum += dmap_token_humanness(&token_bins(t, part)?, q_h, q_m)?;
    }
    Ok(sum / text.tokens.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], eps: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_abs_diff_eq!(x, y, epsilon = eps);
        }
    }

    fn tok(p: f64, above: f64) -> TokenRecord {
        TokenRecord {
            p_obs: p,
            logp_obs: p.ln(),
            rank_obs: if above > 0.0 { 2 } else { 1 },
            mass_above: above,
            mu_logp: None,
            m2_logp: None,
            mu_logrank: None,
            topk_probs: vec![],
            hidden: vec![],
        }
    }

    #[test]
    fn partition_validation() {
        assert!(BinPartition::new(vec![0.0, 1.0]).is_ok());
        assert!(BinPartition::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(BinPartition::new(vec![0.1, 1.0]).is_err());
        assert!(BinPartition::new(vec![0.0, 0.9]).is_err());
        assert_eq!(BinPartition::default().n_bins(), 6);
        assert_eq!(BinPartition::uniform(12).unwrap().n_bins(), 12);
    }

    #[test]
    fn proportions_examples() {
        let part = BinPartition::default();
        close(
            &bin_proportions(0.0, 1.0, &part).unwrap().q,
            &[0.5, 0.25, 0.15, 0.05, 0.025, 0.025],
            1e-12,
        );
        close(
            &bin_proportions(0.2, 0.1, &part).unwrap().q,
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            1e-12,
        );
        close(
            &bin_proportions(0.45, 0.1, &part).unwrap().q,
            &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
            1e-12,
        );
        assert!(bin_proportions(0.3, 0.0, &part).is_err());
    }

    #[test]
    fn histogram_examples() {
        let part = BinPartition::default();
        close(
            &dmap_histogram(&[tok(1.0, 0.0)], &part).unwrap().q,
            &[1.0; 6],
            1e-12,
        );
        let halves = vec![tok(0.5, 0.0); 7];
        close(
            &dmap_histogram(&halves, &part).unwrap().q,
            &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            1e-12,
        );
        assert!(dmap_histogram(&[], &part).is_err());
    }

    fn corpus_of(tokens: Vec<TokenRecord>) -> Vec<TextRecord> {
        vec![TextRecord {
            text_id: "x".into(),
            source: "human".into(),
            domain: "d".into(),
            prompt_group: "g".into(),
            tokens,
        }]
    }

    #[test]
    fn reference_examples() {
        let part = BinPartition::default();
        let one = dmap_reference(&corpus_of(vec![tok(0.1, 0.2)]), &part).unwrap();
        assert!(one.q[0] > 0.99999);
        assert!(one.q[1..].iter().all(|&v| v > 0.0 && v < 1e-5));

        let two = dmap_reference_raw(&corpus_of(vec![tok(0.1, 0.2), tok(0.1, 0.6)]), &part).unwrap();
        close(&two.q, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0], 1e-12);
        let smoothed = dmap_reference(&corpus_of(vec![tok(0.1, 0.2), tok(0.1, 0.6)]), &part).unwrap();
        assert_abs_diff_eq!(smoothed.sum(), 1.0, epsilon = 1e-9);
        assert!(dmap_reference(&[], &part).is_err());
    }

    #[test]
    fn humanness_examples() {
        let r = BinVector {
            q: vec![0.2, 0.3, 0.1, 0.1, 0.2, 0.1],
        };
        let q = BinVector {
            q: vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
        };
        assert_eq!(dmap_token_humanness(&q, &r, &r).unwrap(), 0.0);

        let h = BinVector {
            q: vec![0.3, 0.1, 0.2, 0.2, 0.1, 0.1],
        };
        let onehot = BinVector {
            q: vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        };
        assert_abs_diff_eq!(
            dmap_token_humanness(&onehot, &h, &r).unwrap(),
            0.2f64.ln() - 0.1f64.ln(),
            epsilon = 1e-12
        );

        let qh = smooth(&BinVector { q: vec![0.6, 0.4, 0.0, 0.0, 0.0, 0.0] }, 1e-6);
        let qm = smooth(&BinVector { q: vec![0.4, 0.6, 0.0, 0.0, 0.0, 0.0] }, 1e-6);
        let first = BinVector {
            q: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        };
        assert_abs_diff_eq!(
            dmap_token_humanness(&first, &qh, &qm).unwrap(),
            0.4054642747765673,
            epsilon = 1e-9
        );

        let zero = BinVector {
            q: vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        };
        assert!(dmap_token_humanness(&first, &zero, &qm).is_err());
    }

    #[test]
    fn global_score_is_token_mean() {
        let part = BinPartition::default();
        let qh = smooth(&BinVector { q: vec![0.6, 0.2, 0.1, 0.05, 0.03, 0.02] }, 1e-6);
        let qm = smooth(&BinVector { q: vec![0.8, 0.1, 0.05, 0.03, 0.01, 0.01] }, 1e-6);
        let toks = vec![tok(0.3, 0.0), tok(0.05, 0.9), tok(0.01, 0.97)];
        let text = &corpus_of(toks.clone())[0];
        let s = global_dmap_score(text, &qh, &qm, &part).unwrap();
        let mut second = 0.0;
        for t in &toks {
            second += dmap_token_humanness(&token_bins(t, &part).unwrap(), &qh, &qm).unwrap();
        }
        assert_abs_diff_eq!(s, second / 3.0, epsilon = 1e-12);

        let same = global_dmap_score(&corpus_of(vec![tok(0.3, 0.0)])[0], &qh, &qh, &part).unwrap();
        assert_eq!(same, 0.0);
        let mut empty = corpus_of(vec![])[0].clone();
        empty.tokens.clear();
        assert!(global_dmap_score(&empty, &qh, &qm, &part).is_err());
    }

    fn interval() -> impl Strategy<Value = (f64, f64)> {
        (1e-6f64..1.0, 0.0f64..1.0).prop_map(|(p, u)| (u * (1.0 - p), p))
    }

    proptest! {
        #[test]
        fn proportions_sum_to_one((a, p) in interval()) {
            let q = bin_proportions(a, p, &BinPartition::default()).unwrap();
            prop_assert!((q.sum() - 1.0).abs() < 1e-12);
            prop_assert!(q.q.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn humanness_antisymmetric(
            (a, p) in interval(),
            h in proptest::collection::vec(0.01f64..1.0, 6),
            m in proptest::collection::vec(0.01f64..1.0, 6),
        ) {
            let part = BinPartition::default();
            let q = bin_proportions(a, p, &part).unwrap();
            let h = smooth(&BinVector { q: h }, 0.0);
            let m = smooth(&BinVector { q: m }, 0.0);
            let fwd = dmap_token_humanness(&q, &h, &m).unwrap();
            let back = dmap_token_humanness(&q, &m, &h).unwrap();
            prop_assert!((fwd + back).abs() < 1e-12);
        }

        #[test]
        fn refining_a_bin_splits_its_proportion((a, p) in interval(), cut in 0.01f64..0.99) {
            // Split bin b of the default partition at an interior point; the two
            // refined proportions must add back to the coarse one.
            let coarse = BinPartition::default();
            for b in 0..coarse.n_bins() {
                let e = coarse.edges();
                let mid = e[b] + cut * (e[b + 1] - e[b]);
                let mut edges = e.to_vec();
                edges.insert(b + 1, mid);
                let fine = BinPartition::new(edges).unwrap();
                let qc = bin_proportions(a, p, &coarse).unwrap();
                let qf = bin_proportions(a, p, &fine).unwrap();
                prop_assert!((qf.q[b] + qf.q[b + 1] - qc.q[b]).abs() < 1e-12);
                for i in 0..b {
                    prop_assert!((qf.q[i] - qc.q[i]).abs() < 1e-12);
                }
                for i in b + 1..coarse.n_bins() {
                    prop_assert!((qf.q[i + 1] - qc.q[i]).abs() < 1e-12);
                }
            }
        }
    }
}
