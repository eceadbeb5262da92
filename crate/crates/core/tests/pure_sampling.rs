//! Laws that hold when the observed token is drawn from the model's own
//! next-token distribution.

use localcal::corpus::{TextRecord, TokenRecord};
use localcal::dmap::{dmap_histogram, token_bins, BinPartition};
use localcal::scorers::{fast_detect_gpt_full, score_fd_token, score_npr_token};
use localcal::synth::TokenDistribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sampled_tokens(n: usize, seed: u64) -> Vec<TokenRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let vocab = rng.random_range(2..40);
            let d = TokenDistribution::random(vocab, &mut rng).unwrap();
            d.sample(&mut rng, vec![0.0], 1)
        })
        .collect()
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn centred_scores_have_zero_mean() {
    let toks = sampled_tokens(50_000, 3);
    let fd: Vec<f64> = toks.iter().map(|t| score_fd_token(t).unwrap().value).collect();
    let npr: Vec<f64> = toks.iter().map(|t| score_npr_token(t).unwrap().value).collect();
    for (name, v) in [("fd_tok", fd), ("npr_tok", npr)] {
        let (m, se) = mean_and_stderr(&v);
        assert!(m.abs() < 3.0 * se, "{name}: mean {m} stderr {se}");
    }
}

#[test]
fn flat_histogram_law() {
    let toks = sampled_tokens(100_000, 5);
    let h = dmap_histogram(&toks, &BinPartition::uniform(10).unwrap()).unwrap();
    for (b, v) in h.q.iter().enumerate() {
        assert!((v - 1.0).abs() < 0.02, "bin {b}: {v}");
    }
}

// The default partition's top bins are only 0.025 wide, so their Monte Carlo
// error at this sample size is close to 0.02; judge them by their own stderr.
#[test]
fn flat_histogram_on_default_partition() {
    let toks = sampled_tokens(100_000, 6);
    let part = BinPartition::default();
    let widths = part.widths();
    for b in 0..part.n_bins() {
        let v: Vec<f64> = toks
            .iter()
            .map(|t| token_bins(t, &part).unwrap().q[b] / widths[b])
            .collect();
        let (m, se) = mean_and_stderr(&v);
        assert!((m - 1.0).abs() < 4.0 * se, "bin {b}: {m} ± {se}");
    }
}

/// Observed tokens drawn from a sharpened copy of the model distribution, so
/// each token carries the same expected positive centred log-probability.
fn sharpened_text(n: usize, rng: &mut ChaCha8Rng) -> TextRecord {
    let tokens = (0..n)
        .map(|_| {
            let d = TokenDistribution::random(20, rng).unwrap();
            let p: Vec<f64> = (0..d.len()).map(|i| d.record(i, vec![], 0).p_obs).collect();
            let w: Vec<f64> = p.iter().map(|x| x * x).collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut i = 0;
            while i + 1 < w.len() && u >= w[i] {
                u -= w[i];
                i += 1;
            }
            d.record(i, vec![0.0], 1)
        })
        .collect();
    TextRecord {
        text_id: "t".into(),
        source: "m".into(),
        domain: "d".into(),
        prompt_group: "g".into(),
        tokens,
    }
}

#[test]
fn fd_full_grows_like_root_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let lengths = [16usize, 32, 64, 128, 256, 512, 1024];
    let pts: Vec<(f64, f64)> = lengths
        .iter()
        .map(|&n| {
            let reps = 200;
            let m = (0..reps)
                .map(|_| fast_detect_gpt_full(&sharpened_text(n, &mut rng)).unwrap().abs())
                .sum::<f64>()
                / reps as f64;
            ((n as f64).ln(), m.ln())
        })
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((0.4..=0.6).contains(&slope), "slope {slope}");
}
