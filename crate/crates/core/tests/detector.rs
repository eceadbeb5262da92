use localcal::bundle::{fit_bundle, FitOptions, ModelBundle};
use localcal::calib::{HeadKind, MlpParams, Predictor, TrainConfig};
use localcal::corpus::{TextRecord, TokenRecord};
use localcal::detector::{
    lambda4_contributions, lambda4_score, lambda4_score_with, multi_generator_score, text_features,
    zscore_diagnostic, DetectorBundle, EnsembleRule, Lambda4Options, ScorerKind, Side,
};
use localcal::eval::{auroc, LabeledScores};
use localcal::scorers::TokenScorer;
use localcal::synth::{generate_world, random_world, ScoreNoise};

const LOG_RANK: ScorerKind = ScorerKind::Token(TokenScorer::LogRank);

fn small_fit(noise: ScoreNoise) -> (ModelBundle, Vec<TextRecord>) {
    let mut w = random_world(1, 2, 3, 12, &["gen"]);
    w.noise = noise;
    let corpus = generate_world(&w, 60).unwrap();
    let opts = FitOptions {
        pca_dim: 2,
        train: TrainConfig {
            epochs: 4,
            batch_size: 128,
            hidden: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    (fit_bundle(&corpus, &opts).unwrap().0, corpus)
}

/// A predictor that ignores its input and always answers `N(mu, 1)`.
fn constant_gaussian(input: usize, mu: f64) -> Predictor {
    let mut mlp = MlpParams::zeros(input, 1, 2, 0.0);
    mlp.b2_mut()[0] = mu;
    // softplus(ln(e − 1)) = 1.
    mlp.b2_mut()[1] = (std::f64::consts::E - 1.0).ln();
    Predictor {
        head: HeadKind::Gaussian,
        mlp,
        input_shift: vec![0.0; input],
        input_scale: vec![1.0; input],
        target_shift: 0.0,
        target_scale: 1.0,
    }
}

fn rank_one_token(dim: usize) -> TokenRecord {
    TokenRecord {
        p_obs: 0.5,
        logp_obs: 0.5f64.ln(),
        rank_obs: 1,
        mass_above: 0.0,
        mu_logp: Some(0.5f64.ln()),
        m2_logp: Some(0.5f64.ln().powi(2)),
        mu_logrank: Some(0.0),
        topk_probs: vec![0.5; 5],
        hidden: vec![0.0; dim],
    }
}

#[test]
fn single_token_gaussian_example() {
    let (b, _) = small_fit(ScoreNoise::Gaussian);
    let dim = b.pipeline.dim();
    let d = DetectorBundle::new(
        LOG_RANK,
        "gen",
        b.pipeline.clone(),
        b.partition.clone(),
        constant_gaussian(dim, 0.0),
        constant_gaussian(dim, 1.0),
    )
    .unwrap();
    let text = TextRecord {
        text_id: "one".into(),
        source: "human".into(),
        domain: "d".into(),
        prompt_group: "g".into(),
        tokens: vec![rank_one_token(3)],
    };
    assert!((lambda4_score(&text, &d).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn identical_predictors_score_zero_and_swap_negates() {
    let (b, corpus) = small_fit(ScoreNoise::Gaussian);
    for scorer in ScorerKind::ALL {
        let d = b.detector(scorer, "gen").unwrap();
        let same = DetectorBundle {
            machine: d.human.clone(),
            ..d.clone()
        };
        let swapped = d.swapped();
        for t in corpus.iter().take(10) {
            assert_eq!(lambda4_score(t, &same).unwrap(), 0.0);
            assert_eq!(lambda4_score(t, &swapped).unwrap(), -lambda4_score(t, &d).unwrap());
        }
    }
}

#[test]
fn scores_add_over_concatenation() {
    let (b, corpus) = small_fit(ScoreNoise::Gaussian);
    for scorer in ScorerKind::ALL {
        let d = b.detector(scorer, "gen").unwrap();
        for pair in corpus.chunks(2).take(5) {
            let mut joined = pair[0].clone();
            joined.tokens.extend(pair[1].tokens.iter().cloned());
            let parts = lambda4_score(&pair[0], &d).unwrap() + lambda4_score(&pair[1], &d).unwrap();
            let whole = lambda4_score(&joined, &d).unwrap();
            assert!((whole - parts).abs() < 1e-9 * (1.0 + parts.abs()), "{scorer}");
        }
    }
}

#[test]
fn constant_shift_leaves_auroc_unchanged() {
    let (b, corpus) = small_fit(ScoreNoise::Gaussian);
    let d = b.detector(LOG_RANK, "gen").unwrap();
    let scored = |shift: f64| {
        let mut s = LabeledScores::default();
        for t in &corpus {
            let f = text_features(&d.pipeline, t).unwrap();
            let v: f64 = lambda4_contributions(t, &f, &d).unwrap().iter().map(|c| c + shift).sum();
            if t.is_human() {
                s.negatives.push(v);
            } else {
                s.positives.push(v);
            }
        }
        s
    };
    let base = scored(0.0);
    let moved = scored(0.75);
    let n = corpus[0].tokens.len() as f64;
    assert!((moved.positives[0] - base.positives[0] - 0.75 * n).abs() < 1e-9);
    assert!((auroc(&moved).unwrap() - auroc(&base).unwrap()).abs() < 1e-12);
}

#[test]
fn scoring_is_pure_and_cap_clips() {
    let (b, corpus) = small_fit(ScoreNoise::Gaussian);
    let d = b.detector(ScorerKind::Dmap, "gen").unwrap();
    let t = &corpus[0];
    assert_eq!(lambda4_score(t, &d).unwrap(), lambda4_score(t, &d).unwrap());
    let cap = 1e-3;
    let capped = lambda4_score_with(t, &d, &Lambda4Options { token_cap: Some(cap) }).unwrap();
    assert!(capped.abs() <= cap * t.tokens.len() as f64 + 1e-12);
}

#[test]
fn single_bundle_ensemble_is_machine_evidence() {
    let (b, corpus) = small_fit(ScoreNoise::Gaussian);
    let d = b.detector(LOG_RANK, "gen").unwrap();
    for rule in [EnsembleRule::Max, EnsembleRule::Mean] {
        for t in corpus.iter().take(5) {
            let ens = multi_generator_score(t, std::slice::from_ref(&d), rule).unwrap();
            assert_eq!(ens, -lambda4_score(t, &d).unwrap());
        }
    }
}

#[test]
fn zscores_vanish_when_scores_sit_on_the_mean() {
    let (b, _) = small_fit(ScoreNoise::Gaussian);
    let dim = b.pipeline.dim();
    let d = DetectorBundle::new(
        LOG_RANK,
        "gen",
        b.pipeline.clone(),
        b.partition.clone(),
        constant_gaussian(dim, 0.0),
        constant_gaussian(dim, 1.0),
    )
    .unwrap();
    let text = TextRecord {
        text_id: "flat".into(),
        source: "human".into(),
        domain: "d".into(),
        prompt_group: "g".into(),
        tokens: vec![rank_one_token(3); 20],
    };
    let r = zscore_diagnostic(&[text], &d, Side::Human, 12).unwrap();
    assert!(r.z.iter().all(|z| z.abs() < 1e-12));
    assert_eq!(r.histogram.counts.iter().sum::<usize>(), 20);
    assert_eq!(r.skew, 0.0);
}

#[test]
fn skewed_noise_shows_up_in_zscores() {
    let (b, corpus) = small_fit(ScoreNoise::Lognormal { shape: 0.8 });
    let d = b.detector(ScorerKind::Token(TokenScorer::LogSurprisal), "gen").unwrap();
    let r = zscore_diagnostic(&corpus, &d, Side::Human, 30).unwrap();
    assert!(r.skew > 0.5, "skew {}", r.skew);
    let (g, _) = small_fit(ScoreNoise::Gaussian);
    let d = g.detector(ScorerKind::Token(TokenScorer::LogSurprisal), "gen").unwrap();
    let flat = zscore_diagnostic(&generate_world(&random_world(1, 2, 3, 12, &["gen"]), 60).unwrap(), &d, Side::Human, 30).unwrap();
    assert!(flat.skew.abs() < r.skew);
}
