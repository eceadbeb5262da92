use localcal::bundle::{fit_bundle, FitOptions, ModelBundle};
use localcal::calib::TrainConfig;
use localcal::corpus::HUMAN;
use localcal::detector::{lambda4_score, ScorerKind};
use localcal::synth::{generate_world, random_world};

fn options() -> FitOptions {
    FitOptions {
        pca_dim: 2,
        train: TrainConfig {
            epochs: 2,
            batch_size: 128,
            hidden: 6,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn json_round_trip_preserves_scores() {
    let w = random_world(3, 2, 3, 8, &["a", "b"]);
    let corpus = generate_world(&w, 30).unwrap();
    let (b, reports) = fit_bundle(&corpus, &options()).unwrap();
    assert_eq!(reports.len(), ScorerKind::ALL.len() * 3);
    assert_eq!(b.generators(), vec!["a".to_string(), "b".to_string()]);

    let back = ModelBundle::from_json(&b.to_json().unwrap()).unwrap();
    assert_eq!(back, b);
    for k in ScorerKind::ALL {
        let (d1, d2) = (b.detector(k, "b").unwrap(), back.detector(k, "b").unwrap());
        for t in corpus.iter().take(4) {
            assert_eq!(lambda4_score(t, &d1).unwrap(), lambda4_score(t, &d2).unwrap());
        }
    }
}

#[test]
fn foreign_headers_are_rejected() {
    let w = random_world(3, 2, 3, 8, &["a"]);
    let (b, _) = fit_bundle(&generate_world(&w, 10).unwrap(), &options()).unwrap();
    let json = b.to_json().unwrap();
    for (from, to) in [
        ("\"localcal-bundle\"", "\"other\""),
        ("\"version\": 1", "\"version\": 2"),
        ("\"decimal\"", "\"hex\""),
    ] {
        assert!(ModelBundle::from_json(&json.replacen(from, to, 1)).is_err(), "{to}");
    }
}

#[test]
fn fitting_needs_both_sides() {
    let w = random_world(3, 2, 3, 8, &["a"]);
    let corpus = generate_world(&w, 10).unwrap();
    let only_machine: Vec<_> = corpus.iter().filter(|t| t.source != HUMAN).cloned().collect();
    assert!(fit_bundle(&only_machine, &options()).is_err());
    let only_human: Vec<_> = corpus.iter().filter(|t| t.source == HUMAN).cloned().collect();
    assert!(fit_bundle(&only_human, &options()).is_err());
}
