use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rayon::prelude::*;

use localcal::bundle::{fit_bundle, ModelBundle};
use localcal::corpus::{cap_tokens, parse_corpus_detailed, sources, split_by_prompt_group, write_corpus, SplitSpec, TextRecord, HUMAN};
use localcal::detector::{
    lambda4_from_features, naive_evidence, text_features, zscore_diagnostic, DetectorBundle, Lambda4Options, NaiveScorer,
    ScorerKind, Side,
};
use localcal::dmap::dmap_histogram;
use localcal::eval::{format_table, metric_row, LabeledScores};
use localcal::features::cluster_report;
use localcal::Error;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const REPORT_HEADER: &str = "text_id\tsource\tscorer\tgenerator\tnaive\tcalibrated";
/// Generator label of the pooled multi-generator rows.
pub const POOLED: &str = "*";

pub fn read_corpus(path: &Path) -> CliResult<Vec<TextRecord>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let parsed = parse_corpus_detailed(BufReader::new(f)).map_err(|e| match e {
        Error::Io(io) => CliError::io(path, io),
        other => CliError::Core(other),
    })?;
    if parsed.texts.is_empty() {
        return Err(CliError::Core(Error::InvalidInput(format!("{}: corpus is empty", path.display()))));
    }
    Ok(parsed.texts)
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn load_bundle(path: &Path) -> CliResult<ModelBundle> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(ModelBundle::from_json(&text)?)
}

/// Fit the model bundle and write it. Returns the per-epoch loss table.
pub fn cmd_fit(cfg: &RunConfig) -> CliResult<String> {
    let corpus = read_corpus(cfg.require(&cfg.corpus, "corpus")?)?;
    let bundle_path = cfg.require(&cfg.bundle, "bundle")?;
    let (bundle, reports) = fit_bundle(&corpus, &cfg.fit_options()?)?;
    write_file(bundle_path, &(bundle.to_json()? + "\n"))?;
    let mut out = String::from("scorer\tsource\ttokens\tepoch\tloss\n");
    for r in &reports {
        for (e, l) in r.report.epoch_losses.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}\t{l:.6}", r.scorer, r.source, r.n_tokens, e + 1).unwrap();
        }
    }
    Ok(out)
}

fn selected_generators(cfg: &RunConfig, bundle: &ModelBundle) -> CliResult<Vec<String>> {
    let known = bundle.generators();
    if cfg.generators.is_empty() {
        return Ok(known);
    }
    for g in &cfg.generators {
        if !known.contains(g) {
            return Err(CliError::Config(format!("bundle has no generator '{g}' (known: {})", known.join(", "))));
        }
    }
    Ok(cfg.generators.clone())
}

fn selected_scorers(cfg: &RunConfig, bundle: &ModelBundle) -> CliResult<Vec<ScorerKind>> {
    let have = bundle.scorers();
    let s: Vec<ScorerKind> = cfg.scorer_kinds()?.into_iter().filter(|k| have.contains(k)).collect();
    if s.is_empty() {
        return Err(CliError::Config("none of the selected scorers is in the bundle".into()));
    }
    Ok(s)
}

fn check_dims(bundle: &ModelBundle, corpus: &[TextRecord]) -> CliResult<()> {
    let expected = bundle.pipeline.pca.input_dim();
    for t in corpus {
        if let Some(d) = t.hidden_dim().filter(|&d| d != expected) {
            return Err(CliError::Core(Error::Dimension {
                what: "hidden vector (bundle vs corpus)",
                expected,
                found: d,
            }));
        }
    }
    Ok(())
}

/// Naive and calibrated machine evidence for every text, scorer and
/// generator, as a tab-separated report.
pub fn cmd_score(cfg: &RunConfig) -> CliResult<String> {
    let bundle = load_bundle(cfg.require(&cfg.bundle, "bundle")?)?;
    let corpus: Vec<TextRecord> = read_corpus(cfg.require(&cfg.corpus, "corpus")?)?
        .iter()
        .map(|t| cap_tokens(t, cfg.cap_tokens))
        .collect();
    check_dims(&bundle, &corpus)?;
    let generators = selected_generators(cfg, &bundle)?;
    let scorers = selected_scorers(cfg, &bundle)?;
    let detectors: Vec<Vec<DetectorBundle>> = scorers
        .iter()
        .map(|&k| generators.iter().map(|g| bundle.detector(k, g)).collect())
        .collect::<Result<_, _>>()?;
    let opts = Lambda4Options { token_cap: cfg.token_cap };
    let fd_full = scorers.contains(&ScorerKind::Token(localcal::scorers::TokenScorer::FdTok));

    let blocks: Vec<String> = corpus
        .par_iter()
        .map(|text| -> CliResult<String> {
            let feats = text_features(&bundle.pipeline, text)?;
            let mut out = String::new();
            let mut row = |scorer: &str, gen: &str, naive: f64, cal: Option<f64>| {
                let cal = cal.map_or_else(|| "NA".to_string(), |v| v.to_string());
                writeln!(out, "{}\t{}\t{scorer}\t{gen}\t{naive}\t{cal}", text.text_id, text.source).unwrap();
            };
            for (k, dets) in scorers.iter().zip(&detectors) {
                let mut naive = Vec::new();
                let mut cal = Vec::new();
                for (g, det) in generators.iter().zip(dets) {
                    let n = naive_evidence(text, NaiveScorer::Of(*k), Some(bundle.dmap_refs(g)?))?;
                    let c = -lambda4_from_features(text, &feats, det, &opts)?;
                    row(k.id(), g, n, Some(c));
                    naive.push(n);
                    cal.push(c);
                }
                if generators.len() > 1 {
                    row(k.id(), POOLED, cfg.ensemble.combine(&naive)?, Some(cfg.ensemble.combine(&cal)?));
                }
            }
            if fd_full {
                let n = naive_evidence(text, NaiveScorer::FdFull, None)?;
                for g in &generators {
                    row(NaiveScorer::FdFull.id(), g, n, None);
                }
                if generators.len() > 1 {
                    row(NaiveScorer::FdFull.id(), POOLED, n, None);
                }
            }
            Ok(out)
        })
        .collect::<CliResult<_>>()?;
    Ok(format!("{REPORT_HEADER}\n{}", blocks.concat()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub text_id: String,
    pub source: String,
    pub scorer: String,
    pub generator: String,
    pub naive: f64,
    pub calibrated: Option<f64>,
}

pub fn parse_report(text: &str) -> CliResult<Vec<ReportRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_HEADER => {}
        _ => {
            return Err(CliError::Report {
                line: 1,
                message: format!("expected header '{REPORT_HEADER}'"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |message: String| CliError::Report { line: i + 2, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("bad number '{s}': {e}")));
        rows.push(ReportRow {
            text_id: f[0].into(),
            source: f[1].into(),
            scorer: f[2].into(),
            generator: f[3].into(),
            naive: num(f[4])?,
            calibrated: if f[5] == "NA" { None } else { Some(num(f[5])?) },
        });
    }
    Ok(rows)
}

/// Metrics table with bootstrap intervals for each scorer and generator.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<String> {
    let path = cfg.require(&cfg.scores, "scores")?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let rows = parse_report(&text)?;
    let mut groups: BTreeMap<(String, String), Vec<&ReportRow>> = BTreeMap::new();
    for r in &rows {
        if cfg.generators.is_empty() || cfg.generators.contains(&r.generator) || r.generator == POOLED {
            groups.entry((r.scorer.clone(), r.generator.clone())).or_default().push(r);
        }
    }
    if groups.is_empty() {
        return Err(CliError::Report {
            line: 1,
            message: "report has no rows to evaluate".into(),
        });
    }
    let mut table = Vec::new();
    for ((scorer, generator), rs) in &groups {
        let is_machine = |r: &ReportRow| {
            if generator == POOLED {
                r.source != HUMAN
            } else {
                &r.source == generator
            }
        };
        let pick = |f: &dyn Fn(&ReportRow) -> Option<f64>| -> LabeledScores {
            let mut s = LabeledScores::default();
            for r in rs {
                if let Some(v) = f(r) {
                    if r.source == HUMAN {
                        s.negatives.push(v);
                    } else if is_machine(r) {
                        s.positives.push(v);
                    }
                }
            }
            s
        };
        let naive = pick(&|r| Some(r.naive));
        table.push(metric_row(format!("{scorer}/naive"), generator, &naive, cfg.bootstrap_iters, cfg.level, cfg.seed)?);
        if rs.iter().any(|r| r.calibrated.is_some()) {
            let cal = pick(&|r| r.calibrated);
            table.push(metric_row(format!("{scorer}/calibrated"), generator, &cal, cfg.bootstrap_iters, cfg.level, cfg.seed)?);
        }
    }
    Ok(format_table(&table))
}

/// Cluster table, z-score histograms and per-source DMAP histograms, written
/// into the output directory. Returns a short summary.
pub fn cmd_diagnose(cfg: &RunConfig) -> CliResult<String> {
    let bundle = load_bundle(cfg.require(&cfg.bundle, "bundle")?)?;
    let corpus: Vec<TextRecord> = read_corpus(cfg.require(&cfg.corpus, "corpus")?)?
        .iter()
        .map(|t| cap_tokens(t, cfg.cap_tokens))
        .collect();
    check_dims(&bundle, &corpus)?;
    let out = cfg.require(&cfg.out, "out")?;
    let generators = selected_generators(cfg, &bundle)?;
    let mut summary = String::new();

    let clusters = cluster_report(&corpus, &bundle.pipeline.pca, cfg.clusters, cfg.seed)?;
    write_file(&out.join("clusters.tsv"), &clusters.to_tsv())?;
    for g in &generators {
        let rev = clusters.reversed_clusters(HUMAN, g);
        writeln!(summary, "clusters\t{g}\t{} of {} reverse the pooled ordering", rev.len(), clusters.rows.len()).unwrap();
    }

    let mut zsum = String::from("scorer\tpredictor\ttokens\tmean\tsd\tskew\n");
    for k in selected_scorers(cfg, &bundle)? {
        if !matches!(k, ScorerKind::Token(_)) {
            continue;
        }
        for g in &generators {
            let det = bundle.detector(k, g)?;
            let sides = [(Side::Human, HUMAN), (Side::Machine, g.as_str())];
            for (side, src) in sides {
                if side == Side::Human && g != &generators[0] {
                    continue;
                }
                let texts: Vec<TextRecord> = corpus.iter().filter(|t| t.source == src).cloned().collect();
                if texts.is_empty() {
                    continue;
                }
                let z = zscore_diagnostic(&texts, &det, side, cfg.zscore_bins)?;
                write_file(&out.join(format!("zscore_{k}_{src}.tsv")), &z.histogram.to_tsv())?;
                writeln!(zsum, "{k}\t{src}\t{}\t{:.6}\t{:.6}\t{:.6}", z.z.len(), z.mean, z.sd, z.skew).unwrap();
            }
        }
    }
    write_file(&out.join("zscore_summary.tsv"), &zsum)?;

    let edges = bundle.partition.edges();
    let srcs = sources(&corpus);
    let mut hist = String::from("lo\thi");
    let mut cols = Vec::new();
    for s in &srcs {
        write!(hist, "\t{s}").unwrap();
        let toks: Vec<_> = corpus.iter().filter(|t| &t.source == s).flat_map(|t| t.tokens.iter().cloned()).collect();
        cols.push(dmap_histogram(&toks, &bundle.partition)?);
    }
    hist.push('\n');
    for b in 0..bundle.partition.n_bins() {
        write!(hist, "{}\t{}", edges[b], edges[b + 1]).unwrap();
        for c in &cols {
            write!(hist, "\t{:.6}", c.q[b]).unwrap();
        }
        hist.push('\n');
    }
    write_file(&out.join("dmap_histograms.tsv"), &hist)?;
    writeln!(summary, "wrote clusters.tsv, zscore_*.tsv and dmap_histograms.tsv to {}", out.display()).unwrap();
    Ok(summary)
}

/// Generate a synthetic corpus and its prompt-group split.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<String> {
    let world = cfg
        .world
        .as_ref()
        .ok_or_else(|| CliError::Config("synth needs a [world] table in the config".into()))?;
    let out = cfg.require(&cfg.out, "out")?;
    let corpus = localcal::synth::generate_world(world, cfg.synth_texts)?;
    let (train, test) = split_by_prompt_group(
        &corpus,
        &SplitSpec {
            train_fraction: cfg.train_fraction,
            seed: cfg.seed,
            cap_tokens: None,
        },
    )?;
    let write = |name: &str, texts: &[TextRecord]| -> CliResult<()> {
        let mut buf = Vec::new();
        write_corpus(&mut buf, texts)?;
        write_file(&out.join(name), &String::from_utf8(buf).expect("JSON is UTF-8"))
    };
    write("corpus.jsonl", &corpus)?;
    write("train.jsonl", &train)?;
    write("test.jsonl", &test)?;
    let world_toml = toml::to_string(world).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&out.join("world.toml"), &world_toml)?;
    Ok(format!(
        "{} texts ({} train, {} test) written to {}\n",
        corpus.len(),
        train.len(),
        test.len(),
        out.display()
    ))
}
