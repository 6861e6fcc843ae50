use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use driftscope_core::align::{procrustes, AlignOptions};
use driftscope_core::corpus::Period;
use driftscope_core::corpus::{
    load_manifest, load_semeval, merge_slices, TimeSlicedCorpus, TokenizerConfig, YearRange,
    DEFAULT_TAG_SEPARATOR,
};
use driftscope_core::detector::{
    detect, read_word_list, ChangeRanking, EvaluationReport, MetricId, ModelKind, ScoreOptions,
    ScoreOutcome, TargetLists, ThresholdPolicy, WordScore,
};
use driftscope_core::metrics::BrayCurtisForm;
use driftscope_core::projection::{project_pair, TsneParams};
use driftscope_core::sgns::{train_op_pair, train_wi, SgnsConfig};
use driftscope_core::storage::{
    corpus_fingerprint, load_occurrences, projection_key, write_atomic, RankingArtifact, Registry,
    ReportRow, Run, RunReport,
};
use driftscope_core::synthetic::drift_corpus;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{
    parse_model, AlignArgs, Cli, CliError, Command, EvaluateArgs, GlobalArgs, IngestArgs,
    PreprocessArgs, ProjectArgs, ReportArgs, ScoreArgs, ScoringArgs, ServeArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Preprocess(a) => preprocess(g, a, out),
        Command::Train(a) => train(g, a, out),
        Command::Align(a) => align(g, a, out),
        Command::IngestOccurrences(a) => ingest(g, a, out),
        Command::Score(a) => score(g, a, out),
        Command::Evaluate(a) => evaluate(g, a, out),
        Command::Project(a) => project(g, a, out),
        Command::Serve(a) => serve(g, a),
        Command::Report(a) => report(g, a, out),
    }
}

fn registry(g: &GlobalArgs) -> Result<Registry> {
    Ok(Registry::open(Registry::resolve_root(g.home.as_deref()))?)
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

/// Records the settings a stage ran with under `config[stage]`.
fn record(run: &mut Run, stage: &str, settings: Value) -> Result<()> {
    let mut config = match run.record().config.clone() {
        Value::Object(map) => map,
        _ => serde_json::Map::new(),
    };
    config.insert(stage.to_string(), settings);
    run.set_config(Value::Object(config))?;
    Ok(())
}

fn read_lists(paths: &[PathBuf]) -> Result<BTreeSet<String>> {
    let mut words = BTreeSet::new();
    for path in paths {
        words.extend(read_word_list(path)?);
    }
    Ok(words)
}

fn parse_metric(name: &str, kind: Option<ModelKind>) -> Result<MetricId> {
    let Some(kind) = kind else {
        return Ok(name.parse()?);
    };
    let valid = MetricId::for_kind(kind);
    let listed = || {
        valid
            .iter()
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join(", ")
    };
    match name.parse::<MetricId>() {
        Ok(metric) if valid.contains(&metric) => Ok(metric),
        Ok(metric) => Err(CliError::Usage(format!(
            "metric `{}` does not apply to {}; valid metrics: {}",
            metric.name(),
            kind.name(),
            listed()
        ))),
        Err(_) => Err(CliError::Usage(format!(
            "unknown metric `{name}`; valid metrics: {}",
            listed()
        ))),
    }
}

fn parse_interval(spec: &str) -> Result<YearRange> {
    let bad = || CliError::Usage(format!("bad interval `{spec}` (expected LABEL:START:END)"));
    let mut parts = spec.rsplitn(3, ':');
    let end = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let start = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let label = parts.next().filter(|l| !l.is_empty()).ok_or_else(bad)?;
    Ok(YearRange::new(label, start, end))
}

#[derive(Serialize)]
struct CorpusSummary {
    run_id: String,
    labels: [String; 2],
    sentences: [usize; 2],
    tokens: [u64; 2],
    vocabulary: usize,
    excluded_documents: usize,
    fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold: Option<[String; 2]>,
}

fn preprocess(g: &GlobalArgs, a: &PreprocessArgs, out: &mut dyn Write) -> Result<()> {
    let rules = TokenizerConfig {
        lowercase: !a.keep_case,
        ..TokenizerConfig::default()
    };
    let mut synthetic_gold = None;
    let (corpus, excluded) = if let Some(manifest) = &a.manifest {
        let intervals = match (a.split, a.interval.as_slice()) {
            (Some(year), []) => YearRange::split_at(year),
            (None, [first, second]) => [parse_interval(first)?, parse_interval(second)?],
            _ => {
                return Err(CliError::Usage(
                    "give --split <year> or exactly two --interval flags".into(),
                ))
            }
        };
        let docs = load_manifest(manifest)?;
        let merged = merge_slices(&docs, &intervals, &rules)?;
        (merged.corpus, merged.excluded.len())
    } else if let Some(dir) = &a.semeval {
        (load_semeval(dir, &rules)?, 0)
    } else if let Some(tokens) = a.synthetic {
        let fx = drift_corpus(g.seed, tokens);
        synthetic_gold = Some(fx.gold());
        (fx.corpus, 0)
    } else {
        unreachable!("clap requires one source");
    };

    let registry = registry(g)?;
    let fingerprint = corpus_fingerprint(&corpus);
    let mut run = match a.run.as_deref().map(|id| registry.run(id)) {
        Some(Ok(existing)) => {
            if existing
                .record()
                .fingerprint
                .as_ref()
                .is_some_and(|f| f != &fingerprint)
            {
                return Err(CliError::Usage(format!(
                    "run `{}` already exists with a different corpus",
                    existing.id()
                )));
            }
            existing
        }
        Some(Err(driftscope_core::storage::StorageError::NotFound(_))) | None => {
            registry.create_run(a.run.as_deref(), json!({}))?
        }
        Some(Err(e)) => return Err(e.into()),
    };
    run.save_corpus(&corpus)?;
    let source = match (&a.manifest, &a.semeval) {
        (Some(m), _) => json!({"manifest": m, "split": a.split, "interval": a.interval}),
        (_, Some(s)) => json!({"semeval": s}),
        _ => json!({"synthetic": a.synthetic, "seed": g.seed}),
    };
    record(
        &mut run,
        "preprocess",
        json!({"source": source, "lowercase": rules.lowercase}),
    )?;

    let gold = match synthetic_gold {
        Some(gold) => {
            let dir = run.dir().join("gold");
            let changed = dir.join("changed.txt");
            let stable = dir.join("stable.txt");
            for (path, words) in [(&changed, &gold.changed), (&stable, &gold.stable)] {
                let text: String = words.iter().map(|w| format!("{w}\n")).collect();
                write_atomic(path, |w| w.write_all(text.as_bytes()))?;
            }
            Some([changed.display().to_string(), stable.display().to_string()])
        }
        None => None,
    };
    let summary = CorpusSummary {
        run_id: run.id().to_string(),
        labels: corpus.labels().clone(),
        sentences: Period::BOTH.map(|p| corpus.slice(p).len()),
        tokens: Period::BOTH.map(|p| corpus.token_count(p)),
        vocabulary: corpus.vocabulary().len(),
        excluded_documents: excluded,
        fingerprint,
        gold,
    };
    if g.json {
        return print_json(out, &summary);
    }
    writeln!(out, "run {}", summary.run_id)?;
    for i in 0..2 {
        writeln!(
            out,
            "  {:<12} {:>8} sentences {:>10} tokens",
            summary.labels[i], summary.sentences[i], summary.tokens[i]
        )?;
    }
    writeln!(out, "  vocabulary   {:>8} types", summary.vocabulary)?;
    if excluded > 0 {
        writeln!(out, "  excluded     {excluded:>8} documents")?;
    }
    if let Some([changed, stable]) = &summary.gold {
        writeln!(out, "  gold lists   {changed}\n               {stable}")?;
    }
    Ok(())
}

fn load_corpus(run: &Run) -> Result<TimeSlicedCorpus> {
    run.load_corpus().map_err(|e| match e {
        driftscope_core::storage::StorageError::NotFound(_) => CliError::Usage(format!(
            "run `{}` has no corpus; run `driftscope preprocess` first",
            run.id()
        )),
        other => other.into(),
    })
}

fn train(g: &GlobalArgs, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let kind = parse_model(&a.model)?;
    let defaults = SgnsConfig::default();
    let config = SgnsConfig {
        vector_size: a.dim.unwrap_or(defaults.vector_size),
        window: a.window.unwrap_or(defaults.window),
        negative: a.negative.unwrap_or(defaults.negative),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        min_count: a.min_count.unwrap_or(defaults.min_count),
        alpha: a.alpha.unwrap_or(defaults.alpha),
        ns_exponent: a.ns_exponent.unwrap_or(defaults.ns_exponent),
        seed: g.seed,
        threads: g.threads.max(1),
        ..defaults
    };
    if !config.is_deterministic() {
        log::warn!(
            "training with {} threads is not bitwise reproducible",
            config.threads
        );
    }
    let registry = registry(g)?;
    let mut run = registry.run(&a.run)?;
    let corpus = load_corpus(&run)?;
    let summary = match kind {
        ModelKind::SgnsOp => {
            let (earlier, later) = train_op_pair(&corpus, &config)?;
            run.save_op_models(&earlier, &later)?;
            json!({
                "model": kind,
                "vocabulary": [earlier.len(), later.len()],
                "epoch_losses": [earlier.epoch_losses, later.epoch_losses],
            })
        }
        ModelKind::SgnsWi => {
            let targets = read_lists(&a.targets)?;
            if targets.is_empty() {
                return Err(CliError::Usage(
                    "sgns-wi needs --targets <word list>".into(),
                ));
            }
            let wi = train_wi(
                &corpus,
                &targets,
                a.separator.unwrap_or(DEFAULT_TAG_SEPARATOR),
                &config,
            )?;
            for missing in &wi.missing {
                log::warn!(
                    "target `{}` does not occur in {:?}",
                    missing.word,
                    missing.absent_from
                );
            }
            run.save_wi(&wi)?;
            json!({
                "model": kind,
                "vocabulary": wi.model.len(),
                "injected": wi.tags.len(),
                "missing": wi.missing,
                "epoch_losses": wi.model.epoch_losses,
            })
        }
        _ => {
            return Err(CliError::Usage(format!(
                "{} is ingested, not trained; use `driftscope ingest-occurrences`",
                kind.name()
            )))
        }
    };
    let mut settings = serde_json::to_value(&config).expect("config serializes");
    if kind == ModelKind::SgnsWi {
        settings["targets"] = json!(a.targets);
    }
    record(
        &mut run,
        &format!("train:{}", kind.name().to_ascii_lowercase()),
        settings,
    )?;
    if g.json {
        return print_json(out, &summary);
    }
    writeln!(
        out,
        "trained {} for run {} ({} dimensions)",
        kind.name(),
        run.id(),
        config.vector_size
    )?;
    if kind == ModelKind::SgnsOp {
        writeln!(out, "next: driftscope align --run {}", run.id())?;
    }
    Ok(())
}

fn align(g: &GlobalArgs, a: &AlignArgs, out: &mut dyn Write) -> Result<()> {
    let registry = registry(g)?;
    let mut run = registry.run(&a.run)?;
    let (earlier, later) = run.load_op_models().map_err(|e| match e {
        driftscope_core::storage::StorageError::NotFound(_) => CliError::Usage(format!(
            "run `{}` has no SGNS-OP models; run `driftscope train --model sgns-op` first",
            run.id()
        )),
        other => other.into(),
    })?;
    let options = AlignOptions {
        normalize: a.normalize,
        center: a.center,
    };
    let pair = procrustes(&earlier, &later, options)?;
    run.save_aligned(&pair)?;
    record(
        &mut run,
        "align",
        serde_json::to_value(options).expect("options serialize"),
    )?;
    let summary =
        json!({"shared_vocabulary": pair.shared_vocab().len(), "residual": pair.residual()});
    if g.json {
        return print_json(out, &summary);
    }
    writeln!(
        out,
        "aligned {} shared words, residual {:.6}",
        pair.shared_vocab().len(),
        pair.residual()
    )?;
    Ok(())
}

fn ingest(g: &GlobalArgs, a: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let registry = registry(g)?;
    let mut run = registry.run(&a.run)?;
    let store = load_occurrences(&a.file).map_err(|e| CliError::Usage(e.to_string()))?;
    if let (Some(periods), Ok(corpus)) = (store.periods(), run.load_corpus()) {
        if &periods != corpus.labels() {
            return Err(CliError::Usage(format!(
                "occurrence periods {periods:?} differ from the run's slices {:?}",
                corpus.labels()
            )));
        }
    }
    run.save_occurrences(&store)?;
    record(&mut run, "ingest-occurrences", json!({"file": a.file}))?;
    let summary = json!({
        "words": store.words().len(),
        "embedders": store.embedders().iter().map(|e| e.to_string()).collect::<Vec<_>>(),
    });
    if g.json {
        return print_json(out, &summary);
    }
    writeln!(out, "ingested occurrences of {} words", store.words().len())?;
    Ok(())
}

fn score_options(g: &GlobalArgs, s: &ScoringArgs) -> ScoreOptions {
    let mut opts = ScoreOptions {
        threads: g.threads.max(1),
        ..ScoreOptions::default()
    };
    if s.conventional_bray_curtis {
        opts.bray_curtis = BrayCurtisForm::Conventional;
    }
    opts.affinity.seed = g.seed;
    opts
}

fn required_model(s: &ScoringArgs) -> Result<ModelKind> {
    let name = s
        .model
        .as_deref()
        .ok_or_else(|| CliError::Usage("--model is required".into()))?;
    parse_model(name)
}

fn score(g: &GlobalArgs, a: &ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let kind = required_model(&a.scoring)?;
    let metrics: Vec<MetricId> = a
        .scoring
        .metric
        .iter()
        .map(|m| parse_metric(m, Some(kind)))
        .collect::<Result<_>>()?;
    let policy: ThresholdPolicy = a.scoring.threshold.parse()?;
    let targets: Vec<String> = read_lists(&a.targets)?.into_iter().collect();
    let registry = registry(g)?;
    let mut run = registry.run(&a.run)?;
    let model = run.load_model(kind)?;
    let model_id = run.model_ref(kind).to_string();
    let opts = score_options(g, &a.scoring);
    let mut artifacts = Vec::new();
    for metric in metrics {
        let outcome =
            driftscope_core::detector::score_targets(model.artifacts(), metric, &targets, &opts)?;
        for u in &outcome.unscoreable {
            log::warn!(
                "{}: `{}` unscoreable ({:?})",
                metric.name(),
                u.word,
                u.reason
            );
        }
        let ranking = ChangeRanking::build(&model_id, metric, outcome.scores, policy)?;
        let artifact = RankingArtifact {
            ranking,
            unscoreable: outcome.unscoreable,
            nonconverged: outcome.nonconverged,
        };
        run.save_ranking(kind, &artifact)?;
        artifacts.push(artifact);
    }
    if g.json {
        return print_json(out, &artifacts);
    }
    for artifact in &artifacts {
        let r = &artifact.ranking;
        writeln!(
            out,
            "# {} {} (threshold {:.6})",
            model_id,
            r.metric.name(),
            r.threshold
        )?;
        for (i, e) in r.entries.iter().enumerate() {
            let line = format!("{:>4}  {:<20} {:>12.6}", i + 1, e.word, e.score);
            if r.verdicts[&e.word] {
                writeln!(out, "{line}  changed")?;
            } else {
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct ScoreRow {
    word: String,
    score: f64,
}

fn read_scores(path: &Path) -> Result<Vec<WordScore>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    reader
        .deserialize::<ScoreRow>()
        .map(|row| {
            row.map(|r| WordScore {
                word: r.word,
                score: r.score,
            })
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn evaluation_table(out: &mut dyn Write, reports: &[EvaluationReport]) -> Result<()> {
    writeln!(
        out,
        "{:<24} {:<14} {:>4} {:>4} {:>4} {:>4} {:>6}",
        "model", "metric", "TP", "TN", "FP", "FN", "Score"
    )?;
    for r in reports {
        let c = &r.confusion;
        writeln!(
            out,
            "{:<24} {:<14} {:>4} {:>4} {:>4} {:>4} {:>6.2}",
            r.model_id,
            r.metric.name(),
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            r.display_score
        )?;
    }
    Ok(())
}

fn evaluate(g: &GlobalArgs, a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let gold = TargetLists::load(&a.changed, &a.stable)?;
    let policy: ThresholdPolicy = a.scoring.threshold.parse()?;
    let kind = a.scoring.model.as_deref().map(parse_model).transpose()?;
    let metrics: Vec<MetricId> = a
        .scoring
        .metric
        .iter()
        .map(|m| parse_metric(m, kind))
        .collect::<Result<_>>()?;
    let registry = match &a.run {
        Some(_) => Some(registry(g)?),
        None => None,
    };
    let mut run = match (&registry, &a.run) {
        (Some(reg), Some(id)) => Some(reg.run(id)?),
        _ => None,
    };
    if run.is_some() && kind.is_none() {
        return Err(CliError::Usage("--run needs --model".into()));
    }

    let mut reports = Vec::new();
    if let Some(scores_path) = &a.scores {
        let [metric] = metrics[..] else {
            return Err(CliError::Usage(
                "a scores file holds one metric; give exactly one --metric".into(),
            ));
        };
        let model_id = match (&run, kind) {
            (Some(run), Some(kind)) => run.model_ref(kind).to_string(),
            (None, Some(kind)) => kind.name().to_string(),
            _ => "scores".to_string(),
        };
        let outcome = ScoreOutcome {
            scores: read_scores(scores_path)?,
            ..ScoreOutcome::default()
        };
        reports.push(EvaluationReport::from_outcome(
            &model_id, metric, outcome, &gold, policy,
        )?);
    } else {
        let (Some(run), Some(kind)) = (&run, kind) else {
            return Err(CliError::Usage(
                "give --run and --model, or --scores".into(),
            ));
        };
        let model = run.load_model(kind)?;
        let opts = score_options(g, &a.scoring);
        let model_id = run.model_ref(kind).to_string();
        for metric in metrics {
            reports.push(detect(
                model.artifacts(),
                &model_id,
                metric,
                &gold,
                policy,
                &opts,
            )?);
        }
    }
    if let (Some(run), Some(kind)) = (run.as_mut(), kind) {
        for report in &reports {
            run.save_evaluation(kind, report)?;
        }
    }
    if g.json {
        return print_json(out, &reports);
    }
    evaluation_table(out, &reports)
}

fn project(g: &GlobalArgs, a: &ProjectArgs, out: &mut dyn Write) -> Result<()> {
    let kind = parse_model(&a.model)?;
    let mut words = a.words.clone();
    if let Some(file) = &a.words_file {
        words.extend(read_word_list(file)?);
    }
    if words.is_empty() {
        return Err(CliError::Usage("give --words or --words-file".into()));
    }
    let params = TsneParams {
        perplexity: a.perplexity,
        iterations: a.iterations,
        seed: g.seed,
        ..TsneParams::default()
    };
    let registry = registry(g)?;
    let run = registry.run(&a.run)?;
    let model = run.load_model(kind)?;
    let result = project_pair(model.artifacts(), &words, &params)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let key = projection_key(&words, &params);
    run.save_projection(kind, &key, &result)?;
    if let Some(path) = &a.out {
        let csv = result.to_csv();
        write_atomic(path, |w| w.write_all(csv.as_bytes()))?;
    }
    if g.json {
        return print_json(out, &result);
    }
    writeln!(
        out,
        "projected {} points ({} links), perplexity {:.3}, final KL {:.6}",
        result.points.len(),
        result.links.len(),
        result.params.perplexity.unwrap_or_default(),
        result.kl_trace.last().copied().unwrap_or(f64::NAN)
    )?;
    let mut lengths = result.link_lengths();
    lengths.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (word, length) in lengths {
        writeln!(out, "  {word:<20} {length:>10.4}")?;
    }
    Ok(())
}

fn serve(g: &GlobalArgs, a: &ServeArgs) -> Result<()> {
    let config = driftscope_service::ServiceConfig {
        home: Registry::resolve_root(g.home.as_deref()),
        host: a.host,
        port: a.port,
        static_dir: a.static_dir.clone(),
        tsne: TsneParams {
            seed: g.seed,
            ..TsneParams::default()
        },
    };
    driftscope_service::serve_blocking(config)
        .map_err(|e| CliError::Internal(format!("server failed: {e}")))
}

fn report_csv(report: &RunReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model",
        "metric",
        "tp",
        "tn",
        "fp",
        "fn",
        "score",
        "display_score",
        "changed",
    ])
    .expect("in-memory write");
    for r in &report.rows {
        w.write_record([
            r.model.name().to_string(),
            r.metric.name(),
            r.tp.to_string(),
            r.tn.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
            r.score.to_string(),
            format!("{:.2}", r.display_score),
            r.changed.join(" "),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
}

fn report(g: &GlobalArgs, a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let registry = registry(g)?;
    let run = registry.run(&a.run)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for kind in run.models() {
        for metric in run.evaluated_metrics(kind) {
            let r = run.load_evaluation(kind, metric)?;
            rows.push(ReportRow {
                model: kind,
                metric,
                score: r.score,
                display_score: r.display_score,
                tp: r.confusion.tp,
                tn: r.confusion.tn,
                fp: r.confusion.fp,
                fn_: r.confusion.fn_,
                changed: r.ranking.flagged().map(|e| e.word.clone()).collect(),
            });
            reports.push(r);
        }
    }
    let report = RunReport {
        run_id: run.id().to_string(),
        rows,
    };
    run.save_report(&report)?;
    let csv = report_csv(&report);
    write_atomic(&run.dir().join("report.csv"), |w| {
        w.write_all(csv.as_bytes())
    })?;
    if g.json {
        return print_json(out, &report);
    }
    if reports.is_empty() {
        writeln!(out, "run {} has no evaluations", run.id())?;
        return Ok(());
    }
    evaluation_table(out, &reports)
}
