use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Serialize;
use socialtrust::closeness::{
    participant_errors, mean_error, ActivityClassifier, Aggregation, ComparisonOptions, ErrorMode,
};
use socialtrust::ingest::{dedupe_participants, parse_result_detailed, FilterPolicy, InteractionClass};
use socialtrust::simnet::{run_scenario, NetConfig, PairingPlan, ScenarioOptions, SimConfig};
use socialtrust::statistics::{class_distribution, rating_correlations, CorrelationEntry};
use socialtrust::trustmetric::{compute_quantiles, compute_quantiles_per_participant, Calibration};
use socialtrust::{extract_all, FeatureVector, ParticipantLog, Predictor, QuantileTable, Rating, RatingKind, TrustLevel};

use crate::io::{self, FeatureRow};
use crate::{Cli, Command, ErrorModeArg, Format, GlobalOpts, UsageError};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest { inputs, policy, out, report, strict } => {
            ingest(g, inputs, policy, out.as_deref(), report.as_deref(), *strict)
        }
        Command::Features { logs, out } => features(g, logs, out.as_deref()),
        Command::Calibrate { features, logs, level, rating, per_participant, out, text } => {
            let rating = RatingKind::from(*rating);
            let groups = match (features, logs) {
                (Some(path), None) => {
                    if rating != RatingKind::TrustInfo {
                        return Err(UsageError("feature tables only carry trust_info ratings; use --logs".into()).into());
                    }
                    groups_from_rows(&io::read_feature_rows(path)?)
                }
                (None, Some(path)) => groups_from_logs(&io::read_logs(path)?),
                _ => unreachable!("clap enforces exactly one source"),
            };
            calibrate(g, groups, *level, rating, *per_participant, out, text.as_deref())
        }
        Command::Predict { table, features, combinator, favorites_only, out } => {
            let table = load_table(table)?;
            let predictor = Predictor::new(&table, *combinator).with_favorites_filter(*favorites_only);
            predict(g, &predictor, &io::read_feature_rows(features)?, out.as_deref())
        }
        Command::Stats { logs, spearman, rating, out_dir } => stats(g, &io::read_logs(logs)?, *spearman, (*rating).into(), out_dir),
        Command::Compare { logs, scheme, include_messages, cutoffs, mode, pooled, rating, out } => {
            let opts = ComparisonOptions {
                scheme: *scheme,
                rating: (*rating).into(),
                mode: match mode {
                    ErrorModeArg::Underestimation => ErrorMode::Underestimation,
                    ErrorModeArg::Disagreement => ErrorMode::Disagreement,
                },
                aggregation: if *pooled { Aggregation::Pooled } else { Aggregation::PerParticipant },
            };
            let classifier = ActivityClassifier::new(*include_messages, cutoffs.0, cutoffs.1)
                .map_err(|e| UsageError(e.to_string()))?;
            compare(g, &io::read_logs(logs)?, &classifier, &opts, out.as_deref())
        }
        Command::Simulate { devices, pairs, loss, max_retries, coupling, span_distribution, span_days, out, summary } => {
            let config = SimConfig {
                n_devices: *devices,
                seed: g.seed,
                trust_coupling: *coupling,
                span_distribution: (*span_distribution).into(),
                span_days_mean: *span_days,
                ..SimConfig::default()
            };
            config.validate().map_err(|e| UsageError(e.to_string()))?;
            let plan = parse_plan(pairs)?;
            let net = NetConfig { loss: *loss, max_retries: *max_retries, ..NetConfig::default() };
            simulate(g, &config, &plan, net, out.as_deref(), summary.as_deref())
        }
    }
}

/// Writes to `out`, or to standard output when no path is given.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => io::write_atomic(path, bytes),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn tabular<T: Serialize>(g: &GlobalOpts, rows: &[T]) -> Result<Vec<u8>> {
    match g.format {
        Format::Csv => io::to_csv(rows),
        Format::Json => Ok(io::to_json(rows)),
    }
}

fn document_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            found.retain(|p| p.extension().is_some_and(|e| e == "yaml" || e == "yml"));
            found.sort();
            out.extend(found);
        } else if input.exists() {
            out.push(input.clone());
        } else {
            bail!("{} does not exist", input.display());
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ExclusionRow {
    source: String,
    participant_id: String,
    reason: String,
}

fn ingest(g: &GlobalOpts, inputs: &[PathBuf], policy: &str, out: Option<&Path>, report: Option<&Path>, strict: bool) -> Result<()> {
    let policy: FilterPolicy = if policy == "default" {
        FilterPolicy::default()
    } else {
        let text = fs::read_to_string(policy).with_context(|| format!("reading policy {policy}"))?;
        serde_json::from_str(&text).with_context(|| format!("parsing policy {policy}"))?
    };

    let mut excluded = Vec::new();
    let mut parsed = Vec::new();
    let mut sources = Vec::new();
    for path in document_paths(inputs)? {
        let source = path.display().to_string();
        let text = fs::read_to_string(&path).with_context(|| format!("reading {source}"))?;
        match parse_result_detailed(&text) {
            Ok(mut doc) => {
                for w in &doc.warnings {
                    warn!("{source}: {w}");
                }
                if doc.log.participant_id.is_empty() {
                    doc.log.participant_id =
                        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                }
                let key = doc.worker_id.clone().unwrap_or_else(|| doc.log.participant_id.clone());
                parsed.push((key, doc.log));
                sources.push(source);
            }
            Err(e) if strict => return Err(e).with_context(|| source.clone()),
            Err(e) => excluded.push(ExclusionRow { source, participant_id: String::new(), reason: format!("Invalid: {e}") }),
        }
    }
    let read = parsed.len() + excluded.len();

    let ids: Vec<String> = parsed.iter().map(|(_, l)| l.participant_id.clone()).collect();
    let deduped = dedupe_participants(parsed);
    let mut kept_sources = Vec::new();
    for (idx, source) in sources.iter().enumerate() {
        match deduped.duplicates.iter().find(|(_, d)| *d == idx) {
            Some(_) => excluded.push(ExclusionRow { source: source.clone(), participant_id: ids[idx].clone(), reason: "Duplicate".into() }),
            None => kept_sources.push(source),
        }
    }
    let mut kept = Vec::new();
    for (log, source) in deduped.kept.into_iter().zip(kept_sources) {
        match policy.exclusion(&log) {
            Some(reason) => excluded.push(ExclusionRow { source: source.clone(), participant_id: log.participant_id, reason: reason.to_string() }),
            None => kept.push(log),
        }
    }

    emit(out, io::logs_to_jsonl(&kept).as_bytes())?;
    let report_path = match (report, out) {
        (Some(r), _) => Some(r.to_path_buf()),
        (None, Some(o)) => Some(PathBuf::from(format!("{}.excluded.csv", o.display()))),
        (None, None) => None,
    };
    if let Some(path) = report_path {
        io::write_atomic(&path, &io::to_csv(&excluded)?)?;
    }
    if !g.quiet {
        info!("read {read} documents, kept {}, excluded {}", kept.len(), excluded.len());
    }
    Ok(())
}

fn feature_rows(logs: &[ParticipantLog]) -> Vec<FeatureRow> {
    let mut rows = Vec::new();
    for log in logs {
        let features = extract_all(log);
        for p in &log.partners {
            rows.push(FeatureRow::new(&log.participant_id, &p.partner_id, &features[&p.partner_id], &p.rating));
        }
    }
    rows
}

fn features(g: &GlobalOpts, logs: &Path, out: Option<&Path>) -> Result<()> {
    let rows = feature_rows(&io::read_logs(logs)?);
    emit(out, &tabular(g, &rows)?)
}

type Groups = Vec<Vec<(FeatureVector, Rating)>>;

fn groups_from_rows(rows: &[FeatureRow]) -> Groups {
    let mut by_participant: BTreeMap<&str, Vec<(FeatureVector, Rating)>> = BTreeMap::new();
    for row in rows {
        by_participant.entry(&row.participant_id).or_default().push((row.features(), row.rating()));
    }
    by_participant.into_values().collect()
}

fn groups_from_logs(logs: &[ParticipantLog]) -> Groups {
    logs.iter()
        .map(|log| {
            let features = extract_all(log);
            log.partners.iter().map(|p| (features[&p.partner_id].clone(), p.rating)).collect()
        })
        .collect()
}

fn calibrate(
    g: &GlobalOpts,
    groups: Groups,
    level: u8,
    rating: RatingKind,
    per_participant: bool,
    out: &Path,
    text: Option<&Path>,
) -> Result<()> {
    let cal = Calibration { reference_level: TrustLevel::new(level).expect("validated by clap"), rating };
    let table = if per_participant {
        compute_quantiles_per_participant(&groups, &cal)?
    } else {
        let pooled: Vec<(FeatureVector, Rating)> = groups.into_iter().flatten().collect();
        compute_quantiles(&pooled, &cal)?
    };
    io::write_atomic(out, &io::to_json(&table))?;
    let rendered = table.render_text();
    if let Some(path) = text {
        io::write_atomic(path, rendered.as_bytes())?;
    }
    if !g.quiet {
        print!("{rendered}");
    }
    Ok(())
}

fn load_table(spec: &str) -> Result<QuantileTable> {
    if spec == "reference" {
        return Ok(QuantileTable::survey_reference());
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading table {spec}"))?;
    serde_json::from_str(&text).with_context(|| format!("parsing table {spec}"))
}

#[derive(Debug, Serialize)]
struct PredictionRow<'a> {
    participant_id: &'a str,
    partner_id: &'a str,
    predicted_trusted: bool,
    grade: u8,
    confidence_band: Option<f64>,
    triggered: String,
    rating_trust_info: Option<u8>,
}

fn predict(g: &GlobalOpts, predictor: &Predictor, rows: &[FeatureRow], out: Option<&Path>) -> Result<()> {
    let predictions: Vec<PredictionRow> = rows
        .iter()
        .map(|row| {
            let p = predictor.predict(&row.features());
            PredictionRow {
                participant_id: &row.participant_id,
                partner_id: &row.partner_id,
                predicted_trusted: p.predicted_trusted,
                grade: p.grade.get(),
                confidence_band: p.confidence_band.map(|b| b.prob()),
                triggered: p.triggered.iter().map(|t| t.variable.name()).collect::<Vec<_>>().join(";"),
                rating_trust_info: row.rating_trust_info,
            }
        })
        .collect();
    if !g.quiet {
        let trusted = predictions.iter().filter(|p| p.predicted_trusted).count();
        info!("{trusted} of {} partners predicted trusted", predictions.len());
    }
    emit(out, &tabular(g, &predictions)?)
}

fn correlation_text(entries: &[CorrelationEntry]) -> String {
    let mut s = format!("{:<12} {:<12} {:>8} {:>7} {:>12} {:>5}\n", "a", "b", "r", "pairs", "participants", "sig");
    for e in entries {
        let sig = e.by_participants.as_ref().is_some_and(|s| s.significant_at_99);
        let _ = writeln!(
            s,
            "{:<12} {:<12} {:>8.4} {:>7} {:>12} {:>5}",
            e.a.name(),
            e.b.name(),
            e.r,
            e.pairs,
            e.participants,
            if sig { "yes" } else { "no" }
        );
    }
    s
}

#[derive(Debug, Serialize)]
struct HistogramRow {
    class: &'static str,
    level_1: u64,
    level_2: u64,
    level_3: u64,
    level_4: u64,
    level_5: u64,
    population: u64,
    mode: Option<u8>,
}

fn stats(g: &GlobalOpts, logs: &[ParticipantLog], spearman: bool, rating: RatingKind, out_dir: &Path) -> Result<()> {
    let entries = rating_correlations(logs, spearman)?;
    let text = correlation_text(&entries);
    io::write_atomic(&out_dir.join("correlations.json"), &io::to_json(&entries))?;
    io::write_atomic(&out_dir.join("correlations.txt"), text.as_bytes())?;

    // surveyed partners carry the class implied by their position
    let mut dataset = Vec::new();
    let mut classes = HashMap::new();
    for log in logs {
        for p in &log.partners {
            if let Some(class) = p.survey_position.and_then(InteractionClass::for_position) {
                let key = format!("{}/{}", log.participant_id, p.partner_id);
                dataset.push((key.clone(), p.rating));
                classes.insert(key, class);
            }
        }
    }
    let hist = class_distribution(&dataset, &classes, rating);
    let rows: Vec<HistogramRow> = InteractionClass::CYCLE
        .iter()
        .map(|&c| {
            let h = hist.histogram(c);
            HistogramRow {
                class: c.name(),
                level_1: h[0],
                level_2: h[1],
                level_3: h[2],
                level_4: h[3],
                level_5: h[4],
                population: hist.population(c),
                mode: hist.mode(c),
            }
        })
        .collect();
    let (name, bytes) = match g.format {
        Format::Csv => ("class_histograms.csv", io::to_csv(&rows)?),
        Format::Json => ("class_histograms.json", io::to_json(&rows)),
    };
    io::write_atomic(&out_dir.join(name), &bytes)?;
    if !g.quiet {
        print!("{text}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ErrorRow {
    participant_id: String,
    errors: u64,
    rated: u64,
    error_fraction: Option<f64>,
}

fn compare(
    g: &GlobalOpts,
    logs: &[ParticipantLog],
    classifier: &ActivityClassifier,
    opts: &ComparisonOptions,
    out: Option<&Path>,
) -> Result<()> {
    let groups = groups_from_logs(logs);
    let mut rows: Vec<ErrorRow> = logs
        .iter()
        .zip(&groups)
        .map(|(log, partners)| {
            let c = participant_errors(partners, classifier, opts);
            ErrorRow { participant_id: log.participant_id.clone(), errors: c.errors, rated: c.rated, error_fraction: c.fraction() }
        })
        .collect();
    let overall = mean_error(&groups, classifier, opts)?;
    rows.push(ErrorRow {
        participant_id: "ALL".into(),
        errors: rows.iter().map(|r| r.errors).sum(),
        rated: rows.iter().map(|r| r.rated).sum(),
        error_fraction: Some(overall),
    });
    if !g.quiet {
        info!("mean error {overall:.4} ({:?})", opts.aggregation);
    }
    emit(out, &tabular(g, &rows)?)
}

fn parse_plan(pairs: &str) -> Result<PairingPlan> {
    if pairs == "mesh" || pairs.starts_with("random:") {
        return pairs.parse().map_err(|e: String| UsageError(e).into());
    }
    let text = fs::read_to_string(pairs).with_context(|| format!("reading pair file {pairs}"))?;
    let mut plan = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line
            .split_once([',', ':'])
            .with_context(|| format!("{pairs}:{}: expected `devA,devB`", n + 1))?;
        plan.push((a.trim().to_string(), b.trim().to_string()));
    }
    Ok(PairingPlan::Explicit(plan))
}

fn simulate(
    g: &GlobalOpts,
    config: &SimConfig,
    plan: &PairingPlan,
    net: NetConfig,
    out: Option<&Path>,
    summary: Option<&Path>,
) -> Result<()> {
    let opts = ScenarioOptions { net, ..ScenarioOptions::default() };
    let report = run_scenario(config, plan, &opts)?;
    let bytes = match g.format {
        Format::Csv => report.to_csv().into_bytes(),
        Format::Json => (report.to_json() + "\n").into_bytes(),
    };
    emit(out, &bytes)?;
    if let Some(path) = summary {
        io::write_atomic(path, &io::to_json(&report.summary))?;
    }
    if !g.quiet {
        let s = &report.summary;
        info!(
            "{} pairs, mean estimate {:.4}, mean symmetry gap {:.4}, {} sides without evidence",
            s.pairs, s.mean_estimate, s.mean_gap, s.insufficient_evidence
        );
    }
    Ok(())
}
