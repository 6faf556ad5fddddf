use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use hrpca::attribution::{self, AttributionOptions, ProjectionStats};
use hrpca::csvio::{self, fmt_real, ScoreRow};
use hrpca::hierarchy::{build_level_chain, LevelDataset};
use hrpca::metrics;
use hrpca::model::{self, LevelModel};
use hrpca::report;
use hrpca::store::{self, ModelBundle};
use hrpca::synth::generate_experiment;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::{
    AttributeArgs, AuditArgs, Cli, Command, DataArgs, EvaluateArgs, FitArgs, Format, GenerateArgs,
    LabelledArgs, ReportArgs,
};

pub const AUDIT_SUMMARY: &str = "audit.csv";
pub const EVALUATION_FILE: &str = "evaluation.csv";

pub fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(args) => generate(cfg, args),
        Command::Fit(args) => fit(&cfg, args),
        Command::Audit(args) => audit(&cfg, args),
        Command::Sweep(args) => sweep(&cfg, args),
        Command::Evaluate(args) => evaluate(&cfg, args),
        Command::Attribute(args) => attribute(&cfg, args),
        Command::Report(args) => report(args),
    }
}

fn matrix_path(dir: &Path, level: &str) -> PathBuf {
    dir.join(format!("{level}.csv"))
}

fn labels_path(dir: &Path, level: &str) -> PathBuf {
    dir.join(format!("{level}.labels.csv"))
}

fn read_level(dir: &Path, level: &str, with_labels: bool) -> Result<LevelDataset> {
    let x = csvio::read_matrix(&matrix_path(dir, level))?.matrix;
    let labels = if with_labels {
        let path = labels_path(dir, level);
        let (ids, labels) = csvio::read_labels(&path)?;
        if ids != x.row_ids() {
            return Err(CliError::Usage(format!(
                "{}: row ids do not match {}",
                path.display(),
                matrix_path(dir, level).display()
            )));
        }
        Some(labels)
    } else {
        None
    };
    Ok(LevelDataset::new(level, x, labels)?)
}

/// Loads the requested levels, either file by file or by rolling up the finest level.
fn load_levels(
    cfg: &ExperimentConfig,
    data: &DataArgs,
    levels: &[String],
    with_labels: bool,
) -> Result<Vec<LevelDataset>> {
    if !data.rollup {
        return levels
            .iter()
            .map(|l| read_level(&data.data, l, with_labels))
            .collect();
    }
    let base = read_level(&data.data, &cfg.hierarchy.levels[0], with_labels)?;
    let chain = build_level_chain(base, &cfg.hierarchy)?;
    levels
        .iter()
        .map(|l| {
            chain
                .iter()
                .find(|d| &d.level_name == l)
                .cloned()
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "level `{l}` is not part of the configured hierarchy"
                    ))
                })
        })
        .collect()
}

fn select_models<'a>(bundle: &'a ModelBundle, level: Option<&str>) -> Result<Vec<&'a LevelModel>> {
    match level {
        Some(name) => bundle
            .model(name)
            .map(|m| vec![m])
            .ok_or_else(|| CliError::Usage(format!("bundle has no level `{name}`"))),
        None => Ok(bundle.models.iter().collect()),
    }
}

fn level_names(models: &[&LevelModel]) -> Vec<String> {
    models.iter().map(|m| m.level_name.clone()).collect()
}

fn created_at() -> Result<DateTime<Utc>> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(raw) => raw
            .trim()
            .parse::<i64>()
            .ok()
            .and_then(|s| DateTime::from_timestamp(s, 0))
            .ok_or_else(|| {
                CliError::Usage(format!("SOURCE_DATE_EPOCH `{raw}` is not a valid epoch"))
            }),
        Err(_) => Ok(Utc::now()),
    }
}

fn generate(mut cfg: ExperimentConfig, args: GenerateArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        cfg.generator.seed = seed;
    }
    let exp = generate_experiment(&cfg.generator, &cfg.hierarchy)?;
    let mut stdout = std::io::stdout().lock();
    for (split, chain) in [("train", &exp.train), ("test", &exp.test)] {
        let dir = args.out.join(split);
        ensure_dir(&dir)?;
        for level in chain {
            let x = &level.matrix;
            csvio::write_matrix(&matrix_path(&dir, &level.level_name), x, None)?;
            let labels = level
                .labels
                .clone()
                .unwrap_or_else(|| vec![false; x.n_rows()]);
            csvio::write_labels(&labels_path(&dir, &level.level_name), x.row_ids(), &labels)?;
            writeln!(
                stdout,
                "{split}/{}.csv  rows={} positives={}",
                level.level_name,
                x.n_rows(),
                level.positives()
            )?;
        }
    }
    Ok(())
}

fn fit(cfg: &ExperimentConfig, args: FitArgs) -> Result<()> {
    let chain = load_levels(cfg, &args.data, &cfg.hierarchy.levels, false)?;
    let models = model::fit_levels(&chain, &cfg.fit)?;
    let levels: serde_json::Map<String, serde_json::Value> = chain
        .iter()
        .map(|d| (d.level_name.clone(), json!({ "rows": d.matrix.n_rows() })))
        .collect();
    let fingerprint = json!({
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "levels": levels,
        "rollup": args.data.rollup,
    });
    let bundle = ModelBundle::new(models, fingerprint, created_at()?);
    if let Some(parent) = args.bundle.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    store::save_bundle(&bundle, &args.bundle)?;
    let mut stdout = std::io::stdout().lock();
    for m in &bundle.models {
        writeln!(
            stdout,
            "{}  rank={} threshold={} hash={}",
            m.level_name,
            m.rank,
            fmt_real(m.threshold),
            &m.content_hash[..12]
        )?;
    }
    Ok(())
}

fn audit(cfg: &ExperimentConfig, args: AuditArgs) -> Result<()> {
    let bundle = store::load_bundle(&args.bundle)?;
    let models = select_models(&bundle, args.level.as_deref())?;
    let data = load_levels(cfg, &args.data, &level_names(&models), false)?;
    ensure_dir(&args.out)?;
    let mut summary = Vec::new();
    for (m, level) in models.iter().zip(&data) {
        let threshold = args.threshold.unwrap_or(m.threshold);
        let dec = model::decompose(m, &level.matrix)?;
        let flags = model::flag(&dec.scores, threshold)?;
        let rows: Vec<ScoreRow> = level
            .matrix
            .row_ids()
            .iter()
            .zip(&dec.scores)
            .zip(&flags)
            .map(|((id, s), f)| ScoreRow {
                row_id: id.clone(),
                score: *s,
                flagged: *f,
            })
            .collect();
        csvio::write_scores(
            &args.out.join(format!("{}.scores.csv", m.level_name)),
            &rows,
        )?;
        csvio::write_matrix(
            &args.out.join(format!("{}.residuals.csv", m.level_name)),
            &dec.sparse,
            None,
        )?;
        let flagged = flags.iter().filter(|f| **f).count();
        summary.push((m.level_name.clone(), threshold, rows.len(), flagged));
    }
    let header = ["level", "threshold", "rows", "flagged"].map(String::from);
    csvio::write_table(
        &args.out.join(AUDIT_SUMMARY),
        &header,
        summary
            .iter()
            .map(|(l, t, n, f)| [l.clone(), fmt_real(*t), n.to_string(), f.to_string()]),
    )?;
    let mut stdout = std::io::stdout().lock();
    for (l, t, n, f) in &summary {
        writeln!(stdout, "{l}  threshold={t:.4} rows={n} flagged={f}")?;
    }
    Ok(())
}

/// Level name, scores and labels.
type ScoredLevel = (String, Vec<f64>, Vec<bool>);

fn scored_levels(
    cfg: &ExperimentConfig,
    data: &DataArgs,
    models: &[&LevelModel],
) -> Result<Vec<ScoredLevel>> {
    let datasets = load_levels(cfg, data, &level_names(models), true)?;
    models
        .iter()
        .zip(datasets)
        .map(|(m, d)| {
            let scores = model::score(m, &d.matrix)?;
            let labels = d.labels.expect("labels were requested");
            Ok((m.level_name.clone(), scores, labels))
        })
        .collect()
}

fn sweep(cfg: &ExperimentConfig, args: LabelledArgs) -> Result<()> {
    let bundle = store::load_bundle(&args.bundle)?;
    let models = select_models(&bundle, args.level.as_deref())?;
    let scored = scored_levels(cfg, &args.data, &models)?;
    ensure_dir(&args.out)?;
    let mut stdout = std::io::stdout().lock();
    for (level, scores, labels) in scored {
        let result = metrics::threshold_sweep(&scores, &labels, None)?;
        csvio::write_sweep(&args.out.join(format!("{level}.sweep.csv")), &result)?;
        writeln!(
            stdout,
            "{level}  points={} best_threshold={:.4} best_f1={:.4}",
            result.points.len(),
            result.best_threshold,
            result.best_f1
        )?;
    }
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig, args: EvaluateArgs) -> Result<()> {
    let bundle = store::load_bundle(&args.bundle)?;
    let models = select_models(&bundle, args.level.as_deref())?;
    let rows = scored_levels(cfg, &args.data, &models)?
        .into_iter()
        .map(|(level, scores, labels)| metrics::evaluate_scores(&level, &scores, &labels))
        .collect::<hrpca::Result<Vec<_>>>()?;
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        csvio::write_evaluation(&out.join(EVALUATION_FILE), &rows)?;
    }
    let mut stdout = std::io::stdout().lock();
    match args.format {
        Format::Table => write!(stdout, "{}", metrics::format_table(&rows))?,
        Format::Csv => {
            writeln!(stdout, "{}", csvio::EVALUATION_HEADER.join(","))?;
            for r in &rows {
                writeln!(
                    stdout,
                    "{},{},{},{},{},{},{},{},{}",
                    r.level,
                    fmt_real(r.threshold),
                    fmt_real(r.precision),
                    fmt_real(r.recall),
                    fmt_real(r.f1),
                    r.confusion.tp,
                    r.confusion.fp,
                    r.confusion.fn_,
                    r.confusion.tn
                )?;
            }
        }
    }
    Ok(())
}

fn training_rows(bundle: &ModelBundle, level: &str) -> Option<usize> {
    bundle.fingerprint["levels"][level]["rows"]
        .as_u64()
        .map(|n| n as usize)
}

fn projection_stats(
    bundle: &ModelBundle,
    m: &LevelModel,
    train: Option<&Path>,
) -> Result<ProjectionStats> {
    if let Some(dir) = train {
        let x = csvio::read_matrix(&matrix_path(dir, &m.level_name))?.matrix;
        return Ok(attribution::reference_stats(m, &x)?);
    }
    let n = training_rows(bundle, &m.level_name).ok_or_else(|| {
        CliError::Usage(format!(
            "bundle does not record training rows for `{}`; pass --train",
            m.level_name
        ))
    })?;
    Ok(attribution::stats_from_spectrum(m, n)?)
}

fn attribute(cfg: &ExperimentConfig, args: AttributeArgs) -> Result<()> {
    let bundle = store::load_bundle(&args.bundle)?;
    let m = match args.level.as_deref() {
        Some(_) => select_models(&bundle, args.level.as_deref())?[0],
        None => bundle
            .models
            .first()
            .ok_or_else(|| CliError::Usage("bundle holds no models".into()))?,
    };
    if !(args.z >= 0.0) || args.top_k == 0 {
        return Err(CliError::Usage(
            "--z must be >= 0 and --top-k at least 1".into(),
        ));
    }
    let window = chrono::Duration::from_std(*args.window)
        .map_err(|_| CliError::Usage(format!("window {} is too large", args.window)))?;
    let events = match &args.changelog {
        Some(path) => csvio::read_changelog(path)?,
        None => Vec::new(),
    };
    let stats = projection_stats(&bundle, m, args.train.as_deref())?;

    let (x, timestamps) = if args.data.rollup {
        let level =
            load_levels(cfg, &args.data, std::slice::from_ref(&m.level_name), false)?.remove(0);
        (level.matrix, None)
    } else {
        let file = csvio::read_matrix(&matrix_path(&args.data.data, &m.level_name))?;
        (file.matrix, file.timestamps)
    };
    let threshold = args.threshold.unwrap_or(m.threshold);
    let scores = model::score(m, &x)?;
    let flags = model::flag(&scores, threshold)?;
    let flagged: Vec<usize> = (0..x.n_rows()).filter(|&i| flags[i]).collect();
    let opts = AttributionOptions {
        z_threshold: args.z,
        top_k: args.top_k,
    };
    let mut records = attribution::attribute_rows(m, &x.select_rows(&flagged)?, &stats, &opts)?;
    if let Some(ts) = &timestamps {
        for (rec, &i) in records.iter_mut().zip(&flagged) {
            rec.timestamp = Some(ts[i]);
        }
    }
    attribution::annotate(&mut records, &events, window)?;
    ensure_dir(&args.out)?;
    csvio::write_attribution(
        &args.out.join(format!("{}.attribution.csv", m.level_name)),
        &records,
    )?;
    let with_mode = records.iter().filter(|r| r.dominant_mode.is_some()).count();
    writeln!(
        std::io::stdout().lock(),
        "{}  flagged={} dominant_mode={} residual_only={}",
        m.level_name,
        records.len(),
        with_mode,
        records.len() - with_mode
    )?;
    Ok(())
}

fn recorded_thresholds(dir: &Path) -> Result<Vec<(String, f64)>> {
    let path = dir.join(AUDIT_SUMMARY);
    let (header, rows) = csvio::read_table(&path)?;
    if header.first().map(String::as_str) != Some("level")
        || header.get(1).map(String::as_str) != Some("threshold")
    {
        return Err(CliError::Usage(format!(
            "{}: not an audit summary",
            path.display()
        )));
    }
    rows.into_iter()
        .map(|r| {
            let t = r[1].parse::<f64>().map_err(|e| {
                CliError::Usage(format!("{}: threshold `{}`: {e}", path.display(), r[1]))
            })?;
            Ok((r[0].clone(), t))
        })
        .collect()
}

fn report(args: ReportArgs) -> Result<()> {
    let levels: Vec<(String, Option<f64>)> = match (&args.level, args.threshold) {
        (Some(level), Some(t)) => vec![(level.clone(), Some(t))],
        _ => {
            let recorded = recorded_thresholds(&args.data)?;
            let mut chosen: Vec<(String, Option<f64>)> = recorded
                .into_iter()
                .filter(|(l, _)| args.level.as_ref().is_none_or(|want| want == l))
                .map(|(l, t)| (l, Some(args.threshold.unwrap_or(t))))
                .collect();
            if chosen.is_empty() {
                if let Some(level) = &args.level {
                    chosen.push((level.clone(), None));
                }
            }
            chosen
        }
    };
    ensure_dir(&args.out)?;
    let mut stdout = std::io::stdout().lock();
    for (level, threshold) in levels {
        let threshold = threshold.ok_or_else(|| {
            CliError::Usage(format!(
                "no threshold recorded for `{level}`; pass --threshold"
            ))
        })?;
        let scores = csvio::read_scores(&args.data.join(format!("{level}.scores.csv")))?;
        let residuals =
            csvio::read_matrix(&args.data.join(format!("{level}.residuals.csv")))?.matrix;
        if residuals
            .row_ids()
            .iter()
            .ne(scores.iter().map(|r| &r.row_id))
        {
            return Err(CliError::Usage(format!(
                "`{level}` scores and residuals cover different rows"
            )));
        }
        let values: Vec<f64> = scores.iter().map(|r| r.score).collect();

        let heatmap = report::heatmap_svg(&residuals, &format!("{level}: residual magnitude |S|"))?;
        let plot = report::score_plot_svg(&values, threshold, &format!("{level}: anomaly scores"))?;
        write_file(
            &args.out.join(format!("{level}.heatmap.svg")),
            heatmap.as_bytes(),
        )?;
        write_file(
            &args.out.join(format!("{level}.scores.svg")),
            plot.as_bytes(),
        )?;

        let magnitudes = hrpca::FeatureMatrix::new(
            residuals.row_ids().to_vec(),
            residuals.col_names().to_vec(),
            residuals.values().iter().map(|v| v.abs()).collect(),
        )?;
        csvio::write_matrix(
            &args.out.join(format!("{level}.heatmap.csv")),
            &magnitudes,
            None,
        )?;
        let header = ["row_id", "index", "score", "threshold", "flagged"].map(String::from);
        csvio::write_table(
            &args.out.join(format!("{level}.scoreplot.csv")),
            &header,
            scores.iter().enumerate().map(|(i, r)| {
                [
                    r.row_id.clone(),
                    i.to_string(),
                    fmt_real(r.score),
                    fmt_real(threshold),
                    if r.score > threshold { "1" } else { "0" }.to_string(),
                ]
            }),
        )?;
        writeln!(
            stdout,
            "{level}  rows={} threshold={threshold:.4}",
            scores.len()
        )?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    Ok(store::write_atomic(path, bytes)?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| hrpca::Error::Storage {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}
