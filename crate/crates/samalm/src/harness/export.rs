//! Artifact export: metrics CSV (one row per episode plus a summary row),
//! JSONL logs, and the report loader used by `samalm report`.

use super::{
    episode_social_score, EpisodeOutcome, EpisodeResult, ExperimentConfig, HarnessError,
    MetricsReport, SocialScoreWeights,
};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const METRICS_HEADER: [&str; 13] = [
    "episode",
    "seed",
    "outcome",
    "nav_time_mean",
    "path_length_total",
    "straight_line_total",
    "discomfort_steps",
    "total_robot_steps",
    "requery_count",
    "forced_count",
    "social_score",
    "sr",
    "ss",
];

/// One parsed per-episode CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub seed: u64,
    pub outcome: String,
    pub nav_time_mean: f64,
    pub path_length_total: f64,
    pub straight_line_total: f64,
    pub discomfort_steps: u64,
    pub total_robot_steps: u64,
    pub requery_count: u64,
    pub forced_count: u64,
    pub social_score: f64,
}

/// The parsed summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub sr: f64,
    pub ss: i64,
}

fn outcome_label(outcome: EpisodeOutcome) -> &'static str {
    match outcome {
        EpisodeOutcome::Success => "success",
        EpisodeOutcome::Collision => "collision",
        EpisodeOutcome::Timeout => "timeout",
        EpisodeOutcome::AbortedByBackend => "aborted_by_backend",
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    let mut writer = BufWriter::new(File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| HarnessError::Config(format!("log serialization failed: {e}")))?;
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_metrics_csv(
    path: &Path,
    report: &MetricsReport,
    cfg: &ExperimentConfig,
) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(METRICS_HEADER)?;
    for result in &report.results {
        // Shortest round-trip float formatting keeps the summary exactly
        // recomputable from the rows.
        let ss_e = episode_social_score(result, &cfg.ss_weights);
        writer.write_record([
            result.episode.to_string(),
            result.seed.to_string(),
            outcome_label(result.outcome).to_string(),
            format!("{:.6}", mean(&result.nav_times)),
            format!("{:.6}", result.path_lengths.iter().sum::<f64>()),
            format!("{:.6}", result.straight_line.iter().sum::<f64>()),
            result.discomfort_steps.to_string(),
            result.total_robot_steps.to_string(),
            result.requery_count.to_string(),
            result.forced_count.to_string(),
            ss_e.to_string(),
            String::new(),
            String::new(),
        ])?;
    }
    writer.write_record([
        "summary".to_string(),
        cfg.seed.to_string(),
        format!("{}/{} success", report.successes, report.episodes),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        report.sr.to_string(),
        report.ss.to_string(),
    ])?;
    writer.flush()?;
    Ok(())
}

/// Load the per-episode rows and the summary row back from a metrics CSV.
pub fn load_metrics_rows(path: &Path) -> Result<(Vec<EpisodeRow>, SummaryRow), HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    let mut summary = None;
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or("").to_string();
        if get(0) == "summary" {
            summary = Some(SummaryRow {
                sr: get(11).parse().map_err(|_| HarnessError::Config("bad sr in summary".into()))?,
                ss: get(12).parse().map_err(|_| HarnessError::Config("bad ss in summary".into()))?,
            });
            continue;
        }
        let parse_f = |i: usize| get(i).parse::<f64>().unwrap_or(0.0);
        let parse_u = |i: usize| get(i).parse::<u64>().unwrap_or(0);
        rows.push(EpisodeRow {
            episode: get(0).parse().unwrap_or(0),
            seed: parse_u(1),
            outcome: get(2),
            nav_time_mean: parse_f(3),
            path_length_total: parse_f(4),
            straight_line_total: parse_f(5),
            discomfort_steps: parse_u(6),
            total_robot_steps: parse_u(7),
            requery_count: parse_u(8),
            forced_count: parse_u(9),
            social_score: parse_f(10),
        });
    }
    let summary = summary.ok_or_else(|| HarnessError::Config("metrics.csv has no summary row".into()))?;
    Ok((rows, summary))
}

/// Recompute SR/SS from per-episode rows (the `samalm report` path).
pub fn recompute_from_rows(rows: &[EpisodeRow]) -> SummaryRow {
    if rows.is_empty() {
        return SummaryRow { sr: 0.0, ss: 0 };
    }
    let episodes = rows.len();
    let aborted = rows.iter().filter(|r| r.outcome == "aborted_by_backend").count();
    let successes = rows.iter().filter(|r| r.outcome == "success").count();
    let denominator = if aborted * 10 >= episodes { episodes - aborted } else { episodes };
    let sr = if denominator == 0 { 0.0 } else { 100.0 * successes as f64 / denominator as f64 };
    let ss = (rows.iter().map(|r| r.social_score).sum::<f64>() / episodes as f64).round() as i64;
    SummaryRow { sr, ss }
}

/// Human-readable batch report, used by the CLI.
pub fn write_report(report: &MetricsReport, weights: &SocialScoreWeights, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "episodes: {}", report.episodes)?;
    writeln!(
        out,
        "outcomes: {} success / {} collision / {} timeout / {} aborted",
        report.successes, report.collisions, report.timeouts, report.aborted
    )?;
    writeln!(out, "SR: {:.1}%", report.sr)?;
    writeln!(out, "SS: {}", report.ss)?;
    let _ = weights;
    Ok(())
}
