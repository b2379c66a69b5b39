//! Recompute episode statistics from serialized episode CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use safebac::simulate::{episode_stats, metrics_from_stats, EpisodeLog, EpisodeStats, StepRecord};
use safebac::Vector;

use crate::error::{CliError, CliResult};
use crate::run::{EpisodeSummary, MetricsSummary, Summary};

/// Column layout recovered from a header line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub p_x: usize,
    pub p_u: usize,
}

fn count_prefixed(cols: &[&str], prefix: &str) -> usize {
    cols.iter()
        .filter(|c| {
            c.strip_prefix(prefix)
                .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        })
        .count()
}

pub fn layout(path: &Path, header: &[&str]) -> CliResult<Layout> {
    let l = Layout {
        n: count_prefixed(header, "x"),
        m: count_prefixed(header, "u"),
        p_x: count_prefixed(header, "margin_"),
        p_u: count_prefixed(header, "umargin_"),
    };
    let expected = EpisodeLog::csv_header(l.n, l.m, l.p_x, l.p_u);
    if l.n == 0
        || l.m == 0
        || expected
            .iter()
            .map(String::as_str)
            .ne(header.iter().copied())
    {
        return Err(CliError::schema(
            path,
            format!("unexpected header `{}`", header.join(",")),
        ));
    }
    Ok(l)
}

fn parse_f64(path: &Path, line: usize, col: &str, s: &str) -> CliResult<f64> {
    s.parse()
        .map_err(|_| CliError::schema(path, format!("line {line}: `{col}` is not a number: `{s}`")))
}

/// Parses an episode CSV back into step records.
pub fn read_steps(path: &Path) -> CliResult<(Layout, Vec<StepRecord>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_steps(path, &text)
}

pub fn parse_steps(path: &Path, text: &str) -> CliResult<(Layout, Vec<StepRecord>)> {
    if text.trim().is_empty() {
        return Err(CliError::schema(path, "file is empty"));
    }
    if !text.ends_with('\n') {
        return Err(CliError::schema(
            path,
            "file is truncated (no final newline)",
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::schema(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let cols: Vec<&str> = header.iter().map(String::as_str).collect();
    let l = layout(path, &cols)?;
    let mut steps = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| CliError::schema(path, e.to_string()))?;
        let mut it = rec.iter().zip(cols.iter());
        let mut next = || it.next().expect("record length checked by the reader");
        let (s, c) = next();
        let k: usize = s
            .parse()
            .map_err(|_| CliError::schema(path, format!("line {line}: bad `{c}` `{s}`")))?;
        if k != row {
            return Err(CliError::schema(
                path,
                format!("line {line}: step {k} out of sequence, expected {row}"),
            ));
        }
        let mut x = Vector::zeros(l.n);
        for i in 0..l.n {
            let (s, c) = next();
            x[i] = parse_f64(path, line, c, s)?;
        }
        let mut u = Vector::zeros(l.m);
        for i in 0..l.m {
            let (s, c) = next();
            u[i] = parse_f64(path, line, c, s)?;
        }
        let (s, c) = next();
        let stage_cost = parse_f64(path, line, c, s)?;
        let mut margins = Vec::with_capacity(l.p_x);
        for _ in 0..l.p_x {
            let (s, c) = next();
            if !s.is_empty() {
                margins.push(parse_f64(path, line, c, s)?);
            }
        }
        let mut control_margins = Vec::with_capacity(l.p_u);
        for _ in 0..l.p_u {
            let (s, c) = next();
            if !s.is_empty() {
                control_margins.push(parse_f64(path, line, c, s)?);
            }
        }
        let (s, c) = next();
        let segment: usize = s
            .parse()
            .map_err(|_| CliError::schema(path, format!("line {line}: bad `{c}` `{s}`")))?;
        let (s, c) = next();
        let recovering = match s {
            "0" => false,
            "1" => true,
            _ => {
                return Err(CliError::schema(
                    path,
                    format!("line {line}: bad `{c}` `{s}`"),
                ))
            }
        };
        steps.push(StepRecord {
            k,
            x,
            u,
            stage_cost,
            margins,
            control_margins,
            segment,
            recovering,
        });
    }
    if steps.is_empty() {
        return Err(CliError::schema(path, "no steps after the header"));
    }
    Ok((l, steps))
}

/// Run directory of an episode CSV (`<dir>/episodes/<file>.csv`).
fn run_dir(csv: &Path) -> Option<PathBuf> {
    let parent = csv.parent()?;
    if parent.file_name()? == "episodes" {
        parent.parent().map(Path::to_path_buf)
    } else {
        None
    }
}

pub fn load_summary(dir: &Path) -> CliResult<Summary> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::schema(&path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReplay {
    pub file: PathBuf,
    pub stats: EpisodeStats,
    pub stored: EpisodeSummary,
}

impl EpisodeReplay {
    pub fn matches(&self) -> bool {
        self.stats == self.stored.stats()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReplay {
    pub eps_w: f64,
    pub metrics: MetricsSummary,
    pub stored: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayReport {
    Episode(EpisodeReplay),
    Run(Vec<BatchReplay>),
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        match self {
            ReplayReport::Episode(e) => e.matches(),
            ReplayReport::Run(b) => b.iter().all(|b| b.metrics == b.stored),
        }
    }
}

fn replay_episode(dir: &Path, summary: &Summary, rel: &str) -> CliResult<EpisodeReplay> {
    let file = dir.join(rel);
    let stored = summary
        .batches
        .iter()
        .flat_map(|b| b.episodes.iter())
        .find(|e| e.file == rel)
        .cloned()
        .ok_or_else(|| CliError::schema(&file, "episode is not listed in summary.json"))?;
    let (_, steps) = read_steps(&file)?;
    if steps.len() != summary.horizon {
        return Err(CliError::schema(
            &file,
            format!(
                "file is truncated: {} of {} steps",
                steps.len(),
                summary.horizon
            ),
        ));
    }
    let stats = episode_stats(
        &steps,
        summary.gamma,
        summary.converge_tol,
        summary.converge_window,
    );
    Ok(EpisodeReplay {
        file,
        stats,
        stored,
    })
}

/// Replays one episode CSV, or every episode of a run directory.
pub fn replay(target: &Path) -> CliResult<ReplayReport> {
    if target.is_dir() {
        let summary = load_summary(target)?;
        let mut out = Vec::with_capacity(summary.batches.len());
        for b in &summary.batches {
            let mut stats = Vec::with_capacity(b.episodes.len());
            for e in &b.episodes {
                stats.push(replay_episode(target, &summary, &e.file)?.stats);
            }
            out.push(BatchReplay {
                eps_w: b.eps_w,
                metrics: metrics_from_stats(&stats)?.into(),
                stored: b.metrics.clone(),
            });
        }
        return Ok(ReplayReport::Run(out));
    }
    if !target.exists() {
        return Err(CliError::io(
            target,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let dir = run_dir(target).ok_or_else(|| {
        CliError::schema(target, "episode CSVs are replayed from <run>/episodes/")
    })?;
    let summary = load_summary(&dir)?;
    let rel = format!(
        "episodes/{}",
        target
            .file_name()
            .and_then(|f| f.to_str())
            .unwrap_or_default()
    );
    Ok(ReplayReport::Episode(replay_episode(&dir, &summary, &rel)?))
}
