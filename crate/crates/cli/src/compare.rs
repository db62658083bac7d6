//! Learning-curve comparison across agents and seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crossroads_core::dqn::{EpisodeMetrics, MeanCi};
use crossroads_core::nn::ModelKind;
use serde::Serialize;

use crate::artifacts::{read_manifest, read_metrics, write_atomic};
use crate::error::CliError;
use crate::svg::SvgDoc;

pub const SMOOTHING_WINDOW: usize = 50;
/// Episodes at the end of training summarised by the final scores.
pub const FINAL_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Return,
    Length,
    AvgSpeed,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Return, Metric::Length, Metric::AvgSpeed];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Return => "return",
            Metric::Length => "length",
            Metric::AvgSpeed => "avg_speed",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Metric::Return => "Episode return",
            Metric::Length => "Episode length (decisions)",
            Metric::AvgSpeed => "Average ego speed (m/s)",
        }
    }

    fn of(self, m: &EpisodeMetrics) -> f64 {
        match self {
            Metric::Return => m.episode_return,
            Metric::Length => m.length as f64,
            Metric::AvgSpeed => m.avg_speed,
        }
    }
}

/// Trailing moving average over up to `window` episodes.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentComparison {
    pub agent: ModelKind,
    pub seeds: Vec<u64>,
    pub curves: BTreeMap<Metric, Vec<CurvePoint>>,
    /// Across-seed mean and interval of each seed's mean over the final episodes.
    pub finals: BTreeMap<Metric, MeanCi>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub episodes: usize,
    pub agents: Vec<AgentComparison>,
    pub warnings: Vec<String>,
}

impl ComparisonReport {
    pub fn agent(&self, kind: ModelKind) -> Option<&AgentComparison> {
        self.agents.iter().find(|a| a.agent == kind)
    }

    pub fn final_mean(&self, kind: ModelKind, metric: Metric) -> Option<f64> {
        self.agent(kind).map(|a| a.finals[&metric].mean)
    }
}

/// One completed run as seen by the comparison.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub agent: ModelKind,
    pub seed: u64,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Pure comparison of metric streams; runs are truncated to their common length.
pub fn compare_runs(runs: &[RunMetrics]) -> Result<ComparisonReport, CliError> {
    if runs.len() < 2 {
        return Err(CliError::Usage("comparison needs at least two runs".into()));
    }
    let episodes = runs.iter().map(|r| r.metrics.len()).min().unwrap_or(0);
    if episodes == 0 {
        return Err(CliError::Usage("a run has no episodes".into()));
    }
    let mut warnings = Vec::new();
    if runs.iter().any(|r| r.metrics.len() != episodes) {
        warnings.push(format!(
            "runs have different episode counts; truncating to the common {episodes} episodes"
        ));
    }
    let mut groups: BTreeMap<&str, Vec<&RunMetrics>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.agent.name()).or_default().push(r);
    }
    let mut agents = Vec::new();
    for group in groups.values() {
        let mut group = group.clone();
        group.sort_by_key(|r| r.seed);
        let mut curves = BTreeMap::new();
        let mut finals = BTreeMap::new();
        for metric in Metric::ALL {
            let series: Vec<Vec<f64>> = group
                .iter()
                .map(|r| r.metrics[..episodes].iter().map(|m| metric.of(m)).collect())
                .collect();
            let smoothed: Vec<Vec<f64>> = series.iter().map(|s| smooth(s, SMOOTHING_WINDOW)).collect();
            let points = (0..episodes)
                .map(|e| {
                    let ci = MeanCi::from_samples(&smoothed.iter().map(|s| s[e]).collect::<Vec<_>>());
                    CurvePoint {
                        episode: e,
                        mean: ci.mean,
                        low: ci.low(),
                        high: ci.high(),
                    }
                })
                .collect();
            curves.insert(metric, points);
            let tail = episodes.saturating_sub(FINAL_WINDOW);
            let per_seed: Vec<f64> = series
                .iter()
                .map(|s| s[tail..].iter().sum::<f64>() / (episodes - tail) as f64)
                .collect();
            finals.insert(metric, MeanCi::from_samples(&per_seed));
        }
        agents.push(AgentComparison {
            agent: group[0].agent,
            seeds: group.iter().map(|r| r.seed).collect(),
            curves,
            finals,
        });
    }
    Ok(ComparisonReport {
        episodes,
        agents,
        warnings,
    })
}

pub fn agent_colour(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Fcn => "#4e79a7",
        ModelKind::Cnn => "#f28e2b",
        ModelKind::EgoAttention => "#59a14f",
    }
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| lo + (hi - lo) * i as f64 / count as f64).collect()
}

/// Line chart of one metric: across-seed mean with its confidence band per agent.
pub fn chart_svg(report: &ComparisonReport, metric: Metric) -> String {
    let (w, h) = (820.0, 460.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for a in &report.agents {
        for p in &a.curves[&metric] {
            lo = lo.min(p.low);
            hi = hi.max(p.high);
        }
    }
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let last = report.episodes.saturating_sub(1).max(1) as f64;
    let sx = |e: f64| left + pw * e / last;
    let sy = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut doc = SvgDoc::new(w, h);
    doc.rect(0.0, 0.0, w, h, "white");
    doc.text((left + pw / 2.0, 24.0), 16.0, "middle", metric.title());
    for v in nice_ticks(lo, hi, 5) {
        doc.line((left, sy(v)), (left + pw, sy(v)), "#e0e0e0", 1.0, "");
        doc.text((left - 8.0, sy(v) + 4.0), 11.0, "end", &format!("{v:.2}"));
    }
    for e in nice_ticks(0.0, last, 5) {
        doc.text((sx(e), top + ph + 18.0), 11.0, "middle", &format!("{e:.0}"));
    }
    doc.line((left, top + ph), (left + pw, top + ph), "#333333", 1.0, "");
    doc.line((left, top), (left, top + ph), "#333333", 1.0, "");
    doc.text((left + pw / 2.0, h - 12.0), 12.0, "middle", "episode");

    for (i, a) in report.agents.iter().enumerate() {
        let colour = agent_colour(a.agent);
        let pts = &a.curves[&metric];
        let mut band: Vec<(f64, f64)> = pts.iter().map(|p| (sx(p.episode as f64), sy(p.high))).collect();
        band.extend(pts.iter().rev().map(|p| (sx(p.episode as f64), sy(p.low))));
        doc.polygon(&band, colour, r#" fill-opacity="0.18""#);
        let line: Vec<(f64, f64)> = pts.iter().map(|p| (sx(p.episode as f64), sy(p.mean))).collect();
        doc.polyline(&line, colour, 1.8, "");
        let ly = top + 20.0 + 22.0 * i as f64;
        doc.line((left + pw + 15.0, ly), (left + pw + 40.0, ly), colour, 3.0, "");
        doc.text(
            (left + pw + 46.0, ly + 4.0),
            12.0,
            "start",
            &format!("{} ({} seeds)", a.agent, a.seeds.len()),
        );
    }
    doc.finish()
}

fn curves_csv(report: &ComparisonReport) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::io("comparison.csv", e);
    w.write_record(["agent", "metric", "episode", "mean", "ci_low", "ci_high", "seeds"])
        .map_err(err)?;
    for a in &report.agents {
        for (metric, pts) in &a.curves {
            for p in pts {
                w.write_record([
                    a.agent.name().to_string(),
                    metric.name().to_string(),
                    p.episode.to_string(),
                    p.mean.to_string(),
                    p.low.to_string(),
                    p.high.to_string(),
                    a.seeds.len().to_string(),
                ])
                .map_err(err)?;
            }
        }
    }
    w.into_inner().map_err(|e| CliError::io("comparison.csv", e))
}

fn summary_csv(report: &ComparisonReport) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::io("summary.csv", e);
    w.write_record(["agent", "seeds", "metric", "final_mean", "final_ci_half_width"])
        .map_err(err)?;
    for a in &report.agents {
        for (metric, ci) in &a.finals {
            w.write_record([
                a.agent.name().to_string(),
                a.seeds.len().to_string(),
                metric.name().to_string(),
                ci.mean.to_string(),
                ci.half_width.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| CliError::io("summary.csv", e))
}

pub fn load_run(dir: &Path) -> Result<RunMetrics, CliError> {
    let manifest = read_manifest(dir)?;
    Ok(RunMetrics {
        agent: manifest.agent,
        seed: manifest.seed,
        metrics: read_metrics(dir)?,
    })
}

/// Compares run directories and writes `comparison.csv`, `summary.csv` and one chart
/// per metric into `out`.
pub fn cmd_compare(run_dirs: &[PathBuf], out: &Path) -> Result<ComparisonReport, CliError> {
    let runs = run_dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
    let report = compare_runs(&runs)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_atomic(&out.join("comparison.csv"), &curves_csv(&report)?)?;
    write_atomic(&out.join("summary.csv"), &summary_csv(&report)?)?;
    for metric in Metric::ALL {
        write_atomic(&out.join(format!("{}.svg", metric.name())), chart_svg(&report, metric).as_bytes())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(agent: ModelKind, seed: u64, returns: &[f64]) -> RunMetrics {
        RunMetrics {
            agent,
            seed,
            metrics: returns
                .iter()
                .enumerate()
                .map(|(i, r)| EpisodeMetrics {
                    episode: i,
                    episode_return: *r,
                    length: 5,
                    avg_speed: 6.0,
                    epsilon: 1.0,
                    mean_loss: None,
                })
                .collect(),
        }
    }

    #[test]
    fn trailing_average() {
        assert_eq!(smooth(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(smooth(&[2.0; 3], 50), vec![2.0; 3]);
    }

    #[test]
    fn single_seed_has_zero_width() {
        let r = compare_runs(&[run(ModelKind::Fcn, 0, &[1.0, 0.0, 1.0]), run(ModelKind::Cnn, 0, &[0.0; 3])]).unwrap();
        for a in &r.agents {
            for p in &a.curves[&Metric::Return] {
                assert_eq!(p.low, p.high);
            }
        }
    }

    #[test]
    fn identical_files_give_identical_curves() {
        let xs = [1.0, -5.0, 0.0, 3.0];
        let r = compare_runs(&[run(ModelKind::Fcn, 0, &xs), run(ModelKind::Fcn, 1, &xs)]).unwrap();
        let a = &r.agents[0];
        let expected = smooth(&xs, SMOOTHING_WINDOW);
        for (p, e) in a.curves[&Metric::Return].iter().zip(expected) {
            assert_eq!(p.mean, e);
            assert_eq!(p.low, p.high);
        }
        assert_eq!(a.finals[&Metric::Return].mean, -0.25);
    }

    #[test]
    fn mismatched_lengths_truncate_with_warning() {
        let r = compare_runs(&[run(ModelKind::Fcn, 0, &[1.0; 5]), run(ModelKind::EgoAttention, 0, &[0.0; 3])]).unwrap();
        assert_eq!(r.episodes, 3);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.agents.iter().all(|a| a.curves[&Metric::Length].len() == 3));
    }

    #[test]
    fn chart_is_valid_xml() {
        let r = compare_runs(&[run(ModelKind::Fcn, 0, &[1.0, 2.0]), run(ModelKind::Fcn, 1, &[0.0, 2.0])]).unwrap();
        let svg = chart_svg(&r, Metric::Return);
        roxmltree::Document::parse(&svg).unwrap();
    }
}
