use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats::{self, BoxStats};
use super::{embed_checked, embedding_distances, par_map, svg, token_similarities};
use super::{TokenEmbeddingProvider, TokenSimilarity};
use crate::error::{Error, Result};
use crate::generate::RunRecord;
use crate::hashing;
use crate::prompt::Strategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSample {
    pub case_id: String,
    pub strategy: Strategy,
    pub call_index: u32,
    pub cls_distance: f64,
    pub mean_distance: f64,
}

impl DistanceSample {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Cls => self.cls_distance,
            Metric::Mean => self.mean_distance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cls,
    Mean,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Cls, Metric::Mean];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cls => "cls",
            Metric::Mean => "mean",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub strategy: Strategy,
    pub metric: Metric,
    pub n: usize,
    pub mean: f64,
    /// Absent when fewer than two samples exist.
    pub ci: Option<(f64, f64)>,
    pub box_stats: BoxStats,
}

/// Densities of every strategy evaluated on one shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub metric: Metric,
    pub grid: Vec<f64>,
    pub densities: Vec<(Strategy, Vec<f64>)>,
}

impl KdeCurve {
    pub fn peak(&self, strategy: Strategy) -> Option<f64> {
        self.densities
            .iter()
            .find(|(s, _)| *s == strategy)
            .and_then(|(_, d)| stats::kde_peak(&self.grid, d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTable {
    pub case_id: String,
    pub strategy: Strategy,
    pub call_index: u32,
    pub rows: Vec<TokenSimilarity>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Ordered by case, strategy, call index.
    pub samples: Vec<DistanceSample>,
    pub summaries: Vec<MetricSummary>,
    pub kde: Vec<KdeCurve>,
    pub token_tables: Vec<TokenTable>,
    /// Encoder inputs that hit the window limit.
    pub truncated_texts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
    pub bandwidth: Option<f64>,
    pub grid_points: usize,
    pub max_in_flight: usize,
    /// Cases that get token tables; empty means every evaluated case.
    pub token_cases: Vec<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            level: stats::DEFAULT_LEVEL,
            resamples: stats::DEFAULT_RESAMPLES,
            seed: 123,
            bandwidth: None,
            grid_points: 256,
            max_in_flight: 4,
            token_cases: Vec::new(),
        }
    }
}

impl EvalReport {
    /// Derives every statistic from `samples`.
    pub fn from_samples(
        mut samples: Vec<DistanceSample>,
        token_tables: Vec<TokenTable>,
        opts: &EvalOptions,
    ) -> Result<EvalReport> {
        for s in &samples {
            for m in Metric::ALL {
                let d = s.get(m);
                if !(0.0..=2.0).contains(&d) {
                    return Err(Error::InvalidParam(format!(
                        "{} distance {d} out of range for {} {} call {}",
                        m, s.case_id, s.strategy, s.call_index
                    )));
                }
            }
        }
        samples.sort_by(|a, b| {
            (&a.case_id, a.strategy, a.call_index).cmp(&(&b.case_id, b.strategy, b.call_index))
        });
        let mut by_strategy: BTreeMap<Strategy, Vec<&DistanceSample>> = BTreeMap::new();
        for s in &samples {
            by_strategy.entry(s.strategy).or_default().push(s);
        }

        let mut summaries = Vec::new();
        let mut kde = Vec::new();
        for metric in Metric::ALL {
            let mut sets = Vec::new();
            for (&strategy, group) in &by_strategy {
                let values: Vec<f64> = group.iter().map(|s| s.get(metric)).collect();
                let ci = if values.len() >= 2 {
                    let seed = hashing::seed_of(&[
                        &opts.seed.to_le_bytes(),
                        strategy.name().as_bytes(),
                        metric.name().as_bytes(),
                    ]);
                    Some(stats::bootstrap_ci(&values, opts.level, opts.resamples, seed)?)
                } else {
                    log::warn!("{strategy} {metric}: one sample, no interval or density");
                    None
                };
                summaries.push(MetricSummary {
                    strategy,
                    metric,
                    n: values.len(),
                    mean: stats::mean(&values),
                    ci,
                    box_stats: stats::box_stats(&values)?,
                });
                if values.len() >= 2 {
                    sets.push((strategy, values));
                }
            }
            kde.push(kde_curve(metric, &sets, opts)?);
        }
        Ok(EvalReport {
            samples,
            summaries,
            kde,
            token_tables,
            truncated_texts: 0,
        })
    }

    pub fn summary(&self, strategy: Strategy, metric: Metric) -> Option<&MetricSummary> {
        self.summaries
            .iter()
            .find(|s| s.strategy == strategy && s.metric == metric)
    }

    pub fn curve(&self, metric: Metric) -> Option<&KdeCurve> {
        self.kde.iter().find(|c| c.metric == metric)
    }
}

fn kde_curve(metric: Metric, sets: &[(Strategy, Vec<f64>)], opts: &EvalOptions) -> Result<KdeCurve> {
    if sets.is_empty() {
        return Ok(KdeCurve {
            metric,
            grid: Vec::new(),
            densities: Vec::new(),
        });
    }
    let h = sets
        .iter()
        .map(|(_, v)| opts.bandwidth.unwrap_or_else(|| stats::scott_bandwidth(v)))
        .fold(0.0, f64::max);
    let all = sets.iter().flat_map(|(_, v)| v.iter().copied());
    let lo = all.clone().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = all.fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let grid = stats::linspace(lo, hi, opts.grid_points.max(2));
    let densities = sets
        .iter()
        .map(|(s, v)| Ok((*s, stats::kde(v, &grid, opts.bandwidth)?)))
        .collect::<Result<_>>()?;
    Ok(KdeCurve {
        metric,
        grid,
        densities,
    })
}

/// Embeds every successful record and its ground truth, then derives the
/// full report. Failed records are ignored.
pub fn evaluate(
    records: &[RunRecord],
    ground_truth: &BTreeMap<String, String>,
    embedder: &dyn TokenEmbeddingProvider,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut ok: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let skipped = records.len() - ok.len();
    if skipped > 0 {
        log::warn!("ignoring {skipped} failed generation records");
    }
    ok.sort_by_key(|r| r.key());

    let cases: Vec<&str> = ok
        .iter()
        .map(|r| r.case_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for c in &cases {
        if !ground_truth.contains_key(*c) {
            return Err(Error::InvalidParam(format!("no ground-truth note for case {c}")));
        }
    }
    let gt_embs: BTreeMap<&str, _> = cases
        .iter()
        .copied()
        .zip(par_map(&cases, opts.max_in_flight, |c| {
            embed_checked(embedder, &ground_truth[*c])
        }))
        .map(|(c, e)| e.map(|e| (c, e)))
        .collect::<Result<_>>()?;

    let wanted: BTreeSet<&str> = if opts.token_cases.is_empty() {
        cases.iter().copied().collect()
    } else {
        opts.token_cases.iter().map(String::as_str).collect()
    };
    let mut first_call: BTreeMap<(&str, Strategy), u32> = BTreeMap::new();
    for r in &ok {
        if wanted.contains(r.case_id.as_str()) {
            first_call.entry((&r.case_id, r.strategy)).or_insert(r.call_index);
        }
    }

    let results = par_map(&ok, opts.max_in_flight, |r| {
        let context = |e: Error| {
            Error::Provider(format!("{} {} call {}: {e}", r.case_id, r.strategy, r.call_index))
        };
        let gt = &gt_embs[r.case_id.as_str()];
        let generated = embed_checked(embedder, &r.generated_text).map_err(context)?;
        let (cls, mean) = embedding_distances(gt, &generated)?;
        let table = if first_call.get(&(r.case_id.as_str(), r.strategy)) == Some(&r.call_index) {
            Some(token_similarities(gt, &generated)?)
        } else {
            None
        };
        Ok::<_, Error>((cls, mean, table, generated.truncated))
    });

    let mut samples = Vec::with_capacity(ok.len());
    let mut tables = Vec::new();
    let mut truncated = gt_embs.values().filter(|e| e.truncated).count();
    for (r, res) in ok.iter().zip(results) {
        let (cls, mean, table, cut) = res?;
        truncated += cut as usize;
        samples.push(DistanceSample {
            case_id: r.case_id.clone(),
            strategy: r.strategy,
            call_index: r.call_index,
            cls_distance: cls,
            mean_distance: mean,
        });
        if let Some(rows) = table {
            tables.push(TokenTable {
                case_id: r.case_id.clone(),
                strategy: r.strategy,
                call_index: r.call_index,
                rows,
            });
        }
    }
    let mut report = EvalReport::from_samples(samples, tables, opts)?;
    report.truncated_texts = truncated;
    Ok(report)
}

/// C `%.6g`: six significant digits, trailing zeros dropped.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{}e{sign}{:02}", trim_fraction(mantissa), exp.abs());
    }
    trim_fraction(&format!("{x:.*}", (5 - exp) as usize)).to_owned()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn file_stem(case_id: &str) -> String {
    case_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Writes the CSV tables and SVG charts; returns the paths written.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let path = out_dir.join("distances.csv");
    let mut w = writer(&path)?;
    w.write_record(["case_id", "strategy", "call_index", "cls_distance", "mean_distance"])?;
    for s in &report.samples {
        w.write_record([
            s.case_id.clone(),
            s.strategy.to_string(),
            s.call_index.to_string(),
            format_real(s.cls_distance),
            format_real(s.mean_distance),
        ])?;
    }
    finish(w, &path)?;
    written.push(path);

    let path = out_dir.join("summary.csv");
    let mut w = writer(&path)?;
    w.write_record(["strategy", "metric", "mean", "ci_low", "ci_high", "median", "q1", "q3"])?;
    for s in &report.summaries {
        let (lo, hi) = match s.ci {
            Some((lo, hi)) => (format_real(lo), format_real(hi)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            s.strategy.to_string(),
            s.metric.to_string(),
            format_real(s.mean),
            lo,
            hi,
            format_real(s.box_stats.median),
            format_real(s.box_stats.q1),
            format_real(s.box_stats.q3),
        ])?;
    }
    finish(w, &path)?;
    written.push(path);

    for metric in Metric::ALL {
        let empty = KdeCurve {
            metric,
            grid: Vec::new(),
            densities: Vec::new(),
        };
        let curve = report.curve(metric).unwrap_or(&empty);
        let path = out_dir.join(format!("kde_{metric}.csv"));
        let mut w = writer(&path)?;
        let mut header = vec!["grid".to_owned()];
        header.extend(curve.densities.iter().map(|(s, _)| s.to_string()));
        w.write_record(&header)?;
        for (i, x) in curve.grid.iter().enumerate() {
            let mut row = vec![format_real(*x)];
            row.extend(curve.densities.iter().map(|(_, d)| format_real(d[i])));
            w.write_record(&row)?;
        }
        finish(w, &path)?;
        written.push(path);

        let path = out_dir.join(format!("kde_{metric}.svg"));
        fs::write(&path, svg::kde_plot(curve)).map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let boxes: Vec<&MetricSummary> =
            report.summaries.iter().filter(|s| s.metric == metric).collect();
        let path = out_dir.join(format!("box_{metric}.svg"));
        fs::write(&path, svg::box_plot(metric, &boxes)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    let mut by_case: BTreeMap<&str, Vec<&TokenTable>> = BTreeMap::new();
    for t in &report.token_tables {
        by_case.entry(&t.case_id).or_default().push(t);
    }
    for (case, tables) in by_case {
        let path = out_dir.join(format!("token_similarity_{}.csv", file_stem(case)));
        let mut w = writer(&path)?;
        w.write_record(["strategy", "call_index", "gt_token", "best_gen_token", "similarity", "band"])?;
        for t in tables {
            for r in &t.rows {
                w.write_record([
                    t.strategy.to_string(),
                    t.call_index.to_string(),
                    r.gt_token.clone(),
                    r.best_gen_token.clone(),
                    format_real(r.similarity),
                    r.band.to_string(),
                ])?;
            }
        }
        finish(w, &path)?;
        written.push(path);
    }
    Ok(written)
}
