//! Aggregate statistics over per-problem result records and run traces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::engines::vote::normalize_answer;
use crate::router::Shape;
use crate::scoring::wilson_ci;
use crate::tools::FinishReason;
use crate::trace::{EventKind, TraceEvent};

/// One row of a results CSV. Identity columns first, the rest alphabetical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub seed: u64,
    pub model: String,
    pub method: String,
    pub domain: String,
    pub problem_id: String,
    pub converged: bool,
    /// Empty for structurally scored (patch) domains.
    pub correct: Option<bool>,
    pub final_answer: Option<String>,
    pub finish_reason: FinishReason,
    pub n_llm_calls: u32,
    pub n_retries: u32,
    pub n_steps: u32,
    pub score: Option<f64>,
    pub shape: Option<Shape>,
    pub tokens_total: u64,
    pub tool: Option<String>,
    pub wall_time_ms: u64,
}

pub const CSV_COLUMNS: [&str; 18] = [
    "run_id",
    "seed",
    "model",
    "method",
    "domain",
    "problem_id",
    "converged",
    "correct",
    "final_answer",
    "finish_reason",
    "n_llm_calls",
    "n_retries",
    "n_steps",
    "score",
    "shape",
    "tokens_total",
    "tool",
    "wall_time_ms",
];

impl ResultRecord {
    /// Key used for resume and pairing.
    pub fn key(&self) -> (String, u64, String) {
        (self.method.clone(), self.seed, self.problem_id.clone())
    }
}

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("empty group")]
    EmptyGroup,
    #[error("no records carry a check verdict")]
    NoVerdicts,
    #[error("problem {problem} in {model}/{method} has {seeds} seeds, need at least {need}")]
    MissingSeeds {
        model: String,
        method: String,
        problem: String,
        seeds: usize,
        need: usize,
    },
    #[error("no paired records")]
    NoPairs,
    #[error("method {method}: model {model} covers a different problem set")]
    InconsistentProblems { method: String, model: String },
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("x has zero variance")]
    DegenerateX,
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

pub fn read_records<R: io::Read>(input: R) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(AnalyticsError::from)).collect()
}

pub fn read_records_path(path: &Path) -> Result<Vec<ResultRecord>> {
    read_records(fs::File::open(path)?)
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn group_by<'a, K: Ord, F: Fn(&ResultRecord) -> K>(
    records: &'a [ResultRecord],
    key: F,
) -> BTreeMap<K, Vec<&'a ResultRecord>> {
    let mut out: BTreeMap<K, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        out.entry(key(r)).or_default().push(r);
    }
    out
}

pub type ModelMethod = (String, String);

fn model_method(r: &ResultRecord) -> ModelMethod {
    (r.model.clone(), r.method.clone())
}

/// Fraction of runs that ended with an answer rather than exhausting their
/// budget, per (model, method).
pub fn convergence_rate(records: &[ResultRecord]) -> Result<BTreeMap<ModelMethod, f64>> {
    if records.is_empty() {
        return Err(AnalyticsError::EmptyGroup);
    }
    Ok(group_by(records, model_method)
        .into_iter()
        .map(|(k, g)| {
            let c = g.iter().filter(|r| r.converged).count();
            (k, c as f64 / g.len() as f64)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CheckVerdict {
    Correct,
    Incorrect,
}

/// Among answers the checker accepted, the fraction that actually scored
/// below 1.0.
pub fn verifier_fp_rate<I>(items: I) -> Result<f64>
where
    I: IntoIterator<Item = (Option<CheckVerdict>, f64)>,
{
    let mut any = false;
    let (mut accepted, mut wrong) = (0usize, 0usize);
    for (v, score) in items {
        let Some(v) = v else { continue };
        any = true;
        if v == CheckVerdict::Correct {
            accepted += 1;
            if score < 1.0 {
                wrong += 1;
            }
        }
    }
    if !any {
        return Err(AnalyticsError::NoVerdicts);
    }
    if accepted == 0 {
        return Ok(0.0);
    }
    Ok(wrong as f64 / accepted as f64)
}

/// Number of fires and, if any fired, the fraction that ended correct.
pub fn reflect_success_rate<I>(items: I) -> (usize, Option<f64>)
where
    I: IntoIterator<Item = (bool, bool)>,
{
    let (mut fires, mut ok) = (0usize, 0usize);
    for (fired, correct) in items {
        if fired {
            fires += 1;
            if correct {
                ok += 1;
            }
        }
    }
    (fires, (fires > 0).then(|| ok as f64 / fires as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StableErrorBase {
    /// Denominator: problems wrong on every seed.
    #[default]
    WrongOnAllSeeds,
    /// Denominator: problems wrong on at least one seed.
    WrongOnAnySeed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StableErrors {
    pub stable: usize,
    pub denominator: usize,
    pub rate: Option<f64>,
}

/// Share of wrong problems that repeat the same wrong answer on every seed.
/// Records without a correctness label are ignored; a missing answer never
/// counts as a repeated one.
pub fn stable_error_rate(
    records: &[ResultRecord],
    min_seeds: usize,
    base: StableErrorBase,
) -> Result<BTreeMap<ModelMethod, StableErrors>> {
    let labelled: Vec<ResultRecord> = records.iter().filter(|r| r.correct.is_some()).cloned().collect();
    if labelled.is_empty() {
        return Err(AnalyticsError::EmptyGroup);
    }
    let mut out = BTreeMap::new();
    for (mm, group) in group_by(&labelled, model_method) {
        let mut per_problem: BTreeMap<&str, Vec<&ResultRecord>> = BTreeMap::new();
        for r in group {
            per_problem.entry(r.problem_id.as_str()).or_default().push(r);
        }
        let (mut stable, mut denom) = (0, 0);
        for (pid, runs) in per_problem {
            let seeds: BTreeSet<u64> = runs.iter().map(|r| r.seed).collect();
            if seeds.len() < min_seeds {
                return Err(AnalyticsError::MissingSeeds {
                    model: mm.0.clone(),
                    method: mm.1.clone(),
                    problem: pid.to_string(),
                    seeds: seeds.len(),
                    need: min_seeds,
                });
            }
            let wrong = runs.iter().filter(|r| r.correct == Some(false)).count();
            let all_wrong = wrong == runs.len();
            let counted = match base {
                StableErrorBase::WrongOnAllSeeds => all_wrong,
                StableErrorBase::WrongOnAnySeed => wrong > 0,
            };
            if !counted {
                continue;
            }
            denom += 1;
            let answers: BTreeSet<Option<String>> = runs
                .iter()
                .map(|r| r.final_answer.as_deref().map(normalize_answer).filter(|a| !a.is_empty()))
                .collect();
            if all_wrong && answers.len() == 1 && answers.iter().next().is_some_and(Option::is_some) {
                stable += 1;
            }
        }
        out.insert(
            mm,
            StableErrors {
                stable,
                denominator: denom,
                rate: (denom > 0).then(|| stable as f64 / denom as f64),
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescueBreak {
    pub pairs: usize,
    pub direct_wrong: usize,
    pub direct_correct: usize,
    pub rescued: usize,
    pub broken: usize,
    pub rescue: Option<f64>,
    pub break_rate: Option<f64>,
    /// rescue / break; `None` when either is undefined or break is zero.
    pub ratio: Option<f64>,
    pub unpaired_direct: usize,
    pub unpaired_harness: usize,
}

/// Pairs records by (model, seed, problem) and measures how often the harness
/// fixes a direct failure versus breaks a direct success.
pub fn rescue_break(direct: &[ResultRecord], harness: &[ResultRecord]) -> Result<RescueBreak> {
    type Key = (String, u64, String);
    let key = |r: &ResultRecord| -> Key { (r.model.clone(), r.seed, r.problem_id.clone()) };
    let d: BTreeMap<Key, bool> = direct
        .iter()
        .filter_map(|r| r.correct.map(|c| (key(r), c)))
        .collect();
    let h: BTreeMap<Key, bool> = harness
        .iter()
        .filter_map(|r| r.correct.map(|c| (key(r), c)))
        .collect();
    let mut out = RescueBreak {
        pairs: 0,
        direct_wrong: 0,
        direct_correct: 0,
        rescued: 0,
        broken: 0,
        rescue: None,
        break_rate: None,
        ratio: None,
        unpaired_direct: d.keys().filter(|k| !h.contains_key(*k)).count(),
        unpaired_harness: h.keys().filter(|k| !d.contains_key(*k)).count(),
    };
    for (k, dc) in &d {
        let Some(hc) = h.get(k) else { continue };
        out.pairs += 1;
        if *dc {
            out.direct_correct += 1;
            if !hc {
                out.broken += 1;
            }
        } else {
            out.direct_wrong += 1;
            if *hc {
                out.rescued += 1;
            }
        }
    }
    if out.pairs == 0 {
        return Err(AnalyticsError::NoPairs);
    }
    out.rescue = (out.direct_wrong > 0).then(|| out.rescued as f64 / out.direct_wrong as f64);
    out.break_rate = (out.direct_correct > 0).then(|| out.broken as f64 / out.direct_correct as f64);
    out.ratio = match (out.rescue, out.break_rate) {
        (Some(r), Some(b)) if b > 0.0 => Some(r / b),
        _ => None,
    };
    Ok(out)
}

/// For each method, `hist[m]` is the number of problems failed by exactly `m`
/// models. A model fails a problem when none of its seeds got it right.
pub fn universal_failure_histogram(records: &[ResultRecord]) -> Result<BTreeMap<String, Vec<usize>>> {
    let labelled: Vec<ResultRecord> = records.iter().filter(|r| r.correct.is_some()).cloned().collect();
    if labelled.is_empty() {
        return Err(AnalyticsError::EmptyGroup);
    }
    let mut out = BTreeMap::new();
    for (method, group) in group_by(&labelled, |r| r.method.clone()) {
        let mut solved: BTreeMap<&str, BTreeMap<&str, bool>> = BTreeMap::new();
        for r in group {
            let e = solved
                .entry(r.model.as_str())
                .or_default()
                .entry(r.problem_id.as_str())
                .or_insert(false);
            *e |= r.correct == Some(true);
        }
        let mut problems: Option<BTreeSet<&str>> = None;
        for (model, per) in &solved {
            let set: BTreeSet<&str> = per.keys().copied().collect();
            match &problems {
                None => problems = Some(set),
                Some(p) if *p != set => {
                    return Err(AnalyticsError::InconsistentProblems {
                        method,
                        model: model.to_string(),
                    })
                }
                _ => {}
            }
        }
        let problems = problems.unwrap_or_default();
        let mut hist = vec![0; solved.len() + 1];
        for pid in problems {
            let failing = solved.values().filter(|per| !per[pid]).count();
            hist[failing] += 1;
        }
        out.insert(method, hist);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostMetrics {
    /// `f64::INFINITY` at zero accuracy.
    pub dollars_per_100_correct: f64,
    pub acc_per_1k_tokens: f64,
}

/// Cost of 100 correct answers at `rate_per_token` dollars, and accuracy
/// points bought per thousand tokens.
pub fn cost_metrics(tokens_per_problem: f64, accuracy_pct: f64, rate_per_token: f64) -> CostMetrics {
    let frac = accuracy_pct / 100.0;
    let dollars = if frac > 0.0 {
        100.0 / frac * tokens_per_problem * rate_per_token
    } else {
        f64::INFINITY
    };
    let per_1k = if tokens_per_problem > 0.0 {
        accuracy_pct / (tokens_per_problem / 1000.0)
    } else {
        0.0
    };
    CostMetrics {
        dollars_per_100_correct: dollars,
        acc_per_1k_tokens: per_1k,
    }
}

/// Blended dollars per token used for cost reporting.
pub const DEFAULT_RATE_PER_TOKEN: f64 = 0.89e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    /// Two-sided; 0 when the points are exactly collinear.
    pub p_value: f64,
    pub n: usize,
}

/// Least-squares line of y on x with Pearson r and a two-sided t-test p value.
pub fn fit_lift_slope(points: &[(f64, f64)]) -> Result<FitResult> {
    let n = points.len();
    if n < 3 {
        return Err(AnalyticsError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(AnalyticsError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r = if syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    };
    let df = nf - 2.0;
    let p = if (1.0 - r * r) <= 0.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(FitResult {
        slope,
        intercept,
        pearson_r: r,
        p_value: p,
        n,
    })
}

/// Published per-model domain accuracies (percent) for the direct baseline
/// and the full harness.
pub const PUBLISHED_CELLS: &str = include_str!("../data/published_cells.csv");

/// Per-model domain cells for one method, as read from a wide table
/// (`method,model,<domain>...`).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTable {
    pub domains: Vec<String>,
    /// (method, model, cells in `domains` order), file order preserved.
    pub rows: Vec<(String, String, Vec<f64>)>,
}

impl DomainTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let domains: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let cells = rec
                .iter()
                .skip(2)
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| AnalyticsError::Io(io::Error::new(io::ErrorKind::InvalidData, e)))?;
            rows.push((rec[0].to_string(), rec[1].to_string(), cells));
        }
        Ok(Self { domains, rows })
    }

    /// Mean of the chosen domain columns for (method, model).
    pub fn mean(&self, method: &str, model: &str, domains: &[&str]) -> Result<Option<f64>> {
        let idx = domains
            .iter()
            .map(|d| {
                self.domains
                    .iter()
                    .position(|x| x == d)
                    .ok_or_else(|| AnalyticsError::UnknownColumn(d.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .rows
            .iter()
            .find(|(m, md, _)| m == method && md == model)
            .map(|(_, _, cells)| idx.iter().map(|&i| cells[i]).sum::<f64>() / idx.len() as f64))
    }

    /// (baseline mean, treatment mean - baseline mean) per model, in the
    /// baseline's row order.
    pub fn lift_points(&self, baseline: &str, treatment: &str, domains: &[&str]) -> Result<Vec<(String, f64, f64)>> {
        let mut out = Vec::new();
        for (method, model, _) in &self.rows {
            if method != baseline {
                continue;
            }
            let b = self.mean(baseline, model, domains)?.expect("row exists");
            if let Some(t) = self.mean(treatment, model, domains)? {
                out.push((model.clone(), b, t - b));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrajectoryMetrics {
    pub thoughts: usize,
    pub actions: usize,
    pub reflections: usize,
    pub has_backtrack: bool,
    pub has_contradiction: bool,
    pub has_final_answer: bool,
    pub malformed_lines: usize,
}

/// Counts by event kind: thought, action and reflection events are tallied;
/// backtrack, contradiction and final_answer events set their flags.
pub fn trajectory_metrics(events: &[TraceEvent]) -> TrajectoryMetrics {
    let mut m = TrajectoryMetrics::default();
    for e in events {
        match e.kind {
            EventKind::Thought => m.thoughts += 1,
            EventKind::Action => m.actions += 1,
            EventKind::Reflection => m.reflections += 1,
            EventKind::Backtrack => m.has_backtrack = true,
            EventKind::Contradiction => m.has_contradiction = true,
            EventKind::FinalAnswer => m.has_final_answer = true,
            _ => {}
        }
    }
    m
}

/// [`trajectory_metrics`] over a JSONL trace; bad lines are skipped and counted.
pub fn trajectory_metrics_jsonl<R: BufRead>(input: R) -> io::Result<TrajectoryMetrics> {
    let (events, skipped) = crate::trace::read_jsonl(input)?;
    let mut m = trajectory_metrics(&events);
    m.malformed_lines = skipped;
    Ok(m)
}

/// Last explicit checker verdict recorded in a trace.
pub fn check_verdict(events: &[TraceEvent]) -> Option<CheckVerdict> {
    events.iter().rev().find_map(|e| {
        e.data
            .as_ref()
            .and_then(|d| d.get("verdict"))
            .and_then(|v| serde_json::from_value::<CheckVerdict>(v.clone()).ok())
    })
}

/// Whether any reflection-type operator or checkpoint fired in a trace.
pub fn reflect_fired(events: &[TraceEvent]) -> bool {
    events
        .iter()
        .any(|e| matches!(e.kind, EventKind::Reflection | EventKind::Operator))
}

/// Accuracy over labelled records, as a fraction.
pub fn accuracy(records: &[&ResultRecord]) -> Option<f64> {
    let labelled: Vec<bool> = records.iter().filter_map(|r| r.correct).collect();
    (!labelled.is_empty()).then(|| labelled.iter().filter(|c| **c).count() as f64 / labelled.len() as f64)
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub rate_per_token: Option<f64>,
    pub stable_base: StableErrorBase,
    /// Directory of `<run_id>/<problem_id>.jsonl` traces, for verdict and
    /// reflection statistics.
    pub traces: Option<PathBuf>,
    /// Baseline method for rescue/break comparisons.
    pub baseline: Option<String>,
}

fn pct(x: Option<f64>) -> String {
    x.map(|v| format!("{:.1}", round1(v * 100.0))).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Trace path for a record under a trace directory.
pub fn trace_path(dir: &Path, r: &ResultRecord) -> PathBuf {
    dir.join(r.run_id.replace([':', '/'], "_")).join(format!("{}.jsonl", r.problem_id))
}

/// Writes accuracy, convergence, cost, verifier, reflection, stable-error
/// and rescue/break tables plus `summary.txt` into `out_dir`.
pub fn write_report(records: &[ResultRecord], out_dir: &Path, opts: &ReportOptions) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(AnalyticsError::EmptyGroup);
    }
    fs::create_dir_all(out_dir)?;
    let rate = opts.rate_per_token.unwrap_or(DEFAULT_RATE_PER_TOKEN);
    let mut files = Vec::new();
    let mut summary = String::new();
    let groups = group_by(records, model_method);

    // Accuracy by domain, with Wilson intervals.
    let mut rows = Vec::new();
    for ((model, method), g) in &groups {
        for (domain, dg) in group_by(&g.iter().map(|r| (*r).clone()).collect::<Vec<_>>(), |r| r.domain.clone()) {
            let n = dg.iter().filter(|r| r.correct.is_some()).count();
            let k = dg.iter().filter(|r| r.correct == Some(true)).count();
            let mean_score = {
                let s: Vec<f64> = dg.iter().filter_map(|r| r.score).collect();
                (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64)
            };
            let (lo, hi) = if n > 0 {
                wilson_ci(k as u64, n as u64, 1.96).map(|(a, b)| (Some(a), Some(b))).unwrap_or((None, None))
            } else {
                (None, None)
            };
            rows.push(vec![
                model.clone(),
                method.clone(),
                domain,
                dg.len().to_string(),
                pct(mean_score),
                pct((n > 0).then(|| k as f64 / n as f64)),
                pct(lo),
                pct(hi),
            ]);
        }
    }
    let p = out_dir.join("accuracy.csv");
    write_csv(&p, &["model", "method", "domain", "n", "mean_score_pct", "accuracy_pct", "ci_low_pct", "ci_high_pct"], &rows)?;
    files.push(p);

    // Convergence.
    let conv = convergence_rate(records)?;
    let mut rows = Vec::new();
    writeln!(summary, "Convergence").ok();
    for ((model, method), g) in &groups {
        let exhausted = g.iter().filter(|r| r.finish_reason == FinishReason::BudgetExhausted).count();
        let rate = conv[&(model.clone(), method.clone())];
        rows.push(vec![model.clone(), method.clone(), g.len().to_string(), exhausted.to_string(), pct(Some(rate))]);
        writeln!(summary, "  {model} / {method}: {}% ({exhausted} exhausted of {})", pct(Some(rate)), g.len()).ok();
    }
    let p = out_dir.join("convergence.csv");
    write_csv(&p, &["model", "method", "n", "exhausted", "converged_pct"], &rows)?;
    files.push(p);

    // Cost and efficiency per method.
    let mut rows = Vec::new();
    writeln!(summary, "Cost").ok();
    for (method, g) in group_by(records, |r| r.method.clone()) {
        let tokens = g.iter().map(|r| r.tokens_total as f64).sum::<f64>() / g.len() as f64;
        let calls = g.iter().map(|r| r.n_llm_calls as f64).sum::<f64>() / g.len() as f64;
        let acc = accuracy(&g).map(|a| a * 100.0);
        let (dollars, per1k) = match acc {
            Some(a) => {
                let c = cost_metrics(tokens, a, rate);
                let d = if c.dollars_per_100_correct.is_finite() {
                    format!("{:.2}", round2(c.dollars_per_100_correct))
                } else {
                    "inf".into()
                };
                (d, format!("{:.1}", round1(c.acc_per_1k_tokens)))
            }
            None => (String::new(), String::new()),
        };
        writeln!(summary, "  {method}: {tokens:.0} tokens/problem, ${dollars} per 100 correct").ok();
        rows.push(vec![
            method,
            format!("{tokens:.0}"),
            format!("{calls:.2}"),
            acc.map(|a| format!("{:.1}", round1(a))).unwrap_or_default(),
            per1k,
            dollars,
        ]);
    }
    let p = out_dir.join("cost.csv");
    write_csv(&p, &["method", "tokens_per_problem", "calls_per_problem", "accuracy_pct", "acc_per_1k_tokens", "dollars_per_100_correct"], &rows)?;
    files.push(p);

    // Stable errors, when enough seeds exist.
    let seeds: BTreeSet<u64> = records.iter().map(|r| r.seed).collect();
    if seeds.len() >= 3 {
        match stable_error_rate(records, 3, opts.stable_base) {
            Ok(map) => {
                let rows: Vec<Vec<String>> = map
                    .into_iter()
                    .map(|((model, method), s)| {
                        vec![model, method, s.stable.to_string(), s.denominator.to_string(), pct(s.rate)]
                    })
                    .collect();
                let p = out_dir.join("stable_errors.csv");
                write_csv(&p, &["model", "method", "stable", "wrong", "stable_pct"], &rows)?;
                files.push(p);
            }
            Err(e) => {
                writeln!(summary, "Stable errors: skipped ({e})").ok();
            }
        }
    }

    // Rescue/break against a baseline.
    if let Some(base) = &opts.baseline {
        let direct: Vec<ResultRecord> = records.iter().filter(|r| &r.method == base).cloned().collect();
        let mut rows = Vec::new();
        for (method, g) in group_by(records, |r| r.method.clone()) {
            if &method == base {
                continue;
            }
            let harness: Vec<ResultRecord> = g.into_iter().cloned().collect();
            if let Ok(rb) = rescue_break(&direct, &harness) {
                rows.push(vec![
                    method,
                    rb.pairs.to_string(),
                    pct(rb.rescue),
                    pct(rb.break_rate),
                    rb.ratio.map(|x| format!("{:.1}", round1(x))).unwrap_or_default(),
                    (rb.unpaired_direct + rb.unpaired_harness).to_string(),
                ]);
            }
        }
        let p = out_dir.join("rescue_break.csv");
        write_csv(&p, &["method", "pairs", "rescue_pct", "break_pct", "ratio", "unpaired"], &rows)?;
        files.push(p);
        if let Ok(hist) = universal_failure_histogram(records) {
            let rows: Vec<Vec<String>> = hist
                .into_iter()
                .flat_map(|(m, h)| {
                    h.into_iter()
                        .enumerate()
                        .map(move |(k, c)| vec![m.clone(), k.to_string(), c.to_string()])
                })
                .collect();
            let p = out_dir.join("failure_histogram.csv");
            write_csv(&p, &["method", "models_failing", "problems"], &rows)?;
            files.push(p);
        }
    }

    // Trace-derived verifier and reflection statistics.
    if let Some(dir) = &opts.traces {
        let mut verdict_rows = Vec::new();
        let mut reflect_rows = Vec::new();
        let mut traj_rows = Vec::new();
        for ((model, method), g) in &groups {
            let mut verdicts = Vec::new();
            let mut fires = Vec::new();
            let mut traj = Vec::new();
            for r in g {
                let Ok(f) = fs::File::open(trace_path(dir, r)) else { continue };
                let (events, _) = crate::trace::read_jsonl(io::BufReader::new(f))?;
                verdicts.push((check_verdict(&events), r.score.unwrap_or(0.0)));
                fires.push((reflect_fired(&events), r.correct == Some(true)));
                traj.push(trajectory_metrics(&events));
            }
            if let Ok(fp) = verifier_fp_rate(verdicts) {
                verdict_rows.push(vec![model.clone(), method.clone(), pct(Some(fp))]);
            }
            let (n, rate) = reflect_success_rate(fires);
            reflect_rows.push(vec![model.clone(), method.clone(), n.to_string(), pct(rate)]);
            if !traj.is_empty() {
                let k = traj.len() as f64;
                let avg = |f: &dyn Fn(&TrajectoryMetrics) -> f64| traj.iter().map(f).sum::<f64>() / k;
                traj_rows.push(vec![
                    model.clone(),
                    method.clone(),
                    format!("{:.1}", avg(&|m| m.thoughts as f64)),
                    format!("{:.1}", avg(&|m| m.reflections as f64)),
                    format!("{:.1}", avg(&|m| m.has_backtrack as u8 as f64 * 100.0)),
                    format!("{:.1}", avg(&|m| m.has_contradiction as u8 as f64 * 100.0)),
                    format!("{:.1}", avg(&|m| m.has_final_answer as u8 as f64 * 100.0)),
                ]);
            }
        }
        for (name, header, rows) in [
            ("verifier_fp.csv", vec!["model", "method", "fp_pct"], verdict_rows),
            ("reflect_success.csv", vec!["model", "method", "fires", "success_pct"], reflect_rows),
            (
                "trajectories.csv",
                vec!["model", "method", "avg_thoughts", "avg_reflections", "backtrack_pct", "contradiction_pct", "final_answer_pct"],
                traj_rows,
            ),
        ] {
            let p = out_dir.join(name);
            write_csv(&p, &header, &rows)?;
            files.push(p);
        }
    }

    let p = out_dir.join("summary.txt");
    fs::write(&p, summary)?;
    files.push(p);
    Ok(files)
}
