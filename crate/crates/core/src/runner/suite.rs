use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use thiserror::Error;

use crate::analytics::{ResultRecord, CSV_COLUMNS};
use crate::gateway::{Backend, GatewayError, LiveBackend, ScriptedBackend, ENV_API_KEY};
use crate::problem::{load_problems, IngestError, ProblemInstance};
use crate::prompts::Prompts;
use crate::scoring::score_answer;
use crate::tools::{FinishReason, SolveOutcome};
use crate::trace::write_jsonl;

use super::config::{BackendKind, RunConfig};
use super::drivers::{run_method, Method, Runtime};

pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("existing results file has header {found:?}, expected {expected:?}")]
    Header { found: String, expected: String },
    #[error("backend: {0}")]
    Backend(#[from] GatewayError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteReport {
    pub results: PathBuf,
    pub written: usize,
    pub skipped: usize,
    pub errors: usize,
    /// Jobs left undone because of `max_new_rows`.
    pub remaining: usize,
}

/// Script for one job: `<dir>/<method>/<pid>.s<seed>.jsonl`, then
/// `<dir>/<method>/<pid>.jsonl`, then `<dir>/<pid>.jsonl`.
pub fn find_script(dir: &Path, method: Method, problem_id: &str, seed: u64) -> Option<PathBuf> {
    [
        dir.join(method.as_str()).join(format!("{problem_id}.s{seed}.jsonl")),
        dir.join(method.as_str()).join(format!("{problem_id}.jsonl")),
        dir.join(format!("{problem_id}.jsonl")),
    ]
    .into_iter()
    .find(|p| p.is_file())
}

pub fn trace_file(out: &Path, record: &ResultRecord) -> PathBuf {
    crate::analytics::trace_path(&out.join("traces"), record)
}

struct Job<'a> {
    method: Method,
    seed: u64,
    problem: &'a ProblemInstance,
}

/// Drops a trailing partial line and returns the keys already present.
fn prepare_results(path: &Path) -> Result<HashSet<(String, u64, String)>, SuiteError> {
    let header = CSV_COLUMNS.join(",");
    if !path.exists() {
        fs::write(path, format!("{header}\n"))?;
        return Ok(HashSet::new());
    }
    let bytes = fs::read(path)?;
    let keep = match bytes.iter().rposition(|b| *b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if keep < bytes.len() {
        tracing::warn!(dropped = bytes.len() - keep, "truncating partial last row");
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    if keep == 0 {
        fs::write(path, format!("{header}\n"))?;
        return Ok(HashSet::new());
    }
    let text = String::from_utf8_lossy(&bytes[..keep]);
    let found = text.lines().next().unwrap_or_default();
    if found != header {
        return Err(SuiteError::Header {
            found: found.to_string(),
            expected: header,
        });
    }
    let mut keys = HashSet::new();
    for rec in crate::analytics::read_records(text.as_bytes()).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))? {
        keys.insert(rec.key());
    }
    Ok(keys)
}

fn csv_row(record: &ResultRecord) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(record)?;
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

fn backend_for(cfg: &RunConfig, job: &Job<'_>) -> Result<Box<dyn Backend>, GatewayError> {
    match cfg.backend.kind {
        BackendKind::Scripted => {
            let dir = cfg
                .backend
                .scripts
                .as_deref()
                .ok_or_else(|| GatewayError::NotConfigured("scripted backend needs a scripts directory".into()))?;
            let path = find_script(dir, job.method, &job.problem.problem_id, job.seed).ok_or_else(|| {
                GatewayError::NotConfigured(format!(
                    "no script for {}/{} seed {}",
                    job.method, job.problem.problem_id, job.seed
                ))
            })?;
            Ok(Box::new(ScriptedBackend::from_path(&path)?.with_name(cfg.backend.model.clone())))
        }
        BackendKind::Live => {
            let live = match &cfg.backend.base_url {
                Some(url) => LiveBackend::new(url.clone(), cfg.backend.model.clone(), std::env::var(ENV_API_KEY).ok()),
                None => LiveBackend::from_env()?,
            };
            Ok(Box::new(live.with_seed(Some(job.seed))))
        }
    }
}

fn record_for(cfg: &RunConfig, rt: &Runtime, job: &Job<'_>, result: Result<SolveOutcome, GatewayError>, elapsed_ms: u64) -> (ResultRecord, Option<SolveOutcome>) {
    let p = job.problem;
    let model = cfg.backend.model.clone();
    let base = |finish_reason, answer: Option<String>| ResultRecord {
        run_id: format!("{}:{}:{}", job.method, model, job.seed),
        seed: job.seed,
        model: model.clone(),
        method: job.method.to_string(),
        domain: p.domain_label.clone(),
        problem_id: p.problem_id.clone(),
        converged: false,
        correct: None,
        final_answer: answer,
        finish_reason,
        n_llm_calls: 0,
        n_retries: 0,
        n_steps: 0,
        score: None,
        shape: None,
        tokens_total: 0,
        tool: None,
        wall_time_ms: if cfg.backend.kind == BackendKind::Scripted { 0 } else { elapsed_ms },
    };
    match result {
        Ok(out) => {
            let score = score_answer(out.answer.as_deref(), &p.gold, &rt.swe).value;
            let mut r = base(out.finish_reason, out.answer.clone());
            r.converged = out.converged();
            r.correct = p.gold.has_correctness().then_some(score >= 1.0);
            r.score = Some(score);
            r.n_llm_calls = out.n_llm_calls;
            r.n_retries = out.n_retries;
            r.n_steps = out.n_steps;
            r.shape = out.shape;
            r.tokens_total = out.tokens_total();
            r.tool = Some(out.tool.clone());
            (r, Some(out))
        }
        Err(e) => {
            tracing::warn!(problem = %p.problem_id, method = %job.method, seed = job.seed, error = %e, "run failed");
            let mut r = base(FinishReason::Error, None);
            r.score = Some(0.0);
            r.correct = p.gold.has_correctness().then_some(false);
            (r, None)
        }
    }
}

/// Runs every (method, seed, problem) job not already in the results file,
/// appending rows in job order.
pub fn run_suite(cfg: &RunConfig) -> Result<SuiteReport, SuiteError> {
    let problems: Vec<ProblemInstance> = load_problems(&cfg.problems)?
        .into_iter()
        .filter(|p| cfg.domains.is_empty() || cfg.domains.iter().any(|d| d == &p.domain_label))
        .collect();
    let prompts = match &cfg.prompts_dir {
        Some(dir) => Prompts::with_overrides(dir)?,
        None => Prompts::default(),
    };
    let rt = Runtime::new(prompts, &cfg.tools, cfg.knobs.clone(), cfg.heavyweight.clone(), cfg.layer);

    fs::create_dir_all(&cfg.out)?;
    let results = cfg.out.join(RESULTS_FILE);
    let done = prepare_results(&results)?;

    let mut jobs = Vec::new();
    let mut skipped = 0;
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            for p in &problems {
                if done.contains(&(method.to_string(), seed, p.problem_id.clone())) {
                    skipped += 1;
                } else {
                    jobs.push(Job { method, seed, problem: p });
                }
            }
        }
    }
    let total = jobs.len();
    if let Some(limit) = cfg.max_new_rows {
        jobs.truncate(limit);
    }
    let mut report = SuiteReport {
        results: results.clone(),
        skipped,
        remaining: total - jobs.len(),
        ..SuiteReport::default()
    };

    let mut file = OpenOptions::new().append(true).open(&results)?;
    let next = AtomicUsize::new(0);
    let workers = cfg.workers.clamp(1, jobs.len().max(1));
    let (tx, rx) = mpsc::channel::<(usize, ResultRecord, Option<SolveOutcome>)>();
    let mut write_err: Option<SuiteError> = None;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next, rt) = (&jobs, &next, &rt);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let started = Instant::now();
                let result = backend_for(cfg, job).and_then(|b| run_method(job.method, job.problem, b.as_ref(), rt));
                let (rec, out) = record_for(cfg, rt, job, result, started.elapsed().as_millis() as u64);
                if tx.send((i, rec, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Single writer; rows land in job order whatever order workers finish.
        let mut pending: BTreeMap<usize, (ResultRecord, Option<SolveOutcome>)> = BTreeMap::new();
        let mut cursor = 0;
        for (i, rec, out) in rx {
            pending.insert(i, (rec, out));
            while let Some((rec, out)) = pending.remove(&cursor) {
                cursor += 1;
                if write_err.is_some() {
                    continue;
                }
                let res = (|| -> Result<(), SuiteError> {
                    if let Some(out) = &out {
                        let tpath = trace_file(&cfg.out, &rec);
                        fs::create_dir_all(tpath.parent().expect("trace dir"))?;
                        write_jsonl(fs::File::create(&tpath)?, &out.trace)?;
                    }
                    file.write_all(&csv_row(&rec)?)?;
                    file.flush()?;
                    Ok(())
                })();
                match res {
                    Ok(()) => {
                        report.written += 1;
                        if rec.finish_reason == FinishReason::Error {
                            report.errors += 1;
                        }
                    }
                    Err(e) => {
                        next.store(usize::MAX / 2, Ordering::SeqCst);
                        write_err = Some(e);
                    }
                }
            }
        }
    });
    match write_err {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(dir: &Path) -> RunConfig {
        let problems = [
            r#"{"problem_id":"a","domain":"t","instruction":"2+2?","gold":{"kind":"integer","value":4}}"#,
            r#"{"problem_id":"b","domain":"t","instruction":"3+3?","gold":{"kind":"integer","value":6}}"#,
        ];
        fs::write(dir.join("problems.jsonl"), problems.join("\n")).unwrap();
        let scripts = dir.join("scripts").join("direct");
        fs::create_dir_all(&scripts).unwrap();
        fs::write(scripts.join("a.jsonl"), r#"{"reply":"FINAL ANSWER: 4"}"#).unwrap();
        fs::write(scripts.join("b.s1.jsonl"), r#"{"reply":"FINAL ANSWER: 5"}"#).unwrap();
        fs::write(scripts.join("b.jsonl"), r#"{"reply":"FINAL ANSWER: 6"}"#).unwrap();
        RunConfig {
            problems: dir.join("problems.jsonl"),
            out: dir.join("out"),
            methods: vec![Method::Direct],
            seeds: vec![0, 1],
            workers: 3,
            backend: super::super::config::BackendConfig {
                scripts: Some(dir.join("scripts")),
                ..Default::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn grid_resume_and_script_lookup() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = setup(tmp.path());
        let rep = run_suite(&cfg).unwrap();
        assert_eq!((rep.written, rep.skipped, rep.errors), (4, 0, 0));
        let recs = crate::analytics::read_records_path(&rep.results).unwrap();
        let got: Vec<(u64, &str, Option<bool>)> = recs.iter().map(|r| (r.seed, r.problem_id.as_str(), r.correct)).collect();
        assert_eq!(got, [(0, "a", Some(true)), (0, "b", Some(true)), (1, "a", Some(true)), (1, "b", Some(false))]);
        assert!(trace_file(&cfg.out, &recs[0]).is_file());
        let again = run_suite(&cfg).unwrap();
        assert_eq!((again.written, again.skipped), (0, 4));
    }

    #[test]
    fn interrupted_and_partial_line_resume_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = setup(tmp.path());
        run_suite(&cfg).unwrap();
        let full = fs::read(cfg.out.join(RESULTS_FILE)).unwrap();

        let tmp2 = tempfile::tempdir().unwrap();
        let mut cfg2 = setup(tmp2.path());
        cfg2.max_new_rows = Some(1);
        assert_eq!(run_suite(&cfg2).unwrap().remaining, 3);
        let path = cfg2.out.join(RESULTS_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"direct:scripted:0,0,scri").unwrap();
        cfg2.max_new_rows = None;
        run_suite(&cfg2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), full);
    }

    #[test]
    fn missing_script_becomes_error_row() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = setup(tmp.path());
        cfg.methods = vec![Method::React];
        let rep = run_suite(&cfg).unwrap();
        assert_eq!((rep.written, rep.errors), (4, 4));
        let recs = crate::analytics::read_records_path(&rep.results).unwrap();
        assert!(recs.iter().all(|r| r.finish_reason == FinishReason::Error && !r.converged));
    }
}
