use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use reflect_core::analytics::{
    self, fit_lift_slope, read_records_path, write_report, DomainTable, ReportOptions, StableErrorBase,
};
use reflect_core::problem::load_problems;
use reflect_core::router::{Classifier, Layer, ToolRegistry};
use reflect_core::runner::{run_suite, Method, RunConfig};
use reflect_core::scoring::{score_answer, SweScorerConfig};
use reflect_core::trace::read_jsonl;

#[derive(Parser)]
#[command(name = "reflect", version, about = "Shape-routed reasoning harness and evaluation runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum StableBase {
    All,
    Any,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a suite described by a TOML config, resuming any existing results.
    Run {
        config: PathBuf,
        /// Restrict to these methods (repeatable).
        #[arg(long = "method")]
        methods: Vec<Method>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        layer: Option<Layer>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after this many new rows.
        #[arg(long)]
        max_rows: Option<usize>,
    },
    /// Re-score a results CSV against the problem golds.
    Score {
        csv: PathBuf,
        #[arg(long)]
        problems: PathBuf,
    },
    /// Write aggregate tables for a results CSV.
    Analyze {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trace directory (defaults to `traces/` next to the CSV when present).
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Baseline method for rescue/break tables.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, value_enum, default_value = "all")]
        stable_base: StableBase,
        /// Dollars per token for cost columns.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Fit harness lift against baseline accuracy across models.
    Fit {
        /// Wide `method,model,<domain>...` table; defaults to the bundled cells.
        #[arg(long)]
        cells: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        domains: Vec<String>,
        #[arg(long, default_value = "direct")]
        baseline: String,
        #[arg(long, default_value = "full")]
        treatment: String,
    },
    /// Print the shape and tool chosen for each problem.
    Classify {
        problems: PathBuf,
        #[arg(long, default_value = "full")]
        layer: Layer,
        /// Also print the feature vector.
        #[arg(long)]
        features: bool,
    },
    /// Summarize a per-problem trace file.
    Trace {
        trace: PathBuf,
        /// Print every event.
        #[arg(long)]
        events: bool,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Run {
            config,
            methods,
            seeds,
            layer,
            workers,
            out,
            max_rows,
        } => {
            let mut cfg = RunConfig::load(&config).map_err(|e| anyhow::anyhow!("{}: {e}", config.display()))?;
            if !methods.is_empty() {
                cfg.methods = methods;
            }
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            if layer.is_some() {
                cfg.layer = layer;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if max_rows.is_some() {
                cfg.max_new_rows = max_rows;
            }
            let rep = run_suite(&cfg)?;
            println!(
                "{}: {} written, {} skipped, {} errors, {} remaining",
                rep.results.display(),
                rep.written,
                rep.skipped,
                rep.errors,
                rep.remaining
            );
        }
        Cmd::Score { csv, problems } => score(&csv, &problems)?,
        Cmd::Analyze {
            csv,
            out,
            traces,
            baseline,
            stable_base,
            rate,
        } => {
            let records = read_records_path(&csv)?;
            let traces = traces.or_else(|| {
                let d = csv.parent().unwrap_or(Path::new(".")).join("traces");
                d.is_dir().then_some(d)
            });
            let opts = ReportOptions {
                rate_per_token: rate,
                stable_base: match stable_base {
                    StableBase::All => StableErrorBase::WrongOnAllSeeds,
                    StableBase::Any => StableErrorBase::WrongOnAnySeed,
                },
                traces,
                baseline,
            };
            for f in write_report(&records, &out, &opts)? {
                println!("{}", f.display());
            }
        }
        Cmd::Fit {
            cells,
            domains,
            baseline,
            treatment,
        } => {
            let text = match cells {
                Some(p) => std::fs::read_to_string(&p).with_context(|| p.display().to_string())?,
                None => analytics::PUBLISHED_CELLS.to_string(),
            };
            let table = DomainTable::parse(&text)?;
            let domains: Vec<&str> = if domains.is_empty() {
                table.domains.iter().map(String::as_str).collect()
            } else {
                domains.iter().map(String::as_str).collect()
            };
            let points = table.lift_points(&baseline, &treatment, &domains)?;
            println!("model,baseline,lift");
            for (model, b, lift) in &points {
                println!("{model},{b:.2},{lift:.2}");
            }
            let xy: Vec<(f64, f64)> = points.iter().map(|(_, b, l)| (*b, *l)).collect();
            let fit = fit_lift_slope(&xy)?;
            println!(
                "slope {:.3}  intercept {:.2}  r {:.3}  p {:.4}  n {}",
                fit.slope, fit.intercept, fit.pearson_r, fit.p_value, fit.n
            );
        }
        Cmd::Classify {
            problems,
            layer,
            features,
        } => {
            let classifier = Classifier::default();
            let registry = ToolRegistry::new(layer);
            for p in load_problems(&problems)? {
                let f = classifier.features(&p);
                let shape = classifier.shape_of(&f);
                if features {
                    println!(
                        "{}\t{}\t{}\t{}\t{}",
                        p.problem_id,
                        p.domain_label,
                        shape,
                        registry.tool_for(shape),
                        serde_json::to_string(&f)?
                    );
                } else {
                    println!("{}\t{}\t{}\t{}", p.problem_id, p.domain_label, shape, registry.tool_for(shape));
                }
            }
        }
        Cmd::Trace { trace, events } => {
            let (evs, skipped) = read_jsonl(BufReader::new(File::open(&trace).with_context(|| trace.display().to_string())?))?;
            if events {
                for e in &evs {
                    println!("{}", serde_json::to_string(e)?);
                }
            }
            let m = analytics::trajectory_metrics(&evs);
            println!("{}", serde_json::to_string_pretty(&m)?);
            if let Some(v) = analytics::check_verdict(&evs) {
                println!("check verdict: {v:?}");
            }
            if skipped > 0 {
                eprintln!("{skipped} malformed lines skipped");
            }
        }
    }
    Ok(())
}

fn score(csv: &Path, problems: &Path) -> Result<()> {
    let golds: BTreeMap<String, _> = load_problems(problems)?
        .into_iter()
        .map(|p| (p.problem_id.clone(), p.gold))
        .collect();
    let swe = SweScorerConfig::default();
    let mut groups: BTreeMap<(String, String, String), (usize, usize, f64)> = BTreeMap::new();
    for r in read_records_path(csv)? {
        let Some(gold) = golds.get(&r.problem_id) else {
            bail!("problem {:?} is not in {}", r.problem_id, problems.display());
        };
        let s = score_answer(r.final_answer.as_deref(), gold, &swe).value;
        let g = groups.entry((r.model, r.method, r.domain)).or_default();
        g.0 += 1;
        g.1 += usize::from(gold.has_correctness() && s >= 1.0);
        g.2 += s;
    }
    println!("model,method,domain,n,correct,mean_score");
    for ((model, method, domain), (n, k, total)) in groups {
        println!("{model},{method},{domain},{n},{k},{:.3}", total / n as f64);
    }
    Ok(())
}
