//! Batch front-end for the retrieval-and-rerank workflow: build an index,
//! retrieve BM25 candidates, rerank by posterior query satisfaction, score
//! runs against qrels, inspect the cost ledger, and generate synthetic
//! fixtures. Each subcommand reads an optional TOML config; flags override
//! config values. Exit code 0 on success; failures print one diagnostic
//! line to stderr.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use orlog::config::{BackendKind, RunConfig};
use orlog::eval::{breakdown_csv, evaluate_run, load_qrels, template_breakdown};
use orlog::logic::load_queries;
use orlog::oracle::{ConstantBackend, HttpBackend, MockBackend, OracleBackend, PromptMode};
use orlog::pipeline::{run_pipeline, CostLedger, ScoringOptions};
use orlog::retrieval::{
    import_run, load_corpus, write_run, FieldPolicy, InvertedIndex, ScoredCandidate,
};
use orlog::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "orlog", version, about = "Constraint-aware entity retrieval toolkit")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an inverted-index snapshot from a JSONL corpus.
    Index {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Snapshot output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        field_policy: Option<FieldPolicy>,
        #[arg(long)]
        k1: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
    },
    /// Retrieve top-k BM25 candidates per query into a TREC run file.
    Retrieve {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Rerank candidates by posterior query satisfaction; writes a TREC
    /// run (posterior as score) and a cost-ledger dump.
    Rerank {
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Index snapshot to retrieve candidates from (BM25 arm).
        #[arg(long)]
        index: Option<PathBuf>,
        /// Externally produced base run to rerank instead (import arm).
        #[arg(long)]
        base_run: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        backend: Option<BackendKind>,
        #[arg(long)]
        mock_table: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        constant: Option<f64>,
        #[arg(long)]
        mode: Option<PromptMode>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        context_cap: Option<usize>,
        #[arg(long)]
        suffix: Option<String>,
        #[arg(long)]
        retries: Option<u32>,
        #[arg(long)]
        timeout_ms: Option<u64>,
    },
    /// Score a run against qrels; optionally sign-test against a baseline
    /// run and break deltas down per template.
    Eval {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        qrels: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Query file, needed for the per-template breakdown.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Write the machine-readable report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write per-template deltas as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Average token cost per (query, entity) pair from a ledger dump.
    Cost {
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Generate a seeded synthetic corpus, queries, qrels, and mock
    /// oracle table.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long)]
        queries_per_template: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("orlog: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyError = Box<dyn Error>;

fn require(path: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, AnyError> {
    path.or_else(|| fallback.clone())
        .ok_or_else(|| format!("missing required path: {what}").into())
}

fn run(cli: Cli) -> Result<(), AnyError> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Index {
            corpus,
            out,
            field_policy,
            k1,
            b,
        } => {
            let corpus_path = require(corpus, &config.paths.corpus, "corpus")?;
            let corpus = load_corpus(&corpus_path)?;
            let mut params = config.retriever.params();
            if let Some(k1) = k1 {
                params.k1 = k1;
            }
            if let Some(b) = b {
                params.b = b;
            }
            let policy = field_policy.unwrap_or(config.retriever.field_policy);
            let index = InvertedIndex::build(&corpus, policy, params, None)?;
            index.save(&out)?;
            println!("indexed {} entities -> {}", index.doc_count(), out.display());
        }
        Command::Retrieve {
            index,
            queries,
            out,
            k,
        } => {
            let index = InvertedIndex::load(&require(index, &config.paths.index, "index")?)?;
            let queries = load_queries(&require(queries, &config.paths.queries, "queries")?)?;
            let k = k.unwrap_or(config.retriever.k);
            let mut runs: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
            let mut skipped = 0usize;
            for q in &queries {
                match index.retrieve_topk(&q.raw, k, None) {
                    Ok(cands) => {
                        runs.insert(
                            q.qid.clone(),
                            cands.into_iter().map(|c| (c.entity_id, c.base_score)).collect(),
                        );
                    }
                    Err(e) => {
                        eprintln!("orlog: query {} skipped: {e}", q.qid);
                        skipped += 1;
                    }
                }
            }
            write_run(&out, &runs, |_, _| "bm25".to_string())?;
            println!(
                "retrieved top-{k} for {} queries ({skipped} skipped) -> {}",
                runs.len(),
                out.display()
            );
        }
        Command::Rerank {
            queries,
            corpus,
            index,
            base_run,
            out,
            ledger,
            backend,
            mock_table,
            endpoint,
            constant,
            mode,
            k,
            concurrency,
            context_cap,
            suffix,
            retries,
            timeout_ms,
        } => {
            let queries = load_queries(&require(queries, &config.paths.queries, "queries")?)?;
            let corpus = load_corpus(&require(corpus, &config.paths.corpus, "corpus")?)?;
            let k = k.unwrap_or(config.retriever.k);
            let corpus_ids: HashSet<String> = corpus.iter().map(|e| e.id.clone()).collect();

            let candidates: BTreeMap<String, Vec<ScoredCandidate>> =
                match (index.or(config.paths.index.clone()), base_run.or(config.paths.run.clone())) {
                    (Some(index_path), None) => {
                        let index = InvertedIndex::load(&index_path)?;
                        let mut out = BTreeMap::new();
                        for q in &queries {
                            if let Ok(cands) = index.retrieve_topk(&q.raw, k, None) {
                                out.insert(q.qid.clone(), cands);
                            }
                        }
                        out
                    }
                    (None, Some(run_path)) => import_run(&run_path, k, Some(&corpus_ids))?,
                    (Some(_), Some(_)) => {
                        return Err("give either --index or --base-run, not both".into())
                    }
                    (None, None) => return Err("candidates needed: --index or --base-run".into()),
                };

            let backend_kind = backend.unwrap_or(config.oracle.backend);
            let backend: Box<dyn OracleBackend> = match backend_kind {
                BackendKind::Mock => {
                    let table =
                        require(mock_table, &config.paths.mock_table, "mock_table")?;
                    Box::new(MockBackend::from_tsv(&table)?)
                }
                BackendKind::Constant => {
                    Box::new(ConstantBackend(constant.unwrap_or(config.oracle.constant)))
                }
                BackendKind::Http => {
                    let endpoint = endpoint
                        .or(config.oracle.endpoint.clone())
                        .ok_or("http backend needs --endpoint")?;
                    Box::new(HttpBackend::new(
                        endpoint,
                        retries.unwrap_or(config.oracle.retries),
                        Duration::from_millis(timeout_ms.unwrap_or(config.oracle.timeout_ms)),
                        std::env::var("ORLOG_API_KEY").ok(),
                    )?)
                }
            };

            let mode = mode.unwrap_or(config.oracle.mode);
            let opts = ScoringOptions {
                mode,
                suffix: suffix.unwrap_or_else(|| config.oracle.suffix.clone()),
                context_cap: context_cap.unwrap_or(config.oracle.context_cap),
                concurrency: concurrency.unwrap_or(config.oracle.concurrency),
            };
            let corpus_map: HashMap<String, _> =
                corpus.into_iter().map(|e| (e.id.clone(), e)).collect();
            let output = run_pipeline(&queries, &candidates, &corpus_map, backend.as_ref(), &opts);
            for failure in &output.failures {
                eprintln!("orlog: query {} failed: {}", failure.qid, failure.error);
            }
            output.write_run(&out, mode)?;
            if let Some(ledger_path) = ledger.or(config.paths.ledger.clone()) {
                output.ledger.dump(&ledger_path)?;
            }
            println!(
                "reranked {} queries ({} failed) -> {}",
                output.runs.len(),
                output.failures.len(),
                out.display()
            );
        }
        Command::Eval {
            run,
            qrels,
            baseline,
            queries,
            json,
            csv,
            k,
        } => {
            let qrels = load_qrels(&require(qrels, &config.paths.qrels, "qrels")?)?;
            let k = k.unwrap_or(config.retriever.k);
            let run_path = require(run, &config.paths.run, "run")?;
            let run = ranking_of(&run_path, k)?;
            let report = evaluate_run(&run, &qrels);
            print!("{}", report.to_table(&run_path.display().to_string()));

            let mut report_json = serde_json::json!({ "run": report });
            if let Some(baseline_path) = baseline.or(config.paths.baseline_run.clone()) {
                let base = ranking_of(&baseline_path, k)?;
                let base_report = evaluate_run(&base, &qrels);
                print!("{}", base_report.to_table("baseline"));
                println!("sign tests (run vs baseline, ties discarded):");
                let tests = report.sign_tests_against(&base_report)?;
                for (metric, t) in &tests {
                    println!(
                        "  {metric:<8} p = {:<12.6} wins {} / losses {} / ties {}{}",
                        t.p_value,
                        t.wins_a,
                        t.wins_b,
                        t.ties,
                        if t.all_ties { " (all ties)" } else { "" }
                    );
                }
                report_json["baseline"] = serde_json::to_value(&base_report)?;
                report_json["sign_tests"] = serde_json::to_value(&tests)?;

                if let Some(queries_path) = queries.or(config.paths.queries.clone()) {
                    let queries = load_queries(&queries_path)?;
                    let deltas = template_breakdown(&run, &base, &qrels, &queries)?;
                    println!("per-template mean dP@1 (run - baseline):");
                    for d in &deltas {
                        println!(
                            "  {:<10} n={:<4} dP@1={:+.4}  p={:.6}",
                            d.template, d.query_count, d.mean_delta_p1, d.sign_test.p_value
                        );
                    }
                    if let Some(csv_path) = csv {
                        std::fs::write(&csv_path, breakdown_csv(&deltas))?;
                    }
                    report_json["templates"] = serde_json::to_value(&deltas)?;
                }
            }
            if let Some(json_path) = json {
                std::fs::write(&json_path, serde_json::to_string_pretty(&report_json)?)?;
            }
        }
        Command::Cost { ledger } => {
            let ledger = CostLedger::load(&require(ledger, &config.paths.ledger, "ledger")?)?;
            let pairs = ledger.pairs.len();
            let degraded = ledger.pairs.values().filter(|p| p.degraded).count();
            println!("pairs           {pairs}");
            println!("degraded        {degraded}");
            println!("predicate calls {}", ledger.total_predicate_calls());
            println!("avg tokens/pair {:.2}", ledger.cost_per_pair()?);
        }
        Command::Synth {
            out,
            seed,
            entities,
            queries_per_template,
            noise,
        } => {
            let out = require(out, &config.paths.output_dir, "output dir")?;
            let synth = SynthConfig {
                seed: seed.unwrap_or(config.synth.seed),
                entities: entities.unwrap_or(config.synth.entities),
                queries_per_template: queries_per_template
                    .unwrap_or(config.synth.queries_per_template),
                noise: noise.unwrap_or(config.synth.noise),
            };
            let fixture = generate(&synth)?;
            fixture.write_all(&out)?;
            println!(
                "wrote {} entities, {} queries, mock table with {} rows -> {}",
                fixture.corpus.len(),
                fixture.queries.len(),
                fixture.mock_rows.len(),
                out.display()
            );
        }
    }
    Ok(())
}

// A run file as ranked entity-id lists, truncated to k.
fn ranking_of(path: &PathBuf, k: usize) -> Result<BTreeMap<String, Vec<String>>, AnyError> {
    let imported = import_run(path, k, None)?;
    Ok(imported
        .into_iter()
        .map(|(qid, cands)| (qid, cands.into_iter().map(|c| c.entity_id).collect()))
        .collect())
}
