//! `cascade`: run the whole pipeline or any single stage.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 backend error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use cascade_core::backends::mock::{ChrfScorer, OracleAsr, OracleLlm, TableMt};
use cascade_core::backends::server::{asr_handler, llm_handler, mt_handler, scorer_handler, MockServer};
use cascade_core::backends::Backends;
use cascade_core::config::{validate_config, BackendMode};
use cascade_core::corpus::{load_corpus, read_jsonl, save_corpus, write_jsonl};
use cascade_core::docape::WordPunctCounter;
use cascade_core::longform::plan_chunks;
use cascade_core::metrics::evaluate;
use cascade_core::model::NBestList;
use cascade_core::pipeline::{self, RunOptions};
use cascade_core::refine::{BatchStatus, RefinementResult};
use cascade_core::synth::{self, make_ape_sft, make_asr_sft};
use cascade_core::{Error, PipelineConfig};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Cascaded speech translation toolkit")]
struct Cli {
    /// TOML configuration; absent keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use reference-echoing mock backends built from this corpus.
    #[arg(long, global = true, value_name = "CORPUS")]
    oracle: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode audio into N-best lists, per gold segment or long-form.
    Transcribe(TranscribeArgs),
    /// Rewrite each N-best list into one transcript with the LLM.
    RefineAsr(RefineArgs),
    /// Split refined transcripts into sentences.
    Segment(SegmentArgs),
    /// Translate every sentence.
    Translate(InOut),
    /// Post-edit translations document by document.
    DocApe(DocApeArgs),
    /// Emit fine-tuning datasets.
    SynthData(SynthArgs),
    /// Score hypotheses against references.
    Eval(EvalArgs),
    /// Print the chunk spans for a recording of the given length.
    PlanChunks(PlanArgs),
    /// Run every stage into one directory and write a manifest.
    Run(RunArgs),
    /// Check a run directory against its manifest.
    Verify {
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a mock backend over HTTP until killed.
    ServeMock(ServeArgs),
}

#[derive(Args)]
struct TranscribeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Stitch trace, one record per chunk joint.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    long_form: bool,
    #[arg(long)]
    chunk_s: Option<f64>,
    #[arg(long)]
    overlap_s: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    nbest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Corpus the transcripts belong to; supplies talk order and metadata.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    nbest: PathBuf,
    #[arg(long)]
    refined: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Extra abbreviations, one per line.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct InOut {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DocApeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    payload: Option<usize>,
    /// Run report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthTask {
    Asr,
    Ape,
}

#[derive(Args)]
struct SynthArgs {
    task: SynthTask,
    /// N-best JSONL for `asr`, corpus for `ape`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    /// The N-best lists come from an ASR model that never saw these utterances.
    #[arg(long)]
    held_out: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Realign hypotheses whose sentence count differs from the reference.
    #[arg(long, overrides_with = "no_resegment")]
    resegment: bool,
    #[arg(long)]
    no_resegment: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    duration: f64,
    #[arg(long, default_value_t = 30.0)]
    chunk: f64,
    #[arg(long, default_value_t = 10.0)]
    overlap: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_llm_refine: bool,
    #[arg(long)]
    long_form: bool,
    /// Record per-stage wall-clock time in the manifest.
    #[arg(long)]
    timings: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MockKind {
    Asr,
    Mt,
    Llm,
    Scorer,
}

#[derive(Args)]
struct ServeArgs {
    kind: MockKind,
    /// Corpus the oracle answers from.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "127.0.0.1:0")]
    addr: String,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 1,
            e if e.is_backend() => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env();
    if cli.oracle.is_some() {
        cfg.backend = BackendMode::Oracle;
    }
    Ok(cfg)
}

/// Backends for a stage. Oracle mocks answer from `--oracle`, falling back
/// to the stage's own corpus when it has one.
fn backends(cli: &Cli, cfg: &PipelineConfig, stage_corpus: Option<&Path>) -> Result<Backends, Error> {
    match cfg.backend {
        BackendMode::Http => Ok(Backends::http(cfg)?),
        BackendMode::Oracle => {
            let source = cli.oracle.as_deref().or(stage_corpus).ok_or_else(|| {
                Error::Config("oracle backends need --oracle <CORPUS> for this command".into())
            })?;
            Ok(Backends::oracle(&load_corpus(source)?, cfg))
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Transcribe(a) => {
            cfg.long_form |= a.long_form;
            if let Some(v) = a.chunk_s {
                cfg.chunk_s = v;
            }
            if let Some(v) = a.overlap_s {
                cfg.overlap_s = v;
            }
            if let Some(k) = a.k {
                cfg.nbest_k = k;
            }
            let cfg = validate_config(cfg)?;
            let talks = load_corpus(&a.corpus)?;
            let b = backends(cli, &cfg, Some(&a.corpus))?;
            let t = pipeline::transcribe(&talks, b.asr.as_ref(), &cfg)?;
            write_jsonl(&a.out, &t.lists)?;
            if let Some(trace) = &a.trace {
                write_jsonl(trace, &t.joints)?;
            }
            info!("{} utterances, {} joints", t.lists.len(), t.joints.len());
        }
        Command::RefineAsr(a) => {
            if let Some(k) = a.k {
                cfg.nbest_k = k;
            }
            let cfg = validate_config(cfg)?;
            let lists: Vec<NBestList> = read_jsonl(&a.nbest)?;
            let b = backends(cli, &cfg, None)?;
            let r = pipeline::refine(&lists, b.llm.as_ref(), &cfg)?;
            write_jsonl(&a.out, &r.results)?;
            eprintln!(
                "refined {} fallback {} failed {} skipped {}",
                r.summary.refined, r.summary.fallback, r.summary.failed, r.skipped
            );
            if r.summary.status == BatchStatus::Partial {
                warn!("some utterances failed and kept their rank-1 hypothesis");
            }
        }
        Command::Segment(a) => {
            if let Some(r) = &a.rules {
                cfg.rules_file = Some(r.display().to_string());
            }
            let cfg = validate_config(cfg)?;
            let talks = load_corpus(&a.corpus)?;
            let lists: Vec<NBestList> = read_jsonl(&a.nbest)?;
            let refined: Vec<RefinementResult> = read_jsonl(&a.refined)?;
            let rules = pipeline::load_rules(&cfg)?;
            let punctuator = backends(cli, &cfg, Some(&a.corpus))?.punctuator;
            let out = pipeline::segment(&talks, &lists, &refined, &rules, punctuator.as_deref())?;
            save_corpus(&out, &a.out)?;
        }
        Command::Translate(a) => {
            let cfg = validate_config(cfg)?;
            let talks = load_corpus(&a.input)?;
            let b = backends(cli, &cfg, None)?;
            save_corpus(&pipeline::translate(&talks, b.mt.as_ref(), &cfg)?, &a.out)?;
        }
        Command::DocApe(a) => {
            if let Some(v) = a.budget {
                cfg.token_budget = v;
            }
            if let Some(v) = a.payload {
                cfg.payload_sentences = v;
            }
            let cfg = validate_config(cfg)?;
            let talks = load_corpus(&a.input)?;
            let b = backends(cli, &cfg, None)?;
            let (out, report) = pipeline::postedit(&talks, b.llm.as_ref(), &cfg)?;
            save_corpus(&out, &a.out)?;
            if let Some(p) = &a.report {
                pipeline::write_json(p, &report)?;
            }
            eprintln!(
                "chunks {} postedited {} fallbacks {} mismatches {}",
                report.chunks, report.postedited, report.fallbacks, report.mismatches
            );
        }
        Command::SynthData(a) => {
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(k) = a.k {
                cfg.nbest_k = k;
            }
            let cfg = validate_config(cfg)?;
            let records = match a.task {
                SynthTask::Asr => {
                    let lists: Vec<NBestList> = read_jsonl(&a.input)?;
                    let sft = make_asr_sft(&lists, cfg.nbest_k, a.held_out)?;
                    if sft.skipped > 0 {
                        warn!("{} lists without a reference were skipped", sft.skipped);
                    }
                    sft.records
                }
                SynthTask::Ape => {
                    let talks = load_corpus(&a.input)?;
                    let (half_a, half_b) = synth::split_halves(&talks)?;
                    let models = match cfg.backend {
                        BackendMode::Oracle => synth::noise_oracle_models((&half_a, &half_b), cfg.noise_rate, cfg.seed)?,
                        BackendMode::Http => synth::http_half_models(&cfg)?,
                    };
                    let triples = synth::cross_infer((&half_a, &half_b), &models, cfg.parallelism)?;
                    make_ape_sft(&triples, cfg.token_budget, &WordPunctCounter)?
                }
            };
            write_jsonl(&a.out, &records)?;
            info!("{} records", records.len());
        }
        Command::Eval(a) => {
            if a.no_resegment {
                cfg.resegment = false;
            } else if a.resegment {
                cfg.resegment = true;
            }
            let cfg = validate_config(cfg)?;
            let hyps = load_corpus(&a.hyp)?;
            let refs = load_corpus(&a.reference)?;
            let scorer = backends(cli, &cfg, Some(&a.reference))?.scorer;
            let report = evaluate(&hyps, &refs, &cfg, scorer.as_deref())?;
            match &a.report {
                Some(p) => pipeline::write_json(p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
            }
        }
        Command::PlanChunks(a) => {
            let plan = plan_chunks(a.duration, a.chunk, a.overlap)?;
            for (start, end) in plan.spans {
                println!("{start}\t{end}");
            }
        }
        Command::Run(a) => {
            cfg.long_form |= a.long_form;
            if a.no_llm_refine {
                cfg.llm_refine = false;
            }
            let cfg = validate_config(cfg)?;
            let b = backends(cli, &cfg, Some(&a.corpus))?;
            let m = pipeline::run_pipeline(&cfg, &a.corpus, &a.out, &b, RunOptions { timings: a.timings })?;
            println!("{}", m.run_id);
        }
        Command::Verify { out } => {
            let m = pipeline::verify_manifest(out)?;
            println!("{} ok ({} stages)", m.run_id, m.stages.len());
        }
        Command::ServeMock(a) => {
            let cfg = validate_config(cfg)?;
            let talks = load_corpus(&a.corpus)?;
            let handler = match a.kind {
                MockKind::Asr => asr_handler(Arc::new(OracleAsr::from_talks(&talks, cfg.asr_beam))),
                MockKind::Mt => mt_handler(Arc::new(TableMt::from_talks(&talks))),
                MockKind::Llm => llm_handler(Arc::new(OracleLlm::from_talks(&talks))),
                MockKind::Scorer => scorer_handler(Arc::new(ChrfScorer)),
            };
            let server = MockServer::bind(&a.addr, handler).map_err(|e| Failure {
                code: 3,
                message: format!("cannot bind {}: {e}", a.addr),
            })?;
            println!("{}", server.url());
            server.wait();
        }
    }
    Ok(())
}
