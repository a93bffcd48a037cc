use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use secite::embed::{EmbeddingProviderConfig, DEFAULT_FALLBACK_DIM};
use secite::evaluate::EvaluationReport;
use secite::pipeline::{
    run_pipeline, stage_cluster, stage_evaluate, stage_extract, stage_project, stage_summarize,
    PipelineError, RunConfig,
};
use secite::summarize::GenerationConfig;

/// Extract, cluster, plot and summarize the sentences that cite a target paper.
#[derive(Debug, Parser)]
#[command(name = "secite", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    opts: Options,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage and write the full report.
    Run,
    /// Ingest the manifest and write contexts.json.
    Extract,
    /// Embed and cluster contexts.json; write clusters.json.
    Cluster,
    /// Project clusters.json to 2-D; write projection.json and clusters.svg.
    Project,
    /// Summarize the Positive and Negative clusters; write summaries.json.
    Summarize,
    /// Build report.json and report.md from the existing artifacts.
    Evaluate,
}

#[derive(Debug, Args)]
struct Options {
    /// Corpus manifest (TOML) describing the target paper and citing documents.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Output directory for stage artifacts.
    #[arg(long, global = true, default_value = "secite-out")]
    out: PathBuf,

    /// Candidate cluster counts, comma separated.
    #[arg(
        long = "k",
        global = true,
        value_delimiter = ',',
        default_value = "2,3"
    )]
    ks: Vec<usize>,

    #[arg(long, global = true, default_value_t = secite::cluster::DEFAULT_SEED)]
    seed: u64,

    /// No network: hashed embeddings and extractive summaries.
    #[arg(long, global = true)]
    offline: bool,

    /// Embed cleaned text instead of the original sentences.
    #[arg(long, global = true)]
    embed_cleaned: bool,

    /// L2-normalize embeddings before clustering.
    #[arg(long, global = true)]
    normalize: bool,

    #[arg(long, global = true, value_name = "FILE")]
    stopwords: Option<PathBuf>,

    #[arg(long, global = true, value_name = "FILE")]
    lexicon_pos: Option<PathBuf>,

    #[arg(long, global = true, value_name = "FILE")]
    lexicon_neg: Option<PathBuf>,

    /// Directory holding cluster.txt, fulltext_chunk.txt and/or fulltext_reduce.txt.
    #[arg(long, global = true, value_name = "DIR")]
    templates: Option<PathBuf>,

    /// Hand-written contexts to merge, one `doc_id<TAB>sentence` per line.
    #[arg(long, global = true, value_name = "FILE")]
    manual: Option<PathBuf>,

    /// Embedding service base URL; without it the hashed fallback is used.
    #[arg(long, global = true, value_name = "URL")]
    embed_url: Option<String>,

    #[arg(
        long,
        global = true,
        default_value = "SECITE_EMBED_TOKEN",
        value_name = "VAR"
    )]
    embed_token_env: String,

    #[arg(long, global = true, default_value_t = DEFAULT_FALLBACK_DIM)]
    embed_dim: usize,

    #[arg(long, global = true, default_value_t = 64)]
    embed_batch: usize,

    /// Text-generation service base URL.
    #[arg(long, global = true, value_name = "URL")]
    gen_url: Option<String>,

    #[arg(
        long,
        global = true,
        default_value = "SECITE_GEN_TOKEN",
        value_name = "VAR"
    )]
    gen_token_env: String,

    #[arg(long, global = true, default_value_t = 512)]
    max_tokens: u32,

    #[arg(long, global = true, default_value_t = 3)]
    max_retries: u32,

    /// Request timeout in seconds.
    #[arg(long, global = true, default_value_t = 120)]
    timeout: u64,

    /// Sentences kept by the extractive fallback.
    #[arg(long, global = true, default_value_t = 3)]
    sentences: usize,
}

impl Options {
    fn run_config(&self) -> RunConfig {
        let mut cfg = RunConfig::new(self.manifest.clone(), &self.out);
        cfg.ks = self.ks.clone();
        cfg.seed = self.seed;
        cfg.offline = self.offline;
        cfg.embed_cleaned = self.embed_cleaned;
        cfg.normalize = self.normalize;
        cfg.stopwords = self.stopwords.clone();
        cfg.lexicon_pos = self.lexicon_pos.clone();
        cfg.lexicon_neg = self.lexicon_neg.clone();
        cfg.templates = self.templates.clone();
        cfg.manual_contexts = self.manual.clone();
        cfg.extractive_sentences = self.sentences;
        let timeout = Duration::from_secs(self.timeout);

        let mut embedding = match &self.embed_url {
            Some(url) => EmbeddingProviderConfig::remote(url, Some(self.embed_token_env.clone())),
            None => EmbeddingProviderConfig::hashed(self.embed_dim),
        };
        embedding.batch_size = self.embed_batch;
        embedding.timeout = timeout;
        embedding.max_retries = self.max_retries;
        cfg.embedding = embedding;

        cfg.generation = self.gen_url.as_ref().map(|url| GenerationConfig {
            auth_env_var: Some(self.gen_token_env.clone()),
            max_tokens: self.max_tokens,
            timeout,
            max_retries: self.max_retries,
            ..GenerationConfig::new(url)
        });
        cfg
    }
}

fn print_report(report: &EvaluationReport, out: &std::path::Path) {
    let e = &report.extraction;
    println!(
        "documents {}/{} parsed (success rate {:.3}), {} contexts",
        e.documents_parsed, e.documents_total, e.success_rate, e.contexts_found
    );
    if let Some(c) = &report.clustering {
        for (k, s) in &c.silhouette_by_k {
            println!("k={k}: mean silhouette {s:.4}");
        }
        println!("selected k: {}", c.selected_k);
    }
    for (p, s) in &report.similarity {
        println!("similarity {p}: {s:.2}");
    }
    println!(
        "report: {}",
        out.join(secite::pipeline::REPORT_MD_FILE).display()
    );
}

fn execute(cli: &Cli) -> Result<u8, PipelineError> {
    let cfg = cli.opts.run_config();
    cfg.validate()?;
    match cli.command {
        Command::Run => {
            let report = run_pipeline(&cfg)?;
            print_report(&report, &cfg.out_dir);
            return Ok(report.exit_code() as u8);
        }
        Command::Extract => {
            let a = stage_extract(&cfg)?;
            println!(
                "{} contexts from {}/{} parsed documents",
                a.extraction.contexts.len(),
                a.extraction.documents_parsed(),
                a.extraction.documents_total()
            );
        }
        Command::Cluster => {
            let a = stage_cluster(&cfg)?;
            for s in &a.stages {
                println!(
                    "{}: {:?} {}",
                    s.stage,
                    s.status,
                    s.message.as_deref().unwrap_or("")
                );
            }
            if let Some(k) = a.k {
                println!("selected k: {k}");
            }
        }
        Command::Project => {
            let a = stage_project(&cfg)?;
            for w in &a.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} points, final KL {:.4}", a.points.len(), a.final_kl);
        }
        Command::Summarize => {
            let a = stage_summarize(&cfg)?;
            for s in &a.stages {
                println!(
                    "{}: {:?} {}",
                    s.stage,
                    s.status,
                    s.message.as_deref().unwrap_or("")
                );
            }
        }
        Command::Evaluate => {
            let report = stage_evaluate(&cfg)?;
            print_report(&report, &cfg.out_dir);
            return Ok(report.exit_code() as u8);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
