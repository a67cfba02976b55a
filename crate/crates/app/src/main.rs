use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use depsev::pipeline::{read_jsonl, Pipeline, PipelineError, Stage};
use depsev::tables::{read_table, validate_table, DEFAULT_TOLERANCE};
use depsev::{build_service, run_pipeline, PipelineConfig};
use depsev_core::evaluation::ReportFormat;
use depsev_core::labeling::VoteSource;
use depsev_core::{CleanDocument, FusedLabel};

#[derive(Parser)]
#[command(
    name = "depsev",
    version,
    about = "Depression-severity weak-supervision labeling pipeline"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "depsev.toml")]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read and preprocess the corpus.
    Ingest,
    /// Build the keyword lexicon for each language.
    Lexicon,
    /// Keyword votes from questionnaire scores.
    LabelKeyword,
    /// Zero-shot votes from the configured service.
    LabelZeroshot,
    /// Expert votes from a label CSV.
    AnnotateImport {
        /// Defaults to the configured expert label file.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Fuse the three vote sets.
    Fuse,
    /// Merge rare classes and split into train, validation and test.
    Split,
    /// Fit TF-IDF on the training part and oversample it.
    Smote,
    /// Train every configured model.
    Train,
    /// Score the models on validation and test.
    Evaluate,
    /// Print saved reports, or check a published metric table.
    Report {
        #[arg(long, default_value = "test")]
        part: String,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// CSV with language,class,model,precision,recall,f1 columns.
        #[arg(long)]
        validate: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Run every stage end to end.
    Run,
    /// Start the annotation service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Machine,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => ReportFormat::Text,
            Format::Machine => ReportFormat::Machine,
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = std::env::current_dir()?.join(out);
    }
    config.validate()?;
    Ok(config)
}

fn print_json(value: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string(value).expect("serializable output")
    );
}

fn doc_languages(p: &Pipeline<'_>) -> Result<HashMap<String, String>, PipelineError> {
    let mut ids = HashMap::new();
    for lang in p.languages() {
        for d in p.load_clean(lang)? {
            ids.insert(d.id, lang.to_string());
        }
    }
    Ok(ids)
}

fn run_stage(p: &Pipeline<'_>, command: &Command) -> Result<(), PipelineError> {
    let langs: Vec<String> = p.languages().map(str::to_string).collect();
    match command {
        Command::Ingest => {
            for (lang, docs) in p.ingest()? {
                println!("{lang}: {} documents", docs.len());
            }
        }
        Command::Lexicon => {
            for lang in &langs {
                println!("{lang}: {} keywords", p.lexicon(lang)?.len());
            }
        }
        Command::LabelKeyword => {
            for lang in &langs {
                let lexicon = p.lexicon(lang)?;
                let votes = p.keyword_votes(lang, &p.load_clean(lang)?, &lexicon)?;
                println!("{lang}: {} keyword votes", votes.len());
            }
        }
        Command::LabelZeroshot => {
            for lang in &langs {
                let votes = p.zeroshot_votes(lang, &p.load_clean(lang)?)?;
                println!("{lang}: {} zero-shot votes", votes.len());
            }
        }
        Command::AnnotateImport { .. } => {
            // The --file override is applied to the config before dispatch.
            let ids = doc_languages(p)?;
            for lang in &langs {
                let votes = p.expert_votes(lang, &p.load_clean(lang)?, &ids)?;
                println!("{lang}: {} expert votes", votes.len());
            }
        }
        Command::Fuse => {
            for lang in &langs {
                let docs = p.load_clean(lang)?;
                let votes = [
                    p.load_votes(lang, VoteSource::Keyword)?,
                    p.load_votes(lang, VoteSource::Zeroshot)?,
                    p.load_votes(lang, VoteSource::Expert)?,
                ];
                let outcome = p.fuse(lang, &docs, votes)?;
                println!("{lang}: {} fused", outcome.fused.len());
            }
        }
        Command::Split => {
            for lang in &langs {
                let docs: Vec<CleanDocument> = p.load_clean(lang)?;
                let fused: Vec<FusedLabel> = read_jsonl(&p.layout.fused(lang), Stage::Fuse)?;
                let splits = p.split(lang, &fused, &docs)?;
                println!(
                    "{lang}: train {} / validation {} / test {}",
                    splits.train.len(),
                    splits.validation.len(),
                    splits.test.len()
                );
            }
        }
        Command::Smote => {
            for lang in &langs {
                let train = p.load_split_part(lang, "train")?;
                let (tfidf, balanced) = p.features_and_smote(lang, &train)?;
                println!(
                    "{lang}: {} features, {} training points after oversampling",
                    tfidf.vocabulary_len(),
                    balanced.len()
                );
            }
        }
        Command::Train => {
            for lang in &langs {
                let tfidf = p.load_tfidf(lang)?;
                let trained = p.train(lang, &p.load_smote(lang)?, tfidf.vocabulary_len())?;
                for (m, acc) in trained.models.iter().zip(&trained.train_accuracy) {
                    println!(
                        "{lang} {}: training accuracy {acc:.4}",
                        m.kind().abbreviation()
                    );
                }
            }
        }
        Command::Evaluate => {
            for lang in &langs {
                let tfidf = p.load_tfidf(lang)?;
                let models = p.load_models(lang)?;
                for part in ["validation", "test"] {
                    let records = p.load_split_part(lang, part)?;
                    if let Some(reports) = p.evaluate(lang, part, &records, &tfidf, &models)? {
                        for r in reports {
                            println!("{lang} {part} {}: accuracy {:.4}", r.model, r.accuracy);
                        }
                    }
                }
            }
        }
        Command::Run => {
            let manifest = run_pipeline(p)?;
            println!("{}", p.layout.manifest().display());
            info!("config hash {}", manifest.config_hash);
        }
        Command::Report { .. } | Command::Serve { .. } => unreachable!("handled separately"),
    }
    Ok(())
}

fn report(cli: &Cli, part: &str, format: Format) -> anyhow::Result<()> {
    let config = load_config(cli)?;
    let p = Pipeline::new(&config);
    for lang in p.languages() {
        let path = p.layout.report(lang, part, format.into());
        let text = fs::read_to_string(&path).with_context(|| {
            format!("no {part} report at {}; run evaluate first", path.display())
        })?;
        print!("{text}");
    }
    Ok(())
}

fn validate(path: &Path, tolerance: f64) -> anyhow::Result<()> {
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        bail!("tolerance must be a non-negative number");
    }
    let rows = read_table(path)?;
    print_json(&validate_table(&rows, tolerance));
    Ok(())
}

fn serve(cli: &Cli, host: &str, port: u16) -> anyhow::Result<()> {
    let config = load_config(cli)?;
    let service = Arc::new(build_service(&config, None)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("cannot bind {host}:{port}"))?;
        println!("listening on {}", listener.local_addr()?);
        depsev::server::serve(listener, service).await?;
        Ok(())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Report {
            validate: Some(path),
            tolerance,
            ..
        } => validate(path, *tolerance),
        Command::Report { part, format, .. } => report(&cli, part, *format),
        Command::Serve { host, port } => serve(&cli, host, *port),
        command => match load_config(&cli).and_then(|mut config| {
            if let Command::AnnotateImport { file: Some(file) } = command {
                config.expert_labels = Some(std::env::current_dir()?.join(file));
                config.validate()?;
            }
            Ok(config)
        }) {
            Ok(config) => match run_stage(&Pipeline::new(&config), command) {
                Ok(()) => Ok(()),
                Err(e) => {
                    eprintln!("{}", e.to_json());
                    return ExitCode::from(2);
                }
            },
            Err(e) => {
                eprintln!(
                    "{}",
                    PipelineError::new(Stage::Config, "invalid_config", format!("{e:#}")).to_json()
                );
                return ExitCode::from(2);
            }
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": { "message": format!("{e:#}") } })
            );
            ExitCode::FAILURE
        }
    }
}
