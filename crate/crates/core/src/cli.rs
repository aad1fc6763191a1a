//! Command-line interface: `generate`, `validate`, `train`, `synth`.
//!
//! Exit codes: 0 success, 1 fatal input error, 2 completed with page skips.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use filtergen::oracle::{train_forest, AdSizeTable, ForestModel, TrainConfig};
use filtergen::pipeline::report::PageStatus;
use filtergen::pipeline::synth::{synth_corpus, SynthConfig};
use filtergen::pipeline::{
    emit_report, ingest_crawl, run_pipeline, CrawlManifest, PipelineConfig, PipelineInputs,
    ReportFormat,
};
use filtergen::{PublicSuffixList, ResourceType, RuleSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Parser)]
#[command(
    name = "filtergen",
    version,
    about = "Generates AdBlock-Plus filter rules from page-execution graph crawls"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline over a crawl directory and emit rules + report.
    Generate(GenerateArgs),
    /// Validate a crawl directory and print a per-file schema report.
    Validate(ValidateArgs),
    /// Train the contextual classifier from labeled JSON-lines data.
    Train(TrainArgs),
    /// Generate a synthetic crawl directory with planted ad chains.
    Synth(SynthArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Crawl directory: <region>/<page-id>/{page.graphml, metadata.json, perceptual.json?}
    #[arg(long)]
    crawl_dir: PathBuf,
    /// Existing filter list files (EasyList format), comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    lists: Vec<PathBuf>,
    /// Public suffix list file; defaults to the bundled snapshot.
    #[arg(long)]
    psl: Option<PathBuf>,
    /// Trained classifier model; without it only list-labeled ads are used.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output rules file.
    #[arg(long)]
    out: PathBuf,
    /// Output report file.
    #[arg(long)]
    report: PathBuf,
    /// Report serialization: json or table.
    #[arg(long, default_value = "json")]
    report_format: String,
    /// Override the model's decision threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Scripts touching more document regions than this are unsafe to block.
    #[arg(long, default_value_t = 2)]
    subtree_limit: usize,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Crawl identifier for the list header; defaults to the directory name.
    #[arg(long)]
    crawl_id: Option<String>,
    /// Resource types counted in the report's "current lists" tally.
    #[arg(long, value_delimiter = ',', default_values_t = ["image".to_string(), "subdocument".to_string()])]
    list_tally_types: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    crawl_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON-lines file of labeled examples.
    #[arg(long)]
    data: PathBuf,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_trees: usize,
    /// 0 grows trees until pure.
    #[arg(long, default_value_t = 0)]
    max_depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Threshold selection keeps recall at or above this floor.
    #[arg(long, default_value_t = 0.5)]
    recall_floor: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus configuration (JSON for `SynthConfig`; `{}` for defaults).
    #[arg(long)]
    config: PathBuf,
    /// Output crawl directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => generate(args),
        Command::Validate(args) => validate(args),
        Command::Train(args) => train(args),
        Command::Synth(args) => synth(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            EXIT_FATAL
        }
    }
}

fn load_psl(path: &Option<PathBuf>) -> Result<PublicSuffixList> {
    match path {
        Some(p) => PublicSuffixList::from_file(p)
            .with_context(|| format!("reading psl file {}", p.display())),
        None => Ok(PublicSuffixList::bundled()),
    }
}

fn print_manifest_summary(manifests: &[CrawlManifest]) {
    for manifest in manifests {
        let skipped = manifest.skipped.len();
        println!(
            "region {}: {} pages validated, {} skipped",
            manifest.region,
            manifest.pages.len(),
            skipped
        );
        for skip in &manifest.skipped {
            println!("  skipped {}: {}", skip.page, skip.reason);
        }
    }
}

fn generate(args: GenerateArgs) -> Result<i32> {
    let psl = load_psl(&args.psl)?;
    let sizes = AdSizeTable::default();

    let mut sources: Vec<(String, String)> = Vec::new();
    for path in &args.lists {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading list {}", path.display()))?;
        sources.push((path.display().to_string(), text));
    }
    let lists = RuleSet::parse_sources(sources.iter().map(|(n, t)| (n.as_str(), t.as_str())));
    println!(
        "lists: {} blocking, {} exception rules ({} cosmetic skipped, {} lines unparseable)",
        lists.blocking_rules().len(),
        lists.exception_rules().len(),
        lists.stats().cosmetic_rules,
        lists.stats().skipped.len()
    );
    for skip in &lists.stats().skipped {
        eprintln!("  skipped {}:{}: {} ({})", skip.source, skip.line_number, skip.text, skip.reason);
    }

    let model = match &args.model {
        Some(path) => Some(
            ForestModel::load(path)
                .with_context(|| format!("loading model {}", path.display()))?,
        ),
        None => {
            println!("no model supplied; classifier stage disabled");
            None
        }
    };

    let list_tally_types: Vec<ResourceType> = args
        .list_tally_types
        .iter()
        .map(|t| {
            ResourceType::parse(t)
                .ok_or_else(|| anyhow::anyhow!("unknown resource type '{t}'"))
        })
        .collect::<Result<_>>()?;
    let report_format = ReportFormat::parse(&args.report_format)
        .ok_or_else(|| anyhow::anyhow!("unknown report format '{}'", args.report_format))?;

    let manifests = ingest_crawl(&args.crawl_dir)?;
    print_manifest_summary(&manifests);

    let crawl_id = args.crawl_id.clone().unwrap_or_else(|| {
        args.crawl_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "crawl".to_string())
    });
    let config = PipelineConfig {
        subtree_limit: args.subtree_limit,
        decision_threshold: args.threshold,
        jobs: args.jobs,
        seed: args.seed,
        list_tally_types,
        crawl_id,
        generated_at: None,
    };
    let inputs =
        PipelineInputs { lists: &lists, model: model.as_ref(), psl: &psl, sizes: &sizes };
    let (list, report) = run_pipeline(&manifests, &inputs, &config)?;

    list.write(&args.out)
        .with_context(|| format!("writing rules to {}", args.out.display()))?;
    std::fs::write(&args.report, emit_report(&report, report_format))
        .with_context(|| format!("writing report to {}", args.report.display()))?;

    print!("{}", emit_report(&report, ReportFormat::Table));
    println!("wrote {} rules to {}", list.rules.len(), args.out.display());
    println!("wrote report to {}", args.report.display());

    let any_skipped = report.pages.iter().any(|p| p.status == PageStatus::Skipped);
    Ok(if any_skipped { EXIT_PARTIAL } else { EXIT_OK })
}

fn validate(args: ValidateArgs) -> Result<i32> {
    let manifests = ingest_crawl(&args.crawl_dir)?;
    let mut skipped = 0usize;
    for manifest in &manifests {
        for page in &manifest.pages {
            match filtergen::graph::load_graphml_file(&page.graphml_path) {
                Ok(g) => println!(
                    "{}/{}: OK ({} nodes, {} edges, {} requests)",
                    manifest.region,
                    page.page_id,
                    g.node_count(),
                    g.edge_count(),
                    g.resource_requests().len()
                ),
                Err(e) => {
                    // Ingest validated this moments ago; treat as a skip.
                    println!("{}/{}: ERROR {e}", manifest.region, page.page_id);
                    skipped += 1;
                }
            }
        }
        for skip in &manifest.skipped {
            println!("{}/{}: ERROR {}", manifest.region, skip.page, skip.reason);
            skipped += 1;
        }
    }
    Ok(if skipped > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn train(args: TrainArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.data)
        .with_context(|| format!("reading training data {}", args.data.display()))?;
    let examples = filtergen::oracle::read_examples_jsonl(&text)
        .with_context(|| format!("parsing training data {}", args.data.display()))?;
    if examples.is_empty() {
        bail!("training data {} is empty", args.data.display());
    }
    let config = TrainConfig {
        n_trees: args.n_trees,
        max_depth: if args.max_depth == 0 { None } else { Some(args.max_depth) },
        seed: args.seed,
        recall_floor: args.recall_floor,
        ..TrainConfig::default()
    };
    let report = train_forest(&examples, config)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    let cv = report.model.cv.as_ref().expect("training always cross-validates");
    println!(
        "trained {} trees on {} examples; threshold {:.4}",
        report.model.n_trees,
        examples.len(),
        report.model.decision_threshold
    );
    println!(
        "cv: mean precision {:.3}, mean recall {:.3} over {} folds",
        cv.mean_precision,
        cv.mean_recall,
        cv.folds.len()
    );
    report.model.save(&args.out)?;
    println!("wrote model to {}", args.out.display());
    Ok(EXIT_OK)
}

fn synth(args: SynthArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading synth config {}", args.config.display()))?;
    let mut config: SynthConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing synth config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let truth = synth_corpus(&config, &args.out)?;
    println!(
        "wrote {} pages ({} planted ad chains) to {}",
        truth.pages.len(),
        truth.total_ads,
        args.out.display()
    );
    println!("ground truth: {}", args.out.join("ground_truth.json").display());
    Ok(EXIT_OK)
}
