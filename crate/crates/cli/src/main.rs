use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dermqa_core::corpus::{
    apply_weights, build_disease_dictionary, load_dataset, write_dataset, Case, DiseaseDictionary,
    Split, WeightConfig,
};
use dermqa_core::eval::{EvalConfig, EvalReport, Smoothing};
use dermqa_core::experiment::{
    classify_cases, evaluate_predictions, llm_predictions, open_transport, postprocess_predictions,
    read_predictions, run_ablate_batch_size, run_ablate_postprocess, run_ablate_retrieval,
    write_json, write_predictions, ExperimentConfig, LlmMode, LlmSection, PredictionRecord,
};
use dermqa_core::llm::{Orchestrator, PromptSet, Scenario, ScenarioConfig};
use dermqa_core::postprocess::{MatchMode, PostprocessConfig};
use dermqa_core::retrieval::{
    export_pca_coordinates, label_map_from_pairs, write_coordinates_csv, Modality, RetrievalConfig,
    Retriever,
};
use dermqa_core::store::{import_embeddings, IMAGE_DIM, TEXT_DIM};
use dermqa_core::trainer::{
    load_model, read_pairs, save_model, train, write_loss_trace, TrainConfig,
};
use dermqa_core::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "dermqa", version, about = "Dermatology VQA experiment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a case file and optionally build the disease dictionary.
    Ingest(IngestArgs),
    /// Validate an embedding manifest and its blob.
    ImportEmbeddings(ImportArgs),
    /// Train the joint-embedding projection heads.
    Train(TrainArgs),
    /// Nearest-neighbour classification of cases.
    Classify(ClassifyArgs),
    /// Run the LLM pipeline or label extraction over cases.
    LlmRun(LlmRunArgs),
    /// Apply word matching and sentence templating to predictions.
    Postprocess(PostprocessArgs),
    /// Score predictions with weighted deltaBLEU.
    Evaluate(EvaluateArgs),
    /// Retrieval configuration grid.
    AblateRetrieval(AblateArgs),
    /// Postprocessing switch comparison.
    AblatePostprocess(AblateArgs),
    /// Training batch-size comparison.
    AblateBatchSize(AblateBatchArgs),
    /// PCA coordinates of an embedding matrix.
    ExportPca(ExportPcaArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Role {
    Image,
    Text,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LlmTask {
    Predict,
    ExtractLabels,
}

#[derive(Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    split: Split,
    /// Print per-split statistics.
    #[arg(long)]
    report: bool,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Write the disease dictionary built from gold labels.
    #[arg(long)]
    dictionary_out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ImportArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    role: Role,
    /// Required dimension; without it a non-standard dimension only warns.
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// JSON training config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image_manifest: PathBuf,
    #[arg(long)]
    text_manifest: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out>.loss.csv`.
    #[arg(long)]
    loss_trace: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    ref_images: PathBuf,
    #[arg(long)]
    ref_texts: PathBuf,
    /// Features of the cases' images; defaults to `--ref-images`.
    #[arg(long)]
    query_images: Option<PathBuf>,
    /// `image_id,label` CSV giving reference labels.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    cases: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value = "image-image")]
    modality: Modality,
    #[arg(long, value_enum, default_value = "off")]
    pca: Switch,
    #[arg(long, default_value_t = 50)]
    pca_components: usize,
    #[arg(long, value_enum, default_value = "off")]
    aug: Switch,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct LlmRunArgs {
    #[arg(long)]
    cases: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, value_enum, default_value = "predict")]
    task: LlmTask,
    #[arg(long, default_value = "img_2calls")]
    scenario: Scenario,
    #[arg(long, default_value = "replay")]
    mode: LlmMode,
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// `builtin` or a directory of prompt files.
    #[arg(long, default_value = "builtin")]
    prompts: String,
    /// Directory with image files named by id.
    #[arg(long)]
    image_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    concurrency: usize,
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
    #[arg(long, default_value_t = 500)]
    backoff_base_ms: u64,
    /// Predictions for `predict`, labelled cases for `extract-labels`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PostprocessArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    cases: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    dictionary: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    sentence: Switch,
    #[arg(long, value_enum, default_value = "on")]
    word_match: Switch,
    #[arg(long, value_enum, default_value = "token")]
    match_mode: MatchModeArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MatchModeArg {
    Token,
    Substring,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SmoothingArg {
    Off,
    Eps,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    cases: PathBuf,
    #[arg(long, default_value = "validation")]
    split: Split,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "off")]
    smoothing: SmoothingArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Serialize)]
struct AblateBatchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `ablation.batch_sizes`, comma separated.
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Option<Vec<usize>>,
}

#[derive(Args, Serialize)]
struct ExportPcaArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 2)]
    components: usize,
    #[arg(long)]
    out: PathBuf,
}

/// `<out>.resolved.json`: the command and its fully defaulted arguments.
fn snapshot<T: Serialize>(
    out: &Path,
    command: &str,
    args: &T,
    extra: Option<serde_json::Value>,
) -> Result<()> {
    let mut name = out.as_os_str().to_owned();
    name.push(".resolved.json");
    let mut doc = serde_json::json!({ "command": command, "args": args });
    if let Some(extra) = extra {
        doc["resolved"] = extra;
    }
    write_json(PathBuf::from(name), &doc)
}

fn config_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config serializes")
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let mut cases = load_dataset(&a.input, a.split)?;
    let weights = WeightConfig {
        alpha: a.alpha,
        ..WeightConfig::default()
    };
    apply_weights(&mut cases, &weights)?;
    println!("cases\t{}", cases.len());
    if a.report {
        let images: usize = cases.iter().map(|c| c.image_ids.len()).sum();
        let responses: usize = cases.iter().map(|c| c.responses.len()).sum();
        let labelled = cases.iter().filter(|c| c.gold_label.is_some()).count();
        let langs: BTreeSet<&str> = cases.iter().map(|c| c.language.as_str()).collect();
        let mean_weight = if responses == 0 {
            0.0
        } else {
            cases
                .iter()
                .flat_map(|c| &c.responses)
                .map(|r| r.weight)
                .sum::<f64>()
                / responses as f64
        };
        println!("split\t{}", a.split);
        println!("images\t{images}");
        println!("responses\t{responses}");
        println!("gold_labels\t{labelled}");
        println!(
            "languages\t{}",
            langs.into_iter().collect::<Vec<_>>().join(",")
        );
        println!("mean_weight\t{mean_weight:.6}");
    }
    if let Some(out) = &a.dictionary_out {
        let dict = build_disease_dictionary(&cases)?;
        dict.save(out)?;
        snapshot(out, "ingest", a, None)?;
        println!("dictionary_entries\t{}", dict.len());
    }
    Ok(())
}

fn import(a: &ImportArgs) -> Result<()> {
    let m = import_embeddings(&a.manifest)?;
    let standard = match a.role {
        Role::Image => IMAGE_DIM,
        Role::Text => TEXT_DIM,
    };
    match a.dim {
        Some(d) if d != m.dim() => {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: m.dim(),
            })
        }
        None if m.dim() != standard => {
            eprintln!(
                "warning: dimension {} differs from the usual {standard}",
                m.dim()
            );
        }
        _ => {}
    }
    println!("ids\t{}", m.len());
    println!("dim\t{}", m.dim());
    println!("variants\t{}", m.variant_of().len());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg: TrainConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    let images = import_embeddings(&a.image_manifest)?;
    let texts = import_embeddings(&a.text_manifest)?;
    let pairs = read_pairs(&a.pairs)?;
    let out = train(&cfg, &images, &texts, &pairs)?;
    save_model(&a.out, &out.model, Some(&cfg))?;
    let trace = a.loss_trace.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    write_loss_trace(&trace, &out.loss_trace)?;
    snapshot(&a.out, "train", a, Some(config_json(&cfg)))?;
    println!("steps\t{}", out.steps);
    if let (Some(first), Some(last)) = (out.loss_trace.first(), out.loss_trace.last()) {
        println!("loss\t{first:.6}\t{last:.6}");
    }
    Ok(())
}

fn classify(a: &ClassifyArgs) -> Result<()> {
    let (model, _) = load_model(&a.model)?;
    let ref_images = import_embeddings(&a.ref_images)?;
    let ref_texts = import_embeddings(&a.ref_texts)?;
    let query = match &a.query_images {
        Some(p) => import_embeddings(p)?,
        None => ref_images.clone(),
    };
    let labels = label_map_from_pairs(&read_pairs(&a.pairs)?);
    let cases = load_dataset(&a.cases, a.split)?;
    let cfg = RetrievalConfig {
        k: a.k,
        modality: a.modality,
        pca: a.pca.on(),
        pca_components: a.pca_components,
        use_augmented_variants: a.aug.on(),
        seed: a.seed,
    };
    let retriever = Retriever::new(&model, &ref_images, &ref_texts, &labels, &cfg)?;
    let preds = classify_cases(&retriever, &cases, &query)?;
    write_predictions(&a.out, &preds)?;
    snapshot(&a.out, "classify", a, Some(config_json(&cfg)))?;
    println!("predictions\t{}", preds.len());
    Ok(())
}

fn llm_run(a: &LlmRunArgs) -> Result<()> {
    let pipeline = ScenarioConfig {
        scenario: a.scenario,
        prompt_set: a.prompts.clone(),
        max_attempts: a.max_attempts,
        backoff_base_ms: a.backoff_base_ms,
        concurrency: a.concurrency,
        ..ScenarioConfig::default()
    };
    let section = LlmSection {
        mode: a.mode,
        transcript: a.transcript.clone(),
        image_dir: a.image_dir.clone(),
        pipeline: pipeline.clone(),
        ..LlmSection::default()
    };
    let cases = load_dataset(&a.cases, a.split)?;
    let transport = open_transport(&section)?;
    let orch = Orchestrator::new(
        transport.as_ref(),
        PromptSet::resolve(&pipeline.prompt_set)?,
        pipeline.retry_policy(),
    );
    match a.task {
        LlmTask::Predict => {
            let preds = llm_predictions(&orch, &cases, a.scenario, a.concurrency)?;
            write_predictions(&a.out, &preds)?;
            println!("predictions\t{}", preds.len());
        }
        LlmTask::ExtractLabels => {
            let labelled = extract_labels(&orch, cases)?;
            write_dataset(&a.out, &labelled)?;
            println!("labelled\t{}", labelled.len());
        }
    }
    snapshot(&a.out, "llm-run", a, Some(config_json(&pipeline)))
}

/// Gold label per case from its joined reference responses.
fn extract_labels(orch: &Orchestrator<'_>, mut cases: Vec<Case>) -> Result<Vec<Case>> {
    for case in &mut cases {
        let discussion = case
            .responses
            .iter()
            .map(|r| r.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n");
        case.gold_label = Some(orch.extract_label(&discussion)?);
    }
    Ok(cases)
}

fn postprocess_cmd(a: &PostprocessArgs) -> Result<()> {
    let preds = read_predictions(&a.predictions)?;
    let cases = load_dataset(&a.cases, a.split)?;
    let dict = DiseaseDictionary::load(&a.dictionary)?;
    let cfg = PostprocessConfig {
        sentence_structure: a.sentence.on(),
        word_matching: a.word_match.on(),
        match_mode: match a.match_mode {
            MatchModeArg::Token => MatchMode::Token,
            MatchModeArg::Substring => MatchMode::Substring,
        },
    };
    let out = postprocess_predictions(&preds, &cases, &dict, &cfg)?;
    write_predictions(&a.out, &out)?;
    snapshot(&a.out, "postprocess", a, Some(config_json(&cfg)))?;
    println!("responses\t{}", out.len());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let preds: Vec<PredictionRecord> = read_predictions(&a.predictions)?;
    let cases = load_dataset(&a.cases, a.split)?;
    let weights = WeightConfig {
        alpha: a.alpha,
        ..WeightConfig::default()
    };
    let cfg = EvalConfig {
        smoothing: match a.smoothing {
            SmoothingArg::Off => Smoothing::Off,
            SmoothingArg::Eps => Smoothing::Eps,
        },
        ..EvalConfig::default()
    };
    let report = evaluate_predictions(&preds, &cases, &weights, &cfg)?;
    write_json(&a.out, &report)?;
    snapshot(
        &a.out,
        "evaluate",
        a,
        Some(serde_json::json!({ "weights": weights, "eval": cfg })),
    )?;
    println!("{}", EvalReport::HEADER);
    println!("{}", report.table_row());
    Ok(())
}

fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

fn export_pca(a: &ExportPcaArgs) -> Result<()> {
    let m = import_embeddings(&a.manifest)?;
    let coords = export_pca_coordinates(&m, a.components)?;
    write_coordinates_csv(&a.out, &coords)?;
    snapshot(&a.out, "export-pca", a, None)?;
    println!("rows\t{}", coords.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::ImportEmbeddings(a) => import(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Classify(a) => classify(&a),
        Command::LlmRun(a) => llm_run(&a),
        Command::Postprocess(a) => postprocess_cmd(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::AblateRetrieval(a) => {
            print!(
                "{}",
                run_ablate_retrieval(&load_experiment(&a.config)?)?.render()
            );
            Ok(())
        }
        Command::AblatePostprocess(a) => {
            print!(
                "{}",
                run_ablate_postprocess(&load_experiment(&a.config)?)?.render()
            );
            Ok(())
        }
        Command::AblateBatchSize(a) => {
            let mut cfg = load_experiment(&a.config)?;
            if let Some(sizes) = &a.batch_sizes {
                cfg.ablation.batch_sizes = sizes.clone();
            }
            print!("{}", run_ablate_batch_size(&cfg)?.render());
            Ok(())
        }
        Command::ExportPca(a) => export_pca(&a),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Transport => 4,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
