//! Config-driven runs, prediction files and the ablation drivers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_disease_dictionary, load_dataset, reference_set, Case, DiseaseDictionary, Split,
    WeightConfig,
};
use crate::error::{Error, Result};
use crate::eval::{delta_bleu, tokenize, EvalConfig, EvalReport, Smoothing};
use crate::llm::{
    DirectoryImages, IdDigests, ImageSource, LiveConfig, LiveTransport, Orchestrator,
    RecordingTransport, ReplayTransport, Scenario, ScenarioConfig, Transport, TransportError,
};
use crate::postprocess::{postprocess, PostprocessConfig};
use crate::retrieval::{label_map_from_pairs, Modality, RetrievalConfig, Retriever};
use crate::store::{import_embeddings, EmbeddingMatrix};
use crate::trainer::{
    load_model, read_pairs, train, write_loss_trace, JointEmbeddingModel, Pair, TrainConfig,
};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Copied into `train.seed` and `retrieval.seed` on load.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub embeddings: EmbeddingsSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub postprocess: PostprocessConfig,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub ablation: AblationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub train: Option<PathBuf>,
    /// Cases that get predicted and scored.
    pub eval: Option<PathBuf>,
    pub eval_split: Split,
    /// `image_id,label` CSV for training and reference labels.
    pub pairs: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            train: None,
            eval: None,
            eval_split: Split::Validation,
            pairs: None,
            dictionary: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingsSection {
    /// Reference and training image features.
    pub images: Option<PathBuf>,
    /// Label-text embeddings, ids are label strings.
    pub texts: Option<PathBuf>,
    /// Features for the eval cases' images; defaults to `images`.
    pub query_images: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmMode {
    Live,
    Record,
    #[default]
    Replay,
}

impl std::str::FromStr for LlmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(LlmMode::Live),
            "record" => Ok(LlmMode::Record),
            "replay" => Ok(LlmMode::Replay),
            other => Err(Error::Config(format!("unknown llm mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSection {
    pub mode: LlmMode,
    pub transcript: Option<PathBuf>,
    /// Directory holding the image files named by id.
    pub image_dir: Option<PathBuf>,
    pub pipeline: ScenarioConfig,
    /// Empty fields fall back to the `CHAT_*` environment variables.
    pub live: LiveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub max_n: usize,
    pub smoothing: Smoothing,
    pub weights: WeightConfig,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            max_n: e.max_n,
            smoothing: e.smoothing,
            weights: WeightConfig::default(),
        }
    }
}

impl EvaluateSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            max_n: self.max_n,
            smoothing: self.smoothing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub batch_sizes: Vec<usize>,
    /// Trained model for the retrieval grid; trained from `train` when absent.
    pub model: Option<PathBuf>,
    /// Prediction files compared in the postprocessing ablation.
    pub predictions: Vec<PathBuf>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            batch_sizes: vec![128, 256, 512],
            model: None,
            predictions: Vec::new(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        rebase(base, p);
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.retrieval.seed = cfg.seed;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Parses a config file; relative paths are taken from the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        rebase(&base, &mut cfg.output_dir);
        let c = &mut cfg.corpus;
        for p in [&mut c.train, &mut c.eval, &mut c.pairs, &mut c.dictionary] {
            rebase_opt(&base, p);
        }
        let e = &mut cfg.embeddings;
        for p in [&mut e.images, &mut e.texts, &mut e.query_images] {
            rebase_opt(&base, p);
        }
        rebase_opt(&base, &mut cfg.llm.transcript);
        rebase_opt(&base, &mut cfg.llm.image_dir);
        rebase_opt(&base, &mut cfg.ablation.model);
        for p in &mut cfg.ablation.predictions {
            rebase(&base, p);
        }
        Ok(cfg)
    }

    /// Writes `resolved_config.json` into the output directory.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))?;
        let path = self.output_dir.join(RESOLVED_CONFIG_FILE);
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` is required")))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One line of a predictions or responses file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub encounter_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_outputs: Option<Vec<String>>,
}

impl PredictionRecord {
    pub fn new(encounter_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            encounter_id: encounter_id.into(),
            text: text.into(),
            stage_outputs: None,
        }
    }
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if !seen.insert(rec.encounter_id.clone()) {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("duplicate encounter_id `{}`", rec.encounter_id),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn by_id(records: &[PredictionRecord]) -> HashMap<&str, &PredictionRecord> {
    records
        .iter()
        .map(|r| (r.encounter_id.as_str(), r))
        .collect()
}

/// Scores predictions against the cases' weighted references, in case order.
/// Every case needs a prediction and every prediction a case.
pub fn evaluate_predictions(
    predictions: &[PredictionRecord],
    cases: &[Case],
    weights: &WeightConfig,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let preds = by_id(predictions);
    let known: HashSet<&str> = cases.iter().map(|c| c.encounter_id.as_str()).collect();
    if let Some(extra) = predictions
        .iter()
        .find(|p| !known.contains(p.encounter_id.as_str()))
    {
        return Err(Error::UnknownId(extra.encounter_id.clone()));
    }
    let mut hyps = Vec::with_capacity(cases.len());
    let mut refs = Vec::with_capacity(cases.len());
    for case in cases {
        let pred = preds.get(case.encounter_id.as_str()).ok_or_else(|| {
            Error::InvalidInput(format!("no prediction for case `{}`", case.encounter_id))
        })?;
        hyps.push(tokenize(&pred.text));
        refs.push(reference_set(case, weights)?);
    }
    delta_bleu(&hyps, &refs, cfg)
}

pub fn postprocess_predictions(
    predictions: &[PredictionRecord],
    cases: &[Case],
    dictionary: &DiseaseDictionary,
    cfg: &PostprocessConfig,
) -> Result<Vec<PredictionRecord>> {
    let cases: HashMap<&str, &Case> = cases.iter().map(|c| (c.encounter_id.as_str(), c)).collect();
    predictions
        .iter()
        .map(|p| {
            let case = cases
                .get(p.encounter_id.as_str())
                .ok_or_else(|| Error::UnknownId(p.encounter_id.clone()))?;
            Ok(PredictionRecord {
                encounter_id: p.encounter_id.clone(),
                text: postprocess(&p.text, case, dictionary, cfg)?,
                stage_outputs: p.stage_outputs.clone(),
            })
        })
        .collect()
}

pub fn classify_cases(
    retriever: &Retriever<'_>,
    cases: &[Case],
    query_images: &EmbeddingMatrix,
) -> Result<Vec<PredictionRecord>> {
    cases
        .iter()
        .map(|c| {
            Ok(PredictionRecord::new(
                &c.encounter_id,
                retriever.classify(c, query_images)?.label,
            ))
        })
        .collect()
}

pub fn llm_predictions(
    orchestrator: &Orchestrator<'_>,
    cases: &[Case],
    scenario: Scenario,
    concurrency: usize,
) -> Result<Vec<PredictionRecord>> {
    orchestrator
        .run_cases(cases, scenario, concurrency)
        .into_iter()
        .zip(cases)
        .map(|(out, case)| {
            let out = out?;
            Ok(PredictionRecord {
                encounter_id: case.encounter_id.clone(),
                text: out.final_label,
                stage_outputs: Some(out.stage_outputs),
            })
        })
        .collect()
}

fn image_source(section: &LlmSection) -> Arc<dyn ImageSource> {
    match &section.image_dir {
        Some(dir) => Arc::new(DirectoryImages { dir: dir.clone() }),
        None => Arc::new(IdDigests),
    }
}

fn live_transport(section: &LlmSection) -> Result<LiveTransport> {
    let mut cfg = section.live.clone();
    if cfg.base_url.is_empty() || cfg.model.is_empty() || cfg.api_key.is_empty() {
        let env = LiveConfig::from_env()?;
        for (field, value) in [
            (&mut cfg.base_url, env.base_url),
            (&mut cfg.model, env.model),
            (&mut cfg.api_key, env.api_key),
        ] {
            if field.is_empty() {
                *field = value;
            }
        }
    }
    Ok(LiveTransport::new(cfg, image_source(section))?)
}

/// Builds the transport for `section.mode`. Replay never opens a connection.
pub fn open_transport(section: &LlmSection) -> Result<Box<dyn Transport>> {
    let transcript = || {
        section
            .transcript
            .as_deref()
            .ok_or(Error::Transport(TransportError::Config(
                "a transcript path is required".into(),
            )))
    };
    Ok(match section.mode {
        LlmMode::Replay => Box::new(ReplayTransport::open_with_images(
            transcript()?,
            image_source(section),
        )?),
        LlmMode::Record => Box::new(RecordingTransport::with_images(
            Box::new(live_transport(section)?),
            transcript()?,
            image_source(section),
        )?),
        LlmMode::Live => Box::new(live_transport(section)?),
    })
}

/// Plain tab-separated table with `#` comment lines on top.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(&self.header.join("\t"));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

fn report_header() -> Vec<String> {
    EvalReport::HEADER.split('\t').map(String::from).collect()
}

fn report_cells(r: &EvalReport) -> Vec<String> {
    r.table_row().split('\t').map(String::from).collect()
}

fn yes_no(b: bool) -> String {
    if b { "Yes" } else { "No" }.to_owned()
}

const NOT_REPRODUCIBLE: &str = "published values were measured on the competition test set and are not reproducible without it";

/// Inputs shared by the retrieval and batch-size ablations.
pub struct RetrievalInputs {
    pub cases: Vec<Case>,
    pub pairs: Vec<Pair>,
    pub images: EmbeddingMatrix,
    pub texts: EmbeddingMatrix,
    pub query_images: EmbeddingMatrix,
    pub dictionary: DiseaseDictionary,
}

impl RetrievalInputs {
    pub fn labels(&self) -> BTreeMap<String, String> {
        label_map_from_pairs(&self.pairs)
    }

    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let cases = load_dataset(
            require(&cfg.corpus.eval, "corpus.eval")?,
            cfg.corpus.eval_split,
        )?;
        let pairs = read_pairs(require(&cfg.corpus.pairs, "corpus.pairs")?)?;
        let images = import_embeddings(require(&cfg.embeddings.images, "embeddings.images")?)?;
        let texts = import_embeddings(require(&cfg.embeddings.texts, "embeddings.texts")?)?;
        let query_images = match &cfg.embeddings.query_images {
            Some(p) => import_embeddings(p)?,
            None => images.clone(),
        };
        let dictionary = load_dictionary(cfg, &pairs)?;
        Ok(Self {
            cases,
            pairs,
            images,
            texts,
            query_images,
            dictionary,
        })
    }
}

/// Dictionary file if configured, else gold labels of the train split, else
/// the pair labels.
pub fn load_dictionary(cfg: &ExperimentConfig, pairs: &[Pair]) -> Result<DiseaseDictionary> {
    if let Some(p) = &cfg.corpus.dictionary {
        return DiseaseDictionary::load(p);
    }
    if let Some(p) = &cfg.corpus.train {
        return build_disease_dictionary(&load_dataset(p, Split::Train)?);
    }
    Ok(DiseaseDictionary::from_names(
        pairs.iter().map(|p| p.label.as_str()),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalRow {
    pub use_augmented_variants: bool,
    pub pca: bool,
    pub modality: Modality,
    pub report: EvalReport,
}

/// (augmented variants, PCA space, modality), in table order.
pub const RETRIEVAL_GRID: [(bool, bool, Modality); 5] = [
    (true, true, Modality::ImageImage),
    (false, false, Modality::ImageText),
    (false, true, Modality::ImageText),
    (false, false, Modality::ImageImage),
    (false, true, Modality::ImageImage),
];

const RETRIEVAL_PUBLISHED: [f64; 5] = [8.744, 9.262, 6.279, 10.119, 8.404];

fn predict_and_score(
    inputs: &RetrievalInputs,
    model: &JointEmbeddingModel,
    retrieval: &RetrievalConfig,
    evaluate: &EvaluateSection,
) -> Result<EvalReport> {
    let retriever = Retriever::new(
        model,
        &inputs.images,
        &inputs.texts,
        &inputs.labels(),
        retrieval,
    )?;
    let raw = classify_cases(&retriever, &inputs.cases, &inputs.query_images)?;
    let responses = postprocess_predictions(
        &raw,
        &inputs.cases,
        &inputs.dictionary,
        &PostprocessConfig::both(),
    )?;
    evaluate_predictions(
        &responses,
        &inputs.cases,
        &evaluate.weights,
        &evaluate.eval_config(),
    )
}

/// Scores the five retrieval configurations with both postprocessing
/// switches on. Other retrieval settings come from `base`.
pub fn ablate_retrieval(
    inputs: &RetrievalInputs,
    model: &JointEmbeddingModel,
    base: &RetrievalConfig,
    evaluate: &EvaluateSection,
) -> Result<Vec<RetrievalRow>> {
    RETRIEVAL_GRID
        .iter()
        .map(|&(aug, pca, modality)| {
            let cfg = RetrievalConfig {
                use_augmented_variants: aug,
                pca,
                modality,
                ..base.clone()
            };
            Ok(RetrievalRow {
                use_augmented_variants: aug,
                pca,
                modality,
                report: predict_and_score(inputs, model, &cfg, evaluate)?,
            })
        })
        .collect()
}

pub fn retrieval_table(rows: &[RetrievalRow]) -> Table {
    let mut comments = vec![NOT_REPRODUCIBLE.to_owned()];
    for ((aug, pca, m), v) in RETRIEVAL_GRID.iter().zip(RETRIEVAL_PUBLISHED) {
        comments.push(format!(
            "reference dBLEU {} / {} / {m}: {v:.3}",
            yes_no(*aug),
            yes_no(*pca)
        ));
    }
    let mut header: Vec<String> = ["Random Aug", "PCA Space", "Query-Reference"]
        .map(String::from)
        .to_vec();
    header.extend(report_header());
    let rows = rows
        .iter()
        .map(|r| {
            let mut cells = vec![
                yes_no(r.use_augmented_variants),
                yes_no(r.pca),
                r.modality.to_string(),
            ];
            cells.extend(report_cells(&r.report));
            cells
        })
        .collect();
    Table {
        comments,
        header,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PostprocessRow {
    pub solution: String,
    pub word_matching: EvalReport,
    pub sentence_structure: EvalReport,
    pub both: EvalReport,
}

/// Scores one prediction set under word matching only, sentence structure
/// only, and both.
pub fn ablate_postprocess(
    solution: &str,
    predictions: &[PredictionRecord],
    cases: &[Case],
    dictionary: &DiseaseDictionary,
    evaluate: &EvaluateSection,
) -> Result<PostprocessRow> {
    let score = |sentence: bool, word: bool| {
        let responses = postprocess_predictions(
            predictions,
            cases,
            dictionary,
            &PostprocessConfig::new(sentence, word),
        )?;
        evaluate_predictions(
            &responses,
            cases,
            &evaluate.weights,
            &evaluate.eval_config(),
        )
    };
    Ok(PostprocessRow {
        solution: solution.to_owned(),
        word_matching: score(false, true)?,
        sentence_structure: score(true, false)?,
        both: score(true, true)?,
    })
}

pub fn postprocess_table(rows: &[PostprocessRow]) -> Table {
    let comments = vec![
        NOT_REPRODUCIBLE.to_owned(),
        "reference dBLEU two-call LLM solution: 3.580 / 5.741 / 10.415".to_owned(),
        "reference dBLEU joint-embedding solution (batch 256): 3.334 / 5.092 / 10.119".to_owned(),
    ];
    let header = ["Solution", "Word Matching", "Sentence Structure", "Both"]
        .map(String::from)
        .to_vec();
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                r.solution.clone(),
                format!("{:.3}", r.word_matching.dbleu),
                format!("{:.3}", r.sentence_structure.dbleu),
                format!("{:.3}", r.both.dbleu),
            ]
        })
        .collect();
    Table {
        comments,
        header,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSizeRow {
    pub batch_size: usize,
    pub report: EvalReport,
    pub loss_trace: Vec<f64>,
    pub model: JointEmbeddingModel,
}

/// Trains one model per batch size with the same seed, then classifies,
/// postprocesses and scores. Loss traces go to `trace_dir` when given.
pub fn ablate_batch_size(
    inputs: &RetrievalInputs,
    train_cfg: &TrainConfig,
    batch_sizes: &[usize],
    retrieval: &RetrievalConfig,
    evaluate: &EvaluateSection,
    trace_dir: Option<&Path>,
) -> Result<Vec<BatchSizeRow>> {
    if batch_sizes.is_empty() {
        return Err(Error::Config("no batch sizes given".into()));
    }
    if let Some(&b) = batch_sizes.iter().find(|&&b| b > inputs.pairs.len()) {
        return Err(Error::Config(format!(
            "batch size {b} exceeds the {} available pairs",
            inputs.pairs.len()
        )));
    }
    batch_sizes
        .iter()
        .map(|&batch_size| {
            let cfg = TrainConfig {
                batch_size,
                ..train_cfg.clone()
            };
            let out = train(&cfg, &inputs.images, &inputs.texts, &inputs.pairs)?;
            if let Some(dir) = trace_dir {
                write_loss_trace(
                    dir.join(format!("loss_trace_batch{batch_size}.csv")),
                    &out.loss_trace,
                )?;
            }
            Ok(BatchSizeRow {
                batch_size,
                report: predict_and_score(inputs, &out.model, retrieval, evaluate)?,
                loss_trace: out.loss_trace,
                model: out.model,
            })
        })
        .collect()
}

pub fn batch_size_table(rows: &[BatchSizeRow]) -> Table {
    let comments = vec![
        NOT_REPRODUCIBLE.to_owned(),
        "reference dBLEU batch 128: 7.848, batch 256: 8.404, batch 512: 8.187".to_owned(),
    ];
    let mut header = vec!["Model".to_owned()];
    header.extend(report_header());
    let rows = rows
        .iter()
        .map(|r| {
            let mut cells = vec![format!("batch {}", r.batch_size)];
            cells.extend(report_cells(&r.report));
            cells
        })
        .collect();
    Table {
        comments,
        header,
        rows,
    }
}

/// Model from `ablation.model`, or trained from the `train` section.
pub fn obtain_model(
    cfg: &ExperimentConfig,
    inputs: &RetrievalInputs,
) -> Result<JointEmbeddingModel> {
    match &cfg.ablation.model {
        Some(p) => Ok(load_model(p)?.0),
        None => Ok(train(&cfg.train, &inputs.images, &inputs.texts, &inputs.pairs)?.model),
    }
}

/// Runs the retrieval grid and writes the snapshot, `ablate_retrieval.tsv`
/// and `ablate_retrieval.json` into the output directory.
pub fn run_ablate_retrieval(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.write_snapshot()?;
    let inputs = RetrievalInputs::load(cfg)?;
    let model = obtain_model(cfg, &inputs)?;
    let rows = ablate_retrieval(&inputs, &model, &cfg.retrieval, &cfg.evaluate)?;
    let table = retrieval_table(&rows);
    table.write(cfg.output_dir.join("ablate_retrieval.tsv"))?;
    write_json(cfg.output_dir.join("ablate_retrieval.json"), &rows)?;
    Ok(table)
}

pub fn run_ablate_postprocess(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.write_snapshot()?;
    if cfg.ablation.predictions.is_empty() {
        return Err(Error::Config(
            "`ablation.predictions` lists no prediction files".into(),
        ));
    }
    let cases = load_dataset(
        require(&cfg.corpus.eval, "corpus.eval")?,
        cfg.corpus.eval_split,
    )?;
    let pairs = match &cfg.corpus.pairs {
        Some(p) => read_pairs(p)?,
        None => Vec::new(),
    };
    let dictionary = load_dictionary(cfg, &pairs)?;
    let rows = cfg
        .ablation
        .predictions
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(
                || p.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            );
            ablate_postprocess(
                &name,
                &read_predictions(p)?,
                &cases,
                &dictionary,
                &cfg.evaluate,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let table = postprocess_table(&rows);
    table.write(cfg.output_dir.join("ablate_postprocess.tsv"))?;
    write_json(cfg.output_dir.join("ablate_postprocess.json"), &rows)?;
    Ok(table)
}

pub fn run_ablate_batch_size(cfg: &ExperimentConfig) -> Result<Table> {
    cfg.write_snapshot()?;
    let inputs = RetrievalInputs::load(cfg)?;
    let rows = ablate_batch_size(
        &inputs,
        &cfg.train,
        &cfg.ablation.batch_sizes,
        &cfg.retrieval,
        &cfg.evaluate,
        Some(&cfg.output_dir),
    )?;
    let table = batch_size_table(&rows);
    table.write(cfg.output_dir.join("ablate_batch_size.tsv"))?;
    let reports: Vec<(usize, &EvalReport)> =
        rows.iter().map(|r| (r.batch_size, &r.report)).collect();
    write_json(cfg.output_dir.join("ablate_batch_size.json"), &reports)?;
    Ok(table)
}
