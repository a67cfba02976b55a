//! Stage-by-stage orchestration of the labeling and training pipeline.
//!
//! Each stage writes its artifact under `<out>/<language>/` so the CLI can
//! run stages one at a time; [`run_pipeline`] chains them in memory.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use depsev_core::bdi_lexicon::{build_lexicon, english_questionnaire, load_questionnaire};
use depsev_core::corpus::{ingest_corpus, load_stoplist, preprocess};
use depsev_core::dataset::{
    export_dataset, shuffle_split, smote_oversample, DatasetSplits, ExportRecord, LabeledId,
    LabeledVector,
};
use depsev_core::evaluation::{confusion, metrics, render_report, EvalReport, ReportFormat};
use depsev_core::features::fit_tfidf;
use depsev_core::labeling::{
    keyword_label, read_expert_labels, record_expert_label, zeroshot_label, Agreement,
    FusionOutcome, HttpZeroShotClient, LabelVote, MemoryAnnotationStore, VoteSource, VoteTable,
    ZeroShotClassifier,
};
use depsev_core::models::{load_model, save_model, train, ModelKind, TrainedModel};
use depsev_core::{
    BdiLexicon, CleanDocument, CoarseLabel, FusedLabel, RawPost, SeverityBands, SeverityLabel,
    StopList, TfidfModel,
};

use crate::cache::CachedClassifier;
use crate::config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Lexicon,
    Keyword,
    Zeroshot,
    Expert,
    Fuse,
    Split,
    Features,
    Smote,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Lexicon => "lexicon",
            Stage::Keyword => "keyword",
            Stage::Zeroshot => "zeroshot",
            Stage::Expert => "expert",
            Stage::Fuse => "fuse",
            Stage::Split => "split",
            Stage::Features => "features",
            Stage::Smote => "smote",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

/// Machine-readable failure: the stage that stopped and a short cause kind.
#[derive(Debug, Clone, Serialize, thiserror::Error)]
#[error("{} failed ({kind}): {message}", stage.as_str())]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: String,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: &str, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind: kind.to_string(),
            message: message.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

trait StageContext<T> {
    fn at(self, stage: Stage, kind: &str) -> Result<T>;
}

impl<T, E: fmt::Display> StageContext<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage, kind: &str) -> Result<T> {
        self.map_err(|e| PipelineError::new(stage, kind, e))
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T], stage: Stage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(stage, "io")?;
    }
    let mut out = BufWriter::new(File::create(path).at(stage, "io")?);
    for item in items {
        serde_json::to_writer(&mut out, item).at(stage, "io")?;
        out.write_all(b"\n").at(stage, "io")?;
    }
    out.flush().at(stage, "io")
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| {
        PipelineError::new(stage, "missing_input", format!("{}: {e}", path.display()))
    })?;
    let mut items = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(stage, "io")?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| {
            PipelineError::new(
                stage,
                "malformed_input",
                format!("{}:{}: {e}", path.display(), n + 1),
            )
        })?);
    }
    Ok(items)
}

fn write_text(path: &Path, text: &str, stage: Stage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(stage, "io")?;
    }
    fs::write(path, text).at(stage, "io")
}

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn lang(&self, language: &str) -> PathBuf {
        self.root.join(language)
    }
    pub fn clean(&self, language: &str) -> PathBuf {
        self.lang(language).join("clean.jsonl")
    }
    pub fn lexicon(&self, language: &str) -> PathBuf {
        self.lang(language).join("lexicon.tsv")
    }
    pub fn votes(&self, language: &str, source: VoteSource) -> PathBuf {
        self.lang(language)
            .join("votes")
            .join(format!("{}.jsonl", source.as_str()))
    }
    pub fn fused(&self, language: &str) -> PathBuf {
        self.lang(language).join("fused.jsonl")
    }
    pub fn dataset(&self, language: &str) -> PathBuf {
        self.lang(language).join("dataset")
    }
    pub fn tfidf(&self, language: &str) -> PathBuf {
        self.lang(language).join("tfidf.txt")
    }
    pub fn smote(&self, language: &str) -> PathBuf {
        self.lang(language).join("smote").join("train.jsonl")
    }
    pub fn model(&self, language: &str, kind: ModelKind) -> PathBuf {
        self.lang(language)
            .join("models")
            .join(format!("{}.model", kind.as_str()))
    }
    pub fn report(&self, language: &str, part: &str, format: ReportFormat) -> PathBuf {
        let ext = match format {
            ReportFormat::Text => "txt",
            ReportFormat::Machine => "jsonl",
        };
        self.lang(language)
            .join("reports")
            .join(format!("{part}.{ext}"))
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

/// Per-model outcome recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub kind: ModelKind,
    pub seed: u64,
    pub hyperparameters: BTreeMap<String, f64>,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSummary {
    pub documents: usize,
    pub agreement: BTreeMap<String, usize>,
    pub fused_labels: BTreeMap<SeverityLabel, usize>,
    pub split: BTreeMap<String, BTreeMap<CoarseLabel, usize>>,
    pub smote: BTreeMap<CoarseLabel, usize>,
    pub n_features: usize,
    pub models: Vec<ModelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub timestamp: i64,
    pub blind_mode: bool,
    pub smote_k: usize,
    pub zeroshot_endpoint_configured: bool,
    pub languages: BTreeMap<String, LanguageSummary>,
}

/// Trained models for one language, in configuration order.
pub struct TrainedSet {
    pub models: Vec<TrainedModel>,
    pub train_accuracy: Vec<f64>,
}

pub struct Pipeline<'a> {
    pub config: &'a PipelineConfig,
    pub layout: Layout,
    classifier: Option<Arc<dyn ZeroShotClassifier>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a PipelineConfig) -> Self {
        Self {
            config,
            layout: Layout {
                root: config.out_dir(),
            },
            classifier: None,
        }
    }

    /// Uses `classifier` instead of the configured HTTP endpoint.
    pub fn with_classifier(mut self, classifier: Arc<dyn ZeroShotClassifier>) -> Self {
        self.classifier = Some(classifier);
        self
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.config.languages.keys().map(String::as_str)
    }

    pub fn stoplist(&self, language: &str) -> Result<StopList> {
        let lc = &self.config.languages[language];
        let path = lc.stoplist.as_ref().map(|p| self.config.path(p));
        load_stoplist(language, path.as_deref()).at(Stage::Ingest, "stoplist")
    }

    pub fn bands(&self) -> Result<SeverityBands> {
        match &self.config.bands {
            Some(p) => SeverityBands::load(&self.config.path(p)).at(Stage::Keyword, "bands"),
            None => Ok(SeverityBands::default()),
        }
    }

    /// Every configured-language post, in corpus order. Posts in other
    /// languages are skipped with a warning.
    pub fn raw_posts(&self) -> Result<BTreeMap<String, Vec<RawPost>>> {
        let posts =
            ingest_corpus(&self.config.path(&self.config.corpus)).at(Stage::Ingest, "corpus")?;
        let mut by_lang: BTreeMap<String, Vec<RawPost>> = self
            .languages()
            .map(|l| (l.to_string(), Vec::new()))
            .collect();
        let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
        for post in posts {
            match by_lang.get_mut(&post.language) {
                Some(list) => list.push(post),
                None => *skipped.entry(post.language.clone()).or_default() += 1,
            }
        }
        for (lang, n) in skipped {
            warn!("skipping {n} posts in unconfigured language {lang:?}");
        }
        Ok(by_lang)
    }

    pub fn ingest(&self) -> Result<BTreeMap<String, Vec<CleanDocument>>> {
        let mut out = BTreeMap::new();
        for (lang, posts) in self.raw_posts()? {
            let stops = self.stoplist(&lang)?;
            let docs = posts
                .iter()
                .map(|p| preprocess(p, &stops))
                .collect::<std::result::Result<Vec<_>, _>>()
                .at(Stage::Ingest, "preprocess")?;
            let empty = docs.iter().filter(|d| d.is_empty()).count();
            if empty > 0 {
                warn!("{empty} {lang} documents are empty after preprocessing");
            }
            write_jsonl(&self.layout.clean(&lang), &docs, Stage::Ingest)?;
            info!("ingested {} {lang} documents", docs.len());
            out.insert(lang, docs);
        }
        Ok(out)
    }

    pub fn load_clean(&self, language: &str) -> Result<Vec<CleanDocument>> {
        read_jsonl(&self.layout.clean(language), Stage::Ingest)
    }

    pub fn lexicon(&self, language: &str) -> Result<BdiLexicon> {
        let lc = &self.config.languages[language];
        let items = match &lc.questionnaire {
            Some(p) => {
                load_questionnaire(&self.config.path(p)).at(Stage::Lexicon, "questionnaire")?
            }
            None => english_questionnaire(),
        };
        let stops = self.stoplist(language)?;
        let lexicon = build_lexicon(&items, &stops).at(Stage::Lexicon, "lexicon")?;
        let mut buf = Vec::new();
        lexicon.write_tsv(&mut buf).at(Stage::Lexicon, "io")?;
        write_text(
            &self.layout.lexicon(language),
            &String::from_utf8(buf).expect("utf-8 lexicon"),
            Stage::Lexicon,
        )?;
        Ok(lexicon)
    }

    pub fn keyword_votes(
        &self,
        language: &str,
        docs: &[CleanDocument],
        lexicon: &BdiLexicon,
    ) -> Result<Vec<LabelVote>> {
        let bands = self.bands()?;
        let votes = docs
            .iter()
            .map(|d| keyword_label(d, lexicon, &bands, self.config.timestamp))
            .collect::<std::result::Result<Vec<_>, _>>()
            .at(Stage::Keyword, "labeling")?;
        write_jsonl(
            &self.layout.votes(language, VoteSource::Keyword),
            &votes,
            Stage::Keyword,
        )?;
        Ok(votes)
    }

    /// The injected classifier, or a cached HTTP client for the configured
    /// endpoint.
    pub fn classifier(&self) -> Result<Arc<dyn ZeroShotClassifier>> {
        let inner: Arc<dyn ZeroShotClassifier> = match &self.classifier {
            Some(c) => c.clone(),
            None => {
                let endpoint = self.config.zeroshot_endpoint().ok_or_else(|| {
                    PipelineError::new(
                        Stage::Zeroshot,
                        "unconfigured",
                        "no zero-shot endpoint; set ZEROSHOT_ENDPOINT or zeroshot.endpoint",
                    )
                })?;
                Arc::new(HttpZeroShotClient::new(
                    endpoint,
                    self.config.zeroshot_token(),
                    self.config.zeroshot.retry,
                ))
            }
        };
        let cache_path = match &self.config.zeroshot.cache {
            Some(p) => self.config.path(p),
            None => self.layout.root.join("zeroshot_cache.jsonl"),
        };
        if let Some(dir) = cache_path.parent() {
            fs::create_dir_all(dir).at(Stage::Zeroshot, "io")?;
        }
        let cached =
            CachedClassifier::open(inner, Some(&cache_path)).at(Stage::Zeroshot, "cache")?;
        Ok(Arc::new(cached))
    }

    pub fn zeroshot_votes(&self, language: &str, docs: &[CleanDocument]) -> Result<Vec<LabelVote>> {
        let classifier = self.classifier()?;
        let votes = docs
            .par_iter()
            .map(|d| {
                zeroshot_label(
                    d,
                    classifier.as_ref(),
                    &SeverityLabel::ALL,
                    self.config.timestamp,
                )
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .at(Stage::Zeroshot, "labeling")?;
        write_jsonl(
            &self.layout.votes(language, VoteSource::Zeroshot),
            &votes,
            Stage::Zeroshot,
        )?;
        Ok(votes)
    }

    /// Effective expert votes for this language's documents. Rows naming
    /// documents of another configured language are ignored; rows naming
    /// unknown documents are an error.
    pub fn expert_votes(
        &self,
        language: &str,
        docs: &[CleanDocument],
        all_ids: &HashMap<String, String>,
    ) -> Result<Vec<LabelVote>> {
        let mut votes = Vec::new();
        if let Some(path) = &self.config.expert_labels {
            let file = File::open(self.config.path(path)).at(Stage::Expert, "io")?;
            let annotations = read_expert_labels(file).at(Stage::Expert, "labels")?;
            let mut store = MemoryAnnotationStore::new(docs.iter().map(|d| d.id.clone()));
            for a in annotations {
                match all_ids.get(&a.doc_id) {
                    Some(lang) if lang == language => {
                        record_expert_label(a, &mut store).at(Stage::Expert, "labels")?;
                    }
                    Some(_) => {}
                    None => {
                        return Err(PipelineError::new(
                            Stage::Expert,
                            "unknown_document",
                            format!("expert label for unknown document {:?}", a.doc_id),
                        ))
                    }
                }
            }
            votes = store.effective_all().iter().map(|a| a.to_vote()).collect();
        }
        write_jsonl(
            &self.layout.votes(language, VoteSource::Expert),
            &votes,
            Stage::Expert,
        )?;
        Ok(votes)
    }

    /// Fuses the three vote sets. Any document lacking a vote stops the run
    /// with `pending: N`.
    pub fn fuse(
        &self,
        language: &str,
        docs: &[CleanDocument],
        votes: [Vec<LabelVote>; 3],
    ) -> Result<FusionOutcome> {
        let mut table = VoteTable::with_documents(docs.iter().map(|d| d.id.clone()));
        for vote in votes.into_iter().flatten() {
            table.insert(vote).at(Stage::Fuse, "labeling")?;
        }
        let outcome = table
            .fuse_ready(Some(&self.config.fusion))
            .at(Stage::Fuse, "labeling")?;
        if !outcome.pending.is_empty() {
            for p in outcome.pending.iter().take(10) {
                warn!("{} lacks {:?} votes", p.doc_id, p.missing);
            }
            return Err(PipelineError::new(
                Stage::Fuse,
                "pending",
                format!("pending: {}", outcome.pending.len()),
            ));
        }
        write_jsonl(&self.layout.fused(language), &outcome.fused, Stage::Fuse)?;
        Ok(outcome)
    }

    pub fn load_votes(&self, language: &str, source: VoteSource) -> Result<Vec<LabelVote>> {
        let stage = match source {
            VoteSource::Keyword => Stage::Keyword,
            VoteSource::Zeroshot => Stage::Zeroshot,
            VoteSource::Expert => Stage::Expert,
        };
        read_jsonl(&self.layout.votes(language, source), stage)
    }

    /// Merges fused labels into the four training classes, splits, and
    /// exports the dataset.
    pub fn split(
        &self,
        language: &str,
        fused: &[FusedLabel],
        docs: &[CleanDocument],
    ) -> Result<DatasetSplits> {
        let population: Vec<LabeledId> = fused
            .iter()
            .map(|f| LabeledId {
                doc_id: f.doc_id.clone(),
                label: self.config.merge.get(f.label),
            })
            .collect();
        let spec = self
            .config
            .split_spec(language)
            .at(Stage::Split, "config")?;
        let splits = shuffle_split(&population, &spec, language).at(Stage::Split, "dataset")?;
        let by_id: HashMap<String, CleanDocument> =
            docs.iter().map(|d| (d.id.clone(), d.clone())).collect();
        export_dataset(
            &splits,
            &by_id,
            &self.layout.dataset(language),
            Some(self.config.smote_k),
        )
        .at(Stage::Split, "dataset")?;
        Ok(splits)
    }

    pub fn load_split_part(&self, language: &str, part: &str) -> Result<Vec<ExportRecord>> {
        read_jsonl(
            &self.layout.dataset(language).join(format!("{part}.jsonl")),
            Stage::Split,
        )
    }

    /// Fits TF-IDF on the training part only and oversamples it.
    pub fn features_and_smote(
        &self,
        language: &str,
        train_part: &[ExportRecord],
    ) -> Result<(TfidfModel, Vec<LabeledVector>)> {
        let docs: Vec<CleanDocument> = train_part.iter().map(record_document).collect();
        let tfidf = fit_tfidf(&docs).at(Stage::Features, "features")?;
        let mut buf = Vec::new();
        tfidf.write_text(&mut buf).at(Stage::Features, "io")?;
        write_text(
            &self.layout.tfidf(language),
            &String::from_utf8(buf).expect("utf-8 tf-idf"),
            Stage::Features,
        )?;

        let real: Vec<LabeledVector> = train_part
            .iter()
            .zip(&docs)
            .map(|(r, d)| LabeledVector::real(r.id.clone(), tfidf.transform(d), r.label))
            .collect();
        let balanced = smote_oversample(&real, self.config.smote_k, self.config.seed)
            .at(Stage::Smote, "dataset")?;
        write_jsonl(&self.layout.smote(language), &balanced, Stage::Smote)?;
        Ok((tfidf, balanced))
    }

    pub fn load_tfidf(&self, language: &str) -> Result<TfidfModel> {
        let file = File::open(self.layout.tfidf(language)).at(Stage::Features, "missing_input")?;
        TfidfModel::read_text(BufReader::new(file)).at(Stage::Features, "malformed_input")
    }

    pub fn load_smote(&self, language: &str) -> Result<Vec<LabeledVector>> {
        read_jsonl(&self.layout.smote(language), Stage::Smote)
    }

    /// Trains every configured model. Training accuracy is measured on the
    /// real (non-synthetic) training points.
    pub fn train(
        &self,
        language: &str,
        train_set: &[LabeledVector],
        n_features: usize,
    ) -> Result<TrainedSet> {
        let specs = self.config.model_specs().at(Stage::Train, "config")?;
        let x: Vec<_> = train_set.iter().map(|v| v.vector.clone()).collect();
        let y: Vec<_> = train_set.iter().map(|v| v.label).collect();
        let real: Vec<&LabeledVector> = train_set.iter().filter(|v| !v.synthetic).collect();
        let real_x: Vec<_> = real.iter().map(|v| v.vector.clone()).collect();
        let real_y: Vec<_> = real.iter().map(|v| v.label).collect();

        let mut set = TrainedSet {
            models: Vec::new(),
            train_accuracy: Vec::new(),
        };
        if let Some(dir) = self.layout.model(language, ModelKind::NaiveBayes).parent() {
            fs::create_dir_all(dir).at(Stage::Train, "io")?;
        }
        for spec in &specs {
            let model = train(&x, &y, n_features, spec).at(Stage::Train, "model")?;
            save_model(&model, &self.layout.model(language, spec.kind())).at(Stage::Train, "io")?;
            let predicted = model.predict_batch(&real_x);
            let correct = predicted
                .iter()
                .zip(&real_y)
                .filter(|(p, t)| p == t)
                .count();
            let accuracy = correct as f64 / real_y.len().max(1) as f64;
            info!(
                "{language} {}: training accuracy {accuracy:.4}",
                spec.kind().abbreviation()
            );
            set.models.push(model);
            set.train_accuracy.push(accuracy);
        }
        Ok(set)
    }

    pub fn load_models(&self, language: &str) -> Result<Vec<TrainedModel>> {
        self.config
            .model_specs()
            .at(Stage::Evaluate, "config")?
            .iter()
            .map(|s| {
                load_model(&self.layout.model(language, s.kind())).at(Stage::Evaluate, "model")
            })
            .collect()
    }

    /// Scores every model on one held-out part and writes both report forms.
    /// Returns `None` for an empty part.
    pub fn evaluate(
        &self,
        language: &str,
        part: &str,
        records: &[ExportRecord],
        tfidf: &TfidfModel,
        models: &[TrainedModel],
    ) -> Result<Option<Vec<EvalReport>>> {
        if records.is_empty() {
            warn!("{language} {part} part is empty; no report written");
            return Ok(None);
        }
        let x: Vec<_> = records
            .iter()
            .map(|r| tfidf.transform(&record_document(r)))
            .collect();
        let y: Vec<_> = records.iter().map(|r| r.label).collect();
        let mut classes: Vec<CoarseLabel> = models
            .iter()
            .flat_map(|m| m.classes.iter().copied())
            .chain(y.iter().copied())
            .collect();
        classes.sort();
        classes.dedup();

        let mut reports = Vec::new();
        for model in models {
            let predicted = model.predict_batch(&x);
            let cm = confusion(&y, &predicted, &classes).at(Stage::Evaluate, "evaluation")?;
            reports.push(metrics(&cm, model.kind().abbreviation(), language));
        }
        for format in [ReportFormat::Text, ReportFormat::Machine] {
            let rendered = render_report(&reports, format).at(Stage::Report, "evaluation")?;
            write_text(
                &self.layout.report(language, part, format),
                &rendered,
                Stage::Report,
            )?;
        }
        Ok(Some(reports))
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<()> {
        let mut text = serde_json::to_string_pretty(manifest).at(Stage::Report, "io")?;
        text.push('\n');
        write_text(&self.layout.manifest(), &text, Stage::Report)
    }

    pub fn manifest_header(&self) -> RunManifest {
        RunManifest {
            config_hash: self.config.hash(),
            seed: self.config.seed,
            timestamp: self.config.timestamp,
            blind_mode: self.config.blind_mode,
            smote_k: self.config.smote_k,
            zeroshot_endpoint_configured: self.config.zeroshot_endpoint().is_some(),
            languages: BTreeMap::new(),
        }
    }
}

/// A dataset record viewed as a cleaned document.
pub fn record_document(r: &ExportRecord) -> CleanDocument {
    CleanDocument {
        id: r.id.clone(),
        language: r.language.clone(),
        text: r.text.clone(),
        token_count: r.text.split_whitespace().count(),
    }
}

fn agreement_counts(fused: &[FusedLabel]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = [
        Agreement::Unanimous,
        Agreement::Majority,
        Agreement::ExpertFallback,
    ]
    .iter()
    .map(|a| (a.as_str().to_string(), 0))
    .collect();
    for f in fused {
        *counts
            .get_mut(f.agreement.as_str())
            .expect("known agreement") += 1;
    }
    counts
}

fn class_counts<'a>(labels: impl Iterator<Item = &'a CoarseLabel>) -> BTreeMap<CoarseLabel, usize> {
    let mut counts = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_default() += 1;
    }
    counts
}

/// Runs every stage for every configured language and writes the manifest.
pub fn run_pipeline(pipeline: &Pipeline<'_>) -> Result<RunManifest> {
    let mut manifest = pipeline.manifest_header();
    let documents = pipeline.ingest()?;
    let all_ids: HashMap<String, String> = documents
        .iter()
        .flat_map(|(lang, docs)| docs.iter().map(move |d| (d.id.clone(), lang.clone())))
        .collect();

    for (lang, docs) in &documents {
        let lexicon = pipeline.lexicon(lang)?;
        let keyword = pipeline.keyword_votes(lang, docs, &lexicon)?;
        let zeroshot = pipeline.zeroshot_votes(lang, docs)?;
        let expert = pipeline.expert_votes(lang, docs, &all_ids)?;
        let outcome = pipeline.fuse(lang, docs, [keyword, zeroshot, expert])?;
        let splits = pipeline.split(lang, &outcome.fused, docs)?;

        let train_part = pipeline.load_split_part(lang, "train")?;
        let (tfidf, balanced) = pipeline.features_and_smote(lang, &train_part)?;
        let n_features = tfidf.vocabulary_len();
        let trained = pipeline.train(lang, &balanced, n_features)?;

        let mut accuracy: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for part in ["validation", "test"] {
            let records = pipeline.load_split_part(lang, part)?;
            if let Some(reports) =
                pipeline.evaluate(lang, part, &records, &tfidf, &trained.models)?
            {
                accuracy.insert(part, reports.iter().map(|r| r.accuracy).collect());
            }
        }

        let models = trained
            .models
            .iter()
            .enumerate()
            .map(|(i, m)| ModelSummary {
                kind: m.kind(),
                seed: m.spec.seed(),
                hyperparameters: m.spec.resolved().clone(),
                train_accuracy: trained.train_accuracy[i],
                validation_accuracy: accuracy.get("validation").map(|a| a[i]),
                test_accuracy: accuracy.get("test").map(|a| a[i]),
            })
            .collect();
        let mut fused_labels = BTreeMap::new();
        for f in &outcome.fused {
            *fused_labels.entry(f.label).or_default() += 1;
        }
        manifest.languages.insert(
            lang.clone(),
            LanguageSummary {
                documents: docs.len(),
                agreement: agreement_counts(&outcome.fused),
                fused_labels,
                split: [
                    ("train", &splits.train),
                    ("validation", &splits.validation),
                    ("test", &splits.test),
                ]
                .into_iter()
                .map(|(name, part)| (name.to_string(), DatasetSplits::counts(part)))
                .collect(),
                smote: class_counts(balanced.iter().map(|v| &v.label)),
                n_features,
                models,
            },
        );
    }
    pipeline.write_manifest(&manifest)?;
    Ok(manifest)
}
