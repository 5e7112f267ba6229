use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use kgfuse::embeddings::{EmbeddingProvider, FileEmbeddingStore, StoreMetadata, ToyAdditiveEmbedder};
use kgfuse::gkstore::{initial_embeddings, train_gk as fit_gk, GkStore, GkTrainConfig, InitialKey};
use kgfuse::jsonl;
use kgfuse::numerics::Activation;
use kgfuse::relweights::{
    build_masked_sentences, correct_triples, normalize_weights, score_pairs, Entity, PairMode, RelationType,
    Schema, Triple, Vocabulary, WeightRow,
};
use kgfuse::synthetic::{generate, SyntheticSpec};
use kgfuse::taskfusion::{train_task as fit_task, TaskConfig, TaskDocument, TaskModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::merge;
use crate::report::{default_report_path, RunReport};
use crate::CliError;

/// Options shared by every command.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CommonArgs {
    /// Seed for every random choice of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// `key = value` file of defaults for this command's options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run report path; defaults next to the main output.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl CommonArgs {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn apply_threads(&self) -> Result<(), CliError> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(CliError::usage("--threads must be positive"));
            }
            // The pool can only be configured once per process.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(())
    }
}

/// Embedding source: a KGXE file or the deterministic toy embedder.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ProviderArgs {
    /// KGXE embedding file keyed by text.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Use the toy additive embedder.
    #[arg(long)]
    pub toy: bool,
    #[arg(long)]
    pub toy_dim: Option<usize>,
    /// Defaults to --seed.
    #[arg(long)]
    pub toy_seed: Option<u64>,
}

impl ProviderArgs {
    fn build(&self, seed: u64, report: &mut RunReport) -> Result<Box<dyn EmbeddingProvider>, CliError> {
        match (&self.embeddings, self.toy) {
            (Some(_), true) => Err(CliError::usage("use either --embeddings or --toy, not both")),
            (Some(path), false) => {
                let bytes = report.read_input(path)?;
                Ok(Box::new(FileEmbeddingStore::decode(&bytes)?))
            }
            (None, true) => Ok(Box::new(ToyAdditiveEmbedder::new(
                self.toy_dim.unwrap_or(64),
                self.toy_seed.unwrap_or(seed),
            )?)),
            (None, false) => Err(CliError::usage("an embedding source is required: --embeddings FILE or --toy")),
        }
    }
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}

fn read_jsonl<T: DeserializeOwned>(report: &mut RunReport, path: &Path) -> Result<Vec<T>, CliError> {
    let bytes = report.read_input(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::data(format!("{} is not UTF-8", path.display())))?;
    jsonl::parse(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn read_documents(report: &mut RunReport, path: &Path) -> Result<Vec<TaskDocument>, CliError> {
    let docs: Vec<TaskDocument> = read_jsonl(report, path)?;
    for d in &docs {
        d.validate().map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    }
    Ok(docs)
}

fn load_vocab_schema(
    report: &mut RunReport,
    vocab: &Path,
    relations: &Path,
) -> Result<(Vocabulary, Schema), CliError> {
    let entities: Vec<Entity> = read_jsonl(report, vocab)?;
    let relations: Vec<RelationType> = read_jsonl(report, relations)?;
    Ok((Vocabulary::new(entities)?, Schema::new(relations)?))
}

fn load_gk(report: &mut RunReport, path: &Path) -> Result<GkStore, CliError> {
    let bytes = report.read_input(path)?;
    Ok(GkStore::decode(&bytes)?)
}

fn parse_enum<T: DeserializeOwned>(value: &str, what: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::from(value))
        .map_err(|_| CliError::usage(format!("invalid {what} {value:?}")))
}

fn report_path(common: &CommonArgs, primary: &Path) -> PathBuf {
    common.report.clone().unwrap_or_else(|| default_report_path(primary))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct WeightsArgs {
    /// Candidate triples, JSONL {"s", "r", "o"}.
    #[arg(long)]
    pub triples: Option<PathBuf>,
    /// Entities, JSONL {"id", "surface", "cuid"?}.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Relation schema, JSONL {"id", "verbalization"}.
    #[arg(long)]
    pub relations: Option<PathBuf>,
    /// `gold` scores the listed pairs; `cross-product` every subject/object pair.
    #[arg(long)]
    pub pair_mode: Option<String>,
    /// Output weights JSONL.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

pub fn weights(args: WeightsArgs) -> Result<(), CliError> {
    let a: WeightsArgs = merge(&args, args.common.config.as_deref())?;
    a.common.apply_threads()?;
    let out = required(&a.out, "out")?;
    let mode: PairMode = parse_enum(a.pair_mode.as_deref().unwrap_or("gold"), "pair mode")?;
    let mut report = RunReport::new("weights", &a);
    let (vocab, schema) = load_vocab_schema(&mut report, required(&a.vocab, "vocab")?, required(&a.relations, "relations")?)?;
    let triples: Vec<Triple> = read_jsonl(&mut report, required(&a.triples, "triples")?)?;
    let provider = a.provider.build(a.common.seed(), &mut report)?;

    let (rows, score) = score_pairs(provider.as_ref(), &vocab, &schema, &triples, mode)?;
    report.count("triples", triples.len());
    report.count("rows", rows.len());
    report.count("pairs", score.pairs);
    report.count("correct", score.correct);
    report.count("ratio", score.ratio());
    report.count("without_gold", score.without_gold);
    report.count("dropped_zero_norm", score.dropped_zero_norm);
    report.count("failed_pairs", score.failed_pairs);
    report.count("dropped_zero_mass_groups", score.dropped_zero_mass_groups);
    println!(
        "scored {} pairs: {} correct ({:.4}), {} rows",
        score.pairs,
        score.correct,
        score.ratio(),
        rows.len()
    );
    let bytes = jsonl::to_string(&rows)?.into_bytes();
    report.finish(vec![(out.clone(), bytes)], &report_path(&a.common, out))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainGkArgs {
    /// Weights JSONL from `weights`; only predicted, correct rows are used.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub relations: Option<PathBuf>,
    /// KGXE keyed by entity id; replaces surface embedding through the provider.
    #[arg(long)]
    pub entity_embeddings: Option<PathBuf>,
    /// Output KGXS store.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss curve CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Hidden width; 0 trains a linear map.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub out_dim: Option<usize>,
    /// relu, tanh or identity.
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Groups per optimizer step; full batch when absent.
    #[arg(long)]
    pub batch_groups: Option<usize>,
    /// Provenance label of the knowledge source.
    #[arg(long)]
    pub source: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

pub fn train_gk(args: TrainGkArgs) -> Result<(), CliError> {
    let a: TrainGkArgs = merge(&args, args.common.config.as_deref())?;
    a.common.apply_threads()?;
    let out = required(&a.out, "out")?;
    let mut config = GkTrainConfig {
        seed: a.common.seed(),
        ..GkTrainConfig::default()
    };
    if let Some(v) = a.lambda {
        config.lambda = v;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.hidden {
        config.hidden = v;
    }
    if let Some(v) = a.out_dim {
        config.out_dim = v;
    }
    if let Some(v) = &a.activation {
        config.activation = v.parse::<Activation>()?;
    }
    if let Some(v) = a.lr {
        config.lr = v;
    }
    config.batch_groups = a.batch_groups;
    if let Some(v) = &a.source {
        config.source = v.clone();
    }
    config.validate()?;

    let mut report = RunReport::new("train-gk", &a);
    let (vocab, schema) = load_vocab_schema(&mut report, required(&a.vocab, "vocab")?, required(&a.relations, "relations")?)?;
    let rows: Vec<WeightRow> = read_jsonl(&mut report, required(&a.weights, "weights")?)?;
    let normalized = normalize_weights(&correct_triples(&rows));
    let initial = match &a.entity_embeddings {
        Some(path) => {
            let store = FileEmbeddingStore::decode(&report.read_input(path)?)?;
            initial_embeddings(&store, &vocab, &normalized.groups, InitialKey::Id)?
        }
        None => {
            let provider = a.provider.build(a.common.seed(), &mut report)?;
            initial_embeddings(provider.as_ref(), &vocab, &normalized.groups, InitialKey::Surface)?
        }
    };

    let training = fit_gk(&normalized.groups, &vocab, &initial, &schema, &config)?;
    let store_bytes = training.store.encode()?;
    report.count("weight_rows", rows.len());
    report.count("groups", normalized.groups.len());
    report.count("dropped_zero_mass_groups", normalized.dropped_zero_mass);
    report.count("entities", training.store.len());
    report.count("final_loss", training.loss_curve.last().copied());
    report.count("output_variance", training.output_variance);
    report.count("collapse_warning", training.collapse_warning);
    report.count("config_hash", config.hash());
    if training.collapse_warning {
        eprintln!(
            "warning: relational embeddings collapsed (output variance {:.3e})",
            training.output_variance
        );
    }
    println!(
        "trained {} entities over {} groups; final loss {:.6e}",
        training.store.len(),
        normalized.groups.len(),
        training.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    let csv_path = a.loss_csv.clone().unwrap_or_else(|| {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".loss.csv");
        out.with_file_name(name)
    });
    report.finish(
        vec![(out.clone(), store_bytes), (csv_path, training.loss_csv().into_bytes())],
        &report_path(&a.common, out),
    )
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainTaskArgs {
    /// Training documents, JSONL.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Development documents; the best epoch on them is kept.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Frozen GK store to fuse; omit for the SK-only model.
    #[arg(long)]
    pub gk: Option<PathBuf>,
    /// Output KGXM model.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub out_dim: Option<usize>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_docs: Option<usize>,
    #[arg(long)]
    pub neg_ratio: Option<usize>,
    /// Sentence distance within which mentions co-occur.
    #[arg(long)]
    pub window: Option<usize>,
    /// Cosine links per SK node; 0 disables them.
    #[arg(long)]
    pub link_top_k: Option<usize>,
    #[arg(long)]
    pub link_tau: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

pub fn train_task(args: TrainTaskArgs) -> Result<(), CliError> {
    let a: TrainTaskArgs = merge(&args, args.common.config.as_deref())?;
    a.common.apply_threads()?;
    let out = required(&a.out, "out")?;
    let defaults = TaskConfig::default();
    let config = TaskConfig {
        hidden: a.hidden.unwrap_or(defaults.hidden),
        out_dim: a.out_dim.unwrap_or(defaults.out_dim),
        head_hidden: a.head_hidden.unwrap_or(defaults.head_hidden),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        lr: a.lr.unwrap_or(defaults.lr),
        batch_docs: a.batch_docs.unwrap_or(defaults.batch_docs),
        neg_ratio: a.neg_ratio.unwrap_or(defaults.neg_ratio),
        window: a.window.unwrap_or(defaults.window),
        link_top_k: a.link_top_k.unwrap_or(defaults.link_top_k),
        link_tau: a.link_tau.unwrap_or(defaults.link_tau),
        seed: a.common.seed(),
    };
    config.validate()?;

    let mut report = RunReport::new("train-task", &a);
    let train = read_documents(&mut report, required(&a.train, "train")?)?;
    let dev = a.dev.as_deref().map(|p| read_documents(&mut report, p)).transpose()?;
    let gk = a.gk.as_deref().map(|p| load_gk(&mut report, p)).transpose()?;
    let provider = a.provider.build(a.common.seed(), &mut report)?;
    let gk_hash = gk.as_ref().map(GkStore::content_hash).transpose()?;

    let training = fit_task(&train, dev.as_deref(), gk.as_ref(), provider.as_ref(), &config)?;
    if gk.as_ref().map(GkStore::content_hash).transpose()? != gk_hash {
        return Err(CliError::data("GK store changed during training"));
    }
    report.count("train_docs", train.len());
    report.count("dev_docs", dev.as_ref().map_or(0, Vec::len));
    report.count("sk_nodes", training.sk_nodes);
    report.count("gk_nodes", training.gk_nodes);
    report.count("gk_mention_share", training.gk_mention_share);
    report.count("gk_hash", &gk_hash);
    report.count("best_epoch", training.best_epoch);
    report.count("history", &training.history);
    if let Some(m) = &training.best_dev {
        report.metrics = Some(serde_json::to_value(m).map_err(|e| CliError::data(e.to_string()))?);
        println!(
            "best epoch {}: dev entity F1 {:.4}, relation F1 {:.4}",
            training.best_epoch, m.entity.f1, m.relation.f1
        );
    } else {
        println!(
            "trained {} epochs; final loss {:.6e}",
            training.history.len(),
            training.history.last().map_or(f64::NAN, |r| r.loss)
        );
    }
    let bytes = training.model.encode()?;
    report.finish(vec![(out.clone(), bytes)], &report_path(&a.common, out))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// KGXM model from `train-task`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Gold documents, JSONL.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// The GK store the model was trained with.
    #[arg(long)]
    pub gk: Option<PathBuf>,
    /// Metrics JSON; defaults to `<model>.metrics.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let a: EvalArgs = merge(&args, args.common.config.as_deref())?;
    a.common.apply_threads()?;
    let model_path = required(&a.model, "model")?;
    let mut report = RunReport::new("eval", &a);
    let model = TaskModel::decode(&report.read_input(model_path)?)?;
    let docs = read_documents(&mut report, required(&a.docs, "docs")?)?;
    let gk = a.gk.as_deref().map(|p| load_gk(&mut report, p)).transpose()?;
    let provider = a.provider.build(a.common.seed(), &mut report)?;

    let metrics = model.evaluate(&docs, gk.as_ref(), provider.as_ref())?;
    println!(
        "entity    P {:.4}  R {:.4}  F1 {:.4}",
        metrics.entity.p, metrics.entity.r, metrics.entity.f1
    );
    println!(
        "relation  P {:.4}  R {:.4}  F1 {:.4}",
        metrics.relation.p, metrics.relation.r, metrics.relation.f1
    );
    report.count("docs", docs.len());
    let json = serde_json::to_vec_pretty(&metrics).map_err(|e| CliError::data(e.to_string()))?;
    report.metrics = Some(serde_json::to_value(&metrics).map_err(|e| CliError::data(e.to_string()))?);
    let out = a.out.clone().unwrap_or_else(|| {
        let mut name = model_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".metrics.json");
        model_path.with_file_name(name)
    });
    report.finish(vec![(out.clone(), json)], &report_path(&a.common, &out))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub relations: Option<usize>,
    #[arg(long)]
    pub docs: Option<usize>,
    /// Probability that a fact's relation is replaced in triples.jsonl.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Document seed; the knowledge graph depends on --seed only.
    #[arg(long)]
    pub doc_seed: Option<u64>,
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    /// Probability that a development mention uses the entity's alias.
    #[arg(long)]
    pub alias_rate: Option<f64>,
    /// Objects per subject.
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub max_sentences: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

pub fn gen_synthetic(args: GenSyntheticArgs) -> Result<(), CliError> {
    let a: GenSyntheticArgs = merge(&args, args.common.config.as_deref())?;
    a.common.apply_threads()?;
    let out = required(&a.out, "out")?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        entities: a.entities.unwrap_or(d.entities),
        relations: a.relations.unwrap_or(d.relations),
        docs: a.docs.unwrap_or(d.docs),
        noise: a.noise.unwrap_or(d.noise),
        seed: a.common.seed(),
        doc_seed: a.doc_seed,
        dev_fraction: a.dev_fraction.unwrap_or(d.dev_fraction),
        alias_rate: a.alias_rate.unwrap_or(d.alias_rate),
        degree: a.degree.unwrap_or(d.degree),
        max_sentences: a.max_sentences.unwrap_or(d.max_sentences),
        embedding_dim: a.embedding_dim.unwrap_or(d.embedding_dim),
    };
    let corpus = generate(&spec)?;
    let mut report = RunReport::new("gen-synthetic", &a);
    report.count("spec", &spec);
    report.count("facts", corpus.facts.len());
    report.count("flipped", corpus.flipped);
    report.count("train_docs", corpus.train.len());
    report.count("dev_docs", corpus.dev.len());
    report.count("embeddings", corpus.embeddings.len());
    println!(
        "{} facts ({} flipped), {} train / {} dev documents",
        corpus.facts.len(),
        corpus.flipped,
        corpus.train.len(),
        corpus.dev.len()
    );
    let outputs = corpus
        .files()?
        .into_iter()
        .map(|(name, bytes)| (out.join(name), bytes))
        .collect();
    let report_file = a.common.report.clone().unwrap_or_else(|| out.join("report.json"));
    report.finish(outputs, &report_file)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EmbedToyArgs {
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// With --triples, also materialize the masked sentences of every
    /// triple's subject/object pair under each relation.
    #[arg(long)]
    pub relations: Option<PathBuf>,
    #[arg(long)]
    pub triples: Option<PathBuf>,
    /// Key entities by `surface` (default) or `id`.
    #[arg(long)]
    pub key: Option<String>,
    #[arg(long)]
    pub toy_dim: Option<usize>,
    /// Defaults to --seed.
    #[arg(long)]
    pub toy_seed: Option<u64>,
    /// Output KGXE file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

pub fn embed_toy(args: EmbedToyArgs) -> Result<(), CliError> {
    let a: EmbedToyArgs = merge(&args, args.common.config.as_deref())?;
    a.common.apply_threads()?;
    let out = required(&a.out, "out")?;
    let key: InitialKey = parse_enum(a.key.as_deref().unwrap_or("surface"), "key")?;
    let dim = a.toy_dim.unwrap_or(64);
    let seed = a.toy_seed.unwrap_or(a.common.seed());
    let toy = ToyAdditiveEmbedder::new(dim, seed)?;
    let mut report = RunReport::new("embed-toy", &a);
    let entities: Vec<Entity> = read_jsonl(&mut report, required(&a.vocab, "vocab")?)?;
    let vocab = Vocabulary::new(entities)?;

    let mut entries: BTreeSet<(String, String)> = vocab
        .entities()
        .iter()
        .map(|e| match key {
            InitialKey::Surface => (e.surface.clone(), e.surface.clone()),
            InitialKey::Id => (e.id.clone(), e.surface.clone()),
        })
        .collect();
    match (&a.relations, &a.triples) {
        (Some(r), Some(t)) => {
            let relations: Vec<RelationType> = read_jsonl(&mut report, r)?;
            let schema = Schema::new(relations)?;
            let triples: Vec<Triple> = read_jsonl(&mut report, t)?;
            let pairs: BTreeSet<(&str, &str)> = triples
                .iter()
                .map(|t| (t.subject.as_str(), t.object.as_str()))
                .collect();
            for (s, o) in pairs {
                let (s, o) = (vocab.get(s)?, vocab.get(o)?);
                for rel in schema.relations() {
                    let m = build_masked_sentences(&s.surface, &rel.verbalization, &o.surface)?;
                    entries.extend(m.all().map(|text| (text.to_owned(), text.to_owned())));
                }
            }
        }
        (None, None) => {}
        _ => return Err(CliError::usage("--relations and --triples go together")),
    }

    let mut metadata = StoreMetadata::new("toy-additive", "sum");
    metadata.extra.insert("seed".into(), serde_json::Value::from(seed));
    let mut store = FileEmbeddingStore::new(dim, metadata)?;
    let mut last: Option<&str> = None;
    for (id, text) in &entries {
        if last == Some(id.as_str()) {
            return Err(CliError::data(format!("key {id:?} maps to two texts")));
        }
        store.insert(id.clone(), &toy.embed(text)?)?;
        last = Some(id);
    }
    report.count("entries", store.len());
    println!("materialized {} vectors of dimension {dim}", store.len());
    let bytes = store.encode()?;
    report.finish(vec![(out.clone(), bytes)], &report_path(&a.common, out))
}
