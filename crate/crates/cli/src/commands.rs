//! The four pipeline stages. Each reads its inputs from the paths in the
//! config and writes its artifacts into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kgnews::classifier::{prepare_examples, run_trials, TrialsReport};
use kgnews::complex_embedding::{evaluate_link_prediction, train, ComplExModel, LinkPredMetrics};
use kgnews::dataset_pipeline::{
    clean_title, filter_linkable, generate_synthetic, load_news_csv, read_jsonl, remove_bias_terms,
    stratified_split, write_jsonl, BiasTermList, ClassCounts, Label, NewsItem, ProcessedRecord, RetentionReport,
    Split, SplitCounts, SyntheticPaths,
};
use kgnews::entity_linker::EntityLinker;
use kgnews::kg_store::{AliasTable, TripleStore};
use kgnews::text_encoder::{tokenize, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::config::{require_inputs, RunConfig};
use crate::UsageError;

pub const EMBEDDINGS_FILE: &str = "kg_embeddings.cplx";
pub const KG_METRICS_FILE: &str = "kg_metrics.json";
pub const ITEMS_FILE: &str = "items.jsonl";
pub const SUMMARY_FILE: &str = "preprocess_summary.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const REPORT_FILE: &str = "report.json";

fn output_dir(config: &RunConfig) -> Result<&Path> {
    let dir = config.paths.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_synth(config: &RunConfig) -> Result<SyntheticPaths> {
    let Some(spec) = &config.synthetic else {
        return Err(UsageError("synth needs a [synthetic] section in the config".into()).into());
    };
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let art = generate_synthetic(spec)?;
    let targets = [
        (&config.paths.triples, &art.triples_tsv),
        (&config.paths.aliases, &art.aliases_tsv),
        (&config.paths.news, &art.news_csv),
    ];
    for (path, body) in targets {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(SyntheticPaths {
        triples: config.paths.triples.clone(),
        aliases: config.paths.aliases.clone(),
        news: config.paths.news.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgReport {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_train: usize,
    pub n_holdout: usize,
    pub epoch_loss: Vec<f64>,
    /// Filtered metrics on the held-out triples; absent when none are held out.
    pub holdout: Option<LinkPredMetrics>,
    pub train: LinkPredMetrics,
}

pub fn cmd_kg_train(config: &RunConfig) -> Result<KgReport> {
    require_inputs(&[&config.paths.triples])?;
    config.kg.validate().map_err(|e| UsageError(e.to_string()))?;
    let store = TripleStore::load_triples(&config.paths.triples)?;
    let (train_triples, held) = store.holdout_split(config.kg_holdout, config.kg.seed)?;
    if train_triples.is_empty() {
        bail!("holdout leaves no training triples");
    }
    let train_store = store.with_triples(train_triples.iter().copied())?;
    let mut model = ComplExModel::<f64>::init(store.n_entities(), store.n_relations(), &config.kg)?;
    let epoch_loss = train(&mut model, &train_store, &config.kg)?;
    let holdout = if held.is_empty() {
        None
    } else {
        Some(evaluate_link_prediction(&model, &held, &store)?)
    };
    let report = KgReport {
        n_entities: store.n_entities(),
        n_relations: store.n_relations(),
        n_train: train_triples.len(),
        n_holdout: held.len(),
        epoch_loss,
        holdout,
        train: evaluate_link_prediction(&model, &train_triples, &store)?,
    };
    let dir = output_dir(config)?;
    model.save_embeddings(dir.join(EMBEDDINGS_FILE))?;
    write_json(&dir.join(KG_METRICS_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub rows_loaded: usize,
    pub dropped_empty_titles: usize,
    pub bias_terms: usize,
    pub retention: RetentionReport,
    pub split: SplitCounts,
    pub ned_fallbacks: usize,
    pub label_convention: String,
}

pub fn cmd_preprocess(config: &RunConfig) -> Result<PreprocessSummary> {
    let p = &config.paths;
    let mut inputs = vec![p.triples.as_path(), p.aliases.as_path(), p.news.as_path()];
    if let Some(b) = &p.bias {
        inputs.push(b);
    }
    require_inputs(&inputs)?;

    let store = TripleStore::load_triples(&p.triples)?;
    let aliases = AliasTable::load_alias_table(&p.aliases, &store)?;
    let bias = match &p.bias {
        Some(path) => BiasTermList::load(path)?,
        None => BiasTermList::default(),
    };
    let load = load_news_csv(&p.news)?;
    let rows_loaded = load.items.len() + load.dropped_empty;
    let items: Vec<NewsItem> = load
        .items
        .into_iter()
        .map(|mut item| {
            item.title = remove_bias_terms(&item.title, &bias);
            item
        })
        .collect();

    let linker = EntityLinker::new(&aliases, &store, config.ned.clone());
    let (mut kept, retention) = filter_linkable(items, &linker)?;
    let split = stratified_split(&mut kept, config.protocol.split_ratio, config.split_seed)
        .map_err(|e| UsageError(format!("cannot split the retained items: {e}")))?;

    let records = kept
        .iter()
        .map(|item| {
            Ok(ProcessedRecord {
                id: item.id.clone(),
                title: clean_title(&item.title),
                label: item.label.as_u8(),
                entities: item
                    .linked_entities
                    .iter()
                    .map(|&e| store.entity_key(e).map(str::to_owned))
                    .collect::<kgnews::Result<_>>()?,
                split: item.split,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = PreprocessSummary {
        rows_loaded,
        dropped_empty_titles: load.dropped_empty,
        bias_terms: bias.len(),
        retention,
        split,
        ned_fallbacks: linker.fallback_count(),
        label_convention: "fake=1, true=0".into(),
    };
    let dir = output_dir(config)?;
    write_jsonl(dir.join(ITEMS_FILE), &records)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub label_convention: String,
    pub rows: Vec<TrialsReport>,
}

fn items_from_records(records: Vec<ProcessedRecord>, store: &TripleStore) -> Result<Vec<NewsItem>> {
    records
        .into_iter()
        .map(|r| {
            let label = Label::from_u8(r.label).with_context(|| format!("item {}: label {}", r.id, r.label))?;
            let mut item = NewsItem::new(r.id, r.title, label);
            item.split = r.split;
            item.linked_entities = r
                .entities
                .iter()
                .map(|k| {
                    store
                        .entity_id(k)
                        .with_context(|| format!("item {}: entity {k} is not in the triple store", item.id))
                })
                .collect::<Result<_>>()?;
            Ok(item)
        })
        .collect()
}

pub fn cmd_train_eval(config: &RunConfig) -> Result<EvalTable> {
    config.validate()?;
    let dir = config.paths.output_dir.clone();
    let checkpoint = dir.join(EMBEDDINGS_FILE);
    let items_path = dir.join(ITEMS_FILE);
    require_inputs(&[&config.paths.triples, &checkpoint, &items_path])?;

    let store = TripleStore::load_triples(&config.paths.triples)?;
    let kg = ComplExModel::<f64>::load_embeddings(&checkpoint)?;
    if kg.n_entities() != store.n_entities() {
        bail!(
            "checkpoint has {} entities but the triple store has {}; rerun kg-train",
            kg.n_entities(),
            store.n_entities()
        );
    }
    let items = items_from_records(read_jsonl(&items_path)?, &store)?;
    let (train_items, test_items): (Vec<NewsItem>, Vec<NewsItem>) =
        items.into_iter().filter(|i| i.split != Split::Unassigned).partition(|i| i.split == Split::Train);
    if train_items.is_empty() || test_items.is_empty() {
        bail!("preprocessed data has an empty train or test split");
    }

    let corpus: Vec<Vec<String>> = train_items.iter().map(|i| tokenize(&i.title)).collect();
    let vocab = Vocabulary::build(&corpus, config.encoder.vocab_cap);
    vocab.save(dir.join(VOCAB_FILE))?;
    let train_ex = prepare_examples(&train_items, &vocab, &kg)?;
    let test_ex = prepare_examples(&test_items, &vocab, &kg)?;

    let mut rows = Vec::new();
    for enabled in [true, false] {
        let protocol = kgnews::classifier::TrainProtocol {
            entity_encoder_enabled: enabled,
            ..config.protocol.clone()
        };
        rows.push(run_trials(
            &config.dataset,
            &train_ex,
            &test_ex,
            vocab.len(),
            2 * kg.dim(),
            &config.encoder,
            &config.classifier,
            &protocol,
        )?);
    }
    let table = EvalTable {
        label_convention: "fake=1, true=0".into(),
        rows,
    };
    write_json(&dir.join(REPORT_FILE), &table)?;
    Ok(table)
}

/// Human-readable summary of a train-eval report.
pub fn render_table(table: &EvalTable) -> String {
    let mut out = format!(
        "{:<16} {:<14} {:>9} {:>9}   per-seed F1\n",
        "dataset", "entity encoder", "mean F1", "mean acc"
    );
    for row in &table.rows {
        let per_seed: Vec<String> = row.per_seed.iter().map(|s| format!("{:.4}", s.f1_macro)).collect();
        out.push_str(&format!(
            "{:<16} {:<14} {:>9.4} {:>9.4}   {}\n",
            row.dataset,
            if row.entity_encoder { "enabled" } else { "disabled" },
            row.mean.f1_macro,
            row.mean.accuracy,
            per_seed.join(" ")
        ));
    }
    out
}

/// Class counts of the processed items, recomputed from the JSONL file.
pub fn recount(items_path: &Path) -> Result<BTreeMap<String, ClassCounts>> {
    let mut counts: BTreeMap<String, ClassCounts> = BTreeMap::new();
    for r in read_jsonl(items_path)? {
        let c = counts.entry(r.split.to_string()).or_default();
        if r.label == 1 {
            c.fake += 1;
        } else {
            c.true_ += 1;
        }
    }
    Ok(counts)
}

pub fn artifact(config: &RunConfig, name: &str) -> PathBuf {
    config.paths.output_dir.join(name)
}
