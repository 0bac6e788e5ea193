//! News ingestion, bias-term removal, linkability filtering, stratified
//! splitting and the synthetic benchmark generator.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entity_linker::EntityLinker;
use crate::kg_store::EntityId;
use crate::text_encoder::{normalize_phrase, normalize_token, tokenize, TokenSequence};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    True,
    Fake,
}

impl Label {
    /// Fake is the positive class.
    pub fn as_u8(self) -> u8 {
        match self {
            Label::True => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::True),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    fn flipped(self) -> Self {
        match self {
            Label::True => Label::Fake,
            Label::Fake => Label::True,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewsItem {
    pub id: String,
    pub title: String,
    pub label: Label,
    pub linked_entities: Vec<EntityId>,
    pub token_ids: Option<TokenSequence>,
    pub split: Split,
}

impl NewsItem {
    pub fn new(id: impl Into<String>, title: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            label,
            linked_entities: Vec::new(),
            token_ids: None,
            split: Split::Unassigned,
        }
    }
}

/// Result of reading a news CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsLoad {
    pub items: Vec<NewsItem>,
    /// Rows skipped because the title was blank.
    pub dropped_empty: usize,
}

pub fn load_news_csv(path: impl AsRef<Path>) -> Result<NewsLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_news_csv(file, &path.display().to_string())
}

/// Reads `id,title,label` rows (extra columns are ignored). Row numbers in
/// errors count data rows from 1.
pub fn read_news_csv(input: impl Read, source: &str) -> Result<NewsLoad> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
            path: source.to_owned(),
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (id_col, title_col, label_col) = (column("id")?, column("title")?, column("label")?);

    let mut items = Vec::new();
    let mut dropped_empty = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let row = row + 1;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");
        let raw_label = field(label_col).trim();
        let label = match raw_label {
            "0" => Label::True,
            "1" => Label::Fake,
            other => {
                return Err(Error::Parse {
                    path: source.to_owned(),
                    line,
                    message: format!("row {row}: label {other:?} is not 0 or 1"),
                })
            }
        };
        let title = field(title_col);
        if title.trim().is_empty() {
            dropped_empty += 1;
            continue;
        }
        items.push(NewsItem::new(field(id_col), title, label));
    }
    Ok(NewsLoad { items, dropped_empty })
}

/// Phrases to strip from titles, stored as normalized token lists ordered
/// longest first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BiasTermList {
    terms: Vec<Vec<String>>,
}

impl BiasTermList {
    pub fn new<S: AsRef<str>>(phrases: impl IntoIterator<Item = S>) -> Self {
        let mut terms: Vec<Vec<String>> = phrases
            .into_iter()
            .map(|p| tokenize(p.as_ref()))
            .filter(|t| !t.is_empty())
            .collect();
        terms.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        terms.dedup();
        Self { terms }
    }

    /// One phrase per line; blank lines and lines starting with `#` are skipped.
    pub fn from_reader(reader: impl BufRead, source: &str) -> Result<Self> {
        let mut phrases = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            phrases.push(line.to_owned());
        }
        Ok(Self::new(phrases))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Normalized phrases, longest first.
    pub fn phrases(&self) -> impl Iterator<Item = String> + '_ {
        self.terms.iter().map(|t| t.join(" "))
    }
}

/// Deletes every case-insensitive whole-word occurrence of each bias phrase
/// and rejoins the remaining words with single spaces.
///
/// Matching runs on normalized words; a word that normalizes to nothing
/// (a bare dash, say) is kept and interrupts a phrase. Removal repeats until
/// nothing matches, so the function is idempotent.
pub fn remove_bias_terms(title: &str, bias: &BiasTermList) -> String {
    let mut words: Vec<&str> = title.split_whitespace().collect();
    let mut norms: Vec<String> = words.iter().map(|w| normalize_token(w)).collect();
    loop {
        let mut changed = false;
        for term in &bias.terms {
            let k = term.len();
            let mut i = 0;
            while i + k <= words.len() {
                if norms[i..i + k].iter().zip(term).all(|(n, t)| n == t) {
                    words.drain(i..i + k);
                    norms.drain(i..i + k);
                    changed = true;
                } else {
                    i += 1;
                }
            }
        }
        if !changed {
            break;
        }
    }
    words.join(" ")
}

/// The shared text cleaning: tokenizer normalization, tokens joined by spaces.
pub fn clean_title(title: &str) -> String {
    normalize_phrase(title)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    #[serde(rename = "true")]
    pub true_: usize,
    pub fake: usize,
}

impl ClassCounts {
    pub fn of(items: &[NewsItem]) -> Self {
        let fake = items.iter().filter(|i| i.label == Label::Fake).count();
        Self {
            true_: items.len() - fake,
            fake,
        }
    }

    pub fn total(&self) -> usize {
        self.true_ + self.fake
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub before: ClassCounts,
    pub after: ClassCounts,
}

/// Links every title and keeps the items with at least one linked entity, in
/// input order.
pub fn filter_linkable(items: Vec<NewsItem>, linker: &EntityLinker<'_>) -> Result<(Vec<NewsItem>, RetentionReport)> {
    let before = ClassCounts::of(&items);
    let linked: Vec<Vec<EntityId>> = items
        .par_iter()
        .map(|item| linker.link_title(&item.title))
        .collect::<Result<_>>()?;
    let kept: Vec<NewsItem> = items
        .into_iter()
        .zip(linked)
        .filter(|(_, ents)| !ents.is_empty())
        .map(|(mut item, ents)| {
            item.linked_entities = ents;
            item
        })
        .collect();
    let after = ClassCounts::of(&kept);
    Ok((kept, RetentionReport { before, after }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: ClassCounts,
    pub test: ClassCounts,
}

/// Shuffles each class by `seed` and sends `floor(ratio * n_class)` of it to
/// train, the rest to test.
pub fn stratified_split(items: &mut [NewsItem], ratio: f64, seed: u64) -> Result<SplitCounts> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} outside [0, 1]")));
    }
    let counts = ClassCounts::of(items);
    if counts.fake == 0 || counts.true_ == 0 {
        return Err(Error::InvalidArgument(format!(
            "stratified split needs both classes (true: {}, fake: {})",
            counts.true_, counts.fake
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [Label::True, Label::Fake] {
        let mut idx: Vec<usize> = (0..items.len()).filter(|&i| items[i].label == label).collect();
        idx.shuffle(&mut rng);
        let n_train = (ratio * idx.len() as f64).floor() as usize;
        for (rank, &i) in idx.iter().enumerate() {
            items[i].split = if rank < n_train { Split::Train } else { Split::Test };
        }
    }
    let of = |s: Split| {
        let part: Vec<NewsItem> = items.iter().filter(|i| i.split == s).cloned().collect();
        ClassCounts::of(&part)
    };
    Ok(SplitCounts {
        train: of(Split::Train),
        test: of(Split::Test),
    })
}

/// One line of the preprocessed JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedRecord {
    pub id: String,
    pub title: String,
    pub label: u8,
    /// External entity keys.
    pub entities: Vec<String>,
    pub split: Split,
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[ProcessedRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<ProcessedRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

/// Parameters of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub n_entities: usize,
    /// Entities `0..cluster` form the fake-signal cluster.
    pub fake_signal_cluster_size: usize,
    pub label_noise_rate: f64,
    pub seed: u64,
    /// Distinct single-word aliases per entity; titles pick one at random.
    pub aliases_per_entity: usize,
    pub background_triples_per_entity: usize,
    /// Relations besides the cluster relation.
    pub background_relations: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_items: 1000,
            n_entities: 200,
            fake_signal_cluster_size: 20,
            label_noise_rate: 0.05,
            seed: 7,
            aliases_per_entity: 24,
            background_triples_per_entity: 4,
            background_relations: 4,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if self.fake_signal_cluster_size == 0 {
            return bad("cluster size must be positive".into());
        }
        if self.fake_signal_cluster_size >= self.n_entities {
            return bad(format!(
                "cluster size {} must be smaller than n_entities {}",
                self.fake_signal_cluster_size, self.n_entities
            ));
        }
        if !(0.0..=1.0).contains(&self.label_noise_rate) {
            return bad(format!("label noise rate {} outside [0, 1]", self.label_noise_rate));
        }
        if self.n_items == 0 || self.aliases_per_entity == 0 || self.background_relations == 0 {
            return bad("n_items, aliases_per_entity and background_relations must be positive".into());
        }
        Ok(())
    }
}

/// Generated files as strings, in the triple, alias and news CSV formats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticArtifacts {
    pub triples_tsv: String,
    pub aliases_tsv: String,
    pub news_csv: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticPaths {
    pub triples: PathBuf,
    pub aliases: PathBuf,
    pub news: PathBuf,
}

impl SyntheticArtifacts {
    pub const TRIPLES_FILE: &'static str = "triples.tsv";
    pub const ALIASES_FILE: &'static str = "aliases.tsv";
    pub const NEWS_FILE: &'static str = "news.csv";

    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<SyntheticPaths> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SyntheticPaths {
            triples: dir.join(Self::TRIPLES_FILE),
            aliases: dir.join(Self::ALIASES_FILE),
            news: dir.join(Self::NEWS_FILE),
        };
        for (path, body) in [
            (&paths.triples, &self.triples_tsv),
            (&paths.aliases, &self.aliases_tsv),
            (&paths.news, &self.news_csv),
        ] {
            fs::write(path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(paths)
    }
}

/// Key of synthetic entity `i`.
pub fn synthetic_entity_key(i: usize) -> String {
    format!("E{i}")
}

/// Relation that densely connects the cluster.
pub const SIGNAL_RELATION: &str = "P0";

const FILLERS: &[&str] = &[
    "report", "says", "after", "new", "plan", "over", "claims", "officials", "warn", "amid", "says", "week", "talks",
    "deal", "state", "city", "court", "vote", "rise", "fall", "crisis", "meeting", "leaders", "attack", "policy",
    "health", "market", "study", "finds", "early", "million", "workers", "price", "school", "police", "border",
    "election", "budget", "record", "video", "shows", "major", "local", "rules", "review", "agency", "sources",
    "breaking", "update", "today",
];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
    w
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Builds a KG whose first `fake_signal_cluster_size` entities are fully
/// connected by [`SIGNAL_RELATION`], plus random background edges; fake titles
/// mention cluster entities and true titles mention the rest. Labels alternate
/// and then `floor(rate * n_items)` of them are flipped. Output depends only
/// on `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticArtifacts> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_entities;
    let c = spec.fake_signal_cluster_size;

    let mut triples_tsv = String::new();
    let mut push_triple = |h: usize, r: &str, t: usize| {
        triples_tsv.push_str(&format!("{}\t{r}\t{}\n", synthetic_entity_key(h), synthetic_entity_key(t)));
    };
    for h in 0..c {
        for t in 0..c {
            if h != t {
                push_triple(h, SIGNAL_RELATION, t);
            }
        }
    }
    for h in 0..n {
        for _ in 0..spec.background_triples_per_entity.max(1) {
            let r = format!("P{}", 1 + rng.gen_range(0..spec.background_relations));
            let mut t = rng.gen_range(0..n - 1);
            if t >= h {
                t += 1;
            }
            push_triple(h, &r, t);
        }
    }

    let mut taken: HashSet<String> = FILLERS.iter().map(|s| s.to_string()).collect();
    let mut aliases: Vec<Vec<String>> = Vec::with_capacity(n);
    let mut aliases_tsv = String::new();
    for e in 0..n {
        let mut mine = Vec::with_capacity(spec.aliases_per_entity);
        while mine.len() < spec.aliases_per_entity {
            let w = pseudo_word(&mut rng);
            if taken.insert(w.clone()) {
                aliases_tsv.push_str(&format!("{}\t{}\n", synthetic_entity_key(e), title_case(&w)));
                mine.push(w);
            }
        }
        aliases.push(mine);
    }

    let mut labels: Vec<Label> = (0..spec.n_items)
        .map(|i| if i % 2 == 1 { Label::Fake } else { Label::True })
        .collect();
    let mut titles = Vec::with_capacity(spec.n_items);
    for label in &labels {
        let pool: Vec<usize> = match label {
            Label::Fake => (0..c).collect(),
            Label::True => (c..n).collect(),
        };
        let k = rng.gen_range(1..=2).min(pool.len());
        let mentioned: Vec<usize> = pool.choose_multiple(&mut rng, k).copied().collect();
        let n_fill = rng.gen_range(3..=6);
        let mut words: Vec<String> = (0..n_fill)
            .map(|_| FILLERS[rng.gen_range(0..FILLERS.len())].to_owned())
            .collect();
        for e in mentioned {
            let alias = aliases[e][rng.gen_range(0..aliases[e].len())].clone();
            let at = rng.gen_range(0..=words.len());
            words.insert(at, alias);
        }
        titles.push(words.iter().map(|w| title_case(w)).collect::<Vec<_>>().join(" "));
    }
    let n_flip = (spec.label_noise_rate * spec.n_items as f64).floor() as usize;
    let mut order: Vec<usize> = (0..spec.n_items).collect();
    order.shuffle(&mut rng);
    for &i in &order[..n_flip] {
        labels[i] = labels[i].flipped();
    }

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["id", "title", "label"])?;
    for (i, (title, label)) in titles.iter().zip(&labels).enumerate() {
        writer.write_record([format!("s{i:05}"), title.clone(), label.as_u8().to_string()])?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))?;
    let news_csv = String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(SyntheticArtifacts {
        triples_tsv,
        aliases_tsv,
        news_csv,
    })
}
