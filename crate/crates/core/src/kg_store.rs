//! Triple store and alias gazetteer.
//!
//! Triples are read from the Wikidata5M-style TSV layout (`head<TAB>relation<TAB>tail`,
//! no header) and interned into dense integer ids in first-appearance order.
//! The store keeps `(head, relation) -> tails` and `(tail, relation) -> heads`
//! indexes for filtered ranking and negative sampling, plus per-entity degree
//! counts used as the disambiguation prior.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text_encoder::tokenize;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

/// Bijection between external keys and dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, key: &str) -> usize {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len();
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), id);
        id
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: usize) -> Option<&str> {
        self.keys.get(id).map(String::as_str)
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TripleStore {
    triples: Vec<Triple>,
    members: HashSet<Triple>,
    by_head_relation: HashMap<(EntityId, RelationId), BTreeSet<EntityId>>,
    by_tail_relation: HashMap<(EntityId, RelationId), BTreeSet<EntityId>>,
    degree: Vec<usize>,
    entities: Interner,
    relations: Interner,
    duplicates: usize,
}

impl TripleStore {
    /// Reads a triple TSV file. Blank lines are ignored; duplicate lines are
    /// collapsed.
    pub fn load_triples(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), &path.display().to_string())
    }

    pub fn from_reader(reader: impl BufRead, source: &str) -> Result<Self> {
        let mut entities = Interner::default();
        let mut relations = Interner::default();
        let mut triples = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: source.to_owned(),
                    line: lineno + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            triples.push(Triple {
                head: EntityId(entities.intern(fields[0])),
                relation: RelationId(relations.intern(fields[1])),
                tail: EntityId(entities.intern(fields[2])),
            });
        }
        if triples.is_empty() {
            return Err(Error::Empty(format!("{source}: no triples")));
        }
        Ok(Self::build(entities, relations, triples))
    }

    /// Builds a store from `(head, relation, tail)` key triples.
    pub fn from_keys<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Result<Self> {
        let mut entities = Interner::default();
        let mut relations = Interner::default();
        let triples: Vec<Triple> = rows
            .into_iter()
            .map(|(h, r, t)| Triple {
                head: EntityId(entities.intern(h)),
                relation: RelationId(relations.intern(r)),
                tail: EntityId(entities.intern(t)),
            })
            .collect();
        if triples.is_empty() {
            return Err(Error::Empty("no triples".into()));
        }
        Ok(Self::build(entities, relations, triples))
    }

    /// A store over the same vocabularies holding only `triples`.
    pub fn with_triples(&self, triples: impl IntoIterator<Item = Triple>) -> Result<Self> {
        let triples: Vec<Triple> = triples.into_iter().collect();
        for t in &triples {
            self.check_triple(t)?;
        }
        Ok(Self::build(self.entities.clone(), self.relations.clone(), triples))
    }

    fn build(entities: Interner, relations: Interner, raw: Vec<Triple>) -> Self {
        let mut members = HashSet::with_capacity(raw.len());
        let mut triples = Vec::with_capacity(raw.len());
        let mut duplicates = 0;
        for t in raw {
            if members.insert(t) {
                triples.push(t);
            } else {
                duplicates += 1;
            }
        }
        let mut by_head_relation: HashMap<_, BTreeSet<EntityId>> = HashMap::new();
        let mut by_tail_relation: HashMap<_, BTreeSet<EntityId>> = HashMap::new();
        let mut degree = vec![0; entities.len()];
        for t in &triples {
            by_head_relation.entry((t.head, t.relation)).or_default().insert(t.tail);
            by_tail_relation.entry((t.tail, t.relation)).or_default().insert(t.head);
            degree[t.head.0] += 1;
            degree[t.tail.0] += 1;
        }
        Self {
            triples,
            members,
            by_head_relation,
            by_tail_relation,
            degree,
            entities,
            relations,
            duplicates,
        }
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Number of input lines dropped as exact duplicates.
    pub fn duplicates_collapsed(&self) -> usize {
        self.duplicates
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn entity_id(&self, key: &str) -> Option<EntityId> {
        self.entities.get(key).map(EntityId)
    }

    pub fn relation_id(&self, key: &str) -> Option<RelationId> {
        self.relations.get(key).map(RelationId)
    }

    pub fn entity_key(&self, e: EntityId) -> Result<&str> {
        self.entities.key(e.0).ok_or(Error::InvalidId {
            kind: "entity",
            id: e.0,
            size: self.entities.len(),
        })
    }

    pub fn relation_key(&self, r: RelationId) -> Result<&str> {
        self.relations.key(r.0).ok_or(Error::InvalidId {
            kind: "relation",
            id: r.0,
            size: self.relations.len(),
        })
    }

    pub fn check_entity(&self, e: EntityId) -> Result<()> {
        self.entity_key(e).map(|_| ())
    }

    pub fn check_triple(&self, t: &Triple) -> Result<()> {
        self.check_entity(t.head)?;
        self.relation_key(t.relation)?;
        self.check_entity(t.tail)
    }

    /// Tails `t` with `(head, relation, t)` in the store.
    pub fn tails(&self, head: EntityId, relation: RelationId) -> Option<&BTreeSet<EntityId>> {
        self.by_head_relation.get(&(head, relation))
    }

    /// Heads `h` with `(h, relation, tail)` in the store.
    pub fn heads(&self, tail: EntityId, relation: RelationId) -> Option<&BTreeSet<EntityId>> {
        self.by_tail_relation.get(&(tail, relation))
    }

    /// Occurrences of `e` as head plus occurrences as tail.
    pub fn entity_degree(&self, e: EntityId) -> Result<usize> {
        self.check_entity(e)?;
        Ok(self.degree[e.0])
    }

    pub fn known_triple(&self, t: &Triple) -> Result<bool> {
        self.check_triple(t)?;
        Ok(self.members.contains(t))
    }

    pub(crate) fn contains_unchecked(&self, t: &Triple) -> bool {
        self.members.contains(t)
    }

    /// Seeded split of the triples into `(train, held_out)`, holding out
    /// `floor(fraction * len)` of them. Both parts keep store order.
    pub fn holdout_split(&self, fraction: f64, seed: u64) -> Result<(Vec<Triple>, Vec<Triple>)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!("holdout fraction {fraction} outside [0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.triples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_hold = (fraction * self.triples.len() as f64).floor() as usize;
        let mut held = vec![false; self.triples.len()];
        for &i in &order[..n_hold] {
            held[i] = true;
        }
        let (test, train): (Vec<_>, Vec<_>) = self.triples.iter().zip(&held).partition(|(_, &h)| h);
        Ok((
            train.into_iter().map(|(t, _)| *t).collect(),
            test.into_iter().map(|(t, _)| *t).collect(),
        ))
    }
}

/// Normalized surface form -> candidate entities, best prior first.
#[derive(Debug, Clone, Default)]
pub struct AliasTable {
    alias_to_candidates: HashMap<String, Vec<EntityId>>,
    max_alias_token_len: usize,
}

impl AliasTable {
    pub fn load_alias_table(path: impl AsRef<Path>, store: &TripleStore) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), &path.display().to_string(), store)
    }

    pub fn from_reader(reader: impl BufRead, source: &str, store: &TripleStore) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let Some((key, alias)) = line.split_once('\t') else {
                return Err(Error::Parse {
                    path: source.to_owned(),
                    line: lineno + 1,
                    message: "expected entity_key<TAB>alias".into(),
                });
            };
            rows.push((key.to_owned(), alias.to_owned()));
        }
        Self::from_pairs(rows.iter().map(|(k, a)| (k.as_str(), a.as_str())), store)
    }

    /// Builds the table from `(entity_key, alias)` pairs. Aliases that
    /// normalize to nothing are skipped.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
        store: &TripleStore,
    ) -> Result<Self> {
        let mut unknown = BTreeSet::new();
        let mut alias_to_candidates: HashMap<String, Vec<EntityId>> = HashMap::new();
        let mut max_alias_token_len = 0;
        for (key, alias) in pairs {
            let Some(e) = store.entity_id(key) else {
                unknown.insert(key.to_owned());
                continue;
            };
            let tokens = tokenize(alias);
            if tokens.is_empty() {
                continue;
            }
            max_alias_token_len = max_alias_token_len.max(tokens.len());
            let list = alias_to_candidates.entry(tokens.join(" ")).or_default();
            if !list.contains(&e) {
                list.push(e);
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownEntities(unknown.into_iter().collect()));
        }
        for list in alias_to_candidates.values_mut() {
            list.sort_by_key(|&e| (std::cmp::Reverse(store.degree[e.0]), e));
        }
        Ok(Self {
            alias_to_candidates,
            max_alias_token_len,
        })
    }

    /// Candidates for an already-normalized alias.
    pub fn candidates(&self, normalized: &str) -> Option<&[EntityId]> {
        self.alias_to_candidates.get(normalized).map(Vec::as_slice)
    }

    pub fn max_alias_token_len(&self) -> usize {
        self.max_alias_token_len
    }

    pub fn len(&self) -> usize {
        self.alias_to_candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alias_to_candidates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[EntityId])> {
        self.alias_to_candidates
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}
