//! Mention detection and disambiguation against the alias gazetteer.
//!
//! Mentions are found by greedy left-to-right longest match over normalized
//! title tokens. Each mention resolves to one entity, either from the alias
//! table's degree-ordered candidates or from a Wikidata-style search service.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::kg_store::{AliasTable, EntityId, TripleStore};
use crate::text_encoder::tokenize;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionSpan {
    pub start_token: usize,
    /// Exclusive.
    pub end_token: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkedEntity {
    pub mention: MentionSpan,
    pub entity: EntityId,
    pub candidate_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSettings {
    pub endpoint: String,
    pub language: String,
    pub timeout_ms: u64,
    /// Retries after a transport failure; capped at one.
    pub retries: u8,
    pub max_in_flight: usize,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://www.wikidata.org/w/api.php".into(),
            language: "en".into(),
            timeout_ms: 5_000,
            retries: 1,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NedBackend {
    #[default]
    OfflinePrior,
    RemoteLookup(RemoteSettings),
}

/// Transport for the remote search call. Returns `(status, body)`.
pub trait SearchTransport: Send + Sync {
    fn get(&self, endpoint: &str, query: &[(&str, &str)], timeout: Duration) -> std::result::Result<(u16, String), TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Other(String),
}

/// Blocking HTTP transport.
#[derive(Debug, Default)]
pub struct HttpTransport;

impl SearchTransport for HttpTransport {
    fn get(&self, endpoint: &str, query: &[(&str, &str)], timeout: Duration) -> std::result::Result<(u16, String), TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.get(endpoint);
        for (k, v) in query {
            req = req.query(*k, *v);
        }
        match req.call() {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let body = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| TransportError::Other(e.to_string()))?;
                Ok((status, body))
            }
            Err(ureq::Error::Timeout(_)) => Err(TransportError::Timeout),
            Err(e) => Err(TransportError::Other(e.to_string())),
        }
    }
}

/// Parses a `wbsearchentities` response: the `id` of every element of the
/// `search` array, in response order.
pub fn parse_search_response(body: &str) -> Result<Vec<String>> {
    #[derive(Deserialize)]
    struct Hit {
        id: String,
    }
    #[derive(Deserialize)]
    struct Response {
        search: Vec<Hit>,
    }
    let parsed: Response = serde_json::from_str(body).map_err(|e| Error::Remote(format!("malformed body: {e}")))?;
    Ok(parsed.search.into_iter().map(|h| h.id).collect())
}

/// Counting semaphore bounding concurrent remote requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

/// Issues one search request for `surface`; at most one retry after a
/// transport failure, none after a bad status or body.
pub fn remote_query(surface: &str, settings: &RemoteSettings, transport: &dyn SearchTransport) -> Result<Vec<String>> {
    let query = [
        ("action", "wbsearchentities"),
        ("search", surface),
        ("language", settings.language.as_str()),
        ("format", "json"),
    ];
    let timeout = Duration::from_millis(settings.timeout_ms);
    let attempts = 1 + usize::from(settings.retries.min(1));
    let mut last = String::new();
    for _ in 0..attempts {
        match transport.get(&settings.endpoint, &query, timeout) {
            Ok((status, body)) if (200..300).contains(&status) => return parse_search_response(&body),
            Ok((status, _)) => return Err(Error::Remote(format!("status {status}"))),
            Err(TransportError::Timeout) => last = format!("timed out after {} ms", settings.timeout_ms),
            Err(TransportError::Other(e)) => last = e,
        }
    }
    Err(Error::Remote(last))
}

/// Shared linking context: alias table, store and disambiguation backend.
pub struct EntityLinker<'a> {
    aliases: &'a AliasTable,
    store: &'a TripleStore,
    backend: NedBackend,
    transport: Box<dyn SearchTransport + 'a>,
    in_flight: InFlight,
    fallbacks: AtomicUsize,
    strict_case: bool,
}

impl<'a> EntityLinker<'a> {
    pub fn new(aliases: &'a AliasTable, store: &'a TripleStore, backend: NedBackend) -> Self {
        Self::with_transport(aliases, store, backend, Box::new(HttpTransport))
    }

    pub fn with_transport(
        aliases: &'a AliasTable,
        store: &'a TripleStore,
        backend: NedBackend,
        transport: Box<dyn SearchTransport + 'a>,
    ) -> Self {
        let limit = match &backend {
            NedBackend::RemoteLookup(s) => s.max_in_flight,
            NedBackend::OfflinePrior => 1,
        };
        Self {
            aliases,
            store,
            backend,
            transport,
            in_flight: InFlight::new(limit),
            fallbacks: AtomicUsize::new(0),
            strict_case: false,
        }
    }

    /// Only accept mentions whose original surface starts with an uppercase
    /// letter.
    pub fn strict_case(mut self, on: bool) -> Self {
        self.strict_case = on;
        self
    }

    /// Number of remote lookups that fell back to the offline prior.
    pub fn fallback_count(&self) -> usize {
        self.fallbacks.load(Ordering::Relaxed)
    }

    pub fn disambiguate(&self, mention: &MentionSpan, candidates: &[EntityId]) -> Result<EntityId> {
        let Some(&prior) = candidates.first() else {
            return Err(Error::InvalidArgument(format!(
                "no candidates for mention {:?}",
                mention.surface
            )));
        };
        let NedBackend::RemoteLookup(settings) = &self.backend else {
            return Ok(prior);
        };
        let remote = {
            let _slot = self.in_flight.acquire();
            remote_query(&mention.surface, settings, self.transport.as_ref())
        };
        let hit = remote
            .ok()
            .and_then(|keys| keys.iter().find_map(|k| self.store.entity_id(k)));
        Ok(hit.unwrap_or_else(|| {
            self.fallbacks.fetch_add(1, Ordering::Relaxed);
            prior
        }))
    }

    /// Recognized and disambiguated mentions in title order.
    pub fn link_mentions(&self, title: &str) -> Result<Vec<LinkedEntity>> {
        let raw: Vec<&str> = title.split_whitespace().collect();
        let tokens = tokenize(title);
        let spans = recognize_mentions(&tokens, self.aliases);
        let mut out = Vec::with_capacity(spans.len());
        for span in spans {
            if self.strict_case && !starts_uppercase(&raw, &tokens, span.start_token) {
                continue;
            }
            let candidates = self.aliases.candidates(&span.surface).unwrap_or_default();
            let entity = self.disambiguate(&span, candidates)?;
            out.push(LinkedEntity {
                candidate_count: candidates.len(),
                mention: span,
                entity,
            });
        }
        Ok(out)
    }

    /// Entity ids mentioned in `title`, deduplicated in first-occurrence order.
    pub fn link_title(&self, title: &str) -> Result<Vec<EntityId>> {
        let mut seen = Vec::new();
        for linked in self.link_mentions(title)? {
            if !seen.contains(&linked.entity) {
                seen.push(linked.entity);
            }
        }
        Ok(seen)
    }
}

/// Whether the raw word behind normalized token `index` starts uppercase.
fn starts_uppercase(raw: &[&str], tokens: &[String], index: usize) -> bool {
    // tokenize drops raw words that normalize to nothing; walk them in step
    let mut k = 0;
    for word in raw {
        if crate::text_encoder::normalize_token(word).is_empty() {
            continue;
        }
        if k == index {
            return word
                .chars()
                .find(|c| c.is_alphanumeric())
                .is_some_and(char::is_uppercase);
        }
        k += 1;
    }
    debug_assert!(index >= tokens.len());
    false
}

/// Greedy left-to-right longest match of normalized token windows against the
/// alias table. Spans never overlap; scanning resumes after each match.
pub fn recognize_mentions<S: AsRef<str>>(title_tokens: &[S], aliases: &AliasTable) -> Vec<MentionSpan> {
    let max_len = aliases.max_alias_token_len();
    let mut spans = Vec::new();
    let mut start = 0;
    while start < title_tokens.len() {
        let longest = (1..=max_len.min(title_tokens.len() - start)).rev().find_map(|len| {
            let surface = join(&title_tokens[start..start + len]);
            aliases.candidates(&surface).map(|_| (len, surface))
        });
        match longest {
            Some((len, surface)) => {
                spans.push(MentionSpan {
                    start_token: start,
                    end_token: start + len,
                    surface,
                });
                start += len;
            }
            None => start += 1,
        }
    }
    spans
}

fn join<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")
}
