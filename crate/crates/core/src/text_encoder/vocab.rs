use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const RESERVED: usize = 2;
pub const DEFAULT_VOCAB_CAP: usize = 10_000;
pub const MAX_TOKENS: usize = 256;

/// Token ids with a padding mask (`true` = real token).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
    mask: Vec<bool>,
}

impl TokenSequence {
    /// Fails if lengths differ, a padded slot holds a non-padding id, or the
    /// sequence is longer than [`MAX_TOKENS`].
    pub fn new(ids: Vec<usize>, mask: Vec<bool>) -> Result<Self> {
        if ids.len() != mask.len() {
            return Err(Error::Shape(format!("{} ids but {} mask entries", ids.len(), mask.len())));
        }
        if ids.len() > MAX_TOKENS {
            return Err(Error::Shape(format!("sequence of {} exceeds {MAX_TOKENS} tokens", ids.len())));
        }
        if ids.iter().zip(&mask).any(|(&id, &m)| !m && id != PAD_ID) {
            return Err(Error::InvalidArgument("non-padding id under a false mask".into()));
        }
        Ok(Self { ids, mask })
    }

    /// All-real sequence, truncated to [`MAX_TOKENS`].
    pub fn from_ids(mut ids: Vec<usize>) -> Self {
        ids.truncate(MAX_TOKENS);
        let mask = vec![true; ids.len()];
        Self { ids, mask }
    }

    /// Appends padding up to `len` total positions (capped at [`MAX_TOKENS`]).
    pub fn padded_to(&self, len: usize) -> Self {
        let mut out = self.clone();
        while out.ids.len() < len.min(MAX_TOKENS) {
            out.ids.push(PAD_ID);
            out.mask.push(false);
        }
        out
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids at real (unmasked) positions, in order.
    pub fn real_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(&id, _)| id)
    }
}

/// Frequency-ranked token vocabulary. Ids 0 and 1 are padding and unknown;
/// the cap counts them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `cap - 2` most frequent tokens, ties broken by first
    /// appearance.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], cap: usize) -> Self {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        for tok in corpus.iter().flatten() {
            let next = counts.len();
            counts.entry(tok.as_ref()).or_insert((0, next)).0 += 1;
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (n, first))| (t, n, first)).collect();
        ranked.sort_by_key(|&(_, n, first)| (std::cmp::Reverse(n), first));
        ranked.truncate(cap.saturating_sub(RESERVED));
        Self::from_tokens(ranked.into_iter().map(|(t, _, _)| t.to_owned()).collect())
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + RESERVED))
            .collect();
        Self { tokens, index }
    }

    /// Total id count including the reserved slots.
    pub fn len(&self) -> usize {
        self.tokens.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            PAD_ID => Some("<pad>"),
            UNK_ID => Some("<unk>"),
            _ => self.tokens.get(id - RESERVED).map(String::as_str),
        }
    }

    /// Maps tokens to ids, keeping the first [`MAX_TOKENS`].
    pub fn encode_ids<S: AsRef<str>>(&self, tokens: &[S]) -> TokenSequence {
        TokenSequence::from_ids(tokens.iter().take(MAX_TOKENS).map(|t| self.id(t.as_ref())).collect())
    }

    /// One token per line; line `n` (0-based) holds id `n + 2`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 0,
                message: "duplicate tokens in vocabulary file".into(),
            });
        }
        Ok(vocab)
    }
}
