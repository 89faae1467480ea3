//! Fixed word vectors and phrase composition.
//!
//! Text format: one entry per line, a token followed by `dim`
//! whitespace-separated decimals. A leading `<count> <dim>` header line (as
//! written by word2vec tools) is skipped. Words are lowercased at load and at
//! lookup; when two lines collapse to the same word the first one wins and a
//! warning is logged.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::autodiff::{Array, Scalar};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} values, found {found}")]
    InconsistentDimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: invalid number {token:?}")]
    Parse { line: usize, token: String },
    #[error("embedding table is empty")]
    Empty,
    #[error("empty phrase")]
    EmptyPhrase,
    #[error("alias file line {0}: expected \"token<TAB>replacement\"")]
    BadAlias(usize),
}

/// Token rewrites applied while composing slot and value phrases, e.g.
/// `pricerange → price range`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Aliases {
    map: HashMap<String, Vec<String>>,
}

impl Aliases {
    pub fn new() -> Self {
        Self::default()
    }

    /// The single rewrite needed for the restaurant-domain ontology.
    pub fn restaurant_defaults() -> Self {
        let mut aliases = Self::new();
        aliases.insert("pricerange", "price range");
        aliases
    }

    pub fn insert(&mut self, token: &str, replacement: &str) {
        self.map.insert(
            token.to_lowercase(),
            replacement.split_whitespace().map(str::to_lowercase).collect(),
        );
    }

    pub fn get(&self, token: &str) -> Option<&[String]> {
        self.map.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Parses `token<TAB>replacement phrase` lines; blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut aliases = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (token, replacement) = line.split_once('\t').ok_or(EmbeddingError::BadAlias(i + 1))?;
            if token.trim().is_empty() || replacement.trim().is_empty() {
                return Err(EmbeddingError::BadAlias(i + 1));
            }
            aliases.insert(token.trim(), replacement.trim());
        }
        Ok(aliases)
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let text = std::fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

/// Immutable word → vector map.
#[derive(Debug)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
    aliases: Aliases,
    oov_lookups: AtomicU64,
}

impl PartialEq for EmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.index == other.index
            && self.data == other.data
            && self.aliases == other.aliases
    }
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            index: self.index.clone(),
            data: self.data.clone(),
            aliases: self.aliases.clone(),
            oov_lookups: AtomicU64::new(self.oov_lookups.load(Ordering::Relaxed)),
        }
    }
}

/// Splits a slot or value name on whitespace, underscore and hyphen.
pub fn phrase_tokens(phrase: &str) -> Vec<String> {
    phrase
        .split(|c: char| c.is_whitespace() || c == '_' || c == '-')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl EmbeddingTable {
    /// Builds a table from in-memory entries; the first occurrence of a word
    /// wins.
    pub fn from_entries<S, I>(dim: usize, entries: I) -> Result<Self, EmbeddingError>
    where
        S: AsRef<str>,
        I: IntoIterator<Item = (S, Vec<f32>)>,
    {
        let mut table = Self::with_dim(dim);
        for (i, (word, vector)) in entries.into_iter().enumerate() {
            if vector.len() != dim {
                return Err(EmbeddingError::InconsistentDimension {
                    line: i + 1,
                    expected: dim,
                    found: vector.len(),
                });
            }
            table.insert(word.as_ref(), &vector);
        }
        if table.index.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        Ok(table)
    }

    fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            index: HashMap::new(),
            data: Vec::new(),
            aliases: Aliases::default(),
            oov_lookups: AtomicU64::new(0),
        }
    }

    fn insert(&mut self, word: &str, vector: &[f32]) {
        let key = word.to_lowercase();
        if self.index.contains_key(&key) {
            log::warn!("duplicate embedding for {key:?}; keeping the first");
            return;
        }
        self.index.insert(key, self.index.len());
        self.data.extend_from_slice(vector);
    }

    /// Parses the text format from any reader.
    pub fn parse<R: BufRead>(reader: R, expected_dim: Option<usize>) -> Result<Self, EmbeddingError> {
        let mut table: Option<Self> = expected_dim.map(Self::with_dim);
        let mut values = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| EmbeddingError::Io {
                path: "<reader>".into(),
                source,
            })?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            if i == 0 && rest.len() == 1 && word.parse::<u64>().is_ok() && rest[0].parse::<u64>().is_ok() {
                continue;
            }
            values.clear();
            for token in &rest {
                let v: f32 = token.parse().map_err(|_| EmbeddingError::Parse {
                    line: i + 1,
                    token: (*token).to_string(),
                })?;
                values.push(v);
            }
            let t = table.get_or_insert_with(|| Self::with_dim(values.len()));
            if values.len() != t.dim || values.is_empty() {
                return Err(EmbeddingError::InconsistentDimension {
                    line: i + 1,
                    expected: t.dim,
                    found: values.len(),
                });
            }
            t.insert(word, &values);
        }
        match table {
            Some(t) if !t.index.is_empty() => Ok(t),
            _ => Err(EmbeddingError::Empty),
        }
    }

    pub fn load(path: &Path, expected_dim: Option<usize>) -> Result<Self, EmbeddingError> {
        let file = File::open(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(BufReader::new(file), expected_dim)
    }

    /// Attaches phrase aliases. Consumes the table so it stays immutable once
    /// shared.
    pub fn with_aliases(mut self, aliases: Aliases) -> Self {
        self.aliases = aliases;
        self
    }

    pub fn aliases(&self) -> &Aliases {
        &self.aliases
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&word.to_lowercase())
    }

    /// Stored vector for `word`, or `None` (counted as an OOV lookup).
    pub fn lookup(&self, word: &str) -> Option<&[f32]> {
        let found = match self.index.get(word) {
            Some(&i) => Some(i),
            None => self.index.get(&word.to_lowercase()).copied(),
        };
        match found {
            Some(i) => Some(&self.data[i * self.dim..(i + 1) * self.dim]),
            None => {
                self.oov_lookups.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    /// Out-of-vocabulary lookups since load.
    pub fn oov_count(&self) -> u64 {
        self.oov_lookups.load(Ordering::Relaxed)
    }

    /// Stored vector, or zeros for an unknown word.
    pub fn word_vector<T: Scalar>(&self, word: &str) -> Array<T> {
        let mut out = vec![T::zero(); self.dim];
        self.add_word(word, T::one(), &mut out);
        Array::vector(out)
    }

    /// `out += weight · vector(word)`; unknown words add nothing.
    pub fn add_word<T: Scalar>(&self, word: &str, weight: T, out: &mut [T]) {
        if let Some(v) = self.lookup(word) {
            for (o, &x) in out.iter_mut().zip(v) {
                *o = *o + weight * T::lit(x as f64);
            }
        }
    }

    /// Sum of the word vectors of a slot or value name, after alias
    /// expansion.
    pub fn phrase_vector<T: Scalar>(&self, phrase: &str) -> Result<Array<T>, EmbeddingError> {
        let tokens = phrase_tokens(phrase);
        if tokens.is_empty() {
            return Err(EmbeddingError::EmptyPhrase);
        }
        let mut out = vec![T::zero(); self.dim];
        for token in &tokens {
            match self.aliases.get(token) {
                Some(expanded) => {
                    for t in expanded {
                        self.add_word(t, T::one(), &mut out);
                    }
                }
                None => self.add_word(token, T::one(), &mut out),
            }
        }
        Ok(Array::vector(out))
    }
}
