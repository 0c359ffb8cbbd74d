//! Exact cosine index over signal texts.
//!
//! Each signal can be embedded from three sources: its codec source
//! (`raw_code`), its catalog description (`original_description`) or the
//! provider-enriched description (`rewritten_description`). Queries scan
//! every entry of the requested strategy, so results are exact.
//!
//! Writers need `&mut SignalIndex` and readers `&SignalIndex`; callers that
//! share an index across threads wrap it in a `RwLock`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{rewrite_description, SignalCatalog, SignalDef};
use crate::codec::{render_source, rule_codec, SignalCodec};
use crate::provider::{CompletionProvider, ProviderError};

/// Embedding dimension of the hashed token embedder.
pub const DIMENSION: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RawCode,
    OriginalDescription,
    RewrittenDescription,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::RawCode,
        Strategy::OriginalDescription,
        Strategy::RewrittenDescription,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::RawCode => "raw_code",
            Strategy::OriginalDescription => "original_description",
            Strategy::RewrittenDescription => "rewritten_description",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = IndexError;
    fn from_str(s: &str) -> Result<Self, IndexError> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| IndexError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("text has no tokens to embed")]
    EmptyText,
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding has dimension {got}, index expects {want}")]
    Dimension { got: usize, want: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{0}")]
    Build(String),
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Cosine similarity; both vectors are unit norm so this is the dot
    /// product.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Lowercase alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Bucket of a token in the hashed embedding.
pub fn bucket(token: &str) -> usize {
    (fnv1a(token) % DIMENSION as u64) as usize
}

/// Hashed token-count embedding, L2-normalized.
pub fn embed(text: &str) -> Result<EmbeddingVector, IndexError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(IndexError::EmptyText);
    }
    let mut v = vec![0.0; DIMENSION];
    for t in &tokens {
        v[bucket(t)] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(EmbeddingVector(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub signal: String,
    pub strategy: Strategy,
    pub vector: EmbeddingVector,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub signal: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalIndex {
    entries: BTreeMap<(Strategy, String), IndexEntry>,
}

impl SignalIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace the entry for (signal, strategy).
    pub fn insert(&mut self, entry: IndexEntry) -> Result<(), IndexError> {
        if entry.vector.dimension() != DIMENSION {
            return Err(IndexError::Dimension {
                got: entry.vector.dimension(),
                want: DIMENSION,
            });
        }
        self.entries
            .insert((entry.strategy, entry.signal.clone()), entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        let mut s: Vec<Strategy> = self.entries.keys().map(|(s, _)| *s).collect();
        s.dedup();
        s
    }

    pub fn entry(&self, signal: &str, strategy: Strategy) -> Option<&IndexEntry> {
        self.entries.get(&(strategy, signal.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.values()
    }

    /// Exact top-k by cosine, ties broken by signal name.
    pub fn query_top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        strategy: Strategy,
    ) -> Result<Vec<Hit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dimension() != DIMENSION {
            return Err(IndexError::Dimension {
                got: query.dimension(),
                want: DIMENSION,
            });
        }
        let mut hits: Vec<Hit> = self
            .entries
            .range((strategy, String::new())..)
            .take_while(|((s, _), _)| *s == strategy)
            .map(|(_, e)| Hit {
                signal: e.signal.clone(),
                similarity: e.vector.cosine(query),
            })
            .collect();
        if hits.is_empty() {
            return Err(IndexError::UnknownStrategy(format!(
                "{strategy} (no entries in this index)"
            )));
        }
        hits.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| a.signal.cmp(&b.signal))
        });
        hits.truncate(k);
        Ok(hits)
    }

    pub fn save(&self, path: &Path) -> Result<(), crate::Error> {
        let entries: Vec<&IndexEntry> = self.entries.values().collect();
        let text = serde_json::to_string_pretty(&entries).expect("index serializes");
        std::fs::write(path, text).map_err(|e| crate::Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SignalIndex, crate::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        let entries: Vec<IndexEntry> =
            serde_json::from_str(&text).map_err(|e| crate::Error::format(path, e.to_string()))?;
        let mut index = SignalIndex::new();
        for e in entries {
            index
                .insert(e)
                .map_err(|e| crate::Error::format(path, e.to_string()))?;
        }
        Ok(index)
    }
}

/// Text a signal is embedded from under `strategy`.
pub fn source_text(
    def: &SignalDef,
    catalog: &SignalCatalog,
    strategy: Strategy,
    provider: &dyn CompletionProvider,
) -> Result<String, IndexError> {
    Ok(match strategy {
        Strategy::RawCode => {
            let lookup = |n: &str| catalog.get(n);
            let expr = rule_codec(def, &lookup).map_err(IndexError::Build)?;
            render_source(&SignalCodec {
                signal: def.name.clone(),
                kind: def.kind,
                expr,
            })
        }
        Strategy::OriginalDescription => {
            if def.description.trim().is_empty() {
                def.name.clone()
            } else {
                def.description.clone()
            }
        }
        Strategy::RewrittenDescription => rewrite_description(def, provider)?,
    })
}

/// Embed every catalog signal under each of `strategies`.
pub fn build_index(
    catalog: &SignalCatalog,
    strategies: &[Strategy],
    provider: &dyn CompletionProvider,
) -> Result<SignalIndex, IndexError> {
    let mut index = SignalIndex::new();
    for &strategy in strategies {
        for def in catalog.iter() {
            let text = source_text(def, catalog, strategy, provider)?;
            index.insert(IndexEntry {
                signal: def.name.clone(),
                strategy,
                vector: embed(&text)?,
                text,
            })?;
        }
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, text: &str) -> IndexEntry {
        IndexEntry {
            signal: name.into(),
            strategy: Strategy::OriginalDescription,
            vector: embed(text).unwrap(),
            text: text.into(),
        }
    }

    #[test]
    fn embedding_is_unit_and_deterministic() {
        let a = embed("Front wiper state").unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert!((a.cosine(&embed("Front wiper state").unwrap()) - 1.0).abs() < 1e-12);
        assert!(matches!(embed("  -- "), Err(IndexError::EmptyText)));
    }

    #[test]
    fn token_order_is_irrelevant() {
        let a = embed("wiper speed front").unwrap();
        let b = embed("front wiper speed").unwrap();
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_tokens_are_orthogonal() {
        let (a, b) = ("wiper", "battery");
        assert_ne!(bucket(a), bucket(b));
        assert_eq!(embed(a).unwrap().cosine(&embed(b).unwrap()), 0.0);
    }

    #[test]
    fn self_match_and_size_clamp() {
        let mut idx = SignalIndex::new();
        idx.insert(entry("A", "wiper state")).unwrap();
        let hits = idx.query_top_k(&embed("wiper state").unwrap(), 5, Strategy::OriginalDescription).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].signal, "A");
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
        idx.insert(entry("B", "door open")).unwrap();
        idx.insert(entry("C", "battery level")).unwrap();
        assert_eq!(idx.query_top_k(&embed("x").unwrap(), 5, Strategy::OriginalDescription).unwrap().len(), 3);
        assert!(matches!(
            idx.query_top_k(&embed("x").unwrap(), 5, Strategy::RawCode),
            Err(IndexError::UnknownStrategy(_))
        ));
        assert!(matches!("nope".parse::<Strategy>(), Err(IndexError::UnknownStrategy(_))));
    }

    #[test]
    fn ties_break_by_name() {
        let mut idx = SignalIndex::new();
        for n in ["Zed", "Alpha", "Mid"] {
            idx.insert(entry(n, "same words")).unwrap();
        }
        let hits = idx.query_top_k(&embed("same words").unwrap(), 2, Strategy::OriginalDescription).unwrap();
        let names: Vec<_> = hits.iter().map(|h| h.signal.as_str()).collect();
        assert_eq!(names, ["Alpha", "Mid"]);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = SignalIndex::new();
        idx.insert(entry("A", "wiper state")).unwrap();
        let path = dir.path().join("index.json");
        idx.save(&path).unwrap();
        assert_eq!(SignalIndex::load(&path).unwrap(), idx);
    }
}
