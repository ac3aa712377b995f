use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";

/// Dense token ↔ id mapping. Id 0 is always the unknown token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    id_of: HashMap<String, usize>,
    min_count: usize,
}

impl Vocab {
    /// Builds a vocabulary from token counts. Tokens seen fewer than
    /// `min_count` times fold into `<unk>`. Ordering is by descending
    /// frequency, then lexicographic, so ids are stable for a given corpus.
    pub fn from_counts<'a, I>(tokens: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && *t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut list = Vec::with_capacity(kept.len() + 1);
        list.push(UNK_TOKEN.to_string());
        list.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Self::from_tokens_unchecked(list, min_count)
    }

    /// Rebuilds a vocabulary from an ordered token list (e.g. a checkpoint).
    /// The first entry must be `<unk>`.
    pub fn from_token_list(tokens: Vec<String>, min_count: usize) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Format("vocabulary must start with <unk>".into()));
        }
        let v = Self::from_tokens_unchecked(tokens, min_count);
        if v.id_of.len() != v.tokens.len() {
            return Err(Error::Format("duplicate token in vocabulary".into()));
        }
        Ok(v)
    }

    fn from_tokens_unchecked(tokens: Vec<String>, min_count: usize) -> Self {
        let id_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            tokens,
            id_of,
            min_count,
        }
    }

    /// A synthetic vocabulary `w0 .. w{size-2}` plus `<unk>`, for tests and planted grammars.
    pub fn synthetic(size: usize) -> Self {
        let mut tokens = vec![UNK_TOKEN.to_string()];
        tokens.extend((1..size).map(|i| format!("w{i}")));
        Self::from_tokens_unchecked(tokens, 1)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        0
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> usize {
        self.id_of.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK_TOKEN)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<usize> {
        sentence.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rare_tokens_map_to_unk() {
        let v = Vocab::from_counts("a b a c a b".split(' '), 2);
        assert_eq!(v.tokens(), &["<unk>", "a", "b"]);
        assert_eq!(v.id("c"), v.unk_id());
        assert_eq!(v.id("zzz"), 0);
    }

    #[test]
    fn ids_round_trip_for_known_tokens() {
        let v = Vocab::from_counts("x y z x y z".split(' '), 1);
        let ids = v.encode(&["z", "x", "y"]);
        assert_eq!(v.decode(&ids), vec!["z", "x", "y"]);
        assert_eq!(v.encode(&v.decode(&ids)), ids);
    }

    #[test]
    fn token_list_must_lead_with_unk() {
        assert!(Vocab::from_token_list(vec!["a".into()], 1).is_err());
        assert!(Vocab::from_token_list(vec![UNK_TOKEN.into(), "a".into(), "a".into()], 1).is_err());
    }
}
