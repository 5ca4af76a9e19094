use std::collections::HashMap;

use crate::error::ModelError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Word types ordered by descending frequency, ties broken
    /// lexicographically, after the two special tokens.
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Result<Self, ModelError> {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for t in tokenize(text.as_ref()) {
                *freq.entry(t).or_default() += 1;
            }
        }
        if freq.is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        let mut words: Vec<(String, usize)> = freq.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, ModelError> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(ModelError::Checkpoint("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ModelError::Checkpoint(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Token ids with out-of-vocabulary words mapped to UNK.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, ModelError> {
        let ids: Vec<usize> = tokenize(text).iter().map(|t| self.get(t).unwrap_or(UNK)).collect();
        if ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_small() {
        let v = Vocab::build(&["The person looks left", "The person looks right"]).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(&v.tokens()[2..], ["looks", "person", "the", "left", "right"]);
        assert_eq!(v, Vocab::build(&["The person looks left", "The person looks right"]).unwrap());
        assert_eq!(v.encode("the moon").unwrap(), vec![v.get("the").unwrap(), UNK]);
        assert!(matches!(v.encode("..."), Err(ModelError::EmptySequence)));
        assert!(matches!(Vocab::build::<&str>(&[]), Err(ModelError::EmptyCorpus)));
    }

    #[test]
    fn apostrophes_split() {
        assert_eq!(tokenize("The person's head, up-left!"), ["the", "person", "s", "head", "up", "left"]);
    }
}
