use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::text::TokenizedReport;
use crate::error::{Error, Result};

/// Index of the padding token; doubles as the decoder's start symbol.
pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Sentence separator.
pub const SEP: usize = 2;
pub const STOP: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<sep>", "<stop>"];

/// Token ↔ index mapping built from the training split.
///
/// Indices `0..4` are the reserved tokens; every other entry is a token seen
/// at least twice in training. Anything else encodes to [`UNK`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
    hash: String,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Builds from training reports: tokens with frequency ≥ 2 get indices in
    /// lexicographic order after the reserved block.
    pub fn build(train_reports: &[TokenizedReport]) -> Result<Self> {
        if train_reports.is_empty() {
            return Err(Error::EmptyCorpus("no training reports to build a vocabulary from".into()));
        }
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for r in train_reports {
            for t in r.tokens() {
                *freq.entry(t).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            freq.into_iter()
                .filter(|&(t, n)| n >= 2 && !RESERVED.contains(&t))
                .map(|(t, _)| t.to_string()),
        );
        Ok(Self::from_tokens(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode_token(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Decoder target sequence: every sentence followed by [`SEP`], then
    /// [`STOP`].
    pub fn encode(&self, report: &TokenizedReport) -> Vec<usize> {
        let mut out = Vec::with_capacity(report.num_tokens() + report.sentences.len() + 1);
        for s in &report.sentences {
            out.extend(s.iter().map(|t| self.encode_token(t)));
            out.push(SEP);
        }
        out.push(STOP);
        out
    }

    /// Inverse of [`Vocabulary::encode`]: splits at [`SEP`], ends at
    /// [`STOP`], skips [`PAD`]. A trailing sentence without separator is
    /// kept.
    pub fn decode(&self, indices: &[usize]) -> Result<TokenizedReport> {
        let mut sentences = Vec::new();
        let mut current = Vec::new();
        for &i in indices {
            match i {
                STOP => break,
                PAD => {}
                SEP => {
                    if !current.is_empty() {
                        sentences.push(std::mem::take(&mut current));
                    }
                }
                _ => {
                    let t = self.token(i).ok_or(Error::TokenIndex {
                        index: i,
                        size: self.len(),
                    })?;
                    current.push(t.to_string());
                }
            }
        }
        if !current.is_empty() {
            sentences.push(current);
        }
        Ok(TokenizedReport { sentences })
    }

    /// Digest binding checkpoints to this exact vocabulary.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&VocabularyFile {
            tokens: self.tokens.clone(),
            hash: self.hash(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_str(text)?;
        if file.tokens.len() < RESERVED.len()
            || file.tokens.iter().zip(RESERVED).any(|(a, b)| a != b)
        {
            return Err(Error::InvalidInput("vocabulary lacks the reserved tokens".into()));
        }
        let v = Self::from_tokens(file.tokens);
        if v.index.len() != v.tokens.len() {
            return Err(Error::InvalidInput("vocabulary has duplicate tokens".into()));
        }
        if v.hash() != file.hash {
            return Err(Error::ArtifactMismatch("vocabulary hash does not match its tokens".into()));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::preprocess_report;

    fn report(text: &str) -> TokenizedReport {
        preprocess_report(text, "")
    }

    #[test]
    fn single_occurrence_tokens_encode_to_unk() {
        let v = Vocabulary::build(&[report("a a b")]).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.encode_token("b"), UNK);
    }

    #[test]
    fn frequency_counts_span_reports() {
        let v = Vocabulary::build(&[report("x y"), report("x z")]).unwrap();
        assert!(v.contains("x"));
        assert_eq!(v.encode_token("y"), UNK);
        assert_eq!(v.encode_token("z"), UNK);
    }

    #[test]
    fn empty_reports_give_reserved_only() {
        let v = Vocabulary::build(&[TokenizedReport::default()]).unwrap();
        assert_eq!(v.len(), RESERVED.len());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(Vocabulary::build(&[]), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn encode_appends_separators_and_stop() {
        let v = Vocabulary::build(&[report("a b. a b.")]).unwrap();
        let seq = v.encode(&report("a b. b c."));
        let a = v.encode_token("a");
        let b = v.encode_token("b");
        assert_eq!(seq, vec![a, b, SEP, b, UNK, SEP, STOP]);
        let back = v.decode(&seq).unwrap();
        let expected: Vec<Vec<String>> = vec![
            vec!["a".into(), "b".into()],
            vec!["b".into(), "<unk>".into()],
        ];
        assert_eq!(back.sentences, expected);
    }

    #[test]
    fn decode_rejects_out_of_range_index() {
        let v = Vocabulary::build(&[report("a a")]).unwrap();
        assert!(matches!(v.decode(&[99]), Err(Error::TokenIndex { index: 99, .. })));
    }

    #[test]
    fn json_round_trip_checks_hash() {
        let v = Vocabulary::build(&[report("lungs clear. lungs clear.")]).unwrap();
        let back = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(back, v);
        let tampered = v.to_json().unwrap().replace("lungs", "heart");
        assert!(Vocabulary::from_json(&tampered).is_err());
    }
}
