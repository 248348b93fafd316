use serde::{Deserialize, Serialize};

/// A normalized report: ordered sentences of lowercase alphanumeric tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenizedReport {
    pub sentences: Vec<Vec<String>>,
}

impl TokenizedReport {
    pub fn new(sentences: Vec<Vec<String>>) -> Self {
        TokenizedReport { sentences }
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }

    /// All tokens in order, sentences concatenated.
    pub fn flat(&self) -> Vec<String> {
        self.tokens().map(str::to_string).collect()
    }

    /// Renders as prose: tokens joined by spaces, each sentence ended by a
    /// period. Feeding this back through [`preprocess_report`] is a no-op.
    pub fn to_text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| format!("{}.", s.join(" ")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if is_terminal(c) {
            let boundary = match iter.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if boundary {
                out.push(&text[start..i]);
                start = i + c.len_utf8();
            }
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn tokenize_sentence(sentence: &str) -> Vec<String> {
    sentence
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn normalize(text: &str) -> Vec<Vec<String>> {
    sentences(text)
        .into_iter()
        .map(tokenize_sentence)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Normalizes the impression and findings sections into one tokenized
/// report, impression first.
///
/// Text is lowercased, split into sentences at terminal punctuation and into
/// tokens at every non-alphanumeric character; empty tokens and sentences are
/// dropped. Rare-token replacement happens later, at vocabulary encoding.
pub fn preprocess_report(impression: &str, findings: &str) -> TokenizedReport {
    let mut sentences = normalize(impression);
    sentences.extend(normalize(findings));
    TokenizedReport { sentences }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(report: &TokenizedReport) -> Vec<Vec<&str>> {
        report
            .sentences
            .iter()
            .map(|s| s.iter().map(String::as_str).collect())
            .collect()
    }

    #[test]
    fn lowercases_and_strips_terminal_punctuation() {
        let r = preprocess_report("No Focal Consolidation.", "");
        assert_eq!(toks(&r), vec![vec!["no", "focal", "consolidation"]]);
    }

    #[test]
    fn empty_input_gives_empty_report() {
        assert!(preprocess_report("", "").is_empty());
        assert!(preprocess_report("  ...  ", " - ").is_empty());
    }

    #[test]
    fn splits_sentences() {
        let r = preprocess_report("", "Heart size normal. Lungs clear.");
        assert_eq!(toks(&r), vec![vec!["heart", "size", "normal"], vec!["lungs", "clear"]]);
    }

    #[test]
    fn impression_precedes_findings() {
        let r = preprocess_report("No acute disease", "Lungs clear!");
        assert_eq!(toks(&r), vec![vec!["no", "acute", "disease"], vec!["lungs", "clear"]]);
    }

    #[test]
    fn decimal_points_do_not_end_sentences() {
        let r = preprocess_report("A 3.5 cm nodule, right-sided. Stable?", "");
        assert_eq!(
            toks(&r),
            vec![vec!["a", "3", "5", "cm", "nodule", "right", "sided"], vec!["stable"]]
        );
    }

    #[test]
    fn punctuation_only_tokens_are_dropped() {
        let r = preprocess_report("XXXX , / - effusion ; (mild)", "");
        assert_eq!(toks(&r), vec![vec!["xxxx", "effusion", "mild"]]);
    }

    #[test]
    fn text_rendering_is_a_fixed_point() {
        let r = preprocess_report("Heart size NORMAL. No effusion!", "Lungs: clear?");
        assert_eq!(preprocess_report(&r.to_text(), ""), r);
    }
}
