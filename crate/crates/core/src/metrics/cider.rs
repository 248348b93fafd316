use std::collections::{BTreeMap, HashMap, HashSet};

use super::{check_parallel, ngram_counts, order_free_sum, Tokens, MAX_N};
use crate::error::Result;

/// Width of the Gaussian length penalty.
pub const CIDER_SIGMA: f64 = 6.0;
/// Scores are multiplied by 10, following the common reporting convention.
pub const CIDER_SCALE: f64 = 10.0;

/// Per-order TF-IDF vectors of one sentence, their norms, and its length as
/// counted by the reference evaluation code (number of bigrams).
struct SentenceVec<'a> {
    vec: Vec<BTreeMap<&'a [String], f64>>,
    norm: [f64; MAX_N],
    length: f64,
}

struct Idf<'a> {
    df: HashMap<&'a [String], usize>,
    log_n: f64,
}

impl<'a> Idf<'a> {
    /// Document frequency counts an n-gram once per reference set.
    fn build(references: &'a [Vec<Tokens>]) -> Self {
        let mut df = HashMap::new();
        for refs in references {
            let mut seen = HashSet::new();
            for r in refs {
                for n in 1..=MAX_N {
                    seen.extend(r.windows(n));
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Idf {
            df,
            log_n: (references.len() as f64).ln(),
        }
    }

    fn weigh<'s>(&self, sentence: &'s [String]) -> SentenceVec<'s> {
        let mut vec = Vec::with_capacity(MAX_N);
        let mut norm = [0.0; MAX_N];
        for n in 1..=MAX_N {
            let mut v = BTreeMap::new();
            for (g, tf) in ngram_counts(sentence, n) {
                let df = self.df.get(g).copied().unwrap_or(0).max(1) as f64;
                let w = tf as f64 * (self.log_n - df.ln());
                norm[n - 1] += w * w;
                v.insert(g, w);
            }
            vec.push(v);
        }
        SentenceVec {
            vec,
            norm: norm.map(f64::sqrt),
            length: sentence.len().saturating_sub(1) as f64,
        }
    }
}

fn similarity(hyp: &SentenceVec, reference: &SentenceVec, sigma: f64) -> [f64; MAX_N] {
    let delta = hyp.length - reference.length;
    let penalty = (-(delta * delta) / (2.0 * sigma * sigma)).exp();
    let mut out = [0.0; MAX_N];
    for n in 0..MAX_N {
        let mut val: f64 = hyp.vec[n]
            .iter()
            .filter_map(|(g, &h)| reference.vec[n].get(g).map(|&r| h.min(r) * r))
            .sum();
        if hyp.norm[n] != 0.0 && reference.norm[n] != 0.0 {
            val /= hyp.norm[n] * reference.norm[n];
        }
        out[n] = val * penalty;
    }
    out
}

/// CIDEr-D with a configurable length-penalty width.
pub fn cider_with_sigma(candidates: &[Tokens], references: &[Vec<Tokens>], sigma: f64) -> Result<f64> {
    check_parallel(candidates, references)?;
    if references.len() < 2 {
        log::warn!("CIDEr over a single pair is degenerate: every n-gram has zero IDF");
    }
    let idf = Idf::build(references);
    let scores: Vec<f64> = candidates
        .iter()
        .zip(references)
        .map(|(cand, refs)| {
            if refs.is_empty() {
                return 0.0;
            }
            let hyp = idf.weigh(cand);
            let mut acc = [0.0; MAX_N];
            for r in refs {
                let s = similarity(&hyp, &idf.weigh(r), sigma);
                for n in 0..MAX_N {
                    acc[n] += s[n];
                }
            }
            let mean_n = acc.iter().sum::<f64>() / MAX_N as f64;
            mean_n / refs.len() as f64 * CIDER_SCALE
        })
        .collect();
    let n = scores.len() as f64;
    Ok(order_free_sum(scores) / n)
}

pub fn cider(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<f64> {
    cider_with_sigma(candidates, references, CIDER_SIGMA)
}

#[cfg(test)]
mod tests {
    use super::super::{single_references, tokens};
    use super::*;

    #[test]
    fn token_in_every_reference_has_zero_idf() {
        let refs = single_references(&[tokens("no effusion"), tokens("no edema"), tokens("no pneumothorax")]);
        let idf = Idf::build(&refs);
        let no = tokens("no");
        // df = 3 = N, so log(3) - log(3) = 0
        assert_eq!(idf.df[no.as_slice()], 3);
        let v = idf.weigh(&no);
        assert_eq!(v.vec[0][no.as_slice()], 0.0);
        // "edema" appears once: log(3) - log(1)
        let edema = tokens("edema");
        assert!((idf.weigh(&edema).vec[0][edema.as_slice()] - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disjoint_candidate_scores_zero() {
        let c = vec![tokens("x y z"), tokens("heart normal")];
        let r = single_references(&[tokens("a b c"), tokens("heart normal")]);
        let s = cider(&c[..1], &r[..1]).unwrap();
        assert_eq!(s, 0.0);
        let both = cider(&c, &r).unwrap();
        // the matching pair alone: unigram and bigram cosines are 1
        assert!((both - (10.0 * 2.0 / 4.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_corpus_hits_maximum() {
        let c = vec![
            tokens("the heart size is normal"),
            tokens("no focal consolidation is seen"),
            tokens("mild cardiomegaly is present"),
        ];
        // every n-gram of length 1..4 has nonzero weight except "is"
        let s = cider(&c, &single_references(&c)).unwrap();
        assert!((s - 10.0).abs() < 1e-12);
    }
}
