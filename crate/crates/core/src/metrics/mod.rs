//! Caption evaluation: corpus BLEU-1..4, ROUGE-L and CIDEr-D.
//!
//! Every metric takes parallel candidate / reference lists. A candidate may
//! have several references; [`single_references`] wraps the common
//! one-report-per-study case.

mod bleu;
mod cider;
mod rouge;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::{bleu, sentence_bleu};
pub use cider::{cider, cider_with_sigma, CIDER_SCALE, CIDER_SIGMA};
pub use rouge::{lcs_len, rouge_l, rouge_l_with_beta, ROUGE_BETA};

/// Highest n-gram order used by BLEU and CIDEr.
pub const MAX_N: usize = 4;

pub type Tokens = Vec<String>;

/// Splits on whitespace; handy for tests and fixtures.
pub fn tokens(text: &str) -> Tokens {
    text.split_whitespace().map(str::to_owned).collect()
}

pub fn single_references(refs: &[Tokens]) -> Vec<Vec<Tokens>> {
    refs.iter().map(|r| vec![r.clone()]).collect()
}

/// Corpus-level scores, serialized as the evaluation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider: f64,
    pub n_pairs: usize,
}

impl MetricScores {
    pub fn in_range(&self) -> bool {
        self.bleu.iter().all(|b| (0.0..=1.0).contains(b))
            && (0.0..=1.0).contains(&self.rouge_l)
            && self.cider >= 0.0
    }
}

pub fn evaluate(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<MetricScores> {
    check_parallel(candidates, references)?;
    Ok(MetricScores {
        bleu: bleu(candidates, references)?,
        rouge_l: rouge_l(candidates, references)?,
        cider: cider(candidates, references)?,
        n_pairs: candidates.len(),
    })
}

pub(crate) fn check_parallel(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate captions".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::InvalidInput(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    Ok(())
}

/// Counts of every n-gram of length `n`.
pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> std::collections::BTreeMap<&[String], usize> {
    let mut counts = std::collections::BTreeMap::new();
    if n > 0 {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sum that does not depend on the order of `values`, so corpus scores are
/// invariant to permuting the pairs.
pub(crate) fn order_free_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_file_shape() {
        let c = vec![tokens("heart size normal"), tokens("no effusion")];
        let r = single_references(&c);
        let s = evaluate(&c, &r).unwrap();
        assert!(s.in_range());
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["bleu"].as_array().unwrap().len(), 4);
        assert_eq!(v["n_pairs"], 2);
        assert!(v["rouge_l"].is_number() && v["cider"].is_number());
    }

    #[test]
    fn rejects_mismatched_or_empty_lists() {
        assert!(evaluate(&[], &[]).is_err());
        assert!(evaluate(&[tokens("a")], &[]).is_err());
    }

    mod oracle {
        //! Deliberately naive re-implementations: n-grams as owned vectors,
        //! counting by linear scan, LCS by full table, dense TF-IDF vectors.
        use super::super::Tokens;

        fn grams(s: &[String], n: usize) -> Vec<Vec<String>> {
            let mut out = Vec::new();
            let mut i = 0;
            while i + n <= s.len() {
                out.push(s[i..i + n].to_vec());
                i += 1;
            }
            out
        }

        fn count(list: &[Vec<String>], g: &[String]) -> usize {
            list.iter().filter(|x| x.as_slice() == g).count()
        }

        fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
            let mut out: Vec<Vec<String>> = Vec::new();
            for g in list {
                if !out.contains(g) {
                    out.push(g.clone());
                }
            }
            out
        }

        pub fn bleu(cands: &[Tokens], refs: &[Vec<Tokens>]) -> [f64; 4] {
            let mut c_len = 0.0;
            let mut r_len = 0.0;
            let mut m = [0.0; 4];
            let mut t = [0.0; 4];
            for (c, rs) in cands.iter().zip(refs) {
                c_len += c.len() as f64;
                let mut best: Option<usize> = None;
                for r in rs {
                    let better = match best {
                        None => true,
                        Some(b) => {
                            let (d, db) = (r.len().abs_diff(c.len()), b.abs_diff(c.len()));
                            d < db || (d == db && r.len() < b)
                        }
                    };
                    if better {
                        best = Some(r.len());
                    }
                }
                r_len += best.unwrap_or(0) as f64;
                for n in 1..=4 {
                    let cg = grams(c, n);
                    t[n - 1] += cg.len() as f64;
                    for g in distinct(&cg) {
                        let mut max_ref = 0;
                        for r in rs {
                            max_ref = max_ref.max(count(&grams(r, n), &g));
                        }
                        m[n - 1] += count(&cg, &g).min(max_ref) as f64;
                    }
                }
            }
            let bp = if c_len == 0.0 {
                0.0
            } else if c_len > r_len {
                1.0
            } else {
                (1.0 - r_len / c_len).exp()
            };
            let mut out = [0.0; 4];
            for n in 1..=4 {
                let mut prod = 1.0;
                for k in 0..n {
                    let p = if t[k] == 0.0 { 1.0 } else { m[k] / t[k] };
                    prod *= p;
                }
                out[n - 1] = bp * prod.powf(1.0 / n as f64);
            }
            out
        }

        pub fn lcs(a: &[String], b: &[String]) -> usize {
            let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
            for i in 1..=a.len() {
                for j in 1..=b.len() {
                    table[i][j] = if a[i - 1] == b[j - 1] {
                        table[i - 1][j - 1] + 1
                    } else {
                        table[i - 1][j].max(table[i][j - 1])
                    };
                }
            }
            table[a.len()][b.len()]
        }

        pub fn rouge(cands: &[Tokens], refs: &[Vec<Tokens>], beta: f64) -> f64 {
            let mut total = 0.0;
            let mut k = 0.0;
            for (c, rs) in cands.iter().zip(refs) {
                if c.is_empty() && rs.iter().all(|r| r.is_empty()) {
                    continue;
                }
                k += 1.0;
                let ps: Vec<f64> = rs
                    .iter()
                    .map(|r| if c.is_empty() { 0.0 } else { lcs(c, r) as f64 / c.len() as f64 })
                    .collect();
                let rs_: Vec<f64> = rs
                    .iter()
                    .map(|r| if r.is_empty() { 0.0 } else { lcs(c, r) as f64 / r.len() as f64 })
                    .collect();
                let p = ps.iter().cloned().fold(0.0, f64::max);
                let r = rs_.iter().cloned().fold(0.0, f64::max);
                if p > 0.0 && r > 0.0 {
                    total += (1.0 + beta * beta) * p * r / (r + beta * beta * p);
                }
            }
            if k == 0.0 {
                0.0
            } else {
                total / k
            }
        }

        pub fn cider(cands: &[Tokens], refs: &[Vec<Tokens>], sigma: f64) -> f64 {
            let n_docs = refs.len() as f64;
            let mut score = 0.0;
            for (c, rs) in cands.iter().zip(refs) {
                let mut per_ref = 0.0;
                for r in rs {
                    let mut sum_n = 0.0;
                    for n in 1..=4 {
                        // dense vectors over the union of this pair's n-grams
                        let mut space = grams(c, n);
                        space.extend(grams(r, n));
                        let space = distinct(&space);
                        let weight = |s: &Tokens, g: &Vec<String>| {
                            let tf = count(&grams(s, n), g) as f64;
                            let df = refs
                                .iter()
                                .filter(|set| set.iter().any(|x| count(&grams(x, n), g) > 0))
                                .count()
                                .max(1) as f64;
                            tf * (n_docs.ln() - df.ln())
                        };
                        let vc: Vec<f64> = space.iter().map(|g| weight(c, g)).collect();
                        let vr: Vec<f64> = space.iter().map(|g| weight(r, g)).collect();
                        let mut dot = 0.0;
                        for i in 0..space.len() {
                            if vc[i] != 0.0 || vr[i] != 0.0 {
                                // clipped product; n-grams missing from the
                                // candidate contribute nothing
                                if count(&grams(c, n), &space[i]) > 0 {
                                    dot += vc[i].min(vr[i]) * vr[i];
                                }
                            }
                        }
                        let nc = vc.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let nr = vr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if nc != 0.0 && nr != 0.0 {
                            dot /= nc * nr;
                        }
                        let lc = c.len().saturating_sub(1) as f64;
                        let lr = r.len().saturating_sub(1) as f64;
                        sum_n += dot * (-(lc - lr).powi(2) / (2.0 * sigma * sigma)).exp();
                    }
                    per_ref += sum_n / 4.0;
                }
                if !rs.is_empty() {
                    score += per_ref / rs.len() as f64 * 10.0;
                }
            }
            score / cands.len() as f64
        }
    }

    use proptest::prelude::*;

    const WORDS: [&str; 7] = ["no", "heart", "normal", "effusion", "lung", "clear", "size"];

    fn sentence(max: usize) -> impl Strategy<Value = Tokens> {
        prop::collection::vec(0..WORDS.len(), 0..=max)
            .prop_map(|ix| ix.into_iter().map(|i| WORDS[i].to_string()).collect())
    }

    fn corpus() -> impl Strategy<Value = (Vec<Tokens>, Vec<Vec<Tokens>>)> {
        prop::collection::vec((sentence(15), prop::collection::vec(sentence(15), 1..=2)), 1..=20)
            .prop_map(|pairs| pairs.into_iter().unzip())
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(150))]

        #[test]
        fn metrics_match_brute_force_oracles((c, r) in corpus()) {
            let b = bleu(&c, &r).unwrap();
            let ob = oracle::bleu(&c, &r);
            for n in 0..4 {
                prop_assert!(close(b[n], ob[n]), "bleu-{} {} vs {}", n + 1, b[n], ob[n]);
            }
            let rl = rouge_l(&c, &r).unwrap();
            prop_assert!(close(rl, oracle::rouge(&c, &r, ROUGE_BETA)));
            let ci = cider(&c, &r).unwrap();
            prop_assert!(close(ci, oracle::cider(&c, &r, CIDER_SIGMA)), "cider {} vs {}", ci, oracle::cider(&c, &r, CIDER_SIGMA));
            prop_assert!(evaluate(&c, &r).unwrap().in_range());
        }

        #[test]
        fn lcs_matches_full_table(a in sentence(15), b in sentence(15)) {
            prop_assert_eq!(lcs_len(&a, &b), oracle::lcs(&a, &b));
        }

        #[test]
        fn pair_order_does_not_matter((c, r) in corpus(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut idx: Vec<usize> = (0..c.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pc: Vec<Tokens> = idx.iter().map(|&i| c[i].clone()).collect();
            let pr: Vec<Vec<Tokens>> = idx.iter().map(|&i| r[i].clone()).collect();
            prop_assert_eq!(evaluate(&c, &r).unwrap(), evaluate(&pc, &pr).unwrap());
        }

        #[test]
        fn identical_pairs_score_one(c in prop::collection::vec(sentence(15).prop_filter("non-empty", |s| !s.is_empty()), 1..=20)) {
            let r = single_references(&c);
            prop_assert!((rouge_l(&c, &r).unwrap() - 1.0).abs() < 1e-12);
            for v in bleu(&c, &r).unwrap() {
                prop_assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }
}
