use super::{check_parallel, order_free_sum, Tokens};
use crate::error::Result;

/// Recall weight of the LCS F-measure.
pub const ROUGE_BETA: f64 = 1.2;

/// Longest common subsequence length, two-row DP.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn pair_score(cand: &[String], refs: &[Tokens], beta: f64) -> Option<f64> {
    if cand.is_empty() && refs.iter().all(Vec::is_empty) {
        return None;
    }
    let (mut p, mut r) = (0.0f64, 0.0f64);
    for reference in refs {
        let l = lcs_len(cand, reference) as f64;
        if !cand.is_empty() {
            p = p.max(l / cand.len() as f64);
        }
        if !reference.is_empty() {
            r = r.max(l / reference.len() as f64);
        }
    }
    if p == 0.0 || r == 0.0 {
        return Some(0.0);
    }
    let b2 = beta * beta;
    Some((1.0 + b2) * p * r / (r + b2 * p))
}

/// Mean ROUGE-L F over pairs; pairs where both sides are empty are skipped.
/// Returns 0 when every pair was skipped.
pub fn rouge_l_with_beta(candidates: &[Tokens], references: &[Vec<Tokens>], beta: f64) -> Result<f64> {
    check_parallel(candidates, references)?;
    let scores: Vec<f64> = candidates
        .iter()
        .zip(references)
        .filter_map(|(c, r)| pair_score(c, r, beta))
        .collect();
    if scores.is_empty() {
        return Ok(0.0);
    }
    let n = scores.len() as f64;
    Ok(order_free_sum(scores) / n)
}

pub fn rouge_l(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<f64> {
    rouge_l_with_beta(candidates, references, ROUGE_BETA)
}

#[cfg(test)]
mod tests {
    use super::super::tokens;
    use super::*;

    fn one(c: &str, r: &str) -> f64 {
        rouge_l(&[tokens(c)], &[vec![tokens(r)]]).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        assert!((one("lungs are clear", "lungs are clear") - 1.0).abs() < 1e-12);
        assert_eq!(one("a b", "c d"), 0.0);
    }

    #[test]
    fn recall_weighted_example() {
        // LCS("a b c", "a c") = 2, P = 2/3, R = 1
        let (p, r, b2) = (2.0 / 3.0, 1.0, 1.44);
        let expected = (1.0 + b2) * p * r / (r + b2 * p);
        assert!((one("a b c", "a c") - expected).abs() < 1e-12);
        assert!((expected - 0.829_931_972_789_115_6).abs() < 1e-12);
    }

    #[test]
    fn empty_pairs_are_skipped() {
        let c = vec![vec![], tokens("x")];
        let r = vec![vec![vec![]], vec![tokens("x")]];
        assert_eq!(rouge_l(&c, &r).unwrap(), 1.0);
        assert_eq!(rouge_l(&[vec![]], &[vec![vec![]]]).unwrap(), 0.0);
        assert_eq!(one("", "x"), 0.0);
    }

    #[test]
    fn lcs_small_cases() {
        assert_eq!(lcs_len(&tokens("a b c d"), &tokens("b d")), 2);
        assert_eq!(lcs_len(&tokens("a b"), &[]), 0);
        assert_eq!(lcs_len(&tokens("a x b y c"), &tokens("a b c x")), 3);
    }
}
