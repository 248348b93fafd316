use super::{check_parallel, ngram_counts, Tokens, MAX_N};
use crate::error::Result;

/// Reference length closest to `c`; ties go to the shorter reference.
fn closest_ref_len(c: usize, refs: &[Tokens]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Clipped n-gram matches and candidate n-gram total for one pair.
fn clipped(cand: &[String], refs: &[Tokens], n: usize) -> (usize, usize) {
    let counts = ngram_counts(cand, n);
    let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
    let matched = counts
        .iter()
        .map(|(g, &c)| {
            let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
            c.min(max_ref)
        })
        .sum();
    (matched, cand.len().saturating_sub(n - 1))
}

fn combine(matched: &[f64; MAX_N], total: &[f64; MAX_N], c_len: f64, r_len: f64) -> [f64; MAX_N] {
    let bp = if c_len == 0.0 {
        0.0
    } else if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len / c_len).exp()
    };
    let mut out = [0.0; MAX_N];
    let mut log_sum = 0.0;
    for n in 0..MAX_N {
        if bp == 0.0 {
            break;
        }
        // No candidate n-grams of this order: nothing to be wrong about, so
        // the precision is vacuously 1.
        if total[n] > 0.0 {
            if matched[n] <= 0.0 {
                // Zero precision zeroes every higher order too.
                break;
            }
            log_sum += (matched[n] / total[n]).ln();
        }
        out[n] = bp * (log_sum / (n + 1) as f64).exp();
    }
    out
}

/// Corpus BLEU-1..4: n-gram matches and lengths are pooled over the corpus
/// before the precisions are taken. No smoothing.
pub fn bleu(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<[f64; MAX_N]> {
    check_parallel(candidates, references)?;
    let mut matched = [0usize; MAX_N];
    let mut total = [0usize; MAX_N];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += closest_ref_len(cand.len(), refs);
        for n in 1..=MAX_N {
            let (m, t) = clipped(cand, refs, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    Ok(combine(
        &matched.map(|v| v as f64),
        &total.map(|v| v as f64),
        c_len as f64,
        r_len as f64,
    ))
}

/// BLEU of a single pair. With `epsilon`, zero match counts are replaced by
/// `epsilon` so short diagnostics do not collapse to zero.
pub fn sentence_bleu(cand: &[String], refs: &[Tokens], epsilon: Option<f64>) -> [f64; MAX_N] {
    let mut matched = [0.0; MAX_N];
    let mut total = [0.0; MAX_N];
    for n in 1..=MAX_N {
        let (m, t) = clipped(cand, refs, n);
        matched[n - 1] = m as f64;
        total[n - 1] = t as f64;
        if let Some(eps) = epsilon {
            if m == 0 && t > 0 {
                matched[n - 1] = eps;
            }
        }
    }
    combine(
        &matched,
        &total,
        cand.len() as f64,
        closest_ref_len(cand.len(), refs) as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::super::{single_references, tokens};
    use super::*;

    #[test]
    fn identical_pairs_score_one() {
        let c = vec![tokens("the heart is normal in size"), tokens("no acute disease")];
        let b = bleu(&c, &single_references(&c)).unwrap();
        for v in b {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn brevity_penalty_example() {
        let b = bleu(&[tokens("the cat sat")], &[vec![tokens("the cat sat down")]]).unwrap();
        // precision 3/3, penalty exp(1 - 4/3)
        assert!((b[0] - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
        assert!((b[0] - 0.716_531_3).abs() < 1e-6);
    }

    #[test]
    fn short_identical_sentence_scores_one_at_every_order() {
        let c = vec![tokens("clear")];
        assert_eq!(bleu(&c, &single_references(&c)).unwrap(), [1.0; 4]);
    }

    #[test]
    fn no_overlap_is_zero() {
        let b = bleu(&[tokens("x y z")], &[vec![tokens("a b c")]]).unwrap();
        assert_eq!(b, [0.0; 4]);
    }

    #[test]
    fn empty_candidate_contributes_zero_counts() {
        let c = vec![vec![], tokens("a b c d")];
        let r = vec![vec![tokens("q r")], vec![tokens("a b c d")]];
        let b = bleu(&c, &r).unwrap();
        assert!(b.iter().all(|v| v.is_finite()));
        // all four candidate unigrams match; the penalty uses c=4, r=6
        assert!((b[0] - (1.0f64 - 6.0 / 4.0).exp()).abs() < 1e-12);
        assert_eq!(bleu(&[vec![]], &[vec![tokens("a")]]).unwrap(), [0.0; 4]);
    }

    #[test]
    fn clipping_and_closest_reference() {
        // "the the the": unigram clipped at 2 by the second reference
        let refs = vec![tokens("the cat"), tokens("the the mat")];
        let b = sentence_bleu(&tokens("the the the"), &refs, None);
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(closest_ref_len(3, &refs), 3);
        assert_eq!(closest_ref_len(4, &[tokens("a b c"), tokens("a b c d e")]), 3);
    }

    #[test]
    fn smoothing_keeps_short_sentences_positive() {
        let c = tokens("heart normal");
        let r = vec![tokens("heart size normal")];
        assert_eq!(sentence_bleu(&c, &r, None)[1], 0.0);
        assert!(sentence_bleu(&c, &r, Some(0.1))[1] > 0.0);
    }
}
