use ndarray::ArrayView2;

/// Area under the ROC curve via the Mann–Whitney statistic with average
/// ranks, so ties earn half credit. `None` unless both classes occur.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "auroc: length mismatch");
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += avg * pos_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Per-column AUROC of an `N × M` score matrix against `N × M` labels.
pub fn auroc_per_class(scores: ArrayView2<f64>, labels: ArrayView2<u8>) -> Vec<Option<f64>> {
    assert_eq!(scores.dim(), labels.dim(), "auroc: shape mismatch");
    scores
        .columns()
        .into_iter()
        .zip(labels.columns())
        .map(|(s, l)| auroc(&s.to_vec(), &l.to_vec()))
        .collect()
}

/// Mean over defined classes; `None` when no class is defined.
pub fn mean_auroc(per_class: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}
