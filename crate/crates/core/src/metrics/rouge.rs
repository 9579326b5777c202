/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with recall weighted by `beta`.
pub fn rouge_l(hyp: &[String], reference: &[String], beta: f64) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(hyp, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / hyp.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}
