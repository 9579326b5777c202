//! Brute-force reference implementations of the evaluation metrics.

pub fn ngrams(t: &[String], n: usize) -> Vec<Vec<String>> {
    (0..(t.len() + 1).saturating_sub(n)).map(|i| t[i..i + n].to_vec()).collect()
}

pub fn clipped(h: &[String], r: &[String], n: usize) -> (usize, usize) {
    let hg = ngrams(h, n);
    let rg = ngrams(r, n);
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut matched = 0;
    for g in &hg {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let ch = hg.iter().filter(|x| *x == g).count();
        let cr = rg.iter().filter(|x| *x == g).count();
        matched += ch.min(cr);
    }
    (matched, hg.len())
}

fn brevity(c: usize, r: usize) -> f64 {
    if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Four orders, zero precisions replaced by 1/(2|h|).
pub fn sentence_bleu(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    let mut prod = 1.0;
    for n in 1..=4 {
        let (m, t) = clipped(h, r, n);
        prod *= if m == 0 { 0.5 / h.len() as f64 } else { m as f64 / t as f64 };
    }
    brevity(h.len(), r.len()) * prod.powf(0.25)
}

pub fn corpus_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let mut prod = 1.0;
    for n in 1..=4 {
        let (mut m, mut t) = (0, 0);
        for (h, r) in hyps.iter().zip(refs) {
            let (a, b) = clipped(h, r, n);
            m += a;
            t += b;
        }
        if m == 0 {
            return 0.0;
        }
        prod *= m as f64 / t as f64;
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    brevity(c, r) * prod.powf(0.25)
}

/// Longest common subsequence by trying every subset of `a`.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        let mut j = 0;
        for x in b {
            if j < sub.len() && sub[j] == x {
                j += 1;
            }
        }
        if j == sub.len() {
            best = best.max(sub.len());
        }
    }
    best
}

pub fn rouge_l(h: &[String], r: &[String]) -> f64 {
    let l = lcs(h, r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rec) = (l / h.len() as f64, l / r.len() as f64);
    (1.0 + 1.44) * p * rec / (rec + 1.44 * p)
}

/// Every partial matching hyp→ref over equal or same-stem tokens; prefer more
/// exact matches, then more stem matches, then fewer chunks.
pub fn meteor(h: &[String], r: &[String], stem: impl Fn(&str) -> String) -> f64 {
    let hs: Vec<String> = h.iter().map(|w| stem(w)).collect();
    let rs: Vec<String> = r.iter().map(|w| stem(w)).collect();
    let mut best: Option<(usize, usize, usize)> = None;
    let mut stack = vec![(0usize, vec![false; r.len()], Vec::<(usize, usize)>::new())];
    while let Some((i, used, pairs)) = stack.pop() {
        if i == h.len() {
            let exact = pairs.iter().filter(|&&(a, b)| h[a] == r[b]).count();
            let stems = pairs.len() - exact;
            let chunks = (0..pairs.len())
                .filter(|&k| k == 0 || !(pairs[k - 1].0 + 1 == pairs[k].0 && pairs[k - 1].1 + 1 == pairs[k].1))
                .count();
            let better = match best {
                None => true,
                Some((e, s, c)) => (exact, stems) > (e, s) || ((exact, stems) == (e, s) && chunks < c),
            };
            if better {
                best = Some((exact, stems, chunks));
            }
            continue;
        }
        stack.push((i + 1, used.clone(), pairs.clone()));
        for j in 0..r.len() {
            if !used[j] && (h[i] == r[j] || hs[i] == rs[j]) {
                let mut u = used.clone();
                u[j] = true;
                let mut p = pairs.clone();
                p.push((i, j));
                stack.push((i + 1, u, p));
            }
        }
    }
    let (e, s, c) = best.unwrap();
    let m = (e + s) as f64;
    if m == 0.0 {
        return 0.0;
    }
    let (p, rec) = (m / h.len() as f64, m / r.len() as f64);
    p * rec / (0.9 * p + 0.1 * rec) * (1.0 - 0.5 * (c as f64 / m).powi(3))
}

/// Dense TF-IDF vectors over an explicit n-gram list; idf from references.
pub fn cider(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Vec<f64> {
    let docs = refs.len() as f64;
    let mut scores = vec![0.0; hyps.len()];
    for n in 1..=4 {
        let mut space: Vec<Vec<String>> = Vec::new();
        for s in hyps.iter().chain(refs) {
            for g in ngrams(s, n) {
                if !space.contains(&g) {
                    space.push(g);
                }
            }
        }
        let idf: Vec<f64> = space
            .iter()
            .map(|g| (docs / refs.iter().filter(|r| ngrams(r, n).contains(g)).count().max(1) as f64).ln())
            .collect();
        let dense = |s: &[String]| -> Vec<f64> {
            let grams = ngrams(s, n);
            space.iter().zip(&idf).map(|(g, w)| grams.iter().filter(|x| *x == g).count() as f64 * w).collect()
        };
        for i in 0..hyps.len() {
            let (a, b) = (dense(&hyps[i]), dense(&refs[i]));
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na > 0.0 && nb > 0.0 {
                scores[i] += a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            }
        }
    }
    scores.into_iter().map(|s| s * 2.5).collect()
}
