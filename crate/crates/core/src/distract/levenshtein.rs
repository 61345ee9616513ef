//! Weighted edit distance with insert = delete = 1 and replace = 2.

const INSERT: usize = 1;
const DELETE: usize = 1;
const REPLACE: usize = 2;

/// Minimum weighted edit cost between `a` and `b`, over Unicode scalars.
pub fn levenshtein_ldist(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len() * INSERT;
    }
    if b.is_empty() {
        return a.len() * DELETE;
    }
    // single-row DP; prev[j] = cost(a[..i], b[..j])
    let mut prev: Vec<usize> = (0..=b.len()).map(|j| j * INSERT).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = (i + 1) * DELETE;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + if ca == cb { 0 } else { REPLACE };
            cur[j + 1] = sub.min(prev[j + 1] + DELETE).min(cur[j] + INSERT);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `(sum - ldist) / sum` where `sum` is the combined length. Two empty
/// strings are identical and score 1.
pub fn levenshtein_ratio(a: &str, b: &str) -> f64 {
    let sum = a.chars().count() + b.chars().count();
    if sum == 0 {
        log::debug!("levenshtein_ratio of two empty strings");
        return 1.0;
    }
    (sum - levenshtein_ldist(a, b)) as f64 / sum as f64
}
