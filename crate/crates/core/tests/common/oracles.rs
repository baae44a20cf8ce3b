//! Slow reference implementations written independently of the library.

/// k nearest rows by repeated minimum extraction over a double loop.
/// Distances compare exactly, ties go to the lower index.
pub fn knn_neighbors(store: &[Vec<f64>], query: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; store.len()];
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best: Option<(f64, usize)> = None;
        for (i, row) in store.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let mut d = 0.0;
            for j in 0..row.len() {
                d += (row[j] - query[j]) * (row[j] - query[j]);
            }
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        let (_, i) = best.unwrap();
        taken[i] = true;
        out.push(i);
    }
    out
}

/// Class frequencies among the `k` nearest rows.
pub fn knn_proba(store: &[Vec<f64>], labels: &[usize], classes: usize, query: &[f64], k: usize) -> Vec<f64> {
    let mut p = vec![0.0; classes];
    for i in knn_neighbors(store, query, k) {
        p[labels[i]] += 1.0;
    }
    p.iter().map(|v| v / k as f64).collect()
}

/// Binary AUC by counting every positive/negative pair, ties worth half.
pub fn auc_pairs(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Walks a serialized node table (`feature, threshold, left, right,
/// samples, histogram...`) and returns the leaf's majority class.
pub fn table_vote(table: &[Vec<f64>], row: &[f64]) -> usize {
    let mut node = 0;
    while table[node][0] >= 0.0 {
        let f = table[node][0] as usize;
        node = if row[f] <= table[node][1] {
            table[node][2] as usize
        } else {
            table[node][3] as usize
        };
    }
    let hist = &table[node][5..];
    let mut best = 0;
    for c in 1..hist.len() {
        if hist[c] > hist[best] {
            best = c;
        }
    }
    best
}

/// Nearest-neighbour resize by explicit centre mapping.
pub fn resize_nn(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = (((y as f64 + 0.5) * h as f64 / oh as f64).floor() as usize).min(h - 1);
        for x in 0..ow {
            let sx = (((x as f64 + 0.5) * w as f64 / ow as f64).floor() as usize).min(w - 1);
            out.push(src[sy * w + sx]);
        }
    }
    out
}
