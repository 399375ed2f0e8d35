#![allow(dead_code)]

//! Independent reference implementations used by the integration tests.

use std::collections::BTreeSet;

use fedexchange::clustering::DistanceMatrix;

pub const TIE: f64 = 1e-12;

/// `(left members, right members, linkage)` of one merge.
pub type OracleMerge = (Vec<usize>, Vec<usize>, f64);

/// Brute-force agglomeration: at every step scan all cluster pairs and
/// evaluate the average linkage directly from the pairwise matrix.
///
/// Returns the merge sequence as (left, right) member sets, with `left` the
/// cluster holding the smaller minimum index, plus the final two clusters.
pub fn brute_force_agglomeration(dm: &DistanceMatrix) -> (Vec<OracleMerge>, Vec<Vec<usize>>) {
    let n = dm.len();
    let mut clusters: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    let mut merges = Vec::new();
    while clusters.len() > 2 {
        let mut candidates = Vec::new();
        for a in &clusters {
            for b in &clusters {
                let (amin, bmin) = (*a.first().unwrap(), *b.first().unwrap());
                if amin >= bmin {
                    continue;
                }
                let mut total = 0.0;
                for u in a {
                    for v in b {
                        total += dm.get(*u, *v);
                    }
                }
                candidates.push(((amin, bmin), total / (a.len() * b.len()) as f64, a.clone(), b.clone()));
            }
        }
        let min = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let chosen = candidates
            .iter()
            .filter(|c| c.1 <= min + TIE)
            .min_by_key(|c| c.0)
            .unwrap()
            .clone();
        let (_, linkage, a, b) = chosen;
        clusters.retain(|c| *c != a && *c != b);
        let merged: BTreeSet<usize> = a.union(&b).copied().collect();
        clusters.push(merged);
        merges.push((a.into_iter().collect(), b.into_iter().collect(), linkage));
    }
    let mut finals: Vec<Vec<usize>> = clusters.into_iter().map(|c| c.into_iter().collect()).collect();
    finals.sort();
    (merges, finals)
}

/// All two-block partitions of `0..n` with block 0 containing index 0.
pub fn two_partitions(n: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << (n - 1)) {
        let mut c0 = vec![0];
        let mut c1 = Vec::new();
        for i in 1..n {
            if mask & (1 << (i - 1)) != 0 {
                c1.push(i);
            } else {
                c0.push(i);
            }
        }
        if !c1.is_empty() {
            out.push((c0, c1));
        }
    }
    out
}

/// Central finite-difference gradient.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[k] += h;
            minus[k] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Solves the normal equations `(X^T X) w = X^T y` by Gaussian elimination
/// with partial pivoting. `rows` already include the bias column.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let d = rows[0].len();
    let mut a = vec![vec![0.0; d + 1]; d];
    for (r, &t) in rows.iter().zip(y) {
        for i in 0..d {
            for j in 0..d {
                a[i][j] += r[i] * r[j];
            }
            a[i][d] += r[i] * t;
        }
    }
    for col in 0..d {
        let pivot = (col..d).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, pivot);
        for row in 0..d {
            if row != col {
                let factor = a[row][col] / a[col][col];
                let pivot_row = a[col].clone();
                for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= factor * p;
                }
            }
        }
    }
    (0..d).map(|i| a[i][d] / a[i][i]).collect()
}
