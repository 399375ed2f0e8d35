//! Average-linkage agglomerative clustering of decoders into two clusters.
//!
//! Every decoder starts as its own cluster. At each step the pair of clusters
//! with the smallest average linkage (mean pairwise cosine distance) is merged,
//! until two clusters remain.
//!
//! Ties: linkages within [`TIE_TOLERANCE`] of the step minimum are tied, and
//! the pair whose `(min member, min member)` tuple is lexicographically
//! smallest wins. The cluster that contains decoder 0 is always labeled `C_0`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{cosine_distance, ParamVector};

pub const TIE_TOLERANCE: f64 = 1e-12;

/// Symmetric pairwise cosine-distance matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a matrix from explicit rows, checking symmetry, the zero
    /// diagonal, and the `[0, 2]` range.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for row in &rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        let dm = DistanceMatrix { n, entries };
        for i in 0..n {
            if dm.get(i, i) != 0.0 {
                return Err(Error::InvalidAssignment(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..n {
                let d = dm.get(i, j);
                if !(0.0..=2.0).contains(&d) || d != dm.get(j, i) {
                    return Err(Error::InvalidAssignment(format!(
                        "entry ({i}, {j}) = {d} is out of range or asymmetric"
                    )));
                }
            }
        }
        Ok(dm)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.n.max(1))
    }
}

/// Pairwise cosine distances between all uploaded decoders.
pub fn build_distance_matrix(decoders: &[ParamVector]) -> Result<DistanceMatrix> {
    let n = decoders.len();
    if n < 2 {
        return Err(Error::TooFewDecoders(n));
    }
    let dim = decoders[0].dim();
    for (index, d) in decoders.iter().enumerate() {
        if d.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: d.dim(),
            });
        }
        if d.norm() == 0.0 {
            return Err(Error::ZeroNormVector { index: Some(index) });
        }
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(&decoders[i], &decoders[j])?;
            entries[i * n + j] = d;
            entries[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, entries })
}

/// Mean of `dm[u][v]` over `u in ci`, `v in cj`.
pub fn average_linkage(dm: &DistanceMatrix, ci: &[usize], cj: &[usize]) -> Result<f64> {
    if ci.is_empty() || cj.is_empty() || ci.iter().any(|u| cj.contains(u)) {
        return Err(Error::OverlappingClusters);
    }
    if let Some(&bad) = ci.iter().chain(cj).find(|&&u| u >= dm.len()) {
        return Err(Error::InvalidAssignment(format!(
            "index {bad} out of range for {} decoders",
            dm.len()
        )));
    }
    let mut sum = 0.0;
    for &u in ci {
        for &v in cj {
            sum += dm.get(u, v);
        }
    }
    Ok(sum / (ci.len() * cj.len()) as f64)
}

/// Partition of decoder indices into `C_0` and `C_1`, with the index list `I`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    index_list: Vec<u8>,
}

impl ClusterAssignment {
    pub fn from_index_list(index_list: Vec<u8>) -> Result<Self> {
        let n = index_list.len();
        if n < 2 {
            return Err(Error::InvalidAssignment(format!("{n} decoders, need at least 2")));
        }
        if index_list.iter().any(|&c| c > 1) {
            return Err(Error::InvalidAssignment("labels must be 0 or 1".into()));
        }
        if !index_list.contains(&0) || !index_list.contains(&1) {
            return Err(Error::InvalidAssignment("both clusters must be non-empty".into()));
        }
        Ok(ClusterAssignment { index_list })
    }

    /// Builds an assignment from the two member sets; they must cover
    /// `0..n` exactly once.
    pub fn from_members(members_0: &[usize], members_1: &[usize]) -> Result<Self> {
        let n = members_0.len() + members_1.len();
        let mut index_list = vec![u8::MAX; n];
        for (label, members) in [(0u8, members_0), (1u8, members_1)] {
            for &m in members {
                if m >= n || index_list[m] != u8::MAX {
                    return Err(Error::InvalidAssignment(format!(
                        "member {m} is out of range or repeated"
                    )));
                }
                index_list[m] = label;
            }
        }
        Self::from_index_list(index_list)
    }

    pub fn index_list(&self) -> &[u8] {
        &self.index_list
    }

    pub fn len(&self) -> usize {
        self.index_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_list.is_empty()
    }

    pub fn label(&self, i: usize) -> u8 {
        self.index_list[i]
    }

    pub fn members(&self, label: u8) -> Vec<usize> {
        self.index_list
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == label)
            .map(|(i, _)| i)
            .collect()
    }
}

/// One agglomeration step: `left` has the smaller minimum member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub linkage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignment: ClusterAssignment,
    pub merges: Vec<Merge>,
}

/// Merges singletons until two clusters remain.
pub fn cluster_to_two(dm: &DistanceMatrix) -> Result<ClusterAssignment> {
    agglomerate(dm).map(|c| c.assignment)
}

/// Like [`cluster_to_two`], also returning the merge sequence.
pub fn agglomerate(dm: &DistanceMatrix) -> Result<Clustering> {
    let n = dm.len();
    if n < 2 {
        return Err(Error::TooFewDecoders(n));
    }

    // Clusters stay ordered by their minimum member; `sums[a][b]` holds the
    // total pairwise distance between clusters a and b.
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut sums: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dm.get(i, j)).collect()).collect();
    let mut merges = Vec::with_capacity(n - 2);

    while clusters.len() > 2 {
        let k = clusters.len();
        let mut linkages = Vec::with_capacity(k * (k - 1) / 2);
        for a in 0..k {
            for b in a + 1..k {
                let size = (clusters[a].len() * clusters[b].len()) as f64;
                linkages.push((a, b, sums[a][b] / size));
            }
        }
        let min = linkages.iter().map(|l| l.2).fold(f64::INFINITY, f64::min);
        // Pairs are generated in lexicographic (min member, min member) order.
        let &(a, b, linkage) = linkages
            .iter()
            .find(|l| l.2 <= min + TIE_TOLERANCE)
            .expect("at least one pair");

        let right = clusters.remove(b);
        let right_sums = sums.remove(b);
        for row in sums.iter_mut() {
            row.remove(b);
        }
        let left = clusters[a].clone();
        // Symmetric update, so indices are needed on both axes.
        #[allow(clippy::needless_range_loop)]
        for c in 0..clusters.len() {
            if c != a {
                let other = if c < b { c } else { c + 1 };
                let s = sums[a][c] + right_sums[other];
                sums[a][c] = s;
                sums[c][a] = s;
            }
        }
        clusters[a].extend_from_slice(&right);
        clusters[a].sort_unstable();
        merges.push(Merge {
            left,
            right,
            linkage,
        });
    }

    let assignment = ClusterAssignment::from_members(&clusters[0], &clusters[1])?;
    Ok(Clustering { assignment, merges })
}

/// Writes the distance matrix and merge trace as plain text.
pub fn write_debug_dump<W: Write>(mut out: W, dm: &DistanceMatrix, clustering: &Clustering) -> io::Result<()> {
    writeln!(out, "distance matrix ({0}x{0})", dm.len())?;
    for row in dm.rows() {
        let cells: Vec<String> = row.iter().map(|d| format!("{d:.6}")).collect();
        writeln!(out, "  {}", cells.join(" "))?;
    }
    writeln!(out, "merges")?;
    for (step, m) in clustering.merges.iter().enumerate() {
        writeln!(out, "  {step}: {:?} + {:?} @ {:.6}", m.left, m.right, m.linkage)?;
    }
    writeln!(
        out,
        "C_0 = {:?}, C_1 = {:?}",
        clustering.assignment.members(0),
        clustering.assignment.members(1)
    )
}
