//! Rank correlation between augmentation techniques, best-k subsets and
//! average-linkage clustering of accuracy scatter plots.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use crate::augment::Technique;
use crate::error::{Error, Result};
use crate::genome::GenomeHash;
use crate::par::{map_ordered, Execution};
use crate::trainer::FitnessRecord;

/// Kendall's tau-b with tie correction, by O(n²) pair counting.
///
/// Returns [`Error::Undefined`] when either list is constant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape(format!("tau needs two equal lists of length >= 2 (got {} and {})", a.len(), b.len())));
    }
    let (mut concordant, mut discordant, mut tie_a, mut tie_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = a[i].total_cmp(&a[j]) as i64;
            let db = b[i].total_cmp(&b[j]) as i64;
            match (da, db) {
                (0, 0) => {
                    tie_a += 1;
                    tie_b += 1;
                }
                (0, _) => tie_a += 1,
                (_, 0) => tie_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs = (a.len() * (a.len() - 1) / 2) as i64;
    let denom = (((pairs - tie_a) * (pairs - tie_b)) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::Undefined("tau-b of a constant list".into()));
    }
    Ok(((concordant - discordant) as f64 / denom).clamp(-1.0, 1.0))
}

/// Validation accuracy per genome and technique. Several records for the same
/// cell are averaged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    pub scores: BTreeMap<GenomeHash, BTreeMap<Technique, f64>>,
}

impl ScoreTable {
    pub fn from_records(records: &[FitnessRecord]) -> Self {
        let mut sums: BTreeMap<(GenomeHash, Technique), (f64, usize)> = BTreeMap::new();
        for r in records {
            let e = sums.entry((r.genome_hash, r.augmentation)).or_default();
            e.0 += if r.degenerate { 0.0 } else { r.best_val_acc };
            e.1 += 1;
        }
        let mut t = Self::default();
        for ((g, tech), (sum, n)) in sums {
            t.insert(g, tech, sum / n as f64);
        }
        t
    }

    pub fn insert(&mut self, genome: GenomeHash, tech: Technique, acc: f64) {
        self.scores.entry(genome).or_default().insert(tech, acc);
    }

    pub fn get(&self, genome: GenomeHash, tech: Technique) -> Option<f64> {
        self.scores.get(&genome)?.get(&tech).copied()
    }

    /// Techniques present in at least one row, in canonical order.
    pub fn techniques(&self) -> Vec<Technique> {
        let set: BTreeSet<Technique> = self.scores.values().flat_map(|m| m.keys().copied()).collect();
        set.into_iter().collect()
    }

    /// `(genome, accuracy)` for every genome scored on `tech`.
    pub fn column(&self, tech: Technique) -> Vec<(GenomeHash, f64)> {
        self.scores.iter().filter_map(|(g, m)| m.get(&tech).map(|&v| (*g, v))).collect()
    }

    /// The `k` best genomes on `tech`, ties broken by ascending hash.
    pub fn top_k(&self, tech: Technique, k: usize) -> BTreeSet<GenomeHash> {
        let mut col = self.column(tech);
        col.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        col.into_iter().take(k).map(|(g, _)| g).collect()
    }
}

pub fn best_k_intersection(table: &ScoreTable, a: Technique, b: Technique, k: usize) -> BTreeSet<GenomeHash> {
    table.top_k(a, k).intersection(&table.top_k(b, k)).copied().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    All,
    /// Per pair, the intersection of each technique's top k.
    BestK(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub techniques: Vec<Technique>,
    /// Row-major; NaN where tau is undefined (fewer than two shared genomes or
    /// a constant column).
    pub values: Vec<Vec<f64>>,
}

fn pair_tau(table: &ScoreTable, a: Technique, b: Technique, subset: Subset) -> f64 {
    let keep = match subset {
        Subset::All => None,
        Subset::BestK(k) => Some(best_k_intersection(table, a, b, k)),
    };
    let (xs, ys): (Vec<f64>, Vec<f64>) = table
        .scores
        .iter()
        .filter(|(g, _)| keep.as_ref().is_none_or(|s| s.contains(g)))
        .filter_map(|(_, m)| Some((*m.get(&a)?, *m.get(&b)?)))
        .unzip();
    kendall_tau(&xs, &ys).unwrap_or(f64::NAN)
}

pub fn correlation_matrix(table: &ScoreTable, techniques: &[Technique], subset: Subset) -> CorrelationMatrix {
    let n = techniques.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let taus = map_ordered(Execution::default(), &pairs, |_, &(i, j)| {
        pair_tau(table, techniques[i], techniques[j], subset)
    });
    let mut values = vec![vec![1.0; n]; n];
    for (&(i, j), t) in pairs.iter().zip(taus) {
        values[i][j] = t;
        values[j][i] = t;
    }
    CorrelationMatrix { techniques: techniques.to_vec(), values }
}

impl CorrelationMatrix {
    pub fn is_symmetric(&self) -> bool {
        let n = self.values.len();
        (0..n).all(|i| (0..n).all(|j| self.values[i][j].to_bits() == self.values[j][i].to_bits()))
    }

    /// Upper triangle from `upper`, lower triangle from `lower`, unit diagonal:
    /// all genomes above the diagonal and the best-k subsets below it.
    pub fn combined(upper: &Self, lower: &Self) -> Self {
        let n = upper.values.len();
        let values = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match i.cmp(&j) {
                        std::cmp::Ordering::Less => upper.values[i][j],
                        std::cmp::Ordering::Greater => lower.values[i][j],
                        std::cmp::Ordering::Equal => 1.0,
                    })
                    .collect()
            })
            .collect();
        Self { techniques: upper.techniques.clone(), values }
    }

    /// CSV with a header row and a leading technique column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![String::new()];
        header.extend(self.techniques.iter().map(|t| t.to_string()));
        out.write_record(&header)?;
        for (t, row) in self.techniques.iter().zip(&self.values) {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| if v.is_nan() { "nan".to_string() } else { format!("{v:.6}") }));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Bottom-up average-linkage clustering with Euclidean distance until `k`
/// clusters remain. The closest pair merges first; ties go to the pair with the
/// lowest cluster indices. Labels are numbered in order of first appearance.
pub fn agglomerative_cluster(points: &[[f64; 2]], k: usize) -> Result<Vec<usize>> {
    agglomerative_cluster_with(points, k, Execution::default())
}

pub fn agglomerative_cluster_with(points: &[[f64; 2]], k: usize, exec: Execution) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot form {k} clusters from {n} points")));
    }
    // Cluster i is alive while members[i] is non-empty; merges keep the lower index.
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut d: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dist(points[i], points[j])).collect()).collect();
    let rows: Vec<usize> = (0..n).collect();
    for _ in 0..n - k {
        let mins = map_ordered(exec, &rows, |_, &i| {
            if members[i].is_empty() {
                return None;
            }
            let mut best: Option<(f64, usize)> = None;
            for j in i + 1..n {
                if !members[j].is_empty() && best.is_none_or(|(v, _)| d[i][j] < v) {
                    best = Some((d[i][j], j));
                }
            }
            best.map(|(v, j)| (v, i, j))
        });
        let (_, a, b) = mins
            .into_iter()
            .flatten()
            .reduce(|x, y| if y.0 < x.0 { y } else { x })
            .expect("at least two live clusters");
        let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
        for c in 0..n {
            if c != a && c != b && !members[c].is_empty() {
                let v = (na * d[a][c] + nb * d[b][c]) / (na + nb);
                d[a][c] = v;
                d[c][a] = v;
            }
        }
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for p in 0..n {
        if labels[p] == usize::MAX {
            let owner = members.iter().position(|m| m.contains(&p)).expect("every point has a cluster");
            for &q in &members[owner] {
                labels[q] = next;
            }
            next += 1;
        }
    }
    Ok(labels)
}
