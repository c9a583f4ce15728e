//! Clustering evaluation: Hungarian-matched accuracy, NMI, ARI and the
//! confusion matrix.
//!
//! Labels are arbitrary `usize` values. Sums run over sorted terms or in exact
//! integer arithmetic, so every metric is bit-for-bit invariant under any
//! relabeling of either partition.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Counts of (predicted cluster, true class) pairs over the sorted distinct
/// labels of each partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contingency {
    pub pred_labels: Vec<usize>,
    pub truth_labels: Vec<usize>,
    /// `counts[i][j]`: points in cluster `pred_labels[i]` and class `truth_labels[j]`.
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

fn distinct(labels: &[usize]) -> Vec<usize> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::contract(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::contract("empty labeling"));
        }
        let pred_labels = distinct(pred);
        let truth_labels = distinct(truth);
        let mut counts = vec![vec![0u64; truth_labels.len()]; pred_labels.len()];
        for (p, t) in pred.iter().zip(truth) {
            let i = pred_labels.binary_search(p).expect("present");
            let j = truth_labels.binary_search(t).expect("present");
            counts[i][j] += 1;
        }
        Ok(Contingency {
            pred_labels,
            truth_labels,
            counts,
            n: pred.len() as u64,
        })
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.truth_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

/// Minimum-cost perfect matching on a square integer cost matrix
/// (Kuhn-Munkres with potentials, O(n³)). Returns `col[row]`.
pub fn hungarian(cost: &[Vec<i64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::contract("hungarian needs a square cost matrix"));
    }
    // 1-based with a virtual column 0, as in the classic formulation.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        if owner[j] > 0 {
            col_of[owner[j] - 1] = j - 1;
        }
    }
    Ok(col_of)
}

/// One-to-one cluster → class assignment. Clusters left over when there are
/// more clusters than classes map to `None`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mapping {
    pub pairs: BTreeMap<usize, Option<usize>>,
}

impl Mapping {
    pub fn get(&self, cluster: usize) -> Option<usize> {
        self.pairs.get(&cluster).copied().flatten()
    }
}

fn optimal_matching(table: &Contingency) -> Result<(u64, Mapping)> {
    let (k, c) = (table.pred_labels.len(), table.truth_labels.len());
    let size = k.max(c);
    let mut cost = vec![vec![0i64; size]; size];
    for i in 0..k {
        for j in 0..c {
            cost[i][j] = -(table.counts[i][j] as i64);
        }
    }
    let cols = hungarian(&cost)?;
    let mut matched = 0;
    let mut pairs = BTreeMap::new();
    for (i, &label) in table.pred_labels.iter().enumerate() {
        let j = cols[i];
        if j < c {
            matched += table.counts[i][j];
            pairs.insert(label, Some(table.truth_labels[j]));
        } else {
            pairs.insert(label, None);
        }
    }
    Ok((matched, Mapping { pairs }))
}

/// Accuracy under the best one-to-one mapping of clusters to classes.
pub fn hungarian_accuracy(pred: &[usize], truth: &[usize]) -> Result<(f64, Mapping)> {
    let table = Contingency::new(pred, truth)?;
    let (matched, mapping) = optimal_matching(&table)?;
    Ok((matched as f64 / table.n as f64, mapping))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NmiNormalization {
    /// `I / sqrt(H(pred) H(truth))`
    #[default]
    Geometric,
    /// `I / ((H(pred) + H(truth)) / 2)`
    Arithmetic,
}

fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    -sorted_sum(
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .collect(),
    )
}

fn mutual_information(table: &Contingency) -> f64 {
    let n = table.n as f64;
    let (rows, cols) = (table.row_sums(), table.col_sums());
    let mut terms = Vec::new();
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let outer = (rows[i] * cols[j]) as f64;
                terms.push(nij as f64 / n * (n * nij as f64 / outer).ln());
            }
        }
    }
    sorted_sum(terms)
}

/// Normalized mutual information in `[0, 1]`. Two single-cluster partitions
/// score 1; a single-cluster partition against a split one scores 0.
pub fn nmi_with(pred: &[usize], truth: &[usize], norm: NmiNormalization) -> Result<f64> {
    let table = Contingency::new(pred, truth)?;
    let n = table.n as f64;
    let hp = entropy(&table.row_sums(), n);
    let ht = entropy(&table.col_sums(), n);
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    let denom = match norm {
        NmiNormalization::Geometric => (hp * ht).sqrt(),
        NmiNormalization::Arithmetic => 0.5 * (hp + ht),
    };
    Ok((mutual_information(&table) / denom).clamp(0.0, 1.0))
}

pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    nmi_with(pred, truth, NmiNormalization::Geometric)
}

fn pairs(c: u64) -> i128 {
    let c = c as i128;
    c * (c - 1) / 2
}

/// Adjusted Rand index from pair counts, evaluated in exact integer
/// arithmetic up to the final division. When the adjustment denominator
/// vanishes the partitions coincide and the index is 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = Contingency::new(pred, truth)?;
    let index: i128 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: i128 = table.row_sums().into_iter().map(pairs).sum();
    let b: i128 = table.col_sums().into_iter().map(pairs).sum();
    let total = pairs(table.n);
    // (index - ab/T) / ((a+b)/2 - ab/T), scaled by 2T.
    let num = 2 * total * index - 2 * a * b;
    let den = (a + b) * total - 2 * a * b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Counts with one row per cluster and one column per class. Rows are ordered
/// by the class their cluster maps to; unmatched clusters come last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub row_clusters: Vec<usize>,
    pub col_classes: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cluster\\class")?;
        for c in &self.col_classes {
            write!(f, "\t{c}")?;
        }
        writeln!(f)?;
        for (cluster, row) in self.row_clusters.iter().zip(&self.counts) {
            write!(f, "{cluster}")?;
            for v in row {
                write!(f, "\t{v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize], mapping: &Mapping) -> Result<ConfusionMatrix> {
    let table = Contingency::new(pred, truth)?;
    for p in &table.pred_labels {
        if !mapping.pairs.contains_key(p) {
            return Err(Error::contract(format!("cluster {p} is missing from the mapping")));
        }
    }
    let mut order: Vec<usize> = (0..table.pred_labels.len()).collect();
    order.sort_by_key(|&i| {
        let cls = mapping.get(table.pred_labels[i]);
        (cls.is_none(), cls, table.pred_labels[i])
    });
    Ok(ConfusionMatrix {
        row_clusters: order.iter().map(|&i| table.pred_labels[i]).collect(),
        col_classes: table.truth_labels.clone(),
        counts: order.iter().map(|&i| table.counts[i].clone()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: String,
    pub normalized: bool,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub n: usize,
    /// Distinct predicted clusters.
    pub k: usize,
    pub mapping: Mapping,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn compute(pred: &[usize], truth: &[usize], mode: &str, normalized: bool) -> Result<Self> {
        let (acc, mapping) = hungarian_accuracy(pred, truth)?;
        let confusion = confusion_matrix(pred, truth, &mapping)?;
        Ok(EvalReport {
            mode: mode.to_string(),
            normalized,
            acc,
            nmi: nmi(pred, truth)?,
            ari: ari(pred, truth)?,
            n: pred.len(),
            k: mapping.pairs.len(),
            mapping,
            confusion,
        })
    }

    /// Single-line `key=value` record: mode, normalized, acc, nmi, ari, n, k.
    pub fn to_record(&self) -> String {
        format!(
            "mode={} normalized={} acc={} nmi={} ari={} n={} k={}",
            self.mode, self.normalized, self.acc, self.nmi, self.ari, self.n, self.k
        )
    }
}

/// Splits a `key=value key=value ...` record.
pub fn parse_record(line: &str) -> Result<BTreeMap<String, String>> {
    line.split_whitespace()
        .map(|field| {
            field
                .split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::contract(format!("field `{field}` is not key=value")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(hungarian_accuracy(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap().0, 1.0);
        assert_eq!(hungarian_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap().0, 1.0);
        assert_eq!(hungarian_accuracy(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap().0, 0.75);
        assert!(matches!(hungarian_accuracy(&[], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn more_clusters_than_classes() {
        let (acc, m) = hungarian_accuracy(&[0, 1, 2, 2], &[5, 5, 7, 7]).unwrap();
        assert_eq!(acc, 0.75);
        assert_eq!(m.get(2), Some(7));
        assert_eq!(m.pairs.values().filter(|v| v.is_none()).count(), 1);
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        let cols = hungarian(&cost).unwrap();
        let total: i64 = cols.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[3, 3, 3], &[1, 2, 1]).unwrap(), 0.0);
        let a = nmi_with(&[0, 0, 1, 1, 1], &[0, 0, 0, 1, 1], NmiNormalization::Arithmetic).unwrap();
        let g = nmi(&[0, 0, 1, 1, 1], &[0, 0, 0, 1, 1]).unwrap();
        assert!((a - g).abs() < 1e-15, "equal marginal entropies give equal normalizers");
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 2], &[0, 0, 1, 2]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), -0.5);
        assert_eq!(ari(&[0, 1, 1, 0], &[4, 4, 4, 4]).unwrap(), 0.0);
        assert_eq!(ari(&[4, 4, 4], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 1, 2], &[2, 1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn confusion_examples() {
        let pred = [2, 0, 1, 1];
        let (_, m) = hungarian_accuracy(&pred, &pred).unwrap();
        let c = confusion_matrix(&pred, &pred, &m).unwrap();
        assert_eq!(c.counts, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        let (_, m) = hungarian_accuracy(&[0], &[3]).unwrap();
        assert_eq!(confusion_matrix(&[0], &[3], &m).unwrap().counts, vec![vec![1]]);
        let bad = Mapping { pairs: BTreeMap::new() };
        assert!(confusion_matrix(&[0], &[0], &bad).is_err());
    }

    #[test]
    fn report_record_round_trips() {
        let r = EvalReport::compute(&[0, 1, 1, 1], &[0, 0, 1, 1], "kmeans-mixem", true).unwrap();
        let fields = parse_record(&r.to_record()).unwrap();
        assert_eq!(fields["acc"].parse::<f64>().unwrap(), r.acc);
        assert_eq!(fields["nmi"].parse::<f64>().unwrap(), r.nmi);
        assert_eq!(fields["ari"].parse::<f64>().unwrap(), r.ari);
        assert_eq!(fields["n"], "4");
        assert_eq!(fields["k"], "2");
        assert_eq!(fields["normalized"], "true");
        let trace: u64 = r
            .confusion
            .row_clusters
            .iter()
            .zip(&r.confusion.counts)
            .map(|(cl, row)| {
                let j = r.confusion.col_classes.iter().position(|&c| Some(c) == r.mapping.get(*cl)).unwrap();
                row[j]
            })
            .sum();
        assert_eq!(trace as f64 / 4.0, r.acc);
    }
}
