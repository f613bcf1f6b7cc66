//! Hourly Pearson correlation between inverters, the virtual-neighbour
//! orderings derived from it, and correlation-minimising cluster assignment.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Timelike, Utc};
use thiserror::Error;

use crate::series::TimeMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum CorrelationError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least 2 samples are required, got {0}")]
    TooShort(usize),
    #[error("{0}")]
    Config(String),
}

fn zero_variance(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Pearson's linear correlation coefficient. A series with zero variance is
/// uninformative and yields 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(CorrelationError::TooShort(x.len()));
    }
    if zero_variance(x) || zero_variance(y) {
        return Ok(0.0);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Symmetric `n × n` coefficient matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    /// Hour-of-day bucket the matrix was trained on, if any.
    pub hour: Option<u32>,
    n: usize,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn identity(n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self { hour: None, n, values }
    }

    /// Builds a matrix from the upper triangle of `f(i, j)`, `i < j`. Each
    /// coefficient is evaluated once and stored in both cells.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::identity(n);
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j).clamp(-1.0, 1.0);
                m.values[i * n + j] = v;
                m.values[j * n + i] = v;
            }
        }
        m
    }

    /// Builds a matrix from a full row-major table, which must be square,
    /// symmetric, unit-diagonal and bounded.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, CorrelationError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(CorrelationError::Config("correlation matrix must be square".into()));
        }
        for i in 0..n {
            if rows[i][i] != 1.0 {
                return Err(CorrelationError::Config(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                if rows[i][j] != rows[j][i] || !(-1.0..=1.0).contains(&rows[i][j]) {
                    return Err(CorrelationError::Config(format!("entry ({i}, {j}) breaks symmetry or bounds")));
                }
            }
        }
        Ok(Self { hour: None, n, values: rows.concat() })
    }

    /// Correlation of the columns of `history` over the selected rows.
    pub fn from_samples(history: &TimeMatrix, rows: &[usize]) -> Result<Self, CorrelationError> {
        if rows.len() < 2 {
            return Err(CorrelationError::TooShort(rows.len()));
        }
        let cols: Vec<Vec<f64>> =
            (0..history.cols()).map(|c| rows.iter().map(|&r| history.get(r, c)).collect()).collect();
        let mut err = None;
        let m = Self::from_fn(history.cols(), |i, j| {
            pearson(&cols[i], &cols[j]).unwrap_or_else(|e| {
                err = Some(e);
                0.0
            })
        });
        match err {
            Some(e) => Err(e),
            None => Ok(m),
        }
    }

    /// Element-wise mean of several matrices of equal size.
    pub fn mean(matrices: &[CorrelationMatrix]) -> Option<Self> {
        let first = matrices.first()?;
        let n = first.n;
        let k = matrices.len() as f64;
        Some(Self::from_fn(n, |i, j| matrices.iter().map(|m| m.get(i, j)).sum::<f64>() / k))
    }

    pub fn with_hour(mut self, hour: u32) -> Self {
        self.hour = Some(hour);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Writes the matrix with a label header and a label column.
    pub fn write_csv<W: Write>(&self, labels: &[String], writer: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["inverter".to_string()];
        header.extend(labels.iter().cloned());
        wtr.write_record(&header)?;
        for (i, label) in labels.iter().enumerate().take(self.n) {
            let mut rec = vec![label.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()
    }
}

/// One matrix per hour-of-day present in `timestamps`, each computed over that
/// hour's samples. Buckets with fewer than two samples are skipped.
pub fn build_hourly_matrices(
    history: &TimeMatrix,
    timestamps: &[DateTime<Utc>],
) -> Result<Vec<CorrelationMatrix>, CorrelationError> {
    if history.rows() != timestamps.len() {
        return Err(CorrelationError::LengthMismatch(history.rows(), timestamps.len()));
    }
    let mut buckets: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (r, ts) in timestamps.iter().enumerate() {
        buckets.entry(ts.hour()).or_default().push(r);
    }
    let mut out = Vec::with_capacity(buckets.len());
    for (hour, rows) in buckets {
        if rows.len() < 2 {
            log::warn!("hour bucket {hour:02} has {} sample(s); skipped", rows.len());
            continue;
        }
        out.push(CorrelationMatrix::from_samples(history, &rows)?.with_hour(hour));
    }
    Ok(out)
}

/// For each inverter, every other inverter in ascending order of correlation
/// (least correlated first), ties broken by lower id.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborOrder {
    orders: Vec<Vec<usize>>,
}

impl NeighborOrder {
    /// Ascending-id order for every inverter, as produced by an all-equal matrix.
    pub fn by_id(n: usize) -> Self {
        Self { orders: (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect() }
    }

    pub fn n(&self) -> usize {
        self.orders.len()
    }

    pub fn of(&self, inverter: usize) -> &[usize] {
        &self.orders[inverter]
    }
}

pub fn neighbor_order(matrix: &CorrelationMatrix) -> NeighborOrder {
    let n = matrix.n();
    let orders = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| matrix.get(i, a).total_cmp(&matrix.get(i, b)).then(a.cmp(&b)));
            others
        })
        .collect();
    NeighborOrder { orders }
}

/// Sum of coefficients over all unordered member pairs of every cluster.
pub fn intra_cluster_sum(matrix: &CorrelationMatrix, clusters: &[Vec<usize>]) -> f64 {
    clusters
        .iter()
        .map(|c| {
            let mut s = 0.0;
            for (k, &i) in c.iter().enumerate() {
                for &j in &c[k + 1..] {
                    s += matrix.get(i, j);
                }
            }
            s
        })
        .sum()
}

/// Partitions inverters into clusters of the given sizes so that members of a
/// cluster are as weakly correlated with each other as possible.
///
/// Construction is greedy: the least-correlated pair seeds the first cluster;
/// each further cluster is seeded by the unassigned inverter most correlated
/// with everything seeded so far; then the cheapest (inverter, cluster)
/// placement is taken repeatedly, cost being the sum of coefficients with the
/// cluster's current members. A local search over exchanges and rotations
/// then removes any remaining improvement. Ties always
/// resolve to the lower id.
/// Member lists are returned sorted.
pub fn cluster_assign(matrix: &CorrelationMatrix, sizes: &[usize]) -> Result<Vec<Vec<usize>>, CorrelationError> {
    let n = matrix.n();
    if sizes.iter().sum::<usize>() != n {
        return Err(CorrelationError::Config(format!(
            "cluster sizes {:?} sum to {}, expected {n}",
            sizes,
            sizes.iter().sum::<usize>()
        )));
    }
    if sizes.contains(&0) {
        return Err(CorrelationError::Config("cluster sizes must be positive".into()));
    }
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); sizes.len()];
    let mut assigned = vec![false; n];
    let place = |clusters: &mut [Vec<usize>], assigned: &mut [bool], i: usize, c: usize| {
        clusters[c].push(i);
        assigned[i] = true;
    };

    // Seed the first cluster with the least-correlated pair.
    if n >= 2 {
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..n {
            for j in i + 1..n {
                if matrix.get(i, j) < best.0 {
                    best = (matrix.get(i, j), i, j);
                }
            }
        }
        place(&mut clusters, &mut assigned, best.1, 0);
        if sizes[0] >= 2 {
            place(&mut clusters, &mut assigned, best.2, 0);
        }
    } else if n == 1 {
        place(&mut clusters, &mut assigned, 0, 0);
    }

    // Seed the rest with the inverter most correlated to all seeds so far.
    for c in 1..sizes.len() {
        let seeded: Vec<usize> = clusters.iter().flatten().copied().collect();
        let pick = (0..n)
            .filter(|&i| !assigned[i])
            .map(|i| (seeded.iter().map(|&j| matrix.get(i, j)).sum::<f64>(), i))
            .fold(None, |best: Option<(f64, usize)>, cand| match best {
                Some(b) if b.0 >= cand.0 => Some(b),
                _ => Some(cand),
            });
        if let Some((_, i)) = pick {
            place(&mut clusters, &mut assigned, i, c);
        }
    }

    // Cheapest placement first.
    while assigned.iter().any(|a| !a) {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| !assigned[i]) {
            for (c, members) in clusters.iter().enumerate() {
                if members.len() >= sizes[c] {
                    continue;
                }
                let cost: f64 = members.iter().map(|&j| matrix.get(i, j)).sum();
                if best.is_none_or(|b| cost < b.0) {
                    best = Some((cost, i, c));
                }
            }
        }
        let (_, i, c) = best.expect("free capacity remains while inverters are unassigned");
        place(&mut clusters, &mut assigned, i, c);
    }

    polish(matrix, &mut clusters);
    for c in &mut clusters {
        c.sort_unstable();
    }
    Ok(clusters)
}

/// Local search over growing neighbourhoods: exchanging two inverters between
/// clusters; rotating three inverters through three clusters; and, when
/// neither helps, two exchanges at once. Each is tried only if the previous
/// finds no improvement, and the best improving move is applied until none
/// remains.
fn polish(matrix: &CorrelationMatrix, clusters: &mut [Vec<usize>]) {
    const EPS: f64 = 1e-12;
    // Coefficient sum of `i` with every member except the one at `skip`.
    let link = |members: &[usize], i: usize, skip: usize| -> f64 {
        members.iter().enumerate().filter(|&(p, _)| p != skip).map(|(_, &j)| matrix.get(i, j)).sum()
    };
    let k = clusters.len();
    loop {
        // (delta, [(cluster, position, incoming inverter)])
        let mut best: Option<(f64, Vec<(usize, usize, usize)>)> = None;
        let consider = |best: &mut Option<(f64, Vec<_>)>, delta: f64, moves: Vec<(usize, usize, usize)>| {
            if delta < -EPS && best.as_ref().is_none_or(|b| delta < b.0) {
                *best = Some((delta, moves));
            }
        };
        for a in 0..k {
            for b in a + 1..k {
                for (pa, &i) in clusters[a].iter().enumerate() {
                    for (pb, &j) in clusters[b].iter().enumerate() {
                        let before = link(&clusters[a], i, pa) + link(&clusters[b], j, pb);
                        let after = link(&clusters[a], j, pa) + link(&clusters[b], i, pb);
                        consider(&mut best, after - before, vec![(a, pa, j), (b, pb, i)]);
                    }
                }
            }
        }
        if best.is_none() {
            for a in 0..k {
                for b in (0..k).filter(|&b| b != a) {
                    for c in (0..k).filter(|&c| c != a && c != b) {
                        for (pa, &i) in clusters[a].iter().enumerate() {
                            for (pb, &j) in clusters[b].iter().enumerate() {
                                for (pc, &l) in clusters[c].iter().enumerate() {
                                    // i -> b, j -> c, l -> a
                                    let before =
                                        link(&clusters[a], i, pa) + link(&clusters[b], j, pb) + link(&clusters[c], l, pc);
                                    let after =
                                        link(&clusters[a], l, pa) + link(&clusters[b], i, pb) + link(&clusters[c], j, pc);
                                    consider(&mut best, after - before, vec![(a, pa, l), (b, pb, i), (c, pc, j)]);
                                }
                            }
                        }
                    }
                }
            }
        }
        if best.is_none() {
            best = best_double_exchange(matrix, clusters);
        }
        let Some((_, moves)) = best else { break };
        for (c, p, i) in moves {
            clusters[c][p] = i;
        }
    }
}

/// Pairs of exchanges are only searched on plants small enough for the
/// quadratic number of pairs to stay cheap.
const MAX_EXCHANGE_PAIRS: usize = 250_000;

/// Best improving combination of two simultaneous exchanges, each of which may
/// be non-improving on its own.
fn best_double_exchange(matrix: &CorrelationMatrix, clusters: &[Vec<usize>]) -> Option<(f64, Vec<(usize, usize, usize)>)> {
    const EPS: f64 = 1e-12;
    let mut swaps = Vec::new();
    for a in 0..clusters.len() {
        for b in a + 1..clusters.len() {
            for pa in 0..clusters[a].len() {
                for pb in 0..clusters[b].len() {
                    swaps.push((a, pa, b, pb));
                }
            }
        }
    }
    if swaps.len() * swaps.len() / 2 > MAX_EXCHANGE_PAIRS {
        return None;
    }
    let cost = |c: &[usize]| intra_cluster_sum(matrix, std::slice::from_ref(&c.to_vec()));
    let mut best: Option<(f64, Vec<(usize, usize, usize)>)> = None;
    let mut trial = clusters.to_vec();
    for (x, &(a1, p1, b1, q1)) in swaps.iter().enumerate() {
        for &(a2, p2, b2, q2) in &swaps[x + 1..] {
            let slots = [(a1, p1), (b1, q1), (a2, p2), (b2, q2)];
            if (0..4).any(|u| (u + 1..4).any(|v| slots[u] == slots[v])) {
                continue;
            }
            let mut touched = vec![a1, b1, a2, b2];
            touched.sort_unstable();
            touched.dedup();
            let before: f64 = touched.iter().map(|&c| cost(&clusters[c])).sum();
            let (i1, j1) = (clusters[a1][p1], clusters[b1][q1]);
            let (i2, j2) = (clusters[a2][p2], clusters[b2][q2]);
            trial[a1][p1] = j1;
            trial[b1][q1] = i1;
            trial[a2][p2] = j2;
            trial[b2][q2] = i2;
            let after: f64 = touched.iter().map(|&c| cost(&trial[c])).sum();
            for &c in &touched {
                trial[c].clone_from(&clusters[c]);
            }
            let delta = after - before;
            if delta < -EPS && best.as_ref().is_none_or(|b| delta < b.0) {
                best = Some((delta, vec![(a1, p1, j1), (b1, q1, i1), (a2, p2, j2), (b2, q2, i2)]));
            }
        }
    }
    best
}
