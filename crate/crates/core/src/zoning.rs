//! Electrical zoning of a feeder.
//!
//! Admittance weights are scaled to a doubly stochastic matrix, the leading
//! eigenvectors give a spectral embedding, k-means partitions the embedded
//! nodes and the mean silhouette score selects the number of zones. Every
//! returned zone induces a connected subgraph.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{admittance_weights, Network, NodeId};
use crate::io::atomic_write;

pub const SINKHORN_TOL: f64 = 1e-10;
pub const SINKHORN_MAX_ITER: usize = 10_000;
pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;
const KMEANS_RESEEDS: usize = 10;
/// Scores within this band of the best are treated as ties (larger k wins).
pub const SCORE_TIE_BAND: f64 = 0.01;

fn is_connected(w: &DMatrix<f64>) -> bool {
    let n = w.nrows();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if !seen[v] && w[(u, v)] > 0.0 {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Sinkhorn-Knopp scaling of `W + gamma I` (gamma = max row sum), followed by
/// symmetrization.
pub fn to_doubly_stochastic(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} weight matrix", n, w.ncols())));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Precondition("weights must be finite and non-negative".into()));
    }
    if !is_connected(w) {
        return Err(Error::Disconnected);
    }
    let gamma = (0..n).map(|i| w.row(i).sum()).fold(0.0, f64::max);
    let gamma = if gamma > 0.0 { gamma } else { 1.0 };
    let mut m = w + DMatrix::identity(n, n) * gamma;

    let mut converged = false;
    for _ in 0..SINKHORN_MAX_ITER {
        for i in 0..n {
            let s = m.row(i).sum();
            m.row_mut(i).scale_mut(1.0 / s);
        }
        for j in 0..n {
            let s = m.column(j).sum();
            m.column_mut(j).scale_mut(1.0 / s);
        }
        if max_marginal_error(&m) <= SINKHORN_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "Sinkhorn normalization",
            iterations: SINKHORN_MAX_ITER,
        });
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// Largest deviation of any row or column sum from one.
pub fn max_marginal_error(m: &DMatrix<f64>) -> f64 {
    let rows = (0..m.nrows()).map(|i| (m.row(i).sum() - 1.0).abs());
    let cols = (0..m.ncols()).map(|j| (m.column(j).sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Full eigendecomposition sorted by descending eigenvalue, with the first
/// non-negligible component of every eigenvector made positive.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn spectrum(m: &DMatrix<f64>) -> Spectrum {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &src) in idx.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        vectors.set_column(c, &v);
    }
    Spectrum {
        values: idx.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors,
    }
}

impl Spectrum {
    pub fn embedding(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }
}

/// `N x k` coordinates: eigenvectors of the `k` largest eigenvalues.
pub fn spectral_embed(m: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 || k > m.nrows() {
        return Err(Error::Precondition(format!("k = {k} outside [1, {}]", m.nrows())));
    }
    Ok(spectrum(m).embedding(k))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rows_of(points: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..points.nrows())
        .map(|r| points.row(r).iter().copied().collect())
        .collect()
}

fn distinct_points(pts: &[Vec<f64>]) -> usize {
    let mut count = 0;
    for (i, p) in pts.iter().enumerate() {
        if !pts[..i].iter().any(|q| q == p) {
            count += 1;
        }
    }
    count
}

#[derive(Clone, Debug)]
pub struct KMeans {
    /// Cluster label per point, `1..=k`.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
    /// Within-cluster sum of squares after every Lloyd iteration of the
    /// winning restart.
    pub history: Vec<f64>,
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(pts: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = pts.len();
    let mut centroids = vec![pts[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|d| *d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(pts[pick].clone());
        for (d, p) in d2.iter_mut().zip(pts) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn lloyd(pts: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Option<KMeans> {
    let k = centroids.len();
    let dim = pts[0].len();
    let mut labels = vec![usize::MAX; pts.len()];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(pts) {
            let (c, _) = nearest(p, &centroids);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(pts) {
            counts[*l] += 1;
            for (s, x) in sums[*l].iter_mut().zip(p) {
                *s += x;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        let wcss = labels
            .iter()
            .zip(pts)
            .map(|(l, p)| sq_dist(p, &centroids[*l]))
            .sum();
        history.push(wcss);
        if !changed {
            break;
        }
    }
    let wcss = *history.last().unwrap_or(&0.0);
    Some(KMeans {
        labels: labels.into_iter().map(|l| l + 1).collect(),
        centroids,
        wcss,
        history,
    })
}

/// k-means++ seeded by `seed`, best of [`KMEANS_RESTARTS`] restarts.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64) -> Result<KMeans> {
    let pts = rows_of(points);
    if k == 0 || k > distinct_points(&pts) {
        return Err(Error::Precondition(format!(
            "k = {k} exceeds the number of distinct points ({})",
            distinct_points(&pts)
        )));
    }
    let mut best: Option<KMeans> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart as u64));
        let mut run = None;
        for _ in 0..KMEANS_RESEEDS {
            run = lloyd(&pts, plus_plus_init(&pts, k, &mut rng));
            if run.is_some() {
                break;
            }
        }
        let run = run.ok_or_else(|| Error::Precondition(format!("k-means left a cluster empty after {KMEANS_RESEEDS} reseeds")))?;
        if best.as_ref().map_or(true, |b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Silhouette {
    /// `s_j` per point.
    pub per_node: Vec<f64>,
    /// `S_x` per cluster (index `x - 1`).
    pub per_zone: Vec<f64>,
    /// `SC_T^k`: mean of the per-cluster scores.
    pub mean: f64,
}

/// Silhouette scores in Euclidean distance over `points`; labels are `1..=k`.
pub fn silhouette(labels: &[usize], points: &DMatrix<f64>) -> Result<Silhouette> {
    let n = labels.len();
    if points.nrows() != n {
        return Err(Error::Dimension(format!("{n} labels for {} points", points.nrows())));
    }
    let k = labels.iter().copied().max().unwrap_or(0);
    if k < 2 {
        return Err(Error::Precondition("silhouette needs at least two clusters".into()));
    }
    let pts = rows_of(points);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l - 1] += 1;
    }
    let mut per_node = vec![0.0; n];
    for j in 0..n {
        let own = labels[j] - 1;
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for i in 0..n {
            if i != j {
                sums[labels[i] - 1] += sq_dist(&pts[i], &pts[j]).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        per_node[j] = if denom > 0.0 && b.is_finite() { (b - a) / denom } else { 0.0 };
    }
    let per_zone: Vec<f64> = (0..k)
        .map(|c| {
            let members: Vec<f64> = (0..n).filter(|&j| labels[j] == c + 1).map(|j| per_node[j]).collect();
            if members.is_empty() {
                0.0
            } else {
                members.iter().sum::<f64>() / members.len() as f64
            }
        })
        .collect();
    let nonempty = sizes.iter().filter(|&&s| s > 0).count();
    let mean = per_zone.iter().sum::<f64>() / nonempty as f64;
    Ok(Silhouette {
        per_node,
        per_zone,
        mean,
    })
}

/// Components of the subgraph induced by the nodes labelled `zone`.
fn zone_components(labels: &[usize], zone: usize, w: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = labels.len();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if labels[start] != zone || seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut i = 0;
        while i < comp.len() {
            let u = comp[i];
            for v in 0..n {
                if !seen[v] && labels[v] == zone && w[(u, v)] > 0.0 {
                    seen[v] = true;
                    comp.push(v);
                }
            }
            i += 1;
        }
        comps.push(comp);
    }
    comps
}

/// Reassigns every disconnected fragment of a zone to the adjacent zone with
/// the largest total boundary weight; the largest fragment (lowest node on
/// ties) keeps the zone label.
pub fn repair_connectivity(labels: &mut [usize], w: &DMatrix<f64>) {
    let k = labels.iter().copied().max().unwrap_or(0);
    loop {
        let mut moved = false;
        for zone in 1..=k {
            let mut comps = zone_components(labels, zone, w);
            if comps.len() <= 1 {
                continue;
            }
            comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
            for frag in comps.into_iter().skip(1) {
                let mut boundary: BTreeMap<usize, f64> = BTreeMap::new();
                for &u in &frag {
                    for v in 0..labels.len() {
                        if w[(u, v)] > 0.0 && labels[v] != zone {
                            *boundary.entry(labels[v]).or_default() += w[(u, v)];
                        }
                    }
                }
                let target = boundary
                    .iter()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(z, _)| *z);
                if let Some(t) = target {
                    for &u in &frag {
                        labels[u] = t;
                    }
                    moved = true;
                }
            }
            if moved {
                break;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Relabels zones `1..=k` by ascending smallest member index.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    let mut next = 1;
    labels
        .iter()
        .map(|l| {
            *map.entry(*l).or_insert_with(|| {
                let v = next;
                next += 1;
                v
            })
        })
        .collect()
}

/// True if every zone induces a connected subgraph of `w`.
pub fn zones_connected(labels: &[usize], w: &DMatrix<f64>) -> bool {
    let k = labels.iter().copied().max().unwrap_or(0);
    (1..=k).all(|z| zone_components(labels, z, w).len() <= 1)
}

#[derive(Clone, Debug)]
pub struct ZonePartition {
    pub k: usize,
    /// Zone per node index, `1..=k`.
    pub labels: Vec<usize>,
    pub score: f64,
    pub per_zone: Vec<f64>,
    pub per_node: Vec<f64>,
    pub embedding: DMatrix<f64>,
}

impl ZonePartition {
    /// Partition that puts every node in its own zone.
    pub fn singletons(n: usize) -> Self {
        Self {
            k: n,
            labels: (1..=n).collect(),
            score: 0.0,
            per_zone: vec![0.0; n],
            per_node: vec![0.0; n],
            embedding: DMatrix::zeros(n, 0),
        }
    }

    pub fn single_zone(n: usize) -> Self {
        Self {
            k: 1,
            labels: vec![1; n],
            score: 0.0,
            per_zone: vec![0.0],
            per_node: vec![0.0; n],
            embedding: DMatrix::zeros(n, 0),
        }
    }

    pub fn from_labels(labels: Vec<usize>) -> Self {
        let k = labels.iter().copied().max().unwrap_or(0);
        let n = labels.len();
        Self {
            k,
            labels,
            score: 0.0,
            per_zone: vec![0.0; k],
            per_node: vec![0.0; n],
            embedding: DMatrix::zeros(n, 0),
        }
    }

    pub fn members(&self, zone: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == zone).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ZoneSelection {
    pub partition: ZonePartition,
    /// `(k, SC_T^k)` for every k swept.
    pub scores: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PartitionDocument {
    pub k: usize,
    pub score: f64,
    pub labels: BTreeMap<NodeId, usize>,
}

/// Partitions the feeder for one value of k: embed, cluster, repair
/// connectivity, relabel, score.
pub fn partition_for_k(spec: &Spectrum, w: &DMatrix<f64>, k: usize, seed: u64) -> Result<ZonePartition> {
    let emb = spec.embedding(k);
    let km = kmeans(&emb, k, seed)?;
    let mut labels = km.labels;
    repair_connectivity(&mut labels, w);
    let labels = canonical_labels(&labels);
    let sil = silhouette(&labels, &emb)?;
    Ok(ZonePartition {
        k,
        labels,
        score: sil.mean,
        per_zone: sil.per_zone,
        per_node: sil.per_node,
        embedding: emb,
    })
}

/// Sweeps `k` over `k_range`, returning the partition with the highest mean
/// silhouette; scores within [`SCORE_TIE_BAND`] of the best prefer larger k.
pub fn select_zones(net: &Network, k_range: std::ops::RangeInclusive<usize>, seed: u64) -> Result<ZoneSelection> {
    let n = net.node_count();
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi > n || lo > hi {
        return Err(Error::Precondition(format!("k range {lo}..={hi} outside [2, {n}]")));
    }
    let w = admittance_weights(net)?;
    let m = to_doubly_stochastic(&w)?;
    let spec = spectrum(&m);
    let parts = (lo..=hi)
        .into_par_iter()
        .map(|k| partition_for_k(&spec, &w, k, seed))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<(usize, f64)> = parts.iter().map(|p| (p.k, p.score)).collect();
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let chosen = parts
        .into_iter()
        .filter(|p| p.score >= best - SCORE_TIE_BAND)
        .max_by_key(|p| p.k)
        .expect("non-empty sweep");
    Ok(ZoneSelection {
        partition: chosen,
        scores,
    })
}

impl ZoneSelection {
    pub fn document(&self, net: &Network) -> PartitionDocument {
        PartitionDocument {
            k: self.partition.k,
            score: self.partition.score,
            labels: net
                .nodes
                .iter()
                .zip(&self.partition.labels)
                .map(|(n, l)| (n.id, *l))
                .collect(),
        }
    }

    pub fn scores_csv(&self) -> String {
        let mut out = String::from("k,score\n");
        for (k, s) in &self.scores {
            out.push_str(&format!("{k},{s}\n"));
        }
        out
    }

    /// Writes `partition.json` and `silhouette.csv` into `dir`.
    pub fn write(&self, net: &Network, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        atomic_write(
            &dir.join("partition.json"),
            serde_json::to_string_pretty(&self.document(net))?.as_bytes(),
        )?;
        atomic_write(&dir.join("silhouette.csv"), self.scores_csv().as_bytes())
    }
}

/// Reads a partition document back into per-node labels.
pub fn read_partition(net: &Network, path: &Path) -> Result<ZonePartition> {
    let doc: PartitionDocument = serde_json::from_str(&fs::read_to_string(path)?)?;
    let labels = net
        .nodes
        .iter()
        .map(|n| {
            doc.labels
                .get(&n.id)
                .copied()
                .ok_or(Error::DanglingReference {
                    element: "partition".into(),
                    node: n.id.0,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut p = ZonePartition::from_labels(labels);
    p.score = doc.score;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_weights(n: usize, w: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            m[(i, i + 1)] = w;
            m[(i + 1, i)] = w;
        }
        m
    }

    #[test]
    fn two_node_doubly_stochastic() {
        let m = to_doubly_stochastic(&path_weights(2, 7.3)).unwrap();
        assert!(max_marginal_error(&m) <= 1e-9);
        assert!((m[(0, 1)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn path_of_three() {
        let m = to_doubly_stochastic(&path_weights(3, 1.0)).unwrap();
        assert!(max_marginal_error(&m) <= 1e-9);
        assert_eq!(m, m.transpose());
        let sp = spectrum(&m);
        assert!((sp.values[0] - 1.0).abs() < 1e-9);
        assert!(sp.values.iter().all(|v| *v <= 1.0 + 1e-9));
    }

    #[test]
    fn disconnected_rejected() {
        let mut w = path_weights(4, 1.0);
        w[(1, 2)] = 0.0;
        w[(2, 1)] = 0.0;
        assert!(matches!(to_doubly_stochastic(&w), Err(Error::Disconnected)));
    }

    #[test]
    fn first_eigenvector_is_constant() {
        let m = to_doubly_stochastic(&path_weights(5, 2.0)).unwrap();
        let e = spectral_embed(&m, 1).unwrap();
        let c = 1.0 / 5f64.sqrt();
        for v in e.iter() {
            assert!((v - c).abs() < 1e-8);
        }
    }

    #[test]
    fn full_embedding_is_orthonormal() {
        let m = to_doubly_stochastic(&path_weights(6, 1.0)).unwrap();
        let v = spectral_embed(&m, 6).unwrap();
        let id = &v * v.transpose();
        assert!((id - DMatrix::<f64>::identity(6, 6)).amax() < 1e-9);
    }

    #[test]
    fn kmeans_trivial_cases() {
        let pts = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 5.0, 5.0, 6.0, 5.0]);
        let one = kmeans(&pts, 1, 3).unwrap();
        assert!(one.labels.iter().all(|l| *l == 1));
        let all = kmeans(&pts, 4, 3).unwrap();
        assert_eq!(all.wcss, 0.0);
        let mut l = all.labels.clone();
        l.sort();
        assert_eq!(l, vec![1, 2, 3, 4]);
        let dup = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 2.0]);
        assert!(kmeans(&dup, 3, 0).is_err());
    }

    #[test]
    fn kmeans_wcss_monotone() {
        let pts = DMatrix::from_fn(40, 2, |r, c| ((r * 7 + c * 3) % 11) as f64 + (r / 10) as f64 * 8.0);
        for seed in 0..5 {
            let km = kmeans(&pts, 4, seed).unwrap();
            for w in km.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
        }
    }

    #[test]
    fn silhouette_limits() {
        let pts = |sep: f64| DMatrix::from_row_slice(4, 1, &[0.0, 1.0, sep, sep + 1.0]);
        let near = silhouette(&[1, 1, 2, 2], &pts(3.0)).unwrap().mean;
        let far = silhouette(&[1, 1, 2, 2], &pts(1e6)).unwrap().mean;
        assert!(far > near);
        assert!(far > 0.999_99);
        assert!(silhouette(&[1, 1, 1, 1], &pts(3.0)).is_err());
        // singleton convention
        let s = silhouette(&[1, 2, 2, 2], &pts(3.0)).unwrap();
        assert_eq!(s.per_node[0], 0.0);
    }

    #[test]
    fn silhouette_zero_when_equidistant() {
        // point 2 sits at 0; its own cluster mate at -1 and the other cluster at +1
        let pts = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 1.0]);
        let s = silhouette(&[1, 1, 2], &pts).unwrap();
        assert_eq!(s.per_node[1], 0.0);
    }

    #[test]
    fn repair_star() {
        // hub 0 with leaves 1..=4; zone 2 = {1, 2} is disconnected
        let mut w = DMatrix::zeros(5, 5);
        for leaf in 1..5 {
            w[(0, leaf)] = 1.0;
            w[(leaf, 0)] = 1.0;
        }
        let mut labels = vec![1, 2, 2, 1, 1];
        repair_connectivity(&mut labels, &w);
        assert!(zones_connected(&labels, &w));
        assert_eq!(labels.iter().filter(|l| **l == 2).count(), 1);
    }

    #[test]
    fn canonical_relabel() {
        assert_eq!(canonical_labels(&[3, 3, 1, 2, 1]), vec![1, 1, 2, 3, 2]);
    }
}
