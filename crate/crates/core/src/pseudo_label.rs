//! Zero-budget pseudo-labels: k-means with k-means++ seeding, with `k` chosen
//! by maximum silhouette.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{squared_distance, Label, UnlabeledPool};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster id per point, each in `0..k`; no cluster is empty.
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    /// Inertia after every assignment step, ending with the final value.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Independent seedings per candidate `k`; the lowest inertia is kept.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-9,
            restarts: 5,
        }
    }
}

fn check_points<P: AsRef<[f64]>>(points: &[P], k: usize) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be in [1, {}]",
            points.len()
        )));
    }
    let dim = points[0].as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.as_ref().len(),
        });
    }
    Ok(dim)
}

fn seed_centroids<P: AsRef<[f64]>, R: Rng>(
    points: &[P],
    k: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let first = rng.random_range(0..points.len());
    let mut centroids = vec![points[first].as_ref().to_vec()];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let dist = WeightedIndex::new(&nearest)
            .map_err(|_| Error::invalid(format!("fewer than {k} distinct points to seed from")))?;
        let next = points[dist.sample(rng)].as_ref().to_vec();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p.as_ref(), &next));
        }
        centroids.push(next);
    }
    Ok(centroids)
}

/// k-means++ seeding: the first centroid is a uniform draw, each further one
/// is drawn with probability proportional to its squared distance from the
/// nearest centroid chosen so far.
pub fn kmeans_pp_init<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_points(points, k)?;
    seed_centroids(points, k, &mut rng::stream(seed, 0))
}

/// Nearest centroid, ties to the smallest id.
fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn cluster_means<P: AsRef<[f64]>>(
    points: &[P],
    assignment: &[usize],
    k: usize,
    dim: usize,
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p.as_ref()) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= n as f64;
        }
    }
    sums
}

fn total_inertia<P: AsRef<[f64]>>(
    points: &[P],
    assignment: &[usize],
    centroids: &[Vec<f64>],
) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| squared_distance(p.as_ref(), &centroids[a]))
        .sum()
}

/// Lloyd iterations from the given initial centroids.
///
/// Stops when the assignment no longer changes, when inertia improves by
/// less than `tol`, or after `max_iter` assignment steps. A cluster left
/// empty is re-seeded at the point farthest from its own centroid.
pub fn kmeans_from<P: AsRef<[f64]> + Sync>(
    points: &[P],
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    let k = centroids.len();
    let dim = check_points(points, k)?;
    if centroids.iter().any(|c| c.len() != dim) {
        return Err(Error::invalid(
            "initial centroids do not match point dimension",
        ));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be positive"));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::invalid("tol must be non-negative"));
    }

    let mut assignment: Vec<usize> = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let nearest: Vec<(usize, f64)> = points
            .par_iter()
            .map(|p| nearest_centroid(p.as_ref(), &centroids))
            .collect();
        let mut next: Vec<usize> = nearest.iter().map(|n| n.0).collect();
        let mut cost: Vec<f64> = nearest.iter().map(|n| n.1).collect();

        let mut sizes = vec![0usize; k];
        for &a in &next {
            sizes[a] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let donor = (0..points.len())
                .filter(|&i| sizes[next[i]] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if cost[b] >= cost[i] => Some(b),
                    _ => Some(i),
                })
                .ok_or_else(|| {
                    Error::Invariant("no point available to re-seed an empty cluster".into())
                })?;
            sizes[next[donor]] -= 1;
            sizes[empty] = 1;
            next[donor] = empty;
            cost[donor] = 0.0;
            centroids[empty] = points[donor].as_ref().to_vec();
        }

        let inertia: f64 = cost.iter().sum();
        let improved = history.last().map_or(f64::INFINITY, |prev| prev - inertia);
        history.push(inertia);
        let changed = next != assignment;
        assignment = next;
        centroids = cluster_means(points, &assignment, k, dim);
        if !changed || improved < tol {
            break;
        }
    }
    let inertia = total_inertia(points, &assignment, &centroids);
    history.push(inertia);
    Ok(Clustering {
        k,
        centroids,
        assignment,
        inertia,
        inertia_history: history,
        iterations,
    })
}

/// k-means with k-means++ seeding from `seed`.
pub fn kmeans<P: AsRef<[f64]> + Sync>(
    points: &[P],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    let init = kmeans_pp_init(points, k, seed)?;
    kmeans_from(points, init, max_iter, tol)
}

/// Mean silhouette coefficient of `assignment` (cluster ids `0..k`).
///
/// Points in singleton clusters contribute 0.
pub fn silhouette_score<P: AsRef<[f64]> + Sync>(points: &[P], assignment: &[usize]) -> Result<f64> {
    if points.len() != assignment.len() {
        return Err(Error::invalid("points and assignment differ in length"));
    }
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::invalid("silhouette needs at least 2 clusters"));
    }
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        sizes[a] += 1;
    }
    if let Some(j) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("cluster {j} is empty")));
    }
    let coefficients: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = assignment[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let x = points[i].as_ref();
            let mut sums = vec![0.0; k];
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    sums[assignment[j]] += squared_distance(x, p.as_ref()).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    Ok(coefficients.iter().sum::<f64>() / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    pub silhouette: f64,
    pub clustering: Clustering,
    /// `(k, silhouette)` for every candidate, ascending `k`.
    pub scores: Vec<(usize, f64)>,
    /// Inertia history of every restart of every candidate, ascending `k`.
    pub histories: Vec<(usize, Vec<f64>)>,
}

/// Runs k-means for each candidate `k` and keeps the one with the highest
/// silhouette (ties to the smallest `k`).
pub fn select_k<P: AsRef<[f64]> + Sync>(
    points: &[P],
    candidates: &[usize],
    seed: u64,
    opts: &KMeansOptions,
) -> Result<KSelection> {
    let ks: BTreeSet<usize> = candidates.iter().copied().collect();
    if ks.is_empty() {
        return Err(Error::Empty("k candidates"));
    }
    if let Some(&bad) = ks.iter().find(|&&k| k < 2 || k > points.len()) {
        return Err(Error::invalid(format!(
            "candidate k = {bad} must be in [2, {}]",
            points.len()
        )));
    }
    let restarts = opts.restarts.max(1);
    let results: Vec<(Clustering, f64, Vec<Vec<f64>>)> = ks
        .par_iter()
        .map(|&k| {
            let mut best: Option<Clustering> = None;
            let mut histories = Vec::with_capacity(restarts);
            for r in 0..restarts {
                let run_seed = rng::sub_seed(seed, ((k as u64) << 16) | r as u64);
                let c = kmeans(points, k, run_seed, opts.max_iter, opts.tol)?;
                histories.push(c.inertia_history.clone());
                if best.as_ref().is_none_or(|b| c.inertia < b.inertia) {
                    best = Some(c);
                }
            }
            let best = best.expect("at least one restart");
            let s = silhouette_score(points, &best.assignment)?;
            Ok((best, s, histories))
        })
        .collect::<Result<_>>()?;

    let scores: Vec<(usize, f64)> = results.iter().map(|(c, s, _)| (c.k, *s)).collect();
    let mut histories = Vec::new();
    let mut best: Option<(Clustering, f64)> = None;
    for (c, s, h) in results {
        histories.extend(h.into_iter().map(|h| (c.k, h)));
        if best.as_ref().is_none_or(|b| s > b.1) {
            best = Some((c, s));
        }
    }
    let (clustering, silhouette) = best.expect("non-empty candidates");
    Ok(KSelection {
        k: clustering.k,
        silhouette,
        clustering,
        scores,
        histories,
    })
}

/// The default candidate grid `2..=min(25, n / 2)`.
pub fn default_k_candidates(pool_size: usize) -> Vec<usize> {
    (2..=(pool_size / 2).min(25)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub k: usize,
    pub silhouette: f64,
    /// Added to every cluster id; larger than every known label.
    pub offset: Label,
    /// Pseudo-label per pool member, index-aligned with the pool.
    pub labels: Vec<Label>,
    pub selection: KSelection,
}

/// Clusters the pool and maps cluster ids to labels disjoint from `known`.
pub fn generate_pseudo_labels(
    pool: &UnlabeledPool,
    known: &BTreeSet<Label>,
    k_candidates: &[usize],
    seed: u64,
    opts: &KMeansOptions,
) -> Result<PseudoLabels> {
    if let Some(&max) = k_candidates.iter().max() {
        if max > pool.len() {
            return Err(Error::invalid(format!(
                "pool of {} members is smaller than candidate k = {max}",
                pool.len()
            )));
        }
    }
    let selection = select_k(pool.members(), k_candidates, seed, opts)?;
    let offset = known.iter().next_back().map_or(0, |&m| m + 1);
    let labels = selection
        .clustering
        .assignment
        .iter()
        .map(|&c| offset + c as Label)
        .collect();
    Ok(PseudoLabels {
        k: selection.k,
        silhouette: selection.silhouette,
        offset,
        labels,
        selection,
    })
}
