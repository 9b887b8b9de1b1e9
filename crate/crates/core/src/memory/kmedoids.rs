//! PAM-style K-medoids over a precomputed distance matrix.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MedoidInit {
    /// Greedy PAM BUILD. Deterministic; ignores the seed.
    #[default]
    Build,
    /// `k` distinct items drawn with the seeded generator.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMedoidsConfig {
    pub max_iter: usize,
    pub seed: u64,
    pub init: MedoidInit,
}

impl Default for KMedoidsConfig {
    fn default() -> Self {
        Self { max_iter: 100, seed: 0, init: MedoidInit::Build }
    }
}

/// Result of a clustering run. `medoids[c]` is an item index and
/// `assignment[i]` a cluster index.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub medoids: Vec<usize>,
    pub assignment: Vec<usize>,
    pub cost: f64,
    /// Total cost after initialisation and after every swap iteration.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }
}

/// Square symmetric distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Evaluates `distance` on every unordered pair once.
    pub fn build<T>(items: &[T], mut distance: impl FnMut(&T, &T) -> Result<f64>) -> Result<Self> {
        let n = items.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = distance(&items[i], &items[j])?;
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::Distance(format!("invalid distance {d} between items {i} and {j}")));
                }
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Ok(Self { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Nearest medoid per item; ties go to the earlier medoid.
fn assign(d: &DistanceMatrix, medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assignment = (0..d.len())
        .map(|i| {
            let mut best = 0;
            for c in 1..medoids.len() {
                if d.get(i, medoids[c]) < d.get(i, medoids[best]) {
                    best = c;
                }
            }
            cost += d.get(i, medoids[best]);
            best
        })
        .collect();
    (assignment, cost)
}

fn total_cost(d: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..d.len()).map(|i| medoids.iter().map(|&m| d.get(i, m)).fold(f64::INFINITY, f64::min)).sum()
}

/// Per item: slot of the nearest medoid, its distance, and the distance to
/// the second nearest (infinite when `k = 1`).
fn nearest_two(d: &DistanceMatrix, medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = d.len();
    let (mut near, mut first, mut second) = (vec![0; n], vec![f64::INFINITY; n], vec![f64::INFINITY; n]);
    for j in 0..n {
        for (slot, &m) in medoids.iter().enumerate() {
            let v = d.get(j, m);
            if v < first[j] {
                second[j] = first[j];
                first[j] = v;
                near[j] = slot;
            } else if v < second[j] {
                second[j] = v;
            }
        }
    }
    (near, first, second)
}

fn build_init(d: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = d.len();
    let first = (0..n)
        .min_by(|&a, &b| {
            let sa: f64 = (0..n).map(|j| d.get(a, j)).sum();
            let sb: f64 = (0..n).map(|j| d.get(b, j)).sum();
            sa.total_cmp(&sb).then(a.cmp(&b))
        })
        .expect("non-empty");
    let mut medoids = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|j| d.get(first, j)).collect();
    while medoids.len() < k {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|i| !medoids.contains(i)) {
            let gain: f64 = (0..n).map(|j| (nearest[j] - d.get(i, j)).max(0.0)).sum();
            if best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, i));
            }
        }
        let (_, pick) = best.expect("k <= n");
        medoids.push(pick);
        for (j, near) in nearest.iter_mut().enumerate() {
            *near = near.min(d.get(pick, j));
        }
    }
    medoids
}

/// Clusters the items of `d` into `k` groups. Each iteration applies the
/// single best improving medoid/non-medoid swap; the run stops at
/// `max_iter` iterations or when no swap lowers the total cost.
pub fn k_medoids(d: &DistanceMatrix, k: usize, config: &KMedoidsConfig) -> Result<Clustering> {
    let n = d.len();
    if k == 0 {
        return Err(Error::Cluster("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Cluster(format!("k = {k} exceeds the {n} items to cluster")));
    }
    let mut medoids = match config.init {
        MedoidInit::Build => build_init(d, k),
        MedoidInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            sample(&mut rng, n, k).into_vec()
        }
    };
    let mut cost = total_cost(d, &medoids);
    let mut history = vec![cost];
    let mut iterations = 0;
    while iterations < config.max_iter {
        let (near, first, second) = nearest_two(d, &medoids);
        let mut best: Option<(f64, usize, usize)> = None;
        for slot in 0..k {
            for cand in (0..n).filter(|c| !medoids.contains(c)) {
                let delta: f64 = (0..n)
                    .map(|j| {
                        let dc = d.get(cand, j);
                        if near[j] == slot {
                            dc.min(second[j]) - first[j]
                        } else {
                            dc.min(first[j]) - first[j]
                        }
                    })
                    .sum();
                if best.is_none_or(|(b, _, _)| delta < b) {
                    best = Some((delta, slot, cand));
                }
            }
        }
        match best {
            Some((delta, slot, cand)) if delta < -1e-12 * cost.abs().max(1.0) => {
                medoids[slot] = cand;
                cost = total_cost(d, &medoids);
                history.push(cost);
                iterations += 1;
            }
            _ => break,
        }
    }
    let (assignment, cost) = assign(d, &medoids);
    Ok(Clustering { medoids, assignment, cost, cost_history: history, iterations })
}
