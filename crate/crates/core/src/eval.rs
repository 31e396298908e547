//! Clustering and classification metrics: k-means on embeddings, clustering
//! accuracy under optimal cluster-to-class assignment, NMI, and plain
//! argmax accuracy.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gnn::{classifier_logits, encode_graph, EnsembleModel, SampleCache};
use crate::util::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Set when fewer distinct points than clusters forced a degenerate
    /// clustering.
    pub degenerate: bool,
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` by
/// (inertia, restart index). Deterministic per seed.
pub fn kmeans(points: &Array2<f64>, c: usize, seed: u64, restarts: usize) -> Result<ClusterResult> {
    let n = points.nrows();
    if c == 0 || n < c {
        return Err(Error::Input(format!("need at least c={c} points, got {n}")));
    }
    let distinct = count_distinct(points);
    if distinct < c {
        // fewer distinct points than clusters: assign by distinct value
        let mut reps: Vec<Array1<f64>> = Vec::new();
        let mut assignments = vec![0usize; n];
        for i in 0..n {
            let row = points.row(i).to_owned();
            let found = reps.iter().position(|r| r == &row);
            assignments[i] = match found {
                Some(idx) => idx,
                None => {
                    reps.push(row);
                    reps.len() - 1
                }
            };
        }
        let mut centroids = Array2::<f64>::zeros((c, points.ncols()));
        for (idx, rep) in reps.iter().enumerate().take(c) {
            centroids.row_mut(idx).assign(rep);
        }
        return Ok(ClusterResult {
            assignments,
            centroids,
            inertia: 0.0,
            degenerate: true,
        });
    }

    let runs: Vec<(f64, usize, Vec<usize>, Array2<f64>)> = (0..restarts.max(1))
        .into_par_iter()
        .map(|restart| {
            let run_seed = derive_seed(seed, "kmeans-restart", restart as u64);
            let (assignments, centroids, inertia) = lloyd(points, c, run_seed);
            (inertia, restart, assignments, centroids)
        })
        .collect();
    let best = runs
        .into_iter()
        .min_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap())
        .unwrap();
    Ok(ClusterResult {
        assignments: best.2,
        centroids: best.3,
        inertia: best.0,
        degenerate: false,
    })
}

fn count_distinct(points: &Array2<f64>) -> usize {
    let mut reps: Vec<Vec<u64>> = Vec::new();
    for i in 0..points.nrows() {
        let bits: Vec<u64> = points.row(i).iter().map(|v| v.to_bits()).collect();
        if !reps.contains(&bits) {
            reps.push(bits);
        }
    }
    reps.len()
}

fn lloyd(points: &Array2<f64>, c: usize, seed: u64) -> (Vec<usize>, Array2<f64>, f64) {
    let n = points.nrows();
    let d = points.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = Array2::<f64>::zeros((c, d));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| squared_distance(&points.row(i).to_owned(), &centroids.row(0).to_owned()))
        .collect();
    for k in 1..c {
        let total: f64 = min_dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in min_dist.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(k).assign(&points.row(pick));
        for i in 0..n {
            let dist =
                squared_distance(&points.row(i).to_owned(), &centroids.row(k).to_owned());
            if dist < min_dist[i] {
                min_dist[i] = dist;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..300 {
        for i in 0..n {
            let mut best = (f64::INFINITY, 0usize);
            for k in 0..c {
                let dist =
                    squared_distance(&points.row(i).to_owned(), &centroids.row(k).to_owned());
                if dist < best.0 {
                    best = (dist, k);
                }
            }
            assignments[i] = best.1;
        }
        let mut counts = vec![0usize; c];
        let mut sums = Array2::<f64>::zeros((c, d));
        for i in 0..n {
            counts[assignments[i]] += 1;
            let mut row = sums.row_mut(assignments[i]);
            row += &points.row(i);
        }
        for k in 0..c {
            if counts[k] > 0 {
                let mut row = centroids.row_mut(k);
                row.assign(&(&sums.row(k) / counts[k] as f64));
            }
            // empty clusters keep their centroid
        }
        let new_inertia: f64 = (0..n)
            .map(|i| {
                squared_distance(
                    &points.row(i).to_owned(),
                    &centroids.row(assignments[i]).to_owned(),
                )
            })
            .sum();
        if (inertia - new_inertia).abs() <= 1e-8 {
            inertia = new_inertia;
            break;
        }
        inertia = new_inertia;
    }
    (assignments, centroids, inertia)
}

fn squared_distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d)
}

/// Clustering accuracy: the best matched fraction over all one-to-one
/// cluster-to-class assignments of the contingency matrix, solved exactly.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("empty partitions".into()));
    }
    let k = pred
        .iter()
        .chain(truth.iter())
        .max()
        .map(|&m| m + 1)
        .unwrap();
    let mut contingency = vec![vec![0u64; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        contingency[p][t] += 1;
    }
    let matched = max_assignment(&contingency);
    Ok(matched as f64 / pred.len() as f64)
}

/// Exact maximum-weight one-to-one assignment on a square cost matrix via
/// subset DP (rows = clusters, columns = classes); sizes here are tiny.
fn max_assignment(weights: &[Vec<u64>]) -> u64 {
    let k = weights.len();
    assert!(k <= 20, "assignment DP is for small class counts");
    let full = 1usize << k;
    // dp[mask] = best weight assigning the first popcount(mask) rows to the
    // column set `mask`
    let mut dp = vec![0u64; full];
    for mask in 0..full {
        let row = (mask as u32).count_ones() as usize;
        if row >= k {
            continue;
        }
        for col in 0..k {
            if mask & (1 << col) == 0 {
                let next = mask | (1 << col);
                let cand = dp[mask] + weights[row][col];
                if cand > dp[next] {
                    dp[next] = cand;
                }
            }
        }
    }
    dp[full - 1]
}

/// Normalized mutual information `I(pred; truth) / sqrt(H(pred) H(truth))`
/// with natural logs. Identical partitions give 1; if either entropy is 0
/// and the partitions differ, 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("empty partitions".into()));
    }
    let n = pred.len() as f64;
    let kp = pred.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let mut joint = vec![vec![0.0f64; kt]; kp];
    let mut mp = vec![0.0f64; kp];
    let mut mt = vec![0.0f64; kt];
    for (&p, &t) in pred.iter().zip(truth) {
        joint[p][t] += 1.0;
        mp[p] += 1.0;
        mt[t] += 1.0;
    }
    let same_partition = {
        // identical up to cluster ids ⇔ the joint has one nonzero per row
        // and per column, i.e. the partitions refine each other
        let rows_ok = joint
            .iter()
            .all(|row| row.iter().filter(|&&v| v > 0.0).count() <= 1);
        let mut col_counts = vec![0usize; kt];
        for row in &joint {
            for (t, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    col_counts[t] += 1;
                }
            }
        }
        rows_ok && col_counts.iter().all(|&c| c <= 1)
    };
    if same_partition {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for p in 0..kp {
        for t in 0..kt {
            if joint[p][t] > 0.0 {
                let pij = joint[p][t] / n;
                mi += pij * (pij * n * n / (mp[p] * mt[t])).ln();
            }
        }
    }
    let entropy = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let q = c / n;
                -q * q.ln()
            })
            .sum()
    };
    let hp = entropy(&mp);
    let ht = entropy(&mt);
    if hp <= 0.0 || ht <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

/// Argmax class prediction for one representation; ties break toward the
/// lowest class index.
pub fn predict_class(model: &EnsembleModel, g: &Array1<f64>) -> usize {
    let logits = classifier_logits(&model.classifier, g);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (c, &v) in logits.iter().enumerate() {
        if v > best.0 {
            best = (v, c);
        }
    }
    best.1
}

/// Fraction of argmax-correct predictions over `indices`.
pub fn classification_accuracy(
    model: &EnsembleModel,
    dataset: &Dataset,
    cache: &SampleCache,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Input("no evaluation indices".into()));
    }
    let mut correct = 0usize;
    for &i in indices {
        let label = dataset.graphs[i]
            .label()
            .ok_or_else(|| Error::Input(format!("graph {i} has no label")))?;
        let enc = encode_graph(model, &cache.sets[i])?;
        if predict_class(model, &enc.g) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}
