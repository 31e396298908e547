//! Ensemble graph kernel: pattern-counting feature vectors, normalized Gram
//! matrices, and simplex-weighted kernel mixing with learnable logits.
//!
//! Three counting channels are implemented — walk counts (path pattern),
//! WL-subtree color histograms (tree pattern), and exact small-graphlet
//! counts. The mixing weights λ = softmax(w) are fit by full-batch gradient
//! descent on either a supervised contrastive loss or an unsupervised
//! clustering-style KL loss.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::patterns::{wl_color_rounds, PatternKind};
use crate::util::{softmax, softmax_backward};

/// Floor applied to kernel entries before any logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Node-count cap for exhaustive graphlet enumeration.
pub const GRAPHLET_NODE_CAP: usize = 200;

/// Graphlet isomorphism classes counted by [`graphlet_counting_vector`],
/// in vector order.
pub const GRAPHLET_CLASS_NAMES: [&str; 8] = [
    "wedge", "triangle", "path4", "star4", "cycle4", "tadpole", "diamond", "k4",
];

/// A per-graph pattern counting feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingVector {
    pub graph_id: usize,
    pub kind: PatternKind,
    pub values: Array1<f64>,
}

/// Walk counts: entry `i` (1-based) is the total number of walks of length
/// `i`, i.e. `1ᵀ Aⁱ 1`, computed by repeated matrix-vector products.
pub fn path_counting_vector(g: &Graph, l_max: usize) -> CountingVector {
    assert!(l_max >= 1, "l_max must be >= 1");
    let a = g.adjacency_f64();
    let mut v = Array1::<f64>::ones(g.node_count());
    let mut values = Array1::<f64>::zeros(l_max);
    for i in 0..l_max {
        v = a.dot(&v);
        values[i] = v.sum();
    }
    CountingVector {
        graph_id: g.id(),
        kind: PatternKind::Path,
        values,
    }
}

/// Shared WL color vocabulary, fit over a whole dataset so every graph's
/// subtree histogram lives in the same space. Colors are keyed by
/// (refinement depth, color hash); anything unseen at fit time lands in a
/// reserved overflow bucket at the end.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WlVocabulary {
    depth: usize,
    index: BTreeMap<(usize, u64), usize>,
}

impl WlVocabulary {
    pub fn fit(graphs: &[Graph], depth: usize) -> Self {
        let mut keys = std::collections::BTreeSet::new();
        for g in graphs {
            let rounds = wl_color_rounds(g.adjacency(), g.node_labels(), depth);
            for (d, colors) in rounds.iter().enumerate() {
                for &c in colors {
                    keys.insert((d, c));
                }
            }
        }
        let index = keys.into_iter().zip(0..).collect();
        Self { depth, index }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Histogram dimension: one bucket per fitted color plus the overflow.
    pub fn dim(&self) -> usize {
        self.index.len() + 1
    }

    fn bucket(&self, depth: usize, color: u64) -> usize {
        *self.index.get(&(depth, color)).unwrap_or(&self.index.len())
    }
}

/// WL-subtree histogram over colors at refinement depths `0..=depth`,
/// indexed by the shared vocabulary.
pub fn wl_subtree_vector(g: &Graph, vocab: &WlVocabulary) -> CountingVector {
    let mut values = Array1::<f64>::zeros(vocab.dim());
    let rounds = wl_color_rounds(g.adjacency(), g.node_labels(), vocab.depth());
    for (d, colors) in rounds.iter().enumerate() {
        for &c in colors {
            values[vocab.bucket(d, c)] += 1.0;
        }
    }
    CountingVector {
        graph_id: g.id(),
        kind: PatternKind::Tree,
        values,
    }
}

/// Exact counts of connected induced subgraphs on 3 and 4 nodes, by
/// isomorphism class (see [`GRAPHLET_CLASS_NAMES`] for the order), via
/// exhaustive enumeration of node triples and quadruples.
pub fn graphlet_counting_vector(g: &Graph) -> Result<CountingVector> {
    let n = g.node_count();
    if n > GRAPHLET_NODE_CAP {
        return Err(Error::Capability(format!(
            "graphlet enumeration is exhaustive and capped at {GRAPHLET_NODE_CAP} nodes \
             (got {n}); sampling-based estimates are not provided"
        )));
    }
    let adj = g.adjacency();
    let mut counts = [0.0f64; 8];
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let e = (adj[[i, j]] + adj[[i, k]] + adj[[j, k]]) as usize;
                match e {
                    2 => counts[0] += 1.0, // wedge
                    3 => counts[1] += 1.0, // triangle
                    _ => {}
                }
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                for l in (k + 1)..n {
                    let quad = [i, j, k, l];
                    let mut degs = [0usize; 4];
                    let mut edges = 0usize;
                    for a in 0..4 {
                        for b in (a + 1)..4 {
                            if adj[[quad[a], quad[b]]] == 1 {
                                degs[a] += 1;
                                degs[b] += 1;
                                edges += 1;
                            }
                        }
                    }
                    degs.sort_unstable();
                    match (edges, degs) {
                        (3, [1, 1, 2, 2]) => counts[2] += 1.0, // path4
                        (3, [1, 1, 1, 3]) => counts[3] += 1.0, // star4
                        (4, [2, 2, 2, 2]) => counts[4] += 1.0, // cycle4
                        (4, [1, 2, 2, 3]) => counts[5] += 1.0, // tadpole
                        (5, [2, 2, 3, 3]) => counts[6] += 1.0, // diamond
                        (6, _) => counts[7] += 1.0,            // k4
                        _ => {}                                // disconnected
                    }
                }
            }
        }
    }
    Ok(CountingVector {
        graph_id: g.id(),
        kind: PatternKind::Graphlet,
        values: Array1::from_iter(counts),
    })
}

/// Monotone squashing applied to counting vectors before Gram construction;
/// raw walk counts grow exponentially with length and would otherwise swamp
/// the normalization.
pub fn log1p_transform(v: &CountingVector) -> CountingVector {
    CountingVector {
        graph_id: v.graph_id,
        kind: v.kind,
        values: v.values.mapv(f64::ln_1p),
    }
}

/// Gram matrix of pairwise dot products. All vectors must share kind and
/// dimension.
pub fn gram_from_vectors(vectors: &[CountingVector]) -> Result<Array2<f64>> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::Input("no counting vectors given".into()));
    }
    let dim = vectors[0].values.len();
    let kind = vectors[0].kind;
    for v in vectors {
        if v.values.len() != dim || v.kind != kind {
            return Err(Error::Input(format!(
                "counting vector mismatch: expected {kind:?}/{dim}, got {:?}/{}",
                v.kind,
                v.values.len()
            )));
        }
    }
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let dot = vectors[i].values.dot(&vectors[j].values);
            k[[i, j]] = dot;
            k[[j, i]] = dot;
        }
    }
    Ok(k)
}

/// Cosine-style normalization `K̂ij = Kij / sqrt(Kii Kjj)` with the diagonal
/// floored at `1e-12` so all-zero counting vectors stay well-defined.
pub fn normalize_gram(k: &Array2<f64>) -> Array2<f64> {
    let n = k.nrows();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| k[[i, i]].max(1e-12).sqrt().recip()).collect();
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = k[[i, j]] * inv_sqrt[i] * inv_sqrt[j];
        }
        out[[i, i]] = 1.0;
    }
    out
}

/// A set of named, normalized Gram matrices plus the learnable mixing
/// logits. λ = softmax(logits) always lies on the simplex by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelStack {
    pub names: Vec<String>,
    pub grams: Vec<Array2<f64>>,
    pub logits: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

impl KernelStack {
    pub fn new(
        names: Vec<String>,
        grams: Vec<Array2<f64>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if names.len() != grams.len() || grams.is_empty() {
            return Err(Error::Input("need one name per gram, at least one".into()));
        }
        let n = grams[0].nrows();
        for (name, gram) in names.iter().zip(&grams) {
            if gram.nrows() != n || gram.ncols() != n {
                return Err(Error::Input(format!("gram '{name}' is not {n}x{n}")));
            }
            for i in 0..n {
                if (gram[[i, i]] - 1.0).abs() > 1e-9 {
                    return Err(Error::Input(format!(
                        "gram '{name}' diagonal is not 1 at {i}; normalize first"
                    )));
                }
                for j in (i + 1)..n {
                    if (gram[[i, j]] - gram[[j, i]]).abs() > 1e-12 {
                        return Err(Error::Input(format!("gram '{name}' not symmetric")));
                    }
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Input(format!(
                    "{} labels for {n} graphs",
                    labels.len()
                )));
            }
        }
        let logits = vec![0.0; grams.len()];
        Ok(Self {
            names,
            grams,
            logits,
            labels,
        })
    }

    pub fn size(&self) -> usize {
        self.grams[0].nrows()
    }

    pub fn lambda(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

/// `K(λ) = Σ_m softmax(w)_m · K_m`.
pub fn ensemble_gram(stack: &KernelStack) -> Array2<f64> {
    let lambda = stack.lambda();
    let n = stack.size();
    let mut k = Array2::<f64>::zeros((n, n));
    for (w, gram) in lambda.iter().zip(&stack.grams) {
        k.scaled_add(*w, gram);
    }
    k
}

/// Supervised contrastive loss over a kernel matrix:
/// `-Σ_{i≠j} 1[y_i=y_j] (log K_ij - log[Σ_k 1[y_i=y_k, k≠i] K_ik + μ Σ_k 1[y_i≠y_k] K_ik])`.
///
/// With fewer than two graphs sharing a class the sum is empty and the loss
/// is 0 (documented, not an error).
pub fn scl_loss(k: &Array2<f64>, labels: &[usize], mu: f64) -> f64 {
    scl_loss_grad(k, labels, mu).0
}

/// Loss plus `dL/dK`.
pub fn scl_loss_grad(k: &Array2<f64>, labels: &[usize], mu: f64) -> (f64, Array2<f64>) {
    let n = k.nrows();
    assert_eq!(labels.len(), n, "one label per row");
    assert!(mu > 0.0, "mu must be positive");
    let kf = k.mapv(|v| v.max(LOG_FLOOR));
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let pos_sum: f64 = positives.iter().map(|&j| kf[[i, j]]).sum();
        let neg_sum: f64 = (0..n)
            .filter(|&j| labels[j] != labels[i])
            .map(|j| kf[[i, j]])
            .sum();
        let denom = pos_sum + mu * neg_sum;
        let p_i = positives.len() as f64;
        for &j in &positives {
            loss -= kf[[i, j]].ln() - denom.ln();
            grad[[i, j]] -= 1.0 / kf[[i, j]];
        }
        // the shared denominator contributes P_i * d ln(denom)/dK_ik for every k
        for jj in 0..n {
            if jj == i {
                continue;
            }
            if labels[jj] == labels[i] {
                grad[[i, jj]] += p_i / denom;
            } else {
                grad[[i, jj]] += p_i * mu / denom;
            }
        }
    }
    // zero the gradient where the floor clamped
    for i in 0..n {
        for j in 0..n {
            if k[[i, j]] < LOG_FLOOR {
                grad[[i, j]] = 0.0;
            }
        }
    }
    (loss, grad)
}

/// Clustering-style KL loss of a kernel matrix.
///
/// Rows of K normalize to the model distribution Q; the sharpened target is
/// `P_ij ∝ K_ij² / r_j` (row-normalized) with soft cluster frequencies
/// `r_j = Σ_i K_ij` taken as column sums. Returns `Σ_ij P_ij log(P_ij/Q_ij)`.
pub fn kl_kernel_loss(k: &Array2<f64>) -> f64 {
    kl_kernel_loss_grad(k).0
}

/// Loss plus `dL/dK`, differentiating through the target P as well.
pub fn kl_kernel_loss_grad(k: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = k.nrows();
    let kf = k.mapv(|v| v.max(LOG_FLOOR));
    let row_sum: Vec<f64> = (0..n).map(|i| kf.row(i).sum()).collect();
    let col_sum: Vec<f64> = (0..n).map(|j| kf.column(j).sum()).collect();
    // target numerator and its row sums
    let mut t = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            t[[i, j]] = kf[[i, j]] * kf[[i, j]] / col_sum[j];
        }
    }
    let t_row: Vec<f64> = (0..n).map(|i| t.row(i).sum()).collect();

    let mut loss = 0.0;
    let mut grad_p = Array2::<f64>::zeros((n, n)); // dL/dP
    let mut grad_q = Array2::<f64>::zeros((n, n)); // dL/dQ
    for i in 0..n {
        for j in 0..n {
            let p = t[[i, j]] / t_row[i];
            let q = kf[[i, j]] / row_sum[i];
            loss += p * (p.ln() - q.ln());
            grad_p[[i, j]] = p.ln() + 1.0 - q.ln();
            grad_q[[i, j]] = -p / q;
        }
    }

    let mut grad = Array2::<f64>::zeros((n, n));
    // through P = T / t_row
    let mut grad_t = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let c_i: f64 = (0..n)
            .map(|j| grad_p[[i, j]] * t[[i, j]] / t_row[i])
            .sum();
        for j in 0..n {
            grad_t[[i, j]] = (grad_p[[i, j]] - c_i) / t_row[i];
        }
    }
    // through T_ij = K_ij² / r_j
    for i in 0..n {
        for j in 0..n {
            grad[[i, j]] += grad_t[[i, j]] * 2.0 * kf[[i, j]] / col_sum[j];
        }
    }
    for j in 0..n {
        let d_j: f64 = (0..n)
            .map(|i| grad_t[[i, j]] * kf[[i, j]] * kf[[i, j]])
            .sum::<f64>()
            / (col_sum[j] * col_sum[j]);
        for l in 0..n {
            grad[[l, j]] -= d_j;
        }
    }
    // through Q = K / row_sum
    for i in 0..n {
        let c_i: f64 = (0..n)
            .map(|j| grad_q[[i, j]] * kf[[i, j]] / row_sum[i])
            .sum();
        for j in 0..n {
            grad[[i, j]] += (grad_q[[i, j]] - c_i) / row_sum[i];
        }
    }
    // zero where the floor clamped
    for i in 0..n {
        for j in 0..n {
            if k[[i, j]] < LOG_FLOOR {
                grad[[i, j]] = 0.0;
            }
        }
    }
    (loss, grad)
}

/// Which loss drives the logits fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelObjective {
    Scl { mu: f64 },
    Kl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step: f64,
    pub iterations: usize,
    /// Halve the step within an iteration while the loss would increase.
    pub backtracking: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step: 0.05,
            iterations: 500,
            backtracking: true,
        }
    }
}

/// Outcome of a logits fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub logits: Vec<f64>,
    pub lambda: Vec<f64>,
    pub loss_curve: Vec<f64>,
}

fn objective_grad(
    stack: &KernelStack,
    logits: &[f64],
    objective: KernelObjective,
) -> Result<(f64, Vec<f64>)> {
    let lambda = softmax(logits);
    let n = stack.size();
    let mut k = Array2::<f64>::zeros((n, n));
    for (w, gram) in lambda.iter().zip(&stack.grams) {
        k.scaled_add(*w, gram);
    }
    let (loss, grad_k) = match objective {
        KernelObjective::Scl { mu } => {
            let labels = stack
                .labels
                .as_ref()
                .ok_or_else(|| Error::Input("SCL objective requires labels".into()))?;
            scl_loss_grad(&k, labels, mu)
        }
        KernelObjective::Kl => kl_kernel_loss_grad(&k),
    };
    let grad_lambda: Vec<f64> = stack
        .grams
        .iter()
        .map(|gram| (&grad_k * gram).sum())
        .collect();
    let grad_w = softmax_backward(&lambda, &grad_lambda);
    Ok((loss, grad_w))
}

/// Full-batch gradient descent on the mixing logits. Analytic gradients flow
/// through softmax and the chosen loss; with backtracking enabled the final
/// loss never exceeds the initial one.
pub fn fit_ensemble_weights(
    stack: &KernelStack,
    objective: KernelObjective,
    opt: &OptimizerConfig,
) -> Result<FitReport> {
    for (name, gram) in stack.names.iter().zip(&stack.grams) {
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("gram '{name}' contains non-finite entries")));
        }
    }
    let mut logits = stack.logits.clone();
    let (mut loss, mut grad) = objective_grad(stack, &logits, objective)?;
    if !loss.is_finite() {
        return Err(Error::Input(format!(
            "objective is non-finite at initialization over grams {:?}",
            stack.names
        )));
    }
    let mut curve = vec![loss];
    for _ in 0..opt.iterations {
        let mut step = opt.step;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> = logits
                .iter()
                .zip(&grad)
                .map(|(w, g)| w - step * g)
                .collect();
            let (cand_loss, cand_grad) = objective_grad(stack, &candidate, objective)?;
            if !opt.backtracking || cand_loss <= loss {
                logits = candidate;
                loss = cand_loss;
                grad = cand_grad;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        curve.push(loss);
        if !accepted {
            break; // line search exhausted; we are at numerical convergence
        }
    }
    Ok(FitReport {
        lambda: softmax(&logits),
        logits,
        loss_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{degree_onehot_features, Graph};
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(id: usize, n: usize, edges: &[(usize, usize)]) -> Graph {
        let mut adj = Array2::<u8>::zeros((n, n));
        for &(a, b) in edges {
            adj[[a, b]] = 1;
            adj[[b, a]] = 1;
        }
        let feats = degree_onehot_features(&adj);
        Graph::new(id, adj, feats, None, None).unwrap()
    }

    fn labeled_graph(id: usize, n: usize, edges: &[(usize, usize)], labels: Vec<u32>) -> Graph {
        let mut adj = Array2::<u8>::zeros((n, n));
        for &(a, b) in edges {
            adj[[a, b]] = 1;
            adj[[b, a]] = 1;
        }
        let feats = degree_onehot_features(&adj);
        Graph::new(id, adj, feats, Some(labels), None).unwrap()
    }

    fn random_graph(id: usize, n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        graph(id, n, &edges)
    }

    /// Brute-force walk count: expand every walk of the given length.
    fn brute_force_walks(g: &Graph, len: usize) -> f64 {
        fn extend(g: &Graph, walk: &mut Vec<usize>, remaining: usize, count: &mut u64) {
            if remaining == 0 {
                *count += 1;
                return;
            }
            let last = *walk.last().unwrap();
            for v in g.neighbors(last) {
                walk.push(v);
                extend(g, walk, remaining - 1, count);
                walk.pop();
            }
        }
        let mut count = 0u64;
        for start in 0..g.node_count() {
            let mut walk = vec![start];
            extend(g, &mut walk, len, &mut count);
        }
        count as f64
    }

    #[test]
    fn walk_counts_on_k3_and_edge() {
        let k3 = graph(0, 3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(path_counting_vector(&k3, 2).values, array![6.0, 12.0]);
        let edge = graph(1, 2, &[(0, 1)]);
        assert_eq!(path_counting_vector(&edge, 2).values, array![2.0, 2.0]);
        let empty = graph(2, 3, &[]);
        assert_eq!(path_counting_vector(&empty, 3).values, array![0.0, 0.0, 0.0]);
    }

    #[test]
    fn walk_counts_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let n = rng.gen_range(2..=8);
            let g = random_graph(trial, n, 0.4, &mut rng);
            let v = path_counting_vector(&g, 4);
            for len in 1..=4 {
                assert_eq!(
                    v.values[len - 1],
                    brute_force_walks(&g, len),
                    "trial {trial} len {len}"
                );
            }
        }
    }

    #[test]
    fn wl_subtree_isomorphic_graphs_match() {
        let g1 = labeled_graph(0, 4, &[(0, 1), (1, 2), (2, 3)], vec![0, 1, 1, 0]);
        // same path relabeled in reverse order
        let g2 = labeled_graph(1, 4, &[(3, 2), (2, 1), (1, 0)], vec![0, 1, 1, 0]);
        let vocab = WlVocabulary::fit(&[g1.clone(), g2.clone()], 3);
        assert_eq!(
            wl_subtree_vector(&g1, &vocab).values,
            wl_subtree_vector(&g2, &vocab).values
        );
    }

    #[test]
    fn wl_subtree_separates_k3_from_path3() {
        let k3 = graph(0, 3, &[(0, 1), (1, 2), (0, 2)]);
        let p3 = graph(1, 3, &[(0, 1), (1, 2)]);
        let vocab = WlVocabulary::fit(&[k3.clone(), p3.clone()], 1);
        let a = wl_subtree_vector(&k3, &vocab).values;
        let b = wl_subtree_vector(&p3, &vocab).values;
        assert_ne!(a, b);
    }

    #[test]
    fn wl_subtree_depth_zero_unlabeled_is_single_bucket() {
        let g = graph(0, 5, &[(0, 1), (2, 3)]);
        let vocab = WlVocabulary::fit(&[g.clone()], 0);
        let v = wl_subtree_vector(&g, &vocab);
        assert_eq!(vocab.dim(), 2); // one color + overflow
        assert_eq!(v.values[0], 5.0);
        assert_eq!(v.values[1], 0.0);
    }

    #[test]
    fn wl_subtree_unseen_colors_go_to_overflow() {
        // depth 1 only sees degrees, so K3's nodes share P3's middle color;
        // at depth 2 the neighborhood colors diverge and K3 falls off vocab
        let p3 = graph(0, 3, &[(0, 1), (1, 2)]);
        let vocab = WlVocabulary::fit(&[p3], 2);
        let k3 = graph(1, 3, &[(0, 1), (1, 2), (0, 2)]);
        let v = wl_subtree_vector(&k3, &vocab);
        let overflow = v.values[v.values.len() - 1];
        assert_eq!(overflow, 3.0);
    }

    #[test]
    fn graphlet_counts_on_pinned_graphs() {
        let k3 = graph(0, 3, &[(0, 1), (1, 2), (0, 2)]);
        let v = graphlet_counting_vector(&k3).unwrap();
        assert_eq!(v.values, array![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        let p3 = graph(1, 3, &[(0, 1), (1, 2)]);
        let v = graphlet_counting_vector(&p3).unwrap();
        assert_eq!(v.values[0], 1.0);
        assert_eq!(v.values[1], 0.0);

        let k4 = graph(2, 4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let v = graphlet_counting_vector(&k4).unwrap();
        assert_eq!(v.values[1], 4.0); // triangles
        assert_eq!(v.values[7], 1.0); // k4
        assert_eq!(v.values[6], 0.0); // diamond (induced)
    }

    /// Reference 4-node class adjacency lists, classified by trying all 24
    /// vertex permutations (independent of the degree-sequence logic).
    fn brute_force_graphlets(g: &Graph) -> [f64; 8] {
        let refs4: [(usize, &[(usize, usize)]); 6] = [
            (2, &[(0, 1), (1, 2), (2, 3)]),                          // path4
            (3, &[(0, 1), (0, 2), (0, 3)]),                          // star4
            (4, &[(0, 1), (1, 2), (2, 3), (3, 0)]),                  // cycle4
            (5, &[(0, 1), (1, 2), (2, 0), (2, 3)]),                  // tadpole
            (6, &[(0, 1), (1, 2), (2, 0), (1, 3), (2, 3)]),          // diamond
            (7, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]),  // k4
        ];
        let n = g.node_count();
        let mut counts = [0.0; 8];
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    let tri = [i, j, k];
                    let e: usize = (0..3)
                        .flat_map(|a| ((a + 1)..3).map(move |b| (a, b)))
                        .filter(|&(a, b)| g.has_edge(tri[a], tri[b]))
                        .count();
                    if e == 2 {
                        counts[0] += 1.0;
                    } else if e == 3 {
                        counts[1] += 1.0;
                    }
                }
            }
        }
        let perms4 = permutations(&[0, 1, 2, 3]);
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    for l in (k + 1)..n {
                        let quad = [i, j, k, l];
                        for &(slot, ref_edges) in &refs4 {
                            let matched = perms4.iter().any(|perm| {
                                let maps: Vec<bool> = (0..4)
                                    .flat_map(|a| ((a + 1)..4).map(move |b| (a, b)))
                                    .map(|(a, b)| {
                                        let want = ref_edges.iter().any(|&(x, y)| {
                                            (perm[x], perm[y]) == (a, b)
                                                || (perm[y], perm[x]) == (a, b)
                                        });
                                        want == g.has_edge(quad[a], quad[b])
                                    })
                                    .collect();
                                maps.iter().all(|&ok| ok)
                            });
                            if matched {
                                counts[slot] += 1.0;
                                break;
                            }
                        }
                    }
                }
            }
        }
        counts
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for (i, &head) in items.iter().enumerate() {
            let rest: Vec<usize> = items
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .collect();
            for mut tail in permutations(&rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn graphlet_counts_match_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..40 {
            let n = rng.gen_range(3..=7);
            let g = random_graph(trial, n, 0.45, &mut rng);
            let v = graphlet_counting_vector(&g).unwrap();
            let oracle = brute_force_graphlets(&g);
            for slot in 0..8 {
                assert_eq!(v.values[slot], oracle[slot], "trial {trial} slot {slot}");
            }
        }
    }

    #[test]
    fn graphlet_cap_errors() {
        let g = graph(0, GRAPHLET_NODE_CAP + 1, &[]);
        assert!(matches!(
            graphlet_counting_vector(&g),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn counting_vectors_are_isomorphism_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..50 {
            let n = rng.gen_range(3..=10);
            let g = random_graph(trial, n, 0.35, &mut rng);
            // random relabeling
            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let edges: Vec<(usize, usize)> = g
                .edges()
                .iter()
                .map(|&(a, b)| (perm[a], perm[b]))
                .collect();
            let h = graph(trial + 1000, n, &edges);
            assert_eq!(
                path_counting_vector(&g, 4).values,
                path_counting_vector(&h, 4).values,
                "walks differ on trial {trial}"
            );
            if n <= 7 {
                assert_eq!(
                    graphlet_counting_vector(&g).unwrap().values,
                    graphlet_counting_vector(&h).unwrap().values,
                    "graphlets differ on trial {trial}"
                );
            }
            let vocab = WlVocabulary::fit(&[g.clone(), h.clone()], 3);
            assert_eq!(
                wl_subtree_vector(&g, &vocab).values,
                wl_subtree_vector(&h, &vocab).values,
                "wl histograms differ on trial {trial}"
            );
        }
    }

    #[test]
    fn gram_from_pinned_vectors() {
        let vs = vec![
            CountingVector {
                graph_id: 0,
                kind: PatternKind::Path,
                values: array![1.0, 2.0],
            },
            CountingVector {
                graph_id: 1,
                kind: PatternKind::Path,
                values: array![3.0, 4.0],
            },
        ];
        let k = gram_from_vectors(&vs).unwrap();
        assert_eq!(k, array![[5.0, 11.0], [11.0, 25.0]]);
    }

    #[test]
    fn gram_rejects_dimension_mismatch() {
        let vs = vec![
            CountingVector {
                graph_id: 0,
                kind: PatternKind::Path,
                values: array![1.0, 2.0],
            },
            CountingVector {
                graph_id: 1,
                kind: PatternKind::Path,
                values: array![3.0],
            },
        ];
        assert!(gram_from_vectors(&vs).is_err());
    }

    #[test]
    fn normalize_gram_cases() {
        let k = array![[4.0, 2.0], [2.0, 1.0]];
        let n = normalize_gram(&k);
        for v in n.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let d = array![[2.0, 0.0], [0.0, 3.0]];
        let n = normalize_gram(&d);
        assert_eq!(n, array![[1.0, 0.0], [0.0, 1.0]]);
        // zero diagonal entries are floored, not a panic
        let z = array![[0.0, 0.0], [0.0, 4.0]];
        let n = normalize_gram(&z);
        assert_eq!(n[[0, 0]], 1.0);
    }

    #[test]
    fn ensemble_gram_saturated_and_uniform() {
        let g1 = array![[1.0, 0.5], [0.5, 1.0]];
        let g2 = array![[1.0, -0.25], [-0.25, 1.0]];
        let g3 = array![[1.0, 0.0], [0.0, 1.0]];
        let mut stack = KernelStack::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![g1.clone(), g2, g3],
            None,
        )
        .unwrap();
        stack.logits = vec![30.0, -30.0, -30.0];
        let k = ensemble_gram(&stack);
        for (a, b) in k.iter().zip(g1.iter()) {
            assert!((a - b).abs() < 1e-9);
        }

        let i2 = array![[1.0, 0.0], [0.0, 1.0]];
        let mut stack = KernelStack::new(
            vec!["x".into(), "y".into()],
            vec![i2.clone(), i2.clone()],
            None,
        )
        .unwrap();
        // unit-diagonal constraint forces normalized grams; emulate the
        // 2I/4I example post-normalization equivalent with distinct offdiags
        stack.grams = vec![&i2 * 2.0, &i2 * 4.0];
        stack.logits = vec![0.0, 0.0];
        let k = ensemble_gram(&stack);
        assert_eq!(k, &i2 * 3.0);
    }

    #[test]
    fn scl_loss_pinned_cases() {
        let ones = array![[1.0, 1.0], [1.0, 1.0]];
        assert_eq!(scl_loss(&ones, &[0, 0], 1.0), 0.0);

        let k = array![[1.0, 0.7], [0.7, 1.0]];
        assert_eq!(scl_loss(&k, &[0, 1], 1.0), 0.0); // no same-class pair

        // N=3, labels [0,0,1], K = I + 0.5 (ones - I): independent direct
        // transcription of the loss formula
        let k = array![[1.0, 0.5, 0.5], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0]];
        let labels = [0usize, 0, 1];
        let mu = 1.0;
        let mut expected = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i == j || labels[i] != labels[j] {
                    continue;
                }
                let mut denom = 0.0f64;
                for l in 0..3 {
                    if l != i && labels[l] == labels[i] {
                        denom += k[[i, l]];
                    }
                    if labels[l] != labels[i] {
                        denom += mu * k[[i, l]];
                    }
                }
                expected -= k[[i, j]].ln() - denom.ln();
            }
        }
        let got = scl_loss(&k, &labels, mu);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn kl_loss_pinned_cases() {
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(kl_kernel_loss(&eye).abs() < 1e-8);
        let ones = Array2::<f64>::ones((3, 3));
        assert!(kl_kernel_loss(&ones).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let k = Array2::from_shape_fn((4, 4), |_| rng.gen_range(0.1..2.0));
            let k = (&k + &k.t()) / 2.0;
            assert!(kl_kernel_loss(&k) >= -1e-12);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..10 {
            let n = 5;
            let k = {
                let raw = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.2..1.5));
                let sym = (&raw + &raw.t()) / 2.0;
                sym
            };
            let labels = vec![0usize, 0, 1, 1, 0];
            let (_, grad_scl) = scl_loss_grad(&k, &labels, 0.8);
            let (_, grad_kl) = kl_kernel_loss_grad(&k);
            let h = 1e-6;
            for i in 0..n {
                for j in 0..n {
                    let mut kp = k.clone();
                    let mut km = k.clone();
                    kp[[i, j]] += h;
                    km[[i, j]] -= h;
                    let fd_scl =
                        (scl_loss(&kp, &labels, 0.8) - scl_loss(&km, &labels, 0.8)) / (2.0 * h);
                    let a = grad_scl[[i, j]];
                    assert!(
                        (a - fd_scl).abs() <= 1e-5 * a.abs().max(fd_scl.abs()).max(1.0),
                        "scl trial {trial} ({i},{j}): {a} vs {fd_scl}"
                    );
                    let fd_kl = (kl_kernel_loss(&kp) - kl_kernel_loss(&km)) / (2.0 * h);
                    let a = grad_kl[[i, j]];
                    assert!(
                        (a - fd_kl).abs() <= 1e-5 * a.abs().max(fd_kl.abs()).max(1.0),
                        "kl trial {trial} ({i},{j}): {a} vs {fd_kl}"
                    );
                }
            }
        }
    }

    #[test]
    fn fit_with_zero_step_keeps_logits() {
        let i3 = Array2::<f64>::eye(3);
        let stack = KernelStack::new(
            vec!["a".into(), "b".into()],
            vec![i3.clone(), i3],
            Some(vec![0, 1, 0]),
        )
        .unwrap();
        let report = fit_ensemble_weights(
            &stack,
            KernelObjective::Scl { mu: 1.0 },
            &OptimizerConfig {
                step: 0.0,
                iterations: 25,
                backtracking: false,
            },
        )
        .unwrap();
        assert_eq!(report.logits, vec![0.0, 0.0]);
    }

    #[test]
    fn fit_descends_and_finds_discriminative_kernel() {
        // gram 1: block-constant matching classes; gram 2: all-ones
        let labels = vec![0usize, 0, 0, 1, 1, 1];
        let n = labels.len();
        let eps = 0.05;
        let mut block = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                block[[i, j]] = if labels[i] == labels[j] { 1.0 } else { eps };
            }
        }
        let ones = Array2::<f64>::ones((n, n));
        let stack = KernelStack::new(
            vec!["block".into(), "flat".into()],
            vec![block, ones],
            Some(labels.clone()),
        )
        .unwrap();
        let report =
            fit_ensemble_weights(&stack, KernelObjective::Scl { mu: 1.0 }, &OptimizerConfig::default())
                .unwrap();
        assert!(report.lambda[0] > report.lambda[1], "lambda = {:?}", report.lambda);
        let first = report.loss_curve[0];
        let last = *report.loss_curve.last().unwrap();
        assert!(last <= first + 1e-9);

        // grid-search oracle over the 2-simplex at resolution 0.01: the fit
        // must agree with the oracle on which kernel dominates
        let mut best = (f64::INFINITY, 0.0);
        for step in 0..=100 {
            let lam = step as f64 / 100.0;
            let k = &stack.grams[0] * lam + &stack.grams[1] * (1.0 - lam);
            let loss = scl_loss(&k, &labels, 1.0);
            if loss < best.0 {
                best = (loss, lam);
            }
        }
        assert!(best.1 > 0.5, "oracle should also prefer the block kernel");
        assert!(
            report.lambda[0] >= 0.9,
            "weights should concentrate, got {:?}",
            report.lambda
        );
    }

    #[test]
    fn lambda_argmax_invariant_to_logit_shift() {
        let logits = vec![0.3, -0.2, 1.4];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 5.0).collect();
        let a = softmax(&logits);
        let b = softmax(&shifted);
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&a), argmax(&b));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
