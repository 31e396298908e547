//! Pattern predicates, WL hashing for isomorphism-level dedup, and the
//! per-pattern randomized subgraph samplers.
//!
//! A sample is always an *induced* subgraph of its parent, so a predicate
//! only has to look at the sample's own adjacency. Samplers are restart
//! based: grow a candidate node set, induce, certify with [`is_pattern`],
//! dedup with [`wl_hash`].

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::graph::{induced_subgraph, Graph, Subgraph};
use crate::util::{hash64, hash_words};

/// Largest node count any sampler will produce. Keeps WL dedup with a fixed
/// iteration count stable across everything we sample.
pub const MAX_SAMPLE_NODES: usize = 8;

/// WL refinement rounds used for sample dedup.
pub const WL_DEDUP_ITERATIONS: usize = 3;

/// The seven pattern channels. Ordinal order is fixed: it defines the index
/// of each channel in weight vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternKind {
    Path,
    Tree,
    Graphlet,
    Cycle,
    Clique,
    Wheel,
    Star,
}

impl PatternKind {
    pub const ALL: [PatternKind; 7] = [
        PatternKind::Path,
        PatternKind::Tree,
        PatternKind::Graphlet,
        PatternKind::Cycle,
        PatternKind::Clique,
        PatternKind::Wheel,
        PatternKind::Star,
    ];

    pub fn ordinal(self) -> usize {
        match self {
            PatternKind::Path => 0,
            PatternKind::Tree => 1,
            PatternKind::Graphlet => 2,
            PatternKind::Cycle => 3,
            PatternKind::Clique => 4,
            PatternKind::Wheel => 5,
            PatternKind::Star => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Path => "path",
            PatternKind::Tree => "tree",
            PatternKind::Graphlet => "graphlet",
            PatternKind::Cycle => "cycle",
            PatternKind::Clique => "clique",
            PatternKind::Wheel => "wheel",
            PatternKind::Star => "star",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        PatternKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Structural predicate: does `s` belong to the pattern family?
///
/// Size floors: path/tree/cycle/clique/star need 3 nodes, wheels 4,
/// graphlets are connected subgraphs on 3..=5 nodes. Path, cycle, clique,
/// wheel and star are exact structural matches of the canonical form; trees
/// are connected with |E| = |V| - 1.
pub fn is_pattern(s: &Subgraph, kind: PatternKind) -> bool {
    let n = s.node_count();
    match kind {
        PatternKind::Path => {
            if n < 3 || !s.is_connected() || s.edge_count() != n - 1 {
                return false;
            }
            let degs = s.degrees();
            degs.iter().filter(|&&d| d == 1).count() == 2
                && degs.iter().all(|&d| d == 1 || d == 2)
        }
        PatternKind::Tree => n >= 3 && s.is_connected() && s.edge_count() == n - 1,
        PatternKind::Graphlet => (3..=5).contains(&n) && s.is_connected(),
        PatternKind::Cycle => n >= 3 && s.is_connected() && s.degrees().iter().all(|&d| d == 2),
        PatternKind::Clique => n >= 3 && s.edge_count() == n * (n - 1) / 2,
        PatternKind::Wheel => {
            if n < 4 {
                return false;
            }
            (0..n).any(|hub| s.degree(hub) == n - 1 && rim_is_cycle(s, hub))
        }
        PatternKind::Star => {
            if n < 3 {
                return false;
            }
            (0..n).any(|c| {
                s.degree(c) == n - 1 && (0..n).all(|v| v == c || s.degree(v) == 1)
            })
        }
    }
}

/// Do the non-hub nodes induce a cycle (every rim node has exactly two rim
/// neighbors and the rim is connected)?
fn rim_is_cycle(s: &Subgraph, hub: usize) -> bool {
    let rim: Vec<usize> = (0..s.node_count()).filter(|&v| v != hub).collect();
    if rim.len() < 3 {
        return false;
    }
    for &v in &rim {
        let rim_deg = rim.iter().filter(|&&u| u != v && s.has_edge(v, u)).count();
        if rim_deg != 2 {
            return false;
        }
    }
    // degree-2 everywhere means the rim is a disjoint union of cycles;
    // connectivity pins it to exactly one
    let mut seen = HashSet::from([rim[0]]);
    let mut stack = vec![rim[0]];
    while let Some(v) = stack.pop() {
        for &u in &rim {
            if u != v && s.has_edge(v, u) && seen.insert(u) {
                stack.push(u);
            }
        }
    }
    seen.len() == rim.len()
}

/// 1-WL color refinement over an adjacency matrix. Returns the colors of
/// every node at rounds `0..=iterations`. Initial colors come from discrete
/// node labels when present, otherwise a shared constant; each round a
/// node's color becomes the hash of (own color, sorted neighbor colors).
pub fn wl_color_rounds(
    adjacency: &ndarray::Array2<u8>,
    node_labels: Option<&[u32]>,
    iterations: usize,
) -> Vec<Vec<u64>> {
    let n = adjacency.nrows();
    let initial: Vec<u64> = match node_labels {
        Some(labels) => labels
            .iter()
            .map(|&l| hash64(&(l as u64).to_le_bytes()))
            .collect(),
        None => vec![hash64(b"unlabeled"); n],
    };
    let mut rounds = vec![initial];
    for _ in 0..iterations {
        let colors = rounds.last().unwrap();
        let mut next = Vec::with_capacity(n);
        for v in 0..n {
            let mut neighbor_colors: Vec<u64> = (0..n)
                .filter(|&u| adjacency[[v, u]] == 1)
                .map(|u| colors[u])
                .collect();
            neighbor_colors.sort_unstable();
            let mut words = Vec::with_capacity(neighbor_colors.len() + 1);
            words.push(colors[v]);
            words.extend(neighbor_colors);
            next.push(hash_words(&words));
        }
        rounds.push(next);
    }
    rounds
}

/// 1-WL digest: hash of the final sorted color multiset together with |V|
/// and |E|. Isomorphic subgraphs (including node labels) always collide.
pub fn wl_hash(s: &Subgraph, iterations: usize) -> u64 {
    let rounds = wl_color_rounds(&s.adjacency, s.node_labels.as_deref(), iterations);
    let mut colors = rounds.into_iter().next_back().unwrap();
    colors.sort_unstable();
    colors.push(s.node_count() as u64);
    colors.push(s.edge_count() as u64);
    hash_words(&colors)
}

/// Deduplicated set of pattern samples for one (graph, kind) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternSampleSet {
    pub graph_id: usize,
    pub kind: PatternKind,
    pub samples: Vec<Subgraph>,
    pub wl_hashes: Vec<u64>,
    pub requested_q: usize,
}

impl PatternSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Default attempt budget multiplier: a pattern-free graph costs at most
/// `50 * q` failed grows.
pub const MAX_ATTEMPTS_PER_SAMPLE: usize = 50;

/// Sample up to `q` WL-distinct pattern instances from `g`.
///
/// Deterministic for fixed `(g, kind, q, seed)`. May return fewer than `q`
/// samples, including zero, when the graph runs out of distinct instances
/// or the attempt budget is exhausted.
pub fn sample_pattern_set(
    g: &Graph,
    kind: PatternKind,
    q: usize,
    seed: u64,
    max_attempts: usize,
) -> PatternSampleSet {
    assert!(q >= 1, "q must be >= 1");
    assert!(max_attempts >= q, "max_attempts must be >= q");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut hashes = Vec::new();
    let mut seen = HashSet::new();
    for _ in 0..max_attempts {
        if samples.len() == q {
            break;
        }
        let Some(node_ids) = grow_candidate(g, kind, &mut rng) else {
            continue;
        };
        let sub = induced_subgraph(g, &node_ids).expect("grower returns valid node ids");
        if !is_pattern(&sub, kind) {
            continue;
        }
        let digest = wl_hash(&sub, WL_DEDUP_ITERATIONS);
        if seen.insert(digest) {
            samples.push(sub);
            hashes.push(digest);
        }
    }
    PatternSampleSet {
        graph_id: g.id(),
        kind,
        samples,
        wl_hashes: hashes,
        requested_q: q,
    }
}

/// One randomized grow attempt; `None` means the attempt died early.
fn grow_candidate(g: &Graph, kind: PatternKind, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let n = g.node_count();
    match kind {
        PatternKind::Path => {
            if n < 3 {
                return None;
            }
            let target = rng.gen_range(3..=n.min(MAX_SAMPLE_NODES));
            let mut walk = vec![rng.gen_range(0..n)];
            let mut visited: HashSet<usize> = walk.iter().copied().collect();
            while walk.len() < target {
                let frontier: Vec<usize> = g
                    .neighbors(*walk.last().unwrap())
                    .into_iter()
                    .filter(|v| !visited.contains(v))
                    .collect();
                let &next = frontier.choose(rng)?;
                visited.insert(next);
                walk.push(next);
            }
            Some(walk)
        }
        PatternKind::Tree => {
            if n < 3 {
                return None;
            }
            let target = rng.gen_range(3..=n.min(MAX_SAMPLE_NODES));
            let mut nodes = vec![rng.gen_range(0..n)];
            let mut in_set: HashSet<usize> = nodes.iter().copied().collect();
            while nodes.len() < target {
                let frontier: Vec<usize> = nodes
                    .iter()
                    .flat_map(|&v| g.neighbors(v))
                    .filter(|v| !in_set.contains(v))
                    .collect();
                let &next = frontier.choose(rng)?;
                in_set.insert(next);
                nodes.push(next);
            }
            Some(nodes)
        }
        PatternKind::Graphlet => {
            if n < 3 {
                return None;
            }
            let target = rng.gen_range(3..=5.min(n));
            let mut nodes = vec![rng.gen_range(0..n)];
            let mut in_set: HashSet<usize> = nodes.iter().copied().collect();
            while nodes.len() < target {
                let frontier: Vec<usize> = nodes
                    .iter()
                    .flat_map(|&v| g.neighbors(v))
                    .filter(|v| !in_set.contains(v))
                    .collect();
                let &next = frontier.choose(rng)?;
                in_set.insert(next);
                nodes.push(next);
            }
            Some(nodes)
        }
        PatternKind::Cycle => grow_cycle(g, &(0..n).collect::<Vec<_>>(), rng),
        PatternKind::Clique => {
            let &(u, v) = g.edges().choose(rng)?;
            let mut clique = vec![u, v];
            loop {
                if clique.len() >= MAX_SAMPLE_NODES {
                    break;
                }
                let common: Vec<usize> = (0..n)
                    .filter(|&w| !clique.contains(&w) && clique.iter().all(|&c| g.has_edge(w, c)))
                    .collect();
                match common.choose(rng) {
                    Some(&w) => clique.push(w),
                    None => break,
                }
            }
            if clique.len() >= 3 {
                Some(clique)
            } else {
                None
            }
        }
        PatternKind::Wheel => {
            let hubs: Vec<usize> = (0..n).filter(|&v| g.degree(v) >= 3).collect();
            let &hub = hubs.choose(rng)?;
            let neighborhood = g.neighbors(hub);
            let rim = grow_cycle(g, &neighborhood, rng)?;
            if rim.len() + 1 > MAX_SAMPLE_NODES {
                return None;
            }
            let mut nodes = vec![hub];
            nodes.extend(rim);
            Some(nodes)
        }
        PatternKind::Star => {
            let centers: Vec<usize> = (0..n).filter(|&v| g.degree(v) >= 2).collect();
            let &center = centers.choose(rng)?;
            let mut neighbors = g.neighbors(center);
            neighbors.shuffle(rng);
            let mut leaves: Vec<usize> = Vec::new();
            for v in neighbors {
                if leaves.len() + 1 >= MAX_SAMPLE_NODES {
                    break;
                }
                if leaves.iter().all(|&l| !g.has_edge(v, l)) {
                    leaves.push(v);
                }
            }
            if leaves.len() < 2 {
                return None;
            }
            let mut nodes = vec![center];
            nodes.extend(leaves);
            Some(nodes)
        }
    }
}

/// Randomized DFS over the induced subgraph on `allowed`, returning the node
/// set of the first back-edge cycle of length 3..=MAX_SAMPLE_NODES found.
/// Chords are not checked here; the caller certifies with `is_pattern`.
fn grow_cycle(g: &Graph, allowed: &[usize], rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    if allowed.len() < 3 {
        return None;
    }
    let allowed_set: HashSet<usize> = allowed.iter().copied().collect();
    let &start = allowed.choose(rng)?;
    // iterative DFS with an explicit path stack
    let mut path: Vec<usize> = vec![start];
    let mut on_path: HashSet<usize> = HashSet::from([start]);
    let mut frames: Vec<Vec<usize>> = vec![shuffled_neighbors(g, start, &allowed_set, rng)];
    let mut visited: HashSet<usize> = HashSet::from([start]);
    while let Some(frame) = frames.last_mut() {
        match frame.pop() {
            Some(next) => {
                if on_path.contains(&next) {
                    // back edge: the path suffix starting at `next` closes a cycle,
                    // unless `next` is just the tree parent
                    if path.len() >= 2 && next != path[path.len() - 2] {
                        let pos = path.iter().position(|&v| v == next).unwrap();
                        let cycle: Vec<usize> = path[pos..].to_vec();
                        if cycle.len() >= 3 && cycle.len() <= MAX_SAMPLE_NODES {
                            return Some(cycle);
                        }
                    }
                    continue;
                }
                if visited.contains(&next) {
                    continue;
                }
                visited.insert(next);
                on_path.insert(next);
                path.push(next);
                frames.push(shuffled_neighbors(g, next, &allowed_set, rng));
            }
            None => {
                frames.pop();
                if let Some(done) = path.pop() {
                    on_path.remove(&done);
                }
            }
        }
    }
    None
}

fn shuffled_neighbors(
    g: &Graph,
    v: usize,
    allowed: &HashSet<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut ns: Vec<usize> = g
        .neighbors(v)
        .into_iter()
        .filter(|u| allowed.contains(u))
        .collect();
    ns.shuffle(rng);
    ns
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::degree_onehot_features;
    use ndarray::Array2;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        let mut adj = Array2::<u8>::zeros((n, n));
        for &(a, b) in edges {
            adj[[a, b]] = 1;
            adj[[b, a]] = 1;
        }
        let feats = degree_onehot_features(&adj);
        Graph::new(0, adj, feats, None, None).unwrap()
    }

    fn whole(g: &Graph) -> Subgraph {
        Subgraph::from_whole_graph(g)
    }

    #[test]
    fn triangle_is_cycle_and_clique_not_path() {
        let tri = whole(&graph(3, &[(0, 1), (1, 2), (0, 2)]));
        assert!(is_pattern(&tri, PatternKind::Cycle));
        assert!(is_pattern(&tri, PatternKind::Clique));
        assert!(!is_pattern(&tri, PatternKind::Path));
        assert!(is_pattern(&tri, PatternKind::Graphlet));
    }

    #[test]
    fn star_requires_independent_leaves() {
        let star = whole(&graph(4, &[(0, 1), (0, 2), (0, 3)]));
        assert!(is_pattern(&star, PatternKind::Star));
        let broken = whole(&graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2)]));
        assert!(!is_pattern(&broken, PatternKind::Star));
    }

    #[test]
    fn wheel_recognition() {
        // W4: hub 0, rim triangle 1-2-3 (this is K4)
        let w4 = whole(&graph(
            4,
            &[(0, 1), (0, 2), (0, 3), (1, 2), (2, 3), (1, 3)],
        ));
        assert!(is_pattern(&w4, PatternKind::Wheel));
        // W5: hub 0, rim 4-cycle
        let w5 = whole(&graph(
            5,
            &[(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (2, 3), (3, 4), (1, 4)],
        ));
        assert!(is_pattern(&w5, PatternKind::Wheel));
        // chord on the rim breaks it
        let chorded = whole(&graph(
            5,
            &[
                (0, 1),
                (0, 2),
                (0, 3),
                (0, 4),
                (1, 2),
                (2, 3),
                (3, 4),
                (1, 4),
                (1, 3),
            ],
        ));
        assert!(!is_pattern(&chorded, PatternKind::Wheel));
    }

    #[test]
    fn size_floors() {
        let edge = whole(&graph(2, &[(0, 1)]));
        for kind in PatternKind::ALL {
            assert!(!is_pattern(&edge, kind), "{kind:?} accepted a 2-node graph");
        }
        let p6 = whole(&graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]));
        assert!(is_pattern(&p6, PatternKind::Path));
        assert!(!is_pattern(&p6, PatternKind::Graphlet)); // size 6 > 5
    }

    #[test]
    fn wl_hash_isomorphic_triangles_match() {
        let a = whole(&graph(3, &[(0, 1), (1, 2), (0, 2)]));
        let g2 = graph(4, &[(1, 2), (2, 3), (1, 3)]);
        let b = induced_subgraph(&g2, &[3, 1, 2]).unwrap();
        assert_eq!(wl_hash(&a, 3), wl_hash(&b, 3));
    }

    #[test]
    fn wl_hash_separates_triangle_from_path() {
        let tri = whole(&graph(3, &[(0, 1), (1, 2), (0, 2)]));
        let path = whole(&graph(3, &[(0, 1), (1, 2)]));
        assert_ne!(wl_hash(&tri, 3), wl_hash(&path, 3));
        // even at zero iterations |E| differs
        assert_ne!(wl_hash(&tri, 0), wl_hash(&path, 0));
    }

    #[test]
    fn wl_hash_zero_iterations_uses_label_multiset() {
        // same |V|, |E|, same labels, different wiring: P4 vs star4
        let p4 = whole(&graph(4, &[(0, 1), (1, 2), (2, 3)]));
        let s4 = whole(&graph(4, &[(0, 1), (0, 2), (0, 3)]));
        assert_eq!(wl_hash(&p4, 0), wl_hash(&s4, 0));
        assert_ne!(wl_hash(&p4, 1), wl_hash(&s4, 1));
    }

    #[test]
    fn wl_hash_respects_node_labels() {
        let g1 = {
            let mut adj = Array2::<u8>::zeros((3, 3));
            for &(a, b) in &[(0usize, 1usize), (1, 2), (0, 2)] {
                adj[[a, b]] = 1;
                adj[[b, a]] = 1;
            }
            let feats = degree_onehot_features(&adj);
            Graph::new(0, adj, feats, Some(vec![1, 1, 1]), None).unwrap()
        };
        let g2 = {
            let mut adj = Array2::<u8>::zeros((3, 3));
            for &(a, b) in &[(0usize, 1usize), (1, 2), (0, 2)] {
                adj[[a, b]] = 1;
                adj[[b, a]] = 1;
            }
            let feats = degree_onehot_features(&adj);
            Graph::new(1, adj, feats, Some(vec![1, 1, 2]), None).unwrap()
        };
        let a = Subgraph::from_whole_graph(&g1);
        let b = Subgraph::from_whole_graph(&g2);
        assert_ne!(wl_hash(&a, 0), wl_hash(&b, 0));
    }

    #[test]
    fn sampling_k3_cycles_finds_exactly_one() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let set = sample_pattern_set(&g, PatternKind::Cycle, 10, 42, 500);
        assert_eq!(set.len(), 1);
        assert_eq!(set.samples[0].node_count(), 3);
    }

    #[test]
    fn sampling_k3_wheels_is_empty() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let set = sample_pattern_set(&g, PatternKind::Wheel, 10, 42, 500);
        assert!(set.is_empty());
    }

    #[test]
    fn sampling_path_graph_cliques_is_empty() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let set = sample_pattern_set(&g, PatternKind::Clique, 10, 42, 500);
        assert!(set.is_empty());
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = graph(
            7,
            &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (0, 6), (1, 4), (2, 5)],
        );
        for kind in PatternKind::ALL {
            let a = sample_pattern_set(&g, kind, 5, 99, 250);
            let b = sample_pattern_set(&g, kind, 5, 99, 250);
            let ids_a: Vec<&Vec<usize>> = a.samples.iter().map(|s| &s.node_ids).collect();
            let ids_b: Vec<&Vec<usize>> = b.samples.iter().map(|s| &s.node_ids).collect();
            assert_eq!(ids_a, ids_b, "{kind:?}");
        }
    }

    #[test]
    fn sample_sets_satisfy_type_invariants() {
        let g = graph(
            8,
            &[
                (0, 1),
                (1, 2),
                (2, 3),
                (3, 0),
                (0, 2),
                (4, 5),
                (5, 6),
                (6, 7),
                (4, 7),
                (3, 4),
                (1, 5),
            ],
        );
        for kind in PatternKind::ALL {
            let set = sample_pattern_set(&g, kind, 6, 7, 300);
            assert!(set.len() <= set.requested_q);
            let mut seen = HashSet::new();
            for (s, h) in set.samples.iter().zip(&set.wl_hashes) {
                assert!(is_pattern(s, kind), "{kind:?} emitted a non-pattern");
                assert!(seen.insert(*h), "{kind:?} emitted duplicate WL hash");
                assert!(s.node_count() <= MAX_SAMPLE_NODES);
            }
        }
    }
}
