//! Dataset ingestion and generation: the TUDataset plain-text format,
//! planted-pattern synthetic data, and deterministic stratified splits.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{degree_onehot_features, label_onehot_features, Graph};
use crate::patterns::PatternKind;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    TuDataset { dir: String },
    Synthetic { spec: SynthSpec, seed: u64 },
}

/// A list of graphs sharing one feature space and a contiguous class range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.graphs.iter().map(|g| g.label()).collect()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn parse_int(path: &Path, lineno: usize, token: &str) -> Result<i64> {
    token.trim().parse::<i64>().map_err(|_| Error::Parse {
        file: path.display().to_string(),
        line: lineno,
        msg: format!("expected integer, got '{}'", token.trim()),
    })
}

/// Load a dataset in TUDataset layout from `dir`:
/// `{name}_A.txt` (one directed edge "i, j" per line, 1-based global node
/// ids, symmetrized and deduplicated on load), `{name}_graph_indicator.txt`
/// (graph id per node), and optionally `{name}_graph_labels.txt`,
/// `{name}_node_labels.txt`, `{name}_node_attributes.txt`.
///
/// Graph labels are remapped to `[0, C)` in sorted order. Features are node
/// attributes when present, else one-hot node labels, else one-hot degrees.
pub fn load_tudataset(dir: &Path, name: &str) -> Result<Dataset> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator_path = file("graph_indicator");
    let indicator_lines = read_lines(&indicator_path)?;
    let mut node_graph = Vec::new(); // 0-based graph index per global node
    for (idx, line) in indicator_lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let gid = parse_int(&indicator_path, idx + 1, line)?;
        if gid < 1 {
            return Err(Error::Parse {
                file: indicator_path.display().to_string(),
                line: idx + 1,
                msg: format!("graph ids are 1-based, got {gid}"),
            });
        }
        node_graph.push((gid - 1) as usize);
    }
    let total_nodes = node_graph.len();
    if total_nodes == 0 {
        return Err(Error::Parse {
            file: indicator_path.display().to_string(),
            line: 0,
            msg: "no nodes".into(),
        });
    }
    let num_graphs = node_graph.iter().max().unwrap() + 1;
    // local index of each global node within its graph (file order preserved)
    let mut local_index = vec![0usize; total_nodes];
    let mut graph_sizes = vec![0usize; num_graphs];
    for (node, &gid) in node_graph.iter().enumerate() {
        local_index[node] = graph_sizes[gid];
        graph_sizes[gid] += 1;
    }

    let a_path = file("A");
    let a_lines = read_lines(&a_path)?;
    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    for (idx, line) in a_lines.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut parts = trimmed.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                file: a_path.display().to_string(),
                line: lineno,
                msg: format!("expected 'i, j', got '{trimmed}'"),
            });
        };
        let i = parse_int(&a_path, lineno, a)?;
        let j = parse_int(&a_path, lineno, b)?;
        for v in [i, j] {
            if v < 1 || v as usize > total_nodes {
                return Err(Error::Parse {
                    file: a_path.display().to_string(),
                    line: lineno,
                    msg: format!("node id {v} out of range 1..={total_nodes}"),
                });
            }
        }
        let (i, j) = ((i - 1) as usize, (j - 1) as usize);
        if node_graph[i] != node_graph[j] {
            return Err(Error::Parse {
                file: a_path.display().to_string(),
                line: lineno,
                msg: format!(
                    "edge ({}, {}) crosses graphs {} and {}",
                    i + 1,
                    j + 1,
                    node_graph[i] + 1,
                    node_graph[j] + 1
                ),
            });
        }
        if i == j {
            return Err(Error::Parse {
                file: a_path.display().to_string(),
                line: lineno,
                msg: format!("self-loop at node {}", i + 1),
            });
        }
        let (li, lj) = (local_index[i], local_index[j]);
        edge_sets[node_graph[i]].insert((li.min(lj), li.max(lj)));
    }

    let labels_path = file("graph_labels");
    let graph_labels: Option<Vec<i64>> = if labels_path.exists() {
        let lines = read_lines(&labels_path)?;
        let mut labels = Vec::new();
        for (idx, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            labels.push(parse_int(&labels_path, idx + 1, line)?);
        }
        if labels.len() != num_graphs {
            return Err(Error::Parse {
                file: labels_path.display().to_string(),
                line: 0,
                msg: format!("{} labels for {num_graphs} graphs", labels.len()),
            });
        }
        Some(labels)
    } else {
        None
    };
    let (remapped_labels, num_classes) = match &graph_labels {
        Some(raw) => {
            let classes: Vec<i64> = raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            let mapped: Vec<usize> = raw
                .iter()
                .map(|l| classes.binary_search(l).unwrap())
                .collect();
            (Some(mapped), classes.len())
        }
        None => (None, 0),
    };

    let node_labels_path = file("node_labels");
    let node_labels: Option<Vec<u32>> = if node_labels_path.exists() {
        let lines = read_lines(&node_labels_path)?;
        let mut labels = Vec::new();
        for (idx, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v = parse_int(&node_labels_path, idx + 1, line)?;
            if v < 0 {
                return Err(Error::Parse {
                    file: node_labels_path.display().to_string(),
                    line: idx + 1,
                    msg: format!("negative node label {v}"),
                });
            }
            labels.push(v as u32);
        }
        if labels.len() != total_nodes {
            return Err(Error::Parse {
                file: node_labels_path.display().to_string(),
                line: 0,
                msg: format!("{} node labels for {total_nodes} nodes", labels.len()),
            });
        }
        Some(labels)
    } else {
        None
    };

    let attrs_path = file("node_attributes");
    let node_attributes: Option<Vec<Vec<f64>>> = if attrs_path.exists() {
        let lines = read_lines(&attrs_path)?;
        let mut rows = Vec::new();
        for (idx, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                        file: attrs_path.display().to_string(),
                        line: idx + 1,
                        msg: format!("expected real, got '{}'", tok.trim()),
                    })
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        if rows.len() != total_nodes {
            return Err(Error::Parse {
                file: attrs_path.display().to_string(),
                line: 0,
                msg: format!("{} attribute rows for {total_nodes} nodes", rows.len()),
            });
        }
        Some(rows)
    } else {
        None
    };

    let label_vocab: Vec<u32> = node_labels
        .as_ref()
        .map(|ls| ls.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
        .unwrap_or_default();

    // assemble per-graph node lists in file order
    let mut graph_nodes: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    for (node, &gid) in node_graph.iter().enumerate() {
        graph_nodes[gid].push(node);
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for gid in 0..num_graphs {
        let nodes = &graph_nodes[gid];
        let n = nodes.len();
        let mut adj = Array2::<u8>::zeros((n, n));
        for &(a, b) in &edge_sets[gid] {
            adj[[a, b]] = 1;
            adj[[b, a]] = 1;
        }
        let labels_for_graph: Option<Vec<u32>> = node_labels
            .as_ref()
            .map(|ls| nodes.iter().map(|&v| ls[v]).collect());
        let features = if let Some(attrs) = &node_attributes {
            let dim = attrs[nodes[0]].len();
            let mut f = Array2::<f64>::zeros((n, dim));
            for (local, &global) in nodes.iter().enumerate() {
                if attrs[global].len() != dim {
                    return Err(Error::Parse {
                        file: attrs_path.display().to_string(),
                        line: global + 1,
                        msg: "ragged attribute rows".into(),
                    });
                }
                for (d, v) in attrs[global].iter().enumerate() {
                    f[[local, d]] = *v;
                }
            }
            f
        } else if let Some(labels) = &labels_for_graph {
            label_onehot_features(labels, &label_vocab)
        } else {
            degree_onehot_features(&adj)
        };
        let label = remapped_labels.as_ref().map(|ls| ls[gid]);
        graphs.push(Graph::new(gid, adj, features, labels_for_graph, label)?);
    }

    let feature_dim = graphs[0].feature_dim();
    Ok(Dataset {
        name: name.to_string(),
        graphs,
        num_classes,
        feature_dim,
        provenance: Provenance::TuDataset {
            dir: dir.display().to_string(),
        },
    })
}

/// Write a dataset back out in TUDataset layout (the inverse of
/// [`load_tudataset`] for the variants it supports). Each undirected edge is
/// written in both directions.
pub fn save_tudataset(dataset: &Dataset, dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Input(format!("cannot create {dir:?}: {e}")))?;
    let write = |suffix: &str, content: String| -> Result<()> {
        fs::write(dir.join(format!("{name}_{suffix}.txt")), content)
            .map_err(|e| Error::Input(format!("write failed: {e}")))
    };

    let mut offsets = Vec::with_capacity(dataset.len());
    let mut total = 0usize;
    for g in &dataset.graphs {
        offsets.push(total);
        total += g.node_count();
    }

    let mut a = String::new();
    let mut indicator = String::new();
    for (gi, g) in dataset.graphs.iter().enumerate() {
        for _ in 0..g.node_count() {
            let _ = writeln!(indicator, "{}", gi + 1);
        }
        for &(u, v) in g.edges() {
            let _ = writeln!(a, "{}, {}", offsets[gi] + u + 1, offsets[gi] + v + 1);
            let _ = writeln!(a, "{}, {}", offsets[gi] + v + 1, offsets[gi] + u + 1);
        }
    }
    write("A", a)?;
    write("graph_indicator", indicator)?;

    if dataset.graphs.iter().all(|g| g.label().is_some()) && !dataset.graphs.is_empty() {
        let mut labels = String::new();
        for g in &dataset.graphs {
            let _ = writeln!(labels, "{}", g.label().unwrap());
        }
        write("graph_labels", labels)?;
    }
    if dataset.graphs.iter().all(|g| g.node_labels().is_some()) {
        let mut labels = String::new();
        for g in &dataset.graphs {
            for &l in g.node_labels().unwrap() {
                let _ = writeln!(labels, "{l}");
            }
        }
        write("node_labels", labels)?;
    }
    Ok(())
}

/// Erdős–Rényi graph with one-hot degree features, no labels.
pub fn gnp_graph(id: usize, n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = Array2::<u8>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(p) {
                adj[[i, j]] = 1;
                adj[[j, i]] = 1;
            }
        }
    }
    let features = degree_onehot_features(&adj);
    Graph::new(id, adj, features, None, None).expect("generated adjacency is valid")
}

/// Spec for a two-class planted-pattern dataset: class 0 graphs contain one
/// planted instance of `pattern_a`, class 1 graphs one of `pattern_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub pattern_a: PatternKind,
    pub size_a: usize,
    pub pattern_b: PatternKind,
    pub size_b: usize,
    pub count_a: usize,
    pub count_b: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub edge_prob: f64,
}

impl SynthSpec {
    /// The clique-vs-cycle benchmark: 5-cliques against induced 6-cycles on
    /// sparse base graphs.
    pub fn clique_vs_cycle(count_per_class: usize) -> Self {
        Self {
            pattern_a: PatternKind::Clique,
            size_a: 5,
            pattern_b: PatternKind::Cycle,
            size_b: 6,
            count_a: count_per_class,
            count_b: count_per_class,
            n_min: 12,
            n_max: 20,
            edge_prob: 0.1,
        }
    }
}

/// Generate the planted dataset. Base graphs are sparse G(n, p); the planted
/// node set is chosen among the lowest-degree nodes, its internal edges are
/// rewritten to exactly the canonical pattern edges (cliques only add), and
/// features are degree one-hots. Deterministic per seed.
pub fn synth_pattern_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    if spec.count_a + spec.count_b == 0 {
        return Err(Error::Input("empty dataset: both class counts are zero".into()));
    }
    if spec.n_min < 1 || spec.n_max < spec.n_min {
        return Err(Error::Input("invalid node count range".into()));
    }
    for (kind, size) in [(spec.pattern_a, spec.size_a), (spec.pattern_b, spec.size_b)] {
        let floor = match kind {
            PatternKind::Wheel => 4,
            _ => 3,
        };
        if size < floor {
            return Err(Error::Input(format!(
                "{} needs at least {floor} nodes, got {size}",
                kind.name()
            )));
        }
        if kind == PatternKind::Graphlet && size > 5 {
            return Err(Error::Input("graphlets have at most 5 nodes".into()));
        }
        if size > spec.n_min {
            return Err(Error::Input(format!(
                "pattern size {size} exceeds the smallest base graph ({})",
                spec.n_min
            )));
        }
    }

    // class indices stay contiguous even when one side is empty
    let label_b = if spec.count_a > 0 { 1 } else { 0 };
    let num_classes = (spec.count_a > 0) as usize + (spec.count_b > 0) as usize;
    let mut graphs = Vec::with_capacity(spec.count_a + spec.count_b);
    for idx in 0..(spec.count_a + spec.count_b) {
        let is_class_a = idx < spec.count_a;
        let (kind, size, class) = if is_class_a {
            (spec.pattern_a, spec.size_a, 0)
        } else {
            (spec.pattern_b, spec.size_b, label_b)
        };
        let g_seed = derive_seed(seed, "synth-graph", idx as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(g_seed);
        let n = rng.gen_range(spec.n_min..=spec.n_max);
        let mut adj = Array2::<u8>::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(spec.edge_prob) {
                    adj[[i, j]] = 1;
                    adj[[j, i]] = 1;
                }
            }
        }
        plant_pattern(&mut adj, kind, size, &mut rng);
        let features = degree_onehot_features(&adj);
        graphs.push(Graph::new(idx, adj, features, None, Some(class))?);
    }
    let feature_dim = graphs[0].feature_dim();
    Ok(Dataset {
        name: format!(
            "synth-{}{}-vs-{}{}",
            spec.pattern_a.name(),
            spec.size_a,
            spec.pattern_b.name(),
            spec.size_b
        ),
        graphs,
        num_classes,
        feature_dim,
        provenance: Provenance::Synthetic {
            spec: spec.clone(),
            seed,
        },
    })
}

/// Rewrite the induced edges of a low-degree node subset into an exact
/// pattern instance. Cliques only add edges (completeness is the pattern);
/// every other kind first clears internal edges so the instance is induced.
fn plant_pattern(adj: &mut Array2<u8>, kind: PatternKind, size: usize, rng: &mut ChaCha8Rng) {
    let n = adj.nrows();
    // lowest-degree nodes, ties shuffled
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.sort_by_key(|&v| (0..n).map(|u| adj[[v, u]] as usize).sum::<usize>());
    let chosen: Vec<usize> = order.into_iter().take(size).collect();

    if kind != PatternKind::Clique {
        for a in 0..size {
            for b in (a + 1)..size {
                adj[[chosen[a], chosen[b]]] = 0;
                adj[[chosen[b], chosen[a]]] = 0;
            }
        }
    }
    let mut connect = |a: usize, b: usize| {
        adj[[chosen[a], chosen[b]]] = 1;
        adj[[chosen[b], chosen[a]]] = 1;
    };
    match kind {
        PatternKind::Clique => {
            for a in 0..size {
                for b in (a + 1)..size {
                    connect(a, b);
                }
            }
        }
        PatternKind::Cycle => {
            for a in 0..size {
                connect(a, (a + 1) % size);
            }
        }
        PatternKind::Path => {
            for a in 0..size - 1 {
                connect(a, a + 1);
            }
        }
        PatternKind::Star => {
            for a in 1..size {
                connect(0, a);
            }
        }
        PatternKind::Wheel => {
            for a in 1..size {
                connect(0, a);
            }
            for a in 1..size {
                let next = if a + 1 < size { a + 1 } else { 1 };
                connect(a, next);
            }
        }
        PatternKind::Tree => {
            for a in 1..size {
                let parent = rng.gen_range(0..a);
                connect(a, parent);
            }
        }
        PatternKind::Graphlet => {
            // random connected graph: spanning tree plus coin-flip extras
            for a in 1..size {
                let parent = rng.gen_range(0..a);
                connect(a, parent);
            }
            for a in 0..size {
                for b in (a + 1)..size {
                    if rng.gen_bool(0.3) {
                        connect(a, b);
                    }
                }
            }
        }
    }
}

/// Index partition of a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// False when stratification was requested but had to fall back
    /// (a class with fewer than 3 members) or labels were absent.
    pub stratified: bool,
}

/// Deterministic (seeded) split, stratified by class where labels exist.
/// Validation and test take `floor(ratio * size)` per stratum; rounding
/// leftovers go to train.
pub fn split(ds: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<SplitResult> {
    let (tr, va, te) = ratios;
    if tr <= 0.0 || va <= 0.0 || te <= 0.0 {
        return Err(Error::Input("ratios must be positive".into()));
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "ratios must sum to 1, got {}",
            tr + va + te
        )));
    }
    let n = ds.len();
    if n == 0 {
        return Err(Error::Input("cannot split an empty dataset".into()));
    }
    let labels = ds.labels();
    let strata: Vec<Vec<usize>> = match &labels {
        Some(labels) if ds.num_classes > 0 => {
            let mut strata = vec![Vec::new(); ds.num_classes];
            for (i, &l) in labels.iter().enumerate() {
                strata[l].push(i);
            }
            strata
        }
        _ => vec![(0..n).collect()],
    };
    let can_stratify = labels.is_some() && strata.iter().all(|s| s.len() >= 3);
    let strata = if can_stratify {
        strata
    } else {
        vec![(0..n).collect()]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split", 0));
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for mut stratum in strata {
        stratum.shuffle(&mut rng);
        let s = stratum.len();
        let n_val = (va * s as f64).floor() as usize;
        let n_test = (te * s as f64).floor() as usize;
        val.extend_from_slice(&stratum[0..n_val]);
        test.extend_from_slice(&stratum[n_val..n_val + n_test]);
        train.extend_from_slice(&stratum[n_val + n_test..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitResult {
        train,
        val,
        test,
        stratified: can_stratify,
    })
}
