//! Pattern-ensemble GNN: one GCN encoder per pattern channel over sampled
//! subgraphs, a softmax-weighted ensemble representation, and a dense
//! classifier head, trained jointly with hand-written backprop.
//!
//! Forward for one subgraph: `X⁽ˡ⁾ = σ(U X⁽ˡ⁻¹⁾ W⁽ˡ⁾)` with U the
//! normalized self-connected adjacency, pooled by column means. A channel's
//! representation `z⁽ᵐ⁾` is the mean pooled output over its sample set
//! (zero when the set is empty), and the graph representation is
//! `g = Σ_m softmax(w)_m z⁽ᵐ⁾`. The logits `w` are the explanation.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency, Subgraph};
use crate::kernels::kl_kernel_loss_grad;
use crate::patterns::{sample_pattern_set, PatternKind, PatternSampleSet, MAX_ATTEMPTS_PER_SAMPLE};
use crate::util::{derive_seed, median, softmax, softmax_backward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, preact: f64) -> f64 {
        match self {
            Activation::Relu => {
                if preact > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// Lipschitz constant ρ, used by the bound evaluators.
    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

/// The GCN weight chain for one pattern channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcnStack {
    pub kind: PatternKind,
    pub layer_weights: Vec<Array2<f64>>,
    pub activation: Activation,
}

impl GcnStack {
    pub fn depth(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layer_weights.last().unwrap().ncols()
    }
}

/// One dense layer `h ↦ h W + b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Dense head ending in `C` raw logits; softmax is applied inside the loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classifier {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

impl Classifier {
    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }
}

/// Supervised cross-entropy or unsupervised Gaussian-kernel KL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GnnObjective {
    Supervised,
    Unsupervised,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GnnConfig {
    pub patterns: Vec<PatternKind>,
    pub gcn_layers: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub classifier_layers: usize,
    pub classifier_hidden: usize,
    pub activation: Activation,
    pub objective: GnnObjective,
    /// Subgraph samples requested per (graph, pattern).
    pub q: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Gaussian bandwidth; `None` freezes the median heuristic on the first
    /// batch of the unsupervised objective.
    pub gamma: Option<f64>,
    /// When false, alternate epochs between encoder/classifier updates and
    /// mixing-logit updates instead of joint steps.
    pub joint_optimization: bool,
    pub seed: u64,
}

impl GnnConfig {
    /// Small dims for fast tests and experiments.
    pub fn desk(objective: GnnObjective) -> Self {
        Self {
            patterns: PatternKind::ALL.to_vec(),
            gcn_layers: 2,
            hidden_dim: 32,
            output_dim: 32,
            classifier_layers: 2,
            classifier_hidden: 32,
            activation: Activation::Relu,
            objective,
            q: 10,
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            gamma: None,
            joint_optimization: true,
            seed: 0,
        }
    }

    /// Full protocol: 5 GCN layers and a 3-layer head.
    pub fn paper_protocol(objective: GnnObjective) -> Self {
        Self {
            gcn_layers: 5,
            classifier_layers: 3,
            epochs: 100,
            ..Self::desk(objective)
        }
    }
}

/// The trainable state: per-pattern GCN stacks, mixing logits, classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub stacks: Vec<GcnStack>,
    pub logits: Vec<f64>,
    pub classifier: Classifier,
    pub config: GnnConfig,
    /// Frozen Gaussian bandwidth once resolved.
    pub gamma: Option<f64>,
    /// Identifies the sampling cache this model was trained with.
    pub sampling_cache_key: String,
}

impl EnsembleModel {
    /// Glorot-uniform matrices, zero biases, zero logits (uniform λ), all
    /// drawn from seeds derived off `config.seed`.
    pub fn init(feature_dim: usize, num_classes: usize, config: &GnnConfig) -> Result<Self> {
        if config.patterns.is_empty() {
            return Err(Error::Input("at least one pattern channel required".into()));
        }
        if config.gcn_layers == 0 || config.classifier_layers == 0 {
            return Err(Error::Input("layer counts must be >= 1".into()));
        }
        let mut stacks = Vec::new();
        for (m, &kind) in config.patterns.iter().enumerate() {
            let mut dims = vec![feature_dim];
            for _ in 0..config.gcn_layers.saturating_sub(1) {
                dims.push(config.hidden_dim);
            }
            dims.push(config.output_dim);
            let mut layer_weights = Vec::new();
            for l in 0..config.gcn_layers {
                let seed = derive_seed(config.seed, "init-gcn", (m * 64 + l) as u64);
                layer_weights.push(glorot(dims[l], dims[l + 1], seed));
            }
            stacks.push(GcnStack {
                kind,
                layer_weights,
                activation: config.activation,
            });
        }
        let mut dims = vec![config.output_dim];
        for _ in 0..config.classifier_layers.saturating_sub(1) {
            dims.push(config.classifier_hidden);
        }
        dims.push(num_classes);
        let mut layers = Vec::new();
        for l in 0..config.classifier_layers {
            let seed = derive_seed(config.seed, "init-classifier", l as u64);
            layers.push(DenseLayer {
                weight: glorot(dims[l], dims[l + 1], seed),
                bias: Array1::zeros(dims[l + 1]),
            });
        }
        Ok(Self {
            stacks,
            logits: vec![0.0; config.patterns.len()],
            classifier: Classifier {
                layers,
                activation: config.activation,
            },
            config: config.clone(),
            gamma: config.gamma,
            sampling_cache_key: String::new(),
        })
    }

    pub fn lambda(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn num_patterns(&self) -> usize {
        self.stacks.len()
    }
}

fn glorot(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

/// Everything the backward pass needs from one subgraph forward.
#[derive(Debug, Clone)]
pub struct GcnForwardCache {
    pub operator: Array2<f64>,
    /// layer inputs X⁽⁰⁾..X⁽ᴸ⁻¹⁾
    pub inputs: Vec<Array2<f64>>,
    /// pre-activations Z⁽¹⁾..Z⁽ᴸ⁾
    pub preacts: Vec<Array2<f64>>,
    pub output: Array2<f64>,
    pub pooled: Array1<f64>,
}

/// GCN forward over one subgraph, keeping intermediates for backprop.
pub fn gcn_forward(s: &Subgraph, stack: &GcnStack) -> Result<GcnForwardCache> {
    if s.features.ncols() != stack.input_dim() {
        return Err(Error::Input(format!(
            "feature dim {} does not match stack input dim {}",
            s.features.ncols(),
            stack.input_dim()
        )));
    }
    let operator = normalized_adjacency(&s.adjacency);
    let mut x = s.features.clone();
    let mut inputs = Vec::with_capacity(stack.depth());
    let mut preacts = Vec::with_capacity(stack.depth());
    for w in &stack.layer_weights {
        inputs.push(x.clone());
        let z = operator.dot(&x).dot(w);
        x = z.mapv(|v| stack.activation.apply(v));
        preacts.push(z);
    }
    let n = s.node_count() as f64;
    let pooled = x.t().dot(&Array1::from_elem(s.node_count(), 1.0 / n));
    Ok(GcnForwardCache {
        operator,
        inputs,
        preacts,
        output: x,
        pooled,
    })
}

/// Mean pooled encoding over a sample set; the zero vector for empty sets.
pub fn pattern_representation(set: &PatternSampleSet, stack: &GcnStack) -> Result<Array1<f64>> {
    if set.kind != stack.kind {
        return Err(Error::Input(format!(
            "sample set kind {:?} does not match stack kind {:?}",
            set.kind, stack.kind
        )));
    }
    let mut z = Array1::<f64>::zeros(stack.output_dim());
    if set.is_empty() {
        return Ok(z);
    }
    for s in &set.samples {
        z += &gcn_forward(s, stack)?.pooled;
    }
    Ok(z / set.len() as f64)
}

/// `g = Σ_m softmax(w)_m z⁽ᵐ⁾`.
pub fn ensemble_representation(z_list: &[Array1<f64>], logits: &[f64]) -> Array1<f64> {
    assert_eq!(z_list.len(), logits.len());
    let lambda = softmax(logits);
    let mut g = Array1::<f64>::zeros(z_list[0].len());
    for (w, z) in lambda.iter().zip(z_list) {
        g.scaled_add(*w, z);
    }
    g
}

/// Per-graph encoding with its channel decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphEncoding {
    pub graph_id: usize,
    pub z: Vec<Array1<f64>>,
    pub g: Array1<f64>,
    pub sample_counts: Vec<usize>,
}

/// Forward caches for one graph across all channels.
pub struct EncodingCache {
    pub encoding: GraphEncoding,
    pub per_channel: Vec<Vec<GcnForwardCache>>,
}

/// Encode one graph given its precomputed sample sets (one per channel, in
/// model channel order).
pub fn encode_with_cache(
    model: &EnsembleModel,
    sets: &[PatternSampleSet],
) -> Result<EncodingCache> {
    if sets.len() != model.num_patterns() {
        return Err(Error::Input("one sample set per channel required".into()));
    }
    let mut z_list = Vec::with_capacity(sets.len());
    let mut caches = Vec::with_capacity(sets.len());
    let mut counts = Vec::with_capacity(sets.len());
    for (set, stack) in sets.iter().zip(&model.stacks) {
        if set.kind != stack.kind {
            return Err(Error::Input(format!(
                "sample set kind {:?} does not match stack kind {:?}",
                set.kind, stack.kind
            )));
        }
        let mut channel_caches = Vec::with_capacity(set.len());
        let mut z = Array1::<f64>::zeros(stack.output_dim());
        for s in &set.samples {
            let cache = gcn_forward(s, stack)?;
            z += &cache.pooled;
            channel_caches.push(cache);
        }
        if !set.is_empty() {
            z /= set.len() as f64;
        }
        counts.push(set.len());
        z_list.push(z);
        caches.push(channel_caches);
    }
    let g = ensemble_representation(&z_list, &model.logits);
    let graph_id = sets.first().map(|s| s.graph_id).unwrap_or(0);
    Ok(EncodingCache {
        encoding: GraphEncoding {
            graph_id,
            z: z_list,
            g,
            sample_counts: counts,
        },
        per_channel: caches,
    })
}

pub fn encode_graph(model: &EnsembleModel, sets: &[PatternSampleSet]) -> Result<GraphEncoding> {
    Ok(encode_with_cache(model, sets)?.encoding)
}

/// Classifier forward keeping pre-activations.
struct ClassifierCache {
    inputs: Vec<Array1<f64>>,
    preacts: Vec<Array1<f64>>,
    logits: Array1<f64>,
}

fn classifier_forward(classifier: &Classifier, g: &Array1<f64>) -> ClassifierCache {
    let mut h = g.clone();
    let mut inputs = Vec::new();
    let mut preacts = Vec::new();
    let last = classifier.layers.len() - 1;
    for (idx, layer) in classifier.layers.iter().enumerate() {
        inputs.push(h.clone());
        let z = h.dot(&layer.weight) + &layer.bias;
        h = if idx < last {
            z.mapv(|v| classifier.activation.apply(v))
        } else {
            z.clone()
        };
        preacts.push(z);
    }
    ClassifierCache {
        inputs,
        preacts,
        logits: h,
    }
}

/// Raw class scores for a graph representation.
pub fn classifier_logits(classifier: &Classifier, g: &Array1<f64>) -> Array1<f64> {
    classifier_forward(classifier, g).logits
}

/// Cross-entropy of `softmax(classifier(g))` against a class index.
/// Returns the loss together with gradients for the classifier parameters
/// and for `g`.
pub fn ce_loss(
    g: &Array1<f64>,
    label: usize,
    classifier: &Classifier,
) -> (f64, Vec<(Array2<f64>, Array1<f64>)>, Array1<f64>) {
    let cache = classifier_forward(classifier, g);
    let probs = softmax(cache.logits.as_slice().unwrap());
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
    let mut delta = Array1::from_vec(probs);
    delta[label] -= 1.0;
    let (grads, grad_g) = classifier_backward(classifier, &cache, delta);
    (loss, grads, grad_g)
}

fn classifier_backward(
    classifier: &Classifier,
    cache: &ClassifierCache,
    mut delta: Array1<f64>,
) -> (Vec<(Array2<f64>, Array1<f64>)>, Array1<f64>) {
    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(classifier.layers.len());
    for idx in (0..classifier.layers.len()).rev() {
        if idx < classifier.layers.len() - 1 {
            let z = &cache.preacts[idx];
            delta = &delta * &z.mapv(|v| classifier.activation.derivative(v));
        }
        let input = &cache.inputs[idx];
        let grad_w = outer(input, &delta);
        let grad_b = delta.clone();
        delta = classifier.layers[idx].weight.dot(&delta);
        grads.push((grad_w, grad_b));
    }
    grads.reverse();
    (grads, delta)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[[i, j]] = a[i] * b[j];
        }
    }
    out
}

/// Gaussian-kernel KL loss over a batch of representations:
/// `K_ij = exp(-‖g_i - g_j‖²/γ)` fed through the kernel KL objective.
/// Returns the loss and `dL/dg_i` for every i.
pub fn gaussian_kl_loss(encodings: &[Array1<f64>], gamma: f64) -> (f64, Vec<Array1<f64>>) {
    assert!(encodings.len() >= 2, "need a batch of at least 2");
    assert!(gamma > 0.0, "gamma must be positive");
    let n = encodings.len();
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let d = &encodings[i] - &encodings[j];
            k[[i, j]] = (-d.dot(&d) / gamma).exp();
        }
    }
    let (loss, grad_k) = kl_kernel_loss_grad(&k);
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let mut dg = Array1::<f64>::zeros(encodings[0].len());
        for j in 0..n {
            if i == j {
                continue;
            }
            let coeff = (grad_k[[i, j]] + grad_k[[j, i]]) * k[[i, j]] * (-2.0 / gamma);
            let diff = &encodings[i] - &encodings[j];
            dg.scaled_add(coeff, &diff);
        }
        grads.push(dg);
    }
    (loss, grads)
}

/// Gradient holder mirroring the model parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub stacks: Vec<Vec<Array2<f64>>>,
    pub logits: Vec<f64>,
    pub classifier: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &EnsembleModel) -> Self {
        Self {
            stacks: model
                .stacks
                .iter()
                .map(|s| {
                    s.layer_weights
                        .iter()
                        .map(|w| Array2::zeros(w.dim()))
                        .collect()
                })
                .collect(),
            logits: vec![0.0; model.logits.len()],
            classifier: model
                .classifier
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (m, stack) in self.stacks.iter().enumerate() {
            for (l, w) in stack.iter().enumerate() {
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient at stack {m} layer {l}"
                    )));
                }
            }
        }
        if self.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gradient at mixing logits".into()));
        }
        for (l, (w, b)) in self.classifier.iter().enumerate() {
            if w.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at classifier layer {l}"
                )));
            }
        }
        Ok(())
    }
}

/// Backprop `dL/dg` of one graph through λ-mixing, sample averaging,
/// pooling, and every GCN layer, accumulating into `grads`. The channel
/// contribution to `dL/dλ` lands in `grad_lambda`; the caller chains it
/// through softmax once the batch is assembled.
fn backward_graph(
    model: &EnsembleModel,
    cache: &EncodingCache,
    grad_g: &Array1<f64>,
    grads: &mut Gradients,
    grad_lambda: &mut [f64],
) {
    let lambda = model.lambda();
    for m in 0..model.num_patterns() {
        grad_lambda[m] += grad_g.dot(&cache.encoding.z[m]);
        let channel_caches = &cache.per_channel[m];
        if channel_caches.is_empty() {
            continue;
        }
        let stack = &model.stacks[m];
        let grad_z = grad_g * lambda[m];
        let grad_pooled = &grad_z / channel_caches.len() as f64;
        for fc in channel_caches {
            // pooled = (1/n) 1ᵀ X⁽ᴸ⁾  ⇒  every row of dX⁽ᴸ⁾ is grad_pooled/n
            let n = fc.output.nrows();
            let mut grad_x = Array2::<f64>::zeros(fc.output.dim());
            let per_row = &grad_pooled / n as f64;
            for r in 0..n {
                let mut row = grad_x.row_mut(r);
                row += &per_row;
            }
            for l in (0..stack.depth()).rev() {
                let dz = &grad_x * &fc.preacts[l].mapv(|v| stack.activation.derivative(v));
                let ux = fc.operator.dot(&fc.inputs[l]);
                grads.stacks[m][l] += &ux.t().dot(&dz);
                if l > 0 {
                    // U symmetric: dX⁽ˡ⁻¹⁾ = U dZ Wᵀ
                    grad_x = fc.operator.dot(&dz.dot(&stack.layer_weights[l].t()));
                }
            }
        }
    }
}

/// Exact reverse-mode gradients of the configured objective over a batch of
/// encoded graphs. Supervised loss is the batch mean of per-graph
/// cross-entropies; unsupervised loss is the batch Gaussian-kernel KL.
pub fn backward(
    model: &EnsembleModel,
    batch: &[(&EncodingCache, Option<usize>)],
    gamma: Option<f64>,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let mut grads = Gradients::zeros_like(model);
    let mut grad_lambda = vec![0.0; model.num_patterns()];
    let mut total_loss = 0.0;
    match model.config.objective {
        GnnObjective::Supervised => {
            let scale = 1.0 / batch.len() as f64;
            for (cache, label) in batch {
                let label = label
                    .ok_or_else(|| Error::Input("supervised objective requires labels".into()))?;
                let (loss, class_grads, grad_g) =
                    ce_loss(&cache.encoding.g, label, &model.classifier);
                total_loss += loss * scale;
                for ((w, b), (gw, gb)) in grads.classifier.iter_mut().zip(&class_grads) {
                    w.scaled_add(scale, gw);
                    b.scaled_add(scale, gb);
                }
                let grad_g = grad_g * scale;
                backward_graph(model, cache, &grad_g, &mut grads, &mut grad_lambda);
            }
        }
        GnnObjective::Unsupervised => {
            let gamma = gamma.ok_or_else(|| Error::Input("gamma required".into()))?;
            let encodings: Vec<Array1<f64>> =
                batch.iter().map(|(c, _)| c.encoding.g.clone()).collect();
            let (loss, grad_gs) = gaussian_kl_loss(&encodings, gamma);
            total_loss = loss;
            for ((cache, _), grad_g) in batch.iter().zip(&grad_gs) {
                backward_graph(model, cache, grad_g, &mut grads, &mut grad_lambda);
            }
        }
    }
    grads.logits = softmax_backward(&model.lambda(), &grad_lambda);
    grads.assert_finite()?;
    Ok((total_loss, grads))
}

/// Sample sets for every (graph, channel) pair of a dataset, plus the key
/// identifying how they were drawn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleCache {
    pub key: String,
    pub q: usize,
    pub seed: u64,
    /// `sets[graph_index][channel_index]`
    pub sets: Vec<Vec<PatternSampleSet>>,
}

/// Draw sample sets for the whole dataset. Per-graph seeds derive from
/// `(seed, kind, graph id)`, so results are independent of scheduling.
pub fn sample_dataset(
    dataset: &Dataset,
    patterns: &[PatternKind],
    q: usize,
    seed: u64,
) -> SampleCache {
    let sets: Vec<Vec<PatternSampleSet>> = dataset
        .graphs
        .par_iter()
        .map(|g| {
            patterns
                .iter()
                .map(|&kind| {
                    let s = derive_seed(seed, kind.name(), g.id() as u64);
                    sample_pattern_set(g, kind, q, s, MAX_ATTEMPTS_PER_SAMPLE * q)
                })
                .collect()
        })
        .collect();
    let names: Vec<&str> = patterns.iter().map(|k| k.name()).collect();
    SampleCache {
        key: format!("seed={seed},q={q},patterns={}", names.join("+")),
        q,
        seed,
        sets,
    }
}

/// Training history and the final explanation weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Sample, initialize, and train a model. Deterministic per
/// `(dataset, config, indices)`.
pub fn train(
    dataset: &Dataset,
    config: &GnnConfig,
    indices: Option<&[usize]>,
) -> Result<(EnsembleModel, SampleCache, TrainReport)> {
    if dataset.graphs.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let cache = sample_dataset(dataset, &config.patterns, config.q, config.seed);
    let mut model = EnsembleModel::init(dataset.feature_dim, dataset.num_classes.max(2), config)?;
    model.sampling_cache_key = cache.key.clone();
    let report = train_with_cache(dataset, &cache, &mut model, indices)?;
    Ok((model, cache, report))
}

/// Minibatch gradient descent with momentum against precomputed samples.
/// Gradients of a batch are accumulated in ascending graph-index order, so
/// the result does not depend on scheduling.
pub fn train_with_cache(
    dataset: &Dataset,
    cache: &SampleCache,
    model: &mut EnsembleModel,
    indices: Option<&[usize]>,
) -> Result<TrainReport> {
    let config = model.config.clone();
    let all_indices: Vec<usize> = match indices {
        Some(idx) => idx.to_vec(),
        None => (0..dataset.graphs.len()).collect(),
    };
    if all_indices.is_empty() {
        return Err(Error::Input("no training indices".into()));
    }
    if config.objective == GnnObjective::Supervised
        && all_indices
            .iter()
            .any(|&i| dataset.graphs[i].label().is_none())
    {
        return Err(Error::Input("supervised training requires labels".into()));
    }

    let mut velocity = Gradients::zeros_like(model);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order = all_indices;

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "epoch", epoch as u64));
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        let batch_len = config.batch_size.clamp(1, order.len());
        for batch_idx in order.chunks(batch_len) {
            if config.objective == GnnObjective::Unsupervised && batch_idx.len() < 2 {
                continue; // the pairwise kernel needs at least two graphs
            }
            let caches: Vec<EncodingCache> = batch_idx
                .par_iter()
                .map(|&i| encode_with_cache(model, &cache.sets[i]))
                .collect::<Result<Vec<_>>>()?;
            if model.gamma.is_none() && config.objective == GnnObjective::Unsupervised {
                model.gamma = Some(median_bandwidth(&caches));
            }
            let batch: Vec<(&EncodingCache, Option<usize>)> = caches
                .iter()
                .zip(batch_idx)
                .map(|(c, &i)| (c, dataset.graphs[i].label()))
                .collect();
            let (loss, mut grads) = backward(model, &batch, model.gamma)?;
            if !config.joint_optimization {
                // alternate: even epochs move encoders/classifier, odd move logits
                if epoch % 2 == 0 {
                    grads.logits.iter_mut().for_each(|g| *g = 0.0);
                } else {
                    grads.stacks.iter_mut().flatten().for_each(|w| *w *= 0.0);
                    grads.classifier.iter_mut().for_each(|(w, b)| {
                        *w *= 0.0;
                        *b *= 0.0;
                    });
                }
            }
            apply_momentum_step(model, &mut velocity, &grads, config.learning_rate, config.momentum);
            epoch_loss += loss * batch_idx.len() as f64;
            seen += batch_idx.len();
        }
        epoch_losses.push(if seen > 0 { epoch_loss / seen as f64 } else { 0.0 });
    }
    Ok(TrainReport {
        epoch_losses,
        lambda: model.lambda(),
    })
}

fn median_bandwidth(caches: &[EncodingCache]) -> f64 {
    let mut dists = Vec::new();
    for i in 0..caches.len() {
        for j in (i + 1)..caches.len() {
            let d = &caches[i].encoding.g - &caches[j].encoding.g;
            dists.push(d.dot(&d));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    median(&dists).max(1e-9)
}

fn apply_momentum_step(
    model: &mut EnsembleModel,
    velocity: &mut Gradients,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
) {
    for (vs, gs) in velocity.stacks.iter_mut().zip(&grads.stacks) {
        for (v, g) in vs.iter_mut().zip(gs) {
            *v *= momentum;
            v.scaled_add(-lr, g);
        }
    }
    for (v, g) in velocity.logits.iter_mut().zip(&grads.logits) {
        *v = momentum * *v - lr * g;
    }
    for ((vw, vb), (gw, gb)) in velocity.classifier.iter_mut().zip(&grads.classifier) {
        *vw *= momentum;
        vw.scaled_add(-lr, gw);
        *vb *= momentum;
        vb.scaled_add(-lr, gb);
    }
    for (ws, vs) in model.stacks.iter_mut().zip(&velocity.stacks) {
        for (w, v) in ws.layer_weights.iter_mut().zip(vs) {
            *w += v;
        }
    }
    for (w, v) in model.logits.iter_mut().zip(&velocity.logits) {
        *w += v;
    }
    for (layer, (vw, vb)) in model.classifier.layers.iter_mut().zip(&velocity.classifier) {
        layer.weight += vw;
        layer.bias += vb;
    }
}

/// One line of the ranked explanation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainEntry {
    pub pattern: String,
    pub lambda: f64,
    pub mean_samples: f64,
    pub total_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainReport {
    pub entries: Vec<ExplainEntry>,
}

/// Rank channels by weight, descending; ties break by channel ordinal so the
/// output is stable. Sample statistics come from the cache the model was
/// trained with.
pub fn explain(model: &EnsembleModel, cache: &SampleCache) -> ExplainReport {
    let lambda = model.lambda();
    let mut entries: Vec<(usize, ExplainEntry)> = model
        .config
        .patterns
        .iter()
        .enumerate()
        .map(|(m, kind)| {
            let total: usize = cache.sets.iter().map(|per_graph| per_graph[m].len()).sum();
            let mean = if cache.sets.is_empty() {
                0.0
            } else {
                total as f64 / cache.sets.len() as f64
            };
            (
                kind.ordinal(),
                ExplainEntry {
                    pattern: kind.name().to_string(),
                    lambda: lambda[m],
                    mean_samples: mean,
                    total_samples: total,
                },
            )
        })
        .collect();
    entries.sort_by(|(ord_a, a), (ord_b, b)| {
        b.lambda
            .partial_cmp(&a.lambda)
            .unwrap()
            .then(ord_a.cmp(ord_b))
    });
    ExplainReport {
        entries: entries.into_iter().map(|(_, e)| e).collect(),
    }
}
