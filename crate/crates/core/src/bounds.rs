//! Robustness and stability bound evaluators, plus an empirical harness
//! that perturbs graphs and checks the robustness bound dominates the
//! measured representation shift.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, Graph};
use crate::linalg::{frobenius_norm, spectral_norm};
use crate::patterns::PatternSampleSet;
use crate::util::derive_seed;

/// Constants feeding the robustness bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Spectral-norm bound of A.
    pub beta_a: f64,
    /// Frobenius bound of X.
    pub beta_x: f64,
    /// Max spectral norm over all layer weights.
    pub beta_w: f64,
    /// Minimum node degree.
    pub alpha: f64,
    /// min(1ᵀ Δ_A): the weakest row-sum of the adjacency perturbation.
    /// Reported by [`perturb`]; the closed-form bound does not consume it.
    pub kappa: f64,
    /// Activation Lipschitz constant.
    pub rho: f64,
    /// Classifier Lipschitz constant.
    pub tau: f64,
    pub layers: usize,
    pub n: usize,
    pub delta_a_norm: f64,
    pub delta_x_norm: f64,
    pub delta_d_norm: f64,
}

/// Constants feeding the stability constant η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityInputs {
    pub beta_hat_w: f64,
    pub beta_hat_dw: f64,
    pub gamma_c: f64,
    pub gamma_dc: f64,
    pub lambda_diff_norm: f64,
    pub lambda_norm: f64,
    pub rho: f64,
    pub tau: f64,
    pub layers: usize,
    pub n: usize,
    pub beta_a: f64,
    pub beta_x: f64,
    pub alpha: f64,
}

/// A perturbed graph together with the exact perturbation norms.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub graph: Graph,
    pub delta_a_norm: f64,
    pub delta_x_norm: f64,
    pub delta_d_norm: f64,
    pub kappa: f64,
}

/// Flip `edge_flips` uniformly chosen node pairs (without replacement) and
/// add i.i.d. uniform `[-feature_noise, feature_noise]` noise to features.
///
/// Degree distortion is measured as `Δ_D = I - D̂'^{1/2} D̂^{-1/2}` over the
/// self-connected degrees, which vanishes exactly under zero perturbation.
pub fn perturb(g: &Graph, edge_flips: usize, feature_noise: f64, seed: u64) -> Result<Perturbation> {
    let n = g.node_count();
    let max_pairs = n * (n - 1) / 2;
    if edge_flips > max_pairs {
        return Err(Error::Input(format!(
            "cannot flip {edge_flips} pairs on a graph with {max_pairs} pairs"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(&mut rng);

    let mut adj = g.adjacency().clone();
    let mut delta_a = Array2::<f64>::zeros((n, n));
    for &(i, j) in pairs.iter().take(edge_flips) {
        let flipped = 1 - adj[[i, j]];
        let change = flipped as f64 - adj[[i, j]] as f64;
        adj[[i, j]] = flipped;
        adj[[j, i]] = flipped;
        delta_a[[i, j]] = change;
        delta_a[[j, i]] = change;
    }

    let mut features = g.features().clone();
    let mut delta_x = Array2::<f64>::zeros(features.dim());
    if feature_noise > 0.0 {
        for v in delta_x.iter_mut() {
            *v = rng.gen_range(-feature_noise..=feature_noise);
        }
        features += &delta_x;
    }

    // Δ_D is diagonal over self-connected degrees d̂ = 1 + deg, so its
    // spectral norm is the largest |1 - sqrt(d̂'/d̂)|
    let mut delta_d_norm = 0.0f64;
    for i in 0..n {
        let d_hat: f64 = 1.0 + g.degree(i) as f64;
        let d_hat_new: f64 = 1.0 + (0..n).map(|j| adj[[i, j]] as f64).sum::<f64>();
        delta_d_norm = delta_d_norm.max((1.0 - (d_hat_new / d_hat).sqrt()).abs());
    }

    let kappa = (0..n)
        .map(|i| delta_a.row(i).sum())
        .fold(f64::INFINITY, f64::min);

    let perturbed = Graph::new(
        g.id(),
        adj,
        features,
        g.node_labels().map(|l| l.to_vec()),
        g.label(),
    )?;
    Ok(Perturbation {
        graph: perturbed,
        delta_a_norm: spectral_norm(&delta_a),
        delta_x_norm: frobenius_norm(&delta_x),
        delta_d_norm,
        kappa,
    })
}

/// Closed-form robustness bound on `‖g̃ - g‖`:
///
/// `(1/√n) ρᴸ β_Wᴸ (1+β_A+‖Δ_A‖)^{L-1} (1+α)^{-L}
///  · [(1+β_A+2‖Δ_A‖)‖Δ_X‖_F + 2L β_X (1+β_A) ‖Δ_D‖]`.
pub fn robustness_bound(inputs: &BoundInputs) -> f64 {
    let l = inputs.layers as f64;
    let prefix = (inputs.n as f64).sqrt().recip()
        * inputs.rho.powf(l)
        * inputs.beta_w.powf(l)
        * (1.0 + inputs.beta_a + inputs.delta_a_norm).powf(l - 1.0)
        * (1.0 + inputs.alpha).powf(-l);
    let bracket = (1.0 + inputs.beta_a + 2.0 * inputs.delta_a_norm) * inputs.delta_x_norm
        + 2.0 * l * inputs.beta_x * (1.0 + inputs.beta_a) * inputs.delta_d_norm;
    prefix * bracket
}

/// Which form of the stability bracket to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtaMode {
    /// Worst-case constants: `γ_C (2 β̂_W + L β̂_ΔW)`.
    MainText,
    /// Measured λ shift: `γ_C (β̂_W ‖λ - λ'‖ + L β̂_ΔW ‖λ'‖)`.
    Appendix,
}

/// Uniform-stability constant η:
/// `(τ/√n) ρᴸ β̂_W^{L-1} β_X (1+β_A)ᴸ (1+α)^{-L} · [β̂_W γ_ΔC + bracket]`.
pub fn stability_eta(inputs: &StabilityInputs, mode: EtaMode) -> f64 {
    let l = inputs.layers as f64;
    let prefix = inputs.tau / (inputs.n as f64).sqrt()
        * inputs.rho.powf(l)
        * inputs.beta_hat_w.powf(l - 1.0)
        * inputs.beta_x
        * (1.0 + inputs.beta_a).powf(l)
        * (1.0 + inputs.alpha).powf(-l);
    let lambda_terms = match mode {
        EtaMode::MainText => 2.0 * inputs.beta_hat_w + l * inputs.beta_hat_dw,
        EtaMode::Appendix => {
            inputs.beta_hat_w * inputs.lambda_diff_norm + l * inputs.beta_hat_dw * inputs.lambda_norm
        }
    };
    prefix * (inputs.beta_hat_w * inputs.gamma_dc + inputs.gamma_c * lambda_terms)
}

/// High-probability generalization bound:
/// `c (η log(N) log(N/δ) + sqrt(log(1/δ)/N))`, natural logs.
pub fn generalization_bound(eta: f64, n_graphs: usize, c: f64, delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(Error::Input(format!("delta must be in (0,1), got {delta}")));
    }
    if n_graphs < 2 {
        return Err(Error::Input("need at least 2 graphs".into()));
    }
    if c <= 0.0 {
        return Err(Error::Input("c must be positive".into()));
    }
    let n = n_graphs as f64;
    Ok(c * (eta * n.ln() * (n / delta).ln() + ((1.0 / delta).ln() / n).sqrt()))
}

/// One perturbation trial: the measured shift and the bound that must
/// dominate it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominanceTrial {
    pub trial: usize,
    pub measured: f64,
    pub bound: f64,
    pub delta_a_norm: f64,
    pub delta_x_norm: f64,
    pub delta_d_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominanceReport {
    pub trials: Vec<DominanceTrial>,
    pub violations: usize,
    /// max measured/bound over trials with a positive bound.
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub edge_flips: usize,
    pub feature_noise: f64,
}

/// Run `trials` seeded perturbations of `g`, re-encode with the *same*
/// sample node-id lists, and compare the measured `‖g̃ - g‖` against the
/// bound evaluated with measured norms and the model's actual parameter
/// norms. `n` in the bound is the smallest encoded node set, matching the
/// per-sample pooling factor.
pub fn bound_dominance_trial(
    model: &crate::gnn::EnsembleModel,
    g: &Graph,
    sets: &[PatternSampleSet],
    cfg: &PerturbConfig,
    trials: usize,
    seed: u64,
) -> Result<DominanceReport> {
    let rho = model.config.activation.lipschitz();
    let layers = model.config.gcn_layers;
    let beta_w = model
        .stacks
        .iter()
        .flat_map(|s| s.layer_weights.iter())
        .map(spectral_norm)
        .fold(0.0f64, f64::max);
    let beta_a = spectral_norm(&g.adjacency_f64());
    let beta_x = frobenius_norm(g.features());
    let alpha = g.min_degree() as f64;
    let min_sample_n = sets
        .iter()
        .flat_map(|s| s.samples.iter())
        .map(|s| s.node_count())
        .min()
        .unwrap_or(g.node_count());

    let base = crate::gnn::encode_graph(model, sets)?;

    let results: Vec<Result<DominanceTrial>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let p = perturb(g, cfg.edge_flips, cfg.feature_noise, derive_seed(seed, "trial", t as u64))?;
            // identical node-id lists against the perturbed graph
            let perturbed_sets: Vec<PatternSampleSet> = sets
                .iter()
                .map(|set| {
                    let samples = set
                        .samples
                        .iter()
                        .map(|s| induced_subgraph(&p.graph, &s.node_ids))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(PatternSampleSet {
                        graph_id: set.graph_id,
                        kind: set.kind,
                        samples,
                        wl_hashes: set.wl_hashes.clone(),
                        requested_q: set.requested_q,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let enc = crate::gnn::encode_graph(model, &perturbed_sets)?;
            let diff = &enc.g - &base.g;
            let measured = diff.dot(&diff).sqrt();
            let inputs = BoundInputs {
                beta_a,
                beta_x,
                beta_w,
                alpha,
                kappa: p.kappa,
                rho,
                tau: 1.0,
                layers,
                n: min_sample_n,
                delta_a_norm: p.delta_a_norm,
                delta_x_norm: p.delta_x_norm,
                delta_d_norm: p.delta_d_norm,
            };
            Ok(DominanceTrial {
                trial: t,
                measured,
                bound: robustness_bound(&inputs),
                delta_a_norm: p.delta_a_norm,
                delta_x_norm: p.delta_x_norm,
                delta_d_norm: p.delta_d_norm,
            })
        })
        .collect();
    let trials: Vec<DominanceTrial> = results.into_iter().collect::<Result<Vec<_>>>()?;
    let violations = trials
        .iter()
        .filter(|t| t.measured > t.bound + 1e-12)
        .count();
    let max_ratio = trials
        .iter()
        .filter(|t| t.bound > 0.0)
        .map(|t| t.measured / t.bound)
        .fold(0.0f64, f64::max);
    Ok(DominanceReport {
        trials,
        violations,
        max_ratio,
    })
}

/// Helper for whole-graph dominance checks: wrap each graph as the single
/// "sample" of one channel per model stack.
pub fn whole_graph_sets(model: &crate::gnn::EnsembleModel, g: &Graph) -> Vec<PatternSampleSet> {
    let sub = crate::graph::Subgraph::from_whole_graph(g);
    model
        .stacks
        .iter()
        .map(|stack| PatternSampleSet {
            graph_id: g.id(),
            kind: stack.kind,
            samples: vec![sub.clone()],
            wl_hashes: vec![0],
            requested_q: 1,
        })
        .collect()
}

/// Measured parameter norms for η between two trained models.
pub fn stability_inputs_from_models(
    a: &crate::gnn::EnsembleModel,
    b: &crate::gnn::EnsembleModel,
    tau: f64,
    n: usize,
    beta_a: f64,
    beta_x: f64,
    alpha: f64,
) -> StabilityInputs {
    let beta_hat_w = a
        .stacks
        .iter()
        .chain(b.stacks.iter())
        .flat_map(|s| s.layer_weights.iter())
        .map(spectral_norm)
        .fold(0.0f64, f64::max);
    let beta_hat_dw = a
        .stacks
        .iter()
        .zip(&b.stacks)
        .flat_map(|(sa, sb)| sa.layer_weights.iter().zip(&sb.layer_weights))
        .map(|(wa, wb)| spectral_norm(&(wa - wb)))
        .fold(0.0f64, f64::max);
    // classifier norms follow the first dense layer (the linear projection
    // the stability argument uses)
    let gamma_c = spectral_norm(&b.classifier.layers[0].weight);
    let gamma_dc = spectral_norm(
        &(&a.classifier.layers[0].weight - &b.classifier.layers[0].weight),
    );
    let la = Array1::from_vec(a.lambda());
    let lb = Array1::from_vec(b.lambda());
    let diff = &la - &lb;
    StabilityInputs {
        beta_hat_w,
        beta_hat_dw,
        gamma_c,
        gamma_dc,
        lambda_diff_norm: diff.dot(&diff).sqrt(),
        lambda_norm: lb.dot(&lb).sqrt(),
        rho: a.config.activation.lipschitz(),
        tau,
        layers: a.config.gcn_layers,
        n,
        beta_a,
        beta_x,
        alpha,
    }
}
