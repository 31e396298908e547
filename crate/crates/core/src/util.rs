//! Deterministic hashing, seed derivation, and small numeric helpers.
//!
//! All randomness in this crate flows from one master seed through
//! [`derive_seed`], so a run is reproducible from a single knob regardless
//! of thread scheduling.

/// FNV-1a with an avalanche finisher. Stable across platforms and runs,
/// unlike `DefaultHasher`.
pub fn hash64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finisher to spread low-entropy inputs
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Combine already-hashed words into one digest.
pub fn hash_words(words: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(words.len() * 8);
    for w in words {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    hash64(&buf)
}

/// Named seed derivation: `derive_seed(master, "sampler", idx)` and the like.
/// Different (component, index) pairs give independent streams.
pub fn derive_seed(master: u64, component: &str, index: u64) -> u64 {
    let mut buf = Vec::with_capacity(component.len() + 16);
    buf.extend_from_slice(&master.to_le_bytes());
    buf.extend_from_slice(component.as_bytes());
    buf.extend_from_slice(&index.to_le_bytes());
    hash64(&buf)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Backprop through softmax: given `grad_p = dL/dsoftmax(w)` returns `dL/dw`.
pub fn softmax_backward(probs: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_p).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_p)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

/// Median of a slice (averages the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
