//! Spectral norms and extreme eigenvalues via power iteration.
//!
//! Matrices here are small (desk scale), so power iteration with a fixed
//! iteration cap is plenty; no external solver is pulled in.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const POWER_ITERS: usize = 200;
const POWER_TOL: f64 = 1e-10;

/// Largest singular value of `m`, i.e. the spectral norm. Power iteration
/// on `mᵀm` with a deterministic start vector.
pub fn spectral_norm(m: &Array2<f64>) -> f64 {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a11);
    let mut v: Array1<f64> = Array1::from_iter((0..cols).map(|_| rng.gen_range(-1.0..1.0)));
    let norm0 = v.dot(&v).sqrt();
    if norm0 == 0.0 {
        return 0.0;
    }
    v /= norm0;
    let mut sigma = 0.0f64;
    for _ in 0..POWER_ITERS {
        let u = m.dot(&v);
        let w = m.t().dot(&u);
        let n = w.dot(&w).sqrt();
        if n == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w).abs().sqrt();
        v = w / n;
        if (next - sigma).abs() <= POWER_TOL * next.max(1.0) {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Largest eigenvalue (by magnitude refinement at both ends) of a symmetric
/// matrix.
pub fn max_eigenvalue_sym(m: &Array2<f64>) -> f64 {
    // shift by the Gershgorin lower bound so the dominant eigenvalue of the
    // shifted matrix is the algebraic maximum
    let shift = gershgorin_low(m);
    dominant_eigenvalue(&shifted(m, -shift)) + shift
}

/// Smallest eigenvalue of a symmetric matrix. Used for PSD-within-tolerance
/// checks on Gram matrices.
pub fn min_eigenvalue_sym(m: &Array2<f64>) -> f64 {
    let hi = max_eigenvalue_sym(m);
    // largest eigenvalue of (hi*I - m) is hi - lambda_min
    hi - dominant_eigenvalue(&shifted(&(-m.clone()), hi))
}

fn shifted(m: &Array2<f64>, c: f64) -> Array2<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        out[[i, i]] += c;
    }
    out
}

fn gershgorin_low(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut low = f64::INFINITY;
    for i in 0..n {
        let radius: f64 = (0..n).filter(|&j| j != i).map(|j| m[[i, j]].abs()).sum();
        low = low.min(m[[i, i]] - radius);
    }
    if low.is_finite() {
        low
    } else {
        0.0
    }
}

/// Power iteration for the dominant (largest |.|) eigenvalue of a symmetric
/// PSD-shifted matrix; callers arrange the shift so this is the one they want.
fn dominant_eigenvalue(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a22);
    let mut v: Array1<f64> = Array1::from_iter((0..n).map(|_| rng.gen_range(-1.0..1.0)));
    v /= v.dot(&v).sqrt();
    let mut lambda = 0.0f64;
    for _ in 0..POWER_ITERS {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Frobenius norm.
pub fn frobenius_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = array![[3.0, 0.0], [0.0, -5.0]];
        assert!((spectral_norm(&m) - 5.0).abs() < 1e-8);
    }

    #[test]
    fn spectral_norm_of_rank_one() {
        // outer product uuᵀ with ||u||² = 14
        let m = array![[1.0, 2.0, 3.0]];
        let g = m.t().dot(&m);
        assert!((spectral_norm(&g) - 14.0).abs() < 1e-8);
    }

    #[test]
    fn eigen_extremes_on_known_matrix() {
        // eigenvalues 1 and 3
        let m = array![[2.0, 1.0], [1.0, 2.0]];
        assert!((max_eigenvalue_sym(&m) - 3.0).abs() < 1e-8);
        assert!((min_eigenvalue_sym(&m) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn min_eigenvalue_detects_indefiniteness() {
        let m = array![[0.0, 1.0], [1.0, 0.0]];
        assert!((min_eigenvalue_sym(&m) + 1.0).abs() < 1e-8);
    }

    #[test]
    fn frobenius_matches_hand_value() {
        let m = array![[3.0, 4.0]];
        assert!((frobenius_norm(&m) - 5.0).abs() < 1e-12);
    }
}
