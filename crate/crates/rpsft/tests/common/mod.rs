//! Shared oracles for the integration suites: finite differences, per-
//! coordinate brute force, and seeded random inputs. Everything here is
//! written independently of the library internals it checks.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpsft::subspace::{penalty, ProtectedBasis};
use rpsft::trainer::sample_gaussian;
use rpsft::DenseMatrix;

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| sample_gaussian(rng))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite-difference gradient of the projected-drift penalty,
/// entry by entry.
pub fn fd_penalty_gradient(w: &DenseMatrix, basis: &ProtectedBasis, step: f64) -> DenseMatrix {
    DenseMatrix::from_fn(w.rows(), w.cols(), |i, j| {
        let mut plus = w.clone();
        plus.set(i, j, w.get(i, j) + step);
        let mut minus = w.clone();
        minus.set(i, j, w.get(i, j) - step);
        (penalty(&plus, basis).unwrap() - penalty(&minus, basis).unwrap()) / (2.0 * step)
    })
}

/// Brute-force trade-off curves: for every k, take the per-coordinate optimal
/// step and evaluate the quadratic gain/loss models directly at that step,
/// instead of using any closed-form summation.
pub fn tradeoff_oracle(
    g: &DenseMatrix,
    h: &DenseMatrix,
    c: &DenseMatrix,
    lambda: f64,
    beta: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let r = g.rows();
    let mut f_ood = Vec::with_capacity(r + 1);
    let mut g_id = Vec::with_capacity(r + 1);
    let mut phi = Vec::with_capacity(r + 1);
    for k in 0..=r {
        let mut f = 0.0;
        let mut gain = 0.0;
        for i in 0..r {
            for j in 0..r {
                let gs = g.get(i, j);
                let hs = h.get(i, j);
                let cs = c.get(i, j);
                let damped = i < k && j < k;
                // Minimizer of g*d - (h/2) d^2 - lambda d^2 (damped) or of the
                // unregularized quadratic (free).
                let d = if damped { gs / (hs + 2.0 * lambda) } else { gs / hs };
                gain += gs * d - 0.5 * hs * d * d;
                f += 0.5 * cs * d * d;
            }
        }
        f_ood.push(f);
        g_id.push(gain);
        phi.push(gain - beta * f);
    }
    (f_ood, g_id, phi)
}

/// Single-coordinate utility comparison: protect exactly when the damped step
/// scores a higher scalarized utility than the free step.
pub fn protect_oracle(g: f64, h: f64, c: f64, lambda: f64, beta: f64) -> bool {
    let util = |d: f64| g * d - 0.5 * h * d * d - beta * 0.5 * c * d * d;
    util(g / (h + 2.0 * lambda)) > util(g / h)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

/// Least-squares slope of y against x.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

/// Plane-rotation matrix acting on coordinates (a, b) of an identity.
pub fn givens(dim: usize, a: usize, b: usize, theta_deg: f64) -> DenseMatrix {
    let t = theta_deg.to_radians();
    let mut q = DenseMatrix::identity(dim);
    q.set(a, a, t.cos());
    q.set(a, b, -t.sin());
    q.set(b, a, t.sin());
    q.set(b, b, t.cos());
    q
}
