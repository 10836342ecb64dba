//! Rank-selection calculus over per-coordinate profiles.
//!
//! Each coordinate s = (i, j) of an R x R grid carries a learning drive g_s,
//! a curvature h_s > 0, and an out-of-domain sensitivity c_s >= 0. Protecting
//! the top-left k x k block damps those coordinates by the penalty strength,
//! trading in-domain gain against out-of-domain loss increase.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Per-coordinate (g, h, c) triples on an R x R grid.
#[derive(Debug, Clone)]
pub struct CoordinateProfile {
    pub r: usize,
    pub g: DenseMatrix,
    pub h: DenseMatrix,
    pub c: DenseMatrix,
}

impl CoordinateProfile {
    pub fn new(g: DenseMatrix, h: DenseMatrix, c: DenseMatrix) -> Result<Self> {
        let r = g.rows();
        if g.cols() != r || h.rows() != r || h.cols() != r || c.rows() != r || c.cols() != r {
            return Err(Error::Parameter("g, h, c must all be R x R".into()));
        }
        for i in 0..r {
            for j in 0..r {
                if !(h.get(i, j) > 0.0) {
                    return Err(Error::Validation(format!("h[{i}][{j}] must be > 0")));
                }
                if c.get(i, j) < 0.0 {
                    return Err(Error::Validation(format!("c[{i}][{j}] must be >= 0")));
                }
            }
        }
        Ok(Self { r, g, h, c })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TradeoffConfig {
    pub lambda: f64,
    pub beta: f64,
}

impl TradeoffConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Parameter("lambda must be >= 0".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Parameter("beta must be > 0".into()));
        }
        Ok(())
    }
}

fn protected(i: usize, j: usize, k: usize) -> bool {
    i < k && j < k
}

/// Minimizer of the local regularized objective:
/// delta*_s = g_s/(h_s + 2 lambda) on the protected top-left k x k block,
/// g_s/h_s elsewhere.
pub fn optimal_step(profile: &CoordinateProfile, k: usize, lambda: f64) -> Result<DenseMatrix> {
    if k > profile.r {
        return Err(Error::Parameter(format!("k = {k} exceeds R = {}", profile.r)));
    }
    if lambda < 0.0 {
        return Err(Error::Parameter("lambda must be >= 0".into()));
    }
    Ok(DenseMatrix::from_fn(profile.r, profile.r, |i, j| {
        let denom = if protected(i, j, k) {
            profile.h.get(i, j) + 2.0 * lambda
        } else {
            profile.h.get(i, j)
        };
        profile.g.get(i, j) / denom
    }))
}

/// Trade-off curves over k = 0..R.
#[derive(Debug, Clone)]
pub struct TradeoffCurves {
    /// Out-of-domain loss increase at the optimal local step, per k.
    pub f_ood: Vec<f64>,
    /// In-domain gain at the optimal local step, per k.
    pub g_id: Vec<f64>,
    /// Scalarized utility Phi(k) = G_id(k) - beta * F_ood(k).
    pub phi: Vec<f64>,
}

impl TradeoffCurves {
    /// CSV export with columns k, F_ood, G_id, Phi.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("k,F_ood,G_id,Phi\n");
        for k in 0..self.f_ood.len() {
            out.push_str(&format!(
                "{k},{:.16e},{:.16e},{:.16e}\n",
                self.f_ood[k], self.g_id[k], self.phi[k]
            ));
        }
        out
    }
}

/// Evaluates F_ood, G_id, and Phi for every k in [0, R]:
/// F_ood(k) = 1/2 sum_{s in S_k} c g^2/(h+2l)^2 + 1/2 sum_{s not in S_k} c g^2/h^2
/// G_id(k)  = sum_{s in S_k} [g^2/(h+2l) - h g^2 / (2 (h+2l)^2)]
///          + 1/2 sum_{s not in S_k} g^2/h
pub fn curves(profile: &CoordinateProfile, lambda: f64, beta: f64) -> Result<TradeoffCurves> {
    TradeoffConfig { lambda, beta }.validate()?;
    let r = profile.r;
    let mut f_ood = Vec::with_capacity(r + 1);
    let mut g_id = Vec::with_capacity(r + 1);
    for k in 0..=r {
        let mut f = 0.0;
        let mut gain = 0.0;
        for i in 0..r {
            for j in 0..r {
                let g = profile.g.get(i, j);
                let h = profile.h.get(i, j);
                let c = profile.c.get(i, j);
                if protected(i, j, k) {
                    let d = h + 2.0 * lambda;
                    f += 0.5 * c * g * g / (d * d);
                    gain += g * g / d - 0.5 * h * g * g / (d * d);
                } else {
                    f += 0.5 * c * g * g / (h * h);
                    gain += 0.5 * g * g / h;
                }
            }
        }
        f_ood.push(f);
        g_id.push(gain);
    }
    let phi: Vec<f64> = g_id
        .iter()
        .zip(&f_ood)
        .map(|(gi, fo)| gi - beta * fo)
        .collect();
    Ok(TradeoffCurves { f_ood, g_id, phi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankBoundary {
    /// Smallest maximizer of Phi over k in [0, R].
    pub k_star: usize,
    /// Smallest rank whose top-left block covers the support of c; absent
    /// when that support spills outside every proper block.
    pub q: Option<usize>,
}

pub fn rank_boundary(profile: &CoordinateProfile, config: &TradeoffConfig) -> Result<RankBoundary> {
    config.validate()?;
    let tc = curves(profile, config.lambda, config.beta)?;
    let mut k_star = 0;
    for (k, &phi) in tc.phi.iter().enumerate() {
        if phi > tc.phi[k_star] {
            k_star = k;
        }
    }
    // Smallest q with supp(c) inside the top-left q x q block.
    let mut q_req = 0usize;
    for i in 0..profile.r {
        for j in 0..profile.r {
            if profile.c.get(i, j) != 0.0 {
                q_req = q_req.max(i + 1).max(j + 1);
            }
        }
    }
    let q = if q_req < profile.r || (q_req == profile.r && profile.r == 0) {
        Some(q_req)
    } else {
        None
    };
    if let Some(q_val) = q {
        debug_assert!(
            config.lambda == 0.0 || k_star <= q_val,
            "optimal rank {k_star} exceeded boundary {q_val}"
        );
    }
    Ok(RankBoundary { k_star, q })
}

#[derive(Debug, Clone, Copy)]
pub struct ThresholdDecision {
    pub protect: bool,
    /// In-domain gain lost by protecting the coordinate.
    pub delta_id: f64,
    /// Out-of-domain increase avoided by protecting it.
    pub delta_ood: f64,
    /// Sensitivity threshold lambda h / (beta (h + lambda)).
    pub threshold: f64,
}

/// Per-coordinate protection rule: protect exactly when
/// beta * delta_ood > delta_id, equivalently c > lambda h / (beta (h + lambda)).
/// At lambda = 0 both deltas vanish and the rule returns protect = false
/// (never protect without benefit).
pub fn threshold_decision(
    g_s: f64,
    h_s: f64,
    c_s: f64,
    lambda: f64,
    beta: f64,
) -> Result<ThresholdDecision> {
    if !(h_s > 0.0) {
        return Err(Error::Parameter("h_s must be > 0".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Parameter("beta must be > 0".into()));
    }
    if lambda < 0.0 || c_s < 0.0 {
        return Err(Error::Parameter("require lambda >= 0 and c_s >= 0".into()));
    }
    let d = h_s + 2.0 * lambda;
    let delta_id = 2.0 * lambda * lambda * g_s * g_s / (h_s * d * d);
    let delta_ood = 2.0 * c_s * lambda * (h_s + lambda) * g_s * g_s / (h_s * h_s * d * d);
    let threshold = lambda * h_s / (beta * (h_s + lambda));
    let protect = beta * delta_ood > delta_id;
    debug_assert_eq!(
        protect,
        lambda > 0.0 && g_s != 0.0 && c_s > threshold,
        "utility and threshold forms disagree"
    );
    Ok(ThresholdDecision { protect, delta_id, delta_ood, threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyRank {
    pub rank: usize,
    /// True when no curve entry reached the target and the largest rank was
    /// returned instead.
    pub saturated: bool,
}

/// Smallest rank whose captured-energy fraction reaches `target_fraction`.
pub fn rank_from_energy(curve: &[(usize, f64)], target_fraction: f64) -> Result<EnergyRank> {
    if curve.is_empty() {
        return Err(Error::Parameter("energy curve is empty".into()));
    }
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(Error::Parameter("target_fraction must lie in (0, 1)".into()));
    }
    for w in curve.windows(2) {
        if w[1].1 < w[0].1 - 1e-12 {
            return Err(Error::Validation("energy curve must be non-decreasing".into()));
        }
    }
    for &(r, frac) in curve {
        if frac >= target_fraction {
            return Ok(EnergyRank { rank: r, saturated: false });
        }
    }
    Ok(EnergyRank { rank: curve.last().unwrap().0, saturated: true })
}
