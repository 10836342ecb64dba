//! Protected singular-subspace bases and the projected-block drift penalty.
//!
//! For a pretrained matrix `W0` with top-k singular bases `U_k`, `V_k`, the
//! penalty is `||U_k^T (W - W0) V_k||_F^2`, computed against the cached
//! reference block `S_ref = U_k^T W0 V_k`. Complementary directions are
//! untouched, so the penalty anchors only how `W` acts between the protected
//! subspaces.

use crate::error::{Error, Result};
use crate::linalg::{svd_full, truncate, DenseMatrix, OrthonormalBasis};

/// Cached top-k singular bases plus the reference block for one weight matrix.
#[derive(Debug, Clone)]
pub struct ProtectedBasis {
    pub layer_name: String,
    pub k: usize,
    pub u_k: OrthonormalBasis,
    pub v_k: OrthonormalBasis,
    pub s_ref: DenseMatrix,
    /// sigma_k - sigma_{k+1}, with sigma_{k+1} = 0 when k = min(m, n).
    pub sigma_gap: f64,
    /// Set when the gap at the protected boundary is below 1e-8 * sigma_1;
    /// the protected subspace is then not unique and the deterministic
    /// ordering of the factorization decides it.
    pub degenerate_gap: bool,
}

impl ProtectedBasis {
    pub fn out_dim(&self) -> usize {
        self.u_k.dim()
    }

    pub fn in_dim(&self) -> usize {
        self.v_k.dim()
    }

    /// Projected block `U_k^T W V_k`.
    pub fn project(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        if w.rows() != self.out_dim() || w.cols() != self.in_dim() {
            return Err(Error::Parameter(format!(
                "weight shape {}x{} does not match basis for layer '{}' ({}x{})",
                w.rows(),
                w.cols(),
                self.layer_name,
                self.out_dim(),
                self.in_dim()
            )));
        }
        Ok(self
            .u_k
            .columns()
            .transpose()
            .matmul(w)
            .matmul(self.v_k.columns()))
    }
}

/// Regularizer settings shared across layers.
#[derive(Debug, Clone)]
pub struct RegularizerConfig {
    pub lambda: f64,
    pub k: usize,
    pub update_period: usize,
    /// Layer-name patterns selecting the regularized set; a trailing `*`
    /// matches any suffix; empty selects every layer.
    pub layer_selector: Vec<String>,
}

impl RegularizerConfig {
    pub fn new(lambda: f64, k: usize, update_period: usize, layer_selector: Vec<String>) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if update_period == 0 {
            return Err(Error::Parameter("update_period must be >= 1".into()));
        }
        Ok(Self {
            lambda,
            k,
            update_period,
            layer_selector,
        })
    }

    pub fn selects(&self, layer_name: &str) -> bool {
        if self.layer_selector.is_empty() {
            return true;
        }
        self.layer_selector.iter().any(|p| {
            if let Some(prefix) = p.strip_suffix('*') {
                layer_name.starts_with(prefix)
            } else {
                layer_name == p
            }
        })
    }
}

/// Build the protected basis for one layer from its pretrained weight.
///
/// Returns the basis; `degenerate_gap` records the near-degenerate-boundary
/// warning condition `sigma_gap < 1e-8 * sigma_1`.
pub fn build_basis(layer_name: &str, w0: &DenseMatrix, k: usize) -> Result<ProtectedBasis> {
    let r = w0.rows().min(w0.cols());
    if k == 0 || k > r {
        return Err(Error::Parameter(format!(
            "protected rank {k} out of range 1..={r} for layer '{layer_name}'"
        )));
    }
    let svd = svd_full(w0)?;
    let (u_k, v_k, sigma_k) = truncate(&svd, k)?;
    let s_ref = u_k.columns().transpose().matmul(w0).matmul(v_k.columns());
    let sigma_next = if k < r { svd.sigma[k] } else { 0.0 };
    let sigma_gap = sigma_k[k - 1] - sigma_next;
    let degenerate_gap = sigma_gap < 1e-8 * svd.sigma[0];
    Ok(ProtectedBasis {
        layer_name: layer_name.to_string(),
        k,
        u_k,
        v_k,
        s_ref,
        sigma_gap,
        degenerate_gap,
    })
}

/// Reassemble a basis from stored components, revalidating orthonormality.
pub fn basis_from_parts(
    layer_name: &str,
    u_k: DenseMatrix,
    v_k: DenseMatrix,
    s_ref: DenseMatrix,
) -> Result<ProtectedBasis> {
    let k = u_k.cols();
    if v_k.cols() != k || s_ref.rows() != k || s_ref.cols() != k {
        return Err(Error::Parameter(format!(
            "inconsistent basis shapes for layer '{layer_name}'"
        )));
    }
    let u_k = OrthonormalBasis::new(u_k, OrthonormalBasis::DEFAULT_TOL)?;
    let v_k = OrthonormalBasis::new(v_k, OrthonormalBasis::DEFAULT_TOL)?;
    // The gap is not serialized; sigma_{k+1} is unknown without W0, so the
    // loaded basis reports the last protected singular value as a lower bound.
    let sigma_gap = s_ref.get(k - 1, k - 1);
    Ok(ProtectedBasis {
        layer_name: layer_name.to_string(),
        k,
        u_k,
        v_k,
        s_ref,
        sigma_gap,
        degenerate_gap: false,
    })
}

/// `||U_k^T W V_k - S_ref||_F^2`; exactly 0.0 when `W` equals `W0` bit-for-bit.
pub fn penalty(w: &DenseMatrix, basis: &ProtectedBasis) -> Result<f64> {
    let s = basis.project(w)?;
    Ok(s.sub(&basis.s_ref).frobenius_norm_sq())
}

/// Analytical gradient `2 U_k (U_k^T (W - W0) V_k) V_k^T`, shape m x n.
pub fn penalty_gradient(w: &DenseMatrix, basis: &ProtectedBasis) -> Result<DenseMatrix> {
    let drift = basis.project(w)?.sub(&basis.s_ref);
    Ok(basis
        .u_k
        .columns()
        .matmul(&drift)
        .matmul(&basis.v_k.columns().transpose())
        .scale(2.0))
}

/// Penalty for a low-rank adapter: evaluates the drift of `W0 + B A`.
pub fn penalty_lora(
    a: &DenseMatrix,
    b: &DenseMatrix,
    w0: &DenseMatrix,
    basis: &ProtectedBasis,
) -> Result<f64> {
    if b.rows() != w0.rows() || a.cols() != w0.cols() || b.cols() != a.rows() {
        return Err(Error::Parameter(format!(
            "adapter shapes B {}x{}, A {}x{} not conformable with W0 {}x{}",
            b.rows(),
            b.cols(),
            a.rows(),
            a.cols(),
            w0.rows(),
            w0.cols()
        )));
    }
    penalty(&w0.add(&b.matmul(a)), basis)
}

/// Memory and FLOP accounting for one regularized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRecord {
    pub extra_floats_per_layer: u64,
    pub flops_per_eval: u64,
    pub amortized_flops_per_step: f64,
    pub heuristic_relative_overhead: f64,
}

/// Exact accounting: `extra_floats = (m+n)k + k^2`; `flops_per_eval` counts
/// `2(mnk + nk^2)` multiply-adds for the evaluation order `(U_k^T W) V_k`;
/// amortized over the update period `s`.
pub fn cost_accounting(m: usize, n: usize, k: usize, s: usize) -> Result<CostRecord> {
    if m == 0 || n == 0 || k == 0 || s == 0 {
        return Err(Error::Parameter("m, n, k, s must all be >= 1".into()));
    }
    if k > m.min(n) {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds min(m, n) = {}",
            m.min(n)
        )));
    }
    let (m64, n64, k64) = (m as u64, n as u64, k as u64);
    let extra_floats_per_layer = (m64 + n64) * k64 + k64 * k64;
    let flops_per_eval = 2 * (m64 * n64 * k64 + n64 * k64 * k64);
    let amortized_flops_per_step = flops_per_eval as f64 / s as f64;
    let heuristic_relative_overhead = k as f64 / (s as f64 * m.min(n) as f64);
    Ok(CostRecord {
        extra_floats_per_layer,
        flops_per_eval,
        amortized_flops_per_step,
        heuristic_relative_overhead,
    })
}
