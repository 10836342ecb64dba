//! Continuous-time gradient flow of the regularized objective.
//!
//! Integrates dW/dt = -grad_f(W) - 2*lambda*U_k (U_k^T (W - W0) V_k) V_k^T
//! with classical fixed-step RK4 and checks the closed form and Volterra
//! identity for the protected coordinates A(t) = U_k^T (W(t) - W0) V_k.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::subspace::ProtectedBasis;

/// Task-gradient models supported by the simulator.
#[derive(Debug, Clone)]
pub enum Forcing {
    /// grad f(W) = G, a fixed m x n matrix.
    Constant(DenseMatrix),
    /// grad f(W) = W - target (quadratic task f = 1/2 ||W - target||_F^2).
    Quadratic { target: DenseMatrix },
    /// grad f(t) = sin(omega * t) * U_k * amp * V_k^T with amp a k x k
    /// amplitude; used to probe the low-pass behaviour of the damping.
    SinusoidalProjected { amp: DenseMatrix, omega: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct FlowConfig {
    pub lambda: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Parameter("lambda must be finite and >= 0".into()));
        }
        if !(self.dt > 0.0) || !(self.t_end > 0.0) || self.dt > self.t_end {
            return Err(Error::Parameter(
                "require 0 < dt <= t_end for the integrator".into(),
            ));
        }
        Ok(())
    }
}

/// Time series of protected coordinates and projected forcing.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub times: Vec<f64>,
    /// A(t_j) = U_k^T (W(t_j) - W0) V_k, one k x k matrix per sample.
    pub a_series: Vec<DenseMatrix>,
    /// G(t_j) = U_k^T grad_f(t_j, W(t_j)) V_k.
    pub g_series: Vec<DenseMatrix>,
    pub w_series: Option<Vec<DenseMatrix>>,
}

impl FlowTrace {
    /// CSV export: t, vectorized A entries, vectorized G entries.
    pub fn to_csv(&self, header: &str) -> String {
        let k = self.a_series[0].rows();
        let mut out = String::new();
        for line in header.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push('t');
        for i in 0..k {
            for j in 0..k {
                out.push_str(&format!(",A_{i}_{j}"));
            }
        }
        for i in 0..k {
            for j in 0..k {
                out.push_str(&format!(",G_{i}_{j}"));
            }
        }
        out.push('\n');
        for (idx, &t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.16e}"));
            for m in [&self.a_series[idx], &self.g_series[idx]] {
                for v in m.data() {
                    out.push_str(&format!(",{v:.16e}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn task_gradient(forcing: &Forcing, basis: &ProtectedBasis, t: f64, w: &DenseMatrix) -> DenseMatrix {
    match forcing {
        Forcing::Constant(g) => g.clone(),
        Forcing::Quadratic { target } => w.sub(target),
        Forcing::SinusoidalProjected { amp, omega } => {
            let scaled = amp.scale((omega * t).sin());
            basis
                .u_k
                .columns()
                .matmul(&scaled)
                .matmul(&basis.v_k.columns().transpose())
        }
    }
}

fn rhs(
    forcing: &Forcing,
    basis: &ProtectedBasis,
    w0: &DenseMatrix,
    lambda: f64,
    t: f64,
    w: &DenseMatrix,
) -> DenseMatrix {
    let grad = task_gradient(forcing, basis, t, w);
    if lambda == 0.0 {
        return grad.scale(-1.0);
    }
    let drift = basis
        .u_k
        .columns()
        .transpose()
        .matmul(&w.sub(w0))
        .matmul(&basis.v_k.columns());
    let damp = basis
        .u_k
        .columns()
        .matmul(&drift)
        .matmul(&basis.v_k.columns().transpose())
        .scale(2.0 * lambda);
    grad.add(&damp).scale(-1.0)
}

/// Classical RK4 integration of the regularized flow starting at W0.
pub fn integrate_flow(
    w0: &DenseMatrix,
    basis: &ProtectedBasis,
    forcing: &Forcing,
    config: &FlowConfig,
) -> Result<FlowTrace> {
    integrate_flow_opts(w0, basis, forcing, config, None, false)
}

/// As `integrate_flow`, with an optional initial state distinct from the
/// anchor W0 (so A(0) need not be zero) and optional retention of the full
/// W(t) series.
pub fn integrate_flow_opts(
    w0: &DenseMatrix,
    basis: &ProtectedBasis,
    forcing: &Forcing,
    config: &FlowConfig,
    w_init: Option<&DenseMatrix>,
    keep_w: bool,
) -> Result<FlowTrace> {
    config.validate()?;
    if w0.rows() != basis.out_dim() || w0.cols() != basis.in_dim() {
        return Err(Error::Parameter("W0 shape does not match basis".into()));
    }
    if let Some(wi) = w_init {
        if wi.rows() != w0.rows() || wi.cols() != w0.cols() {
            return Err(Error::Parameter("initial state shape does not match W0".into()));
        }
    }
    if let Forcing::Constant(g) = forcing {
        if g.rows() != w0.rows() || g.cols() != w0.cols() {
            return Err(Error::Parameter("constant forcing shape mismatch".into()));
        }
    }
    if let Forcing::SinusoidalProjected { amp, .. } = forcing {
        if amp.rows() != basis.k || amp.cols() != basis.k {
            return Err(Error::Parameter("sinusoidal amplitude must be k x k".into()));
        }
    }
    let n_steps = (config.t_end / config.dt).round() as usize;
    let dt = config.dt;
    let lambda = config.lambda;
    let project = |w: &DenseMatrix| -> DenseMatrix {
        basis
            .u_k
            .columns()
            .transpose()
            .matmul(&w.sub(w0))
            .matmul(&basis.v_k.columns())
    };
    let project_grad = |t: f64, w: &DenseMatrix| -> DenseMatrix {
        let g = task_gradient(forcing, basis, t, w);
        basis
            .u_k
            .columns()
            .transpose()
            .matmul(&g)
            .matmul(&basis.v_k.columns())
    };

    let mut w = w_init.unwrap_or(w0).clone();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut a_series = Vec::with_capacity(n_steps + 1);
    let mut g_series = Vec::with_capacity(n_steps + 1);
    let mut w_series = if keep_w { Some(Vec::with_capacity(n_steps + 1)) } else { None };

    let record = |t: f64, w: &DenseMatrix,
                      times: &mut Vec<f64>,
                      a_series: &mut Vec<DenseMatrix>,
                      g_series: &mut Vec<DenseMatrix>,
                      w_series: &mut Option<Vec<DenseMatrix>>| {
        times.push(t);
        a_series.push(project(w));
        g_series.push(project_grad(t, w));
        if let Some(ws) = w_series {
            ws.push(w.clone());
        }
    };
    record(0.0, &w, &mut times, &mut a_series, &mut g_series, &mut w_series);

    for step in 0..n_steps {
        let t = step as f64 * dt;
        let k1 = rhs(forcing, basis, w0, lambda, t, &w);
        let k2 = rhs(forcing, basis, w0, lambda, t + 0.5 * dt, &w.add(&k1.scale(0.5 * dt)));
        let k3 = rhs(forcing, basis, w0, lambda, t + 0.5 * dt, &w.add(&k2.scale(0.5 * dt)));
        let k4 = rhs(forcing, basis, w0, lambda, t + dt, &w.add(&k3.scale(dt)));
        let incr = k1
            .add(&k2.scale(2.0))
            .add(&k3.scale(2.0))
            .add(&k4)
            .scale(dt / 6.0);
        w = w.add(&incr);
        let t_next = (step + 1) as f64 * dt;
        if !w.is_finite() {
            return Err(Error::Integration(format!(
                "non-finite state at t = {t_next}"
            )));
        }
        record(t_next, &w, &mut times, &mut a_series, &mut g_series, &mut w_series);
    }
    Ok(FlowTrace { times, a_series, g_series, w_series })
}

/// Closed form for constant projected forcing:
/// A(t) = e^{-2 lambda t} A0 - (1 - e^{-2 lambda t})/(2 lambda) G,
/// with the lambda = 0 limit A0 - t G.
pub fn closed_form_constant(
    g: &DenseMatrix,
    lambda: f64,
    a0: &DenseMatrix,
    t: f64,
) -> Result<DenseMatrix> {
    if g.rows() != a0.rows() || g.cols() != a0.cols() {
        return Err(Error::Parameter("G and A0 must share shape".into()));
    }
    if t < 0.0 || lambda < 0.0 {
        return Err(Error::Parameter("require t >= 0 and lambda >= 0".into()));
    }
    if lambda == 0.0 {
        return Ok(a0.sub(&g.scale(t)));
    }
    let decay = (-2.0 * lambda * t).exp();
    Ok(a0.scale(decay).sub(&g.scale((1.0 - decay) / (2.0 * lambda))))
}

/// Maximum Frobenius norm over the trace of
/// A(t) - [e^{-2 lambda t} A(0) - int_0^t e^{-2 lambda (t-s)} G(s) ds],
/// the integral evaluated by trapezoidal quadrature on the recorded grid.
pub fn volterra_residual(trace: &FlowTrace, lambda: f64) -> Result<f64> {
    if trace.times.len() < 2 {
        return Err(Error::Parameter("trace needs at least 2 samples".into()));
    }
    let a0 = &trace.a_series[0];
    let mut max_resid: f64 = 0.0;
    // The exponential recurrence below reproduces, exactly, the composite
    // trapezoid rule applied to the weighted integrand e^{2 lambda s} G(s)
    // re-scaled by e^{-2 lambda t}; it stays well-conditioned for large t.
    let mut integral = DenseMatrix::zeros(a0.rows(), a0.cols());
    for j in 0..trace.times.len() {
        if j > 0 {
            let dt = trace.times[j] - trace.times[j - 1];
            let decay = (-2.0 * lambda * dt).exp();
            integral = integral
                .scale(decay)
                .add(&trace.g_series[j - 1].scale(decay * dt / 2.0))
                .add(&trace.g_series[j].scale(dt / 2.0));
        }
        let decay_t = (-2.0 * lambda * trace.times[j]).exp();
        let predicted = a0.scale(decay_t).sub(&integral);
        let resid = trace.a_series[j].sub(&predicted).frobenius_norm();
        max_resid = max_resid.max(resid);
    }
    Ok(max_resid)
}
