//! Function-space diagnostics for ReLU networks.
//!
//! Gradients of a two-layer net are piecewise constant,
//! `∇f(x) = (D_a W)ᵀ u(x)` with `u_k(x) = 1[w_kᵀx + b_k > 0]`, so the
//! uncentered gradient covariance `C = E[∇f ∇fᵀ]` can be estimated exactly
//! sample by sample. Its square-root singular values `s_k` drive the mixed
//! variation `MV_q = (Σ s_k^q)^{1/q}` and the active subspace.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{svd_values, sym_eigen, Matrix, Spectrum};
use crate::network::{DeepNet, TwoLayerNet};
use crate::penalty::{phi_l, schatten_exponent, PhiOptions};
use crate::rng::SeededRng;

/// Default number of gradient samples.
pub const DEFAULT_SAMPLES: usize = 2048;
/// Default relative threshold for the effective rank.
pub const DEFAULT_EPS_REL: f64 = 1e-2;
/// Monte-Carlo slack on the mixed-variation bound.
pub const MV_SLACK: f64 = 1.02;

/// Uniform distribution on `[−h, h]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSampler {
    pub halfwidth: f64,
}

impl BoxSampler {
    pub fn new(halfwidth: f64) -> Self {
        Self { halfwidth }
    }

    pub fn describe(&self, d: usize) -> String {
        format!("uniform[-{h},{h}]^{d}", h = self.halfwidth)
    }

    /// `n × d` draws in row-major order from the `"box-samples"` stream.
    pub fn sample(&self, d: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = SeededRng::derived(seed, "box-samples");
        let h = self.halfwidth;
        Matrix::from_fn(n, d, |_, _| rng.uniform_in(-h, h))
    }
}

/// `Σ_k a_k 1[w_kᵀx + b_k > 0] w_k`.
pub fn analytic_gradient(net: &TwoLayerNet, x: &[f64]) -> Result<Vec<f64>> {
    let u = net.activations(x)?;
    let weights: Vec<f64> = u.iter().zip(&net.a).map(|(u, a)| u * a).collect();
    net.w.tr_matvec(&weights)
}

#[derive(Debug, Clone)]
pub struct GradMatrixEstimate {
    /// `d × n`, one gradient per column.
    pub g_hat: Matrix,
    pub n: usize,
    pub sampler: String,
    pub seed: u64,
}

impl GradMatrixEstimate {
    /// `Ĉ = Ĝ Ĝᵀ / n`.
    pub fn covariance(&self) -> Matrix {
        self.g_hat.gram_rows().scaled(1.0 / self.n as f64)
    }
}

/// Gradients at the rows of `x`, stacked as columns.
pub fn grad_matrix_at(net: &TwoLayerNet, x: &Matrix) -> Result<Matrix> {
    let d = net.input_dim();
    if x.cols() != d {
        return Err(Error::input(format!("samples have {} columns, expected {d}", x.cols())));
    }
    let grads: Vec<Vec<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|i| analytic_gradient(net, x.row(i)))
        .collect::<Result<_>>()?;
    Ok(Matrix::from_fn(d, x.rows(), |i, j| grads[j][i]))
}

pub fn estimate_grad_matrix(
    net: &TwoLayerNet,
    sampler: &BoxSampler,
    n: usize,
    seed: u64,
) -> Result<GradMatrixEstimate> {
    if n == 0 {
        return Err(Error::input("gradient estimate needs at least one sample"));
    }
    let x = sampler.sample(net.input_dim(), n, seed);
    Ok(GradMatrixEstimate {
        g_hat: grad_matrix_at(net, &x)?,
        n,
        sampler: sampler.describe(net.input_dim()),
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct CoactivationCheck {
    pub c_hat: Matrix,
    /// `Â = (1/n) Σ u(x_i) u(x_i)ᵀ`
    pub a_hat: Matrix,
    /// `‖Ĉ − (D_aW)ᵀ Â (D_aW)‖_F`
    pub residual: f64,
    pub c_norm: f64,
}

pub fn coactivation_identity_check(net: &TwoLayerNet, x: &Matrix) -> Result<CoactivationCheck> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::input("co-activation check needs at least one sample"));
    }
    let g = grad_matrix_at(net, x)?;
    let c_hat = g.gram_rows().scaled(1.0 / n as f64);
    let k = net.width();
    let acts: Vec<Vec<f64>> = (0..n).map(|i| net.activations(x.row(i))).collect::<Result<_>>()?;
    let u = Matrix::from_fn(k, n, |i, j| acts[j][i]);
    let a_hat = u.gram_rows().scaled(1.0 / n as f64);
    let end = net.end_matrix();
    let rebuilt = end.transpose().matmul(&a_hat)?.matmul(&end)?;
    let residual = c_hat.sub(&rebuilt)?.frobenius();
    let c_norm = c_hat.frobenius();
    Ok(CoactivationCheck {
        c_hat,
        a_hat,
        residual,
        c_norm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// `s_k = σ_k(Ĝ)/√n`
    pub s: Spectrum,
    pub eps_rel: f64,
    pub effective_rank: usize,
    /// `(q, MV_q)` in request order.
    pub mv: Vec<(f64, f64)>,
}

impl SpectrumReport {
    pub fn mv_at(&self, q: f64) -> Option<f64> {
        self.mv.iter().find(|(qq, _)| *qq == q).map(|(_, v)| *v)
    }

    /// `s_2/s_1`, or 0 for spectra with fewer than two values or `s_1 = 0`.
    pub fn ratio_21(&self) -> f64 {
        let v = self.s.values();
        if v.len() < 2 || v[0] == 0.0 {
            0.0
        } else {
            v[1] / v[0]
        }
    }
}

pub fn spectrum_report(g: &GradMatrixEstimate, eps_rel: f64, q_list: &[f64]) -> Result<SpectrumReport> {
    if g.n == 0 || g.g_hat.cols() == 0 || g.g_hat.rows() == 0 {
        return Err(Error::input("empty gradient matrix"));
    }
    let inv = 1.0 / (g.n as f64).sqrt();
    let sigma = svd_values(&g.g_hat)?;
    let s = Spectrum::new(sigma.values().iter().map(|v| v * inv).collect())?;
    let effective_rank = s.rank(eps_rel);
    let mv = q_list
        .iter()
        .map(|&q| Ok((q, s.quasi_norm(q)?)))
        .collect::<Result<_>>()?;
    Ok(SpectrumReport {
        s,
        eps_rel,
        effective_rank,
        mv,
    })
}

#[derive(Debug, Clone)]
pub struct ActiveSubspace {
    /// `d × r`, orthonormal columns.
    pub v_hat: Matrix,
    pub r: usize,
    /// Set when `s_r` is negligible, so the trailing directions are arbitrary.
    pub degenerate: bool,
}

/// Top-`r` eigenvectors of `Ĉ`.
pub fn active_subspace(g: &GradMatrixEstimate, r: usize) -> Result<ActiveSubspace> {
    let d = g.g_hat.rows();
    if r == 0 || r > d {
        return Err(Error::param(format!("active subspace rank must be in 1..={d}, got {r}")));
    }
    let eig = sym_eigen(&g.covariance())?;
    let s: Vec<f64> = eig.values.iter().map(|v| v.max(0.0).sqrt()).collect();
    let degenerate = s[r - 1] <= 1e-12 * s[0];
    Ok(ActiveSubspace {
        v_hat: eig.vectors.leading_cols(r),
        r,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvBound {
    /// `MV_{2/(L−1)}` of the gradient estimate.
    pub mv: f64,
    /// `Φ_L(D_aW)^{L/2}`
    pub phi_pow: f64,
    pub holds: bool,
}

pub fn mv_bound_check(
    net: &TwoLayerNet,
    depth: usize,
    sampler: &BoxSampler,
    n: usize,
    seed: u64,
    opts: &PhiOptions,
) -> Result<MvBound> {
    if depth < 2 {
        return Err(Error::param(format!("depth must be at least 2, got {depth}")));
    }
    let q = schatten_exponent(depth);
    let g = estimate_grad_matrix(net, sampler, n, seed)?;
    let report = spectrum_report(&g, DEFAULT_EPS_REL, &[q])?;
    let mv = report.mv[0].1;
    let phi = phi_l(&net.end_matrix(), depth, opts)?.value;
    let phi_pow = phi.powf(depth as f64 / 2.0);
    Ok(MvBound {
        mv,
        phi_pow,
        holds: mv <= MV_SLACK * phi_pow,
    })
}

/// Row-major grid of `(x1, x2, f(x))` over `[lo, hi]²`, first coordinate
/// varying slowest.
pub fn eval_grid(net: &DeepNet, lo: f64, hi: f64, resolution: usize) -> Result<Vec<[f64; 3]>> {
    if net.input_dim() != 2 {
        return Err(Error::UnsupportedDimension(format!(
            "grid export needs a 2-D input, network has d = {}",
            net.input_dim()
        )));
    }
    if resolution == 0 {
        return Err(Error::param("grid resolution must be positive"));
    }
    let coord = |i: usize| {
        if resolution == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let x = [coord(i), coord(j)];
            out.push([x[0], x[1], net.forward(&x)?]);
        }
    }
    Ok(out)
}
