//! The unit-rescaling-invariant penalty `Φ_L` on an end matrix `M = D_a W`.
//!
//! ```text
//! Φ_L(M) = inf_{λ > 0, ‖λ‖₂ = 1} ‖D_λ⁻¹ M‖_{S^q}^{2/L},   q = 2/(L−1)
//! ```
//!
//! At `L = 2` the infimum is the row-norm sum `‖M‖_{2,1}`. For `L ≥ 3` there
//! is no closed form and [`phi_l`] runs a multi-start descent; the value it
//! returns is attained by the reported `λ`, so it is always an upper estimate
//! of the infimum. The bounds in this module bracket it from both sides.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_2_1, svd, svd_values, Matrix, ZERO_CLAMP};
use crate::network::DeepNet;
use crate::rng::SeededRng;

/// Relative slack used by every inequality check in this module.
pub const CHECK_TOL: f64 = 1e-6;

const LBFGS_MEMORY: usize = 8;
const MAX_HALVINGS: usize = 60;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct PhiOptions {
    /// Seeded random starts on top of the three deterministic ones.
    pub random_starts: usize,
    pub max_iters: usize,
    /// Stop once a step changes the objective by less than this fraction.
    pub rel_tol: f64,
    pub seed: u64,
    /// Additional caller-supplied starting `λ` (length `K`, positive on the
    /// nonzero rows; other entries are ignored).
    pub extra_starts: Vec<Vec<f64>>,
}

impl Default for PhiOptions {
    fn default() -> Self {
        Self {
            random_starts: 5,
            max_iters: 20_000,
            rel_tol: 1e-12,
            seed: 0,
            extra_starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiResult {
    /// `Φ_L` estimate, `objective^{2/L}`.
    pub value: f64,
    /// Minimising rescaling over the nonzero rows listed in `active_rows`.
    pub lambda: Vec<f64>,
    pub active_rows: Vec<usize>,
    /// `‖D_λ⁻¹ M‖_{S^q}` at `lambda`.
    pub objective: f64,
    pub starts_used: usize,
    /// Iterations spent by the winning start.
    pub iterations: usize,
    pub converged: bool,
}

/// Closed form `Φ_2(M) = ‖M‖_{2,1}`.
pub fn phi_2(m: &Matrix) -> f64 {
    norm_2_1(m)
}

/// Schatten exponent `2/(L−1)` paired with depth `L`.
pub fn schatten_exponent(depth: usize) -> f64 {
    2.0 / (depth as f64 - 1.0)
}

fn check_depth(depth: usize) -> Result<()> {
    if depth < 2 {
        return Err(Error::param(format!("depth must be at least 2, got {depth}")));
    }
    Ok(())
}

/// Objective in the log-rescaling `ξ`, with `λ = exp(ξ)/‖exp(ξ)‖₂`.
struct Problem {
    m: Matrix,
    q: f64,
}

struct Eval {
    /// `ln Σ σ_k^q`
    log_f: f64,
    /// Gradient of `log_f` in `ξ`.
    grad: Vec<f64>,
}

fn lambda_of(xi: &[f64]) -> Vec<f64> {
    let top = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xi.iter().map(|x| (x - top).exp()).collect();
    let nrm = dot(&e, &e).sqrt();
    e.iter().map(|x| x / nrm).collect()
}

impl Problem {
    fn scaled(&self, lambda: &[f64]) -> Matrix {
        let inv: Vec<f64> = lambda.iter().map(|l| 1.0 / l).collect();
        self.m.scale_rows(&inv)
    }

    fn value_at(&self, lambda: &[f64]) -> Result<f64> {
        let a = self.scaled(lambda);
        if !a.is_finite() {
            return Ok(f64::INFINITY);
        }
        Ok(svd_values(&a)?.power_sum(self.q))
    }

    /// With `A = D_λ⁻¹M = UΣVᵀ` and `h_i = Σ_k σ_k^q u_ik²`, the gradient of
    /// `F = Σσ^q` in `ξ` is `q(λ²F − h)`; singular values below the clamp
    /// carry no gradient.
    fn eval(&self, xi: &[f64]) -> Option<Eval> {
        let lambda = lambda_of(xi);
        if lambda.iter().any(|l| l.is_nan() || *l <= 0.0) {
            return None;
        }
        let a = self.scaled(&lambda);
        if !a.is_finite() {
            return None;
        }
        let f = svd(&a).ok()?;
        let s1 = f.s.first().copied().unwrap_or(0.0);
        if s1 == 0.0 {
            return None;
        }
        let cut = ZERO_CLAMP * s1;
        let k = lambda.len();
        let mut h = vec![0.0; k];
        let mut total = 0.0;
        for (j, &s) in f.s.iter().enumerate() {
            if s < cut {
                continue;
            }
            let w = s.powf(self.q);
            total += w;
            for (i, hi) in h.iter_mut().enumerate() {
                let u = f.u[(i, j)];
                *hi += w * u * u;
            }
        }
        if !(total > 0.0 && total.is_finite()) {
            return None;
        }
        let grad = lambda
            .iter()
            .zip(&h)
            .map(|(l, hi)| self.q * (l * l - hi / total))
            .collect();
        Some(Eval {
            log_f: total.ln(),
            grad,
        })
    }
}

struct StartOutcome {
    xi: Vec<f64>,
    log_f: f64,
    iterations: usize,
    converged: bool,
}

/// Limited-memory BFGS with Armijo backtracking that halves from a unit step.
fn descend(problem: &Problem, xi0: Vec<f64>, opts: &PhiOptions) -> StartOutcome {
    let mut x = xi0;
    let Some(mut cur) = problem.eval(&x) else {
        return StartOutcome {
            xi: x,
            log_f: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    };
    let mut mem_s: Vec<Vec<f64>> = Vec::new();
    let mut mem_y: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let g = &cur.grad;
        let gnorm = dot(g, g).sqrt();
        if gnorm < 1e-15 {
            converged = true;
            break;
        }
        let mut d = two_loop(g, &mem_s, &mem_y);
        let mut slope = dot(&d, g);
        if slope.is_nan() || slope >= 0.0 {
            mem_s.clear();
            mem_y.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            if let Some(ev) = problem.eval(&trial) {
                if ev.log_f <= cur.log_f + ARMIJO * step * slope {
                    accepted = Some((trial, ev));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, next)) = accepted else {
            if !mem_s.is_empty() {
                mem_s.clear();
                mem_y.clear();
                continue;
            }
            // No descent along the gradient at machine precision.
            converged = gnorm < 1e-8;
            break;
        };
        let rel_change = -(next.log_f - cur.log_f).exp_m1();
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-18 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if mem_s.len() == LBFGS_MEMORY {
                mem_s.remove(0);
                mem_y.remove(0);
            }
            mem_s.push(s);
            mem_y.push(y);
        }
        x = x_new;
        cur = next;
        if rel_change < opts.rel_tol {
            converged = true;
            break;
        }
    }
    StartOutcome {
        xi: x,
        log_f: cur.log_f,
        iterations,
        converged,
    }
}

fn two_loop(g: &[f64], mem_s: &[Vec<f64>], mem_y: &[Vec<f64>]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let m = mem_s.len();
    let mut alpha = vec![0.0; m];
    for i in (0..m).rev() {
        let rho = 1.0 / dot(&mem_y[i], &mem_s[i]);
        alpha[i] = rho * dot(&mem_s[i], &q);
        q.iter_mut().zip(&mem_y[i]).for_each(|(qv, y)| *qv -= alpha[i] * y);
    }
    let gamma = if m > 0 {
        dot(&mem_s[m - 1], &mem_y[m - 1]) / dot(&mem_y[m - 1], &mem_y[m - 1])
    } else {
        1.0
    };
    q.iter_mut().for_each(|v| *v *= gamma);
    for i in 0..m {
        let rho = 1.0 / dot(&mem_y[i], &mem_s[i]);
        let beta = rho * dot(&mem_y[i], &q);
        q.iter_mut().zip(&mem_s[i]).for_each(|(qv, s)| *qv += (alpha[i] - beta) * s);
    }
    q.iter().map(|v| -v).collect()
}

/// Rows with nonzero norm; zero rows push their `λ_k` to the boundary and do
/// not change the infimum.
fn active_rows(m: &Matrix) -> Vec<usize> {
    m.row_norms()
        .iter()
        .enumerate()
        .filter(|(_, n)| **n > 0.0)
        .map(|(i, _)| i)
        .collect()
}

fn submatrix(m: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), m.cols(), |i, j| m[(rows[i], j)])
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Approximate `Φ_L(M)`.
pub fn phi_l(m: &Matrix, depth: usize, opts: &PhiOptions) -> Result<PhiResult> {
    solve(m, depth, opts, true)
}

/// The numerical descent alone, including at `L = 2`, started only from the
/// uniform and random points (no row-norm starts).
pub fn phi_l_iterative(m: &Matrix, depth: usize, opts: &PhiOptions) -> Result<PhiResult> {
    solve(m, depth, opts, false)
}

fn solve(m: &Matrix, depth: usize, opts: &PhiOptions, informed: bool) -> Result<PhiResult> {
    check_depth(depth)?;
    m.check_finite()?;
    let rows = active_rows(m);
    if rows.is_empty() {
        let k = m.rows().max(1);
        return Ok(PhiResult {
            value: 0.0,
            lambda: vec![1.0 / (k as f64).sqrt(); m.rows()],
            active_rows: (0..m.rows()).collect(),
            objective: 0.0,
            starts_used: 0,
            iterations: 0,
            converged: true,
        });
    }
    let reduced = submatrix(m, &rows);
    let norms = reduced.row_norms();
    if depth == 2 && informed {
        // Minimising Σ‖m_k‖²/λ_k² on the sphere gives λ_k ∝ ‖m_k‖^{1/2}.
        let lambda = normalized(&norms.iter().map(|n| n.sqrt()).collect::<Vec<_>>());
        let value = phi_2(&reduced);
        return Ok(PhiResult {
            value,
            lambda,
            active_rows: rows,
            objective: value,
            starts_used: 0,
            iterations: 0,
            converged: true,
        });
    }
    let q = schatten_exponent(depth);
    let problem = Problem { m: reduced, q };
    let k = rows.len();

    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; k]];
    let mut rng = SeededRng::derived(opts.seed, "phi-random-starts");
    if informed {
        starts.push(norms.iter().map(|n| 0.5 * n.ln()).collect());
        starts.push(norms.iter().map(|n| n.ln()).collect());
        for _ in 0..opts.random_starts {
            starts.push(norms.iter().map(|n| 0.5 * n.ln() + rng.normal()).collect());
        }
    } else {
        for _ in 0..opts.random_starts {
            starts.push((0..k).map(|_| rng.normal()).collect());
        }
    }
    for extra in &opts.extra_starts {
        if extra.len() != m.rows() {
            return Err(Error::input(format!(
                "extra start has length {}, expected {}",
                extra.len(),
                m.rows()
            )));
        }
        let sub: Vec<f64> = rows.iter().map(|&i| extra[i]).collect();
        if sub.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::param("extra start must be positive on nonzero rows"));
        }
        starts.push(sub.iter().map(|v| v.ln()).collect());
    }

    let outcomes: Vec<StartOutcome> = if k == 1 {
        starts
            .iter()
            .take(1)
            .map(|xi| StartOutcome {
                xi: xi.clone(),
                log_f: problem.eval(xi).map_or(f64::INFINITY, |e| e.log_f),
                iterations: 0,
                converged: true,
            })
            .collect()
    } else {
        starts
            .into_par_iter()
            .map(|xi| descend(&problem, xi, opts))
            .collect()
    };
    let starts_used = outcomes.len();
    let best = outcomes
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.log_f.total_cmp(&b.log_f).then(i.cmp(j)))
        .map(|(_, o)| o)
        .expect("at least one start");
    let lambda = lambda_of(&best.xi);
    let power_sum = problem.value_at(&lambda)?;
    if !power_sum.is_finite() {
        return Err(Error::input("penalty objective is not finite at any start"));
    }
    let objective = power_sum.powf(1.0 / q);
    Ok(PhiResult {
        value: objective.powf(2.0 / depth as f64),
        lambda,
        active_rows: rows,
        objective,
        starts_used,
        iterations: best.iterations,
        converged: best.converged,
    })
}

/// `‖M‖_{S^{2/L}}^{2/L}` together with the ordered rescaling that attains the
/// relaxed minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct SchattenBound {
    pub value: f64,
    /// `μ_k = σ_k^{1/L} ‖M‖_{S^{2/L}}^{−1/L}` for `k ≤ rank`, zero beyond.
    pub mu: Vec<f64>,
}

pub fn schatten_lower_bound(m: &Matrix, depth: usize) -> Result<SchattenBound> {
    check_depth(depth)?;
    let sigma = svd_values(m)?.clamped();
    let l = depth as f64;
    // ‖M‖_{S^{2/L}}^{2/L} is just Σ σ_k^{2/L}.
    let value: f64 = sigma.iter().filter(|&&s| s > 0.0).map(|s| s.powf(2.0 / l)).sum();
    let mu = if value > 0.0 {
        let scale = value.powf(-0.5);
        sigma
            .iter()
            .map(|&s| if s > 0.0 { s.powf(1.0 / l) * scale } else { 0.0 })
            .collect()
    } else {
        vec![0.0; sigma.len()]
    };
    Ok(SchattenBound { value, mu })
}

fn le_rel(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + CHECK_TOL * rhs.abs().max(lhs.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSandwich {
    pub depth: usize,
    pub rank: usize,
    /// `‖M‖_{S^{2/L}}^{2/L}`
    pub lower_2l: f64,
    /// `Φ_2(M)^{2/L}`
    pub lower_phi2: f64,
    pub phi: f64,
    /// `rank^{(L−2)/L} Φ_2(M)^{2/L}`
    pub upper: f64,
    pub holds: bool,
}

impl BoundSandwich {
    fn with_phi(m: &Matrix, depth: usize, phi: f64) -> Result<Self> {
        let l = depth as f64;
        let rank = svd_values(m)?.rank(ZERO_CLAMP);
        let lower_2l = schatten_lower_bound(m, depth)?.value;
        let p2 = phi_2(m).powf(2.0 / l);
        let upper = (rank as f64).powf((l - 2.0) / l) * p2;
        let holds = le_rel(lower_2l, phi) && le_rel(p2, phi) && le_rel(phi, upper);
        Ok(Self {
            depth,
            rank,
            lower_2l,
            lower_phi2: p2,
            phi,
            upper,
            holds,
        })
    }

    /// Re-evaluates the flag for a replaced `phi`; used to self-test the
    /// verification harness.
    pub fn with_tampered_phi(&self, phi: f64) -> Self {
        let holds = le_rel(self.lower_2l, phi) && le_rel(self.lower_phi2, phi) && le_rel(phi, self.upper);
        Self { phi, holds, ..self.clone() }
    }
}

pub fn sandwich_check(m: &Matrix, depth: usize, opts: &PhiOptions) -> Result<BoundSandwich> {
    let phi = phi_l(m, depth, opts)?.value;
    BoundSandwich::with_phi(m, depth, phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostPhi {
    pub cost: f64,
    pub phi: f64,
    pub holds: bool,
}

/// `C_L(θ) ≥ Φ_L(D_a W)` for the collapsed end matrix.
///
/// The descent is also started from `λ ∝ |a|`, where the penalty is already
/// bounded by the cost, so the returned estimate never exceeds `C_L` through
/// solver error alone.
pub fn cost_dominates_phi(net: &DeepNet, opts: &PhiOptions) -> Result<CostPhi> {
    let depth = net.depth();
    let cost = net.cost_cl();
    let end = net.collapse().end_matrix();
    let mut opts = opts.clone();
    if net.a.iter().any(|a| *a != 0.0) {
        opts.extra_starts
            .push(net.a.iter().map(|a| if *a != 0.0 { a.abs() } else { 1.0 }).collect());
    }
    let phi = phi_l(&end, depth, &opts)?.value;
    Ok(CostPhi {
        cost,
        phi,
        holds: le_rel(phi, cost),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthPreference {
    pub rank_low: usize,
    pub rank_high: usize,
    /// `(L, Φ_L(M_low), Φ_L(M_high))` for every scanned depth.
    pub scanned: Vec<(usize, f64, f64)>,
    /// Smallest scanned depth with `Φ_L(M_low) < Φ_L(M_high)`.
    pub flip: Option<usize>,
    /// Depth threshold with `Φ_2(M_low)` standing in for `R_2(f_l)` and
    /// `σ_{r_h}(M_high)` for the `r_h`-th function singular value.
    pub l0_bound: f64,
}

pub fn depth_preference_check(
    m_low: &Matrix,
    m_high: &Matrix,
    depths: &[usize],
    opts: &PhiOptions,
) -> Result<DepthPreference> {
    let s_low = svd_values(m_low)?;
    let s_high = svd_values(m_high)?;
    let rank_low = s_low.rank(ZERO_CLAMP);
    let rank_high = s_high.rank(ZERO_CLAMP);
    if rank_low == 0 || rank_low >= rank_high {
        return Err(Error::input(format!(
            "need 0 < rank(M_low) < rank(M_high), got {rank_low} and {rank_high}"
        )));
    }
    let (rl, rh) = (rank_low as f64, rank_high as f64);
    let sigma_rh = s_high.values()[rank_high - 1];
    let l0_bound =
        1.0 + 2.0 * (phi_2(m_low).ln() - 0.5 * rl.ln() - sigma_rh.ln()) / (rh.ln() - rl.ln());
    let mut scanned = Vec::with_capacity(depths.len());
    let mut flip = None;
    for &depth in depths {
        let lo = phi_l(m_low, depth, opts)?.value;
        let hi = phi_l(m_high, depth, opts)?.value;
        if flip.is_none() && lo < hi {
            flip = Some(depth);
        }
        scanned.push((depth, lo, hi));
    }
    Ok(DepthPreference {
        rank_low,
        rank_high,
        scanned,
        flip,
        l0_bound,
    })
}
