//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use repcost::linalg::{svd, Matrix};
use repcost::network::DeepNet;
use repcost::penalty::{phi_l, PhiOptions};
use repcost::rng::SeededRng;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Singular values of a 2×2 matrix from its Frobenius norm and determinant.
pub fn singular_values_2x2(m: [[f64; 2]; 2]) -> (f64, f64) {
    let f = m[0][0].powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + m[1][1].powi(2);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (f * f - 4.0 * det * det).max(0.0).sqrt();
    (((f + disc) / 2.0).sqrt(), ((f - disc) / 2.0).max(0.0).sqrt())
}

/// Minimum of the penalty objective over `points` angles on the open positive
/// quarter circle.
pub fn grid_phi_2x2(m: [[f64; 2]; 2], depth: usize, points: usize) -> f64 {
    let q = 2.0 / (depth as f64 - 1.0);
    let mut best = f64::INFINITY;
    for i in 0..points {
        let t = (i as f64 + 0.5) * std::f64::consts::FRAC_PI_2 / points as f64;
        let (l1, l2) = (t.cos(), t.sin());
        let a = [[m[0][0] / l1, m[0][1] / l1], [m[1][0] / l2, m[1][1] / l2]];
        let (s1, s2) = singular_values_2x2(a);
        let val = (s1.powf(q) + s2.powf(q)).powf(1.0 / q).powf(2.0 / depth as f64);
        best = best.min(val);
    }
    best
}

/// Deep net with end matrix `m` whose cost equals `Φ_L(m)`: factor
/// `D_λ⁻¹M = UΣVᵀ` at the optimal `λ`, split `Σ` evenly across the linear
/// layers and balance the scale between `a` and the product.
pub fn balanced_net(m: &Matrix, depth: usize, opts: &PhiOptions) -> DeepNet {
    let phi = phi_l(m, depth, opts).unwrap();
    let mut lambda = vec![1.0; m.rows()];
    for (slot, &row) in phi.active_rows.iter().enumerate() {
        lambda[row] = phi.lambda[slot];
    }
    let inv: Vec<f64> = lambda.iter().map(|l| 1.0 / l).collect();
    let a_mat = m.scale_rows(&inv);
    let dec = svd(&a_mat).unwrap();
    let r = dec.s.iter().filter(|s| **s > 1e-12 * dec.s[0]).count();
    let n_lin = depth - 1;
    let q = 2.0 / n_lin as f64;
    let f: f64 = dec.s[..r].iter().map(|s| s.powf(q)).sum();
    let alpha = f.powf(n_lin as f64 / (2.0 * depth as f64));
    let shrink = alpha.powf(-1.0 / n_lin as f64);
    let root: Vec<f64> = dec.s[..r].iter().map(|s| s.powf(1.0 / n_lin as f64)).collect();
    let u = dec.u.leading_cols(r);
    let v = dec.v.leading_cols(r);
    let layers: Vec<Matrix> = if n_lin == 1 {
        vec![a_mat.scaled(1.0 / alpha)]
    } else {
        let mut ls = vec![v.transpose().scale_rows(&root)];
        for _ in 1..n_lin - 1 {
            ls.push(Matrix::from_diag(&root));
        }
        ls.push(u.scale_cols(&root));
        ls.into_iter().map(|l| l.scaled(shrink)).collect()
    };
    let a = lambda.iter().map(|l| alpha * l).collect();
    DeepNet::new(layers, a, vec![0.0; m.rows()], 0.0).unwrap()
}

pub fn random_deep(depth: usize, width: usize, d: usize, rng: &mut SeededRng) -> DeepNet {
    let mut layers = Vec::new();
    let mut fan_in = d;
    for _ in 0..depth - 1 {
        let scale = 1.0 / (fan_in as f64).sqrt();
        layers.push(Matrix::from_fn(width, fan_in, |_, _| scale * rng.normal()));
        fan_in = width;
    }
    let a = (0..width).map(|_| rng.normal()).collect();
    let b = (0..width).map(|_| 0.3 * rng.normal()).collect();
    DeepNet::new(layers, a, b, rng.normal()).unwrap()
}

fn params(net: &DeepNet) -> Vec<f64> {
    net.blocks().iter().flat_map(|(b, _)| b.iter().copied()).collect()
}

fn set_params(net: &mut DeepNet, p: &[f64]) {
    let mut i = 0;
    for (block, _) in net.blocks_mut() {
        for v in block.iter_mut() {
            *v = p[i];
            i += 1;
        }
    }
}

/// Smallest `|pre-activation|` over the batch.
fn kink_margin(net: &DeepNet, x: &Matrix) -> f64 {
    let w = net.collapsed_weight();
    (0..x.rows())
        .flat_map(|i| {
            let z = w.matvec(x.row(i)).unwrap();
            z.into_iter().zip(net.b.clone()).map(|(z, b)| (z + b).abs()).collect::<Vec<_>>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// `‖g_fd − g‖₂ / ‖g‖₂` at `points` random kink-free (net, batch) pairs,
/// central differences with step `h`.
pub fn gradient_rel_errors(depth: usize, points: usize, h: f64, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(points);
    while out.len() < points {
        let net = random_deep(depth, 5, 3, &mut rng);
        let x = Matrix::from_fn(6, 3, |_, _| rng.uniform_in(-1.0, 1.0));
        let y: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        if kink_margin(&net, &x) < 1e-3 {
            continue;
        }
        let (_, grads) = net.loss_and_grads(&x, &y).unwrap();
        let g: Vec<f64> = grads.blocks().iter().flat_map(|b| b.iter().copied()).collect();
        let p0 = params(&net);
        let mut probe = net.clone();
        let mut err = 0.0;
        for j in 0..p0.len() {
            let mut p = p0.clone();
            p[j] += h;
            set_params(&mut probe, &p);
            let up = probe.loss_and_grads(&x, &y).unwrap().0;
            p[j] -= 2.0 * h;
            set_params(&mut probe, &p);
            let down = probe.loss_and_grads(&x, &y).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            err += (fd - g[j]).powi(2);
        }
        let gn: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push(err.sqrt() / gn);
    }
    out
}

/// Least-squares slope of `ln s_k` against `ln k` over `k = lo..=hi`
/// (1-based), with `s_k` floored at the smallest positive double.
pub fn loglog_slope(s: &[f64], lo: usize, hi: usize) -> f64 {
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .map(|k| ((k as f64).ln(), s[k - 1].max(f64::MIN_POSITIVE).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
