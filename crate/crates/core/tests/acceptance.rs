//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every tolerance and time limit is a named constant below.

mod common;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use repcost::analysis::{
    analytic_gradient, coactivation_identity_check, mv_bound_check, BoxSampler,
};
use repcost::experiment::{run_experiment, ExperimentConfig, RunReport};
use repcost::linalg::{norm2, rank, Matrix};
use repcost::network::format::fmt_num;
use repcost::network::TwoLayerNet;
use repcost::penalty::{
    cost_dominates_phi, depth_preference_check, phi_2, phi_l, phi_l_iterative, sandwich_check,
    PhiOptions,
};
use repcost::rng::SeededRng;

use common::*;

const TOL_CLOSED_FORM: f64 = 1e-10;
const TOL_GRID: f64 = 1e-3;
const GRID_POINTS: usize = 2000;
const TOL_RANK_ONE: f64 = 1e-4;
const TOL_SANDWICH: f64 = 1e-6;
const TOL_MONOTONE: f64 = 1e-4;
const MV_FACTOR: f64 = 1.02;
const MV_SAMPLES: usize = 2048;
const TOL_COACTIVATION: f64 = 1e-10;
const TOL_GRADIENT: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;
const FD_POINTS: usize = 20;
const TOL_BALANCED: f64 = 1e-4;
const TREND_FACTOR: f64 = 0.1;
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const TREND_MIN_SEEDS: usize = 2;

struct Outcome {
    pass: bool,
    detail: String,
    csv: String,
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

fn c1() -> Outcome {
    let mut rng = SeededRng::new(101);
    let opts = PhiOptions::default();
    let mut worst: f64 = 0.0;
    let mut csv = String::from("index,rows,cols,phi_iterative,phi_2\n");
    for i in 0..50 {
        let rows = 1 + (rng.next_u64() % 12) as usize;
        let cols = 1 + (rng.next_u64() % 8) as usize;
        let m = random_matrix(rows, cols, &mut rng);
        let it = phi_l_iterative(&m, 2, &opts).unwrap().value;
        let closed = phi_l(&m, 2, &opts).unwrap().value;
        let oracle: f64 = (0..rows).map(|r| norm2(m.row(r))).sum();
        worst = worst
            .max((it - oracle).abs() / oracle)
            .max((closed - oracle).abs() / oracle)
            .max((phi_2(&m) - oracle).abs() / oracle);
        let _ = writeln!(csv, "{i},{rows},{cols},{},{}", fmt_num(it), fmt_num(oracle));
    }
    Outcome {
        pass: worst < TOL_CLOSED_FORM,
        detail: format!("50 matrices up to 12x8, worst rel err {worst:.2e} (tol {TOL_CLOSED_FORM:.0e})"),
        csv,
    }
}

fn c2() -> Outcome {
    let mut rng = SeededRng::new(202);
    let opts = PhiOptions::default();
    let mut worst: f64 = 0.0;
    let mut csv = String::from("index,depth,phi,grid\n");
    for i in 0..20 {
        let m = [[rng.normal(), rng.normal()], [rng.normal(), rng.normal()]];
        let mat = Matrix::from_rows(&[m[0].to_vec(), m[1].to_vec()]);
        for depth in [3, 4] {
            let phi = phi_l(&mat, depth, &opts).unwrap().value;
            let grid = grid_phi_2x2(m, depth, GRID_POINTS);
            worst = worst.max((phi - grid).abs() / grid);
            let _ = writeln!(csv, "{i},{depth},{},{}", fmt_num(phi), fmt_num(grid));
        }
    }
    Outcome {
        pass: worst < TOL_GRID,
        detail: format!("20 2x2 matrices x L in {{3,4}}, worst rel gap to {GRID_POINTS}-point grid {worst:.2e} (tol {TOL_GRID:.0e})"),
        csv,
    }
}

fn c3() -> Outcome {
    let mut rng = SeededRng::new(303);
    let opts = PhiOptions::default();
    let mut worst: f64 = 0.0;
    let mut csv = String::from("index,depth,phi,closed_form\n");
    for i in 0..20 {
        let k = 2 + (rng.next_u64() % 7) as usize;
        let d = 2 + (rng.next_u64() % 6) as usize;
        let u: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let m = Matrix::outer(&u, &v);
        let l1: f64 = u.iter().map(|x| x.abs()).sum();
        for depth in [3, 4, 6] {
            let expected = (l1 * norm2(&v)).powf(2.0 / depth as f64);
            let phi = phi_l(&m, depth, &opts).unwrap().value;
            worst = worst.max((phi - expected).abs() / expected);
            let _ = writeln!(csv, "{i},{depth},{},{}", fmt_num(phi), fmt_num(expected));
        }
    }
    Outcome {
        pass: worst < TOL_RANK_ONE,
        detail: format!("20 rank-1 matrices x L in {{3,4,6}}, worst rel err {worst:.2e} (tol {TOL_RANK_ONE:.0e})"),
        csv,
    }
}

fn c4() -> Outcome {
    let mut rng = SeededRng::new(404);
    let opts = PhiOptions::default();
    let mut violations = 0;
    let mut csv = String::from("index,depth,lower,phi,upper\n");
    for i in 0..100 {
        let rows = 2 + (rng.next_u64() % 7) as usize;
        let cols = 2 + (rng.next_u64() % 5) as usize;
        let m = random_matrix(rows, cols, &mut rng);
        let r = rank(&m, 1e-12).unwrap() as f64;
        let p2: f64 = (0..rows).map(|k| norm2(m.row(k))).sum();
        for depth in [3, 4, 6] {
            let l = depth as f64;
            let s = sandwich_check(&m, depth, &opts).unwrap();
            let upper = r.powf((l - 2.0) / l) * p2.powf(2.0 / l);
            let lower = s.lower_2l.max(p2.powf(2.0 / l));
            let ok = s.holds
                && lower <= s.phi * (1.0 + TOL_SANDWICH)
                && s.phi <= upper * (1.0 + TOL_SANDWICH);
            if !ok {
                violations += 1;
            }
            let _ = writeln!(csv, "{i},{depth},{},{},{}", fmt_num(lower), fmt_num(s.phi), fmt_num(upper));
        }
    }
    // Monotone approach to the rank, on matrices normalised to Φ_2 = 1.
    let mut mono_bad = 0;
    for i in 0..20 {
        let m0 = random_matrix(6, 4, &mut rng);
        let m = m0.scaled(1.0 / phi_2(&m0));
        let r = rank(&m, 1e-12).unwrap() as f64;
        let vals: Vec<f64> = [2, 3, 4, 8, 16]
            .iter()
            .map(|&l| phi_l(&m, l, &opts).unwrap().value)
            .collect();
        let monotone = vals.windows(2).all(|w| w[1] >= w[0] * (1.0 - TOL_MONOTONE));
        let toward = vals.iter().all(|v| *v <= r * (1.0 + TOL_MONOTONE)) && (r - vals[4]) <= (r - vals[0]);
        if !(monotone && toward) {
            mono_bad += 1;
        }
        let row: Vec<String> = vals.iter().map(|v| fmt_num(*v)).collect();
        let _ = writeln!(csv, "mono{i},{}", row.join(","));
    }
    Outcome {
        pass: violations == 0 && mono_bad == 0,
        detail: format!(
            "sandwich violations {violations}/300 (tol {TOL_SANDWICH:.0e}); monotone-to-rank failures {mono_bad}/20 (slack {TOL_MONOTONE:.0e}, Phi_2-normalised)"
        ),
        csv,
    }
}

fn random_two_layer(k: usize, d: usize, rng: &mut SeededRng) -> TwoLayerNet {
    let w = random_matrix(k, d, rng);
    let a = (0..k).map(|_| rng.normal()).collect();
    let b = (0..k).map(|_| 0.5 * rng.normal()).collect();
    TwoLayerNet::new(w, a, b, 0.0).unwrap()
}

fn c5() -> Outcome {
    let mut rng = SeededRng::new(505);
    let opts = PhiOptions::default();
    let sampler = BoxSampler::new(0.5);
    let mut fails = 0;
    let mut worst: f64 = 0.0;
    let mut csv = String::from("index,depth,mv,phi_pow\n");
    for i in 0..100 {
        let net = random_two_layer(8, 5, &mut rng);
        for depth in [3, 4] {
            let r = mv_bound_check(&net, depth, &sampler, MV_SAMPLES, i, &opts).unwrap();
            worst = worst.max(r.mv / r.phi_pow);
            if r.mv.is_nan() || r.mv > MV_FACTOR * r.phi_pow {
                fails += 1;
            }
            let _ = writeln!(csv, "{i},{depth},{},{}", fmt_num(r.mv), fmt_num(r.phi_pow));
        }
    }
    Outcome {
        pass: fails == 0,
        detail: format!("100 nets K=8 d=5 x L in {{3,4}}, n={MV_SAMPLES}: {fails} violations, max MV/Phi^(L/2) = {worst:.3} (limit {MV_FACTOR})"),
        csv,
    }
}

fn c6() -> Outcome {
    let mut rng = SeededRng::new(606);
    let mut worst: f64 = 0.0;
    let mut csv = String::from("index,residual,c_norm,oracle_gap\n");
    for i in 0..20 {
        let net = random_two_layer(7, 4, &mut rng);
        let x = BoxSampler::new(0.5).sample(4, 1000, i);
        let chk = coactivation_identity_check(&net, &x).unwrap();
        // Oracle: Ĉ accumulated directly from per-sample gradients.
        let mut c = Matrix::zeros(4, 4);
        for s in 0..x.rows() {
            let g = analytic_gradient(&net, x.row(s)).unwrap();
            c = Matrix::from_fn(4, 4, |p, q| c[(p, q)] + g[p] * g[q] / x.rows() as f64);
        }
        let gap = c.sub(&chk.c_hat).unwrap().frobenius() / chk.c_norm;
        let rel = chk.residual / chk.c_norm;
        worst = worst.max(rel).max(gap);
        let _ = writeln!(csv, "{i},{},{},{}", fmt_num(chk.residual), fmt_num(chk.c_norm), fmt_num(gap));
    }
    Outcome {
        pass: worst < TOL_COACTIVATION,
        detail: format!("20 nets, worst relative residual {worst:.2e} (tol {TOL_COACTIVATION:.0e})"),
        csv,
    }
}

fn c7() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut csv = String::from("depth,point,rel_err\n");
    for depth in [2, 3, 4] {
        for (p, e) in gradient_rel_errors(depth, FD_POINTS, FD_STEP, 700 + depth as u64).iter().enumerate() {
            worst = worst.max(*e);
            let _ = writeln!(csv, "{depth},{p},{}", fmt_num(*e));
        }
    }
    Outcome {
        pass: worst < TOL_GRADIENT,
        detail: format!("L in {{2,3,4}} x {FD_POINTS} kink-free points, step {FD_STEP:.0e}: worst rel err {worst:.2e} (tol {TOL_GRADIENT:.0e})"),
        csv,
    }
}

fn c8() -> Outcome {
    let mut rng = SeededRng::new(808);
    let opts = PhiOptions::default();
    let mut fails = 0;
    let mut csv = String::from("case,index,depth,cost,phi\n");
    for i in 0..100 {
        let depth = 2 + i % 3;
        let net = random_deep(depth, 5, 4, &mut rng);
        let r = cost_dominates_phi(&net, &opts).unwrap();
        if !(r.holds && r.phi <= r.cost * (1.0 + 1e-6)) {
            fails += 1;
        }
        let _ = writeln!(csv, "random,{i},{depth},{},{}", fmt_num(r.cost), fmt_num(r.phi));
    }
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let m = random_matrix(5, 4, &mut rng);
        for depth in [2, 3, 4] {
            let net = balanced_net(&m, depth, &opts);
            let r = cost_dominates_phi(&net, &opts).unwrap();
            worst = worst.max((r.cost - r.phi).abs() / r.phi);
            let _ = writeln!(csv, "balanced,{i},{depth},{},{}", fmt_num(r.cost), fmt_num(r.phi));
        }
    }
    Outcome {
        pass: fails == 0 && worst < TOL_BALANCED,
        detail: format!("{fails}/100 random nets with C_L < Phi_L; balanced construction worst |C_L - Phi_L|/Phi_L = {worst:.2e} (tol {TOL_BALANCED:.0e})"),
        csv,
    }
}

fn c9() -> Outcome {
    let opts = PhiOptions::default();
    let low = Matrix::outer(&[6.0, 8.0, 0.0], &[0.0, 0.6, 0.8]).scaled(10.0 / 14.0);
    let high = Matrix::identity(3);
    let depths: Vec<usize> = (2..=16).collect();
    let dp = depth_preference_check(&low, &high, &depths, &opts).unwrap();
    // Oracle: Φ_L(low) = 10^{2/L}, Φ_L(I_3) = 3, flip once 10^{2/L} < 3.
    let oracle_flip = depths.iter().copied().find(|&l| 10f64.powf(2.0 / l as f64) < 3.0);
    let oracle_l0 = 1.0 + 2.0 * 10f64.ln() / 3f64.ln();
    let mut csv = String::from("depth,phi_low,phi_high\n");
    for (l, lo, hi) in &dp.scanned {
        let _ = writeln!(csv, "{l},{},{}", fmt_num(*lo), fmt_num(*hi));
    }
    let _ = writeln!(csv, "l0,{}", fmt_num(dp.l0_bound));
    let pass = matches!(dp.flip, Some(f) if (f as f64) <= dp.l0_bound)
        && dp.flip == oracle_flip
        && (dp.l0_bound - oracle_l0).abs() < 1e-9
        && (phi_2(&low) - 10.0).abs() < 1e-12;
    Outcome {
        pass,
        detail: format!(
            "rank-1 (Phi_2=10) vs I_3 (Phi_2=3): flip at L={:?}, L0 bound {:.4} (oracle flip {:?}, L0 {:.4})",
            dp.flip, dp.l0_bound, oracle_flip, oracle_l0
        ),
        csv,
    }
}

fn desk_runs() -> Vec<(u64, RunReport, RunReport)> {
    TREND_SEEDS
        .iter()
        .map(|&seed| {
            let l2 = run_experiment(&ExperimentConfig::desk(2, seed)).unwrap();
            let l4 = run_experiment(&ExperimentConfig::desk(4, seed)).unwrap();
            (seed, l2, l4)
        })
        .collect()
}

fn c10(runs: &[(u64, RunReport, RunReport)]) -> Outcome {
    let mut counts = [0usize; 3];
    let mut csv = String::from("seed,depth,train_mse,gen_mse,ood_mse,subspace_distance,ratio_21\n");
    let mut per_seed = Vec::new();
    for (seed, l2, l4) in runs {
        let trends = [
            l4.subspace_distance < l2.subspace_distance,
            l4.gen_mse <= TREND_FACTOR * l2.gen_mse,
            l4.spectrum.ratio_21() <= TREND_FACTOR * l2.spectrum.ratio_21(),
        ];
        for (c, t) in counts.iter_mut().zip(trends) {
            *c += t as usize;
        }
        per_seed.push(format!(
            "seed {seed}: dist {:.2e}/{:.2e} gen {:.2e}/{:.2e} s2/s1 {:.2e}/{:.2e}",
            l4.subspace_distance,
            l2.subspace_distance,
            l4.gen_mse,
            l2.gen_mse,
            l4.spectrum.ratio_21(),
            l2.spectrum.ratio_21()
        ));
        for (depth, r) in [(2, l2), (4, l4)] {
            let _ = writeln!(
                csv,
                "{seed},{depth},{},{},{},{},{}",
                fmt_num(r.train_mse),
                fmt_num(r.gen_mse),
                fmt_num(r.ood_mse),
                fmt_num(r.subspace_distance),
                fmt_num(r.spectrum.ratio_21())
            );
        }
    }
    Outcome {
        pass: counts.iter().all(|c| *c >= TREND_MIN_SEEDS),
        detail: format!(
            "trend seeds passing (a) dist {}/3, (b) gen x{TREND_FACTOR} {}/3, (c) s2/s1 x{TREND_FACTOR} {}/3, need {TREND_MIN_SEEDS} each [L4/L2 {}]",
            counts[0],
            counts[1],
            counts[2],
            per_seed.join("; ")
        ),
        csv,
    }
}

fn c11(runs: &[(u64, RunReport, RunReport)]) -> Outcome {
    let mut steeper = 0;
    let mut slopes = Vec::new();
    for (seed, l2, l4) in runs {
        let s2 = loglog_slope(l2.spectrum.s.values(), 2, 6);
        let s4 = loglog_slope(l4.spectrum.s.values(), 2, 6);
        if s4 < s2 {
            steeper += 1;
        }
        slopes.push(format!("seed {seed}: {s4:.2} vs {s2:.2}"));
    }
    Outcome {
        pass: steeper >= TREND_MIN_SEEDS,
        detail: format!("log-log slope k=2..6 steeper for L=4 on {steeper}/3 seeds ({})", slopes.join("; ")),
        csv: String::new(),
    }
}

type Criterion = (usize, &'static str, u64, fn() -> Outcome);

const CHEAP: [Criterion; 9] = [
    (1, "Phi closed form at L=2", 10, c1),
    (2, "Phi grid oracle", 60, c2),
    (3, "rank-1 closed form", 30, c3),
    (4, "bound sandwich and monotone limit", 300, c4),
    (5, "mixed-variation bound", 300, c5),
    (6, "co-activation identity", 60, c6),
    (7, "gradient correctness", 60, c7),
    (8, "cost dominates Phi", 300, c8),
    (9, "depth preference flip", 60, c9),
];

fn report(id: usize, name: &str, limit: u64, out: &Outcome, elapsed: Duration) -> bool {
    let ok = out.pass && within(elapsed, limit);
    println!(
        "criterion {id:>2} {}: {name}: {} [{:.2}s, limit {limit}s]",
        if ok { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    ok
}

fn main() {
    let mut all = true;
    let mut first_csv = Vec::new();
    for (id, name, limit, f) in CHEAP {
        let t = Instant::now();
        let out = f();
        all &= report(id, name, limit, &out, t.elapsed());
        first_csv.push(out.csv);
    }

    let t = Instant::now();
    let runs = desk_runs();
    let out10 = c10(&runs);
    all &= report(10, "teacher-student trends (desk scale)", 1800, &out10, t.elapsed());
    first_csv.push(out10.csv.clone());

    let t = Instant::now();
    let out11 = c11(&runs);
    all &= report(11, "spectral decay slope", 1800, &out11, t.elapsed());

    let t = Instant::now();
    let mut second_csv: Vec<String> = CHEAP.iter().map(|(_, _, _, f)| f().csv).collect();
    second_csv.push(c10(&desk_runs()).csv);
    let identical = first_csv == second_csv;
    let bytes: usize = first_csv.iter().map(String::len).sum();
    let out12 = Outcome {
        pass: identical,
        detail: format!("criteria 1-10 rerun, {bytes} CSV bytes {}", if identical { "identical" } else { "differ" }),
        csv: String::new(),
    };
    all &= report(12, "determinism", 1800, &out12, t.elapsed());

    if !all {
        std::process::exit(1);
    }
}
