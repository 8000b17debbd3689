//! Teacher–student pipeline: a rank-`r` two-layer ReLU teacher, a deep
//! student with extra linear layers, full-batch Adam with weight decay, and
//! function-space evaluation of the result.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::analysis::{
    active_subspace, estimate_grad_matrix, spectrum_report, BoxSampler, SpectrumReport,
    DEFAULT_EPS_REL, DEFAULT_SAMPLES,
};
use crate::error::{Error, Result, StageExt};
use crate::linalg::{random_orthogonal_cols, subspace_distance, Matrix};
use crate::network::format::{fmt_num, write_matrix, write_net};
use crate::network::{DeepNet, TwoLayerNet};
use crate::rng::SeededRng;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSpec {
    pub d: usize,
    pub k: usize,
    pub r: usize,
    /// `d × r`, orthonormal.
    pub v: Matrix,
    /// `K × r`, orthonormal.
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub seed: u64,
}

impl TeacherSpec {
    /// `W = U diag(σ) Vᵀ`.
    pub fn weight(&self) -> Matrix {
        self.u
            .scale_cols(&self.sigma)
            .matmul(&self.v.transpose())
            .expect("teacher factors are conformable")
    }

    pub fn net(&self) -> TwoLayerNet {
        TwoLayerNet {
            w: self.weight(),
            a: self.a.clone(),
            b: self.b.clone(),
            c: 0.0,
        }
    }
}

/// Draws `V`, `U`, `σ ~ U(0, 100]`, then `a`, `b ~ N(0, 1)` from the
/// `"teacher"` stream, in that order.
pub fn gen_teacher(d: usize, k: usize, r: usize, seed: u64) -> Result<TeacherSpec> {
    if r == 0 || r > d.min(k) {
        return Err(Error::param(format!("teacher rank must be in 1..={}, got {r}", d.min(k))));
    }
    let mut rng = SeededRng::derived(seed, "teacher");
    let v = random_orthogonal_cols(d, r, &mut rng)?;
    let u = random_orthogonal_cols(k, r, &mut rng)?;
    let sigma = (0..r).map(|_| 100.0 * (1.0 - rng.uniform())).collect();
    let a = (0..k).map(|_| rng.normal()).collect();
    let b = (0..k).map(|_| rng.normal()).collect();
    Ok(TeacherSpec {
        d,
        k,
        r,
        v,
        u,
        sigma,
        a,
        b,
        seed,
    })
}

fn box_draws(d: usize, n: usize, halfwidth: f64, rng: &mut SeededRng) -> Matrix {
    Matrix::from_fn(n, d, |_, _| rng.uniform_in(-halfwidth, halfwidth))
}

fn labels(net: &TwoLayerNet, x: &Matrix) -> Result<Vec<f64>> {
    (0..x.rows()).map(|i| net.forward(x.row(i))).collect()
}

/// Noiseless labelled samples from `U([−h, h]^d)`.
pub fn sample_data(teacher: &TeacherSpec, n: usize, halfwidth: f64, seed: u64) -> Result<(Matrix, Vec<f64>)> {
    if n == 0 {
        return Err(Error::input("need at least one training sample"));
    }
    let mut rng = SeededRng::derived(seed, "train-data");
    let x = box_draws(teacher.d, n, halfwidth, &mut rng);
    let y = labels(&teacher.net(), &x)?;
    Ok((x, y))
}

/// `widths[i]` is the output width of `W_{i+1}`; the last entry is the ReLU
/// width `K`. Every parameter of a layer with fan-in `m` is drawn from
/// `U(−1/√m, 1/√m)`.
pub fn init_deep(depth: usize, widths: &[usize], d: usize, seed: u64) -> Result<DeepNet> {
    if depth < 2 {
        return Err(Error::param(format!("depth must be at least 2, got {depth}")));
    }
    if widths.len() != depth - 1 {
        return Err(Error::param(format!(
            "depth {depth} needs {} linear-layer widths, got {}",
            depth - 1,
            widths.len()
        )));
    }
    if d == 0 || widths.contains(&0) {
        return Err(Error::param("layer widths and input dimension must be positive"));
    }
    let mut rng = SeededRng::derived(seed, "init");
    let mut draw = |count: usize, fan_in: usize| -> Vec<f64> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..count).map(|_| rng.uniform_in(-bound, bound)).collect()
    };
    let mut layers = Vec::with_capacity(depth - 1);
    let mut fan_in = d;
    for &w in widths {
        layers.push(Matrix::from_vec(w, fan_in, draw(w * fan_in, fan_in))?);
        fan_in = w;
    }
    let k = fan_in;
    let last_fan_in = layers.last().unwrap().cols();
    let b = draw(k, last_fan_in);
    let a = draw(k, k);
    let c = draw(1, k)[0];
    DeepNet::new(layers, a, b, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayMode {
    /// `λθ` is added to the raw gradient before the Adam moments.
    Coupled,
    /// `θ ← θ − lr·λθ` applied next to the Adam step.
    Decoupled,
}

impl DecayMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecayMode::Coupled => "coupled",
            DecayMode::Decoupled => "decoupled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "coupled" => Some(DecayMode::Coupled),
            "decoupled" => Some(DecayMode::Decoupled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub depth: usize,
    pub widths: Vec<usize>,
    pub lr_main: f64,
    pub lr_fine: f64,
    pub epochs_main: usize,
    pub epochs_fine: usize,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
    pub decay_biases: bool,
    pub seed: u64,
    pub n_train: usize,
    pub train_box_halfwidth: f64,
    pub ood_box_halfwidth: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            widths: vec![21],
            lr_main: 1e-4,
            lr_fine: 1e-5,
            epochs_main: 30_000,
            epochs_fine: 100,
            weight_decay: 1e-3,
            decay_mode: DecayMode::Coupled,
            decay_biases: false,
            seed: 0,
            n_train: 64,
            train_box_halfwidth: 0.5,
            ood_box_halfwidth: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_main > 0.0 && self.lr_main.is_finite() && self.lr_fine > 0.0 && self.lr_fine.is_finite()) {
            return Err(Error::param("learning rates must be positive and finite"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::param("weight decay must be non-negative"));
        }
        if !(self.train_box_halfwidth >= 0.0 && self.ood_box_halfwidth >= 0.0) {
            return Err(Error::param("box half-widths must be non-negative"));
        }
        if self.widths.len() + 1 != self.depth {
            return Err(Error::param(format!(
                "depth {} needs {} widths, got {}",
                self.depth,
                self.depth.saturating_sub(1),
                self.widths.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: DeepNet,
    /// `loss_curve[e]` and `wd_curve[e]` describe the parameters after `e`
    /// steps; both have `epochs_main + epochs_fine + 1` entries.
    pub loss_curve: Vec<f64>,
    pub wd_curve: Vec<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(net: &DeepNet) -> Self {
        let m: Vec<Vec<f64>> = net.blocks().iter().map(|(b, _)| vec![0.0; b.len()]).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    fn step(&mut self, net: &mut DeepNet, grads: &[Vec<f64>], lr: f64, decay: f64, mode: DecayMode, decay_biases: bool) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (bi, (params, is_bias)) in net.blocks_mut().into_iter().enumerate() {
            let lam = if is_bias && !decay_biases { 0.0 } else { decay };
            let (m, v) = (&mut self.m[bi], &mut self.v[bi]);
            for (j, p) in params.iter_mut().enumerate() {
                let mut g = grads[bi][j];
                if mode == DecayMode::Coupled {
                    g += lam * *p;
                }
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                if mode == DecayMode::Decoupled {
                    *p -= lr * lam * *p;
                }
                *p -= update;
            }
        }
    }
}

/// Full-batch Adam on the mean squared error: `epochs_main` steps at
/// `lr_main` with weight decay, then `epochs_fine` steps at `lr_fine` without.
pub fn adam_train(net: &DeepNet, x: &Matrix, y: &[f64], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut net = net.clone();
    let mut adam = Adam::new(&net);
    let total = cfg.epochs_main + cfg.epochs_fine;
    let mut loss_curve = Vec::with_capacity(total + 1);
    let mut wd_curve = Vec::with_capacity(total + 1);
    for epoch in 0..=total {
        let (loss, grads) = net.loss_and_grads(x, y)?;
        if !loss.is_finite() || !grads.max_abs().is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("loss became {loss}"),
            });
        }
        loss_curve.push(loss);
        wd_curve.push(net.weight_sq_sum());
        if epoch == total {
            break;
        }
        let (lr, decay) = if epoch < cfg.epochs_main {
            (cfg.lr_main, cfg.weight_decay)
        } else {
            (cfg.lr_fine, 0.0)
        };
        let g: Vec<Vec<f64>> = grads.blocks().iter().map(|b| b.to_vec()).collect();
        adam.step(&mut net, &g, lr, decay, cfg.decay_mode, cfg.decay_biases);
    }
    Ok(TrainOutcome {
        net,
        loss_curve,
        wd_curve,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub gen_mse: f64,
    pub ood_mse: f64,
    pub subspace_distance: f64,
    pub spectrum: SpectrumReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub n_test: usize,
    pub n_grad: usize,
    pub eps_rel: f64,
    pub train_box_halfwidth: f64,
    pub ood_box_halfwidth: f64,
    pub seed: u64,
}

/// Exponents reported in the mixed-variation table.
pub const MV_EXPONENTS: [f64; 4] = [2.0 / 3.0, 1.0, 2.0, 0.5];

fn mse(net: &DeepNet, teacher: &TwoLayerNet, x: &Matrix) -> Result<f64> {
    let pred = net.predict(x)?;
    let truth = labels(teacher, x)?;
    Ok(pred.iter().zip(&truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / x.rows().max(1) as f64)
}

pub fn evaluate(net: &DeepNet, teacher: &TeacherSpec, s: &EvalSettings) -> Result<Evaluation> {
    let tnet = teacher.net();
    let mut rng = SeededRng::derived(s.seed, "gen-test");
    let x_gen = box_draws(teacher.d, s.n_test, s.train_box_halfwidth, &mut rng);
    let mut rng = SeededRng::derived(s.seed, "ood-test");
    let x_ood = box_draws(teacher.d, s.n_test, s.ood_box_halfwidth, &mut rng);
    let collapsed = net.collapse();
    let g = estimate_grad_matrix(&collapsed, &BoxSampler::new(s.train_box_halfwidth), s.n_grad, s.seed)?;
    let spectrum = spectrum_report(&g, s.eps_rel, &MV_EXPONENTS)?;
    let sub = active_subspace(&g, teacher.r)?;
    Ok(Evaluation {
        gen_mse: mse(net, &tnet, &x_gen)?,
        ood_mse: mse(net, &tnet, &x_ood)?,
        subspace_distance: subspace_distance(&sub.v_hat, &teacher.v)?,
        spectrum,
    })
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub d: usize,
    pub k: usize,
    pub r: usize,
    pub train: TrainConfig,
    pub n_test: usize,
    pub n_grad: usize,
    pub eps_rel: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 20,
            k: 21,
            r: 1,
            train: TrainConfig::default(),
            n_test: DEFAULT_SAMPLES,
            n_grad: DEFAULT_SAMPLES,
            eps_rel: DEFAULT_EPS_REL,
        }
    }
}

fn parse_key<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config {
        key: key.to_string(),
        msg: format!("cannot parse `{}`", value.trim()),
    })
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 19] = [
        "d",
        "k",
        "r",
        "depth",
        "widths",
        "lr_main",
        "lr_fine",
        "epochs_main",
        "epochs_fine",
        "weight_decay",
        "decay_mode",
        "decay_biases",
        "seed",
        "n_train",
        "train_box_halfwidth",
        "ood_box_halfwidth",
        "n_test",
        "n_grad",
        "eps_rel",
    ];

    /// Reduced-epoch run: 3,000 + 100 epochs with a larger main learning rate.
    pub fn desk(depth: usize, seed: u64) -> Self {
        let mut cfg = Self::default().with_depth(depth);
        cfg.train.seed = seed;
        cfg.train.epochs_main = 3000;
        cfg.train.lr_main = 2e-2;
        cfg
    }

    /// Students whose linear layers all have the teacher width.
    pub fn with_depth(mut self, depth: usize) -> Self {
        self.train.depth = depth;
        self.train.widths = vec![self.k; depth.saturating_sub(1)];
        self
    }

    /// `(key, value)` pairs in [`Self::KEYS`] order; floats use full precision.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let widths: Vec<String> = t.widths.iter().map(usize::to_string).collect();
        let values = [
            self.d.to_string(),
            self.k.to_string(),
            self.r.to_string(),
            t.depth.to_string(),
            widths.join(","),
            fmt_num(t.lr_main),
            fmt_num(t.lr_fine),
            t.epochs_main.to_string(),
            t.epochs_fine.to_string(),
            fmt_num(t.weight_decay),
            t.decay_mode.as_str().to_string(),
            t.decay_biases.to_string(),
            t.seed.to_string(),
            t.n_train.to_string(),
            fmt_num(t.train_box_halfwidth),
            fmt_num(t.ood_box_halfwidth),
            self.n_test.to_string(),
            self.n_grad.to_string(),
            fmt_num(self.eps_rel),
        ];
        Self::KEYS.iter().copied().zip(values).collect()
    }

    /// Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let t = &mut self.train;
        match key {
            "d" => self.d = parse_key(key, value)?,
            "k" => self.k = parse_key(key, value)?,
            "r" => self.r = parse_key(key, value)?,
            "depth" => t.depth = parse_key(key, value)?,
            "widths" => {
                t.widths = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_key(key, s))
                    .collect::<Result<_>>()?
            }
            "lr_main" => t.lr_main = parse_key(key, value)?,
            "lr_fine" => t.lr_fine = parse_key(key, value)?,
            "epochs_main" => t.epochs_main = parse_key(key, value)?,
            "epochs_fine" => t.epochs_fine = parse_key(key, value)?,
            "weight_decay" => t.weight_decay = parse_key(key, value)?,
            "decay_mode" => {
                t.decay_mode = DecayMode::parse(value.trim()).ok_or_else(|| Error::Config {
                    key: key.to_string(),
                    msg: format!("expected `coupled` or `decoupled`, got `{}`", value.trim()),
                })?
            }
            "decay_biases" => t.decay_biases = parse_key(key, value)?,
            "seed" => t.seed = parse_key(key, value)?,
            "n_train" => t.n_train = parse_key(key, value)?,
            "train_box_halfwidth" => t.train_box_halfwidth = parse_key(key, value)?,
            "ood_box_halfwidth" => t.ood_box_halfwidth = parse_key(key, value)?,
            "n_test" => self.n_test = parse_key(key, value)?,
            "n_grad" => self.n_grad = parse_key(key, value)?,
            "eps_rel" => self.eps_rel = parse_key(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.widths.last() != Some(&self.k) {
            return Err(Error::Config {
                key: "widths".into(),
                msg: format!("last width must equal k = {}", self.k),
            });
        }
        if self.n_test == 0 || self.n_grad == 0 {
            return Err(Error::param("n_test and n_grad must be positive"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`Self::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_text().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub teacher: TeacherSpec,
    pub final_net: DeepNet,
    pub train_mse: f64,
    pub gen_mse: f64,
    pub ood_mse: f64,
    pub subspace_distance: f64,
    pub spectrum: SpectrumReport,
    pub loss_curve: Vec<f64>,
    pub weight_decay_curve: Vec<f64>,
}

impl RunReport {
    /// Headline summary fields, in output order.
    pub fn summary(&self) -> Vec<(&'static str, String)> {
        vec![
            ("train_mse", fmt_num(self.train_mse)),
            ("gen_mse", fmt_num(self.gen_mse)),
            ("ood_mse", fmt_num(self.ood_mse)),
            ("subspace_distance", fmt_num(self.subspace_distance)),
            ("effective_rank", self.spectrum.effective_rank.to_string()),
            ("spectrum_ratio_21", fmt_num(self.spectrum.ratio_21())),
            ("final_cost_cl", fmt_num(self.final_net.cost_cl())),
        ]
    }

    /// `k,s_k` with `k` starting at 1.
    pub fn spectrum_csv(&self) -> String {
        spectrum_csv(&self.spectrum)
    }

    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,loss,weight_decay\n");
        for (e, (l, w)) in self.loss_curve.iter().zip(&self.weight_decay_curve).enumerate() {
            let _ = writeln!(out, "{e},{},{}", fmt_num(*l), fmt_num(*w));
        }
        out
    }

    pub fn mv_csv(&self) -> String {
        mv_csv(&self.spectrum)
    }

    /// Key-value header followed by `[name]` CSV blocks.
    pub fn render(&self) -> String {
        let mut out = String::from("# repcost run report\n");
        let _ = writeln!(out, "version = {VERSION}");
        let _ = writeln!(out, "config_hash = {}", self.config.hash());
        out.push_str(&self.config.to_text());
        for (k, v) in self.summary() {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (name, body) in [
            ("spectrum", self.spectrum_csv()),
            ("mixed_variation", self.mv_csv()),
            ("curves", self.curves_csv()),
        ] {
            let _ = write!(out, "\n[{name}]\n{body}");
        }
        out
    }

    pub fn manifest(&self, files: &[(String, String)]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "version = {VERSION}");
        let _ = writeln!(out, "seed = {}", self.config.train.seed);
        let _ = writeln!(out, "config_hash = {}", self.config.hash());
        for (name, body) in files {
            let _ = writeln!(out, "sha256.{name} = {}", hex(&Sha256::digest(body.as_bytes())));
        }
        out
    }

    /// Writes `report.txt`, `final_net.txt`, `teacher_v.txt`, `manifest.txt`
    /// and a separate `timestamp.txt` (the only non-reproducible file).
    pub fn persist(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = vec![
            ("report.txt".to_string(), self.render()),
            ("final_net.txt".to_string(), write_net(&self.final_net)),
            ("teacher_v.txt".to_string(), write_matrix(&self.teacher.v)),
        ];
        let manifest = self.manifest(&files);
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut written = Vec::new();
        for (name, body) in files
            .iter()
            .cloned()
            .chain([("manifest.txt".to_string(), manifest), ("timestamp.txt".to_string(), format!("{stamp}\n"))])
        {
            let path = dir.join(&name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn spectrum_csv(s: &SpectrumReport) -> String {
    let mut out = String::from("k,s_k\n");
    for (k, v) in s.s.values().iter().enumerate() {
        let _ = writeln!(out, "{},{}", k + 1, fmt_num(*v));
    }
    out
}

pub fn mv_csv(s: &SpectrumReport) -> String {
    let mut out = String::from("q,mv_q\n");
    for (q, v) in &s.mv {
        let _ = writeln!(out, "{},{}", fmt_num(*q), fmt_num(*v));
    }
    out
}

/// teacher → data → init → train → evaluate. One seed drives every stream.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate().stage("config")?;
    let seed = cfg.train.seed;
    let teacher = gen_teacher(cfg.d, cfg.k, cfg.r, seed).stage("teacher")?;
    let (x, y) = sample_data(&teacher, cfg.train.n_train, cfg.train.train_box_halfwidth, seed).stage("data")?;
    let init = init_deep(cfg.train.depth, &cfg.train.widths, cfg.d, seed).stage("init")?;
    let trained = adam_train(&init, &x, &y, &cfg.train).stage("train")?;
    let settings = EvalSettings {
        n_test: cfg.n_test,
        n_grad: cfg.n_grad,
        eps_rel: cfg.eps_rel,
        train_box_halfwidth: cfg.train.train_box_halfwidth,
        ood_box_halfwidth: cfg.train.ood_box_halfwidth,
        seed,
    };
    let eval = evaluate(&trained.net, &teacher, &settings).stage("evaluate")?;
    Ok(RunReport {
        config: cfg.clone(),
        teacher,
        train_mse: *trained.loss_curve.last().unwrap(),
        final_net: trained.net,
        gen_mse: eval.gen_mse,
        ood_mse: eval.ood_mse,
        subspace_distance: eval.subspace_distance,
        spectrum: eval.spectrum,
        loss_curve: trained.loss_curve,
        weight_decay_curve: trained.wd_curve,
    })
}
