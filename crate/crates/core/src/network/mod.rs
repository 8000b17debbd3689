//! ReLU networks with a stack of linear input layers.
//!
//! A [`DeepNet`] of depth `L` computes `aᵀ[W_{L−1}···W_1 x + b]_+ + c`. The
//! linear layers can always be multiplied out, giving the [`TwoLayerNet`]
//! that represents the same function.

pub mod format;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[inline]
fn relu(t: f64) -> f64 {
    if t > 0.0 {
        t
    } else {
        0.0
    }
}

/// `h(x) = aᵀ[Wx + b]_+ + c` with `W` of shape `K × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    pub w: Matrix,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl TwoLayerNet {
    pub fn new(w: Matrix, a: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let k = w.rows();
        if a.len() != k || b.len() != k {
            return Err(Error::input(format!(
                "W has {k} rows but a has {} and b has {} entries",
                a.len(),
                b.len()
            )));
        }
        w.check_finite()?;
        if !a.iter().chain(&b).all(|v| v.is_finite()) || !c.is_finite() {
            return Err(Error::input("network parameters must be finite"));
        }
        Ok(Self { w, a, b, c })
    }

    pub fn width(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let z = self.w.matvec(x)?;
        Ok(z.iter()
            .zip(&self.b)
            .zip(&self.a)
            .map(|((zk, bk), ak)| ak * relu(zk + bk))
            .sum::<f64>()
            + self.c)
    }

    /// Unit activation indicators `1[w_kᵀx + b_k > 0]`.
    pub fn activations(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.w.matvec(x)?;
        Ok(z.iter()
            .zip(&self.b)
            .map(|(zk, bk)| if zk + bk > 0.0 { 1.0 } else { 0.0 })
            .collect())
    }

    /// `D_a W`: row `k` is `a_k w_k`.
    pub fn end_matrix(&self) -> Matrix {
        self.w.scale_rows(&self.a)
    }

    /// `(D_λ W, D_λ⁻¹ a, D_λ b, c)`, which computes the same function for any
    /// positive `λ`.
    pub fn rescale_units(&self, lambda: &[f64]) -> Result<TwoLayerNet> {
        if lambda.len() != self.width() {
            return Err(Error::input(format!(
                "rescaling vector has length {}, expected {}",
                lambda.len(),
                self.width()
            )));
        }
        if let Some(bad) = lambda.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::param(format!("unit rescaling must be positive, got {bad}")));
        }
        Ok(TwoLayerNet {
            w: self.w.scale_rows(lambda),
            a: self.a.iter().zip(lambda).map(|(a, l)| a / l).collect(),
            b: self.b.iter().zip(lambda).map(|(b, l)| b * l).collect(),
            c: self.c,
        })
    }

    pub fn to_deep(&self) -> DeepNet {
        DeepNet {
            layers: vec![self.w.clone()],
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c,
        }
    }
}

/// `h(x) = aᵀ[W_{L−1}···W_1 x + b]_+ + c`; `layers[0]` is `W_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepNet {
    pub layers: Vec<Matrix>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl DeepNet {
    pub fn new(layers: Vec<Matrix>, a: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let net = Self { layers, a, b, c };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::input("a network needs at least one linear layer"))?;
        if first.cols() == 0 {
            return Err(Error::input("input dimension must be positive"));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::input(format!(
                    "layer W_{} has {} columns but W_{} has {} rows",
                    i + 2,
                    pair[1].cols(),
                    i + 1,
                    pair[0].rows()
                )));
            }
        }
        let k = self.width();
        if self.a.len() != k || self.b.len() != k {
            return Err(Error::input(format!(
                "last layer has {k} rows but a has {} and b has {} entries",
                self.a.len(),
                self.b.len()
            )));
        }
        for layer in &self.layers {
            layer.check_finite()?;
        }
        if !self.a.iter().chain(&self.b).all(|v| v.is_finite()) || !self.c.is_finite() {
            return Err(Error::input("network parameters must be finite"));
        }
        Ok(())
    }

    /// Depth `L`: the number of linear layers plus one.
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    /// Number of ReLU units `K`.
    pub fn width(&self) -> usize {
        self.layers.last().map_or(0, Matrix::rows)
    }

    fn linear_part(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.layers[0].matvec(x)?;
        for layer in &self.layers[1..] {
            z = layer.matvec(&z)?;
        }
        Ok(z)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let z = self.linear_part(x)?;
        Ok(z.iter()
            .zip(&self.b)
            .zip(&self.a)
            .map(|((zk, bk), ak)| ak * relu(zk + bk))
            .sum::<f64>()
            + self.c)
    }

    /// Forward pass over the rows of `x`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        (0..x.rows()).map(|i| self.forward(x.row(i))).collect()
    }

    /// Product of the linear layers, `W = W_{L−1}···W_1`.
    pub fn collapsed_weight(&self) -> Matrix {
        let mut w = self.layers[0].clone();
        for layer in &self.layers[1..] {
            w = layer.matmul(&w).expect("validated chain");
        }
        w
    }

    pub fn collapse(&self) -> TwoLayerNet {
        TwoLayerNet {
            w: self.collapsed_weight(),
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c,
        }
    }

    /// Sum of squares of all non-bias weights.
    pub fn weight_sq_sum(&self) -> f64 {
        dot(&self.a, &self.a) + self.layers.iter().map(Matrix::frobenius_sq).sum::<f64>()
    }

    /// `C_L(θ) = (‖a‖² + Σ‖W_i‖_F²) / L`; biases are excluded.
    pub fn cost_cl(&self) -> f64 {
        self.weight_sq_sum() / self.depth() as f64
    }

    /// Mean squared error over the rows of `x` and its exact gradient.
    ///
    /// The ReLU derivative at exactly zero is taken to be zero.
    pub fn loss_and_grads(&self, x: &Matrix, y: &[f64]) -> Result<(f64, NetGradients)> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::input("loss needs at least one sample"));
        }
        if y.len() != n {
            return Err(Error::input(format!("{n} inputs but {} targets", y.len())));
        }
        if x.cols() != self.input_dim() {
            return Err(Error::input(format!(
                "inputs have {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut grads = NetGradients::zeros_like(self);
        let mut loss = 0.0;
        let k = self.width();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, yi) in y.iter().enumerate() {
            let xi = x.row(i);
            // acts[j] is the input to layer j.
            acts.clear();
            acts.push(xi.to_vec());
            for layer in &self.layers[..self.layers.len() - 1] {
                let next = layer.matvec(acts.last().unwrap())?;
                acts.push(next);
            }
            let z = self.layers.last().unwrap().matvec(acts.last().unwrap())?;
            let pre: Vec<f64> = z.iter().zip(&self.b).map(|(z, b)| z + b).collect();
            let out: f64 = pre.iter().zip(&self.a).map(|(p, a)| a * relu(*p)).sum::<f64>() + self.c;
            let resid = out - yi;
            loss += resid * resid;
            let g = 2.0 * resid / n as f64;
            grads.c += g;
            let mut delta = vec![0.0; k];
            for j in 0..k {
                if pre[j] > 0.0 {
                    grads.a[j] += g * pre[j];
                    delta[j] = g * self.a[j];
                    grads.b[j] += delta[j];
                }
            }
            for li in (0..self.layers.len()).rev() {
                let input = &acts[li];
                let gl = &mut grads.layers[li];
                for (r, &dr) in delta.iter().enumerate() {
                    if dr != 0.0 {
                        gl.row_mut(r).iter_mut().zip(input).for_each(|(g, v)| *g += dr * v);
                    }
                }
                if li > 0 {
                    delta = self.layers[li].tr_matvec(&delta)?;
                }
            }
        }
        Ok((loss / n as f64, grads))
    }

    /// Parameter blocks in serialization order, flagged `true` for biases.
    pub fn blocks_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out: Vec<(&mut [f64], bool)> = self
            .layers
            .iter_mut()
            .map(|l| (l.as_mut_slice(), false))
            .collect();
        out.push((self.a.as_mut_slice(), false));
        out.push((self.b.as_mut_slice(), true));
        out.push((std::slice::from_mut(&mut self.c), true));
        out
    }

    pub fn blocks(&self) -> Vec<(&[f64], bool)> {
        let mut out: Vec<(&[f64], bool)> =
            self.layers.iter().map(|l| (l.as_slice(), false)).collect();
        out.push((self.a.as_slice(), false));
        out.push((self.b.as_slice(), true));
        out.push((std::slice::from_ref(&self.c), true));
        out
    }
}

/// Gradient of a scalar loss with respect to every [`DeepNet`] parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub layers: Vec<Matrix>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl NetGradients {
    pub fn zeros_like(net: &DeepNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.rows(), l.cols()))
                .collect(),
            a: vec![0.0; net.a.len()],
            b: vec![0.0; net.b.len()],
            c: 0.0,
        }
    }

    /// Same order as [`DeepNet::blocks`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().map(Matrix::as_slice).collect();
        out.push(&self.a);
        out.push(&self.b);
        out.push(std::slice::from_ref(&self.c));
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0_f64, |m, g| m.max(g.abs()))
    }
}
