use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{OpsError, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub width: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            width: 64,
            steps: 2000,
            lr: 0.01,
            batch: 64,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn with_width(width: usize) -> Self {
        Self {
            width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.batch == 0 {
            return Err(OpsError::invalid("mlp width and batch must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.init_scale >= 0.0) {
            return Err(OpsError::invalid("mlp lr must be positive and init scale non-negative"));
        }
        Ok(())
    }
}

/// `f(x) = w2 · relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dim: usize,
    width: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl Mlp {
    pub fn new(dim: usize, width: usize, init_scale: f64, bias: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let sd1 = init_scale * (2.0 / dim.max(1) as f64).sqrt();
        let sd2 = init_scale * (1.0 / width as f64).sqrt();
        let n1 = Normal::new(0.0, sd1.max(f64::MIN_POSITIVE)).expect("finite sd");
        let n2 = Normal::new(0.0, sd2.max(f64::MIN_POSITIVE)).expect("finite sd");
        Self {
            dim,
            width,
            w1: (0..dim * width).map(|_| n1.sample(&mut rng)).collect(),
            b1: vec![0.0; width],
            w2: (0..width).map(|_| n2.sample(&mut rng)).collect(),
            b2: bias,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.width);
        let (c, d) = rest.split_at(self.width);
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
    }

    #[inline]
    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut out = self.b2;
        for j in 0..self.width {
            let row = &self.w1[j * self.dim..(j + 1) * self.dim];
            let z: f64 = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            if z > 0.0 {
                out += self.w2[j] * z;
            }
        }
        out
    }

    /// Mean squared error over `rows` and its gradient in `params()` order.
    pub fn loss_and_grad(&self, x: &[f64], rows: &[usize], y: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.num_params()];
        let (gw1, rest) = grad.split_at_mut(self.w1.len());
        let (gb1, rest) = rest.split_at_mut(self.width);
        let (gw2, gb2) = rest.split_at_mut(self.width);
        let mut hidden = vec![0.0; self.width];
        let mut loss = 0.0;
        let inv = 1.0 / rows.len() as f64;
        for &i in rows {
            let xi = &x[i * self.dim..(i + 1) * self.dim];
            let mut out = self.b2;
            for (j, hj) in hidden.iter_mut().enumerate() {
                let row = &self.w1[j * self.dim..(j + 1) * self.dim];
                let z: f64 = self.b1[j] + row.iter().zip(xi).map(|(w, v)| w * v).sum::<f64>();
                *hj = z.max(0.0);
                out += self.w2[j] * *hj;
            }
            let err = out - y[i];
            loss += err * err * inv;
            let g = 2.0 * err * inv;
            gb2[0] += g;
            for j in 0..self.width {
                if hidden[j] > 0.0 {
                    gw2[j] += g * hidden[j];
                    let gz = g * self.w2[j];
                    gb1[j] += gz;
                    for (gw, v) in gw1[j * self.dim..(j + 1) * self.dim].iter_mut().zip(xi) {
                        *gw += gz * v;
                    }
                }
            }
        }
        (loss, grad)
    }
}

/// Plain mini-batch gradient descent with a fixed step budget. The output
/// bias starts at the target mean.
pub(super) fn train(x: &[f64], dim: usize, rows: &[usize], y: &[f64], cfg: &MlpConfig) -> Result<(Mlp, Vec<f64>)> {
    cfg.validate()?;
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
    let mut net = Mlp::new(dim, cfg.width, cfg.init_scale, mean, cfg.seed);
    let mut rng = rng_from_seed(cfg.seed ^ 0x5eed);
    let mut order = rows.to_vec();
    let mut pos = order.len();
    let mut params = net.params();
    let mut trace = Vec::new();
    let every = (cfg.steps / 20).max(1);
    for step in 0..cfg.steps {
        if pos + cfg.batch > order.len() {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let end = (pos + cfg.batch).min(order.len());
        let (loss, grad) = net.loss_and_grad(x, &order[pos..end], y);
        pos = end;
        if !loss.is_finite() {
            return Err(OpsError::Numeric(format!("mlp loss diverged at step {step}")));
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.lr * g;
        }
        net.set_params(&params);
        if step % every == 0 {
            trace.push(loss);
        }
    }
    Ok((net, trace))
}
