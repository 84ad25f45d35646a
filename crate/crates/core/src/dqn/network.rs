//! Small fully connected Q-network with ReLU hidden layers, hand-written
//! backpropagation and an Adam optimiser.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{domain, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out × in
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Multi-layer perceptron; ReLU on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// He-uniform weights, zero biases. `sizes` lists input, hidden and output widths.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(domain(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound)),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.ncols()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> DVector<f64> {
        let out = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x));
        out.column(0).into_owned()
    }

    /// Columns are samples.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            if k < last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Flattened parameters: per layer, W in column-major order then b.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(domain(format!("expected {} parameters, got {}", self.num_params(), p.len())));
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    /// Mean squared error between Q(x_j, a_j) and y_j over the batch, with
    /// its gradient in the flattened parameter layout.
    pub fn td_loss_and_grad(&self, x: &DMatrix<f64>, actions: &[usize], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let batch = x.ncols();
        if actions.len() != batch || targets.len() != batch || batch == 0 {
            return Err(domain("batch, action and target sizes disagree"));
        }
        if x.nrows() != self.input_dim() {
            return Err(domain("input width does not match the network"));
        }
        let last = self.layers.len() - 1;
        // Forward pass keeping pre-activations.
        let mut acts = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            let a = if k < last { z.map(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
            acts.push(a);
        }
        let out = acts.last().unwrap();
        let mut delta = DMatrix::zeros(out.nrows(), batch);
        let mut loss = 0.0;
        for j in 0..batch {
            let a = actions[j];
            if a >= out.nrows() {
                return Err(domain(format!("action {a} out of range")));
            }
            let err = out[(a, j)] - targets[j];
            loss += err * err;
            delta[(a, j)] = 2.0 * err / batch as f64;
        }
        loss /= batch as f64;

        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let gw = &delta * acts[k].transpose();
            let gb = delta.column_sum();
            if k > 0 {
                let mut back = self.layers[k].w.tr_mul(&delta);
                back.zip_apply(&pre[k - 1], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in &grads {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(gb.as_slice());
        }
        Ok((loss, flat))
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}
