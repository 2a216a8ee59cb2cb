// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small building blocks shared by the trainable models.

use alloc::vec::Vec;

use crate::error::Result;
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

/// Affine layer `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl Dense {
    pub fn new(rng: &mut Rng, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: rng.glorot(inputs, outputs),
            bias: Matrix::zeros(1, outputs),
        }
    }

    /// Gaussian-initialised weights with the given standard deviation.
    pub fn small(rng: &mut Rng, inputs: usize, outputs: usize, std: f64) -> Self {
        Self {
            weight: rng.normal_matrix(inputs, outputs, std),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> DenseVars {
        DenseVars {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }

    /// Plain evaluation without a tape.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

impl DenseVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.weight)?;
        tape.add_row(h, self.bias)
    }

    pub fn grads<'a>(&self, tape: &'a Tape) -> [&'a Matrix; 2] {
        [tape.grad(self.weight), tape.grad(self.bias)]
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: i32,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Apply one update. Parameter order must be stable across calls.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        debug_assert_eq!(params.len(), grads.len());
        if self.first.is_empty() {
            self.first = grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.steps as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.steps as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            for (j, (w, &gj)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.lr * mh / (libm::sqrt(vh) + self.eps);
            }
        }
    }
}

/// Mean squared error between two same-shape nodes (mean over all entries).
pub fn mse(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// Mean cross-entropy of row-wise logits against class ids.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let lp = tape.log_softmax_rows(logits);
    let picked = tape.pick(lp, labels)?;
    let m = tape.mean(picked);
    Ok(tape.neg(m))
}

/// Deterministic minibatch order for one epoch.
pub fn batches(rng: &mut Rng, n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.chunks(size.max(1)).map(|c| c.to_vec()).collect()
}

/// FNV-1a over the bit patterns of a set of matrices.
pub fn fingerprint<'a>(mats: impl IntoIterator<Item = &'a Matrix>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for m in mats {
        for v in m.as_slice() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}
