// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation manifold: a β-VAE whose latent space hosts manifold-preserving
//! edits, and a VQ codebook over that latent space supplying prototypes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg, Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::nn::{batches, fingerprint, Adam, Dense, DenseVars};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub latent: usize,
    pub hidden: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Drop the tanh nonlinearities (linear autoencoder).
    pub linear: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            latent: 16,
            hidden: 64,
            beta: 0.04,
            learning_rate: 0.0002,
            epochs: 200,
            batch_size: 64,
            seed: 7,
            linear: false,
        }
    }
}

/// β-VAE over activation vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodec {
    pub config: CodecConfig,
    pub dim: usize,
    /// `d -> h -> h -> 2k` (mean, log-variance).
    pub encoder: [Dense; 3],
    /// `k -> h -> h -> d`.
    pub decoder: [Dense; 3],
    /// Per-entry reconstruction MSE of posterior means on the training set.
    pub reconstruction_error: f64,
}

#[derive(Clone, Copy)]
struct Stack([DenseVars; 3]);

impl Stack {
    fn bind(layers: &[Dense; 3], tape: &mut Tape) -> Self {
        Stack([
            layers[0].bind(tape),
            layers[1].bind(tape),
            layers[2].bind(tape),
        ])
    }

    fn forward(&self, tape: &mut Tape, x: Var, linear: bool) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.0.iter().enumerate() {
            h = l.forward(tape, h)?;
            if i < 2 && !linear {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}

fn apply_stack(layers: &[Dense; 3], x: &Matrix, linear: bool) -> Result<Matrix> {
    let mut h = x.clone();
    for (i, l) in layers.iter().enumerate() {
        h = l.apply(&h)?;
        if i < 2 && !linear {
            h = h.map(libm::tanh);
        }
    }
    Ok(h)
}

fn stack_params(layers: &mut [Dense; 3]) -> impl Iterator<Item = &mut Matrix> + '_ {
    layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
}

fn stack_grads<'a>(tape: &'a Tape, s: &'a Stack) -> impl Iterator<Item = Matrix> + 'a {
    s.0.iter()
        .flat_map(move |l| [tape.grad(l.weight).clone(), tape.grad(l.bias).clone()])
}

impl LatentCodec {
    pub fn new(dim: usize, config: CodecConfig) -> Result<Self> {
        if config.latent == 0 || config.latent >= dim {
            return arg(format!(
                "latent dimension {} must satisfy 0 < k < d = {dim}",
                config.latent
            ));
        }
        Self::new_unchecked(dim, config)
    }

    fn new_unchecked(dim: usize, config: CodecConfig) -> Result<Self> {
        if !(config.beta >= 0.0) || !(config.learning_rate > 0.0) {
            return arg("beta must be >= 0 and learning rate > 0");
        }
        let mut rng = Rng::new(config.seed);
        let (k, h) = (config.latent, config.hidden);
        let encoder = [
            Dense::new(&mut rng, dim, h),
            Dense::new(&mut rng, h, h),
            Dense::new(&mut rng, h, 2 * k),
        ];
        let decoder = [
            Dense::new(&mut rng, k, h),
            Dense::new(&mut rng, h, h),
            Dense::new(&mut rng, h, dim),
        ];
        Ok(Self {
            config,
            dim,
            encoder,
            decoder,
            reconstruction_error: f64::NAN,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent
    }

    pub fn hash(&self) -> u64 {
        fingerprint(
            self.encoder
                .iter()
                .chain(&self.decoder)
                .flat_map(|l| [&l.weight, &l.bias]),
        )
    }

    fn check(&self, x: &Matrix, cols: usize, op: &'static str) -> Result<()> {
        if x.cols() != cols {
            return Err(Error::Dimension {
                op,
                left: x.shape(),
                right: (x.rows(), cols),
            });
        }
        Ok(())
    }

    /// Posterior means for each row of `x` (`n x d -> n x k`).
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x, self.dim, "encode")?;
        let out = apply_stack(&self.encoder, x, self.config.linear)?;
        let k = self.config.latent;
        Ok(Matrix::from_fn(x.rows(), k, |r, c| out.get(r, c)))
    }

    /// Decoder `g` (`n x k -> n x d`).
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.check(z, self.config.latent, "decode")?;
        apply_stack(&self.decoder, z, self.config.linear)
    }

    /// Differentiable decoder on a tape.
    pub fn decode_var(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let s = Stack::bind(&self.decoder, tape);
        s.forward(tape, z, self.config.linear)
    }

    /// `||x - g(encode(x))||` per row, an off-manifold score.
    pub fn residual(&self, x: &Matrix) -> Result<Vec<f64>> {
        let back = self.decode(&self.encode(x)?)?;
        Ok((0..x.rows())
            .map(|r| libm::sqrt(sq_dist(x.row(r), back.row(r))))
            .collect())
    }

    /// Per-entry reconstruction MSE through posterior means.
    pub fn reconstruction_mse(&self, x: &Matrix) -> Result<f64> {
        let back = self.decode(&self.encode(x)?)?;
        Ok(x.sub(&back)?.sq_norm() / x.len().max(1) as f64)
    }
}

/// Fit a β-VAE to the rows of `data`: per-sample squared reconstruction error
/// plus `beta * KL(q(z|x) || N(0, I))`, averaged over each minibatch.
pub fn train_codec(data: &Matrix, config: CodecConfig) -> Result<LatentCodec> {
    let codec = LatentCodec::new(data.cols(), config)?;
    fit_codec(codec, data)
}

/// As [`train_codec`] but without the `k < d` bottleneck check.
pub fn train_codec_unchecked(data: &Matrix, config: CodecConfig) -> Result<LatentCodec> {
    let codec = LatentCodec::new_unchecked(data.cols(), config)?;
    fit_codec(codec, data)
}

fn fit_codec(mut codec: LatentCodec, data: &Matrix) -> Result<LatentCodec> {
    let k = codec.config.latent;
    if data.rows() < 10 * k {
        return arg(format!(
            "codec needs at least {} samples, got {}",
            10 * k,
            data.rows()
        ));
    }
    let linear = codec.config.linear;
    let beta = codec.config.beta;
    let mut rng = Rng::new(codec.config.seed).fork(31);
    let mut opt = Adam::new(codec.config.learning_rate);
    for epoch in 0..codec.config.epochs {
        for idx in batches(&mut rng, data.rows(), codec.config.batch_size) {
            let x = data.select_rows(&idx);
            let b = idx.len() as f64;
            let noise = rng.normal_matrix(idx.len(), k, 1.0);
            let mut tape = Tape::new();
            let enc = Stack::bind(&codec.encoder, &mut tape);
            let dec = Stack::bind(&codec.decoder, &mut tape);
            let xv = tape.leaf(x);
            let stats = enc.forward(&mut tape, xv, linear)?;
            let mu = tape.slice_cols(stats, 0, k)?;
            let logvar = tape.slice_cols(stats, k, k)?;
            let half = tape.scale(logvar, 0.5);
            let std = tape.exp(half);
            let eps = tape.leaf(noise);
            let jitter = tape.mul(std, eps)?;
            let z = tape.add(mu, jitter)?;
            let recon = dec.forward(&mut tape, z, linear)?;
            let diff = tape.sub(recon, xv)?;
            let sq = tape.square(diff);
            let rec = tape.sum(sq);
            let rec = tape.scale(rec, 1.0 / b);
            // KL = -0.5 * sum(1 + logvar - mu^2 - exp(logvar))
            let mu2 = tape.square(mu);
            let var = tape.exp(logvar);
            let a = tape.sub(logvar, mu2)?;
            let a = tape.sub(a, var)?;
            let s = tape.sum(a);
            let kl = tape.scale(s, -0.5 / b);
            let kl_const = tape.leaf(Matrix::scalar(-0.5 * k as f64));
            let kl = tape.sub(kl, kl_const)?;
            let klw = tape.scale(kl, beta);
            let loss = tape.add(rec, klw)?;
            if !tape.scalar(loss).is_finite() {
                return Err(Error::Training {
                    stage: "codec",
                    epoch,
                });
            }
            tape.backward(loss)?;
            let grads: Vec<Matrix> = stack_grads(&tape, &enc)
                .chain(stack_grads(&tape, &dec))
                .collect();
            let mut params: Vec<&mut Matrix> = stack_params(&mut codec.encoder)
                .chain(stack_params(&mut codec.decoder))
                .collect();
            opt.step(&mut params, &grads);
        }
    }
    codec.reconstruction_error = codec.reconstruction_mse(data)?;
    Ok(codec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookConfig {
    pub codes: usize,
    pub hidden: usize,
    pub commitment: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            codes: 128,
            hidden: 32,
            commitment: 0.25,
            learning_rate: 0.002,
            epochs: 40,
            batch_size: 64,
            seed: 7,
        }
    }
}

/// VQ-VAE over codec latents: `Enc: R^k -> R^D`, codebook `K x D`, `Dec: R^D -> R^k`, with `D = k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeCodebook {
    pub config: CodebookConfig,
    pub latent: usize,
    pub encoder: [Dense; 2],
    pub embeddings: Matrix,
    pub decoder: [Dense; 2],
}

impl PrototypeCodebook {
    pub fn codes(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn hash(&self) -> u64 {
        fingerprint(
            self.encoder
                .iter()
                .chain(&self.decoder)
                .flat_map(|l| [&l.weight, &l.bias])
                .chain([&self.embeddings]),
        )
    }

    fn enc(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.latent {
            return Err(Error::Dimension {
                op: "quantize",
                left: z.shape(),
                right: (z.rows(), self.latent),
            });
        }
        let h = self.encoder[0].apply(z)?.map(libm::tanh);
        self.encoder[1].apply(&h)
    }

    fn dec(&self, e: &Matrix) -> Result<Matrix> {
        let h = self.decoder[0].apply(e)?.map(libm::tanh);
        self.decoder[1].apply(&h)
    }

    /// Nearest code to `Enc(z)` for a single latent; ties go to the lower index.
    pub fn quantize(&self, z: &[f64]) -> Result<(usize, Vec<f64>)> {
        let ze = self.enc(&Matrix::row_vector(z))?;
        let k = nearest_row(&self.embeddings, ze.row(0));
        Ok((k, self.embeddings.row(k).to_vec()))
    }

    /// Code index for every row of `z`.
    pub fn assign(&self, z: &Matrix) -> Result<Vec<usize>> {
        let ze = self.enc(z)?;
        Ok((0..ze.rows())
            .map(|r| nearest_row(&self.embeddings, ze.row(r)))
            .collect())
    }

    /// Decoded prototype `Dec(e_k)` of `z`.
    pub fn prototype(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (_, e) = self.quantize(z)?;
        Ok(self.dec(&Matrix::row_vector(&e))?.row(0).to_vec())
    }

    /// All decoded prototypes (`K x k`).
    pub fn prototypes(&self) -> Result<Matrix> {
        self.dec(&self.embeddings)
    }

    /// `alpha * ||z - proto(z)||^2`.
    pub fn prototype_loss(&self, z: &[f64], alpha: f64) -> Result<f64> {
        if !(alpha >= 0.0) {
            return arg("prototype weight must be non-negative");
        }
        if alpha == 0.0 {
            return Ok(0.0);
        }
        let p = self.prototype(z)?;
        Ok(alpha * sq_dist(z, &p))
    }

    /// Rejects codebooks with duplicate or non-finite rows.
    pub fn validate(&self) -> Result<()> {
        if !self.embeddings.is_finite() {
            return arg("codebook has non-finite entries");
        }
        for i in 0..self.codes() {
            for j in 0..i {
                if self.embeddings.row(i) == self.embeddings.row(j) {
                    return arg(format!("codebook rows {j} and {i} are identical"));
                }
            }
        }
        Ok(())
    }
}

/// Index of the row of `m` closest to `q`; ties go to the lower index.
pub fn nearest_row(m: &Matrix, q: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for r in 0..m.rows() {
        let d = sq_dist(m.row(r), q);
        if d < best_d {
            best = r;
            best_d = d;
        }
    }
    best
}

/// Train a VQ-VAE on latent vectors with the straight-through estimator,
/// codebook loss `||sg(Enc z) - e||^2` and commitment `c * ||Enc z - sg(e)||^2`.
/// Codes unused during an epoch are re-seeded from encoded samples.
pub fn train_codebook(latents: &Matrix, config: CodebookConfig) -> Result<PrototypeCodebook> {
    let n = latents.rows();
    let k_codes = config.codes;
    if k_codes == 0 || k_codes > n {
        return arg(format!("{k_codes} codes requested for {n} samples"));
    }
    let dim = latents.cols();
    let mut rng = Rng::new(config.seed);
    let mut book = PrototypeCodebook {
        latent: dim,
        encoder: [
            Dense::new(&mut rng, dim, config.hidden),
            Dense::new(&mut rng, config.hidden, dim),
        ],
        embeddings: Matrix::zeros(k_codes, dim),
        decoder: [
            Dense::new(&mut rng, dim, config.hidden),
            Dense::new(&mut rng, config.hidden, dim),
        ],
        config,
    };
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    book.embeddings = book.enc(&latents.select_rows(&order[..k_codes]))?;
    let mut opt = Adam::new(book.config.learning_rate);
    for epoch in 0..book.config.epochs {
        let mut usage = vec![0usize; k_codes];
        for idx in batches(&mut rng, n, book.config.batch_size) {
            let z = latents.select_rows(&idx);
            let mut tape = Tape::new();
            let e0 = book.encoder[0].bind(&mut tape);
            let e1 = book.encoder[1].bind(&mut tape);
            let d0 = book.decoder[0].bind(&mut tape);
            let d1 = book.decoder[1].bind(&mut tape);
            let cb = tape.leaf(book.embeddings.clone());
            let zv = tape.leaf(z);
            let h = e0.forward(&mut tape, zv)?;
            let h = tape.tanh(h);
            let ze = e1.forward(&mut tape, h)?;
            let ze_val = tape.value(ze).clone();
            let codes: Vec<usize> = (0..ze_val.rows())
                .map(|r| nearest_row(&book.embeddings, ze_val.row(r)))
                .collect();
            for &c in &codes {
                usage[c] += 1;
            }
            let e = tape.gather_rows(cb, &codes)?;
            let e_val = tape.value(e).clone();
            // straight-through: q = ze + sg(e - ze)
            let shift = tape.leaf(e_val.sub(&ze_val)?);
            let q = tape.add(ze, shift)?;
            let h = d0.forward(&mut tape, q)?;
            let h = tape.tanh(h);
            let recon = d1.forward(&mut tape, h)?;
            let rec = crate::nn::mse(&mut tape, recon, zv)?;
            let ze_sg = tape.leaf(ze_val);
            let book_loss = crate::nn::mse(&mut tape, ze_sg, e)?;
            let e_sg = tape.leaf(e_val);
            let commit = crate::nn::mse(&mut tape, ze, e_sg)?;
            let commit = tape.scale(commit, book.config.commitment);
            let l = tape.add(rec, book_loss)?;
            let loss = tape.add(l, commit)?;
            if !tape.scalar(loss).is_finite() {
                return Err(Error::Training {
                    stage: "codebook",
                    epoch,
                });
            }
            tape.backward(loss)?;
            let grads: Vec<Matrix> = [e0, e1, d0, d1]
                .iter()
                .flat_map(|l| [tape.grad(l.weight).clone(), tape.grad(l.bias).clone()])
                .chain([tape.grad(cb).clone()])
                .collect();
            let [a, b] = &mut book.encoder;
            let [c, d] = &mut book.decoder;
            let mut params: Vec<&mut Matrix> = [a, b, c, d]
                .into_iter()
                .flat_map(|l| [&mut l.weight, &mut l.bias])
                .chain([&mut book.embeddings])
                .collect();
            opt.step(&mut params, &grads);
        }
        if epoch + 1 < book.config.epochs {
            let dead: Vec<usize> = (0..k_codes).filter(|&c| usage[c] == 0).collect();
            if !dead.is_empty() {
                let pick: Vec<usize> = dead.iter().map(|_| rng.below(n)).collect();
                let fresh = book.enc(&latents.select_rows(&pick))?;
                for (i, &c) in dead.iter().enumerate() {
                    book.embeddings.row_mut(c).copy_from_slice(fresh.row(i));
                }
            }
        }
    }
    book.validate()?;
    Ok(book)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::grad_check;

    /// Points on a 2-D affine subspace of R^8.
    fn subspace_data(n: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        let basis = rng.normal_matrix(2, 8, 0.4);
        let offset = rng.normal_matrix(1, 8, 0.2);
        let coeffs = rng.normal_matrix(n, 2, 1.0);
        coeffs.matmul(&basis).unwrap().add_row(&offset).unwrap()
    }

    fn quick(latent: usize) -> CodecConfig {
        CodecConfig {
            latent,
            hidden: 16,
            epochs: 150,
            learning_rate: 0.003,
            batch_size: 32,
            ..CodecConfig::default()
        }
    }

    #[test]
    fn bottleneck_must_be_smaller_than_input() {
        let data = subspace_data(200, 1);
        assert!(train_codec(&data, quick(8)).is_err());
        assert!(train_codec(&data.select_rows(&[0, 1, 2]), quick(2)).is_err());
    }

    #[test]
    fn recovers_two_dimensional_subspace() {
        let data = subspace_data(400, 2);
        let cfg = CodecConfig {
            beta: 0.0,
            linear: true,
            ..quick(2)
        };
        let codec = train_codec(&data, cfg).unwrap();
        assert!(
            codec.reconstruction_error < 1e-3,
            "{}",
            codec.reconstruction_error
        );
    }

    #[test]
    fn kl_weight_costs_reconstruction() {
        let data = subspace_data(400, 3);
        let plain = train_codec_unchecked(
            &data,
            CodecConfig {
                beta: 0.0,
                linear: true,
                ..quick(8)
            },
        )
        .unwrap();
        let heavy = train_codec_unchecked(
            &data,
            CodecConfig {
                beta: 0.5,
                linear: true,
                ..quick(8)
            },
        )
        .unwrap();
        assert!(plain.reconstruction_error < heavy.reconstruction_error);
    }

    #[test]
    fn codec_training_is_deterministic_and_encode_is_pure() {
        let data = subspace_data(200, 4);
        let cfg = CodecConfig {
            epochs: 5,
            ..quick(2)
        };
        let a = train_codec(&data, cfg.clone()).unwrap();
        let b = train_codec(&data, cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.encode(&data).unwrap(), a.encode(&data).unwrap());
        let round = a.reconstruction_mse(&data).unwrap();
        assert!(round <= 2.0 * a.reconstruction_error);
    }

    #[test]
    fn decoder_gradient_matches_finite_differences() {
        let data = subspace_data(200, 5);
        let codec = train_codec(
            &data,
            CodecConfig {
                epochs: 3,
                ..quick(3)
            },
        )
        .unwrap();
        let mut rng = Rng::new(6);
        let w = rng.normal_matrix(8, 1, 1.0);
        for _ in 0..50 {
            let z = rng.normal_matrix(1, 3, 1.0);
            let err = grad_check(
                |t, v| {
                    let x = codec.decode_var(t, v)?;
                    let wv = t.leaf(w.clone());
                    t.matmul(x, wv)
                },
                &z,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    fn clusters(k: usize, per: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = Rng::new(seed);
        let centers = Matrix::from_fn(k, 3, |r, c| {
            // well separated: vertices on a scaled grid
            4.0 * ((r >> c) & 1) as f64 + if c == 2 { 4.0 * (r / 8) as f64 } else { 0.0 }
        });
        let mut rows = Vec::new();
        for r in 0..k {
            for _ in 0..per {
                let p: Vec<f64> = centers
                    .row(r)
                    .iter()
                    .map(|v| v + 0.02 * rng.normal())
                    .collect();
                rows.push(p);
            }
        }
        (centers, Matrix::from_rows(&rows).unwrap())
    }

    fn book_cfg(codes: usize) -> CodebookConfig {
        CodebookConfig {
            codes,
            epochs: 60,
            learning_rate: 0.005,
            ..CodebookConfig::default()
        }
    }

    #[test]
    fn codebook_finds_cluster_centres() {
        let (centers, data) = clusters(4, 40, 9);
        let book = train_codebook(&data, book_cfg(4)).unwrap();
        let protos = book.prototypes().unwrap();
        let sep = 4.0;
        let mut haus: f64 = 0.0;
        for r in 0..4 {
            let to_proto = (0..4)
                .map(|j| sq_dist(centers.row(r), protos.row(j)))
                .fold(f64::INFINITY, f64::min);
            let to_center = (0..4)
                .map(|j| sq_dist(protos.row(r), centers.row(j)))
                .fold(f64::INFINITY, f64::min);
            haus = haus.max(libm::sqrt(to_proto)).max(libm::sqrt(to_center));
        }
        assert!(haus < sep / 4.0, "hausdorff {haus}");
    }

    #[test]
    fn single_code_has_constant_prototype() {
        let (_, data) = clusters(2, 20, 10);
        let book = train_codebook(
            &data,
            CodebookConfig {
                epochs: 3,
                ..book_cfg(1)
            },
        )
        .unwrap();
        let p0 = book.prototype(data.row(0)).unwrap();
        for r in 0..data.rows() {
            assert_eq!(book.prototype(data.row(r)).unwrap(), p0);
        }
    }

    #[test]
    fn codebook_deterministic_and_sized() {
        let (_, data) = clusters(4, 10, 11);
        let a = train_codebook(
            &data,
            CodebookConfig {
                epochs: 4,
                ..book_cfg(4)
            },
        )
        .unwrap();
        let b = train_codebook(
            &data,
            CodebookConfig {
                epochs: 4,
                ..book_cfg(4)
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(train_codebook(&data, book_cfg(41)).is_err());
    }

    #[test]
    fn quantize_tie_breaks_low() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]]).unwrap();
        assert_eq!(nearest_row(&m, &[0.0, 0.0]), 0);
        assert_eq!(nearest_row(&m, &[-1.0, 0.0]), 1);
    }

    #[test]
    fn prototype_loss_arithmetic() {
        let (_, data) = clusters(2, 20, 12);
        let book = train_codebook(
            &data,
            CodebookConfig {
                epochs: 3,
                ..book_cfg(2)
            },
        )
        .unwrap();
        let z = data.row(0);
        let p = book.prototype(z).unwrap();
        assert_eq!(book.prototype_loss(&p, 0.0).unwrap(), 0.0);
        assert_eq!(book.prototype_loss(z, 0.0).unwrap(), 0.0);
        let expect = 0.1 * sq_dist(z, &p);
        assert!((book.prototype_loss(z, 0.1).unwrap() - expect).abs() < 1e-12);
        assert!(book.prototype_loss(z, -1.0).is_err());
        // a point at distance exactly 2 from its prototype
        let mut dir: Vec<f64> = vec![0.0; 3];
        dir[0] = 2.0;
        let shifted: Vec<f64> = p.iter().zip(&dir).map(|(a, b)| a + b).collect();
        if book.prototype(&shifted).unwrap() == p {
            assert!((book.prototype_loss(&shifted, 0.1).unwrap() - 0.4).abs() < 1e-12);
        }
    }
}
