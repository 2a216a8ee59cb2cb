// SPDX-License-Identifier: MIT OR Apache-2.0

//! Toy sequence encoder: embedding, three 1-D convolutions, one LSTM layer,
//! plus a per-position decoder head that plays the role of the synthesizer.
//!
//! Batches are laid out time-major (row `t * batch + b`) so each LSTM step is
//! a contiguous block of rows and convolutions become an unfold plus matmul.
//! Rows past the end of a sequence are zeroed after every convolution, which
//! makes batched and single-sequence forward passes agree exactly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{AcousticLabels, Utterance};
use crate::error::{arg, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{batches, cross_entropy, fingerprint, mse, Adam, Dense, DenseVars};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Conv1,
    Conv2,
    Conv3,
    Recurrent,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Conv1, Layer::Conv2, Layer::Conv3, Layer::Recurrent];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Conv1 => "conv1",
            Layer::Conv2 => "conv2",
            Layer::Conv3 => "conv3",
            Layer::Recurrent => "recurrent",
        }
    }

    pub fn parse(s: &str) -> Result<Layer> {
        match Layer::ALL.into_iter().find(|l| l.name() == s) {
            Some(l) => Ok(l),
            None => arg(format!("unknown layer id `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab: usize,
    pub classes: usize,
    pub embed_dim: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Final activation dimension `d`.
    pub hidden: usize,
    pub head_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab: 40,
            classes: 12,
            embed_dim: 32,
            channels: 64,
            kernel: 3,
            hidden: 64,
            head_hidden: 64,
            epochs: 15,
            batch_size: 32,
            learning_rate: 0.003,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncoderReport {
    pub epochs: usize,
    pub final_train_loss: f64,
    /// Mean squared error of the head's log-features on the validation split.
    pub val_log_mse: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    pub config: EncoderConfig,
    pub embedding: Matrix,
    pub convs: [Dense; 3],
    pub lstm: Dense,
    pub head_hidden: Dense,
    pub head_out: Dense,
    /// Standardisation of log-features used by the head, `[mean; 3]` and `[std; 3]`.
    pub target_mean: [f64; 3],
    pub target_std: [f64; 3],
    pub report: EncoderReport,
}

/// Hidden vectors of one sequence at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSequence {
    pub layer: Layer,
    pub acts: Matrix,
    pub model_hash: u64,
    pub seq_id: Option<usize>,
}

/// Per-position head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// `n x 3` log pitch, log duration, log energy.
    pub log_features: Matrix,
    /// `n x S` class logits.
    pub logits: Matrix,
}

impl HeadOutput {
    pub fn classes(&self) -> Vec<usize> {
        self.logits.argmax_rows()
    }

    pub fn to_labels(&self) -> AcousticLabels {
        let n = self.log_features.rows();
        let mut out = AcousticLabels::with_len(n);
        for i in 0..n {
            out.pitch[i] = libm::exp(self.log_features.get(i, 0));
            out.duration[i] = libm::exp(self.log_features.get(i, 1));
            out.energy[i] = libm::exp(self.log_features.get(i, 2));
        }
        out.semantic = self.classes();
        out
    }
}

struct Bound {
    embedding: Var,
    convs: [DenseVars; 3],
    lstm: DenseVars,
    head_hidden: DenseVars,
    head_out: DenseVars,
}

struct Forward {
    layers: [Var; 4],
    /// Time-major row of every real position, ordered by sequence then position.
    valid: Vec<usize>,
}

impl ToyEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.vocab == 0 || config.classes == 0 || config.hidden == 0 {
            return arg("encoder dimensions must be positive");
        }
        if config.kernel.is_multiple_of(2) {
            return arg("convolution kernel width must be odd");
        }
        let mut rng = Rng::new(config.seed);
        let c = config.channels;
        let k = config.kernel;
        let d = config.hidden;
        let embedding = rng.normal_matrix(config.vocab, config.embed_dim, 0.5);
        let convs = [
            Dense::new(&mut rng, k * config.embed_dim, c),
            Dense::new(&mut rng, k * c, c),
            Dense::new(&mut rng, k * c, c),
        ];
        let mut lstm = Dense::new(&mut rng, c + d, 4 * d);
        for j in d..2 * d {
            lstm.bias.set(0, j, 1.0);
        }
        let head_hidden = Dense::new(&mut rng, d, config.head_hidden);
        let head_out = Dense::new(&mut rng, config.head_hidden, 3 + config.classes);
        Ok(Self {
            config,
            embedding,
            convs,
            lstm,
            head_hidden,
            head_out,
            target_mean: [0.0; 3],
            target_std: [1.0; 3],
            report: EncoderReport::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.config.hidden
    }

    pub fn layer_dim(&self, layer: Layer) -> usize {
        match layer {
            Layer::Recurrent => self.config.hidden,
            _ => self.config.channels,
        }
    }

    fn params(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.embedding];
        for d in self
            .convs
            .iter()
            .chain([&self.lstm, &self.head_hidden, &self.head_out])
        {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.embedding];
        let [c1, c2, c3] = &mut self.convs;
        for d in [
            c1,
            c2,
            c3,
            &mut self.lstm,
            &mut self.head_hidden,
            &mut self.head_out,
        ] {
            let [w, b] = d.params_mut();
            v.push(w);
            v.push(b);
        }
        v
    }

    /// Stable hash of all weights.
    pub fn hash(&self) -> u64 {
        fingerprint(self.params())
    }

    fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            embedding: tape.leaf(self.embedding.clone()),
            convs: [
                self.convs[0].bind(tape),
                self.convs[1].bind(tape),
                self.convs[2].bind(tape),
            ],
            lstm: self.lstm.bind(tape),
            head_hidden: self.head_hidden.bind(tape),
            head_out: self.head_out.bind(tape),
        }
    }

    fn check_tokens(&self, seq: &[usize]) -> Result<()> {
        if seq.is_empty() {
            return arg("empty token sequence");
        }
        if let Some(&t) = seq.iter().find(|&&t| t >= self.config.vocab) {
            return arg(format!(
                "token id {t} outside vocabulary of {}",
                self.config.vocab
            ));
        }
        Ok(())
    }

    fn forward(&self, tape: &mut Tape, p: &Bound, batch: &[&[usize]]) -> Result<Forward> {
        for s in batch {
            self.check_tokens(s)?;
        }
        let b = batch.len();
        let steps = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        let rows = steps * b;
        let mut ids = vec![0usize; rows];
        let mut live = vec![false; rows];
        for (j, s) in batch.iter().enumerate() {
            for (t, &tok) in s.iter().enumerate() {
                ids[t * b + j] = tok;
                live[t * b + j] = true;
            }
        }
        let mask =
            |cols: usize| Matrix::from_fn(rows, cols, |r, _| if live[r] { 1.0 } else { 0.0 });
        let emb = tape.gather_rows(p.embedding, &ids)?;
        let m_emb = tape.leaf(mask(self.config.embed_dim));
        let mut h = tape.mul(emb, m_emb)?;
        let m_conv = tape.leaf(mask(self.config.channels));
        let mut conv_out = [h; 3];
        for (i, conv) in p.convs.iter().enumerate() {
            let u = tape.unfold(h, b, self.config.kernel)?;
            let z = conv.forward(tape, u)?;
            let a = tape.relu(z);
            h = tape.mul(a, m_conv)?;
            conv_out[i] = h;
        }
        let d = self.config.hidden;
        let mut state_h = tape.leaf(Matrix::zeros(b, d));
        let mut state_c = tape.leaf(Matrix::zeros(b, d));
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x_t = tape.slice_rows(h, t * b, b)?;
            let xin = tape.concat_cols(&[x_t, state_h])?;
            let gates = p.lstm.forward(tape, xin)?;
            let gi = tape.slice_cols(gates, 0, d)?;
            let gf = tape.slice_cols(gates, d, d)?;
            let gg = tape.slice_cols(gates, 2 * d, d)?;
            let go = tape.slice_cols(gates, 3 * d, d)?;
            let i = tape.sigmoid(gi);
            let f = tape.sigmoid(gf);
            let g = tape.tanh(gg);
            let o = tape.sigmoid(go);
            let keep = tape.mul(f, state_c)?;
            let write = tape.mul(i, g)?;
            state_c = tape.add(keep, write)?;
            let squashed = tape.tanh(state_c);
            state_h = tape.mul(o, squashed)?;
            outs.push(state_h);
        }
        let recurrent = tape.concat_rows(&outs)?;
        let mut valid = Vec::new();
        for (j, s) in batch.iter().enumerate() {
            for t in 0..s.len() {
                valid.push(t * b + j);
            }
        }
        Ok(Forward {
            layers: [conv_out[0], conv_out[1], conv_out[2], recurrent],
            valid,
        })
    }

    fn head_forward(&self, tape: &mut Tape, p: &Bound, acts: Var) -> Result<Var> {
        let h = p.head_hidden.forward(tape, acts)?;
        let h = tape.tanh(h);
        p.head_out.forward(tape, h)
    }

    /// Activations of every sequence in `batch` at `layer`, one matrix per sequence.
    pub fn extract_batch(&self, batch: &[&[usize]], layer: Layer) -> Result<Vec<Matrix>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(64) {
            let mut tape = Tape::new();
            let p = self.bind(&mut tape);
            let fw = self.forward(&mut tape, &p, chunk)?;
            let all = tape.value(fw.layers[layer.index()]);
            let mut cursor = 0;
            for s in chunk {
                out.push(all.select_rows(&fw.valid[cursor..cursor + s.len()]));
                cursor += s.len();
            }
        }
        Ok(out)
    }

    /// Forward pass with capture at `layer`.
    pub fn extract_activations(
        &self,
        tokens: &[usize],
        layer: Layer,
    ) -> Result<ActivationSequence> {
        let acts = self
            .extract_batch(&[tokens], layer)?
            .pop()
            .expect("one sequence");
        Ok(ActivationSequence {
            layer,
            acts,
            model_hash: self.hash(),
            seq_id: None,
        })
    }

    /// Apply the decoder head to final-layer activations (`n x d`).
    pub fn head(&self, acts: &Matrix) -> Result<HeadOutput> {
        if acts.cols() != self.dim() {
            return Err(Error::Dimension {
                op: "decode_acoustics",
                left: acts.shape(),
                right: (acts.rows(), self.dim()),
            });
        }
        let h = self.head_hidden.apply(acts)?.map(libm::tanh);
        let out = self.head_out.apply(&h)?;
        let n = acts.rows();
        let log_features = Matrix::from_fn(n, 3, |r, c| {
            out.get(r, c) * self.target_std[c] + self.target_mean[c]
        });
        let s = self.config.classes;
        let logits = Matrix::from_fn(n, s, |r, c| out.get(r, 3 + c));
        Ok(HeadOutput {
            log_features,
            logits,
        })
    }

    /// Realized acoustics for a final-layer activation sequence.
    pub fn decode_acoustics(&self, acts: &ActivationSequence) -> Result<AcousticLabels> {
        if acts.layer != Layer::Recurrent {
            return arg(format!(
                "decode_acoustics needs recurrent activations, got {}",
                acts.layer.name()
            ));
        }
        Ok(self.head(&acts.acts)?.to_labels())
    }
}

fn standardized_targets(enc: &ToyEncoder, utts: &[&Utterance]) -> (Matrix, Vec<usize>) {
    let n: usize = utts.iter().map(|u| u.tokens.len()).sum();
    let mut targets = Matrix::zeros(n, 3);
    let mut classes = Vec::with_capacity(n);
    let mut r = 0;
    for u in utts {
        for i in 0..u.tokens.len() {
            let lf = u.labels.log_features(i);
            for k in 0..3 {
                targets.set(r, k, (lf[k] - enc.target_mean[k]) / enc.target_std[k]);
            }
            classes.push(u.labels.semantic[i]);
            r += 1;
        }
    }
    (targets, classes)
}

/// Train the encoder and its head jointly on `train`; report on `val`.
pub fn train_toy_encoder(
    train: &[Utterance],
    val: &[Utterance],
    config: EncoderConfig,
) -> Result<ToyEncoder> {
    if train.is_empty() {
        return arg("empty training split");
    }
    let mut enc = ToyEncoder::new(config)?;
    // log-feature standardisation from the training split
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    let mut count = 0.0;
    for u in train {
        enc.check_tokens(&u.tokens)?;
        if u.labels.semantic.iter().any(|&c| c >= enc.config.classes) {
            return arg("semantic class outside encoder class count");
        }
        for i in 0..u.tokens.len() {
            let lf = u.labels.log_features(i);
            for k in 0..3 {
                sum[k] += lf[k];
                sq[k] += lf[k] * lf[k];
            }
            count += 1.0;
        }
    }
    for k in 0..3 {
        enc.target_mean[k] = sum[k] / count;
        let var = sq[k] / count - enc.target_mean[k] * enc.target_mean[k];
        enc.target_std[k] = libm::sqrt(var).max(1e-6);
    }
    let mut rng = Rng::new(enc.config.seed).fork(17);
    let mut opt = Adam::new(enc.config.learning_rate);
    let classes = enc.config.classes;
    let mut last = f64::NAN;
    for epoch in 0..enc.config.epochs {
        let mut total = 0.0;
        let order = batches(&mut rng, train.len(), enc.config.batch_size);
        for idx in &order {
            let utts: Vec<&Utterance> = idx.iter().map(|&i| &train[i]).collect();
            let seqs: Vec<&[usize]> = utts.iter().map(|u| u.tokens.as_slice()).collect();
            let (targets, labels) = standardized_targets(&enc, &utts);
            let mut tape = Tape::new();
            let p = enc.bind(&mut tape);
            let fw = enc.forward(&mut tape, &p, &seqs)?;
            let acts = tape.gather_rows(fw.layers[3], &fw.valid)?;
            let out = enc.head_forward(&mut tape, &p, acts)?;
            let reg = tape.slice_cols(out, 0, 3)?;
            let logits = tape.slice_cols(out, 3, classes)?;
            let tv = tape.leaf(targets);
            let l_reg = mse(&mut tape, reg, tv)?;
            let l_ce = cross_entropy(&mut tape, logits, &labels)?;
            let loss = tape.add(l_reg, l_ce)?;
            let lv = tape.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::Training {
                    stage: "encoder",
                    epoch,
                });
            }
            total += lv;
            tape.backward(loss)?;
            let grads = grads_of(&tape, &p);
            opt.step(&mut enc.params_mut(), &grads);
        }
        last = total / order.len() as f64;
    }
    enc.report = evaluate_encoder(&enc, val)?;
    enc.report.epochs = enc.config.epochs;
    enc.report.final_train_loss = last;
    Ok(enc)
}

fn grads_of(tape: &Tape, p: &Bound) -> Vec<Matrix> {
    let mut g = vec![tape.grad(p.embedding).clone()];
    for d in p.convs.iter().chain([&p.lstm, &p.head_hidden, &p.head_out]) {
        for m in d.grads(tape) {
            g.push(m.clone());
        }
    }
    g
}

/// Head log-feature MSE and class accuracy on a labelled set.
pub fn evaluate_encoder(enc: &ToyEncoder, utts: &[Utterance]) -> Result<EncoderReport> {
    if utts.is_empty() {
        return Ok(EncoderReport::default());
    }
    let seqs: Vec<&[usize]> = utts.iter().map(|u| u.tokens.as_slice()).collect();
    let acts = enc.extract_batch(&seqs, Layer::Recurrent)?;
    let mut se = 0.0;
    let mut correct = 0usize;
    let mut n = 0usize;
    for (u, a) in utts.iter().zip(&acts) {
        let out = enc.head(a)?;
        let cls = out.classes();
        for i in 0..u.tokens.len() {
            let lf = u.labels.log_features(i);
            for k in 0..3 {
                let e = out.log_features.get(i, k) - lf[k];
                se += e * e;
            }
            if cls[i] == u.labels.semantic[i] {
                correct += 1;
            }
            n += 1;
        }
    }
    Ok(EncoderReport {
        epochs: 0,
        final_train_loss: f64::NAN,
        val_log_mse: se / (3 * n) as f64,
        val_accuracy: correct as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec, Split};

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 8,
            channels: 12,
            hidden: 10,
            head_hidden: 12,
            epochs: 2,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn extract_shapes_and_layers_differ() {
        let enc = ToyEncoder::new(tiny_config()).unwrap();
        let toks = [1, 2, 3, 4, 5];
        let rec = enc.extract_activations(&toks, Layer::Recurrent).unwrap();
        assert_eq!(rec.acts.shape(), (5, 10));
        let again = enc.extract_activations(&toks, Layer::Recurrent).unwrap();
        assert_eq!(rec, again);
        let c1 = enc.extract_activations(&toks, Layer::Conv1).unwrap();
        assert_ne!(c1.acts, rec.acts);
    }

    #[test]
    fn batched_matches_single_sequence() {
        let enc = ToyEncoder::new(tiny_config()).unwrap();
        let a: &[usize] = &[3, 1, 4, 1, 5, 9, 2];
        let b: &[usize] = &[2, 7];
        let both = enc.extract_batch(&[a, b], Layer::Recurrent).unwrap();
        assert_eq!(
            both[1],
            enc.extract_batch(&[b], Layer::Recurrent).unwrap()[0]
        );
        assert_eq!(
            both[0],
            enc.extract_batch(&[a], Layer::Recurrent).unwrap()[0]
        );
        let c = enc.extract_batch(&[a, b], Layer::Conv2).unwrap();
        assert_eq!(c[1], enc.extract_batch(&[b], Layer::Conv2).unwrap()[0]);
    }

    #[test]
    fn unknown_layer_and_bad_tokens() {
        assert!(Layer::parse("conv9").is_err());
        assert_eq!(Layer::parse("conv2").unwrap(), Layer::Conv2);
        let enc = ToyEncoder::new(tiny_config()).unwrap();
        assert!(enc.extract_activations(&[99], Layer::Conv1).is_err());
    }

    #[test]
    fn head_is_per_position() {
        let enc = ToyEncoder::new(tiny_config()).unwrap();
        let mut rng = Rng::new(4);
        let x = rng.normal_matrix(4, 10, 0.5);
        let perm = [2, 0, 3, 1];
        let a = enc.head(&x).unwrap();
        let b = enc.head(&x.select_rows(&perm)).unwrap();
        assert_eq!(b.log_features, a.log_features.select_rows(&perm));
        assert_eq!(b.logits, a.logits.select_rows(&perm));
        // zero activations: bias path only, identical rows
        let z = enc.head(&Matrix::zeros(3, 10)).unwrap();
        assert_eq!(z.log_features.row(0), z.log_features.row(2));
        assert!(enc.head(&Matrix::zeros(3, 9)).is_err());
    }

    #[test]
    fn decode_requires_recurrent_layer() {
        let enc = ToyEncoder::new(tiny_config()).unwrap();
        let c = enc.extract_activations(&[1, 2], Layer::Conv3).unwrap();
        assert!(enc.decode_acoustics(&c).is_err());
    }

    #[test]
    fn constant_target_is_learned_exactly() {
        let spec = CorpusSpec {
            vocab: 1,
            classes: 1,
            polyphone_fraction: 0.0,
            withheld_polyphones: 0,
            context_gain: 0.0,
            train: 40,
            probe: 0,
            val: 10,
            test: 0,
            ..CorpusSpec::default()
        };
        let c = generate_corpus(&spec).unwrap();
        let cfg = EncoderConfig {
            vocab: 1,
            classes: 1,
            epochs: 30,
            ..tiny_config()
        };
        let enc = train_toy_encoder(c.split(Split::Train), c.split(Split::Val), cfg).unwrap();
        assert!(enc.report.val_log_mse < 1e-3, "{:?}", enc.report);
    }

    #[test]
    fn training_is_deterministic() {
        let spec = CorpusSpec {
            train: 30,
            probe: 0,
            val: 5,
            test: 0,
            ..CorpusSpec::default()
        };
        let c = generate_corpus(&spec).unwrap();
        let a =
            train_toy_encoder(c.split(Split::Train), c.split(Split::Val), tiny_config()).unwrap();
        let b =
            train_toy_encoder(c.split(Split::Train), c.split(Split::Val), tiny_config()).unwrap();
        assert_eq!(a, b);
    }
}
