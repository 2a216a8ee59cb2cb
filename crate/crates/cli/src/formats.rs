// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk formats: `CFA1` matrices, the corpus file and key/value metadata.
//!
//! Multi-file artifacts (model, probe, codec, codebook) are directories of
//! `.cfa` matrices plus a `meta.csv` sidecar.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cfedit_core::corpus::{token_table, AcousticLabels, Corpus, CorpusSpec, Utterance};
use cfedit_core::encoder::{EncoderConfig, EncoderReport, Layer, ToyEncoder};
use cfedit_core::manifold::{CodebookConfig, CodecConfig, LatentCodec, PrototypeCodebook};
use cfedit_core::nn::Dense;
use cfedit_core::probes::{Probe, ProbeKind, Target};
use cfedit_core::Matrix;

use crate::error::{CliError, CliResult};

pub const CFA_MAGIC: &[u8; 4] = b"CFA1";
pub const CORPUS_HEADER: &str = "CFEDIT-CORPUS v1";

pub fn encode_cfa(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * m.len());
    out.extend_from_slice(CFA_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_cfa(bytes: &[u8], path: &Path) -> CliResult<Matrix> {
    if bytes.len() < 12 || &bytes[..4] != CFA_MAGIC {
        return Err(CliError::format(path, "missing CFA1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(4), word(8));
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(CliError::format(
            path,
            format!("{rows}x{cols} header but {} payload bytes", body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Matrix::new(rows, cols, data)?)
}

/// Reads a file, mapping "not found" to [`CliError::Missing`].
pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing(path.to_path_buf())
        } else {
            CliError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

pub fn load_cfa(path: &Path) -> CliResult<Matrix> {
    decode_cfa(&read_bytes(path)?, path)
}

/// Ordered `key,value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta {
    pub entries: Vec<(String, String)>,
}

impl Meta {
    pub fn push(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["key", "value"]).expect("in-memory write");
        for (k, v) in &self.entries {
            w.write_record([k, v]).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Parsed metadata with typed lookups.
#[derive(Debug, Clone)]
pub struct MetaMap {
    path: PathBuf,
    map: BTreeMap<String, String>,
}

impl MetaMap {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = read_bytes(path)?;
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let mut map = BTreeMap::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
            if rec.len() != 2 {
                return Err(CliError::format(path, "expected key,value rows"));
            }
            map.insert(rec[0].to_string(), rec[1].to_string());
        }
        Ok(Self {
            path: path.to_path_buf(),
            map,
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let raw = self
            .map
            .get(key)
            .ok_or_else(|| CliError::format(&self.path, format!("missing key `{key}`")))?;
        raw.parse()
            .map_err(|_| CliError::format(&self.path, format!("bad value `{raw}` for `{key}`")))
    }

    pub fn get_str(&self, key: &str) -> CliResult<&str> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::format(&self.path, format!("missing key `{key}`")))
    }
}

/// Files making up one artifact, relative to its directory (or a single file).
#[derive(Debug, Clone, Default)]
pub struct Bundle {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Bundle {
    fn matrix(&mut self, name: &str, m: &Matrix) {
        self.files.push((format!("{name}.cfa"), encode_cfa(m)));
    }

    fn dense(&mut self, name: &str, d: &Dense) {
        self.matrix(&format!("{name}.weight"), &d.weight);
        self.matrix(&format!("{name}.bias"), &d.bias);
    }

    fn meta(&mut self, meta: &Meta) {
        self.files.push(("meta.csv".to_string(), meta.encode()));
    }
}

fn load_dense(dir: &Path, name: &str) -> CliResult<Dense> {
    Ok(Dense {
        weight: load_cfa(&dir.join(format!("{name}.weight.cfa")))?,
        bias: load_cfa(&dir.join(format!("{name}.bias.cfa")))?,
    })
}

// ---------------------------------------------------------------- corpus

fn join<T: Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn fixed(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.6}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn corpus_spec_meta(spec: &CorpusSpec) -> Meta {
    let mut m = Meta::default();
    m.push("vocab", spec.vocab)
        .push("classes", spec.classes)
        .push("min_len", spec.min_len)
        .push("max_len", spec.max_len)
        .push("polyphone_fraction", spec.polyphone_fraction)
        .push("withheld_polyphones", spec.withheld_polyphones)
        .push("context_gain", spec.context_gain)
        .push("seed", spec.seed)
        .push("train", spec.train)
        .push("probe", spec.probe)
        .push("val", spec.val)
        .push("test", spec.test);
    m
}

fn corpus_spec_from(meta: &MetaMap) -> CliResult<CorpusSpec> {
    Ok(CorpusSpec {
        vocab: meta.get("vocab")?,
        classes: meta.get("classes")?,
        min_len: meta.get("min_len")?,
        max_len: meta.get("max_len")?,
        polyphone_fraction: meta.get("polyphone_fraction")?,
        withheld_polyphones: meta.get("withheld_polyphones")?,
        context_gain: meta.get("context_gain")?,
        seed: meta.get("seed")?,
        train: meta.get("train")?,
        probe: meta.get("probe")?,
        val: meta.get("val")?,
        test: meta.get("test")?,
    })
}

/// `corpus.csv` (header line then CSV records) and its `corpus.meta.csv` sidecar.
pub fn encode_corpus(corpus: &Corpus) -> Vec<u8> {
    let mut out = format!("{CORPUS_HEADER}\n").into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seq_id", "tokens", "pitch", "duration", "energy", "semtok"])
        .expect("in-memory write");
    for u in &corpus.utterances {
        let l = &u.labels;
        w.write_record([
            u.id.to_string(),
            join(&u.tokens),
            fixed(&l.pitch),
            fixed(&l.duration),
            fixed(&l.energy),
            join(&l.semantic),
        ])
        .expect("in-memory write");
    }
    out.extend(w.into_inner().expect("in-memory flush"));
    out
}

fn parse_list<T: FromStr>(field: &str, path: &Path, what: &str) -> CliResult<Vec<T>> {
    field
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| CliError::format(path, format!("bad {what} entry `{t}`")))
        })
        .collect()
}

pub fn load_corpus(path: &Path, meta_path: &Path) -> CliResult<Corpus> {
    let spec = corpus_spec_from(&MetaMap::load(meta_path)?)?;
    let bytes = read_bytes(path)?;
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::format(path, "empty corpus file"))?;
    if bytes[..header_end]
        .strip_suffix(b"\r")
        .unwrap_or(&bytes[..header_end])
        != CORPUS_HEADER.as_bytes()
    {
        return Err(CliError::format(
            path,
            format!("expected header `{CORPUS_HEADER}`"),
        ));
    }
    let mut r = csv::Reader::from_reader(&bytes[header_end + 1..]);
    let mut utterances = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        if rec.len() != 6 {
            return Err(CliError::format(path, "expected 6 fields per record"));
        }
        let id: usize = rec[0]
            .parse()
            .map_err(|_| CliError::format(path, "bad seq_id"))?;
        let tokens: Vec<usize> = parse_list(&rec[1], path, "token")?;
        let labels = AcousticLabels {
            pitch: parse_list(&rec[2], path, "pitch")?,
            duration: parse_list(&rec[3], path, "duration")?,
            energy: parse_list(&rec[4], path, "energy")?,
            semantic: parse_list(&rec[5], path, "semtok")?,
        };
        let n = tokens.len();
        if [
            labels.pitch.len(),
            labels.duration.len(),
            labels.energy.len(),
            labels.semantic.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(CliError::format(
                path,
                format!("sequence {id}: label lengths differ"),
            ));
        }
        if id != utterances.len() {
            return Err(CliError::format(
                path,
                format!("sequence ids out of order at {id}"),
            ));
        }
        utterances.push(Utterance { id, tokens, labels });
    }
    if utterances.len() != spec.total() {
        return Err(CliError::format(
            path,
            format!(
                "{} sequences but metadata declares {}",
                utterances.len(),
                spec.total()
            ),
        ));
    }
    Ok(Corpus {
        table: token_table(&spec)?,
        spec,
        utterances,
    })
}

// ---------------------------------------------------------------- model

pub fn model_bundle(m: &ToyEncoder) -> Bundle {
    let mut b = Bundle::default();
    b.matrix("embedding", &m.embedding);
    for (i, c) in m.convs.iter().enumerate() {
        b.dense(&format!("conv{}", i + 1), c);
    }
    b.dense("lstm", &m.lstm);
    b.dense("head_hidden", &m.head_hidden);
    b.dense("head_out", &m.head_out);
    let c = &m.config;
    let mut meta = Meta::default();
    meta.push("vocab", c.vocab)
        .push("classes", c.classes)
        .push("embed_dim", c.embed_dim)
        .push("channels", c.channels)
        .push("kernel", c.kernel)
        .push("hidden", c.hidden)
        .push("head_hidden", c.head_hidden)
        .push("epochs", c.epochs)
        .push("batch_size", c.batch_size)
        .push("learning_rate", c.learning_rate)
        .push("seed", c.seed);
    for (i, f) in ["pitch", "duration", "energy"].iter().enumerate() {
        meta.push(&format!("mean_{f}"), m.target_mean[i])
            .push(&format!("std_{f}"), m.target_std[i]);
    }
    let r = &m.report;
    meta.push("final_train_loss", r.final_train_loss)
        .push("val_log_mse", r.val_log_mse)
        .push("val_accuracy", r.val_accuracy);
    b.meta(&meta);
    b
}

pub fn load_model(dir: &Path) -> CliResult<ToyEncoder> {
    let meta = MetaMap::load(&dir.join("meta.csv"))?;
    let config = EncoderConfig {
        vocab: meta.get("vocab")?,
        classes: meta.get("classes")?,
        embed_dim: meta.get("embed_dim")?,
        channels: meta.get("channels")?,
        kernel: meta.get("kernel")?,
        hidden: meta.get("hidden")?,
        head_hidden: meta.get("head_hidden")?,
        epochs: meta.get("epochs")?,
        batch_size: meta.get("batch_size")?,
        learning_rate: meta.get("learning_rate")?,
        seed: meta.get("seed")?,
    };
    let mut m = ToyEncoder::new(config)?;
    let expect = |got: &Matrix, want: &Matrix, name: &str| -> CliResult<()> {
        if got.shape() != want.shape() {
            return Err(CliError::format(
                dir,
                format!(
                    "{name}: shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                ),
            ));
        }
        Ok(())
    };
    let emb = load_cfa(&dir.join("embedding.cfa"))?;
    expect(&emb, &m.embedding, "embedding")?;
    m.embedding = emb;
    let swap = |slot: &mut Dense, name: &str| -> CliResult<()> {
        let d = load_dense(dir, name)?;
        expect(&d.weight, &slot.weight, name)?;
        expect(&d.bias, &slot.bias, name)?;
        *slot = d;
        Ok(())
    };
    for (i, c) in m.convs.iter_mut().enumerate() {
        swap(c, &format!("conv{}", i + 1))?;
    }
    swap(&mut m.lstm, "lstm")?;
    swap(&mut m.head_hidden, "head_hidden")?;
    swap(&mut m.head_out, "head_out")?;
    for (i, f) in ["pitch", "duration", "energy"].iter().enumerate() {
        m.target_mean[i] = meta.get(&format!("mean_{f}"))?;
        m.target_std[i] = meta.get(&format!("std_{f}"))?;
    }
    m.report = EncoderReport {
        epochs: m.config.epochs,
        final_train_loss: meta.get("final_train_loss")?,
        val_log_mse: meta.get("val_log_mse")?,
        val_accuracy: meta.get("val_accuracy")?,
    };
    Ok(m)
}

// ---------------------------------------------------------------- probes

pub fn probe_bundle(p: &Probe) -> Bundle {
    let mut b = Bundle::default();
    b.matrix("weights", &p.weights);
    b.matrix("bias", &p.bias);
    let mut meta = Meta::default();
    meta.push("kind", p.kind.name())
        .push("target", p.target.name())
        .push("layer", p.layer.name())
        .push("lambda1", p.lambda1)
        .push("lambda2", p.lambda2)
        .push("seed", p.seed);
    b.meta(&meta);
    b
}

pub fn load_probe(dir: &Path) -> CliResult<Probe> {
    let meta = MetaMap::load(&dir.join("meta.csv"))?;
    let target = Target::parse(meta.get_str("target")?)?;
    let kind = target.kind();
    if kind.name() != meta.get_str("kind")? {
        return Err(CliError::format(dir, "probe kind does not match target"));
    }
    let weights = load_cfa(&dir.join("weights.cfa"))?;
    let bias = load_cfa(&dir.join("bias.cfa"))?;
    let outputs = if kind == ProbeKind::Regressor {
        1
    } else {
        weights.cols()
    };
    if bias.shape() != (1, weights.cols()) || weights.cols() != outputs {
        return Err(CliError::format(dir, "weights and bias shapes disagree"));
    }
    Ok(Probe {
        kind,
        target,
        layer: Layer::parse(meta.get_str("layer")?)?,
        weights,
        bias,
        lambda1: meta.get("lambda1")?,
        lambda2: meta.get("lambda2")?,
        seed: meta.get("seed")?,
    })
}

// ---------------------------------------------------------------- manifold

pub fn codec_bundle(c: &LatentCodec) -> Bundle {
    let mut b = Bundle::default();
    for (i, d) in c.encoder.iter().enumerate() {
        b.dense(&format!("enc{i}"), d);
    }
    for (i, d) in c.decoder.iter().enumerate() {
        b.dense(&format!("dec{i}"), d);
    }
    let cfg = &c.config;
    let mut meta = Meta::default();
    meta.push("dim", c.dim)
        .push("k", cfg.latent)
        .push("hidden", cfg.hidden)
        .push("beta", cfg.beta)
        .push("learning_rate", cfg.learning_rate)
        .push("epochs", cfg.epochs)
        .push("batch_size", cfg.batch_size)
        .push("seed", cfg.seed)
        .push("linear", cfg.linear)
        .push("reconstruction_error", c.reconstruction_error);
    b.meta(&meta);
    b
}

pub fn load_codec(dir: &Path) -> CliResult<LatentCodec> {
    let meta = MetaMap::load(&dir.join("meta.csv"))?;
    let config = CodecConfig {
        latent: meta.get("k")?,
        hidden: meta.get("hidden")?,
        beta: meta.get("beta")?,
        learning_rate: meta.get("learning_rate")?,
        epochs: meta.get("epochs")?,
        batch_size: meta.get("batch_size")?,
        seed: meta.get("seed")?,
        linear: meta.get("linear")?,
    };
    let mut c = LatentCodec::new(meta.get("dim")?, config)?;
    for i in 0..c.encoder.len() {
        c.encoder[i] = checked_dense(dir, &format!("enc{i}"), &c.encoder[i])?;
    }
    for i in 0..c.decoder.len() {
        c.decoder[i] = checked_dense(dir, &format!("dec{i}"), &c.decoder[i])?;
    }
    c.reconstruction_error = meta.get("reconstruction_error")?;
    Ok(c)
}

fn checked_dense(dir: &Path, name: &str, like: &Dense) -> CliResult<Dense> {
    let d = load_dense(dir, name)?;
    if d.weight.shape() != like.weight.shape() || d.bias.shape() != like.bias.shape() {
        return Err(CliError::format(dir, format!("{name}: unexpected shape")));
    }
    Ok(d)
}

pub fn codebook_bundle(book: &PrototypeCodebook, alpha: f64) -> Bundle {
    let mut b = Bundle::default();
    for (i, d) in book.encoder.iter().enumerate() {
        b.dense(&format!("enc{i}"), d);
    }
    b.matrix("embeddings", &book.embeddings);
    for (i, d) in book.decoder.iter().enumerate() {
        b.dense(&format!("dec{i}"), d);
    }
    let cfg = &book.config;
    let mut meta = Meta::default();
    meta.push("latent", book.latent)
        .push("K", cfg.codes)
        .push("hidden", cfg.hidden)
        .push("commitment", cfg.commitment)
        .push("learning_rate", cfg.learning_rate)
        .push("epochs", cfg.epochs)
        .push("batch_size", cfg.batch_size)
        .push("seed", cfg.seed)
        .push("alpha_default", alpha);
    b.meta(&meta);
    b
}

pub fn load_codebook(dir: &Path) -> CliResult<PrototypeCodebook> {
    let meta = MetaMap::load(&dir.join("meta.csv"))?;
    let config = CodebookConfig {
        codes: meta.get("K")?,
        hidden: meta.get("hidden")?,
        commitment: meta.get("commitment")?,
        learning_rate: meta.get("learning_rate")?,
        epochs: meta.get("epochs")?,
        batch_size: meta.get("batch_size")?,
        seed: meta.get("seed")?,
    };
    let latent: usize = meta.get("latent")?;
    let load = |name: &str| load_dense(dir, name);
    let book = PrototypeCodebook {
        latent,
        encoder: [load("enc0")?, load("enc1")?],
        embeddings: load_cfa(&dir.join("embeddings.cfa"))?,
        decoder: [load("dec0")?, load("dec1")?],
        config,
    };
    if book.embeddings.shape() != (book.config.codes, latent)
        || book.encoder[0].weight.rows() != latent
        || book.decoder[1].weight.cols() != latent
    {
        return Err(CliError::format(
            dir,
            "codebook shapes disagree with metadata",
        ));
    }
    book.validate()?;
    Ok(book)
}
