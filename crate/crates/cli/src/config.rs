// SPDX-License-Identifier: MIT OR Apache-2.0

//! `key = value` run configuration.
//!
//! Every key has a default; files and `--key value` overrides may only set
//! known keys. The resolved configuration is echoed next to each run's outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use cfedit_core::corpus::{CorpusSpec, Feature};
use cfedit_core::editor::{EditConfig, Method};
use cfedit_core::encoder::{EncoderConfig, Layer};
use cfedit_core::manifold::{CodebookConfig, CodecConfig};
use cfedit_core::probes::{ProbeTrainConfig, Target};

use crate::error::{CliError, CliResult};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "7", "seed shared by every stage"),
    ("corpus.vocab", "40", "token vocabulary size"),
    ("corpus.classes", "12", "semantic classes"),
    ("corpus.min_len", "6", "shortest sequence"),
    ("corpus.max_len", "16", "longest sequence"),
    (
        "corpus.polyphone_fraction",
        "0.3",
        "fraction of tokens with two pronunciations",
    ),
    (
        "corpus.withheld",
        "3",
        "polyphones whose alternate reading only occurs in the test split",
    ),
    (
        "corpus.context_gain",
        "0.25",
        "strength of neighbour effects on prosody",
    ),
    ("corpus.train", "2000", "encoder training sequences"),
    ("corpus.probe", "1000", "probe/codec training sequences"),
    ("corpus.val", "300", "validation sequences"),
    ("corpus.test", "300", "test sequences"),
    ("model.embed_dim", "32", "token embedding width"),
    ("model.channels", "64", "convolution channels"),
    ("model.kernel", "3", "convolution width (odd)"),
    ("model.hidden", "64", "recurrent width d"),
    ("model.head_hidden", "64", "decoder head hidden width"),
    ("model.epochs", "15", "encoder epochs"),
    ("model.batch_size", "32", "encoder minibatch"),
    ("model.lr", "0.003", "encoder Adam step"),
    ("probe.lr", "0.01", "probe Adam step"),
    ("probe.epochs", "400", "full-batch probe epochs"),
    ("probe.lambda1", "0.001", "L1 weight"),
    ("probe.lambda2", "0.001", "L2 weight"),
    ("probe.layer", "recurrent", "layer for trained probes"),
    (
        "probe.targets",
        "pitch,duration,energy,semantic_token",
        "targets for probe train / analyze-layers",
    ),
    (
        "probe.neuron_targets",
        "pitch,semantic_token",
        "targets for analyze-neurons",
    ),
    (
        "probe.fractions",
        "0.1,0.25,0.5,1.0",
        "neuron fractions for analyze-neurons",
    ),
    ("codec.k", "16", "latent dimension"),
    ("codec.hidden", "64", "codec hidden width"),
    ("codec.beta", "0.04", "KL weight"),
    ("codec.lr", "0.0002", "codec Adam step"),
    ("codec.epochs", "200", "codec epochs"),
    ("codec.batch_size", "64", "codec minibatch"),
    ("codebook.codes", "128", "number of prototypes K"),
    ("codebook.hidden", "32", "codebook encoder/decoder width"),
    ("codebook.commitment", "0.25", "commitment weight"),
    ("codebook.lr", "0.002", "codebook Adam step"),
    ("codebook.epochs", "40", "codebook epochs"),
    ("codebook.batch_size", "64", "codebook minibatch"),
    (
        "edit.method",
        "manifold",
        "naive | manifold | manifold+proto | truncation",
    ),
    ("edit.eta", "0.05", "step size"),
    ("edit.max_iters", "500", "iteration cap per position"),
    (
        "edit.radius",
        "inf",
        "per-step displacement bound (inf disables)",
    ),
    ("edit.alpha", "0.03", "prototype weight"),
    ("edit.truncation", "0.5", "truncation strength psi"),
    ("edit.tau", "0.9", "classification threshold"),
    (
        "edit.feature",
        "duration",
        "prosody feature for edit prosody",
    ),
    ("edit.lambda", "2.0", "scale factor for edit prosody"),
    (
        "edit.sequences",
        "60",
        "test sequences edited by edit/eval commands",
    ),
    (
        "eval.lambdas",
        "0.5,1.0,2.0",
        "scale factors for eval ratios",
    ),
    (
        "eval.methods",
        "naive,manifold,manifold+proto,truncation",
        "methods for eval ratios",
    ),
    (
        "eval.per_lambdas",
        "1.5,2.0,3.0",
        "duration factors for eval per",
    ),
    (
        "eval.entangle_feature",
        "duration",
        "edited feature for eval entangle",
    ),
    (
        "eval.entangle_lambda",
        "2.0",
        "scale factor for eval entangle",
    ),
    ("eval.bins", "20", "density bins for eval entangle"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect(),
        }
    }
}

fn known(key: &str) -> CliResult<&'static str> {
    KEYS.iter()
        .map(|(k, _, _)| *k)
        .find(|k| *k == key)
        .ok_or_else(|| CliError::Config(format!("unknown key `{key}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let k = known(key)?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                CliError::Config(format!("config file {} not found", path.display()))
            }
            _ => CliError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        self.apply_text(&text)
    }

    /// All keys in sorted order, one `key = value` per line.
    pub fn render(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .expect("key from the static table")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{raw}`")))
    }

    fn list<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> CliResult<Vec<T>> {
        let out: Option<Vec<T>> = self
            .raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(&parse)
            .collect();
        match out {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(CliError::Config(format!(
                "`{key}`: bad list `{}`",
                self.raw(key)
            ))),
        }
    }

    pub fn floats(&self, key: &str) -> CliResult<Vec<f64>> {
        self.list(key, |s| s.parse().ok())
    }

    pub fn targets(&self, key: &str) -> CliResult<Vec<Target>> {
        self.list(key, |s| Target::parse(s).ok())
    }

    pub fn methods(&self, key: &str) -> CliResult<Vec<Method>> {
        self.list(key, |s| Method::parse(s).ok())
    }

    pub fn feature(&self, key: &str) -> CliResult<Feature> {
        Feature::parse(self.raw(key)).ok_or_else(|| {
            CliError::Config(format!("`{key}`: unknown feature `{}`", self.raw(key)))
        })
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.get("seed")
    }

    pub fn corpus_spec(&self) -> CliResult<CorpusSpec> {
        let spec = CorpusSpec {
            vocab: self.get("corpus.vocab")?,
            classes: self.get("corpus.classes")?,
            min_len: self.get("corpus.min_len")?,
            max_len: self.get("corpus.max_len")?,
            polyphone_fraction: self.get("corpus.polyphone_fraction")?,
            withheld_polyphones: self.get("corpus.withheld")?,
            context_gain: self.get("corpus.context_gain")?,
            seed: self.seed()?,
            train: self.get("corpus.train")?,
            probe: self.get("corpus.probe")?,
            val: self.get("corpus.val")?,
            test: self.get("corpus.test")?,
        };
        spec.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn encoder(&self, vocab: usize, classes: usize) -> CliResult<EncoderConfig> {
        Ok(EncoderConfig {
            vocab,
            classes,
            embed_dim: self.get("model.embed_dim")?,
            channels: self.get("model.channels")?,
            kernel: self.get("model.kernel")?,
            hidden: self.get("model.hidden")?,
            head_hidden: self.get("model.head_hidden")?,
            epochs: self.get("model.epochs")?,
            batch_size: self.get("model.batch_size")?,
            learning_rate: self.get("model.lr")?,
            seed: self.seed()?,
        })
    }

    pub fn probe(&self) -> CliResult<ProbeTrainConfig> {
        Ok(ProbeTrainConfig {
            learning_rate: self.get("probe.lr")?,
            epochs: self.get("probe.epochs")?,
            lambda1: self.get("probe.lambda1")?,
            lambda2: self.get("probe.lambda2")?,
            seed: self.seed()?,
            mask: None,
        })
    }

    pub fn probe_layer(&self) -> CliResult<Layer> {
        Layer::parse(self.raw("probe.layer")).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn codec(&self) -> CliResult<CodecConfig> {
        Ok(CodecConfig {
            latent: self.get("codec.k")?,
            hidden: self.get("codec.hidden")?,
            beta: self.get("codec.beta")?,
            learning_rate: self.get("codec.lr")?,
            epochs: self.get("codec.epochs")?,
            batch_size: self.get("codec.batch_size")?,
            seed: self.seed()?,
            linear: false,
        })
    }

    pub fn codebook(&self) -> CliResult<CodebookConfig> {
        Ok(CodebookConfig {
            codes: self.get("codebook.codes")?,
            hidden: self.get("codebook.hidden")?,
            commitment: self.get("codebook.commitment")?,
            learning_rate: self.get("codebook.lr")?,
            epochs: self.get("codebook.epochs")?,
            batch_size: self.get("codebook.batch_size")?,
            seed: self.seed()?,
        })
    }

    pub fn edit(&self) -> CliResult<EditConfig> {
        let radius: f64 = self.get("edit.radius")?;
        let cfg = EditConfig {
            method: Method::parse(self.raw("edit.method"))
                .map_err(|e| CliError::Config(e.to_string()))?,
            step: self.get("edit.eta")?,
            max_iters: self.get("edit.max_iters")?,
            radius: radius.is_finite().then_some(radius),
            alpha: self.get("edit.alpha")?,
            truncation: self.get("edit.truncation")?,
        };
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn tau(&self) -> CliResult<f64> {
        let tau: f64 = self.get("edit.tau")?;
        if !(tau > 0.0 && tau < 1.0) {
            return Err(CliError::Config(format!("`edit.tau` {tau} outside (0, 1)")));
        }
        Ok(tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::default();
        assert_eq!(c.corpus_spec().unwrap(), CorpusSpec::default());
        assert_eq!(c.probe().unwrap(), ProbeTrainConfig::default());
        assert_eq!(c.codec().unwrap(), CodecConfig::default());
        assert_eq!(c.codebook().unwrap(), CodebookConfig::default());
        let e = c.edit().unwrap();
        assert_eq!(e, EditConfig::default());
        assert_eq!(c.encoder(40, 12).unwrap(), EncoderConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("probe.lr2", "1"), Err(CliError::Config(_))));
        assert!(c.apply_text("# comment\nseed = 3\n\n").is_ok());
        assert_eq!(c.seed().unwrap(), 3);
        assert!(c.apply_text("nonsense").is_err());
    }

    #[test]
    fn hash_tracks_values() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set("codec.k", "8").unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
