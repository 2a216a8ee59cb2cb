// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic synthetic corpus with prosody and pronunciation labels.
//!
//! Every token id carries a base pitch, duration and energy drawn once
//! (log-uniformly) from the seeded stream. The realized value at a position
//! is `base * (1 + context_gain * e)` where `e` averages a per-token context
//! coefficient in `[-1, 1]` over the neighbours at distance one and two.
//!
//! Pronunciation classes: each token has a primary class. Tokens in the
//! polyphone subset switch to an alternate class when their right neighbour
//! has an odd id. For the first `withheld_polyphones` polyphones the odd-right
//! context never appears in the train/probe/val splits, so the encoder never
//! learns their alternate reading; the test split keeps the full
//! distribution and those positions form the mispronunciation set.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg, Result};
use crate::rng::Rng;

/// Ranges of the per-token base values, `(min, max)`; sampled log-uniformly.
pub const PITCH_RANGE: (f64, f64) = (40.0, 600.0);
pub const DURATION_RANGE: (f64, f64) = (1.0, 16.0);
pub const ENERGY_RANGE: (f64, f64) = (0.1, 1.6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    Pitch,
    Duration,
    Energy,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Pitch, Feature::Duration, Feature::Energy];

    pub fn index(self) -> usize {
        match self {
            Feature::Pitch => 0,
            Feature::Duration => 1,
            Feature::Energy => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Pitch => "pitch",
            Feature::Duration => "duration",
            Feature::Energy => "energy",
        }
    }

    pub fn parse(s: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    /// Encoder training.
    Train,
    /// Post-hoc training of probes, codec and codebook.
    Probe,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Probe, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Probe => "probe",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn restricted(self) -> bool {
        self != Split::Test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub vocab: usize,
    pub classes: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub polyphone_fraction: f64,
    pub withheld_polyphones: usize,
    pub context_gain: f64,
    pub seed: u64,
    pub train: usize,
    pub probe: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            vocab: 40,
            classes: 12,
            min_len: 6,
            max_len: 16,
            polyphone_fraction: 0.3,
            withheld_polyphones: 3,
            context_gain: 0.25,
            seed: 7,
            train: 2000,
            probe: 1000,
            val: 300,
            test: 300,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.classes == 0 {
            return arg("vocab and classes must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return arg(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            ));
        }
        if !(0.0..=1.0).contains(&self.polyphone_fraction) {
            return arg("polyphone_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.context_gain) {
            return arg("context_gain must lie in [0, 1)");
        }
        if self.classes < 2 && self.polyphone_fraction > 0.0 {
            return arg("polyphones need at least two classes");
        }
        if self.withheld_polyphones > self.polyphone_count() {
            return arg("more withheld polyphones than polyphones");
        }
        if self.withheld_polyphones > 0 && self.vocab < 2 {
            return arg("withholding contexts needs an even and an odd token");
        }
        if self.total() == 0 {
            return arg("corpus has no sequences");
        }
        Ok(())
    }

    pub fn polyphone_count(&self) -> usize {
        libm::round(self.polyphone_fraction * self.vocab as f64) as usize
    }

    pub fn total(&self) -> usize {
        self.train + self.probe + self.val + self.test
    }

    pub fn split_of(&self, id: usize) -> Split {
        if id < self.train {
            Split::Train
        } else if id < self.train + self.probe {
            Split::Probe
        } else if id < self.train + self.probe + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn split_range(&self, split: Split) -> core::ops::Range<usize> {
        let a = self.train;
        let b = a + self.probe;
        let c = b + self.val;
        match split {
            Split::Train => 0..a,
            Split::Probe => a..b,
            Split::Val => b..c,
            Split::Test => c..c + self.test,
        }
    }
}

/// Per-token generative tables, derived from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTable {
    /// `[pitch, duration, energy]` base values.
    pub base: Vec<[f64; 3]>,
    /// Context coefficients in `[-1, 1]`, per feature.
    pub context: Vec<[f64; 3]>,
    pub primary_class: Vec<usize>,
    /// Alternate class for polyphones.
    pub alternate_class: Vec<Option<usize>>,
    /// Polyphones whose odd-right context is withheld from training splits.
    pub withheld: Vec<usize>,
}

impl TokenTable {
    pub fn new(spec: &CorpusSpec, rng: &mut Rng) -> Self {
        let v = spec.vocab;
        let ranges = [PITCH_RANGE, DURATION_RANGE, ENERGY_RANGE];
        let mut base = Vec::with_capacity(v);
        let mut context = Vec::with_capacity(v);
        for _ in 0..v {
            let mut b = [0.0; 3];
            let mut c = [0.0; 3];
            for k in 0..3 {
                let (lo, hi) = ranges[k];
                b[k] = libm::exp(rng.range(libm::log(lo), libm::log(hi)));
                c[k] = rng.range(-1.0, 1.0);
            }
            base.push(b);
            context.push(c);
        }
        // Cover every class before repeating any.
        let mut order: Vec<usize> = (0..v).collect();
        rng.shuffle(&mut order);
        let mut primary_class = vec![0; v];
        for (rank, &tok) in order.iter().enumerate() {
            primary_class[tok] = rank % spec.classes;
        }
        let mut poly: Vec<usize> = (0..v).collect();
        rng.shuffle(&mut poly);
        poly.truncate(spec.polyphone_count());
        let mut alternate_class = vec![None; v];
        for &tok in &poly {
            let shift = 1 + rng.below(spec.classes - 1);
            alternate_class[tok] = Some((primary_class[tok] + shift) % spec.classes);
        }
        let withheld = poly[..spec.withheld_polyphones].to_vec();
        Self {
            base,
            context,
            primary_class,
            alternate_class,
            withheld,
        }
    }

    pub fn is_withheld(&self, token: usize) -> bool {
        self.withheld.contains(&token)
    }

    pub fn semantic_class(&self, token: usize, right: Option<usize>) -> usize {
        match (self.alternate_class[token], right) {
            (Some(alt), Some(r)) if r % 2 == 1 => alt,
            _ => self.primary_class[token],
        }
    }

    /// Ground-truth labels for a token sequence.
    pub fn label(&self, tokens: &[usize], context_gain: f64) -> AcousticLabels {
        let n = tokens.len();
        let mut labels = AcousticLabels::with_len(n);
        for i in 0..n {
            let mut effect = [0.0; 3];
            let mut count = 0.0;
            for off in [-2isize, -1, 1, 2] {
                let j = i as isize + off;
                if (0..n as isize).contains(&j) {
                    let c = self.context[tokens[j as usize]];
                    for k in 0..3 {
                        effect[k] += c[k];
                    }
                    count += 1.0;
                }
            }
            let b = self.base[tokens[i]];
            let mut vals = [0.0; 3];
            for k in 0..3 {
                let e = if count > 0.0 { effect[k] / count } else { 0.0 };
                vals[k] = b[k] * (1.0 + context_gain * e);
            }
            labels.pitch[i] = vals[0];
            labels.duration[i] = vals[1];
            labels.energy[i] = vals[2];
            labels.semantic[i] = self.semantic_class(tokens[i], tokens.get(i + 1).copied());
        }
        labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticLabels {
    pub pitch: Vec<f64>,
    pub duration: Vec<f64>,
    pub energy: Vec<f64>,
    pub semantic: Vec<usize>,
}

impl AcousticLabels {
    pub fn with_len(n: usize) -> Self {
        Self {
            pitch: vec![0.0; n],
            duration: vec![0.0; n],
            energy: vec![0.0; n],
            semantic: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.pitch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch.is_empty()
    }

    pub fn feature(&self, f: Feature) -> &[f64] {
        match f {
            Feature::Pitch => &self.pitch,
            Feature::Duration => &self.duration,
            Feature::Energy => &self.energy,
        }
    }

    pub fn feature_mut(&mut self, f: Feature) -> &mut Vec<f64> {
        match f {
            Feature::Pitch => &mut self.pitch,
            Feature::Duration => &mut self.duration,
            Feature::Energy => &mut self.energy,
        }
    }

    /// Log-domain features of position `i`.
    pub fn log_features(&self, i: usize) -> [f64; 3] {
        [
            libm::log(self.pitch[i]),
            libm::log(self.duration[i]),
            libm::log(self.energy[i]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: usize,
    pub tokens: Vec<usize>,
    pub labels: AcousticLabels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub table: TokenTable,
    pub utterances: Vec<Utterance>,
}

/// Generate the full corpus for `spec`.
/// The token table `generate_corpus` would build for `spec`.
pub fn token_table(spec: &CorpusSpec) -> Result<TokenTable> {
    spec.validate()?;
    Ok(TokenTable::new(spec, &mut Rng::new(spec.seed).fork(1)))
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let table = TokenTable::new(spec, &mut rng.fork(1));
    let mut seq_rng = rng.fork(2);
    let mut utterances = Vec::with_capacity(spec.total());
    for id in 0..spec.total() {
        let restricted = spec.split_of(id).restricted();
        let n = spec.min_len + seq_rng.below(spec.max_len - spec.min_len + 1);
        let mut tokens = Vec::with_capacity(n);
        for i in 0..n {
            let prev_withheld = i > 0 && restricted && table.is_withheld(tokens[i - 1]);
            let tok = if prev_withheld {
                // even ids only: 0, 2, 4, ...
                2 * seq_rng.below(spec.vocab.div_ceil(2))
            } else {
                seq_rng.below(spec.vocab)
            };
            tokens.push(tok);
        }
        let labels = table.label(&tokens, spec.context_gain);
        utterances.push(Utterance { id, tokens, labels });
    }
    Ok(Corpus {
        spec: spec.clone(),
        table,
        utterances,
    })
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        &self.utterances[self.spec.split_range(split)]
    }

    /// `(utterance index, position)` pairs whose pronunciation context was
    /// never seen during training: a withheld polyphone followed by an odd id.
    pub fn mispronunciation_set(&self, split: Split) -> Vec<(usize, usize)> {
        let range = self.spec.split_range(split);
        let mut out = Vec::new();
        for u in &self.utterances[range] {
            for i in 0..u.tokens.len().saturating_sub(1) {
                if self.table.is_withheld(u.tokens[i]) && u.tokens[i + 1] % 2 == 1 {
                    out.push((u.id, i));
                }
            }
        }
        out
    }
}
