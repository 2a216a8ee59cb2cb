// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear probes over activations: elastic-net regressors for log-prosody,
//! softmax classifiers for pronunciation classes, layer-wise correlation
//! analysis and weight-based neuron ranking.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{Feature, Utterance};
use crate::encoder::{Layer, ToyEncoder};
use crate::error::{arg, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{cross_entropy, Adam};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProbeKind {
    Regressor,
    Classifier,
}

impl ProbeKind {
    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::Regressor => "regressor",
            ProbeKind::Classifier => "classifier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Prosody(Feature),
    Semantic,
}

impl Target {
    pub const ALL: [Target; 4] = [
        Target::Prosody(Feature::Pitch),
        Target::Prosody(Feature::Duration),
        Target::Prosody(Feature::Energy),
        Target::Semantic,
    ];

    pub fn kind(self) -> ProbeKind {
        match self {
            Target::Prosody(_) => ProbeKind::Regressor,
            Target::Semantic => ProbeKind::Classifier,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Prosody(f) => f.name(),
            Target::Semantic => "semantic_token",
        }
    }

    pub fn parse(s: &str) -> Result<Target> {
        match Target::ALL.into_iter().find(|t| t.name() == s) {
            Some(t) => Ok(t),
            None => arg(format!("unknown probe target `{s}`")),
        }
    }
}

/// Probe labels. Regressor labels are positive reals and are modelled in log domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Real(Vec<f64>),
    Class(Vec<usize>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Real(v) => v.len(),
            Labels::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Real(v) => Labels::Real(idx.iter().map(|&i| v[i]).collect()),
            Labels::Class(v) => Labels::Class(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Activation vectors (rows) paired with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData {
    pub x: Matrix,
    pub labels: Labels,
}

impl ProbeData {
    pub fn new(x: Matrix, labels: Labels) -> Result<Self> {
        if x.rows() != labels.len() {
            return arg(format!(
                "{} activation rows but {} labels",
                x.rows(),
                labels.len()
            ));
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Same activations with labels permuted (negative control).
    pub fn shuffled_labels(&self, seed: u64) -> ProbeData {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        Rng::new(seed).shuffle(&mut idx);
        ProbeData {
            x: self.x.clone(),
            labels: self.labels.select(&idx),
        }
    }
}

/// Collect `(activation, label)` pairs for every position of `utts` at `layer`.
pub fn probe_dataset(
    model: &ToyEncoder,
    utts: &[Utterance],
    layer: Layer,
    target: Target,
) -> Result<ProbeData> {
    let seqs: Vec<&[usize]> = utts.iter().map(|u| u.tokens.as_slice()).collect();
    let acts = model.extract_batch(&seqs, layer)?;
    let refs: Vec<&Matrix> = acts.iter().collect();
    let x = Matrix::vstack(&refs)?;
    let labels = match target {
        Target::Prosody(f) => Labels::Real(
            utts.iter()
                .flat_map(|u| u.labels.feature(f).iter().copied())
                .collect(),
        ),
        Target::Semantic => Labels::Class(
            utts.iter()
                .flat_map(|u| u.labels.semantic.iter().copied())
                .collect(),
        ),
    };
    ProbeData::new(x, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    /// Neurons allowed non-zero weight; `None` means all.
    pub mask: Option<Vec<bool>>,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 400,
            lambda1: 0.001,
            lambda2: 0.001,
            seed: 7,
            mask: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub kind: ProbeKind,
    pub target: Target,
    pub layer: Layer,
    /// `d x C`, `C = 1` for regressors.
    pub weights: Matrix,
    /// `1 x C`.
    pub bias: Matrix,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeEval {
    /// Mean squared error (log domain) or mean cross-entropy.
    pub loss: f64,
    /// Top-1 accuracy for classifiers.
    pub accuracy: Option<f64>,
    /// Coefficient of determination for regressors.
    pub r2: Option<f64>,
}

impl Probe {
    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    /// Raw outputs (`n x C`): log-value for regressors, logits for classifiers.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.weights)?.add_row(&self.bias)
    }

    /// Scalar prediction for a single activation vector (regressor) or the
    /// probability of `class` (classifier).
    pub fn score(&self, x: &[f64], class: usize) -> Result<f64> {
        let out = self.predict(&Matrix::row_vector(x))?;
        Ok(match self.kind {
            ProbeKind::Regressor => out.get(0, 0),
            ProbeKind::Classifier => out.softmax_rows().get(0, class),
        })
    }

    /// Differentiable forward on a tape.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.leaf(self.weights.clone());
        let b = tape.leaf(self.bias.clone());
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }
}

fn log_labels(labels: &Labels, kind: ProbeKind) -> Result<Vec<f64>> {
    match (labels, kind) {
        (Labels::Real(v), ProbeKind::Regressor) => {
            if let Some(&bad) = v.iter().find(|&&y| !(y > 0.0)) {
                return arg(format!("regressor label {bad} is not positive"));
            }
            Ok(v.iter().map(|&y| libm::log(y)).collect())
        }
        _ => arg("labels do not match probe kind"),
    }
}

fn class_labels(labels: &Labels, kind: ProbeKind) -> Result<&[usize]> {
    match (labels, kind) {
        (Labels::Class(v), ProbeKind::Classifier) => Ok(v),
        _ => arg("labels do not match probe kind"),
    }
}

/// Regression targets (log space, one column) or class indices.
#[derive(Debug, Clone, Copy)]
pub enum FitTarget<'a> {
    LogValues(&'a Matrix),
    Classes(&'a [usize]),
}

/// Training objective: MSE or cross-entropy of `x W + b` plus
/// `lambda1 * |W|_1 + lambda2 * |W|_2^2`.
pub fn probe_loss(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Var,
    target: &FitTarget<'_>,
    lambda1: f64,
    lambda2: f64,
) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    let out = tape.add_row(h, b)?;
    let fit = match *target {
        FitTarget::LogValues(y) => {
            let yv = tape.leaf(y.clone());
            crate::nn::mse(tape, out, yv)?
        }
        FitTarget::Classes(c) => cross_entropy(tape, out, c)?,
    };
    let l1 = tape.abs(w);
    let l1 = tape.sum(l1);
    let l1 = tape.scale(l1, lambda1);
    let l2 = tape.square(w);
    let l2 = tape.sum(l2);
    let l2 = tape.scale(l2, lambda2);
    let reg = tape.add(l1, l2)?;
    tape.add(fit, reg)
}

/// Fit a linear probe by full-batch optimisation of loss plus
/// `lambda1 * |W|_1 + lambda2 * |W|_2^2`.
pub fn train_probe(
    data: &ProbeData,
    target: Target,
    layer: Layer,
    config: &ProbeTrainConfig,
) -> Result<Probe> {
    let kind = target.kind();
    if data.is_empty() {
        return arg("no training pairs");
    }
    if !(config.learning_rate > 0.0) {
        return arg("learning rate must be positive");
    }
    let d = data.x.cols();
    if let Some(mask) = &config.mask {
        if mask.len() != d {
            return arg(format!("mask length {} != activation dim {d}", mask.len()));
        }
    }
    let mut rng = Rng::new(config.seed);
    let (classes, reg_targets, cls_targets) = match kind {
        ProbeKind::Regressor => (1, Some(log_labels(&data.labels, kind)?), None),
        ProbeKind::Classifier => {
            let c = class_labels(&data.labels, kind)?;
            let k = c.iter().copied().max().unwrap_or(0) + 1;
            (k, None, Some(c))
        }
    };
    let mut weights = rng.normal_matrix(d, classes, 0.01);
    let mut bias = Matrix::zeros(1, classes);
    if let Some(y) = &reg_targets {
        bias.set(0, 0, y.iter().sum::<f64>() / y.len() as f64);
    }
    let keep: Matrix = match &config.mask {
        Some(m) => Matrix::from_fn(d, classes, |r, _| if m[r] { 1.0 } else { 0.0 }),
        None => Matrix::filled(d, classes, 1.0),
    };
    weights = weights.hadamard(&keep)?;
    let y_col = reg_targets.map(|y| Matrix::new(y.len(), 1, y).expect("column"));
    let fit_target = match (&y_col, cls_targets) {
        (Some(y), _) => FitTarget::LogValues(y),
        (None, Some(c)) => FitTarget::Classes(c),
        _ => unreachable!(),
    };
    let mut opt = Adam::new(config.learning_rate);
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let x = tape.leaf(data.x.clone());
        let w = tape.leaf(weights.clone());
        let b = tape.leaf(bias.clone());
        let loss = probe_loss(
            &mut tape,
            x,
            w,
            b,
            &fit_target,
            config.lambda1,
            config.lambda2,
        )?;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::Training {
                stage: "probe",
                epoch,
            });
        }
        tape.backward(loss)?;
        let gw = tape.grad(w).hadamard(&keep)?;
        let gb = tape.grad(b).clone();
        opt.step(&mut [&mut weights, &mut bias], &[gw, gb]);
    }
    Ok(Probe {
        kind,
        target,
        layer,
        weights,
        bias,
        lambda1: config.lambda1,
        lambda2: config.lambda2,
        seed: config.seed,
    })
}

/// Mean loss (no regulariser) and accuracy or R² on `data`.
pub fn evaluate_probe(probe: &Probe, data: &ProbeData) -> Result<ProbeEval> {
    if data.is_empty() {
        return arg("cannot evaluate on an empty set");
    }
    if data.x.cols() != probe.dim() {
        return Err(Error::Dimension {
            op: "evaluate_probe",
            left: data.x.shape(),
            right: probe.weights.shape(),
        });
    }
    let out = probe.predict(&data.x)?;
    let n = data.len() as f64;
    match probe.kind {
        ProbeKind::Regressor => {
            let y = log_labels(&data.labels, probe.kind)?;
            let mean = y.iter().sum::<f64>() / n;
            let mut sse = 0.0;
            let mut sst = 0.0;
            for (i, yi) in y.iter().enumerate() {
                sse += (out.get(i, 0) - yi) * (out.get(i, 0) - yi);
                sst += (yi - mean) * (yi - mean);
            }
            let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 0.0 };
            Ok(ProbeEval {
                loss: sse / n,
                accuracy: None,
                r2: Some(r2),
            })
        }
        ProbeKind::Classifier => {
            let c = class_labels(&data.labels, probe.kind)?;
            let p = out.softmax_rows();
            let mut ce = 0.0;
            let mut correct = 0usize;
            for (i, &ci) in c.iter().enumerate() {
                let pi = if ci < p.cols() { p.get(i, ci) } else { 0.0 };
                ce -= libm::log(pi.max(1e-300));
                if crate::matrix::argmax(p.row(i)) == ci {
                    correct += 1;
                }
            }
            Ok(ProbeEval {
                loss: ce / n,
                accuracy: Some(correct as f64 / n),
                r2: None,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub target: Target,
    /// `(layer, raw held-out loss, loss / max loss)`.
    pub rows: Vec<(Layer, f64, f64)>,
}

impl LayerReport {
    pub fn from_losses(target: Target, losses: Vec<(Layer, f64)>) -> Result<Self> {
        let max = losses.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
        if !(max > 0.0) {
            return arg("layer losses must be positive");
        }
        Ok(Self {
            target,
            rows: losses.into_iter().map(|(l, v)| (l, v, v / max)).collect(),
        })
    }

    pub fn loss(&self, layer: Layer) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == layer).map(|r| r.1)
    }
}

/// Train one probe per layer and report held-out losses, normalised so the
/// worst layer is 1.
pub fn layer_analysis(
    model: &ToyEncoder,
    train: &[Utterance],
    held_out: &[Utterance],
    layers: &[Layer],
    target: Target,
    config: &ProbeTrainConfig,
) -> Result<LayerReport> {
    let mut losses = Vec::with_capacity(layers.len());
    for &layer in layers {
        let tr = probe_dataset(model, train, layer, target)?;
        let ho = probe_dataset(model, held_out, layer, target)?;
        let probe = train_probe(&tr, target, layer, config)?;
        losses.push((layer, evaluate_probe(&probe, &ho)?.loss));
    }
    LayerReport::from_losses(target, losses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronRanking {
    /// Neuron indices, most important first.
    pub order: Vec<usize>,
    /// Importance per neuron (indexed by neuron, not by rank).
    pub importance: Vec<f64>,
}

/// Importance of neuron `j` is `sum_c |W[j, c]|`; ties keep the lower index first.
pub fn rank_neurons(probe: &Probe) -> NeuronRanking {
    let importance: Vec<f64> = (0..probe.dim())
        .map(|j| probe.weights.row(j).iter().map(|w| w.abs()).sum())
        .collect();
    let mut order: Vec<usize> = (0..probe.dim()).collect();
    order.sort_by(|&a, &b| {
        importance[b]
            .partial_cmp(&importance[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    NeuronRanking { order, importance }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPoint {
    pub fraction: f64,
    pub neurons: usize,
    pub top_loss: f64,
    pub bottom_loss: f64,
}

/// Mask keeping exactly the given neurons.
pub fn neuron_mask(d: usize, keep: &[usize]) -> Vec<bool> {
    let mut m = vec![false; d];
    for &j in keep {
        m[j] = true;
    }
    m
}

/// Train probes restricted to the top- and bottom-ranked neurons at each
/// fraction and record their held-out losses.
pub fn neuron_ablation_curve(
    train: &ProbeData,
    held_out: &ProbeData,
    target: Target,
    layer: Layer,
    ranking: &NeuronRanking,
    fractions: &[f64],
    config: &ProbeTrainConfig,
) -> Result<Vec<AblationPoint>> {
    let d = ranking.order.len();
    let mut out = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return arg(format!("fraction {f} outside (0, 1]"));
        }
        let m = (libm::round(f * d as f64) as usize).clamp(1, d);
        let top = &ranking.order[..m];
        let bottom = &ranking.order[d - m..];
        let mut losses = [0.0; 2];
        for (slot, keep) in [top, bottom].into_iter().enumerate() {
            let cfg = ProbeTrainConfig {
                mask: Some(neuron_mask(d, keep)),
                ..config.clone()
            };
            let p = train_probe(train, target, layer, &cfg)?;
            losses[slot] = evaluate_probe(&p, held_out)?.loss;
        }
        out.push(AblationPoint {
            fraction: f,
            neurons: m,
            top_loss: losses[0],
            bottom_loss: losses[1],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ProbeTrainConfig {
        ProbeTrainConfig::default()
    }

    #[test]
    fn separable_points_classified_perfectly() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let data = ProbeData::new(x, Labels::Class(vec![0, 1])).unwrap();
        let p = train_probe(&data, Target::Semantic, Layer::Recurrent, &cfg()).unwrap();
        let e = evaluate_probe(&p, &data).unwrap();
        assert_eq!(e.accuracy, Some(1.0));
    }

    #[test]
    fn constant_labels_give_mean_bias() {
        let mut rng = Rng::new(2);
        let x = rng.normal_matrix(50, 4, 1.0);
        let data = ProbeData::new(x, Labels::Real(vec![3.0; 50])).unwrap();
        let c = ProbeTrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            epochs: 2000,
            ..cfg()
        };
        let p = train_probe(&data, Target::Prosody(Feature::Pitch), Layer::Recurrent, &c).unwrap();
        let e = evaluate_probe(&p, &data).unwrap();
        assert!(e.loss < 1e-6, "{e:?}");
        assert!((p.bias.get(0, 0) - libm::log(3.0)).abs() < 1e-3);
        assert!(p.weights.max_abs() < 1e-3);
    }

    #[test]
    fn zero_probe_is_at_chance() {
        let c = 4;
        let n = 40;
        let x = Rng::new(3).normal_matrix(n, 5, 1.0);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let data = ProbeData::new(x, Labels::Class(labels)).unwrap();
        let p = Probe {
            kind: ProbeKind::Classifier,
            target: Target::Semantic,
            layer: Layer::Recurrent,
            weights: Matrix::zeros(5, c),
            bias: Matrix::zeros(1, c),
            lambda1: 0.0,
            lambda2: 0.0,
            seed: 0,
        };
        let e = evaluate_probe(&p, &data).unwrap();
        // all ties resolve to class 0, which holds exactly 1/C of the labels
        assert!((e.accuracy.unwrap() - 1.0 / c as f64).abs() < 1e-12);
        assert!((e.loss - libm::log(c as f64)).abs() < 1e-12);
    }

    #[test]
    fn kind_mismatch_and_empty_sets_rejected() {
        let x = Matrix::zeros(2, 2);
        let data = ProbeData::new(x, Labels::Class(vec![0, 1])).unwrap();
        assert!(train_probe(
            &data,
            Target::Prosody(Feature::Pitch),
            Layer::Recurrent,
            &cfg()
        )
        .is_err());
        let empty = ProbeData::new(Matrix::zeros(0, 2), Labels::Class(vec![])).unwrap();
        assert!(train_probe(&empty, Target::Semantic, Layer::Recurrent, &cfg()).is_err());
        let p = train_probe(&data, Target::Semantic, Layer::Recurrent, &cfg()).unwrap();
        assert!(evaluate_probe(&p, &empty).is_err());
        let neg = ProbeData::new(Matrix::zeros(1, 2), Labels::Real(vec![-1.0])).unwrap();
        assert!(train_probe(
            &neg,
            Target::Prosody(Feature::Energy),
            Layer::Recurrent,
            &cfg()
        )
        .is_err());
    }

    fn probe_with_weights(w: Matrix) -> Probe {
        let c = w.cols();
        Probe {
            kind: ProbeKind::Classifier,
            target: Target::Semantic,
            layer: Layer::Recurrent,
            weights: w,
            bias: Matrix::zeros(1, c),
            lambda1: 0.0,
            lambda2: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn ranking_rules() {
        let mut w = Matrix::zeros(5, 2);
        w.set(3, 1, -0.5);
        let r = rank_neurons(&probe_with_weights(w));
        assert_eq!(r.order[0], 3);
        assert_eq!(&r.order[1..], &[0, 1, 2, 4]);
        let eq = rank_neurons(&probe_with_weights(Matrix::filled(4, 3, -1.0)));
        assert_eq!(eq.order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn layer_report_normalisation() {
        let r = LayerReport::from_losses(Target::Semantic, vec![(Layer::Conv1, 0.3)]).unwrap();
        assert_eq!(r.rows[0].2, 1.0);
        let r = LayerReport::from_losses(
            Target::Semantic,
            vec![(Layer::Conv1, 0.4), (Layer::Recurrent, 0.1)],
        )
        .unwrap();
        assert_eq!(r.rows[0].2, 1.0);
        assert_eq!(r.rows[1].2, 0.25);
    }

    #[test]
    fn masked_neurons_stay_zero() {
        let mut rng = Rng::new(8);
        let x = rng.normal_matrix(60, 6, 1.0);
        let y: Vec<f64> = (0..60)
            .map(|i| libm::exp(x.get(i, 0) - x.get(i, 4)))
            .collect();
        let data = ProbeData::new(x, Labels::Real(y)).unwrap();
        let c = ProbeTrainConfig {
            mask: Some(neuron_mask(6, &[1, 4])),
            ..cfg()
        };
        let p = train_probe(&data, Target::Prosody(Feature::Pitch), Layer::Recurrent, &c).unwrap();
        for j in [0, 2, 3, 5] {
            assert_eq!(p.weights.get(j, 0), 0.0);
        }
        assert!(p.weights.get(4, 0) < -0.5);
    }

    #[test]
    fn full_fraction_curves_coincide() {
        let mut rng = Rng::new(12);
        let x = rng.normal_matrix(80, 5, 1.0);
        let y: Vec<f64> = (0..80).map(|i| libm::exp(0.3 * x.get(i, 2))).collect();
        let data = ProbeData::new(x, Labels::Real(y)).unwrap();
        let t = Target::Prosody(Feature::Energy);
        let p = train_probe(&data, t, Layer::Recurrent, &cfg()).unwrap();
        let ranking = rank_neurons(&p);
        let curve =
            neuron_ablation_curve(&data, &data, t, Layer::Recurrent, &ranking, &[1.0], &cfg())
                .unwrap();
        assert_eq!(curve[0].top_loss, curve[0].bottom_loss);
        assert!(
            neuron_ablation_curve(&data, &data, t, Layer::Recurrent, &ranking, &[0.0], &cfg())
                .is_err()
        );
    }

    #[test]
    fn zero_weight_neurons_give_constant_predictor_loss() {
        // only neuron 0 is informative; a probe restricted to the others
        // can do no better than predicting the mean
        let mut rng = Rng::new(13);
        let mut x = rng.normal_matrix(200, 4, 1.0);
        for r in 0..200 {
            for c in 1..4 {
                x.set(r, c, 0.0);
            }
        }
        let y: Vec<f64> = (0..200).map(|i| libm::exp(0.5 * x.get(i, 0))).collect();
        let data = ProbeData::new(x, Labels::Real(y.clone())).unwrap();
        let t = Target::Prosody(Feature::Pitch);
        let c = ProbeTrainConfig {
            mask: Some(neuron_mask(4, &[1, 2, 3])),
            ..cfg()
        };
        let p = train_probe(&data, t, Layer::Recurrent, &c).unwrap();
        let logs: Vec<f64> = y.iter().map(|v| libm::log(*v)).collect();
        let mean = logs.iter().sum::<f64>() / 200.0;
        let var = logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 200.0;
        let e = evaluate_probe(&p, &data).unwrap();
        assert!(
            (e.loss - var).abs() < 1e-3 * var.max(1.0),
            "{} vs {var}",
            e.loss
        );
    }
}
