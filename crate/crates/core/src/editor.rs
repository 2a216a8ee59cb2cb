// SPDX-License-Identifier: MIT OR Apache-2.0

//! Counterfactual activation editing.
//!
//! Four procedures move a single activation vector so that a probe's output
//! meets a goal:
//!
//! - **naive**: gradient steps on the activation itself;
//! - **manifold**: gradient steps on the codec latent `z`, decoding with `g`;
//! - **manifold + prototype**: as manifold, minus `alpha * ||z - proto(z)||^2`
//!   with the prototype re-quantised every step and held constant in the gradient;
//! - **truncation**: no gradient, interpolate toward training statistics.
//!
//! Classification goals ascend the softmax probability of the target class
//! until it exceeds the threshold. Regression goals step along
//! `sign(target - f) * grad f` and stop once within tolerance or once the
//! target has been crossed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::Feature;
use crate::encoder::{ActivationSequence, HeadOutput, Layer, ToyEncoder};
use crate::error::{arg, Error, Result};
use crate::manifold::{LatentCodec, PrototypeCodebook};
use crate::matrix::Matrix;
use crate::probes::{Probe, ProbeKind};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Naive,
    Manifold,
    ManifoldProto,
    Truncation,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Naive,
        Method::Manifold,
        Method::ManifoldProto,
        Method::Truncation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Manifold => "manifold",
            Method::ManifoldProto => "manifold+proto",
            Method::Truncation => "truncation",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match Method::ALL.into_iter().find(|m| m.name() == s) {
            Some(m) => Ok(m),
            None => arg(format!("unknown edit method `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Goal {
    /// Push the probability of `class` above `threshold`.
    Class { class: usize, threshold: f64 },
    /// Move the regressor output to `target` (within `tolerance`).
    Value { target: f64, tolerance: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct EditObjective<'a> {
    pub probe: &'a Probe,
    pub goal: Goal,
}

impl<'a> EditObjective<'a> {
    pub fn new(probe: &'a Probe, goal: Goal) -> Result<Self> {
        match (probe.kind, goal) {
            (ProbeKind::Classifier, Goal::Class { class, threshold }) => {
                if !(threshold > 0.0 && threshold < 1.0) {
                    return arg(format!("threshold {threshold} outside (0, 1)"));
                }
                if class >= probe.outputs() {
                    return arg(format!(
                        "class {class} outside probe's {} classes",
                        probe.outputs()
                    ));
                }
            }
            (ProbeKind::Regressor, Goal::Value { target, tolerance }) => {
                if !target.is_finite() || !(tolerance >= 0.0) {
                    return arg("regression target must be finite and tolerance >= 0");
                }
            }
            _ => return arg("goal does not match probe kind"),
        }
        Ok(Self { probe, goal })
    }

    /// Probe score on a tape: class probability or regressor value, `1 x 1`.
    pub fn score_var(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let out = self.probe.forward(tape, x)?;
        match self.goal {
            Goal::Class { class, .. } => {
                let p = tape.softmax_rows(out);
                tape.slice_cols(p, class, 1)
            }
            Goal::Value { .. } => Ok(out),
        }
    }

    /// Quantity whose gradient drives the edit: `log f_c` for classification
    /// (same ascent direction as `f_c`, without the vanishing gradient of a
    /// saturated softmax), the regressor output otherwise.
    pub fn ascent_var(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let out = self.probe.forward(tape, x)?;
        match self.goal {
            Goal::Class { class, .. } => {
                let lp = tape.log_softmax_rows(out);
                tape.slice_cols(lp, class, 1)
            }
            Goal::Value { .. } => Ok(out),
        }
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let class = match self.goal {
            Goal::Class { class, .. } => class,
            Goal::Value { .. } => 0,
        };
        self.probe.score(x, class)
    }

    fn satisfied(&self, f: f64) -> bool {
        match self.goal {
            Goal::Class { threshold, .. } => f > threshold,
            Goal::Value { target, tolerance } => (f - target).abs() < tolerance,
        }
    }

    /// +1 / -1 multiplier on the score gradient; regression steps toward the target.
    fn direction(&self, f: f64) -> f64 {
        match self.goal {
            Goal::Class { .. } => 1.0,
            Goal::Value { target, .. } => {
                if target >= f {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditConfig {
    pub method: Method,
    /// Step size η.
    pub step: f64,
    pub max_iters: usize,
    /// Per-step displacement bound; `None` disables clipping.
    pub radius: Option<f64>,
    /// Prototype weight α (used by [`Method::ManifoldProto`]).
    pub alpha: f64,
    /// Truncation strength ψ in `[0, 1]`.
    pub truncation: f64,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            method: Method::Manifold,
            step: 0.05,
            max_iters: 500,
            radius: None,
            alpha: 0.03,
            truncation: 0.5,
        }
    }
}

impl EditConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return arg("step size must be positive");
        }
        if self.max_iters == 0 {
            return arg("max_iters must be at least 1");
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return arg("radius must be positive when enabled");
            }
        }
        if !(self.alpha >= 0.0) {
            return arg("alpha must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.truncation) {
            return arg("truncation strength must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Outcome of editing one activation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionEdit {
    pub edited: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Probe score before the first step and after every step.
    pub trajectory: Vec<f64>,
    /// Latent iterates for manifold methods (starting point included).
    pub latents: Vec<Vec<f64>>,
    /// Largest per-step displacement (activation or latent space).
    pub max_step: f64,
}

impl PositionEdit {
    pub fn initial_score(&self) -> f64 {
        self.trajectory[0]
    }

    pub fn final_score(&self) -> f64 {
        *self.trajectory.last().expect("trajectory has a start")
    }

    fn unchanged(x: &[f64], score: f64) -> Self {
        Self {
            edited: x.to_vec(),
            iterations: 0,
            converged: true,
            trajectory: vec![score],
            latents: Vec::new(),
            max_step: 0.0,
        }
    }
}

fn clip(step: &mut [f64], radius: Option<f64>) -> f64 {
    let norm = libm::sqrt(step.iter().map(|v| v * v).sum());
    match radius {
        Some(r) if norm > r => {
            let s = r / norm;
            for v in step.iter_mut() {
                *v *= s;
            }
            r
        }
        _ => norm,
    }
}

fn crossed(goal: Goal, dir: f64, f: f64) -> bool {
    match goal {
        Goal::Value { target, .. } => dir * (target - f) <= 0.0,
        Goal::Class { .. } => false,
    }
}

/// Ascent quantity and its gradient with respect to the activation.
pub fn ascent_gradient(objective: &EditObjective<'_>, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(Matrix::row_vector(x));
    let s = objective.ascent_var(&mut tape, xv)?;
    tape.backward(s)?;
    Ok((tape.scalar(s), tape.grad(xv).as_slice().to_vec()))
}

/// Edit objective in latent space: `dir * a(g(z)) - alpha * ||z - p||^2`,
/// where `a` is the ascent quantity and `p` is treated as a constant.
/// Returns `(a, objective)`.
pub fn latent_objective_var(
    tape: &mut Tape,
    z: Var,
    codec: &LatentCodec,
    objective: &EditObjective<'_>,
    dir: f64,
    anchor: Option<(&[f64], f64)>,
) -> Result<(Var, Var)> {
    let x = codec.decode_var(tape, z)?;
    let score = objective.ascent_var(tape, x)?;
    let mut total = tape.scale(score, dir);
    if let Some((proto, alpha)) = anchor {
        if alpha > 0.0 {
            let p = tape.leaf(Matrix::row_vector(proto));
            let diff = tape.sub(z, p)?;
            let sq = tape.square(diff);
            let pen = tape.sum(sq);
            let pen = tape.scale(pen, alpha);
            total = tape.sub(total, pen)?;
        }
    }
    Ok((score, total))
}

/// Gradient ascent directly on the activation vector.
pub fn cae_edit(
    x: &[f64],
    objective: &EditObjective<'_>,
    config: &EditConfig,
) -> Result<PositionEdit> {
    config.validate()?;
    if x.len() != objective.probe.dim() {
        return Err(Error::Dimension {
            op: "cae_edit",
            left: (1, x.len()),
            right: objective.probe.weights.shape(),
        });
    }
    let f0 = objective.score(x)?;
    if objective.satisfied(f0) {
        return Ok(PositionEdit::unchanged(x, f0));
    }
    let dir = objective.direction(f0);
    let mut cur = x.to_vec();
    let mut out = PositionEdit {
        edited: Vec::new(),
        iterations: 0,
        converged: false,
        trajectory: vec![f0],
        latents: Vec::new(),
        max_step: 0.0,
    };
    for it in 0..config.max_iters {
        let (_, g) = ascent_gradient(objective, &cur)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Edit { iteration: it });
        }
        let mut step: Vec<f64> = g.iter().map(|v| config.step * dir * v).collect();
        out.max_step = out.max_step.max(clip(&mut step, config.radius));
        for (c, s) in cur.iter_mut().zip(&step) {
            *c += s;
        }
        let f = objective.score(&cur)?;
        out.trajectory.push(f);
        out.iterations = it + 1;
        if objective.satisfied(f) {
            out.converged = true;
            break;
        }
        if crossed(objective.goal, dir, f) {
            break;
        }
    }
    out.edited = cur;
    Ok(out)
}

/// Gradient ascent in the codec latent space, optionally anchored to prototypes.
pub fn manifold_edit(
    x: &[f64],
    codec: &LatentCodec,
    book: Option<&PrototypeCodebook>,
    objective: &EditObjective<'_>,
    config: &EditConfig,
) -> Result<PositionEdit> {
    config.validate()?;
    if x.len() != codec.dim || codec.dim != objective.probe.dim() {
        return Err(Error::Dimension {
            op: "manifold_edit",
            left: (1, x.len()),
            right: objective.probe.weights.shape(),
        });
    }
    let alpha = match book {
        Some(_) => config.alpha,
        None => 0.0,
    };
    let mut z = codec.encode(&Matrix::row_vector(x))?.row(0).to_vec();
    let decoded = |z: &[f64]| -> Result<Vec<f64>> {
        Ok(codec.decode(&Matrix::row_vector(z))?.row(0).to_vec())
    };
    let mut xd = decoded(&z)?;
    let f0 = objective.score(&xd)?;
    let mut out = PositionEdit {
        edited: Vec::new(),
        iterations: 0,
        converged: objective.satisfied(f0),
        trajectory: vec![f0],
        latents: vec![z.clone()],
        max_step: 0.0,
    };
    if out.converged {
        out.edited = xd;
        return Ok(out);
    }
    let dir = objective.direction(f0);
    for it in 0..config.max_iters {
        let proto = match book {
            Some(b) if alpha > 0.0 => Some(b.prototype(&z)?),
            _ => None,
        };
        let mut tape = Tape::new();
        let zv = tape.leaf(Matrix::row_vector(&z));
        let (_, total) = latent_objective_var(
            &mut tape,
            zv,
            codec,
            objective,
            dir,
            proto.as_deref().map(|p| (p, alpha)),
        )?;
        tape.backward(total)?;
        let g = tape.grad(zv).as_slice();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Edit { iteration: it });
        }
        let mut step: Vec<f64> = g.iter().map(|v| config.step * v).collect();
        out.max_step = out.max_step.max(clip(&mut step, config.radius));
        for (c, s) in z.iter_mut().zip(&step) {
            *c += s;
        }
        xd = decoded(&z)?;
        let f = objective.score(&xd)?;
        out.trajectory.push(f);
        out.latents.push(z.clone());
        out.iterations = it + 1;
        if objective.satisfied(f) {
            out.converged = true;
            break;
        }
        if crossed(objective.goal, dir, f) {
            break;
        }
    }
    out.edited = xd;
    Ok(out)
}

/// Per-dimension mean and standard deviation of training activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ActivationStats {
    pub fn from_rows(x: &Matrix) -> Self {
        Self {
            mean: x.col_means().into_vec(),
            std: x.col_stds().into_vec(),
        }
    }
}

/// `mean + (1 - psi) * (x - mean)`.
pub fn truncation_edit(x: &[f64], stats: &ActivationStats, psi: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&psi) {
        return arg("truncation strength must lie in [0, 1]");
    }
    if x.len() != stats.mean.len() {
        return Err(Error::Dimension {
            op: "truncation_edit",
            left: (1, x.len()),
            right: (1, stats.mean.len()),
        });
    }
    Ok(x.iter()
        .zip(&stats.mean)
        .map(|(v, m)| m + (1.0 - psi) * (v - m))
        .collect())
}

/// Everything an edit may need besides the probe.
#[derive(Debug, Clone, Copy)]
pub struct Toolkit<'a> {
    pub model: &'a ToyEncoder,
    pub codec: Option<&'a LatentCodec>,
    pub book: Option<&'a PrototypeCodebook>,
    /// Training activation statistics for the truncation baseline.
    pub stats: Option<&'a ActivationStats>,
}

/// Edit one activation vector with the configured method. The truncation
/// baseline runs a naive edit and then pulls the result toward the training mean.
pub fn edit_position(
    kit: &Toolkit<'_>,
    x: &[f64],
    objective: &EditObjective<'_>,
    config: &EditConfig,
) -> Result<PositionEdit> {
    match config.method {
        Method::Naive => cae_edit(x, objective, config),
        Method::Manifold => {
            let codec = kit
                .codec
                .ok_or_else(|| Error::Argument("manifold edit needs a codec".into()))?;
            manifold_edit(x, codec, None, objective, config)
        }
        Method::ManifoldProto => {
            let codec = kit
                .codec
                .ok_or_else(|| Error::Argument("manifold edit needs a codec".into()))?;
            let book = kit
                .book
                .ok_or_else(|| Error::Argument("prototype edit needs a codebook".into()))?;
            manifold_edit(x, codec, Some(book), objective, config)
        }
        Method::Truncation => {
            let stats = kit.stats.ok_or_else(|| {
                Error::Argument("truncation edit needs training statistics".into())
            })?;
            let mut e = cae_edit(x, objective, config)?;
            if e.iterations == 0 {
                return Ok(e);
            }
            e.edited = truncation_edit(&e.edited, stats, config.truncation)?;
            let f = objective.score(&e.edited)?;
            e.trajectory.push(f);
            e.converged = objective.satisfied(f);
            Ok(e)
        }
    }
}

/// Result of editing selected positions of one activation sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EditResult {
    pub method: Method,
    pub positions: Vec<usize>,
    pub edits: Vec<PositionEdit>,
    pub original: Matrix,
    pub edited: Matrix,
    pub before: HeadOutput,
    pub after: HeadOutput,
}

impl EditResult {
    /// Realized post/pre ratio of `feature` at each edited position.
    pub fn realized_ratios(&self, feature: Feature) -> Vec<f64> {
        let k = feature.index();
        self.positions
            .iter()
            .map(|&i| {
                libm::exp(self.after.log_features.get(i, k) - self.before.log_features.get(i, k))
            })
            .collect()
    }

    pub fn displacement(&self, i: usize) -> f64 {
        libm::sqrt(crate::matrix::sq_dist(
            self.original.row(i),
            self.edited.row(i),
        ))
    }

    pub fn convergence_rate(&self) -> f64 {
        if self.edits.is_empty() {
            return 1.0;
        }
        self.edits.iter().filter(|e| e.converged).count() as f64 / self.edits.len() as f64
    }
}

fn check_positions(n: usize, positions: &[usize]) -> Result<()> {
    if let Some(&p) = positions.iter().find(|&&p| p >= n) {
        return arg(format!("position {p} outside sequence of length {n}"));
    }
    let mut seen = vec![false; n];
    for &p in positions {
        if seen[p] {
            return arg(format!("position {p} listed twice"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Apply per-position goals to a final-layer activation sequence; positions
/// not listed are copied bit for bit.
pub fn edit_sequence<'p>(
    kit: &Toolkit<'_>,
    acts: &Matrix,
    positions: &[usize],
    objective_for: &dyn Fn(usize, &[f64]) -> Result<EditObjective<'p>>,
    config: &EditConfig,
) -> Result<EditResult> {
    check_positions(acts.rows(), positions)?;
    let mut edited = acts.clone();
    let mut edits = Vec::with_capacity(positions.len());
    for &i in positions {
        let x = acts.row(i);
        let obj = objective_for(i, x)?;
        let e = edit_position(kit, x, &obj, config)?;
        edited.row_mut(i).copy_from_slice(&e.edited);
        edits.push(e);
    }
    Ok(EditResult {
        method: config.method,
        positions: positions.to_vec(),
        edits,
        before: kit.model.head(acts)?,
        after: kit.model.head(&edited)?,
        original: acts.clone(),
        edited,
    })
}

/// Stop tolerance for a log-domain scaling by `lambda`.
pub fn ratio_tolerance(lambda: f64) -> f64 {
    0.02 * libm::log(lambda).abs() + 1e-4
}

fn check_final_layer(acts: &ActivationSequence) -> Result<()> {
    if acts.layer != Layer::Recurrent {
        return arg("edits operate on final-layer (recurrent) activations");
    }
    Ok(())
}

/// Scale a prosodic feature by `lambda` at `positions` (all positions when `None`).
pub fn scale_prosody(
    kit: &Toolkit<'_>,
    probe: &Probe,
    acts: &ActivationSequence,
    lambda: f64,
    positions: Option<&[usize]>,
    config: &EditConfig,
) -> Result<EditResult> {
    if !(lambda > 0.0) {
        return arg(format!("scale factor {lambda} must be positive"));
    }
    if probe.kind != ProbeKind::Regressor {
        return arg("prosody scaling needs a regressor probe");
    }
    check_final_layer(acts)?;
    let all: Vec<usize> = (0..acts.acts.rows()).collect();
    let positions = positions.unwrap_or(&all);
    if lambda == 1.0 {
        check_positions(acts.acts.rows(), positions)?;
        let head = kit.model.head(&acts.acts)?;
        let edits = positions
            .iter()
            .map(|&i| {
                Ok(PositionEdit::unchanged(
                    acts.acts.row(i),
                    probe.score(acts.acts.row(i), 0)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(EditResult {
            method: config.method,
            positions: positions.to_vec(),
            edits,
            original: acts.acts.clone(),
            edited: acts.acts.clone(),
            before: head.clone(),
            after: head,
        });
    }
    let shift = libm::log(lambda);
    let tol = ratio_tolerance(lambda);
    let objective_for = |_: usize, x: &[f64]| {
        let target = probe.score(x, 0)? + shift;
        EditObjective::new(
            probe,
            Goal::Value {
                target,
                tolerance: tol,
            },
        )
    };
    edit_sequence(kit, &acts.acts, positions, &objective_for, config)
}

/// Outcome of a pronunciation correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub result: EditResult,
    pub query: Vec<usize>,
    pub match_before: f64,
    pub match_after: f64,
}

/// Drive the classifier probe's prediction at each position to the queried class.
pub fn correct_pronunciation(
    kit: &Toolkit<'_>,
    probe: &Probe,
    acts: &ActivationSequence,
    positions: &[usize],
    query: &[usize],
    threshold: f64,
    config: &EditConfig,
) -> Result<Correction> {
    if probe.kind != ProbeKind::Classifier {
        return arg("pronunciation correction needs a classifier probe");
    }
    if positions.len() != query.len() {
        return arg(format!(
            "{} positions but {} query tokens",
            positions.len(),
            query.len()
        ));
    }
    if let Some(&q) = query.iter().find(|&&q| q >= probe.outputs()) {
        return arg(format!("unknown semantic class {q}"));
    }
    check_final_layer(acts)?;
    let objective_for = |i: usize, _: &[f64]| {
        let slot = positions
            .iter()
            .position(|&p| p == i)
            .expect("listed position");
        EditObjective::new(
            probe,
            Goal::Class {
                class: query[slot],
                threshold,
            },
        )
    };
    let result = edit_sequence(kit, &acts.acts, positions, &objective_for, config)?;
    let rate = |out: &HeadOutput| {
        if positions.is_empty() {
            return 1.0;
        }
        let cls = out.classes();
        positions
            .iter()
            .zip(query)
            .filter(|(&p, &q)| cls[p] == q)
            .count() as f64
            / positions.len() as f64
    };
    Ok(Correction {
        match_before: rate(&result.before),
        match_after: rate(&result.after),
        query: query.to_vec(),
        result,
    })
}

/// Runs independent jobs; implementations may parallelise.
pub trait Executor: Sync {
    fn map<R: Send>(&self, n: usize, job: &(dyn Fn(usize) -> R + Sync)) -> Vec<R>;
}

/// Runs jobs in index order on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<R: Send>(&self, n: usize, job: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        (0..n).map(job).collect()
    }
}

/// Final-layer regressor probes for pitch, duration and energy.
#[derive(Debug, Clone, Copy)]
pub struct ProsodyProbes<'a> {
    pub probes: [&'a Probe; 3],
}

impl<'a> ProsodyProbes<'a> {
    pub fn probe(&self, feature: Feature) -> &'a Probe {
        self.probes[feature.index()]
    }
}

/// Scale `feature` on every position of every sequence.
pub fn scale_prosody_all<E: Executor>(
    kit: &Toolkit<'_>,
    probes: &ProsodyProbes<'_>,
    seqs: &[ActivationSequence],
    feature: Feature,
    lambda: f64,
    config: &EditConfig,
    exec: &E,
) -> Result<Vec<EditResult>> {
    let probe = probes.probe(feature);
    exec.map(seqs.len(), &|i| {
        scale_prosody(kit, probe, &seqs[i], lambda, None, config)
    })
    .into_iter()
    .collect()
}

/// Median and quartiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Summary> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return arg("summary needs a non-empty sample without NaN");
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
        Ok(Summary {
            count: v.len(),
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

/// Realized ratios of all three features after scaling one of them.
#[derive(Debug, Clone, PartialEq)]
pub struct EntanglementReport {
    pub feature: Feature,
    pub lambda: f64,
    pub method: Method,
    /// Pooled over positions, indexed by [`Feature::index`].
    pub ratios: [Vec<f64>; 3],
    pub summaries: [Summary; 3],
    pub convergence: f64,
}

impl EntanglementReport {
    /// `(low, high, density)` per bin over the ratio range of `feature`.
    pub fn density(&self, feature: Feature, bins: usize) -> Vec<(f64, f64, f64)> {
        histogram(&self.ratios[feature.index()], bins)
    }
}

/// Normalised histogram; a degenerate range gets a single bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, f64)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len() as f64;
    if !(hi > lo) {
        return vec![(lo, hi, 1.0)];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let a = lo + b as f64 * width;
            (a, a + width, c as f64 / (n * width))
        })
        .collect()
}

pub fn entanglement_report<E: Executor>(
    kit: &Toolkit<'_>,
    probes: &ProsodyProbes<'_>,
    seqs: &[ActivationSequence],
    feature: Feature,
    lambda: f64,
    config: &EditConfig,
    exec: &E,
) -> Result<EntanglementReport> {
    let results = scale_prosody_all(kit, probes, seqs, feature, lambda, config, exec)?;
    let mut ratios: [Vec<f64>; 3] = Default::default();
    let (mut done, mut total) = (0usize, 0usize);
    for r in &results {
        for f in Feature::ALL {
            ratios[f.index()].extend(r.realized_ratios(f));
        }
        done += r.edits.iter().filter(|e| e.converged).count();
        total += r.edits.len();
    }
    let summaries = [
        Summary::of(&ratios[0])?,
        Summary::of(&ratios[1])?,
        Summary::of(&ratios[2])?,
    ];
    Ok(EntanglementReport {
        feature,
        lambda,
        method: config.method,
        ratios,
        summaries,
        convergence: if total == 0 {
            1.0
        } else {
            done as f64 / total as f64
        },
    })
}

/// Distance from each edited row to its own codec reconstruction.
pub fn off_manifold_scores(codec: &LatentCodec, result: &EditResult) -> Result<Vec<f64>> {
    if result.positions.is_empty() {
        return Ok(Vec::new());
    }
    codec.residual(&result.edited.select_rows(&result.positions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Layer;
    use crate::probes::Target;
    use crate::rng::Rng;

    pub(crate) fn linear_regressor(w: &[f64], b: f64) -> Probe {
        Probe {
            kind: ProbeKind::Regressor,
            target: Target::Prosody(crate::corpus::Feature::Pitch),
            layer: Layer::Recurrent,
            weights: Matrix::new(w.len(), 1, w.to_vec()).unwrap(),
            bias: Matrix::scalar(b),
            lambda1: 0.0,
            lambda2: 0.0,
            seed: 0,
        }
    }

    fn binary_classifier(w: &[f64]) -> Probe {
        let d = w.len();
        Probe {
            kind: ProbeKind::Classifier,
            target: Target::Semantic,
            layer: Layer::Recurrent,
            weights: Matrix::from_fn(d, 2, |r, c| if c == 0 { w[r] } else { -w[r] }),
            bias: Matrix::zeros(1, 2),
            lambda1: 0.0,
            lambda2: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn satisfied_objective_needs_no_steps() {
        let p = linear_regressor(&[1.0, 2.0], 0.5);
        let x = [0.3, -0.1];
        let f = p.score(&x, 0).unwrap();
        let obj = EditObjective::new(
            &p,
            Goal::Value {
                target: f,
                tolerance: 1e-3,
            },
        )
        .unwrap();
        let e = cae_edit(&x, &obj, &EditConfig::with_method(Method::Naive)).unwrap();
        assert_eq!(e.iterations, 0);
        assert_eq!(e.edited, x.to_vec());
        assert!(e.converged);
    }

    #[test]
    fn linear_dynamics_match_closed_form() {
        let w = [0.6, -0.8, 0.3];
        let p = linear_regressor(&w, 0.1);
        let x = [0.2, 0.4, -0.5];
        let f0 = p.score(&x, 0).unwrap();
        let delta = 0.73;
        let cfg = EditConfig::with_method(Method::Naive);
        let obj = EditObjective::new(
            &p,
            Goal::Value {
                target: f0 + delta,
                tolerance: 1e-6,
            },
        )
        .unwrap();
        let e = cae_edit(&x, &obj, &cfg).unwrap();
        let per_step = cfg.step * w.iter().map(|v| v * v).sum::<f64>();
        let expected = libm::ceil(delta / per_step) as usize;
        assert!(
            e.iterations.abs_diff(expected) <= 1,
            "{} vs {expected}",
            e.iterations
        );
        assert!((e.final_score() - (f0 + delta)).abs() <= per_step + 1e-12);
        // strictly increasing until the stop
        assert!(e.trajectory.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn radius_clips_each_step() {
        let p = linear_regressor(&[3.0, 4.0], 0.0);
        let obj = EditObjective::new(
            &p,
            Goal::Value {
                target: 10.0,
                tolerance: 1e-3,
            },
        )
        .unwrap();
        let cfg = EditConfig {
            radius: Some(0.01),
            ..EditConfig::with_method(Method::Naive)
        };
        let e = cae_edit(&[0.0, 0.0], &obj, &cfg).unwrap();
        assert!(e.max_step <= 0.01 + 1e-9);
    }

    #[test]
    fn classifier_flips_random_starts() {
        let mut rng = Rng::new(4);
        let w: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let p = binary_classifier(&w);
        let cfg = EditConfig {
            step: 1.0,
            max_iters: 5000,
            ..EditConfig::with_method(Method::Naive)
        };
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let f0 = p.score(&x, 0).unwrap();
            let class = if f0 > 0.5 { 1 } else { 0 };
            let obj = EditObjective::new(
                &p,
                Goal::Class {
                    class,
                    threshold: 0.9,
                },
            )
            .unwrap();
            let e = cae_edit(&x, &obj, &cfg).unwrap();
            assert!(e.converged);
            assert!(p.score(&e.edited, class).unwrap() > 0.9);
        }
    }

    #[test]
    fn objective_validation() {
        let r = linear_regressor(&[1.0], 0.0);
        let c = binary_classifier(&[1.0]);
        assert!(EditObjective::new(
            &r,
            Goal::Class {
                class: 0,
                threshold: 0.9
            }
        )
        .is_err());
        assert!(EditObjective::new(
            &c,
            Goal::Class {
                class: 0,
                threshold: 1.0
            }
        )
        .is_err());
        assert!(EditObjective::new(
            &c,
            Goal::Class {
                class: 2,
                threshold: 0.9
            }
        )
        .is_err());
        assert!(EditConfig {
            step: 0.0,
            ..EditConfig::default()
        }
        .validate()
        .is_err());
        assert!(EditConfig {
            radius: Some(0.0),
            ..EditConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn truncation_formula() {
        let stats = ActivationStats {
            mean: vec![1.0, -2.0],
            std: vec![0.5, 2.0],
        };
        let x = [1.0 + 2.0 * 0.5, -2.0 + 2.0 * 2.0];
        assert_eq!(truncation_edit(&x, &stats, 0.0).unwrap(), x.to_vec());
        assert_eq!(truncation_edit(&x, &stats, 1.0).unwrap(), stats.mean);
        let half = truncation_edit(&x, &stats, 0.5).unwrap();
        assert!((half[0] - 1.5).abs() < 1e-12 && (half[1] - 0.0).abs() < 1e-12);
        assert!(truncation_edit(&x, &stats, 1.5).is_err());
    }
}
