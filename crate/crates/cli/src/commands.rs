// SPDX-License-Identifier: MIT OR Apache-2.0

//! One function per subcommand. Each reads upstream artifacts from the output
//! root, writes its own through [`Run`], and returns a one-line summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use cfedit_core::corpus::{generate_corpus, Corpus, Feature, Split};
use cfedit_core::editor::{
    correct_pronunciation, entanglement_report, scale_prosody, scale_prosody_all, ActivationStats,
    EditConfig, EditResult, Executor, Method, ProsodyProbes, Summary, Toolkit,
};
use cfedit_core::encoder::{train_toy_encoder, ActivationSequence, Layer, ToyEncoder};
use cfedit_core::manifold::{train_codebook, train_codec, LatentCodec, PrototypeCodebook};
use cfedit_core::probes::{
    evaluate_probe, layer_analysis, neuron_ablation_curve, probe_dataset, rank_neurons,
    train_probe, Probe, ProbeData, Target,
};
use cfedit_core::Matrix;

use crate::error::{CliError, CliResult};
use crate::formats::{self, corpus_spec_meta, encode_corpus};
use crate::run::Run;
use crate::svg::LineChart;

pub const CORPUS: &str = "corpus.csv";
pub const CORPUS_META: &str = "corpus.meta.csv";
pub const MODEL: &str = "model";
pub const CODEC: &str = "codec";
pub const CODEBOOK: &str = "codebook";

pub fn probe_dir(layer: Layer, target: Target) -> String {
    format!("probes/{}_{}", layer.name(), target.name())
}

/// Order-preserving parallel map on a fixed-size pool.
pub struct Pool(rayon::ThreadPool);

impl Pool {
    pub fn new(threads: usize) -> CliResult<Self> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map(Pool)
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))
    }
}

impl Executor for Pool {
    fn map<R: Send>(&self, n: usize, job: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        self.0.install(|| (0..n).into_par_iter().map(job).collect())
    }
}

fn try_map<R: Send>(
    pool: &Pool,
    n: usize,
    job: &(dyn Fn(usize) -> CliResult<R> + Sync),
) -> CliResult<Vec<R>> {
    pool.map(n, job).into_iter().collect()
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

// ---------------------------------------------------------------- loaders

pub fn load_corpus(root: &Path) -> CliResult<Corpus> {
    formats::load_corpus(&root.join(CORPUS), &root.join(CORPUS_META))
}

pub fn load_model(root: &Path) -> CliResult<ToyEncoder> {
    formats::load_model(&root.join(MODEL))
}

fn activations(
    model: &ToyEncoder,
    corpus: &Corpus,
    split: Split,
    count: Option<usize>,
) -> CliResult<Vec<ActivationSequence>> {
    let utts = corpus.split(split);
    let utts = &utts[..count.unwrap_or(utts.len()).min(utts.len())];
    let tokens: Vec<&[usize]> = utts.iter().map(|u| u.tokens.as_slice()).collect();
    let acts = model.extract_batch(&tokens, Layer::Recurrent)?;
    let hash = model.hash();
    Ok(acts
        .into_iter()
        .zip(utts)
        .map(|(a, u)| ActivationSequence {
            layer: Layer::Recurrent,
            acts: a,
            model_hash: hash,
            seq_id: Some(u.id),
        })
        .collect())
}

/// Final-layer activations of the probe split, stacked.
fn probe_split_rows(model: &ToyEncoder, corpus: &Corpus) -> CliResult<Matrix> {
    let seqs = activations(model, corpus, Split::Probe, None)?;
    let rows: Vec<&Matrix> = seqs.iter().map(|s| &s.acts).collect();
    Ok(Matrix::vstack(&rows)?)
}

// ---------------------------------------------------------------- training

pub fn corpus_gen(run: &mut Run) -> CliResult<String> {
    let spec = run.config.corpus_spec()?;
    let corpus = generate_corpus(&spec)?;
    run.write(CORPUS, &encode_corpus(&corpus))?;
    run.write(CORPUS_META, &corpus_spec_meta(&spec).encode())?;
    Ok(format!("{} sequences", corpus.utterances.len()))
}

pub fn model_train(run: &mut Run) -> CliResult<String> {
    let corpus = load_corpus(&run.root)?;
    let cfg = run.config.encoder(corpus.spec.vocab, corpus.spec.classes)?;
    let model = train_toy_encoder(corpus.split(Split::Train), corpus.split(Split::Val), cfg)?;
    run.write_bundle(MODEL, &formats::model_bundle(&model))?;
    let r = &model.report;
    Ok(format!(
        "val log-mse {:.4}, val accuracy {:.3}",
        r.val_log_mse, r.val_accuracy
    ))
}

fn datasets(
    model: &ToyEncoder,
    corpus: &Corpus,
    layer: Layer,
    target: Target,
) -> CliResult<(ProbeData, ProbeData)> {
    Ok((
        probe_dataset(model, corpus.split(Split::Probe), layer, target)?,
        probe_dataset(model, corpus.split(Split::Val), layer, target)?,
    ))
}

pub fn probe_train(run: &mut Run, pool: &Pool) -> CliResult<String> {
    let corpus = load_corpus(&run.root)?;
    let model = load_model(&run.root)?;
    let cfg = run.config.probe()?;
    let layer = run.config.probe_layer()?;
    let targets = run.config.targets("probe.targets")?;
    let trained = try_map(pool, targets.len(), &|i| {
        let (train, held) = datasets(&model, &corpus, layer, targets[i])?;
        let probe = train_probe(&train, targets[i], layer, &cfg)?;
        let eval = evaluate_probe(&probe, &held)?;
        Ok((probe, eval))
    })?;
    let mut rows = Vec::new();
    for (probe, eval) in &trained {
        run.write_bundle(
            &probe_dir(layer, probe.target),
            &formats::probe_bundle(probe),
        )?;
        rows.push(vec![
            probe.target.name().to_string(),
            layer.name().to_string(),
            f6(eval.loss),
            eval.accuracy.map(f6).unwrap_or_default(),
            eval.r2.map(f6).unwrap_or_default(),
        ]);
    }
    run.write(
        "probes/summary.csv",
        &csv_bytes(&["target", "layer", "val_loss", "accuracy", "r2"], &rows),
    )?;
    Ok(format!("{} probes on {}", trained.len(), layer.name()))
}

pub fn analyze_layers(run: &mut Run, pool: &Pool) -> CliResult<String> {
    let corpus = load_corpus(&run.root)?;
    let model = load_model(&run.root)?;
    let cfg = run.config.probe()?;
    let targets = run.config.targets("probe.targets")?;
    let reports = try_map(pool, targets.len(), &|i| {
        Ok(layer_analysis(
            &model,
            corpus.split(Split::Probe),
            corpus.split(Split::Val),
            &Layer::ALL,
            targets[i],
            &cfg,
        )?)
    })?;
    let mut chart = LineChart {
        title: "Probe loss by layer (normalized)".into(),
        x_label: "layer".into(),
        y_label: "normalized loss".into(),
        x_ticks: Some(Layer::ALL.iter().map(|l| l.name().to_string()).collect()),
        ..LineChart::default()
    };
    for rep in &reports {
        let rows: Vec<Vec<String>> = rep
            .rows
            .iter()
            .map(|(l, raw, norm)| vec![l.name().to_string(), f6(*raw), f6(*norm)])
            .collect();
        let name = rep.target.name();
        run.write(
            &format!("analysis/layers_{name}.csv"),
            &csv_bytes(&["layer", "raw_loss", "normalized_loss"], &rows),
        )?;
        let series = rep
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (i as f64, r.2))
            .collect();
        let single = LineChart {
            title: format!("Probe loss by layer: {name}"),
            series: vec![(name.to_string(), series)],
            ..chart.clone()
        };
        run.write(
            &format!("analysis/layers_{name}.svg"),
            single.render().as_bytes(),
        )?;
        chart.series.push(single.series[0].clone());
    }
    run.write("analysis/layers.svg", chart.render().as_bytes())?;
    Ok(format!("{} targets", reports.len()))
}

pub fn analyze_neurons(run: &mut Run, pool: &Pool) -> CliResult<String> {
    let corpus = load_corpus(&run.root)?;
    let model = load_model(&run.root)?;
    let cfg = run.config.probe()?;
    let layer = run.config.probe_layer()?;
    let targets = run.config.targets("probe.neuron_targets")?;
    let fractions = run.config.floats("probe.fractions")?;
    let probes = targets
        .iter()
        .map(|&t| formats::load_probe(&run.root.join(probe_dir(layer, t))))
        .collect::<CliResult<Vec<_>>>()?;
    let curves = try_map(pool, targets.len(), &|i| {
        let (train, held) = datasets(&model, &corpus, layer, targets[i])?;
        let ranking = rank_neurons(&probes[i]);
        Ok(neuron_ablation_curve(
            &train, &held, targets[i], layer, &ranking, &fractions, &cfg,
        )?)
    })?;
    for (target, curve) in targets.iter().zip(&curves) {
        let name = target.name();
        let rows: Vec<Vec<String>> = curve
            .iter()
            .map(|p| vec![f6(p.fraction), f6(p.top_loss), f6(p.bottom_loss)])
            .collect();
        run.write(
            &format!("analysis/neurons_{name}.csv"),
            &csv_bytes(&["fraction", "top_loss", "bottom_loss"], &rows),
        )?;
        let chart = LineChart {
            title: format!("Ablation: {name}"),
            x_label: "fraction of neurons kept".into(),
            y_label: "held-out probe loss".into(),
            series: vec![
                (
                    "top-ranked".into(),
                    curve.iter().map(|p| (p.fraction, p.top_loss)).collect(),
                ),
                (
                    "bottom-ranked".into(),
                    curve.iter().map(|p| (p.fraction, p.bottom_loss)).collect(),
                ),
            ],
            x_ticks: None,
        };
        run.write(
            &format!("analysis/neurons_{name}.svg"),
            chart.render().as_bytes(),
        )?;
    }
    Ok(format!("{} targets", curves.len()))
}

pub fn codec_train(run: &mut Run) -> CliResult<String> {
    let corpus = load_corpus(&run.root)?;
    let model = load_model(&run.root)?;
    let cfg = run.config.codec()?;
    if cfg.latent == 0 || cfg.latent >= model.dim() {
        return Err(CliError::Config(format!(
            "codec.k = {} must satisfy 0 < k < d = {}",
            cfg.latent,
            model.dim()
        )));
    }
    let data = probe_split_rows(&model, &corpus)?;
    let codec = train_codec(&data, cfg)?;
    run.write_bundle(CODEC, &formats::codec_bundle(&codec))?;
    Ok(format!(
        "reconstruction mse {:.5}",
        codec.reconstruction_error
    ))
}

pub fn codebook_train(run: &mut Run) -> CliResult<String> {
    let corpus = load_corpus(&run.root)?;
    let model = load_model(&run.root)?;
    let codec = formats::load_codec(&run.root.join(CODEC))?;
    let z = codec.encode(&probe_split_rows(&model, &corpus)?)?;
    let book = train_codebook(&z, run.config.codebook()?)?;
    let alpha: f64 = run.config.get("edit.alpha")?;
    run.write_bundle(CODEBOOK, &formats::codebook_bundle(&book, alpha))?;
    let used = {
        let mut seen = vec![false; book.codes()];
        for k in book.assign(&z)? {
            seen[k] = true;
        }
        seen.iter().filter(|s| **s).count()
    };
    Ok(format!("{used}/{} codes in use", book.codes()))
}

// ---------------------------------------------------------------- editing

/// Everything the edit and eval commands share.
pub struct EditEnv {
    pub corpus: Corpus,
    pub model: ToyEncoder,
    pub prosody: [Probe; 3],
    pub semantic: Probe,
    pub codec: LatentCodec,
    pub book: PrototypeCodebook,
    pub stats: ActivationStats,
}

impl EditEnv {
    pub fn load(root: &Path) -> CliResult<Self> {
        let corpus = load_corpus(root)?;
        let model = load_model(root)?;
        let probe = |t: Target| formats::load_probe(&root.join(probe_dir(Layer::Recurrent, t)));
        let prosody = [
            probe(Target::Prosody(Feature::Pitch))?,
            probe(Target::Prosody(Feature::Duration))?,
            probe(Target::Prosody(Feature::Energy))?,
        ];
        let semantic = probe(Target::Semantic)?;
        let codec = formats::load_codec(&root.join(CODEC))?;
        let book = formats::load_codebook(&root.join(CODEBOOK))?;
        let stats = ActivationStats::from_rows(&probe_split_rows(&model, &corpus)?);
        Ok(Self {
            corpus,
            model,
            prosody,
            semantic,
            codec,
            book,
            stats,
        })
    }

    pub fn kit(&self) -> Toolkit<'_> {
        Toolkit {
            model: &self.model,
            codec: Some(&self.codec),
            book: Some(&self.book),
            stats: Some(&self.stats),
        }
    }

    pub fn probes(&self) -> ProsodyProbes<'_> {
        ProsodyProbes {
            probes: [&self.prosody[0], &self.prosody[1], &self.prosody[2]],
        }
    }

    pub fn test_sequences(&self, count: usize) -> CliResult<Vec<ActivationSequence>> {
        activations(&self.model, &self.corpus, Split::Test, Some(count))
    }

    /// Test-split polyphone positions read in a context never seen in training,
    /// grouped by sequence.
    pub fn mispronunciations(&self) -> Vec<(usize, Vec<usize>)> {
        let mut by_seq: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (id, pos) in self.corpus.mispronunciation_set(Split::Test) {
            by_seq.entry(id).or_default().push(pos);
        }
        by_seq.into_iter().collect()
    }

    fn edit_config(&self, run: &Run, method: Method) -> CliResult<EditConfig> {
        Ok(EditConfig {
            method,
            ..run.config.edit()?
        })
    }
}

fn ratio_columns(r: &EditResult) -> [Vec<f64>; 3] {
    Feature::ALL.map(|f| r.realized_ratios(f))
}

pub fn edit_prosody(run: &mut Run, pool: &Pool) -> CliResult<String> {
    let env = EditEnv::load(&run.root)?;
    let cfg = run.config.edit()?;
    let feature = run.config.feature("edit.feature")?;
    let lambda: f64 = run.config.get("edit.lambda")?;
    if !(lambda > 0.0) {
        return Err(CliError::Config(format!(
            "`edit.lambda` {lambda} must be positive"
        )));
    }
    let seqs = env.test_sequences(run.config.get("edit.sequences")?)?;
    let kit = env.kit();
    let probe = &env.prosody[feature.index()];
    let results = try_map(pool, seqs.len(), &|i| {
        Ok(scale_prosody(&kit, probe, &seqs[i], lambda, None, &cfg)?)
    })?;
    let mut rows = Vec::new();
    for (seq, r) in seqs.iter().zip(&results) {
        let ratios = ratio_columns(r);
        for (j, (&pos, e)) in r.positions.iter().zip(&r.edits).enumerate() {
            rows.push(vec![
                seq.seq_id.unwrap_or_default().to_string(),
                pos.to_string(),
                e.iterations.to_string(),
                e.converged.to_string(),
                f6(e.initial_score()),
                f6(e.final_score()),
                f6(ratios[0][j]),
                f6(ratios[1][j]),
                f6(ratios[2][j]),
                f6(r.displacement(pos)),
            ]);
        }
    }
    run.write(
        "edits/prosody.csv",
        &csv_bytes(
            &[
                "seq_id",
                "position",
                "iterations",
                "converged",
                "initial_objective",
                "final_objective",
                "ratio_pitch",
                "ratio_duration",
                "ratio_energy",
                "displacement",
            ],
            &rows,
        ),
    )?;
    let all: Vec<f64> = results
        .iter()
        .flat_map(|r| r.realized_ratios(feature))
        .collect();
    let s = Summary::of(&all)?;
    Ok(format!(
        "{} x{lambda} with {}: median ratio {:.3} over {} positions",
        feature.name(),
        cfg.method.name(),
        s.median,
        s.count
    ))
}

struct CorrectionTally {
    rows: Vec<Vec<String>>,
    before: f64,
    after: f64,
    converged: usize,
    total: usize,
}

fn run_corrections(
    env: &EditEnv,
    cfg: &EditConfig,
    tau: f64,
    pool: &Pool,
) -> CliResult<CorrectionTally> {
    let items = env.mispronunciations();
    let kit = env.kit();
    let results = try_map(pool, items.len(), &|i| {
        let (id, pos) = &items[i];
        let u = &env.corpus.utterances[*id];
        let acts = env.model.extract_activations(&u.tokens, Layer::Recurrent)?;
        let query: Vec<usize> = pos.iter().map(|&p| u.labels.semantic[p]).collect();
        Ok(correct_pronunciation(
            &kit,
            &env.semantic,
            &acts,
            pos,
            &query,
            tau,
            cfg,
        )?)
    })?;
    let mut t = CorrectionTally {
        rows: Vec::new(),
        before: 0.0,
        after: 0.0,
        converged: 0,
        total: 0,
    };
    for ((id, _), c) in items.iter().zip(&results) {
        let before = c.result.before.classes();
        let after = c.result.after.classes();
        for ((&p, &q), e) in c.result.positions.iter().zip(&c.query).zip(&c.result.edits) {
            t.rows.push(vec![
                id.to_string(),
                p.to_string(),
                q.to_string(),
                before[p].to_string(),
                after[p].to_string(),
                e.iterations.to_string(),
                e.converged.to_string(),
            ]);
            t.before += (before[p] == q) as usize as f64;
            t.after += (after[p] == q) as usize as f64;
            t.converged += e.converged as usize;
            t.total += 1;
        }
    }
    if t.total > 0 {
        t.before /= t.total as f64;
        t.after /= t.total as f64;
    }
    Ok(t)
}

pub fn edit_pronounce(run: &mut Run, pool: &Pool) -> CliResult<String> {
    let env = EditEnv::load(&run.root)?;
    let cfg = run.config.edit()?;
    if cfg.method == Method::Truncation {
        return Err(CliError::Config(
            "pronunciation edits need a gradient method".into(),
        ));
    }
    let t = run_corrections(&env, &cfg, run.config.tau()?, pool)?;
    run.write(
        "edits/pronounce.csv",
        &csv_bytes(
            &[
                "seq_id",
                "position",
                "query",
                "class_before",
                "class_after",
                "iterations",
                "converged",
            ],
            &t.rows,
        ),
    )?;
    Ok(format!(
        "{} positions: match {:.3} -> {:.3}, converged {}",
        t.total, t.before, t.after, t.converged
    ))
}

pub fn eval_ratios(run: &mut Run, pool: &Pool) -> CliResult<String> {
    let env = EditEnv::load(&run.root)?;
    let lambdas = run.config.floats("eval.lambdas")?;
    if lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(CliError::Config("`eval.lambdas` must be positive".into()));
    }
    let methods = run.config.methods("eval.methods")?;
    let seqs = env.test_sequences(run.config.get("edit.sequences")?)?;
    let (kit, probes) = (env.kit(), env.probes());
    let mut rows = Vec::new();
    let mut best = String::new();
    for f in Feature::ALL {
        let mut chart = LineChart {
            title: format!("Realized {} ratio", f.name()),
            x_label: "target ratio".into(),
            y_label: "median realized ratio".into(),
            series: vec![("target".into(), lambdas.iter().map(|&l| (l, l)).collect())],
            x_ticks: None,
        };
        for &m in &methods {
            let cfg = env.edit_config(run, m)?;
            let mut points = Vec::new();
            for &lambda in &lambdas {
                let results = scale_prosody_all(&kit, &probes, &seqs, f, lambda, &cfg, pool)?;
                let ratios: Vec<f64> = results.iter().flat_map(|r| r.realized_ratios(f)).collect();
                let s = Summary::of(&ratios)?;
                let total: usize = results.iter().map(|r| r.edits.len()).sum();
                let done: usize = results
                    .iter()
                    .map(|r| r.edits.iter().filter(|e| e.converged).count())
                    .sum();
                rows.push(vec![
                    f.name().to_string(),
                    f6(lambda),
                    m.name().to_string(),
                    f6(s.median),
                    f6(s.iqr()),
                    f6(done as f64 / total.max(1) as f64),
                ]);
                points.push((lambda, s.median));
            }
            chart.series.push((m.name().to_string(), points));
        }
        run.write(
            &format!("eval/ratios_{}.svg", f.name()),
            chart.render().as_bytes(),
        )?;
    }
    let _ = write!(best, "{} rows", rows.len());
    run.write(
        "eval/ratios.csv",
        &csv_bytes(
            &[
                "feature",
                "lambda",
                "method",
                "median_ratio",
                "iqr",
                "convergence_rate",
            ],
            &rows,
        ),
    )?;
    Ok(best)
}

/// Fraction of edited positions whose head class differs from the ground truth.
fn mismatch_rate(env: &EditEnv, results: &[EditResult], seqs: &[ActivationSequence]) -> f64 {
    let (mut bad, mut n) = (0usize, 0usize);
    for (r, s) in results.iter().zip(seqs) {
        let truth = &env.corpus.utterances[s.seq_id.expect("test sequences carry ids")]
            .labels
            .semantic;
        let cls = r.after.classes();
        for &p in &r.positions {
            bad += (cls[p] != truth[p]) as usize;
            n += 1;
        }
    }
    bad as f64 / n.max(1) as f64
}

pub fn eval_per(run: &mut Run, pool: &Pool) -> CliResult<String> {
    let env = EditEnv::load(&run.root)?;
    let lambdas = run.config.floats("eval.per_lambdas")?;
    if lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(CliError::Config(
            "`eval.per_lambdas` must be positive".into(),
        ));
    }
    let seqs = env.test_sequences(run.config.get("edit.sequences")?)?;
    let (kit, probes) = (env.kit(), env.probes());
    let with = env.edit_config(run, Method::ManifoldProto)?;
    let without = env.edit_config(run, Method::Manifold)?;
    let mut rows = Vec::new();
    let (mut pw, mut po) = (Vec::new(), Vec::new());
    for &lambda in &lambdas {
        let a = scale_prosody_all(&kit, &probes, &seqs, Feature::Duration, lambda, &with, pool)?;
        let b = scale_prosody_all(
            &kit,
            &probes,
            &seqs,
            Feature::Duration,
            lambda,
            &without,
            pool,
        )?;
        let (ea, eb) = (
            mismatch_rate(&env, &a, &seqs),
            mismatch_rate(&env, &b, &seqs),
        );
        rows.push(vec![f6(lambda), f6(ea), f6(eb)]);
        pw.push((lambda, ea));
        po.push((lambda, eb));
    }
    run.write(
        "eval/per.csv",
        &csv_bytes(
            &["lambda", "with_proto_error", "without_proto_error"],
            &rows,
        ),
    )?;
    let chart = LineChart {
        title: "Semantic mismatch under duration edits".into(),
        x_label: "duration ratio".into(),
        y_label: "mismatch rate".into(),
        series: vec![
            ("with prototype".into(), pw),
            ("without prototype".into(), po),
        ],
        x_ticks: None,
    };
    run.write("eval/per.svg", chart.render().as_bytes())?;
    let last = rows.last().expect("non-empty lambdas");
    Ok(format!(
        "at x{}: with {} / without {}",
        last[0], last[1], last[2]
    ))
}

pub fn eval_entangle(run: &mut Run, pool: &Pool) -> CliResult<String> {
    let env = EditEnv::load(&run.root)?;
    let cfg = run.config.edit()?;
    let feature = run.config.feature("eval.entangle_feature")?;
    let lambda: f64 = run.config.get("eval.entangle_lambda")?;
    if !(lambda > 0.0) {
        return Err(CliError::Config(
            "`eval.entangle_lambda` must be positive".into(),
        ));
    }
    let bins: usize = run.config.get("eval.bins")?;
    let seqs = env.test_sequences(run.config.get("edit.sequences")?)?;
    let rep = entanglement_report(
        &env.kit(),
        &env.probes(),
        &seqs,
        feature,
        lambda,
        &cfg,
        pool,
    )?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut chart = LineChart {
        title: format!("Drift under {} x{lambda}", feature.name()),
        x_label: "realized ratio".into(),
        y_label: "density".into(),
        ..LineChart::default()
    };
    for other in Feature::ALL {
        let s = rep.summaries[other.index()];
        summary.push(vec![
            feature.name().to_string(),
            f6(lambda),
            other.name().to_string(),
            f6(s.median),
            f6(s.q1),
            f6(s.q3),
            f6(s.iqr()),
        ]);
        if other == feature {
            continue;
        }
        let dens = rep.density(other, bins);
        for &(lo, hi, d) in &dens {
            rows.push(vec![
                feature.name().to_string(),
                f6(lambda),
                other.name().to_string(),
                f6(lo),
                f6(hi),
                f6(d),
            ]);
        }
        chart.series.push((
            other.name().to_string(),
            dens.iter()
                .map(|&(lo, hi, d)| ((lo + hi) / 2.0, d))
                .collect(),
        ));
    }
    run.write(
        "eval/entangle.csv",
        &csv_bytes(
            &[
                "edited_feature",
                "lambda",
                "other_feature",
                "bin_low",
                "bin_high",
                "density",
            ],
            &rows,
        ),
    )?;
    run.write(
        "eval/entangle_summary.csv",
        &csv_bytes(
            &[
                "edited_feature",
                "lambda",
                "feature",
                "median",
                "q1",
                "q3",
                "iqr",
            ],
            &summary,
        ),
    )?;
    run.write("eval/entangle.svg", chart.render().as_bytes())?;
    let others: Vec<String> = Feature::ALL
        .iter()
        .filter(|&&f| f != feature)
        .map(|f| format!("{} median {:.3}", f.name(), rep.summaries[f.index()].median))
        .collect();
    Ok(others.join(", "))
}

pub fn eval_correction(run: &mut Run, pool: &Pool) -> CliResult<String> {
    let env = EditEnv::load(&run.root)?;
    let tau = run.config.tau()?;
    let mut rows = Vec::new();
    let mut line = String::new();
    for m in [Method::Naive, Method::Manifold, Method::ManifoldProto] {
        let t = run_corrections(&env, &env.edit_config(run, m)?, tau, pool)?;
        let conv = t.converged as f64 / t.total.max(1) as f64;
        rows.push(vec![
            m.name().to_string(),
            f6(t.before),
            f6(t.after),
            f6(conv),
        ]);
        if m == Method::Manifold {
            line = format!(
                "manifold: {:.3} -> {:.3}, converged {:.3}",
                t.before, t.after, conv
            );
        }
    }
    run.write(
        "eval/correction.csv",
        &csv_bytes(
            &[
                "method",
                "match_rate_before",
                "match_rate_after",
                "convergence_rate",
            ],
            &rows,
        ),
    )?;
    Ok(line)
}
