// SPDX-License-Identifier: MIT OR Apache-2.0

use cfedit_core::corpus::Feature;
use cfedit_core::editor::{
    cae_edit, entanglement_report, manifold_edit, scale_prosody, ActivationStats, EditConfig,
    EditObjective, Goal, Method, ProsodyProbes, Sequential, Toolkit,
};
use cfedit_core::encoder::{ActivationSequence, EncoderConfig, Layer, ToyEncoder};
use cfedit_core::manifold::{
    train_codebook, CodebookConfig, CodecConfig, LatentCodec, PrototypeCodebook,
};
use cfedit_core::probes::{
    train_probe, Labels, Probe, ProbeData, ProbeKind, ProbeTrainConfig, Target,
};
use cfedit_core::{Matrix, Rng};
use proptest::prelude::*;

const D: usize = 8;

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    a.shape() == b.shape()
        && a.as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

fn encoder() -> ToyEncoder {
    ToyEncoder::new(EncoderConfig {
        vocab: 10,
        classes: 3,
        embed_dim: 6,
        channels: 8,
        hidden: D,
        head_hidden: 8,
        ..EncoderConfig::default()
    })
    .unwrap()
}

fn regressor(rng: &mut Rng, feature: Feature) -> Probe {
    Probe {
        kind: ProbeKind::Regressor,
        target: Target::Prosody(feature),
        layer: Layer::Recurrent,
        weights: rng.normal_matrix(D, 1, 0.5),
        bias: Matrix::scalar(0.0),
        lambda1: 0.0,
        lambda2: 0.0,
        seed: 0,
    }
}

struct Fixture {
    model: ToyEncoder,
    codec: LatentCodec,
    book: PrototypeCodebook,
    probes: [Probe; 3],
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let codec = LatentCodec::new(
            D,
            CodecConfig {
                latent: 3,
                hidden: 8,
                seed,
                ..CodecConfig::default()
            },
        )
        .unwrap();
        let latents = rng.normal_matrix(64, 3, 1.0);
        let book = train_codebook(
            &latents,
            CodebookConfig {
                codes: 4,
                hidden: 8,
                epochs: 2,
                seed,
                ..CodebookConfig::default()
            },
        )
        .unwrap();
        let probes = Feature::ALL.map(|f| regressor(&mut rng, f));
        Self {
            model: encoder(),
            codec,
            book,
            probes,
        }
    }

    fn kit(&self) -> Toolkit<'_> {
        Toolkit {
            model: &self.model,
            codec: Some(&self.codec),
            book: Some(&self.book),
            stats: None,
        }
    }

    fn sequence(&self, tokens: &[usize]) -> ActivationSequence {
        self.model
            .extract_activations(tokens, Layer::Recurrent)
            .unwrap()
    }
}

#[test]
fn elastic_net_l1_zeroes_irrelevant_weights() {
    let mut rng = Rng::new(3);
    let x = rng.normal_matrix(200, D, 1.0);
    // only the first two neurons carry signal
    let y: Vec<f64> = (0..200)
        .map(|i| libm::exp(0.8 * x.get(i, 0) - 0.5 * x.get(i, 1) + 0.5 * rng.normal()))
        .collect();
    let data = ProbeData::new(x, Labels::Real(y)).unwrap();
    let small = |l1: f64| {
        let p = train_probe(
            &data,
            Target::Prosody(Feature::Pitch),
            Layer::Recurrent,
            &ProbeTrainConfig {
                lambda1: l1,
                learning_rate: 0.002,
                epochs: 3000,
                ..ProbeTrainConfig::default()
            },
        )
        .unwrap();
        let w = p.weights.as_slice();
        (w[2..].iter().map(|v| v.abs()).sum::<f64>(), w[0].abs())
    };
    let ((weak, _), (strong, kept)) = (small(0.0), small(0.1));
    assert!(strong < 0.5 * weak, "irrelevant mass {strong} vs {weak}");
    assert!(kept > 0.3, "relevant weight shrunk to {kept}");
}

#[test]
fn zero_alpha_matches_plain_manifold_edit() {
    let fx = Fixture::new(5);
    let seq = fx.sequence(&[1, 2, 3, 4]);
    let probe = &fx.probes[0];
    let x = seq.acts.row(1);
    let target = probe.score(x, 0).unwrap() + 0.3;
    let obj = EditObjective::new(
        probe,
        Goal::Value {
            target,
            tolerance: 1e-3,
        },
    )
    .unwrap();
    let cfg = EditConfig {
        alpha: 0.0,
        ..EditConfig::with_method(Method::ManifoldProto)
    };
    let anchored = manifold_edit(x, &fx.codec, Some(&fx.book), &obj, &cfg).unwrap();
    let plain = manifold_edit(x, &fx.codec, None, &obj, &cfg).unwrap();
    assert_eq!(anchored.edited, plain.edited);
    assert_eq!(anchored.iterations, plain.iterations);
}

#[test]
fn large_alpha_keeps_latent_near_prototype() {
    let fx = Fixture::new(6);
    let seq = fx.sequence(&[4, 3, 2, 1]);
    let probe = &fx.probes[1];
    let x = seq.acts.row(2);
    let target = probe.score(x, 0).unwrap() + 1.0;
    let obj = EditObjective::new(
        probe,
        Goal::Value {
            target,
            tolerance: 1e-3,
        },
    )
    .unwrap();
    let dist = |alpha: f64| {
        let cfg = EditConfig {
            alpha,
            max_iters: 200,
            ..EditConfig::with_method(Method::ManifoldProto)
        };
        let e = manifold_edit(x, &fx.codec, Some(&fx.book), &obj, &cfg).unwrap();
        let z = e.latents.last().unwrap().clone();
        let p = fx.book.prototype(&z).unwrap();
        z.iter()
            .zip(&p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    };
    assert!(dist(10.0) < dist(0.0));
}

#[test]
fn non_positive_scale_is_rejected() {
    let fx = Fixture::new(7);
    let seq = fx.sequence(&[1, 2]);
    for lambda in [0.0, -1.0, f64::NAN] {
        let cfg = EditConfig::with_method(Method::Naive);
        assert!(scale_prosody(&fx.kit(), &fx.probes[0], &seq, lambda, None, &cfg).is_err());
    }
}

#[test]
fn identity_scale_gives_unit_ratios_everywhere() {
    let fx = Fixture::new(8);
    let seqs = vec![fx.sequence(&[1, 2, 3]), fx.sequence(&[5, 6, 7, 8, 9])];
    let probes = ProsodyProbes {
        probes: [&fx.probes[0], &fx.probes[1], &fx.probes[2]],
    };
    for m in [Method::Naive, Method::Manifold, Method::ManifoldProto] {
        let rep = entanglement_report(
            &fx.kit(),
            &probes,
            &seqs,
            Feature::Energy,
            1.0,
            &EditConfig::with_method(m),
            &Sequential,
        )
        .unwrap();
        for r in &rep.ratios {
            assert_eq!(r.len(), 8);
            assert!(r.iter().all(|&v| v == 1.0));
        }
        assert_eq!(rep.convergence, 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6) {
        let mut rng = Rng::new(seed);
        let a = rng.normal_matrix(m, k, 1.0);
        let b = rng.normal_matrix(k, n, 1.0);
        let c = rng.normal_matrix(n, p, 1.0);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-10));
    }

    #[test]
    fn softmax_ignores_row_shifts(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..7, shift in -50.0f64..50.0) {
        let mut rng = Rng::new(seed);
        let a = rng.normal_matrix(rows, cols, 3.0);
        let shifted = a.map(|v| v + shift);
        let (s, t) = (a.softmax_rows(), shifted.softmax_rows());
        prop_assert!(close(&s, &t, 1e-12));
        for r in 0..rows {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edits_touch_only_selected_positions(
        seed in any::<u64>(),
        tokens in prop::collection::vec(0usize..10, 1..9),
        mask in prop::collection::vec(any::<bool>(), 9),
        method in 0usize..4,
        lambda in 0.3f64..3.0,
    ) {
        let fx = Fixture::new(seed % 4);
        let seq = fx.sequence(&tokens);
        let positions: Vec<usize> = (0..tokens.len()).filter(|&i| mask[i]).collect();
        let cfg = EditConfig { max_iters: 60, ..EditConfig::with_method(Method::ALL[method]) };
        let stats = ActivationStats::from_rows(&seq.acts);
        let kit = Toolkit { stats: Some(&stats), ..fx.kit() };
        let r = scale_prosody(&kit, &fx.probes[(seed % 3) as usize], &seq, lambda, Some(&positions), &cfg).unwrap();
        for i in (0..tokens.len()).filter(|i| !positions.contains(i)) {
            let same = r.edited.row(i).iter().zip(seq.acts.row(i)).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same, "row {} changed", i);
        }
    }

    #[test]
    fn steps_never_exceed_radius(seed in any::<u64>(), radius in 0.001f64..0.5, delta in -2.0f64..2.0) {
        let mut rng = Rng::new(seed);
        let probe = regressor(&mut rng, Feature::Pitch);
        let x: Vec<f64> = (0..D).map(|_| rng.normal()).collect();
        let target = probe.score(&x, 0).unwrap() + delta;
        let obj = EditObjective::new(&probe, Goal::Value { target, tolerance: 1e-3 }).unwrap();
        let cfg = EditConfig { radius: Some(radius), max_iters: 50, ..EditConfig::with_method(Method::Naive) };
        let e = cae_edit(&x, &obj, &cfg).unwrap();
        prop_assert!(e.max_step <= radius * (1.0 + 1e-12));
    }
}
